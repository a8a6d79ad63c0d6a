//! Flat, plot-ready CSV tables derived from a Monte Carlo report.
//!
//! Each table starts with the sample size `n` so that multi-cell runs stay
//! plottable; all values use the matrix CSV encoding.

use gcm_core::mc::{CellSummary, CoordDiag, McKind, McReport};
use gcm_core::Matrix;

use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub values: Matrix,
}

impl Table {
    fn new(name: &'static str, header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        let cols = header.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Table {
            name,
            header: header.iter().map(|h| h.to_string()).collect(),
            values: Matrix::from_row_slice(rows.len(), cols, &flat),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> String {
        io::matrix_to_csv(&self.values, Some(&self.header))
    }
}

fn consistency(cells: &[CellSummary]) -> Table {
    let rows = cells
        .iter()
        .map(|c| vec![c.n as f64, c.sigma_err.median, c.gamma_err.median, c.h_gap.median])
        .collect();
    Table::new("consistency", &["n", "median_sigma_err", "median_gamma_err", "h_gap"], rows)
}

fn diag_rows(cells: &[CellSummary], pick: fn(&CellSummary) -> &[CoordDiag]) -> Vec<Vec<f64>> {
    cells
        .iter()
        .flat_map(|c| {
            pick(c).iter().map(move |d| {
                vec![
                    c.n as f64,
                    d.coordinate as f64,
                    d.ks_distance,
                    d.mean,
                    d.variance,
                    d.skewness,
                    d.ex_kurtosis,
                ]
            })
        })
        .collect()
}

const DIAG_HEADER: [&str; 7] = ["n", "coordinate", "ks_distance", "mean", "variance", "skewness", "ex_kurtosis"];

fn normality(cells: &[CellSummary]) -> Vec<Table> {
    vec![
        Table::new("normality", &DIAG_HEADER, diag_rows(cells, |c| &c.true_sigma_whitened)),
        Table::new("normality_plugin", &DIAG_HEADER, diag_rows(cells, |c| &c.plugin_whitened)),
        Table::new(
            "covariance_match",
            &["n", "relative_frobenius"],
            cells.iter().map(|c| vec![c.n as f64, c.relative_frobenius]).collect(),
        ),
    ]
}

fn level(cells: &[CellSummary]) -> Table {
    let with_power = cells.iter().all(|c| c.rejection_rate_alt.is_some());
    let rows = cells
        .iter()
        .map(|c| {
            let mut row = vec![c.n as f64, c.alpha, c.rejection_rate, c.successes as f64];
            if with_power {
                row.extend(c.rejection_rate_alt);
            }
            row
        })
        .collect();
    if with_power {
        Table::new("level", &["n", "alpha", "rejection_rate", "n_replicates", "power"], rows)
    } else {
        Table::new("level", &["n", "alpha", "rejection_rate", "n_replicates"], rows)
    }
}

fn unbiasedness(cells: &[CellSummary]) -> Table {
    let mut rows = Vec::new();
    for c in cells {
        for i in 0..c.bias.nrows() {
            for j in 0..c.bias.ncols() {
                let (b, se) = (c.bias[(i, j)], c.bias_se[(i, j)]);
                rows.push(vec![c.n as f64, i as f64, j as f64, b, se, b / se]);
            }
        }
    }
    Table::new("unbiasedness", &["n", "row", "col", "bias", "se", "z"], rows)
}

/// Tables written for a report of the given kind.
pub fn for_report(report: &McReport) -> Vec<Table> {
    let cells = &report.cells;
    match report.kind {
        McKind::Consistency => vec![consistency(cells)],
        McKind::Unbiasedness => vec![unbiasedness(cells)],
        McKind::Normality => normality(cells),
        McKind::Level => vec![level(cells)],
    }
}

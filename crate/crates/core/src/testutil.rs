use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matlib::{Matrix, SpdMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_full_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    loop {
        let a = random_matrix(rng, rows, cols);
        if crate::matlib::check_full_column_rank(&a, "test").is_ok()
            && crate::matlib::condition_number(&a) < 1e4
        {
            return a;
        }
    }
}

pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> SpdMatrix {
    let a = random_matrix(rng, dim, dim);
    let m = &a * a.transpose() + Matrix::identity(dim, dim) * 0.5;
    SpdMatrix::new(crate::matlib::symmetrize(&m)).unwrap()
}

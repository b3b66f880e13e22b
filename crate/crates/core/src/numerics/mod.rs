//! Dense linear algebra, initialization, Adam, and gradient checking.

mod adam;
mod gradcheck;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{axpy, dot, log_sum_exp, softmax_in_place, softmax_rows, squared_distance, Matrix};
pub use rng::{Rng, RngState, Stream};

use crate::error::{Error, Result};

/// Glorot/Xavier uniform initializer: entries on `[-b, b]`, `b = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "glorot_uniform needs non-zero dimensions, got {rows}x{cols}"
        )));
    }
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| bound * (2.0 * rng.uniform() - 1.0))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds() {
        let mut rng = Rng::new(3, Stream::Init);
        let m = glorot_uniform(2, 4, &mut rng).unwrap();
        assert!(m.as_slice().iter().all(|x| x.abs() <= 1.0));

        let m = glorot_uniform(64, 64, &mut rng).unwrap();
        let b = (6.0f64 / 128.0).sqrt();
        assert!((b - 0.21651).abs() < 1e-5);
        assert!(m.as_slice().iter().all(|x| x.abs() <= b));
    }

    #[test]
    fn glorot_is_seeded() {
        let a = glorot_uniform(5, 3, &mut Rng::new(9, Stream::Init)).unwrap();
        let b = glorot_uniform(5, 3, &mut Rng::new(9, Stream::Init)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_rejects_empty() {
        let mut rng = Rng::new(0, Stream::Init);
        assert!(glorot_uniform(0, 4, &mut rng).is_err());
        assert!(glorot_uniform(4, 0, &mut rng).is_err());
    }

    #[test]
    fn glorot_moments() {
        let mut rng = Rng::new(11, Stream::Init);
        let m = glorot_uniform(1000, 1000, &mut rng).unwrap();
        let b = glorot_bound(1000, 1000);
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05 * b);
        assert!((var / (b * b / 3.0) - 1.0).abs() < 0.05);
    }
}

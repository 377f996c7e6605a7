//! Ordinary least squares on the prompt examples, without intercept.
//!
//! Solved through a thin SVD of the `n × d` design matrix. Singular values at
//! or below `1e-10 · σ_max` are treated as zero, which yields the minimum-norm
//! solution for rank-deficient designs (for instance `n < d`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Prompt;

/// Relative singular-value cutoff used for the rank decision.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub rank: usize,
}

impl OlsFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }
}

pub fn ols_fit(prompt: &Prompt) -> OlsFit {
    let (n, d) = (prompt.len(), prompt.dim());
    let x = DMatrix::from_row_slice(n, d, prompt.xs());
    let y = DVector::from_column_slice(prompt.ys());

    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOLERANCE * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();

    let coefficients = if rank == 0 {
        DVector::zeros(d)
    } else {
        svd.solve(&y, cutoff).expect("U and V were computed")
    };
    let residual = &y - &x * &coefficients;
    OlsFit {
        coefficients: coefficients.iter().copied().collect(),
        rss: residual.norm_squared(),
        rank,
    }
}

pub fn ols_predict(fit: &OlsFit, x_query: &[f64]) -> Result<f64> {
    if x_query.len() != fit.dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: fit.dim(),
            got: x_query.len(),
        });
    }
    Ok(fit
        .coefficients
        .iter()
        .zip(x_query)
        .fold(0.0, |acc, (a, x)| acc + a * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_through_origin() {
        let p = Prompt::from_pairs(&[([1.0], 2.0), ([2.0], 4.0)]).unwrap();
        let fit = ols_fit(&p);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-14);
        assert!(fit.rss < 1e-28);
        assert_eq!(fit.rank, 1);
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let fit = OlsFit {
            coefficients: vec![0.0; 3],
            rss: 0.0,
            rank: 3,
        };
        assert_eq!(ols_predict(&fit, &[1.0, -2.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn unit_coefficients_select_coordinate() {
        for k in 0..3 {
            let mut coefficients = vec![0.0; 3];
            coefficients[k] = 1.0;
            let fit = OlsFit {
                coefficients,
                rss: 0.0,
                rank: 3,
            };
            let q = [0.3, -1.7, 2.9];
            assert_eq!(ols_predict(&fit, &q).unwrap(), q[k]);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let fit = OlsFit {
            coefficients: vec![1.0, 2.0],
            rss: 0.0,
            rank: 2,
        };
        assert!(ols_predict(&fit, &[1.0]).is_err());
    }

    #[test]
    fn underdetermined_gives_minimum_norm() {
        // One equation x1 + x2 = 2: minimum-norm solution is (1, 1).
        let p = Prompt::new(2, vec![1.0, 1.0], vec![2.0]).unwrap();
        let fit = ols_fit(&p);
        assert_eq!(fit.rank, 1);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_design_has_rank_zero() {
        let p = Prompt::new(2, vec![0.0; 4], vec![1.0, -1.0]).unwrap();
        let fit = ols_fit(&p);
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.coefficients, vec![0.0, 0.0]);
    }
}

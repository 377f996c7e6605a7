use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of labelled in-context examples `(x_i, y_i)`, `x_i ∈ R^d`.
///
/// Inputs are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Prompt {
    pub fn new(dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPrompt(
                "input dimension must be at least 1".into(),
            ));
        }
        if ys.is_empty() {
            return Err(Error::InvalidPrompt(
                "prompt needs at least one example".into(),
            ));
        }
        if xs.len() != ys.len() * dim {
            return Err(Error::InvalidPrompt(format!(
                "{} labels need {} input values for d={dim}, got {}",
                ys.len(),
                ys.len() * dim,
                xs.len()
            )));
        }
        Ok(Self { dim, xs, ys })
    }

    pub fn from_pairs<X: AsRef<[f64]>>(pairs: &[(X, f64)]) -> Result<Self> {
        let dim = pairs
            .first()
            .map(|(x, _)| x.as_ref().len())
            .ok_or_else(|| Error::InvalidPrompt("prompt needs at least one example".into()))?;
        let mut xs = Vec::with_capacity(pairs.len() * dim);
        let mut ys = Vec::with_capacity(pairs.len());
        for (i, (x, y)) in pairs.iter().enumerate() {
            let x = x.as_ref();
            if x.len() != dim {
                return Err(Error::InvalidPrompt(format!(
                    "example {i} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            xs.extend_from_slice(x);
            ys.push(*y);
        }
        Self::new(dim, xs, ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.xs.chunks_exact(self.dim).zip(self.ys.iter().copied())
    }

    /// Example order that depends only on example values, not on their
    /// position: lexicographic over `(x_1, …, x_d, y)` using IEEE total order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.compare_examples(a, b));
        idx
    }

    fn compare_examples(&self, a: usize, b: usize) -> Ordering {
        self.x(a)
            .iter()
            .zip(self.x(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.ys[a].total_cmp(&self.ys[b]))
    }

    /// Reorders examples; `order` must be a permutation of `0..len`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len()
            || order
                .iter()
                .any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::InvalidPrompt("order is not a permutation".into()));
        }
        let mut xs = Vec::with_capacity(self.xs.len());
        let mut ys = Vec::with_capacity(self.len());
        for &i in order {
            xs.extend_from_slice(self.x(i));
            ys.push(self.ys[i]);
        }
        Self::new(self.dim, xs, ys)
    }

    /// Every example repeated `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        let mut xs = Vec::with_capacity(self.xs.len() * times);
        let mut ys = Vec::with_capacity(self.len() * times);
        for _ in 0..times.max(1) {
            xs.extend_from_slice(&self.xs);
            ys.extend_from_slice(&self.ys);
        }
        Self {
            dim: self.dim,
            xs,
            ys,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(Prompt::new(1, vec![], vec![]).is_err());
        assert!(Prompt::new(2, vec![1.0, 2.0, 3.0], vec![0.0, 1.0]).is_err());
        let ragged: Vec<(Vec<f64>, f64)> = vec![(vec![1.0, 2.0], 0.0), (vec![1.0], 1.0)];
        assert!(Prompt::from_pairs(&ragged).is_err());
    }

    #[test]
    fn canonical_order_ignores_position() {
        let p = Prompt::from_pairs(&[([3.0], 1.0), ([-1.0], 2.0), ([3.0], 0.5)]).unwrap();
        let order = p.canonical_order();
        assert_eq!(order, vec![1, 2, 0]);
        let q = p.permuted(&[2, 0, 1]).unwrap();
        let canon = |p: &Prompt| {
            p.canonical_order()
                .into_iter()
                .map(|i| (p.x(i).to_vec(), p.y(i)))
                .collect::<Vec<_>>()
        };
        assert_eq!(canon(&p), canon(&q));
    }

    #[test]
    fn permuted_validates() {
        let p = Prompt::from_pairs(&[([1.0], 1.0), ([2.0], 2.0)]).unwrap();
        assert!(p.permuted(&[0, 0]).is_err());
        assert!(p.permuted(&[0]).is_err());
    }
}

//! Sparse real polynomials in a fixed number of variables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Coefficients below this magnitude are dropped after every operation.
pub const PRUNE: f64 = 1e-12;

/// A polynomial Σ c_e y^e stored as a map from exponent vectors to coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn variable(nvars: usize, k: usize) -> Self {
        let mut e = vec![0; nvars];
        e[k] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(e, 1.0);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    /// Coefficient of the constant monomial.
    pub fn constant_term(&self) -> f64 {
        self.terms.get(&vec![0; self.nvars]).copied().unwrap_or(0.0)
    }

    pub fn add_scaled(&mut self, other: &Poly, c: f64) {
        for (e, v) in &other.terms {
            *self.terms.entry(e.clone()).or_insert(0.0) += c * v;
        }
        self.prune();
    }

    /// Multiply by the variable y^k.
    pub fn times_var(&self, k: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, v) in &self.terms {
            let mut e2 = e.clone();
            e2[k] += 1;
            out.terms.insert(e2, *v);
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Poly {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.prune();
        out
    }

    fn prune(&mut self) {
        self.terms.retain(|_, v| v.abs() > PRUNE);
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(y).map(|(&k, &x)| x.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Partial derivative with respect to y^k.
    pub fn derivative(&self, k: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[k] > 0 {
                let mut e2 = e.clone();
                e2[k] -= 1;
                *out.terms.entry(e2).or_insert(0.0) += c * e[k] as f64;
            }
        }
        out.prune();
        out
    }

    /// True when some monomial involves y^k.
    pub fn involves(&self, k: usize) -> bool {
        self.terms.keys().any(|e| e[k] > 0)
    }

    /// Weighted degrees Σ w_k e_k of every monomial.
    pub fn weighted_degrees(&self, weights: &[u32]) -> Vec<u32> {
        self.terms
            .keys()
            .map(|e| e.iter().zip(weights).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        // p = 3 + 2 y0 y1^2
        let mut p = Poly::constant(2, 3.0);
        p.add_scaled(&Poly::variable(2, 0).times_var(1).times_var(1), 2.0);
        assert_eq!(p.eval(&[2.0, 3.0]), 3.0 + 2.0 * 2.0 * 9.0);
        let d1 = p.derivative(1);
        assert_eq!(d1.eval(&[2.0, 3.0]), 4.0 * 2.0 * 3.0);
        assert!(p.involves(0) && p.involves(1));
        assert!(!d1.derivative(1).derivative(1).involves(0));
        assert_eq!(p.weighted_degrees(&[1, 2]), vec![0, 5]);
    }

    #[test]
    fn pruning() {
        let mut p = Poly::variable(1, 0);
        p.add_scaled(&Poly::variable(1, 0), -1.0);
        assert!(p.is_zero());
    }
}

//! Smooth compactly supported bumps b(x) = exp(-1/(1 - |x - c|²/w²)).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A scaled Friedrichs bump centred at `center` with radius `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

/// g(u) = exp(-1/(1-u)) and its first two derivatives, zero for u ≥ 1.
fn profile(u: f64) -> (f64, f64, f64) {
    if u >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let s = 1.0 / (1.0 - u);
    let g = (-s).exp();
    let g1 = -g * s * s;
    let g2 = g * (s.powi(4) - 2.0 * s.powi(3));
    (g, g1, g2)
}

impl Bump {
    pub fn new(center: Vec<f64>, width: f64, amplitude: f64) -> Self {
        Self {
            center,
            width,
            amplitude,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn u(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / (self.width * self.width)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * profile(self.u(x)).0
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let (_, g1, _) = profile(self.u(x));
        let k = self.amplitude * g1 * 2.0 / (self.width * self.width);
        DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| k * (a - c)))
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (_, g1, g2) = profile(self.u(x));
        let w2 = self.width * self.width;
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| (a - c) * 2.0 / w2).collect();
        DMatrix::from_fn(x.len(), x.len(), |i, j| {
            let diag = if i == j { g1 * 2.0 / w2 } else { 0.0 };
            self.amplitude * (g2 * d[i] * d[j] + diag)
        })
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.center.iter().map(|c| c - self.width).collect(),
            self.center.iter().map(|c| c + self.width).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_differences() {
        let b = Bump::new(vec![0.1, -0.2], 0.8, 1.5);
        let x = [0.3, 0.1];
        let h = 1e-6;
        let g = b.gradient(&x);
        let hs = b.hessian(&x);
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            assert!(((b.value(&p) - b.value(&m)) / (2.0 * h) - g[i]).abs() < 1e-8);
            let col = (b.gradient(&p) - b.gradient(&m)) / (2.0 * h);
            for j in 0..2 {
                assert!((col[j] - hs[(j, i)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn vanishes_outside() {
        let b = Bump::new(vec![0.0], 1.0, 1.0);
        assert_eq!(b.value(&[1.0]), 0.0);
        assert_eq!(b.gradient(&[1.2])[0], 0.0);
        assert!((b.value(&[0.0]) - (-1f64).exp()).abs() < 1e-15);
    }
}

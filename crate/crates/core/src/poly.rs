use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Real polynomial with ascending monomial coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::new(vec![0.0])
    }

    pub fn monomial(degree: usize, c: f64) -> Self {
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[degree] = c;
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn is_even(&self) -> bool {
        self.coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0)
    }

    pub fn is_odd(&self) -> bool {
        self.coeffs.iter().step_by(2).all(|&c| c == 0.0)
    }

    /// Horner evaluation in any scalar type.
    pub fn eval<T: Real>(&self, x: T) -> T {
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * x + T::of(c))
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self::zero();
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..len).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Coefficients `c[a][b]` of `(f(x) - f(y))^2 = sum c[a][b] x^a y^b`.
pub fn squared_difference_coeffs(f: &Polynomial) -> Vec<Vec<f64>> {
    let d = f.degree();
    let mut c = vec![vec![0.0; 2 * d + 1]; 2 * d + 1];
    let fc = f.coeffs();
    for (i, &a) in fc.iter().enumerate() {
        for (j, &b) in fc.iter().enumerate() {
            // f(x)^2 and f(y)^2 terms
            c[i + j][0] += a * b;
            c[0][i + j] += a * b;
            // -2 f(x) f(y)
            c[i][j] -= 2.0 * a * b;
        }
    }
    c
}

/// Central binomial moments of `2 cos y`: (1/2pi) int (2 cos y)^j dy.
pub fn cosine_moment(j: usize) -> f64 {
    if j % 2 == 1 {
        0.0
    } else {
        binomial(j, j / 2)
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trailing_zeros_trimmed() {
        let p = Polynomial::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 1);
        assert_eq!(Polynomial::new(vec![]).degree(), 0);
    }

    #[test]
    fn parity_flags() {
        assert!(Polynomial::new(vec![1.0, 0.0, 3.0]).is_even());
        assert!(!Polynomial::new(vec![1.0, 0.5]).is_even());
        assert!(Polynomial::new(vec![0.0, 0.5, 0.0, 2.0]).is_odd());
    }

    #[test]
    fn cosine_moments() {
        assert_eq!(cosine_moment(0), 1.0);
        assert_eq!(cosine_moment(2), 2.0);
        assert_eq!(cosine_moment(4), 6.0);
        assert_eq!(cosine_moment(3), 0.0);
    }

    proptest! {
        #[test]
        fn squared_difference_expansion(
            coeffs in prop::collection::vec(-2.0f64..2.0, 1..5),
            x in -2.0f64..2.0,
            y in -2.0f64..2.0,
        ) {
            let f = Polynomial::new(coeffs);
            let c = squared_difference_coeffs(&f);
            let mut s = 0.0;
            for (a, row) in c.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    s += v * x.powi(a as i32) * y.powi(b as i32);
                }
            }
            let direct = (f.eval(x) - f.eval(y)).powi(2);
            prop_assert!((s - direct).abs() < 1e-9 * (1.0 + direct));
        }

        #[test]
        fn derivative_matches_finite_difference(
            coeffs in prop::collection::vec(-1.0f64..1.0, 1..8),
            x in -2.5f64..2.5,
        ) {
            let f = Polynomial::new(coeffs);
            let h = 1e-5;
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            prop_assert!((fd - f.derivative().eval(x)).abs() < 1e-6);
        }
    }
}

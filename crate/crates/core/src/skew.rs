//! Inversion of real antisymmetric matrices by a block LDL^T factorisation
//! with 2x2 pivots, P A P^T = L D L^T, D = diag([[0, a_k], [-a_k, 0]]).
//! Elimination keeps the trailing block exactly antisymmetric.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_CONDITION: f64 = 1e12;

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Square<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> Square<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.at(j, i))
    }

    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| {
                (0..self.n)
                    .map(|i| self.at(i, j).abs().as_f64())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Largest singular value by power iteration on A^T A (in f64).
    pub fn norm2_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let a: Vec<f64> = self.data.iter().map(|v| v.as_f64()).collect();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i % 7) as f64).collect();
        let mut sigma = 0.0;
        for _ in 0..100 {
            let y: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
                .collect();
            let z: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| a[i * n + j] * y[i]).sum())
                .collect();
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nz == 0.0 {
                return 0.0;
            }
            let s = nz.sqrt();
            x = z.iter().map(|v| v / nz).collect();
            if (s - sigma).abs() <= 1e-12 * s {
                sigma = s;
                break;
            }
            sigma = s;
        }
        sigma
    }
}

#[derive(Clone, Debug)]
pub struct SkewLdl<T> {
    n: usize,
    /// perm[i] = original index placed at position i.
    perm: Vec<usize>,
    /// Unit lower triangular factor (row-major).
    l: Vec<T>,
    /// Off-diagonal entries a_k of the 2x2 blocks of D.
    d: Vec<T>,
}

impl<T: Real> SkewLdl<T> {
    /// Factorise an antisymmetric matrix of even order. Pivot pairs are
    /// chosen by the largest remaining entry (complete pivoting).
    pub fn new(a: &Square<T>) -> Result<Self> {
        let n = a.n;
        if n % 2 == 1 {
            return Err(Error::Inversion {
                n,
                parity: "odd",
                cond: f64::INFINITY,
            });
        }
        let mut w = a.data.clone();
        let mut l = vec![T::zero(); n * n];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut d = Vec::with_capacity(n / 2);
        let swap = |w: &mut Vec<T>, l: &mut Vec<T>, perm: &mut Vec<usize>, p: usize, q: usize| {
            if p == q {
                return;
            }
            for c in 0..n {
                w.swap(p * n + c, q * n + c);
            }
            for r in 0..n {
                w.swap(r * n + p, r * n + q);
            }
            for c in 0..n {
                l.swap(p * n + c, q * n + c);
            }
            perm.swap(p, q);
        };
        for k in (0..n).step_by(2) {
            let (mut best, mut bp, mut bq) = (T::zero(), k, k + 1);
            for p in k..n {
                for q in (p + 1)..n {
                    let v = w[p * n + q].abs();
                    if v > best {
                        best = v;
                        bp = p;
                        bq = q;
                    }
                }
            }
            if best == T::zero() {
                return Err(Error::Inversion {
                    n,
                    parity: "even",
                    cond: f64::INFINITY,
                });
            }
            swap(&mut w, &mut l, &mut perm, k, bp);
            let bq = if bq == k { bp } else { bq };
            swap(&mut w, &mut l, &mut perm, k + 1, bq);
            let a_k = w[k * n + k + 1];
            d.push(a_k);
            for i in (k + 2)..n {
                let c0 = w[i * n + k];
                let c1 = w[i * n + k + 1];
                l[i * n + k] = c1 / a_k;
                l[i * n + k + 1] = -c0 / a_k;
            }
            for i in (k + 2)..n {
                let (li0, li1) = (l[i * n + k], l[i * n + k + 1]);
                for j in (k + 2)..n {
                    let (cj0, cj1) = (w[j * n + k], w[j * n + k + 1]);
                    w[i * n + j] += li0 * cj0 + li1 * cj1;
                }
            }
            for i in k..n {
                for c in k..(k + 2) {
                    w[i * n + c] = T::zero();
                    w[c * n + i] = T::zero();
                }
            }
        }
        for i in 0..n {
            l[i * n + i] = T::one();
        }
        Ok(Self { n, perm, l, d })
    }

    /// A^{-1} = P^T L^{-T} D^{-1} L^{-1} P.
    pub fn inverse(&self) -> Square<T> {
        let n = self.n;
        // X = L^{-1} by forward substitution, column by column
        let mut x = vec![T::zero(); n * n];
        for c in 0..n {
            x[c * n + c] = T::one();
            for i in (c + 1)..n {
                let mut s = T::zero();
                for k in c..i {
                    s += self.l[i * n + k] * x[k * n + c];
                }
                x[i * n + c] = -s;
            }
        }
        // Y = D^{-1} X, D^{-1} block = [[0, -1/a], [1/a, 0]]
        let mut y = vec![T::zero(); n * n];
        for (b, &a) in self.d.iter().enumerate() {
            let (r0, r1) = (2 * b, 2 * b + 1);
            for c in 0..n {
                y[r0 * n + c] = -x[r1 * n + c] / a;
                y[r1 * n + c] = x[r0 * n + c] / a;
            }
        }
        // Z = X^T Y, then undo the permutation
        let mut out = Square::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = T::zero();
                for k in 0..n {
                    let xi = x[k * n + i];
                    if xi != T::zero() {
                        s += xi * y[k * n + j];
                    }
                }
                out.set(self.perm[i], self.perm[j], s);
            }
        }
        out
    }
}

/// Inverse of an antisymmetric matrix with its 1-norm condition number.
/// Fails if the matrix is singular or the condition number exceeds 1e12.
pub fn skew_inverse<T: Real>(a: &Square<T>) -> Result<(Square<T>, f64)> {
    let f = SkewLdl::new(a)?;
    let inv = f.inverse();
    let cond = a.norm1() * inv.norm1();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Inversion {
            n: a.n,
            parity: if a.n % 2 == 0 { "even" } else { "odd" },
            cond,
        });
    }
    Ok((inv, cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::DoubleDouble;
    use proptest::prelude::*;

    fn skew_from(vals: &[f64], n: usize) -> Square<f64> {
        let mut m = Square::zeros(n);
        let mut it = vals.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = *it.next().unwrap();
                m.set(i, j, v);
                m.set(j, i, -v);
            }
        }
        m
    }

    #[test]
    fn two_by_two() {
        let m = skew_from(&[3.0], 2);
        let (inv, _) = skew_inverse(&m).unwrap();
        assert_eq!(inv.at(0, 1), -1.0 / 3.0);
        assert_eq!(inv.at(1, 0), 1.0 / 3.0);
    }

    #[test]
    fn odd_and_singular_rejected() {
        let m = skew_from(&[1.0, 2.0, 3.0], 3);
        assert!(matches!(
            skew_inverse(&m),
            Err(Error::Inversion { parity: "odd", .. })
        ));
        let z = Square::<f64>::zeros(4);
        assert!(skew_inverse(&z).is_err());
        // nearly singular: Pfaffian a01 a23 - a02 a13 + a03 a12 = 1e-15
        let mut m = skew_from(&[1.0, 1.0, 0.0, 0.0, 1.0, 1.0], 4);
        m.set(2, 3, 1.0 + 1e-15);
        m.set(3, 2, -1.0 - 1e-15);
        assert!(skew_inverse(&m).is_err());
    }

    #[test]
    fn checkerboard_parity_pattern_is_kept() {
        // nonzero only for i + j odd, like M for even potentials
        let n = 6;
        let m = Square::from_fn(n, |i, j| {
            if (i + j) % 2 == 1 {
                let v = 1.0 + (i.min(j) as f64) * 0.3 + (i.max(j) as f64) * 0.1;
                if i < j {
                    v
                } else {
                    -v
                }
            } else {
                0.0
            }
        });
        let (inv, _) = skew_inverse(&m).unwrap();
        for i in 0..n {
            for j in 0..n {
                if (i + j) % 2 == 0 {
                    assert_eq!(inv.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn double_double_inverse() {
        let n = 8;
        let m = Square::from_fn(n, |i, j| {
            let v = DoubleDouble::from(1.0) / DoubleDouble::from((i + 2 * j + 1) as f64);
            if i < j {
                v
            } else if i > j {
                -(DoubleDouble::from(1.0) / DoubleDouble::from((j + 2 * i + 1) as f64))
            } else {
                DoubleDouble::from(0.0)
            }
        });
        let (inv, _) = skew_inverse(&m).unwrap();
        let p = m.mul(&inv);
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((p.at(i, j).as_f64() - target).abs() < 1e-25);
            }
        }
    }

    proptest! {
        #[test]
        fn inverse_is_antisymmetric_inverse(vals in prop::collection::vec(-1.0f64..1.0, 28)) {
            let n = 8;
            let m = skew_from(&vals, n);
            if let Ok((inv, cond)) = skew_inverse(&m) {
                let p = m.mul(&inv);
                for i in 0..n {
                    for j in 0..n {
                        let target = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((p.at(i, j) - target).abs() < 1e-13 * cond.max(1.0));
                        prop_assert!((inv.at(i, j) + inv.at(j, i)).abs() < 1e-13 * cond.max(1.0));
                    }
                }
            }
        }
    }
}

//! Christoffel-Darboux kernel (beta = 2), the beta = 1 matrix kernel built
//! from the inverse of the overlap block M^{(0,n)}, and the finite-n
//! variance identities for linear statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orthopoly::{
    build_recurrence, evaluate_basis, max_coefficients, overlap_block, psi_and_derivative_at,
    psi_at, BasisEvaluation, Precision, RecurrenceTable, MAX_KERNEL_N,
};
use crate::poly::squared_difference_coeffs;
use crate::potential::{Potential, TestFunction};
use crate::quadrature::QuadSpec;
use crate::scalar::{compensated_sum, Real};
use crate::skew::{skew_inverse, Square};
use crate::DoubleDouble;

/// Relative error above which a variance carries an accuracy warning.
pub const VARIANCE_WARN: f64 = 1e-4;
/// Below this separation the CD form switches to its confluent limit.
pub const CONFLUENT: f64 = 1e-10;

pub fn check_kernel_n(n: usize) -> Result<()> {
    if n < 2 || n % 2 == 1 {
        return Err(Error::Config(format!(
            "kernels need an even n >= 2 (the beta = 1 kernel exists for even n only), got {n}"
        )));
    }
    if n > MAX_KERNEL_N {
        return Err(Error::Config(format!(
            "kernel path is capped at n = {MAX_KERNEL_N}, got {n}"
        )));
    }
    Ok(())
}

/// beta = 2 kernel K_n(x, y) = sum_{l<n} psi_l(x) psi_l(y).
pub struct CdKernel<'a, T: Real> {
    pub table: &'a RecurrenceTable,
    pub pot: &'a Potential,
    pub basis: &'a BasisEvaluation<T>,
    pub n: usize,
}

pub fn cd_kernel<'a, T: Real>(
    basis: &'a BasisEvaluation<T>,
    table: &'a RecurrenceTable,
    pot: &'a Potential,
    n: usize,
) -> Result<CdKernel<'a, T>> {
    if basis.k_max() < n || table.k < n {
        return Err(Error::Range(format!(
            "CD kernel for n = {n} needs psi_0..psi_n (basis has k <= {})",
            basis.k_max()
        )));
    }
    Ok(CdKernel {
        table,
        pot,
        basis,
        n,
    })
}

impl<'a, T: Real> CdKernel<'a, T> {
    pub fn sum_form(&self, x: f64, y: f64) -> f64 {
        let a = psi_at(self.table, self.pot, T::of(x), self.n - 1);
        let b = psi_at(self.table, self.pot, T::of(y), self.n - 1);
        compensated_sum(a.iter().zip(&b).map(|(u, v)| *u * *v)).as_f64()
    }

    /// J_{n-1} [psi_n(x) psi_{n-1}(y) - psi_{n-1}(x) psi_n(y)] / (x - y), with
    /// the derivative form J_{n-1} [psi_n' psi_{n-1} - psi_{n-1}' psi_n](x)
    /// when |x - y| < 1e-10.
    pub fn cd_form(&self, x: f64, y: f64) -> f64 {
        let n = self.n;
        let jn = T::of(self.table.j[n - 1]);
        if (x - y).abs() < CONFLUENT {
            let (v, d) = psi_and_derivative_at(self.table, self.pot, T::of(x), n);
            return (jn * (d[n] * v[n - 1] - d[n - 1] * v[n])).as_f64();
        }
        let a = psi_at(self.table, self.pot, T::of(x), n);
        let b = psi_at(self.table, self.pot, T::of(y), n);
        (jn * (a[n] * b[n - 1] - a[n - 1] * b[n]) / (T::of(x) - T::of(y))).as_f64()
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.cd_form(x, y)
    }

    /// One-point density K_n(x, x) / n.
    pub fn density(&self, x: f64) -> f64 {
        self.cd_form(x, x) / self.n as f64
    }

    /// int K_n(x, x) dx on the basis rule.
    pub fn trace(&self) -> f64 {
        let b = self.basis;
        let diag: Vec<T> = (0..b.rule.len())
            .map(|i| (0..self.n).map(|l| b.psi[l][i] * b.psi[l][i]).sum())
            .collect();
        b.rule.integrate(&diag).as_f64()
    }

    /// int K_n(x, v) K_n(v, y) dv on the basis rule.
    pub fn reproduce(&self, x: f64, y: f64) -> f64 {
        let b = self.basis;
        let px = psi_at(self.table, self.pot, T::of(x), self.n - 1);
        let py = psi_at(self.table, self.pot, T::of(y), self.n - 1);
        let kx: Vec<T> = (0..b.rule.len())
            .map(|i| (0..self.n).map(|l| px[l] * b.psi[l][i]).sum())
            .collect();
        let ky: Vec<T> = (0..b.rule.len())
            .map(|i| (0..self.n).map(|l| py[l] * b.psi[l][i]).sum())
            .collect();
        b.inner(&kx, &ky).as_f64()
    }
}

/// Truncated Jacobi matrix of order `size` in T.
pub fn jacobi_matrix<T: Real>(table: &RecurrenceTable, size: usize) -> Square<T> {
    let mut m = Square::zeros(size);
    for k in 0..size {
        m.set(k, k, T::of(table.q[k]));
        if k + 1 < size {
            m.set(k, k + 1, T::of(table.j[k]));
            m.set(k + 1, k, T::of(table.j[k]));
        }
    }
    m
}

/// f(J) for the truncated Jacobi matrix, exact in rows whose band stays
/// inside the truncation.
pub fn poly_of_jacobi<T: Real>(f: &[f64], jac: &Square<T>) -> Square<T> {
    let n = jac.n;
    let mut out = Square::zeros(n);
    let mut power = Square::from_fn(n, |i, j| if i == j { T::one() } else { T::zero() });
    for (k, &c) in f.iter().enumerate() {
        if k > 0 {
            power = power.mul(jac);
        }
        if c != 0.0 {
            for (o, p) in out.data.iter_mut().zip(&power.data) {
                *o += T::of(c) * *p;
            }
        }
    }
    out
}

/// Variance together with the two independent routes that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    /// |quadrature - matrix| plus a roundoff floor.
    pub error: f64,
    pub quadrature: f64,
    pub matrix: f64,
    pub warning: Option<String>,
}

impl VarianceEstimate {
    fn from_routes(quadrature: f64, matrix: f64) -> Self {
        let error = (quadrature - matrix).abs() + 1e-14 * matrix.abs().max(1.0);
        let warning = (error > VARIANCE_WARN * matrix.abs()).then(|| {
            format!(
                "quadrature and matrix routes differ by {error:e} (relative > {VARIANCE_WARN:e})"
            )
        });
        Self {
            value: quadrature,
            error,
            quadrature,
            matrix,
            warning,
        }
    }

    fn zero() -> Self {
        Self::from_routes(0.0, 0.0)
    }
}

/// Var_n[phi] at beta = 2: (1/2) int int (phi(x) - phi(y))^2 K_n(x, y)^2.
/// The matrix route is sum_{j<n<=k} phi(J)_{jk}^2.
pub fn variance_beta2<T: Real>(
    basis: &BasisEvaluation<T>,
    table: &RecurrenceTable,
    phi: &TestFunction,
    n: usize,
) -> Result<VarianceEstimate> {
    if n == 0 || basis.k_max() + 1 < n {
        return Err(Error::Range(format!(
            "variance needs psi_0..psi_{}",
            n.saturating_sub(1)
        )));
    }
    let deg = phi.degree();
    if deg == 0 {
        return Ok(VarianceEstimate::zero());
    }
    if table.k < n + deg {
        return Err(Error::Range(format!(
            "matrix route needs J_0..J_{} (table has {})",
            n + deg - 1,
            table.k
        )));
    }
    let size = n + deg;
    let fj = poly_of_jacobi::<T>(phi.poly().coeffs(), &jacobi_matrix(table, size));
    let mut acc = T::zero();
    for j in 0..n {
        for k in n..size {
            acc += fj.at(j, k) * fj.at(j, k);
        }
    }
    let matrix = acc.as_f64();

    let x: Vec<f64> = basis.rule.nodes.iter().map(|v| v.as_f64()).collect();
    let w: Vec<f64> = basis.rule.weights.iter().map(|v| v.as_f64()).collect();
    let m = x.len();
    let psi: Vec<Vec<f64>> = (0..n)
        .map(|l| basis.psi[l].iter().map(|v| v.as_f64()).collect())
        .collect();
    let ph: Vec<f64> = x.iter().map(|&v| phi.eval(v)).collect();
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..m {
                let k: f64 = (0..n).map(|l| psi[l][i] * psi[l][j]).sum();
                let d = ph[i] - ph[j];
                s += w[j] * d * d * k * k;
            }
            w[i] * s
        })
        .collect();
    let quadrature = 0.5 * compensated_sum(rows);
    Ok(VarianceEstimate::from_routes(quadrature, matrix))
}

/// beta = 1 matrix kernel
/// [[S(x,y), SD(x,y)], [IS(x,y) - eps(x-y), S(y,x)]] with
/// S = sum psi_i(x) A_ij eps psi_j(y), A = -n (M^{(0,n)})^{-1},
/// IS = sum eps psi_i(x) A_ij eps psi_j(y), SD = -sum psi_i(x) A_ij psi_j(y).
pub struct KernelBundle<T: Real> {
    pub n: usize,
    pub table: RecurrenceTable,
    pub pot: Potential,
    pub basis: BasisEvaluation<T>,
    pub a: Square<T>,
    /// Operator 2-norm estimate of (M^{(0,n)})^{-1}.
    pub m_inv_norm: f64,
    pub condition: f64,
    /// true: (2,1) entry is IS - eps(x - y); false: -IS.
    pub subtract_epsilon_in_21: bool,
    psi64: Vec<Vec<f64>>,
    eps64: Vec<Vec<f64>>,
}

/// M^{(0,n)} is inverted in T and A = -n M^{-1} is stored.
pub fn build_matrix_kernel<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    basis: BasisEvaluation<T>,
    n: usize,
) -> Result<KernelBundle<T>> {
    check_kernel_n(n)?;
    if basis.k_max() + 1 < n {
        return Err(Error::Range(format!(
            "matrix kernel needs psi_0..psi_{}",
            n - 1
        )));
    }
    let m = overlap_block(&basis, 0, n)?;
    let sq = Square { n, data: m.data };
    let (inv, condition) = skew_inverse(&sq)?;
    let nf = T::of_usize(n);
    let a = Square {
        n,
        data: inv.data.iter().map(|v| -nf * *v).collect(),
    };
    let psi64 = (0..n)
        .map(|l| basis.psi[l].iter().map(|v| v.as_f64()).collect())
        .collect();
    let eps64 = (0..n)
        .map(|l| basis.eps_psi[l].iter().map(|v| v.as_f64()).collect())
        .collect();
    Ok(KernelBundle {
        n,
        table: table.clone(),
        pot: pot.clone(),
        basis,
        m_inv_norm: inv.norm2_estimate(),
        condition,
        a,
        subtract_epsilon_in_21: true,
        psi64,
        eps64,
    })
}

fn eps_sign(x: f64) -> f64 {
    if x > 0.0 {
        0.5
    } else if x < 0.0 {
        -0.5
    } else {
        0.0
    }
}

/// Kernel matrices on the nodes of the basis rule (f64).
struct NodeKernels {
    s: Vec<f64>,
    is: Vec<f64>,
    sd: Vec<f64>,
    m: usize,
}

impl<T: Real> KernelBundle<T> {
    pub fn with_convention(mut self, subtract_epsilon_in_21: bool) -> Self {
        self.subtract_epsilon_in_21 = subtract_epsilon_in_21;
        self
    }

    fn a64(&self) -> Vec<f64> {
        self.a.data.iter().map(|v| v.as_f64()).collect()
    }

    fn point_values(&self, x: f64) -> (Vec<T>, Vec<T>) {
        let psi = psi_at(&self.table, &self.pot, T::of(x), self.n - 1);
        let eps = (0..self.n)
            .map(|j| self.basis.eps_at(j, T::of(x)))
            .collect();
        (psi, eps)
    }

    fn bilinear(&self, u: &[T], v: &[T]) -> f64 {
        let n = self.n;
        let mut s = T::zero();
        for i in 0..n {
            if u[i] == T::zero() {
                continue;
            }
            let mut row = T::zero();
            for j in 0..n {
                row += self.a.at(i, j) * v[j];
            }
            s += u[i] * row;
        }
        s.as_f64()
    }

    pub fn s(&self, x: f64, y: f64) -> f64 {
        let (px, _) = self.point_values(x);
        let (_, ey) = self.point_values(y);
        self.bilinear(&px, &ey)
    }

    pub fn is(&self, x: f64, y: f64) -> f64 {
        let (_, ex) = self.point_values(x);
        let (_, ey) = self.point_values(y);
        self.bilinear(&ex, &ey)
    }

    pub fn sd(&self, x: f64, y: f64) -> f64 {
        let (px, _) = self.point_values(x);
        let (py, _) = self.point_values(y);
        -self.bilinear(&px, &py)
    }

    /// (2,1) entry under the active convention.
    pub fn entry21(&self, x: f64, y: f64) -> f64 {
        if self.subtract_epsilon_in_21 {
            self.is(x, y) - eps_sign(x - y)
        } else {
            -self.is(x, y)
        }
    }

    pub fn k_hat(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        [
            [self.s(x, y), self.sd(x, y)],
            [self.entry21(x, y), self.s(y, x)],
        ]
    }

    /// tr K(x, y) K(y, x).
    pub fn trace_kk(&self, x: f64, y: f64) -> f64 {
        let a = self.k_hat(x, y);
        let b = self.k_hat(y, x);
        a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1]
    }

    /// One-point density p_{1,1}(x) = (1/2n) tr K(x, x) = S(x, x) / n.
    pub fn p11(&self, x: f64) -> f64 {
        self.s(x, x) / self.n as f64
    }

    /// int p_{1,1} on the basis rule.
    pub fn p11_mass(&self) -> f64 {
        let m = self.basis.rule.len();
        let a = self.a64();
        let n = self.n;
        let vals: Vec<f64> = (0..m)
            .map(|i| {
                let mut s = 0.0;
                for k in 0..n {
                    let mut row = 0.0;
                    for l in 0..n {
                        row += a[k * n + l] * self.eps64[l][i];
                    }
                    s += self.psi64[k][i] * row;
                }
                s / n as f64
            })
            .collect();
        let w: Vec<f64> = self.basis.rule.weights.iter().map(|v| v.as_f64()).collect();
        compensated_sum(vals.iter().zip(&w).map(|(v, w)| v * w))
    }

    fn node_kernels(&self) -> NodeKernels {
        let n = self.n;
        let m = self.basis.rule.len();
        let a = self.a64();
        // A E and A Psi, n x m
        let apply = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..n)
                .map(|k| {
                    let mut out = vec![0.0; m];
                    for l in 0..n {
                        let c = a[k * n + l];
                        if c == 0.0 {
                            continue;
                        }
                        for (o, v) in out.iter_mut().zip(&rows[l]) {
                            *o += c * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let ae = apply(&self.eps64);
        let ap = apply(&self.psi64);
        let outer = |left: &Vec<Vec<f64>>, right: &Vec<Vec<f64>>, sign: f64| -> Vec<f64> {
            (0..m)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let col: Vec<f64> = (0..n).map(|k| left[k][i]).collect();
                    (0..m).map(move |j| sign * (0..n).map(|k| col[k] * right[k][j]).sum::<f64>())
                })
                .collect()
        };
        NodeKernels {
            s: outer(&self.psi64, &ae, 1.0),
            is: outer(&self.eps64, &ae, 1.0),
            sd: outer(&self.psi64, &ap, -1.0),
            m,
        }
    }

    /// (1/4) int int (phi(x)-phi(y))^2 tr K(x,y) K(y,x) by product quadrature.
    /// The eps(x - y) part of the (2,1) entry contributes
    /// 2 int int dphi^2 SD(x,y) eps(x-y), done row-wise with the spectral
    /// epsilon transform so that the jump on the diagonal is integrated exactly.
    fn variance_quadrature(&self, phi: &TestFunction) -> f64 {
        let k = self.node_kernels();
        let m = k.m;
        let rule = self.basis.rule.to_f64();
        let x = &rule.nodes;
        let w = &rule.weights;
        let ph: Vec<f64> = x.iter().map(|&v| phi.eval(v)).collect();
        let sign = if self.subtract_epsilon_in_21 {
            1.0
        } else {
            -1.0
        };
        let rows: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut smooth = 0.0;
                let mut g = vec![0.0; m];
                for j in 0..m {
                    let d = ph[i] - ph[j];
                    let d2 = d * d;
                    let (ij, ji) = (i * m + j, j * m + i);
                    let t = 2.0 * k.s[ij] * k.s[ji]
                        + sign * (k.sd[ij] * k.is[ji] + k.is[ij] * k.sd[ji]);
                    smooth += w[j] * d2 * t;
                    g[j] = d2 * k.sd[ij];
                }
                let jump = if self.subtract_epsilon_in_21 {
                    // int g(y) eps(x_i - y) dy = (eps g)(x_i)
                    2.0 * rule.epsilon(&g)[i]
                } else {
                    0.0
                };
                w[i] * (smooth + jump)
            })
            .collect();
        0.25 * compensated_sum(rows)
    }

    /// Same variance from M on the extended index range 0..n+2 deg(phi):
    /// with F^a = J^a M / n and c_ab the coefficients of (phi(x)-phi(y))^2,
    /// Var = (1/4) sum c_ab [2 tr(A^T F^a A^T F^b) - 2 <A^T F^a, F^b A>
    ///        - 2 sum_ij A_ij (J^a M J^bT)_ij / n].
    fn variance_matrix(&self, phi: &TestFunction) -> Result<f64> {
        let n = self.n;
        let deg = phi.degree();
        let size = n + 2 * deg;
        if self.basis.k_max() + 1 < size || self.table.k < size {
            return Err(Error::Range(format!(
                "matrix route needs psi_0..psi_{} (basis has k <= {})",
                size - 1,
                self.basis.k_max()
            )));
        }
        let c = squared_difference_coeffs(phi.poly());
        let jac = jacobi_matrix::<T>(&self.table, size);
        let mut powers = vec![Square::from_fn(size, |i, j| {
            if i == j {
                T::one()
            } else {
                T::zero()
            }
        })];
        for a in 1..=2 * deg {
            let next = powers[a - 1].mul(&jac);
            powers.push(next);
        }
        let mext = overlap_block(&self.basis, 0, size)?;
        let mext = Square {
            n: size,
            data: mext.data,
        };
        let nf = T::of_usize(n);
        let block = |m: &Square<T>| Square::from_fn(n, |i, j| m.at(i, j) / nf);
        let jm: Vec<Square<T>> = powers.iter().map(|p| p.mul(&mext)).collect();
        let f: Vec<Square<T>> = jm.iter().map(&block).collect();
        let at = self.a.transpose();
        let mut total = T::zero();
        for (ai, row) in c.iter().enumerate() {
            for (bi, &cab) in row.iter().enumerate() {
                if cab == 0.0 {
                    continue;
                }
                let atfa = at.mul(&f[ai]);
                let atfb = at.mul(&f[bi]);
                let fba = f[bi].mul(&self.a);
                let mut tr = T::zero();
                let mut cross = T::zero();
                for i in 0..n {
                    for j in 0..n {
                        tr += atfa.at(i, j) * atfb.at(j, i);
                        cross += atfa.at(i, j) * fba.at(i, j);
                    }
                }
                let g = block(&jm[ai].mul(&powers[bi].transpose()));
                let mut eps_term = T::zero();
                if self.subtract_epsilon_in_21 {
                    for i in 0..n {
                        for j in 0..n {
                            eps_term += self.a.at(i, j) * g.at(i, j);
                        }
                    }
                }
                let sign = if self.subtract_epsilon_in_21 {
                    T::one()
                } else {
                    -T::one()
                };
                total += T::of(cab)
                    * (T::of(2.0) * tr - T::of(2.0) * sign * cross - T::of(2.0) * eps_term);
            }
        }
        Ok((total * T::of(0.25)).as_f64())
    }

    /// int int tr K(x,y) K(y,x) dx dy by quadrature (equals 2n when the
    /// kernel reproduces itself).
    pub fn trace_square_integral(&self) -> f64 {
        let k = self.node_kernels();
        let m = k.m;
        let rule = self.basis.rule.to_f64();
        let w = &rule.weights;
        let sign = if self.subtract_epsilon_in_21 {
            1.0
        } else {
            -1.0
        };
        let rows: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                let mut g = vec![0.0; m];
                for j in 0..m {
                    let (ij, ji) = (i * m + j, j * m + i);
                    s += w[j]
                        * (2.0 * k.s[ij] * k.s[ji]
                            + sign * (k.sd[ij] * k.is[ji] + k.is[ij] * k.sd[ji]));
                    g[j] = k.sd[ij];
                }
                let jump = if self.subtract_epsilon_in_21 {
                    2.0 * rule.epsilon(&g)[i]
                } else {
                    0.0
                };
                w[i] * (s + jump)
            })
            .collect();
        compensated_sum(rows)
    }
}

/// Var_n[phi] at beta = 1, (1/4) int int dphi^2 tr(K K), with the product
/// quadrature as the value and the extended-precision matrix route as the
/// independent check.
pub fn variance_beta1<T: Real>(
    bundle: &KernelBundle<T>,
    phi: &TestFunction,
) -> Result<VarianceEstimate> {
    if phi.degree() == 0 {
        return Ok(VarianceEstimate::zero());
    }
    let quadrature = bundle.variance_quadrature(phi);
    let matrix = bundle.variance_matrix(phi)?;
    Ok(VarianceEstimate::from_routes(quadrature, matrix))
}

/// Everything needed for kernel computations at one (potential, n).
pub struct KernelSetup {
    pub table: RecurrenceTable,
    pub pot: Potential,
}

/// Recurrence table sized for variances of test functions up to degree 8.
pub fn kernel_table(
    pot: &Potential,
    n: usize,
    quad: QuadSpec,
    digits: u32,
) -> Result<RecurrenceTable> {
    check_kernel_n(n)?;
    build_recurrence(pot, n, max_coefficients(n).min(n + 17), quad, digits)
}

/// Build table, basis and matrix kernel for (pot, n) in the precision implied
/// by `digits` and evaluate `f` on the bundle.
pub fn with_bundle<R>(
    pot: &Potential,
    n: usize,
    quad: QuadSpec,
    digits: u32,
    f: impl FnOnce(BundleRef<'_>) -> Result<R>,
) -> Result<R> {
    let table = kernel_table(pot, n, quad, digits)?;
    let k_max = table.k - 1;
    match table.precision() {
        Precision::Double => {
            let basis = evaluate_basis::<f64>(&table, pot, k_max, quad)?;
            let b = build_matrix_kernel(&table, pot, basis, n)?;
            f(BundleRef::Double(&b))
        }
        Precision::DoubleDouble => {
            let basis = evaluate_basis::<DoubleDouble>(&table, pot, k_max, quad)?;
            let b = build_matrix_kernel(&table, pot, basis, n)?;
            f(BundleRef::DoubleDouble(&b))
        }
    }
}

/// Precision-erased borrow of a kernel bundle.
pub enum BundleRef<'a> {
    Double(&'a KernelBundle<f64>),
    DoubleDouble(&'a KernelBundle<DoubleDouble>),
}

macro_rules! dispatch {
    ($s:expr, $b:ident => $e:expr) => {
        match $s {
            BundleRef::Double($b) => $e,
            BundleRef::DoubleDouble($b) => $e,
        }
    };
}

impl BundleRef<'_> {
    pub fn n(&self) -> usize {
        dispatch!(self, b => b.n)
    }
    pub fn variance(&self, phi: &TestFunction) -> Result<VarianceEstimate> {
        dispatch!(self, b => variance_beta1(b, phi))
    }
    pub fn p11(&self, x: f64) -> f64 {
        dispatch!(self, b => b.p11(x))
    }
    pub fn p11_mass(&self) -> f64 {
        dispatch!(self, b => b.p11_mass())
    }
    pub fn m_inv_norm(&self) -> f64 {
        dispatch!(self, b => b.m_inv_norm)
    }
    pub fn condition(&self) -> f64 {
        dispatch!(self, b => b.condition)
    }
    pub fn beta2_variance(&self, phi: &TestFunction) -> Result<VarianceEstimate> {
        dispatch!(self, b => variance_beta2(&b.basis, &b.table, phi, b.n))
    }
    pub fn cd_density(&self, x: f64) -> f64 {
        dispatch!(self, b => cd_kernel(&b.basis, &b.table, &b.pot, b.n).map(|k| k.density(x)).unwrap_or(f64::NAN))
    }
    /// (int p11 under IS - eps, int p11 under -IS, int int tr KK / 2n under
    /// IS - eps, same under -IS)
    pub fn convention_probe(&self) -> (f64, f64, f64, f64) {
        dispatch!(self, b => {
            let n2 = 2.0 * b.n as f64;
            // p11 does not involve the (2,1) entry
            let p = b.p11_mass();
            let with = b.trace_square_integral() / n2;
            let without = {
                let flipped = KernelBundle {
                    n: b.n,
                    table: b.table.clone(),
                    pot: b.pot.clone(),
                    basis: b.basis.clone(),
                    a: b.a.clone(),
                    m_inv_norm: b.m_inv_norm,
                    condition: b.condition,
                    subtract_epsilon_in_21: !b.subtract_epsilon_in_21,
                    psi64: b.psi64.clone(),
                    eps64: b.eps64.clone(),
                };
                flipped.trace_square_integral() / n2
            };
            if b.subtract_epsilon_in_21 { (p, p, with, without) } else { (p, p, without, with) }
        })
    }
}

/// Outcome of the (2,1)-convention self-test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionReport {
    pub n: usize,
    /// int p11 with IS - eps and with -IS.
    pub p11_mass: (f64, f64),
    /// int int tr K K / (2n) with IS - eps and with -IS.
    pub trace_ratio: (f64, f64),
    /// The p11 check separates the conventions by more than 1e-3.
    pub p11_discriminates: bool,
    /// The reproducing-trace check picks IS - eps (ratio 1 within 1e-6,
    /// the alternative off by more than 1e-3).
    pub trace_selects_subtracted: bool,
    pub flag_for_review: bool,
}

pub fn convention_self_test(
    pot: &Potential,
    n: usize,
    quad: QuadSpec,
    digits: u32,
) -> Result<ConventionReport> {
    with_bundle(pot, n, quad, digits, |b| {
        let (p_with, p_without, t_with, t_without) = b.convention_probe();
        let p11_discriminates = (p_without - 1.0).abs() > 1e-3 && (p_with - 1.0).abs() <= 1e-6;
        let trace_selects_subtracted =
            (t_with - 1.0).abs() <= 1e-6 && (t_without - 1.0).abs() > 1e-3;
        Ok(ConventionReport {
            n,
            p11_mass: (p_with, p_without),
            trace_ratio: (t_with, t_without),
            p11_discriminates,
            trace_selects_subtracted,
            flag_for_review: !p11_discriminates,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n: usize,
    pub t: f64,
    pub variance: f64,
    pub error: f64,
    /// Var_n(t) - Var_n(0); exactly zero on the t = 0 row.
    pub delta: f64,
}

/// Var_n[phi_obs; V + t phi_pert / n] over an (n, t) grid.
pub fn perturbation_stability(
    pot: &Potential,
    phi_obs: &TestFunction,
    phi_pert: &TestFunction,
    n_list: &[usize],
    t_list: &[f64],
    beta: u8,
    quad: QuadSpec,
    digits: u32,
) -> Result<Vec<StabilityRow>> {
    if beta != 1 && beta != 2 {
        return Err(Error::Config(format!("beta must be 1 or 2, got {beta}")));
    }
    if let Some(t) = t_list.iter().find(|t| !(t.abs() <= 2.0)) {
        return Err(Error::Config(format!("|t| must be at most 2, got {t}")));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        check_kernel_n(n)?;
        let var_at = |t: f64| -> Result<VarianceEstimate> {
            let p = pot.perturb(phi_pert, t, n)?;
            if beta == 2 {
                let table = kernel_table(&p, n, quad, digits)?;
                let k_max = n + phi_obs.degree();
                match table.precision() {
                    Precision::Double => {
                        let b = evaluate_basis::<f64>(&table, &p, k_max, quad)?;
                        variance_beta2(&b, &table, phi_obs, n)
                    }
                    Precision::DoubleDouble => {
                        let b = evaluate_basis::<DoubleDouble>(&table, &p, k_max, quad)?;
                        variance_beta2(&b, &table, phi_obs, n)
                    }
                }
            } else {
                with_bundle(&p, n, quad, digits, |b| b.variance(phi_obs))
            }
        };
        let base = var_at(0.0)?;
        for &t in t_list {
            let v = if t == 0.0 { base.clone() } else { var_at(t)? };
            rows.push(StabilityRow {
                n,
                t,
                variance: v.value,
                error: v.error,
                delta: v.value - base.value,
            });
        }
    }
    Ok(rows)
}

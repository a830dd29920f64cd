//! Limiting Toeplitz objects of the recurrence near k = n and checks of the
//! finite-n data against them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumData;
use crate::error::{Error, Result};
use crate::kernels::{jacobi_matrix, poly_of_jacobi};
use crate::orthopoly::{psi_at, BasisEvaluation, MMatrix, RecurrenceTable};
use crate::poly::{binomial, cosine_moment, Polynomial};
use crate::potential::{Potential, TestFunction};
use crate::quadrature::fourier_coefficient;
use crate::scalar::Real;

/// Trapezoid points for periodic symbols.
pub const PERIODIC_POINTS: usize = 4096;
/// R_j below this are dropped from the M_k tails.
pub const R_CUTOFF: f64 = 1e-14;
/// Hard limit on the number of R_j computed.
pub const MAX_R_INDEX: usize = 1500;
/// Fourier range kept for the inverse symbol.
pub const P_INV_RANGE: usize = 200;

/// f(J0)_{k,l} for the free Jacobi matrix (zero diagonal, unit off-diagonal):
/// (1/2pi) int f(2cos x) e^{i(k-l)x} dx = sum_m f_m C(m, (m+|k-l|)/2).
pub fn free_jacobi_entry(f: &Polynomial, k: i64, l: i64) -> f64 {
    let d = (k - l).unsigned_abs() as usize;
    f.coeffs()
        .iter()
        .enumerate()
        .filter(|(m, _)| *m >= d && (m + d) % 2 == 0)
        .map(|(m, c)| c * binomial(m, (m + d) / 2))
        .sum()
}

/// c^(alpha) = (1/2pi) int phi'(2cos x) cos^alpha x dx.
pub fn c_alpha(phi: &TestFunction, alpha: u32) -> f64 {
    let d = phi.poly().derivative();
    let scale = 0.5f64.powi(alpha as i32);
    d.coeffs()
        .iter()
        .enumerate()
        .map(|(m, c)| c * scale * cosine_moment(m + alpha as usize))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzData {
    /// R_j for j = 0..r.len(); R_{-j} = R_j.
    pub r: Vec<f64>,
    /// Largest |Im| met in the R_j quadratures.
    pub r_imag_max: f64,
    /// Geometric bound on the dropped part of sum_j |R_j|.
    pub r_tail_bound: f64,
    pub m_minus_inf: f64,
    /// Fourier coefficients of the symbol P(2cos(x/2)) + P(-2cos(x/2)),
    /// l = 0..p.len(), symmetric in l.
    pub p: Vec<f64>,
    pub p_inv: Vec<f64>,
    pub p_coeffs: Polynomial,
}

/// R_j, M_k, M_{-inf}, and the t = 0 symbol of the string-equation
/// linearisation with its inverse.
pub fn toeplitz_limits(p: &Polynomial) -> Result<ToeplitzData> {
    // positivity on [-2, 2]
    let min = (0..=2000)
        .map(|i| p.eval(-2.0 + 4.0 * i as f64 / 2000.0))
        .fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        let at = (0..=2000)
            .map(|i| -2.0 + 4.0 * i as f64 / 2000.0)
            .min_by(|a, b| p.eval(*a).total_cmp(&p.eval(*b)))
            .unwrap_or(0.0);
        return Err(Error::OneCut { at, value: min });
    }
    let inv = |x: f64| 1.0 / p.eval(2.0 * x.cos());
    let mut r = Vec::new();
    let mut r_imag_max: f64 = 0.0;
    let mut small_run = 0;
    for j in 0..MAX_R_INDEX {
        let (re, im) = fourier_coefficient(inv, j as i64, PERIODIC_POINTS);
        r_imag_max = r_imag_max.max(im.abs());
        r.push(re);
        small_run = if re.abs() < R_CUTOFF {
            small_run + 1
        } else {
            0
        };
        if small_run >= 4 {
            break;
        }
    }
    while r.len() > 1 && r[r.len() - 1].abs() < R_CUTOFF {
        r.pop();
    }
    let r_tail_bound = geometric_tail(&r);
    let m_minus_inf = 2.0 * (r[0] + 2.0 * r[1..].iter().sum::<f64>());

    let even = |x: f64| p.eval(2.0 * (x / 2.0).cos()) + p.eval(-2.0 * (x / 2.0).cos());
    let p_l: Vec<f64> = (0..=p.degree() / 2 + 1)
        .map(|l| fourier_coefficient(even, l as i64, PERIODIC_POINTS).0)
        .collect();
    let p_inv: Vec<f64> = (0..=P_INV_RANGE)
        .map(|l| fourier_coefficient(|x| 1.0 / even(x), l as i64, PERIODIC_POINTS).0)
        .collect();
    Ok(ToeplitzData {
        r,
        r_imag_max,
        r_tail_bound,
        m_minus_inf,
        p: p_l,
        p_inv,
        p_coeffs: p.clone(),
    })
}

fn geometric_tail(r: &[f64]) -> f64 {
    let nz: Vec<f64> = r.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    if nz.len() < 2 {
        return nz.last().copied().unwrap_or(0.0) * 1e-16;
    }
    let (a, b) = (nz[nz.len() - 2], nz[nz.len() - 1]);
    let q = (b / a).min(0.999);
    2.0 * b * q / (1.0 - q)
}

impl ToeplitzData {
    pub fn r_at(&self, j: i64) -> f64 {
        self.r
            .get(j.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// M_k = (1 + (-1)^k) sum_{j>=k} R_j.
    pub fn m_k(&self, k: i64) -> f64 {
        if k.rem_euclid(2) == 1 {
            return 0.0;
        }
        let jmax = self.r.len() as i64 - 1;
        if k > jmax {
            return 0.0;
        }
        let lo = k.max(-jmax);
        2.0 * (lo..=jmax).map(|j| self.r_at(j)).sum::<f64>()
    }

    /// Limit of M_{n-j, n-k} in the form that matches the computed matrix:
    /// M_{j-k+1} - (1/2)(1 + (-1)^j) M_{-inf} when j - k is odd, 0 otherwise.
    pub fn m_star(&self, j: i64, k: i64) -> f64 {
        if (j - k).rem_euclid(2) == 0 {
            return 0.0;
        }
        self.m_k(j - k + 1)
            - if j.rem_euclid(2) == 0 {
                self.m_minus_inf
            } else {
                0.0
            }
    }

    /// The same limit with the index order M_{k-j+1} as printed.
    pub fn m_star_printed(&self, j: i64, k: i64) -> f64 {
        self.m_k(k - j + 1)
            - if j.rem_euclid(2) == 0 {
                self.m_minus_inf
            } else {
                0.0
            }
    }

    pub fn p_at(&self, l: i64) -> f64 {
        self.p
            .get(l.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn p_inv_at(&self, l: i64) -> f64 {
        self.p_inv
            .get(l.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// max_{|m| <= m_max} |sum_l P_l P^{-1}_{m-l} - delta_{m0}|.
    pub fn symbol_inverse_residual(&self, m_max: i64) -> f64 {
        let lp = self.p.len() as i64;
        (-m_max..=m_max)
            .map(|m| {
                let s: f64 = (-lp..=lp)
                    .map(|l| self.p_at(l) * self.p_inv_at(m - l))
                    .sum();
                (s - if m == 0 { 1.0 } else { 0.0 }).abs()
            })
            .fold(0.0, f64::max)
    }

    /// sum_{|l| > m} |P^{-1}_l|.
    pub fn p_inv_tail(&self, m: usize) -> f64 {
        2.0 * self.p_inv.iter().skip(m + 1).map(|v| v.abs()).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceRow {
    pub j: i64,
    pub jacobi: f64,
    pub diagonal: f64,
    /// J_{n+j} - 1 - (c1 t + j) / (2 P(0) n)
    pub j_printed: f64,
    /// J_{n+j} - 1 - (j + 1 - c1 t) / (2 P(2) n)
    pub j_corrected: f64,
    /// q_{n+j} - c0 t / (2 P(0) n)
    pub q_printed: f64,
    /// q_{n+j} + c0 t / (2 P(2) n)
    pub q_corrected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCheck {
    pub n: usize,
    pub t: f64,
    pub c0: f64,
    pub c1: f64,
    pub p0: f64,
    pub p2: f64,
    pub rows: Vec<RecurrenceRow>,
    pub max_j_printed: f64,
    pub max_j_corrected: f64,
    pub max_q_printed: f64,
    pub max_q_corrected: f64,
    /// Least-squares fit n (J_{n+j} - 1) = intercept + slope j.
    pub fitted_intercept: f64,
    pub fitted_slope: f64,
    /// intercept / slope, the index shift implied by the fit.
    pub fitted_offset: Option<f64>,
}

/// Compare J_{n+j}, q_{n+j} for |j| <= sqrt(n) with the Toeplitz limit.
/// `eq` is the equilibrium of the unperturbed V; the table is built for
/// V + t phi / n.
pub fn recurrence_asymptotics_check(
    table: &RecurrenceTable,
    eq: &EquilibriumData,
    phi: &TestFunction,
    t: f64,
) -> RecurrenceCheck {
    let n = table.n;
    let nf = n as f64;
    let c0 = c_alpha(phi, 0);
    let c1 = c_alpha(phi, 1);
    let p0 = eq.p_coeffs.eval(0.0);
    let p2 = eq.p_coeffs.eval(2.0);
    let reach = (nf.sqrt().floor() as i64)
        .min(table.k as i64 - 1 - n as i64)
        .min(n as i64);
    let rows: Vec<RecurrenceRow> = (-reach..=reach)
        .map(|j| {
            let idx = (n as i64 + j) as usize;
            let (jj, qq) = (table.j[idx], table.q[idx]);
            let jf = j as f64;
            RecurrenceRow {
                j,
                jacobi: jj,
                diagonal: qq,
                j_printed: jj - 1.0 - (c1 * t + jf) / (2.0 * p0 * nf),
                j_corrected: jj - 1.0 - (jf + 1.0 - c1 * t) / (2.0 * p2 * nf),
                q_printed: qq - c0 * t / (2.0 * p0 * nf),
                q_corrected: qq + c0 * t / (2.0 * p2 * nf),
            }
        })
        .collect();
    let maxabs = |f: fn(&RecurrenceRow) -> f64| rows.iter().map(|r| f(r).abs()).fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|r| (r.j as f64, nf * (r.jacobi - 1.0)))
        .unzip();
    let (intercept, slope) = linear_fit(&xs, &ys);
    RecurrenceCheck {
        n,
        t,
        c0,
        c1,
        p0,
        p2,
        max_j_printed: maxabs(|r| r.j_printed),
        max_j_corrected: maxabs(|r| r.j_corrected),
        max_q_printed: maxabs(|r| r.q_printed),
        max_q_corrected: maxabs(|r| r.q_corrected),
        rows,
        fitted_intercept: intercept,
        fitted_slope: slope,
        fitted_offset: (slope != 0.0).then(|| intercept / slope),
    }
}

/// Ordinary least squares y = a + b x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    if x.len() < 2 {
        return (y.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonDifference {
    pub n: usize,
    pub j: i64,
    /// n ||residual||_2 over the working interval.
    pub scaled_norm: f64,
    /// ||residual part of the wrong parity||_2 (even potentials only).
    pub wrong_parity_norm: Option<f64>,
}

/// Residual of eps psi_{n+j-1} - eps psi_{n+j+1} = (2/n) sum_k R_{j-k} psi_{n+k}
/// with the sum over every index the basis holds.
pub fn epsilon_difference_check<T: Real>(
    basis: &BasisEvaluation<T>,
    tdata: &ToeplitzData,
    n: usize,
    j: i64,
) -> Result<EpsilonDifference> {
    let lo = n as i64 + j - 1;
    let hi = n as i64 + j + 1;
    let bound = (n as f64).powf(0.2) + 2.0;
    if lo < 0 || hi as usize > basis.k_max() || j.abs() as f64 > bound {
        return Err(Error::Range(format!(
            "epsilon difference at n = {n}, j = {j} needs psi_{lo}..psi_{hi}, |j| <= {bound:.2}"
        )));
    }
    let m = basis.rule.len();
    let two_n = 2.0 / n as f64;
    let mut res: Vec<f64> = (0..m)
        .map(|i| (basis.eps_psi[lo as usize][i] - basis.eps_psi[hi as usize][i]).as_f64())
        .collect();
    for idx in 0..=basis.k_max() {
        let k = idx as i64 - n as i64;
        let c = tdata.r_at(j - k);
        if c == 0.0 {
            continue;
        }
        for (r, p) in res.iter_mut().zip(&basis.psi[idx]) {
            *r -= two_n * c * p.as_f64();
        }
    }
    let rule = basis.rule.to_f64();
    let sq: Vec<f64> = res.iter().map(|v| v * v).collect();
    let norm = rule.integrate(&sq).sqrt();
    let wrong_parity_norm = if basis.even {
        // nodes of the symmetric rule pair up as i <-> m - 1 - i
        let expected = if (n as i64 + j).rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        };
        let w: Vec<f64> = (0..m)
            .map(|i| {
                let v = 0.5 * (res[i] - expected * res[m - 1 - i]);
                v * v
            })
            .collect();
        Some(rule.integrate(&w).sqrt())
    } else {
        None
    };
    Ok(EpsilonDifference {
        n,
        j,
        scaled_norm: n as f64 * norm,
        wrong_parity_norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringResidual {
    /// max_k |V_t'(J)_{k,k}|
    pub diagonal: f64,
    /// max_k |J_k V_t'(J)_{k,k+1} - (k+1)/n|
    pub off_diagonal: f64,
    /// Last index included.
    pub k_last: usize,
    /// Per-k residual pairs, k = 0..=k_last.
    pub per_k: Vec<(f64, f64)>,
    /// Per-k residuals predicted by the walls of the working interval [a, b]:
    /// -[psi_k^2]_a^b / n and -J_k [psi_k psi_{k+1}]_a^b / n.
    pub boundary: Vec<(f64, f64)>,
    /// max_k of the residuals minus their boundary terms.
    pub corrected: f64,
}

impl StringResidual {
    /// Maxima restricted to k <= k_max.
    pub fn up_to(&self, k_max: usize) -> (f64, f64) {
        self.per_k
            .iter()
            .take(k_max + 1)
            .fold((0.0, 0.0), |(a, b), (x, y)| {
                (f64::max(a, x.abs()), f64::max(b, y.abs()))
            })
    }
}

/// String equations V_t'(J)_{k,k} = 0 and J_k V_t'(J)_{k,k+1} = (k+1)/n for
/// the (possibly perturbed) potential the table was built for, on every k
/// whose band fits inside the truncated Jacobi matrix.
///
/// On [a, b] integration by parts leaves wall terms, which are reported
/// separately: they are e^{-cn} small for k near n but dominate once k >> n.
pub fn string_equation_residual(
    table: &RecurrenceTable,
    pot: &Potential,
) -> Result<StringResidual> {
    let dv = pot.effective_derivative();
    let deg = dv.degree();
    let size = table.k;
    if size < deg + 2 {
        return Err(Error::Range(format!(
            "{size} coefficients cannot hold V' of degree {deg}"
        )));
    }
    let k_last = size - deg - 1;
    let vj = poly_of_jacobi::<f64>(dv.coeffs(), &jacobi_matrix(table, size));
    let nf = table.n as f64;
    let per_k: Vec<(f64, f64)> = (0..=k_last)
        .map(|k| {
            let diag = vj.at(k, k);
            let off = table.j[k] * vj.at(k, k + 1) - (k + 1) as f64 / nf;
            (diag, off)
        })
        .collect();
    let (diagonal, off_diagonal) = per_k.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (f64::max(a, x.abs()), f64::max(b, y.abs()))
    });
    let (a, b) = table.interval;
    let pa = psi_at::<f64>(table, pot, a, k_last + 1);
    let pb = psi_at::<f64>(table, pot, b, k_last + 1);
    let boundary: Vec<(f64, f64)> = (0..=k_last)
        .map(|k| {
            let sq = pb[k] * pb[k] - pa[k] * pa[k];
            let cross = pb[k] * pb[k + 1] - pa[k] * pa[k + 1];
            (-sq / nf, -table.j[k] * cross / nf)
        })
        .collect();
    let corrected = per_k
        .iter()
        .zip(&boundary)
        .map(|((d, o), (bd, bo))| (d - bd).abs().max((o - bo).abs()))
        .fold(0.0, f64::max);
    Ok(StringResidual {
        diagonal,
        off_diagonal,
        k_last,
        per_k,
        boundary,
        corrected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLimitEntry {
    pub j: i64,
    pub k: i64,
    pub computed: f64,
    pub limit: f64,
    pub printed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLimitReport {
    pub n: usize,
    pub band: usize,
    pub entries: Vec<MLimitEntry>,
    pub max_deviation: f64,
    pub max_deviation_printed: f64,
    /// Computed M and the limit vanish together on same-parity pairs.
    pub parity_ok: bool,
}

/// Compare M_{n-j, n-k} for |j|, |k| <= band with its Toeplitz limit.
/// `mmat` must cover indices n - band ..= n + band.
pub fn m_matrix_limit_check<T: Real>(
    mmat: &MMatrix<T>,
    tdata: &ToeplitzData,
    n: usize,
    band: usize,
) -> Result<MLimitReport> {
    if band > 6 {
        return Err(Error::Range(format!("band must be at most 6, got {band}")));
    }
    if n < band || mmat.lo > n - band || mmat.hi < n + band + 1 {
        return Err(Error::Range(format!(
            "M block [{}, {}) does not cover n +- {band}",
            mmat.lo, mmat.hi
        )));
    }
    let b = band as i64;
    let mut entries = Vec::new();
    let mut parity_ok = true;
    for j in -b..=b {
        for k in -b..=b {
            let computed = mmat
                .get((n as i64 - j) as usize, (n as i64 - k) as usize)
                .as_f64();
            let limit = tdata.m_star(j, k);
            if (j - k).rem_euclid(2) == 0 && (computed.abs() > 1e-10 || limit != 0.0) {
                parity_ok = false;
            }
            entries.push(MLimitEntry {
                j,
                k,
                computed,
                limit,
                printed: tdata.m_star_printed(j, k),
            });
        }
    }
    let max_deviation = entries
        .iter()
        .map(|e| (e.computed - e.limit).abs())
        .fold(0.0, f64::max);
    let max_deviation_printed = entries
        .iter()
        .map(|e| (e.computed - e.printed).abs())
        .fold(0.0, f64::max);
    Ok(MLimitReport {
        n,
        band,
        entries,
        max_deviation,
        max_deviation_printed,
        parity_ok,
    })
}

/// Smallest C with |J_{n+k} - 1|, |q_{n+k}| <= C (n^{-1/4} log^{1/2} n + (|k|/n)^{1/2})
/// over the indices the table holds with |k| <= n / 2.
pub fn envelope_constant(table: &RecurrenceTable) -> f64 {
    let n = table.n as i64;
    let nf = n as f64;
    let base = nf.powf(-0.25) * nf.ln().sqrt();
    let hi = (table.k as i64 - 1 - n).min(n / 2);
    (-(n / 2)..=hi)
        .map(|k| {
            let idx = (n + k) as usize;
            let dev = (table.j[idx] - 1.0).abs().max(table.q[idx].abs());
            dev / (base + (k.abs() as f64 / nf).sqrt())
        })
        .fold(0.0, f64::max)
}

/// (1/2pi) int (2cos x)^m e^{idx} dx, used by tests as an independent check.
#[doc(hidden)]
pub fn trig_moment_quadrature(m: usize, d: i64) -> f64 {
    fourier_coefficient(|x| (2.0 * x.cos()).powi(m as i32), d, PERIODIC_POINTS).0
}

#[doc(hidden)]
pub fn closed_form_r0(a: f64, b: f64) -> f64 {
    // (1/2pi) int dx / (a + b cos x) = 1 / sqrt(a^2 - b^2)
    2.0 * PI / (a * a - b * b).sqrt() / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{compute_density, compute_p};
    use crate::orthopoly::{build_recurrence, evaluate_basis, max_coefficients, overlap_block};
    use crate::quadrature::QuadSpec;
    use crate::DoubleDouble;
    use proptest::prelude::*;

    #[test]
    fn free_jacobi_examples() {
        let lam = Polynomial::new(vec![0.0, 1.0]);
        assert_eq!(free_jacobi_entry(&lam, 3, 4), 1.0);
        assert_eq!(free_jacobi_entry(&lam, 3, 3), 0.0);
        let sq = Polynomial::new(vec![0.0, 0.0, 1.0]);
        assert_eq!(free_jacobi_entry(&sq, 5, 5), 2.0);
        let phi = TestFunction::monomial(2);
        assert!(c_alpha(&phi, 0).abs() < 1e-15);
        assert!((c_alpha(&phi, 1) - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn free_jacobi_matches_quadrature(m in 0usize..10, d in -10i64..10) {
            let f = Polynomial::monomial(m, 1.0);
            let exact = free_jacobi_entry(&f, d, 0);
            prop_assert!((exact - trig_moment_quadrature(m, d)).abs() < 1e-9 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn constant_symbol() {
        let t = toeplitz_limits(&Polynomial::new(vec![1.0])).unwrap();
        assert!((t.r_at(0) - 1.0).abs() < 1e-14);
        assert!(t.r_at(3).abs() < 1e-14);
        assert!((t.p_at(0) - 2.0).abs() < 1e-14);
        assert!((t.p_inv_at(0) - 0.5).abs() < 1e-14);
        assert!((t.m_minus_inf - 2.0).abs() < 1e-13);
        assert!((t.m_k(0) - 2.0).abs() < 1e-13);
        assert!((t.m_k(-4) - 2.0).abs() < 1e-13);
        assert_eq!(t.m_k(-3), 0.0);
        assert!(t.m_k(2).abs() < 1e-13);
    }

    #[test]
    fn quartic_symbol() {
        let pot = Potential::quartic(0.7, 0.1, 1.0).unwrap();
        let p = compute_p(&pot);
        let t = toeplitz_limits(&p).unwrap();
        assert!((t.r_at(0) - closed_form_r0(1.1, 0.2)).abs() < 1e-12);
        assert!((t.r_at(0) - 0.924_500_9).abs() < 1e-6);
        assert!(t.r_at(1).abs() < 1e-15);
        assert!((t.p_at(0) - 2.2).abs() < 1e-12);
        assert!((t.p_at(1) - 0.2).abs() < 1e-12);
        assert!((t.p_inv_at(0) - 0.5 * closed_form_r0(1.1, 0.2)).abs() < 1e-12);
        assert!(t.symbol_inverse_residual(10) < 1e-8);
        let full: f64 = t.r[0] + 2.0 * t.r[1..].iter().sum::<f64>();
        assert!((t.m_minus_inf - 2.0 * full).abs() < 1e-10);
        assert!(t.r_imag_max < 1e-12);
        // inverse symbol tail decays faster than M^{-7/2}
        let tails: Vec<f64> = [5, 10, 20].iter().map(|&m| t.p_inv_tail(m)).collect();
        assert!(tails[1] / tails[0] < 2f64.powf(-3.5));
        assert!(tails[2] / tails[1] < 2f64.powf(-3.5));
    }

    #[test]
    fn nonpositive_symbol_rejected() {
        let p = Polynomial::new(vec![-0.5, 0.0, 1.5]);
        assert!(matches!(toeplitz_limits(&p), Err(Error::OneCut { .. })));
    }

    #[test]
    fn hermite_recurrence_check() {
        let n = 100;
        let pot = Potential::gaussian();
        let table =
            build_recurrence(&pot, n, max_coefficients(n), QuadSpec::default(), 32).unwrap();
        let eq = compute_density(&pot).unwrap();
        let c = recurrence_asymptotics_check(&table, &eq, &TestFunction::monomial(2), 0.0);
        assert_eq!(c.rows.len(), 21);
        assert!(c.max_j_printed <= 1.1 / n as f64);
        // what remains is the second-order term (j+1)^2 / (8 n^2)
        assert!(c.max_j_corrected < 0.2 / n as f64, "{}", c.max_j_corrected);
        assert!(c.max_q_printed <= 1e-9);
        assert!(
            (c.fitted_offset.unwrap() - 1.0).abs() < 0.1,
            "{:?}",
            c.fitted_offset
        );
    }

    #[test]
    fn perturbed_gaussian_sign() {
        // V + t lambda^2 / n has J_k = sqrt((k+1)/(n+2t))
        let n = 60;
        let t = 1.5;
        let base = Potential::gaussian();
        let pot = base.perturb(&TestFunction::monomial(2), t, n).unwrap();
        let table =
            build_recurrence(&pot, n, max_coefficients(n), QuadSpec::default(), 32).unwrap();
        let eq = compute_density(&base).unwrap();
        let c = recurrence_asymptotics_check(&table, &eq, &TestFunction::monomial(2), t);
        assert!(c.max_j_corrected < 0.2 / n as f64, "{c:?}");
        assert!(
            (c.fitted_offset.unwrap() - (1.0 - 2.0 * t)).abs() < 0.15,
            "{:?}",
            c.fitted_offset
        );
        assert!(c.max_j_printed > 2.0 / n as f64);
    }

    #[test]
    fn quartic_recurrence_ladder() {
        let pot = Potential::quartic(0.7, 0.1, 1.0).unwrap();
        let eq = compute_density(&pot).unwrap();
        let at = |n: usize| {
            let table =
                build_recurrence(&pot, n, max_coefficients(n), QuadSpec::default(), 32).unwrap();
            let c = recurrence_asymptotics_check(&table, &eq, &TestFunction::monomial(2), 0.0);
            let row = c.rows.iter().find(|r| r.j == 0).unwrap().clone();
            (row, c)
        };
        let (r40, c40) = at(40);
        let (r80, c80) = at(80);
        assert!(
            r40.j_corrected.abs() / r80.j_corrected.abs() >= 1.5,
            "{r40:?} {r80:?}"
        );
        assert!(c40.max_q_printed < 1e-9 && c80.max_q_printed < 1e-9);
        // slope 1/(2 P(2)) rather than 1/(2 P(0))
        assert!(
            (c80.fitted_slope - 1.0 / (2.0 * c80.p2)).abs() < 0.05,
            "{c80:?}"
        );
    }

    #[test]
    fn string_equations() {
        let n = 30;
        let t = build_recurrence(&Potential::gaussian(), n, 40, QuadSpec::default(), 32).unwrap();
        let s = string_equation_residual(&t, &Potential::gaussian()).unwrap();
        assert!(s.diagonal < 1e-9 && s.off_diagonal < 1e-9, "{s:?}");

        let pot = Potential::quartic(0.7, 0.1, 1.0).unwrap();
        let t = build_recurrence(&pot, 40, max_coefficients(40), QuadSpec::default(), 32).unwrap();
        let s = string_equation_residual(&t, &pot).unwrap();
        let (d, o) = s.up_to(35);
        assert!(d <= 1e-6 && o <= 1e-6, "{d} {o}");

        // at small n the walls take over for k >> n, and account for all of it
        let t = build_recurrence(&Potential::gaussian(), 12, max_coefficients(12), QuadSpec::default(), 32).unwrap();
        let s = string_equation_residual(&t, &Potential::gaussian()).unwrap();
        assert!(s.off_diagonal > 1e-3, "{}", s.off_diagonal);
        assert!(s.corrected < 1e-12, "{}", s.corrected);

        let mut bad = t.clone();
        bad.j[5] += 1e-3;
        let s = string_equation_residual(&bad, &pot).unwrap();
        assert!(s.diagonal >= 1e-4 || s.off_diagonal >= 1e-4);
        assert!(s.up_to(35).0.max(s.up_to(35).1) >= 1e-4);
    }

    fn gaussian_basis(n: usize) -> BasisEvaluation<DoubleDouble> {
        let pot = Potential::gaussian();
        let t = build_recurrence(&pot, n, n + 16, QuadSpec::default(), 32).unwrap();
        evaluate_basis::<DoubleDouble>(&t, &pot, n + 15, QuadSpec::default()).unwrap()
    }

    /// For the Hermite weight psi_k = (n/2)(J_{k-1} eps psi_{k-1} - J_k eps psi_{k+1})
    /// up to boundary terms, so the residual is
    /// (1 - J_{k-1}) eps psi_{k-1} - (1 - J_k) eps psi_{k+1}, k = n + j.
    fn hermite_eps_residual(n: usize, j: i64) -> f64 {
        let k = (n as i64 + j) as usize;
        let a = 1.0 - ((k as f64) / n as f64).sqrt();
        let b = 1.0 - ((k + 1) as f64 / n as f64).sqrt();
        let basis = gaussian_basis(n);
        let rule = basis.rule.to_f64();
        let r: Vec<f64> = (0..rule.len())
            .map(|i| {
                let v = a * basis.eps_psi[k - 1][i].as_f64() - b * basis.eps_psi[k + 1][i].as_f64();
                v * v
            })
            .collect();
        n as f64 * rule.integrate(&r).sqrt()
    }

    #[test]
    fn epsilon_difference_hermite() {
        let td = toeplitz_limits(&Polynomial::new(vec![1.0])).unwrap();
        let e30 = epsilon_difference_check(&gaussian_basis(30), &td, 30, 0).unwrap();
        let e60 = epsilon_difference_check(&gaussian_basis(60), &td, 60, 0).unwrap();
        assert!(e60.scaled_norm < e30.scaled_norm);
        for (e, n) in [(&e30, 30), (&e60, 60)] {
            let oracle = hermite_eps_residual(n, 0);
            assert!(
                (e.scaled_norm - oracle).abs() < 1e-6 * oracle,
                "{e:?} {oracle}"
            );
        }
        assert!(e60.scaled_norm < 0.13, "{e60:?}");
        assert!(e60.wrong_parity_norm.unwrap() <= 1e-9);
        let e = epsilon_difference_check(&gaussian_basis(60), &td, 60, -2).unwrap();
        assert!((e.scaled_norm - hermite_eps_residual(60, -2)).abs() < 1e-6 * e.scaled_norm);
        assert!(epsilon_difference_check(&gaussian_basis(30), &td, 30, 5).is_err());
    }

    #[test]
    fn m_limit_hermite() {
        let td = toeplitz_limits(&Polynomial::new(vec![1.0])).unwrap();
        let dev = |n: usize| {
            let b = gaussian_basis(n);
            let m = overlap_block(&b, n - 4, n + 5).unwrap();
            m_matrix_limit_check(&m, &td, n, 4).unwrap()
        };
        let r40 = dev(40);
        let r80 = dev(80);
        assert!(r40.parity_ok && r80.parity_ok);
        assert!(r80.max_deviation < r40.max_deviation);
        assert!(r80.max_deviation <= 0.25, "{}", r80.max_deviation);
        assert!(r80.max_deviation_printed > 1.0);
        let e = r80.entries.iter().find(|e| e.j == 0 && e.k == 1).unwrap();
        assert!((e.computed - e.limit).abs() <= 0.25);
    }

    #[test]
    fn envelope_is_moderate() {
        for pot in [
            Potential::gaussian(),
            Potential::quartic(0.7, 0.1, 1.0).unwrap(),
        ] {
            for n in [40, 80] {
                let t = build_recurrence(&pot, n, max_coefficients(n), QuadSpec::default(), 32)
                    .unwrap();
                let c = envelope_constant(&t);
                assert!(c < 10.0, "{c}");
            }
        }
    }
}

//! Orthonormal functions psi_k = p_k e^{-nV/2} / sqrt(Z) for the weight
//! e^{-nV} on the working interval, their three-term recurrence, the
//! epsilon transform and the overlap matrix M_{jl} = n (psi_j, eps psi_l).

use serde::{Deserialize, Serialize};

use crate::dd::DoubleDouble;
use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::quadrature::{CompositeRule, QuadSpec};
use crate::scalar::Real;

/// Rescaling threshold of the forward recurrence.
const GUARD: f64 = 1e100;
const MAX_GUARD_TRIGGERS: usize = 1_000_000;
pub const MAX_KERNEL_N: usize = 128;
pub const GRAM_TOLERANCE: f64 = 1e-9;

/// Working precision selected from a requested number of decimal digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Double,
    DoubleDouble,
}

impl Precision {
    pub fn from_digits(digits: u32) -> Result<Self> {
        match digits {
            0 => Err(Error::Config("precision must be at least 1 digit".into())),
            1..=16 => Ok(Precision::Double),
            17..=32 => Ok(Precision::DoubleDouble),
            _ => Err(Error::Config(format!(
                "precision of {digits} digits not available (max 32, double-double)"
            ))),
        }
    }

    pub fn digits(self) -> u32 {
        match self {
            Precision::Double => f64::DIGITS,
            Precision::DoubleDouble => <DoubleDouble as Real>::DIGITS,
        }
    }
}

/// Largest number of recurrence coefficients accepted for ensemble size n:
/// n + max(ceil(n^{4/5}), 16).
pub fn max_coefficients(n: usize) -> usize {
    n + ((n as f64).powf(0.8).ceil() as usize).max(16)
}

/// Jacobi coefficients of x psi_k = J_k psi_{k+1} + q_k psi_k + J_{k-1} psi_{k-1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceTable {
    pub n: usize,
    pub t: f64,
    pub j: Vec<f64>,
    pub q: Vec<f64>,
    pub k: usize,
    pub precision_digits: u32,
    /// max |difference| to a rebuild on twice as many panels.
    pub error_estimate: f64,
    /// log of Z = int e^{-n V_t} over the working interval.
    pub log_z: f64,
    pub quad: QuadSpec,
    pub interval: (f64, f64),
}

impl RecurrenceTable {
    pub fn precision(&self) -> Precision {
        Precision::from_digits(self.precision_digits).expect("validated at construction")
    }
}

struct Stieltjes<T> {
    j: Vec<T>,
    q: Vec<T>,
    log_z: f64,
}

/// Discretised Stieltjes procedure in Lanczos form with full
/// reorthogonalisation: u_k = psi_k sqrt(w) on the composite rule.
fn stieltjes<T: Real>(pot: &Potential, n: usize, k: usize, spec: QuadSpec) -> Result<Stieltjes<T>> {
    let (lo, hi) = pot.interval();
    let rule = CompositeRule::<T>::new(T::of(lo), T::of(hi), spec);
    let nf = T::of_usize(n);
    let nv: Vec<T> = rule.nodes.iter().map(|&x| nf * pot.value(x)).collect();
    let vmin = nv.iter().copied().fold(nv[0], |a, b| a.min(b));
    let mut u0: Vec<T> = rule
        .weights
        .iter()
        .zip(&nv)
        .map(|(&w, &v)| w * (vmin - v).exp())
        .collect();
    let z: T = u0.iter().copied().sum();
    let log_z = z.ln().as_f64() - vmin.as_f64();
    let zs = z.sqrt();
    for v in u0.iter_mut() {
        *v = v.sqrt() / zs;
    }

    let x = &rule.nodes;
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(k + 1);
    basis.push(u0);
    let mut j = Vec::with_capacity(k);
    let mut q = Vec::with_capacity(k);
    for step in 0..k {
        let uk = &basis[step];
        let qk: T = x.iter().zip(uk).map(|(&xi, &ui)| xi * ui * ui).sum();
        let mut r: Vec<T> = x.iter().zip(uk).map(|(&xi, &ui)| (xi - qk) * ui).collect();
        let scale: T = r.iter().map(|&v| v * v).sum::<T>() + qk * qk;
        if step > 0 {
            let jm: T = j[step - 1];
            for (ri, &pi) in r.iter_mut().zip(&basis[step - 1]) {
                *ri -= jm * pi;
            }
        }
        // one reorthogonalisation sweep against every previous vector
        for prev in &basis {
            let c: T = r.iter().zip(prev).map(|(&a, &b)| a * b).sum();
            for (ri, &pi) in r.iter_mut().zip(prev) {
                *ri -= c * pi;
            }
        }
        let norm_sq: T = r.iter().map(|&v| v * v).sum();
        if !(norm_sq > T::of(100.0) * T::epsilon() * scale) {
            return Err(Error::Precision {
                k: step,
                norm_sq: norm_sq.as_f64(),
            });
        }
        let jk = norm_sq.sqrt();
        for ri in r.iter_mut() {
            *ri = *ri / jk;
        }
        j.push(jk);
        q.push(qk);
        basis.push(r);
    }
    Ok(Stieltjes { j, q, log_z })
}

/// Recurrence coefficients J_0..J_{K-1}, q_0..q_{K-1} of the weight e^{-n V_t}
/// on the working interval of `pot`.
pub fn build_recurrence(
    pot: &Potential,
    n: usize,
    k: usize,
    quad: QuadSpec,
    precision_digits: u32,
) -> Result<RecurrenceTable> {
    if n < 2 || n % 2 == 1 {
        return Err(Error::Config(format!(
            "n must be even and at least 2, got {n}"
        )));
    }
    if k == 0 {
        return Err(Error::Config(
            "need at least one recurrence coefficient".into(),
        ));
    }
    let cap = max_coefficients(n);
    if k > cap {
        return Err(Error::Range(format!(
            "K = {k} exceeds n + max(ceil(n^(4/5)), 16) = {cap}"
        )));
    }
    let precision = Precision::from_digits(precision_digits)?;
    if n >= 30 && precision_digits < 30 {
        return Err(Error::Config(format!(
            "n = {n} needs at least 30 digits of working precision, got {precision_digits}"
        )));
    }
    let run = |spec: QuadSpec| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        Ok(match precision {
            Precision::Double => {
                let s = stieltjes::<f64>(pot, n, k, spec)?;
                (s.j, s.q, s.log_z)
            }
            Precision::DoubleDouble => {
                let s = stieltjes::<DoubleDouble>(pot, n, k, spec)?;
                let f = |v: Vec<DoubleDouble>| v.into_iter().map(|x| x.as_f64()).collect();
                (f(s.j), f(s.q), s.log_z)
            }
        })
    };
    let (j, q, log_z) = run(quad)?;
    let (j2, q2, _) = run(quad.refined())?;
    let error_estimate = j
        .iter()
        .zip(&j2)
        .chain(q.iter().zip(&q2))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(RecurrenceTable {
        n,
        t: pot.t(),
        j,
        q,
        k,
        precision_digits: precision.digits(),
        error_estimate,
        log_z,
        quad,
        interval: pot.interval(),
    })
}

/// psi_0..psi_{k_max} (and optionally their derivatives) at one point by the
/// forward recurrence on p_k = psi_k / psi_0, rescaled whenever |p_k|
/// exceeds 1e100. Returns the number of rescalings.
fn forward<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    x: T,
    k_max: usize,
    psi: &mut [T],
    mut dpsi: Option<&mut [T]>,
) -> usize {
    let nf = T::of_usize(table.n);
    let log_psi0 = -(nf * pot.value(x) + T::of(table.log_z)) * T::half();
    let mut p_prev = T::zero();
    let mut p = T::one();
    let mut d_prev = T::zero();
    let mut d = T::zero();
    let mut scale_exp: i32 = 0;
    let mut triggers = 0;
    let mut ps = Vec::with_capacity(k_max + 1);
    let mut ds = Vec::with_capacity(k_max + 1);
    ps.push((p, scale_exp));
    ds.push(d);
    for k in 0..k_max {
        let jk = T::of(table.j[k]);
        let qk = T::of(table.q[k]);
        let jm = if k > 0 {
            T::of(table.j[k - 1])
        } else {
            T::zero()
        };
        let p_next = ((x - qk) * p - jm * p_prev) / jk;
        let d_next = ((x - qk) * d + p - jm * d_prev) / jk;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
        if p.abs() > T::of(GUARD) || d.abs() > T::of(GUARD) {
            let s = T::of(1.0 / GUARD);
            p *= s;
            p_prev *= s;
            d *= s;
            d_prev *= s;
            scale_exp += 1;
            triggers += 1;
        }
        ps.push((p, scale_exp));
        ds.push(d);
    }
    let ln_guard = GUARD.ln();
    let dv = pot.derivative(x);
    for (k, (&(pk, e), &dk)) in ps.iter().zip(&ds).enumerate() {
        let factor = (log_psi0 + T::of(e as f64 * ln_guard)).exp();
        psi[k] = pk * factor;
        if let Some(out) = dpsi.as_deref_mut() {
            // (p psi_0)' = p' psi_0 - (n/2) V' p psi_0
            out[k] = (dk - nf * T::half() * dv * pk) * factor;
        }
    }
    triggers
}

/// psi_0(x)..psi_{k_max}(x).
pub fn psi_at<T: Real>(table: &RecurrenceTable, pot: &Potential, x: T, k_max: usize) -> Vec<T> {
    assert!(k_max <= table.k, "k_max beyond recurrence table");
    let mut out = vec![T::zero(); k_max + 1];
    forward(table, pot, x, k_max, &mut out, None);
    out
}

/// (psi_k(x), psi_k'(x)) for k = 0..=k_max.
pub fn psi_and_derivative_at<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    x: T,
    k_max: usize,
) -> (Vec<T>, Vec<T>) {
    assert!(k_max <= table.k, "k_max beyond recurrence table");
    let mut v = vec![T::zero(); k_max + 1];
    let mut d = vec![T::zero(); k_max + 1];
    forward(table, pot, x, k_max, &mut v, Some(&mut d));
    (v, d)
}

/// Basis values on the nodes of a composite rule over the working interval.
#[derive(Clone, Debug)]
pub struct BasisEvaluation<T: Real> {
    pub rule: CompositeRule<T>,
    /// psi[k][i] = psi_k(x_i)
    pub psi: Vec<Vec<T>>,
    pub eps_psi: Vec<Vec<T>>,
    /// (1, psi_k) over the working interval.
    pub one_overlaps: Vec<T>,
    pub gram_residual: f64,
    pub guard_triggers: usize,
    pub n: usize,
    pub even: bool,
}

impl<T: Real> BasisEvaluation<T> {
    pub fn k_max(&self) -> usize {
        self.psi.len() - 1
    }

    /// (f, g) by the composite rule.
    pub fn inner(&self, f: &[T], g: &[T]) -> T {
        let mut s = T::zero();
        for ((w, a), b) in self.rule.weights.iter().zip(f).zip(g) {
            s += *w * *a * *b;
        }
        s
    }

    /// (eps psi_k)(x) at an arbitrary point of the working interval.
    pub fn eps_at(&self, k: usize, x: T) -> T {
        self.rule.integrate_to(&self.psi[k], x) - self.one_overlaps[k] * T::half()
    }

    /// max |int psi_j psi_k - delta_jk| over j, k <= k.
    pub fn gram_residual_up_to(&self, k: usize) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..=k {
            for b in 0..=a {
                let g = self.inner(&self.psi[a], &self.psi[b]).as_f64();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// sup |psi_k(x)| over nodes with |x| >= from.
    pub fn tail_sup(&self, k: usize, from: f64) -> f64 {
        self.rule
            .nodes
            .iter()
            .zip(&self.psi[k])
            .filter(|(x, _)| x.as_f64().abs() >= from)
            .map(|(_, v)| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

/// Values of psi_0..psi_{k_max} and eps psi_k on a composite rule over the
/// working interval. The rule is refined (up to twice) until the Gram
/// residual is below 1e-9; the final residual is reported either way.
pub fn evaluate_basis<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    k_max: usize,
    quad: QuadSpec,
) -> Result<BasisEvaluation<T>> {
    if k_max >= table.k {
        return Err(Error::Range(format!(
            "k_max = {k_max} needs more than the {} recurrence coefficients available",
            table.k
        )));
    }
    let mut spec = quad;
    let mut attempt = 0;
    loop {
        let basis = evaluate_on::<T>(table, pot, k_max, spec)?;
        if basis.gram_residual < GRAM_TOLERANCE || attempt == 2 {
            return Ok(basis);
        }
        spec = spec.refined();
        attempt += 1;
    }
}

fn evaluate_on<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    k_max: usize,
    spec: QuadSpec,
) -> Result<BasisEvaluation<T>> {
    let (lo, hi) = pot.interval();
    let rule = CompositeRule::<T>::new(T::of(lo), T::of(hi), spec);
    let m = rule.len();
    let mut psi = vec![vec![T::zero(); m]; k_max + 1];
    let mut column = vec![T::zero(); k_max + 1];
    let mut triggers = 0usize;
    for (i, &x) in rule.nodes.iter().enumerate() {
        triggers += forward(table, pot, x, k_max, &mut column, None);
        if triggers > MAX_GUARD_TRIGGERS {
            return Err(Error::Numeric(format!(
                "recurrence overflow guard triggered more than {MAX_GUARD_TRIGGERS} times"
            )));
        }
        for (k, v) in column.iter().enumerate() {
            psi[k][i] = *v;
        }
    }
    let eps_psi: Vec<Vec<T>> = psi.iter().map(|p| rule.epsilon(p)).collect();
    let one_overlaps: Vec<T> = psi.iter().map(|p| rule.integrate(p)).collect();
    let mut basis = BasisEvaluation {
        rule,
        psi,
        eps_psi,
        one_overlaps,
        gram_residual: 0.0,
        guard_triggers: triggers,
        n: table.n,
        even: pot.is_even(),
    };
    basis.gram_residual = basis.gram_residual_up_to(k_max);
    Ok(basis)
}

/// (eps f)(x_i) = (1/2)[int_{a}^{x_i} f - int_{x_i}^{b} f].
pub fn epsilon_transform<T: Real>(rule: &CompositeRule<T>, f: &[T]) -> Vec<T> {
    rule.epsilon(f)
}

/// Square block of M_{jl} = n (psi_j, eps psi_l) over an index range.
#[derive(Clone, Debug, PartialEq)]
pub struct MMatrix<T> {
    pub lo: usize,
    pub hi: usize,
    pub n: usize,
    /// Row-major (hi - lo)^2 entries.
    pub data: Vec<T>,
}

impl<T: Real> MMatrix<T> {
    pub fn size(&self) -> usize {
        self.hi - self.lo
    }

    pub fn get(&self, j: usize, l: usize) -> T {
        assert!((self.lo..self.hi).contains(&j) && (self.lo..self.hi).contains(&l));
        let s = self.size();
        self.data[(j - self.lo) * s + (l - self.lo)]
    }

    /// Block restricted to [lo, hi).
    pub fn sub(&self, lo: usize, hi: usize) -> Self {
        assert!(lo >= self.lo && hi <= self.hi && lo <= hi);
        let s = hi - lo;
        let mut data = Vec::with_capacity(s * s);
        for j in lo..hi {
            for l in lo..hi {
                data.push(self.get(j, l));
            }
        }
        Self {
            lo,
            hi,
            n: self.n,
            data,
        }
    }
}

/// M over the index range [lo, hi), antisymmetrised with an exactly zero
/// diagonal; same-parity entries are set to zero for even potentials.
pub fn overlap_block<T: Real>(
    basis: &BasisEvaluation<T>,
    lo: usize,
    hi: usize,
) -> Result<MMatrix<T>> {
    if hi == 0 || hi - 1 > basis.k_max() || lo > hi {
        return Err(Error::Range(format!(
            "overlap indices [{lo}, {hi}) exceed the basis (k <= {})",
            basis.k_max()
        )));
    }
    let s = hi - lo;
    let nf = T::of_usize(basis.n);
    let mut data = vec![T::zero(); s * s];
    for a in 0..s {
        for b in 0..a {
            let (j, l) = (lo + a, lo + b);
            if basis.even && (j + l) % 2 == 0 {
                continue;
            }
            let m_jl = basis.inner(&basis.psi[j], &basis.eps_psi[l]);
            let m_lj = basis.inner(&basis.psi[l], &basis.eps_psi[j]);
            let v = nf * (m_jl - m_lj) * T::half();
            data[a * s + b] = v;
            data[b * s + a] = -v;
        }
    }
    Ok(MMatrix {
        lo,
        hi,
        n: basis.n,
        data,
    })
}

/// M over [n - band, n + band).
pub fn overlap_matrix<T: Real>(
    basis: &BasisEvaluation<T>,
    n: usize,
    band: usize,
) -> Result<MMatrix<T>> {
    if band > n {
        return Err(Error::Range(format!("band {band} larger than n = {n}")));
    }
    overlap_block(basis, n - band, n + band)
}

/// Raw (not antisymmetrised, not parity-zeroed) n (psi_j, eps psi_l).
pub fn raw_overlap<T: Real>(basis: &BasisEvaluation<T>, j: usize, l: usize) -> T {
    T::of_usize(basis.n) * basis.inner(&basis.psi[j], &basis.eps_psi[l])
}

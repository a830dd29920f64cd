//! Fluctuations of linear statistics N_n[phi] = sum_j phi(x_j) from samples,
//! normality checks, and the comparison with the kernel variance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::{kernel_table, variance_beta2, with_bundle, VarianceEstimate};
use crate::orthopoly::{evaluate_basis, Precision, MAX_KERNEL_N};
use crate::potential::{Potential, TestFunction};
use crate::quadrature::QuadSpec;
use crate::sampler::{
    sample_log_gas, sample_tridiagonal_gaussian, series_diagnostics, SampleBatch, SamplerConfig,
};
use crate::DoubleDouble;

pub const MIN_ESS: f64 = 100.0;
pub const CENTERING_NOTE: &str =
    "centered by the sample mean; the O(1/ess) bias on the variance is inside the reported SE";
pub const KS_NOTE: &str =
    "KS p-value uses the asymptotic Kolmogorov distribution at the effective sample size with fitted mean and variance, so it is conservative";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticSeries {
    pub phi: TestFunction,
    /// N_n[phi] per configuration, in chain order.
    pub values: Vec<f64>,
    /// values minus their sample mean.
    pub centered: Vec<f64>,
    /// Number of values contributed by each chain.
    pub chain_lengths: Vec<usize>,
}

impl StatisticSeries {
    pub fn chains(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.chain_lengths.len());
        let mut at = 0;
        for &l in &self.chain_lengths {
            out.push(self.values[at..at + l].to_vec());
            at += l;
        }
        out
    }

    /// Effective sample size summed over chains.
    pub fn ess(&self) -> f64 {
        series_diagnostics(&self.chains()).ess
    }
}

pub fn linear_statistic(batch: &SampleBatch, phi: &TestFunction) -> Result<StatisticSeries> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty sample batch".into()));
    }
    let values: Vec<f64> = batch
        .configs()
        .map(|c| c.iter().map(|&x| phi.eval(x)).sum())
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let centered = values.iter().map(|v| v - mean).collect();
    Ok(StatisticSeries {
        phi: phi.clone(),
        values,
        centered,
        chain_lengths: batch.chains.iter().map(|c| c.configs.len()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub draws: usize,
    pub ess: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_se: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    /// |skewness| <= 3 SE and |excess kurtosis| <= 3 SE.
    pub moments_normal: bool,
}

/// Moments with their standard errors and a KS test against the normal law
/// with fitted mean and variance.
pub fn fluctuation_report(series: &StatisticSeries, ess: f64) -> Result<FluctuationReport> {
    if !(ess >= MIN_ESS) {
        return Err(Error::InsufficientData(format!(
            "effective sample size {ess:.1} below {MIN_ESS}"
        )));
    }
    let x = &series.centered;
    let m = x.len() as f64;
    let mean = series.values.iter().sum::<f64>() / m;
    let moment = |p: i32| x.iter().map(|v| v.powi(p)).sum::<f64>() / m;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let variance = m2 * m / (m - 1.0);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let skewness_se = (6.0 / ess).sqrt();
    let kurtosis_se = (24.0 / ess).sqrt();
    let (ks_statistic, ks_pvalue) = ks_normal(x, 0.0, variance.sqrt(), ess);
    Ok(FluctuationReport {
        draws: x.len(),
        ess,
        mean,
        mean_se: (variance / ess).sqrt(),
        variance,
        variance_se: variance * (2.0 / ess).sqrt(),
        skewness,
        skewness_se,
        excess_kurtosis,
        kurtosis_se,
        ks_statistic,
        ks_pvalue,
        moments_normal: skewness.abs() <= 3.0 * skewness_se
            && excess_kurtosis.abs() <= 3.0 * kurtosis_se,
    })
}

/// Kolmogorov survival function Q(l) = 2 sum_k (-1)^{k-1} exp(-2 k^2 l^2).
pub fn kolmogorov_q(l: f64) -> f64 {
    if l < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * l * l).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS distance to N(mu, sigma^2) and its asymptotic p-value at
/// effective size `ne` (with Stephens' small-sample correction).
pub fn ks_normal(x: &[f64], mu: f64, sigma: f64, ne: f64) -> (f64, f64) {
    if !(sigma > 0.0) || x.is_empty() {
        return (1.0, 0.0);
    }
    let norm = Normal::new(mu, sigma).expect("positive sigma");
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = norm.cdf(v);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    let sq = ne.sqrt();
    (d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d))
}

/// Two-sample KS distance and asymptotic p-value at effective sizes (na, nb).
pub fn ks_two_sample(a: &[f64], b: &[f64], na: f64, nb: f64) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (la, lb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / la - j as f64 / lb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub n: usize,
    pub seed: u64,
    pub tau: Option<f64>,
    pub split_rhat: Option<f64>,
    pub diagnostics_unreliable: bool,
    pub fluctuation: FluctuationReport,
    pub kernel_variance: Option<VarianceEstimate>,
    /// (mc - kernel) / mc SE.
    pub discrepancy_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    pub variance: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    /// a in Var_n ~ a + b/n through the two largest n.
    pub value: f64,
    pub se: f64,
    pub slope: f64,
    /// max |Var_n - (a + b/n)| / SE over the other ladder points (0 if none).
    pub fit_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub potential: String,
    pub beta: u8,
    pub phi: TestFunction,
    pub entries: Vec<LadderEntry>,
    pub variance_by_n: Vec<VarianceRow>,
    pub limit_variance_estimate: Option<LimitEstimate>,
    /// |Var_{n_{i+1}} - Var_{n_i}| along the ladder.
    pub cauchy_differences: Vec<f64>,
    pub centering: String,
    pub ks_caveat: String,
}

/// Richardson step in 1/n through the last two rows.
pub fn extrapolate(rows: &[VarianceRow]) -> Option<LimitEstimate> {
    if rows.len() < 2 {
        return None;
    }
    let (r1, r2) = (&rows[rows.len() - 2], &rows[rows.len() - 1]);
    let (n1, n2) = (r1.n as f64, r2.n as f64);
    if n1 == n2 {
        return None;
    }
    let value = (n2 * r2.variance - n1 * r1.variance) / (n2 - n1);
    let slope = (r1.variance - r2.variance) / (1.0 / n1 - 1.0 / n2);
    let se = ((n2 * r2.se).powi(2) + (n1 * r1.se).powi(2)).sqrt() / (n2 - n1).abs();
    let fit_residual = rows[..rows.len() - 2]
        .iter()
        .map(|r| (r.variance - (value + slope / r.n as f64)).abs() / r.se)
        .fold(0.0, f64::max);
    Some(LimitEstimate {
        value,
        se,
        slope,
        fit_residual,
    })
}

/// Assemble a report from per-n entries (sorted by n here).
pub fn assemble_report(
    potential: String,
    beta: u8,
    phi: TestFunction,
    mut entries: Vec<LadderEntry>,
) -> CltReport {
    entries.sort_by_key(|e| e.n);
    let variance_by_n: Vec<VarianceRow> = entries
        .iter()
        .map(|e| VarianceRow {
            n: e.n,
            variance: e.fluctuation.variance,
            se: e.fluctuation.variance_se,
        })
        .collect();
    let cauchy_differences = variance_by_n
        .windows(2)
        .map(|w| (w[1].variance - w[0].variance).abs())
        .collect();
    CltReport {
        potential,
        beta,
        phi,
        limit_variance_estimate: extrapolate(&variance_by_n),
        variance_by_n,
        entries,
        cauchy_differences,
        centering: CENTERING_NOTE.into(),
        ks_caveat: KS_NOTE.into(),
    }
}

/// Sampling budget and ladder of a CLT run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltExperiment {
    pub pot: Potential,
    pub beta: u8,
    pub phis: Vec<TestFunction>,
    pub n_ladder: Vec<usize>,
    pub chains: usize,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub step_size: f64,
    pub master_seed: u64,
    /// Use exact tridiagonal draws (V = x^2/2 only) with chains * (sweeps -
    /// burnin) / thin samples instead of Metropolis.
    pub tridiagonal: bool,
    pub kernel: bool,
    pub quad: QuadSpec,
    pub precision_digits: u32,
}

/// Seed used for ladder entry n.
pub fn ladder_seed(master_seed: u64, n: usize) -> u64 {
    master_seed.wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltOutcome {
    pub reports: Vec<CltReport>,
    /// (n, message) for ladder points that failed; the others are reported.
    pub failures: Vec<(usize, String)>,
}

/// Kernel variance for (pot, n, phi, beta) when the kernel path applies.
pub fn kernel_variance(
    pot: &Potential,
    n: usize,
    phis: &[TestFunction],
    beta: u8,
    quad: QuadSpec,
    digits: u32,
) -> Result<Vec<VarianceEstimate>> {
    if beta == 1 {
        with_bundle(pot, n, quad, digits, |b| {
            phis.iter().map(|p| b.variance(p)).collect()
        })
    } else {
        let table = kernel_table(pot, n, quad, digits)?;
        let k_max = n + phis.iter().map(|p| p.degree()).max().unwrap_or(0);
        match table.precision() {
            Precision::Double => {
                let b = evaluate_basis::<f64>(&table, pot, k_max, quad)?;
                phis.iter()
                    .map(|p| variance_beta2(&b, &table, p, n))
                    .collect()
            }
            Precision::DoubleDouble => {
                let b = evaluate_basis::<DoubleDouble>(&table, pot, k_max, quad)?;
                phis.iter()
                    .map(|p| variance_beta2(&b, &table, p, n))
                    .collect()
            }
        }
    }
}

fn ladder_entry(
    exp: &CltExperiment,
    n: usize,
    batch: &SampleBatch,
    phi: &TestFunction,
    kernel: Option<VarianceEstimate>,
) -> Result<LadderEntry> {
    let series = linear_statistic(batch, phi)?;
    let diag = series_diagnostics(&series.chains());
    let fluctuation = fluctuation_report(&series, diag.ess)?;
    let discrepancy_se = kernel
        .as_ref()
        .map(|k| (fluctuation.variance - k.value) / fluctuation.variance_se);
    Ok(LadderEntry {
        n,
        seed: ladder_seed(exp.master_seed, n),
        tau: diag.tau,
        split_rhat: diag.split_rhat,
        diagnostics_unreliable: diag.unreliable,
        fluctuation,
        kernel_variance: kernel,
        discrepancy_se,
    })
}

/// Sample each n of the ladder, evaluate every phi on the same batch, and
/// attach kernel variances where the kernel path applies (n even, n <= 128).
pub fn clt_experiment(exp: &CltExperiment) -> Result<CltOutcome> {
    if exp.phis.is_empty() || exp.n_ladder.is_empty() {
        return Err(Error::Config(
            "clt experiment needs at least one phi and one n".into(),
        ));
    }
    if exp.tridiagonal && exp.pot.base() != Potential::gaussian().base() {
        return Err(Error::Config(
            "tridiagonal sampling is exact only for V = x^2/2".into(),
        ));
    }
    let mut per_phi: Vec<Vec<LadderEntry>> = vec![Vec::new(); exp.phis.len()];
    let mut failures = Vec::new();
    for &n in &exp.n_ladder {
        let run = || -> Result<Vec<LadderEntry>> {
            let seed = ladder_seed(exp.master_seed, n);
            let batch = if exp.tridiagonal {
                let count =
                    exp.chains * (exp.sweeps - exp.burnin.min(exp.sweeps)) / exp.thin.max(1);
                sample_tridiagonal_gaussian(n, exp.beta, count, seed)?
            } else {
                sample_log_gas(&SamplerConfig {
                    n,
                    beta: exp.beta,
                    pot: exp.pot.clone(),
                    chains: exp.chains,
                    sweeps: exp.sweeps,
                    burnin: exp.burnin,
                    thin: exp.thin,
                    step_size: exp.step_size,
                    master_seed: seed,
                })?
            };
            let kernels: Vec<Option<VarianceEstimate>> =
                if exp.kernel && n % 2 == 0 && n <= MAX_KERNEL_N && n >= 2 {
                    kernel_variance(
                        &exp.pot,
                        n,
                        &exp.phis,
                        exp.beta,
                        exp.quad,
                        exp.precision_digits,
                    )?
                    .into_iter()
                    .map(Some)
                    .collect()
                } else {
                    vec![None; exp.phis.len()]
                };
            exp.phis
                .iter()
                .zip(kernels)
                .map(|(phi, k)| ladder_entry(exp, n, &batch, phi, k))
                .collect()
        };
        match run() {
            Ok(entries) => {
                for (slot, e) in per_phi.iter_mut().zip(entries) {
                    slot.push(e);
                }
            }
            Err(e) => failures.push((n, e.to_string())),
        }
    }
    let reports = exp
        .phis
        .iter()
        .zip(per_phi)
        .map(|(phi, entries)| assemble_report(exp.pot.label(), exp.beta, phi.clone(), entries))
        .collect();
    Ok(CltOutcome { reports, failures })
}

/// Fitted C in |Var[phi + d x]^{1/2} - Var[phi]^{1/2}| <= C |d| over the
/// given perturbation sizes, on one batch.
pub fn lipschitz_constant(batch: &SampleBatch, phi: &TestFunction, deltas: &[f64]) -> Result<f64> {
    let sd = |f: &TestFunction| -> Result<f64> {
        let s = linear_statistic(batch, f)?;
        let m = s.centered.len() as f64;
        Ok((s.centered.iter().map(|v| v * v).sum::<f64>() / (m - 1.0)).sqrt())
    };
    let base = sd(phi)?;
    let mut c: f64 = 0.0;
    for &d in deltas {
        if d == 0.0 {
            continue;
        }
        let shifted = phi.add(&TestFunction::new(vec![0.0, d])?)?;
        c = c.max((sd(&shifted)? - base).abs() / d.abs());
    }
    Ok(c)
}

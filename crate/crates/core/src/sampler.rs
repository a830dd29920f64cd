//! Eigenvalue configurations of the log-gas
//! p(x) ~ prod_{i<j} |x_i - x_j|^beta exp(-(beta n / 2) sum V_t(x_i))
//! on the working interval, by single-site Metropolis or, for V = x^2/2,
//! by exact tridiagonal draws.
//!
//! Chain c uses ChaCha20 seeded with `master_seed` on stream c, so chains are
//! independent of each other and of the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{compute_density, verify_one_cut};
use crate::error::{Error, Result};
use crate::potential::Potential;

/// Sweeps between step-size adjustments during burn-in.
pub const TUNE_INTERVAL: usize = 25;
pub const TARGET_ACCEPTANCE: f64 = 0.4;
/// Fewer draws than this mark diagnostics unreliable.
pub const MIN_DRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub beta: u8,
    pub pot: Potential,
    pub chains: usize,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub step_size: f64,
    pub master_seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.beta != 1 && self.beta != 2 {
            return bad(format!("beta must be 1 or 2, got {}", self.beta));
        }
        if self.chains == 0 || self.thin == 0 {
            return bad("chains and thin must be positive".into());
        }
        if self.burnin == 0 || self.burnin >= self.sweeps {
            return bad(format!(
                "need 0 < burnin < sweeps, got burnin = {} and sweeps = {}",
                self.burnin, self.sweeps
            ));
        }
        if !(self.step_size > 1e-6 && self.step_size < 1.0) {
            return bad(format!(
                "step_size must lie in (1e-6, 1), got {}",
                self.step_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Metropolis,
    Tridiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub chain: u32,
    /// ChaCha20 stream id (equal to the chain index).
    pub stream: u64,
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    /// Step size frozen at the end of burn-in.
    pub step_size: f64,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub n: usize,
    pub beta: u8,
    pub potential: String,
    pub interval: (f64, f64),
    pub source: SampleSource,
    pub master_seed: u64,
    pub chains: Vec<ChainMeta>,
    /// Diagnostics of sum_i x_i.
    pub diagnostics: ChainDiagnostics,
    /// Non-fatal problems (for example a potential failing the one-cut check).
    pub warnings: Vec<String>,
}

/// Recorded configurations of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub chain: u32,
    pub sweeps: Vec<u64>,
    /// Each configuration sorted ascending, length n.
    pub configs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub meta: BatchMeta,
    pub chains: Vec<ChainSamples>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.configs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configurations in chain order.
    pub fn configs(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.chains.iter().flat_map(|c| c.configs.iter())
    }

    /// Per-chain series of sum_i f(x_i).
    pub fn chain_series(&self, f: impl Fn(f64) -> f64 + Copy) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| {
                c.configs
                    .iter()
                    .map(|x| x.iter().map(|&v| f(v)).sum())
                    .collect()
            })
            .collect()
    }
}

/// Log-density up to the normalising constant.
pub fn log_density(x: &[f64], pot: &Potential, beta: u8) -> f64 {
    let n = x.len() as f64;
    let b = beta as f64;
    let mut s = -0.5 * b * n * x.iter().map(|&v| pot.value(v)).sum::<f64>();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            s += b * (x[i] - x[j]).abs().ln();
        }
    }
    s
}

/// Change of the log-density when x[i] moves to `new`.
fn delta_log(x: &[f64], i: usize, new: f64, pot: &Potential, beta: f64, nf: f64) -> f64 {
    let old = x[i];
    // products of 8 ratios at a time keep the log count low without overflow
    let mut acc = 0.0;
    let mut prod = 1.0;
    let mut k = 0;
    for (j, &v) in x.iter().enumerate() {
        if j == i {
            continue;
        }
        prod *= (new - v) / (old - v);
        k += 1;
        if k == 8 {
            acc += prod.abs().ln();
            prod = 1.0;
            k = 0;
        }
    }
    acc += prod.abs().ln();
    beta * acc - 0.5 * beta * nf * (pot.value(new) - pot.value(old))
}

/// Quantiles (i + 1/2)/n of the equilibrium density, or of the semicircle
/// when the potential has no valid one-cut density.
pub fn initial_configuration(pot: &Potential, n: usize) -> Vec<f64> {
    let (xs, ys) = match compute_density(pot) {
        Ok(eq) => (eq.density_grid.points, eq.density_grid.values),
        Err(_) => {
            let xs: Vec<f64> = (0..1001).map(|i| -2.0 + 4.0 * i as f64 / 1000.0).collect();
            let ys = xs
                .iter()
                .map(|x| (4.0 - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
                .collect();
            (xs, ys)
        }
    };
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = *cdf.last().unwrap();
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64 * total;
            let k = cdf.partition_point(|&c| c < u).clamp(1, xs.len() - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
            xs[k - 1] + w * (xs[k] - xs[k - 1])
        })
        .collect()
}

fn chain_rng(master_seed: u64, chain: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(chain);
    rng
}

struct ChainOutput {
    samples: ChainSamples,
    meta: ChainMeta,
}

fn run_chain(cfg: &SamplerConfig, chain: u32, start: &[f64]) -> ChainOutput {
    let mut rng = chain_rng(cfg.master_seed, chain as u64);
    let (lo, hi) = cfg.pot.interval();
    let n = cfg.n;
    let nf = n as f64;
    let beta = cfg.beta as f64;
    let mut x = start.to_vec();
    let mut step = cfg.step_size;
    let mut window = (0usize, 0usize);
    let mut post = (0usize, 0usize);
    let mut sweeps = Vec::new();
    let mut configs = Vec::new();
    for sweep in 0..cfg.sweeps {
        let burn = sweep < cfg.burnin;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            let z: f64 = rng.sample(StandardNormal);
            let new = x[i] + step * z;
            let u: f64 = rng.gen();
            let accepted = new > lo && new < hi && {
                let d = delta_log(&x, i, new, &cfg.pot, beta, nf);
                d >= 0.0 || u < d.exp()
            };
            if accepted {
                x[i] = new;
            }
            let counter = if burn { &mut window } else { &mut post };
            counter.0 += accepted as usize;
            counter.1 += 1;
        }
        if burn && (sweep + 1) % TUNE_INTERVAL == 0 {
            let rate = window.0 as f64 / window.1 as f64;
            step = (step * (2.0 * (rate - TARGET_ACCEPTANCE)).exp()).clamp(1.01e-6, 0.99);
            window = (0, 0);
        }
        if !burn && (sweep - cfg.burnin) % cfg.thin == 0 {
            let mut c = x.clone();
            c.sort_by(f64::total_cmp);
            sweeps.push(sweep as u64);
            configs.push(c);
        }
    }
    let draws = configs.len();
    ChainOutput {
        samples: ChainSamples {
            chain,
            sweeps,
            configs,
        },
        meta: ChainMeta {
            chain,
            stream: chain as u64,
            acceptance_rate: post.0 as f64 / post.1.max(1) as f64,
            step_size: step,
            draws,
        },
    }
}

/// Metropolis-within-random-scan sampling of the log-gas.
pub fn sample_log_gas(cfg: &SamplerConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let report = verify_one_cut(&cfg.pot);
    if !report.all_pass() {
        warnings.push(format!(
            "potential {} fails the one-cut conditions",
            cfg.pot.label()
        ));
    }
    let start = initial_configuration(&cfg.pot, cfg.n);
    let ld = log_density(&start, &cfg.pot, cfg.beta);
    if !ld.is_finite() || start.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization(format!(
            "log-density {ld} at the equilibrium quantiles"
        )));
    }
    let outputs: Vec<ChainOutput> = (0..cfg.chains as u32)
        .into_par_iter()
        .map(|c| run_chain(cfg, c, &start))
        .collect();
    let (chains, metas): (Vec<_>, Vec<_>) =
        outputs.into_iter().map(|o| (o.samples, o.meta)).unzip();
    let mut batch = SampleBatch {
        meta: BatchMeta {
            n: cfg.n,
            beta: cfg.beta,
            potential: cfg.pot.label(),
            interval: cfg.pot.interval(),
            source: SampleSource::Metropolis,
            master_seed: cfg.master_seed,
            chains: metas,
            diagnostics: ChainDiagnostics::empty(),
            warnings,
        },
        chains,
    };
    batch.meta.diagnostics = chain_diagnostics(&batch);
    Ok(batch)
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (implicit QL with Wilkinson shifts), ascending.
pub fn tridiagonal_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e
        .iter()
        .copied()
        .chain(std::iter::once(0.0))
        .take(n)
        .collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Exact draws for V = x^2/2 from the tridiagonal model with N(0, 1)
/// diagonal and chi_{beta k}/sqrt(2) off-diagonals, whose eigenvalues have
/// density prod |y_i - y_j|^beta exp(-sum y^2 / 2); x = y sqrt(2/(beta n)).
/// Draws with an eigenvalue outside the working interval [-3, 3] are
/// redrawn, so the output follows the confined density exactly.
pub fn sample_tridiagonal_gaussian(
    n: usize,
    beta: u8,
    num_samples: usize,
    master_seed: u64,
) -> Result<SampleBatch> {
    if beta != 1 && beta != 2 {
        return Err(Error::Config(format!("beta must be 1 or 2, got {beta}")));
    }
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let pot = Potential::gaussian();
    let (lo, hi) = pot.interval();
    let scale = (2.0 / (beta as f64 * n as f64)).sqrt();
    let chis: Vec<ChiSquared<f64>> = (1..n)
        .map(|k| ChiSquared::new((beta as usize * k) as f64).expect("positive degrees of freedom"))
        .collect();
    let mut rng = chain_rng(master_seed, 0);
    let mut configs = Vec::with_capacity(num_samples);
    while configs.len() < num_samples {
        let d: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let e: Vec<f64> = (0..n - 1)
            .map(|k| (chis[n - 2 - k].sample(&mut rng) / 2.0).sqrt())
            .collect();
        let x: Vec<f64> = tridiagonal_eigenvalues(&d, &e)
            .into_iter()
            .map(|y| y * scale)
            .collect();
        if x.iter().all(|&v| v > lo && v < hi) {
            configs.push(x);
        }
    }
    let mut batch = SampleBatch {
        meta: BatchMeta {
            n,
            beta,
            potential: pot.label(),
            interval: (lo, hi),
            source: SampleSource::Tridiagonal,
            master_seed,
            chains: vec![ChainMeta {
                chain: 0,
                stream: 0,
                acceptance_rate: 1.0,
                step_size: 0.0,
                draws: num_samples,
            }],
            diagnostics: ChainDiagnostics::empty(),
            warnings: Vec::new(),
        },
        chains: vec![ChainSamples {
            chain: 0,
            sweeps: (0..num_samples as u64).collect(),
            configs,
        }],
    };
    batch.meta.diagnostics = chain_diagnostics(&batch);
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub draws: usize,
    /// Integrated autocorrelation time 1 + 2 sum_k rho_k (pooled: draws / ess).
    pub tau: Option<f64>,
    pub ess: f64,
    pub per_chain_tau: Vec<f64>,
    /// Split-R-hat over all chain halves; absent when there are too few draws.
    pub split_rhat: Option<f64>,
    pub unreliable: bool,
}

impl ChainDiagnostics {
    fn empty() -> Self {
        Self {
            draws: 0,
            tau: None,
            ess: 0.0,
            per_chain_tau: Vec::new(),
            split_rhat: None,
            unreliable: true,
        }
    }
}

/// Integrated autocorrelation time by Geyer's initial positive sequence,
/// tau = -1 + 2 sum_m (rho_{2m} + rho_{2m+1}) over the leading positive pairs.
/// Returns (tau, reliable); a constant series saturates at tau = len.
pub fn autocorrelation_time(x: &[f64]) -> (f64, bool) {
    let n = x.len();
    if n < 4 {
        return (n.max(1) as f64, false);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return (n as f64, false);
    }
    let rho = |k: usize| {
        c[..n - k]
            .iter()
            .zip(&c[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let max_lag = n / 2;
    let mut sum = 0.0f64;
    let mut m = 0;
    let mut prev = f64::INFINITY;
    loop {
        let k = 2 * m;
        if k + 1 >= max_lag {
            return ((-1.0 + 2.0 * sum).max(1.0 / n as f64), false);
        }
        let pair = if k == 0 {
            1.0 + rho(1)
        } else {
            rho(k) + rho(k + 1)
        };
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        let pair = pair.min(prev);
        prev = pair;
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    (tau, tau * 50.0 < n as f64)
}

/// Split-R-hat of a set of chains (each chain split in halves).
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let mut parts: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h >= 2 {
            parts.push(&c[..h]);
            parts.push(&c[c.len() - h..]);
        }
    }
    if parts.len() < 2 {
        return None;
    }
    let len = parts.iter().map(|p| p.len()).min().unwrap();
    let l = len as f64;
    let means: Vec<f64> = parts
        .iter()
        .map(|p| p[..len].iter().sum::<f64>() / l)
        .collect();
    let vars: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p[..len].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (l - 1.0))
        .collect();
    let m = parts.len() as f64;
    let grand = means.iter().sum::<f64>() / m;
    let b = l / (m - 1.0) * means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>();
    let w = vars.iter().sum::<f64>() / m;
    if !(w > 0.0) {
        return None;
    }
    Some((((l - 1.0) / l * w + b / l) / w).sqrt())
}

/// Diagnostics of a multi-chain scalar series; ESS is summed over chains.
pub fn series_diagnostics(chains: &[Vec<f64>]) -> ChainDiagnostics {
    let draws: usize = chains.iter().map(|c| c.len()).sum();
    let mut ess = 0.0;
    let mut reliable = draws >= MIN_DRAWS;
    let per_chain_tau: Vec<f64> = chains
        .iter()
        .map(|c| {
            let (tau, ok) = autocorrelation_time(c);
            reliable &= ok;
            ess += c.len() as f64 / tau;
            tau
        })
        .collect();
    let ess = ess.min(draws as f64);
    ChainDiagnostics {
        draws,
        tau: (ess > 0.0).then(|| draws as f64 / ess),
        ess,
        per_chain_tau,
        split_rhat: split_rhat(chains),
        unreliable: !reliable,
    }
}

/// Diagnostics of sum_i x_i.
pub fn chain_diagnostics(batch: &SampleBatch) -> ChainDiagnostics {
    series_diagnostics(&batch.chain_series(|v| v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (
            m,
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0),
        )
    }

    #[test]
    fn tridiagonal_eigen_solver() {
        // eigenvalues of the free Jacobi matrix: 2 cos(k pi / (n + 1))
        let n = 12;
        let ev = tridiagonal_eigenvalues(&vec![0.0; n], &vec![1.0; n - 1]);
        for (k, v) in ev.iter().rev().enumerate() {
            let exact = 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-13);
        }
        let ev = tridiagonal_eigenvalues(&[2.0, -1.0, 0.5], &[0.0, 0.0]);
        assert_eq!(ev, vec![-1.0, 0.5, 2.0]);
        // trace and Frobenius norm are preserved
        let d = [0.3, -1.2, 2.2, 0.7, -0.4];
        let e = [0.5, 1.5, -0.2, 0.9];
        let ev = tridiagonal_eigenvalues(&d, &e);
        let tr: f64 = d.iter().sum();
        assert!((ev.iter().sum::<f64>() - tr).abs() < 1e-13);
        let fro: f64 =
            d.iter().map(|v| v * v).sum::<f64>() + 2.0 * e.iter().map(|v| v * v).sum::<f64>();
        assert!((ev.iter().map(|v| v * v).sum::<f64>() - fro).abs() < 1e-12);
    }

    #[test]
    fn tridiagonal_trace_variance() {
        for (beta, target) in [(1u8, 2.0), (2u8, 1.0)] {
            let b = sample_tridiagonal_gaussian(16, beta, 20000, 7).unwrap();
            let s: Vec<f64> = b.configs().map(|c| c.iter().sum()).collect();
            let (m, v) = mean_var(&s);
            let se_v = v * (2.0 / s.len() as f64).sqrt();
            let se_m = (v / s.len() as f64).sqrt();
            assert!((v - target).abs() < 3.0 * se_v, "beta {beta}: {v}");
            assert!(m.abs() < 3.0 * se_m);
            assert!(b.configs().all(|c| c.windows(2).all(|w| w[0] <= w[1])));
        }
    }

    #[test]
    fn metropolis_basic_properties() {
        let cfg = SamplerConfig {
            n: 8,
            beta: 1,
            pot: Potential::gaussian(),
            chains: 2,
            sweeps: 3000,
            burnin: 500,
            thin: 1,
            step_size: 0.3,
            master_seed: 11,
        };
        let b = sample_log_gas(&cfg).unwrap();
        assert_eq!(b.len(), 5000);
        for m in &b.meta.chains {
            assert!(m.acceptance_rate > 0.1 && m.acceptance_rate < 0.9, "{m:?}");
        }
        let (lo, hi) = cfg.pot.interval();
        assert!(b
            .configs()
            .all(|c| c.len() == 8 && c.iter().all(|&v| v > lo && v < hi)));
        assert!(b.configs().all(|c| c.windows(2).all(|w| w[0] <= w[1])));
        let again = sample_log_gas(&cfg).unwrap();
        assert_eq!(b, again);
        let d = &b.meta.diagnostics;
        assert!(d.ess > 100.0 && d.split_rhat.is_some());
    }

    #[test]
    fn determinism_across_thread_counts() {
        let cfg = SamplerConfig {
            n: 6,
            beta: 2,
            pot: Potential::quartic(0.7, 0.1, 1.0).unwrap(),
            chains: 3,
            sweeps: 400,
            burnin: 100,
            thin: 3,
            step_size: 0.2,
            master_seed: 5,
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| sample_log_gas(&cfg).unwrap());
        let b = three.install(|| sample_log_gas(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let ok = SamplerConfig {
            n: 4,
            beta: 1,
            pot: Potential::gaussian(),
            chains: 1,
            sweeps: 10,
            burnin: 5,
            thin: 1,
            step_size: 0.1,
            master_seed: 0,
        };
        assert!(ok.validate().is_ok());
        for bad in [
            SamplerConfig {
                beta: 3,
                ..ok.clone()
            },
            SamplerConfig {
                burnin: 10,
                ..ok.clone()
            },
            SamplerConfig {
                step_size: 1.0,
                ..ok.clone()
            },
            SamplerConfig {
                step_size: 1e-7,
                ..ok.clone()
            },
            SamplerConfig { n: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn log_density_increment_matches() {
        let pot = Potential::quartic(0.7, 0.1, 1.0).unwrap();
        let x: Vec<f64> = (0..20).map(|i| -1.9 + 0.2 * i as f64).collect();
        let mut y = x.clone();
        y[7] = 0.123;
        let d = delta_log(&x, 7, 0.123, &pot, 2.0, 20.0);
        assert!((d - (log_density(&y, &pot, 2) - log_density(&x, &pot, 2))).abs() < 1e-10);
    }

    #[test]
    fn iid_and_ar1_diagnostics() {
        let mut rng = chain_rng(3, 0);
        let iid: Vec<f64> = (0..20000).map(|_| rng.sample(StandardNormal)).collect();
        let d = series_diagnostics(&[iid.clone()]);
        assert!(
            d.ess / d.draws as f64 > 0.8 && d.ess / d.draws as f64 <= 1.2,
            "{d:?}"
        );
        let mut ar = vec![0.0; 50000];
        for i in 1..ar.len() {
            let z: f64 = rng.sample(StandardNormal);
            ar[i] = 0.5 * ar[i - 1] + z;
        }
        let (tau, ok) = autocorrelation_time(&ar);
        assert!(ok && (tau - 3.0).abs() < 0.9, "{tau}");
        let d = series_diagnostics(&[vec![1.0; 500]]);
        assert!(d.unreliable);
        let d = series_diagnostics(&[iid[..50].to_vec()]);
        assert!(d.unreliable);
        // R-hat near 1 for identically distributed chains, large for shifted
        let r = split_rhat(&[iid[..10000].to_vec(), iid[10000..].to_vec()]).unwrap();
        assert!((r - 1.0).abs() < 0.01);
        let shifted: Vec<f64> = iid[10000..].iter().map(|v| v + 3.0).collect();
        assert!(split_rhat(&[iid[..10000].to_vec(), shifted]).unwrap() > 1.5);
    }

    #[test]
    fn initial_configuration_is_sorted_inside_support() {
        let x = initial_configuration(&Potential::gaussian(), 50);
        assert!(x.windows(2).all(|w| w[0] < w[1]));
        assert!(x[0] > -2.0 && x[49] < 2.0);
        assert!((x.iter().sum::<f64>()).abs() < 1e-9);
    }
}

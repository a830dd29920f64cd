//! Invariant suite behind `loggas verify`.

use loggas::asymptotics::{string_equation_residual, toeplitz_limits};
use loggas::config::ExperimentConfig;
use loggas::equilibrium::{compute_density, compute_p, equilibrium_residual_with, verify_one_cut};
use loggas::kernels::{convention_self_test, kernel_table, with_bundle};
use loggas::orthopoly::{evaluate_basis, Precision, GRAM_TOLERANCE, MAX_KERNEL_N};
use loggas::persist::{self, CheckResult, VerifyReport};
use loggas::sampler::{sample_log_gas, SamplerConfig};
use loggas::{Dd, Error, Result};

use crate::stages::m_limit;
use crate::Run;

const EQUILIBRIUM_TOL: f64 = 1e-8;
const STRING_TOL: f64 = 1e-6;
const SYMBOL_TOL: f64 = 1e-8;
const ROUTE_TOL: f64 = 1e-8;
const MASS_TOL: f64 = 1e-6;

fn bounded(name: &str, value: f64, tol: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: value <= tol,
        value: Some(value),
        tolerance: Some(tol),
        detail,
    }
}

fn flag(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        value: None,
        tolerance: None,
        detail,
    }
}

/// An error inside one check becomes a failed check, not an aborted suite.
fn guarded(name: &str, f: impl FnOnce() -> Result<Vec<CheckResult>>) -> Vec<CheckResult> {
    f().unwrap_or_else(|e| vec![flag(name, false, format!("error: {e}"))])
}

pub(crate) fn run_checks(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let pot = cfg.potential()?;
    let phis = cfg.phis()?;
    let (quad, digits) = (cfg.quadrature, cfg.precision.digits);
    let n = cfg
        .experiment
        .n
        .iter()
        .copied()
        .find(|&n| n % 2 == 0 && (2..=MAX_KERNEL_N).contains(&n))
        .unwrap_or(16);
    let mut checks = Vec::new();

    let conditions = verify_one_cut(&pot);
    checks.push(flag(
        "one_cut_conditions",
        conditions.all_pass(),
        format!(
            "C1 {}, C2 {}, C3 {}, C4 {}; mass {}",
            conditions.c1.pass,
            conditions.c2.pass,
            conditions.c3.pass,
            conditions.c4.pass,
            conditions.mass
        ),
    ));

    checks.extend(guarded("equilibrium_equation", || {
        let eq = compute_density(&pot)?;
        let pts: Vec<f64> = (0..9).map(|i| -1.8 + 0.45 * i as f64).collect();
        let r = equilibrium_residual_with(&pot, &eq, &pts, 1e-11)?;
        Ok(vec![bounded(
            "equilibrium_equation",
            r.value,
            EQUILIBRIUM_TOL,
            format!(
                "max |V' - 2 PV int rho/(x-y)| on 9 points in [-1.8, 1.8], quadrature error {:e}",
                r.error
            ),
        )])
    }));

    checks.extend(guarded("toeplitz_symbol_inverse", || {
        let t = toeplitz_limits(&compute_p(&pot))?;
        Ok(vec![bounded(
            "toeplitz_symbol_inverse",
            t.symbol_inverse_residual(20),
            SYMBOL_TOL,
            format!(
                "max |(P * P^-1)_m - delta_m0| for |m| <= 20, R_0 = {}",
                t.r_at(0)
            ),
        )])
    }));

    checks.extend(guarded("recurrence", || {
        let table = kernel_table(&pot, n, quad, digits)?;
        let k = n + 4;
        let gram = match table.precision() {
            Precision::Double => evaluate_basis::<f64>(&table, &pot, k, quad)?.gram_residual_up_to(k),
            Precision::DoubleDouble => evaluate_basis::<Dd>(&table, &pot, k, quad)?.gram_residual_up_to(k),
        };
        // residuals less the wall terms of the working interval, on every k
        let strings = string_equation_residual(&table, &pot)?;
        let (sd, so) = strings.up_to(n.min(strings.k_last));
        let mut out = vec![
            bounded(
                "orthonormality",
                gram,
                GRAM_TOLERANCE,
                format!("max |(psi_j, psi_k) - delta_jk| for j, k <= {k} at n = {n}"),
            ),
            bounded(
                "string_equations",
                strings.corrected,
                STRING_TOL,
                format!(
                    "both residuals less wall terms for k <= {} at n = {n}; without the wall terms {:e} for k <= n",
                    strings.k_last,
                    sd.max(so)
                ),
            ),
        ];
        let band = cfg.experiment.band.min(n - 1);
        let m = m_limit(&table, &pot, n, band, quad)?;
        out.push(flag(
            "m_matrix_parity",
            m.parity_ok,
            format!("same-parity entries of M vanish (band {band}, n = {n}); deviation from the limit {}", m.max_deviation),
        ));
        Ok(out)
    }));

    checks.extend(guarded("kernels", || {
        let conv = convention_self_test(&pot, n, quad, digits)?;
        let mut out = vec![flag(
            "kernel_reproducing_trace",
            conv.trace_selects_subtracted,
            format!(
                "int int tr K K / 2n = {} (alternative convention {})",
                conv.trace_ratio.0, conv.trace_ratio.1
            ),
        )];
        out.extend(with_bundle(&pot, n, quad, digits, |b| {
            let mut v = vec![bounded(
                "p11_mass",
                (b.p11_mass() - 1.0).abs(),
                MASS_TOL,
                format!("|int p11 - 1| at n = {n}"),
            )];
            for phi in &phis {
                let e1 = b.variance(phi)?;
                v.push(bounded(
                    &format!("beta1_variance_routes[{}]", phi.label()),
                    (e1.quadrature - e1.matrix).abs(),
                    ROUTE_TOL,
                    format!(
                        "quadrature {} vs matrix {} at n = {n}",
                        e1.quadrature, e1.matrix
                    ),
                ));
                let e2 = b.beta2_variance(phi)?;
                v.push(bounded(
                    &format!("beta2_variance_routes[{}]", phi.label()),
                    (e2.quadrature - e2.matrix).abs(),
                    ROUTE_TOL,
                    format!(
                        "quadrature {} vs matrix {} at n = {n}",
                        e2.quadrature, e2.matrix
                    ),
                ));
            }
            Ok(v)
        })?);
        Ok(out)
    }));

    checks.extend(guarded("sampler_determinism", || {
        let sc = SamplerConfig {
            n: 8,
            beta: cfg.experiment.beta,
            pot: pot.clone(),
            chains: 2,
            sweeps: 200,
            burnin: 50,
            thin: 1,
            step_size: cfg.sampler.step_size,
            master_seed: cfg.experiment.seed,
        };
        let a = sample_log_gas(&sc)?;
        let b = sample_log_gas(&sc)?;
        let rates: Vec<f64> = a.meta.chains.iter().map(|c| c.acceptance_rate).collect();
        Ok(vec![flag(
            "sampler_determinism",
            a == b && rates.iter().all(|r| *r > 0.0 && *r < 1.0),
            format!(
                "two runs with seed {} agree; acceptance rates {rates:?}",
                cfg.experiment.seed
            ),
        )])
    }));

    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { all_passed, checks })
}

pub(crate) fn verify(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    run.step("verify", |out| {
        let report = run_checks(cfg)?;
        persist::save(&out.join("verify.json"), &report)?;
        for c in &report.checks {
            println!(
                "  {} {}: {}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        if report.all_passed {
            Ok(vec!["verify.json".into()])
        } else {
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            Err(Error::Numeric(format!(
                "{failed} of {} checks failed; see verify.json",
                report.checks.len()
            )))
        }
    })
}

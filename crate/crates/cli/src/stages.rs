use std::path::PathBuf;

use loggas::asymptotics::{
    m_matrix_limit_check, recurrence_asymptotics_check, string_equation_residual, toeplitz_limits,
    MLimitReport,
};
use loggas::clt::{clt_experiment, ladder_seed, CltOutcome};
use loggas::equilibrium::{compute_density, verify_one_cut};
use loggas::kernels::{check_kernel_n, convention_self_test, perturbation_stability, with_bundle};
use loggas::orthopoly::{
    build_recurrence, evaluate_basis, max_coefficients, overlap_block, Precision, RecurrenceTable,
};
use loggas::persist::{self, columns_to_csv, KernelSummary};
use loggas::potential::Potential;
use loggas::quadrature::QuadSpec;
use loggas::sampler::{sample_log_gas, sample_tridiagonal_gaussian};
use loggas::{Dd, Error, Real, Result};

use crate::Run;

const P11_GRID: usize = 401;

fn write_csv(out: &std::path::Path, name: &str, columns: &[(&str, &[f64])]) -> Result<String> {
    persist::write_atomic(&out.join(name), columns_to_csv(columns)?.as_bytes())?;
    Ok(name.to_string())
}

pub(crate) fn equilibrium(run: &mut Run) -> Result<()> {
    let pot = run.cfg.potential()?;
    run.step("equilibrium", |out| {
        let conditions = verify_one_cut(&pot);
        persist::save(&out.join("one_cut.json"), &conditions)?;
        let mut files = vec!["one_cut.json".to_string()];
        if !conditions.all_pass() {
            return Err(Error::Numeric(format!(
                "one-cut conditions fail (C1 {}, C2 {}, C3 {}, C4 {}); see one_cut.json",
                conditions.c1.pass, conditions.c2.pass, conditions.c3.pass, conditions.c4.pass
            )));
        }
        let eq = compute_density(&pot)?;
        persist::save(&out.join("equilibrium.json"), &eq)?;
        files.push("equilibrium.json".into());
        let g = &eq.density_grid;
        files.push(write_csv(
            out,
            "density.csv",
            &[("x", &g.points), ("density", &g.values)],
        )?);
        let u = &eq.effective_potential_grid;
        files.push(write_csv(
            out,
            "effective_potential.csv",
            &[("x", &u.points), ("effective_potential", &u.values)],
        )?);
        Ok(files)
    })
}

fn m_limit_at<T: Real>(
    table: &RecurrenceTable,
    pot: &Potential,
    n: usize,
    band: usize,
    quad: QuadSpec,
) -> Result<MLimitReport> {
    let basis = evaluate_basis::<T>(table, pot, n + band, quad)?;
    let mmat = overlap_block(&basis, n - band, n + band + 1)?;
    let tdata = toeplitz_limits(&loggas::equilibrium::compute_p(pot))?;
    m_matrix_limit_check(&mmat, &tdata, n, band)
}

pub(crate) fn m_limit(
    table: &RecurrenceTable,
    pot: &Potential,
    n: usize,
    band: usize,
    quad: QuadSpec,
) -> Result<MLimitReport> {
    match table.precision() {
        Precision::Double => m_limit_at::<f64>(table, pot, n, band, quad),
        Precision::DoubleDouble => m_limit_at::<Dd>(table, pot, n, band, quad),
    }
}

pub(crate) fn orthopoly(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let pot = cfg.potential()?;
    let eq = compute_density(&pot)?;
    let phi = cfg.perturbation()?;
    for &n in &cfg.experiment.n {
        run.step(&format!("orthopoly n={n}"), |out| {
            let table = build_recurrence(
                &pot,
                n,
                max_coefficients(n),
                cfg.quadrature,
                cfg.precision.digits,
            )?;
            let mut files = Vec::new();
            let name = format!("recurrence_n{n}.json");
            persist::save(&out.join(&name), &table)?;
            files.push(name);
            let k: Vec<f64> = (0..table.j.len()).map(|k| k as f64).collect();
            files.push(write_csv(
                out,
                &format!("recurrence_n{n}.csv"),
                &[("k", &k), ("j", &table.j), ("q", &table.q)],
            )?);

            let strings = string_equation_residual(&table, &pot)?;
            let name = format!("string_equations_n{n}.json");
            persist::save(&out.join(&name), &strings)?;
            files.push(name);

            let check = recurrence_asymptotics_check(&table, &eq, &phi, 0.0);
            let name = format!("recurrence_check_n{n}.json");
            persist::save(&out.join(&name), &check)?;
            files.push(name);

            let band = cfg.experiment.band;
            if n > band && table.k > n + band {
                let report = m_limit(&table, &pot, n, band, cfg.quadrature)?;
                let name = format!("m_limit_n{n}.json");
                persist::save(&out.join(&name), &report)?;
                files.push(name);
            }
            Ok(files)
        })?;
    }
    Ok(())
}

pub(crate) fn kernels(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    for &n in &cfg.experiment.n {
        check_kernel_n(n)?;
    }
    let pot = cfg.potential()?;
    let phis = cfg.phis()?;
    let (quad, digits) = (cfg.quadrature, cfg.precision.digits);
    for &n in &cfg.experiment.n {
        run.step(&format!("kernels n={n}"), |out| {
            let (summary, grid, p11, cd) = with_bundle(&pot, n, quad, digits, |b| {
                let beta1 = phis
                    .iter()
                    .map(|p| Ok((p.clone(), b.variance(p)?)))
                    .collect::<Result<Vec<_>>>()?;
                let beta2 = phis
                    .iter()
                    .map(|p| Ok((p.clone(), b.beta2_variance(p)?)))
                    .collect::<Result<Vec<_>>>()?;
                let mass = b.p11_mass();
                let (lo, hi) = pot.interval();
                let grid: Vec<f64> = (0..P11_GRID)
                    .map(|i| lo + (hi - lo) * i as f64 / (P11_GRID - 1) as f64)
                    .collect();
                let p11: Vec<f64> = grid.iter().map(|&x| b.p11(x)).collect();
                let cd: Vec<f64> = grid.iter().map(|&x| b.cd_density(x)).collect();
                let summary = KernelSummary {
                    n,
                    beta1,
                    beta2,
                    p11_mass: mass,
                    p11_mass_deviation: (mass - 1.0).abs(),
                    m_inv_norm: b.m_inv_norm(),
                    condition: b.condition(),
                };
                Ok((summary, grid, p11, cd))
            })?;
            let name = format!("kernels_n{n}.json");
            persist::save(&out.join(&name), &summary)?;
            let csv = write_csv(
                out,
                &format!("p11_n{n}.csv"),
                &[("x", &grid), ("p11", &p11), ("cd_density", &cd)],
            )?;
            Ok(vec![name, csv])
        })?;
    }
    let first = cfg.experiment.n[0];
    run.step("kernel convention", |out| {
        let report = convention_self_test(&pot, first, quad, digits)?;
        persist::save(&out.join("convention.json"), &report)?;
        Ok(vec!["convention.json".into()])
    })?;
    run.step("perturbation stability", |out| {
        let rows = perturbation_stability(
            &pot,
            &phis[0],
            &cfg.perturbation()?,
            &cfg.experiment.n,
            &cfg.experiment.t,
            cfg.experiment.beta,
            quad,
            digits,
        )?;
        persist::save(&out.join("stability.json"), &rows)?;
        Ok(vec!["stability.json".into()])
    })
}

pub(crate) fn sample(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    for &n in &cfg.experiment.n {
        run.step(&format!("sample n={n}"), |out| {
            let seed = ladder_seed(cfg.experiment.seed, n);
            let s = &cfg.sampler;
            let batch = if s.tridiagonal {
                if cfg.potential()?.base() != Potential::gaussian().base() {
                    return Err(Error::Config(
                        "tridiagonal sampling is exact only for V = x^2/2".into(),
                    ));
                }
                let count = s.chains * (s.sweeps - s.burnin.min(s.sweeps)) / s.thin.max(1);
                sample_tridiagonal_gaussian(n, cfg.experiment.beta, count, seed)?
            } else {
                sample_log_gas(&cfg.sampler_config(n, seed)?)?
            };
            let stem = format!("samples_n{n}");
            let mut files = persist::save_samples(out, &stem, &batch)?;
            let h = persist::eigenvalue_histogram(&batch, persist::HISTOGRAM_BINS);
            let name = format!("histogram_n{n}.csv");
            persist::write_atomic(&out.join(&name), persist::histogram_to_csv(&h)?.as_bytes())?;
            files.push(name);
            if cfg.output.binary {
                let name = format!("{stem}.bin");
                persist::write_atomic(&out.join(&name), &persist::samples_to_binary(&batch))?;
                files.push(name);
            }
            for w in &batch.meta.warnings {
                eprintln!("warning (n = {n}): {w}");
            }
            Ok(files)
        })?;
    }
    Ok(())
}

pub(crate) const CLT_FILE: &str = "clt.json";

pub(crate) fn clt(run: &mut Run) -> Result<()> {
    let exp = run.cfg.clt_experiment()?;
    run.step("clt", |out| {
        let outcome = clt_experiment(&exp)?;
        persist::save(&out.join(CLT_FILE), &outcome)?;
        for r in &outcome.reports {
            for e in &r.entries {
                let f = &e.fluctuation;
                println!(
                    "  phi = {:<12} n = {:>4}  var = {:.5} +- {:.5}  skew = {:+.3}  ex.kurt = {:+.3}  KS p = {:.3}",
                    r.phi.label(),
                    e.n,
                    f.variance,
                    f.variance_se,
                    f.skewness,
                    f.excess_kurtosis,
                    f.ks_pvalue
                );
            }
        }
        if !outcome.failures.is_empty() {
            let msgs: Vec<String> = outcome.failures.iter().map(|(n, m)| format!("n = {n}: {m}")).collect();
            return Err(Error::Numeric(format!("ladder points failed: {}", msgs.join("; "))));
        }
        Ok(vec![CLT_FILE.into()])
    })
}

pub(crate) fn report(run: &mut Run, runs: &[PathBuf]) -> Result<()> {
    run.step("report", |out| {
        let mut merged = CltOutcome {
            reports: Vec::new(),
            failures: Vec::new(),
        };
        for dir in runs {
            let o: CltOutcome = persist::load(&dir.join(CLT_FILE))?;
            merged.reports.extend(o.reports);
            merged.failures.extend(o.failures);
        }
        persist::save(&out.join("report.json"), &merged)?;
        println!(
            "  merged {} reports from {} runs",
            merged.reports.len(),
            runs.len()
        );
        Ok(vec!["report.json".into()])
    })
}

use std::fmt::Debug;
use std::fs;

use loggas::asymptotics::{
    m_matrix_limit_check, recurrence_asymptotics_check, string_equation_residual, toeplitz_limits,
};
use loggas::clt::{clt_experiment, CltExperiment};
use loggas::config::{ExperimentConfig, RunManifest, StepState, StepStatus};
use loggas::equilibrium::{compute_density, compute_p, verify_one_cut};
use loggas::kernels::{convention_self_test, perturbation_stability, with_bundle};
use loggas::orthopoly::{build_recurrence, evaluate_basis, max_coefficients, overlap_block};
use loggas::persist::{
    self, columns_to_csv, csv_to_columns, fmt_f64, load, load_samples, samples_from_binary,
    samples_to_binary, save, save_samples, CheckResult, KernelSummary, Report, VerifyReport,
};
use loggas::quadrature::QuadSpec;
use loggas::sampler::{sample_log_gas, SamplerConfig};
use loggas::{Dd, Error, Potential, TestFunction};
use proptest::prelude::*;

fn round_trip<T: Report + PartialEq + Debug>(value: &T) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    save(&p, value).unwrap();
    let back: T = load(&p).unwrap();
    assert_eq!(&back, value, "{}", T::KIND);
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains(&format!("\"kind\": \"{}\"", T::KIND)));
    // any other kind is refused
    assert!(persist::load_json::<serde_json::Value>(&p, "not_a_kind").is_err());
}

#[test]
fn every_report_kind_round_trips() {
    let pot = Potential::quartic(0.7, 0.1, 1.0).unwrap();
    let quad = QuadSpec::default();

    round_trip(&verify_one_cut(&pot));
    let eq = compute_density(&pot).unwrap();
    round_trip(&eq);

    let n = 12;
    let table = build_recurrence(&pot, n, max_coefficients(n), quad, 32).unwrap();
    round_trip(&table);
    round_trip(&string_equation_residual(&table, &pot).unwrap());
    round_trip(&recurrence_asymptotics_check(
        &table,
        &eq,
        &TestFunction::monomial(2),
        0.0,
    ));
    let basis = evaluate_basis::<Dd>(&table, &pot, n + 3, quad).unwrap();
    let m = overlap_block(&basis, n - 3, n + 4).unwrap();
    let td = toeplitz_limits(&compute_p(&pot)).unwrap();
    round_trip(&m_matrix_limit_check(&m, &td, n, 3).unwrap());

    round_trip(&convention_self_test(&pot, 8, quad, 16).unwrap());
    let phi = TestFunction::monomial(1);
    round_trip(
        &perturbation_stability(
            &pot,
            &phi,
            &TestFunction::monomial(2),
            &[8, 10],
            &[0.0, 1.0],
            2,
            quad,
            16,
        )
        .unwrap(),
    );
    let summary = with_bundle(&pot, 8, quad, 16, |b| {
        let v1 = b.variance(&phi)?;
        let v2 = b.beta2_variance(&phi)?;
        let mass = b.p11_mass();
        Ok(KernelSummary {
            n: 8,
            beta1: vec![(phi.clone(), v1)],
            beta2: vec![(phi.clone(), v2)],
            p11_mass: mass,
            p11_mass_deviation: (mass - 1.0).abs(),
            m_inv_norm: b.m_inv_norm(),
            condition: b.condition(),
        })
    })
    .unwrap();
    round_trip(&summary);

    let batch = sample_log_gas(&SamplerConfig {
        n: 4,
        beta: 2,
        pot: pot.clone(),
        chains: 2,
        sweeps: 300,
        burnin: 50,
        thin: 2,
        step_size: 0.2,
        master_seed: 3,
    })
    .unwrap();
    round_trip(&batch.meta);

    let outcome = clt_experiment(&CltExperiment {
        pot: Potential::gaussian(),
        beta: 1,
        phis: vec![phi.clone(), TestFunction::monomial(2)],
        n_ladder: vec![8, 12],
        chains: 1,
        sweeps: 800,
        burnin: 0,
        thin: 1,
        step_size: 0.1,
        master_seed: 5,
        tridiagonal: true,
        kernel: true,
        quad,
        precision_digits: 16,
    })
    .unwrap();
    round_trip(&outcome.reports);
    round_trip(&outcome.reports[0]);
    round_trip(&outcome);

    let cfg = ExperimentConfig::default();
    round_trip(&cfg);
    let mut manifest = RunManifest::new("verify", &cfg);
    manifest.steps.push(StepStatus {
        name: "verify".into(),
        status: StepState::Ok,
        message: None,
        seconds: 0.25,
    });
    manifest.outputs.push("verify.json".into());
    round_trip(&manifest);
    round_trip(&VerifyReport {
        all_passed: false,
        checks: vec![CheckResult {
            name: "p11_mass".into(),
            passed: false,
            value: Some(1.5e-3),
            tolerance: Some(1e-6),
            detail: "example".into(),
        }],
    });
}

#[test]
fn version_mismatch_is_its_own_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.json");
    fs::write(
        &p,
        "{\"format_version\": 99, \"kind\": \"config\", \"data\": {}}",
    )
    .unwrap();
    assert!(matches!(
        load::<ExperimentConfig>(&p),
        Err(Error::Version { .. })
    ));
    fs::write(
        &p,
        "{\"format_version\": 1, \"kind\": \"config\", \"data\": {\"bogus\": 1}}",
    )
    .unwrap();
    assert!(matches!(load::<ExperimentConfig>(&p), Err(Error::Parse(_))));
}

#[test]
fn samples_survive_csv_and_binary() {
    let batch = sample_log_gas(&SamplerConfig {
        n: 5,
        beta: 1,
        pot: Potential::gaussian(),
        chains: 3,
        sweeps: 90,
        burnin: 30,
        thin: 4,
        step_size: 0.3,
        master_seed: 17,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = save_samples(dir.path(), "s", &batch).unwrap();
    assert_eq!(files, vec!["s.csv".to_string(), "s.meta.json".to_string()]);
    assert_eq!(load_samples(dir.path(), "s").unwrap(), batch);
    let bin = samples_to_binary(&batch);
    assert_eq!(
        samples_from_binary(&bin, batch.meta.clone()).unwrap(),
        batch
    );
    assert!(samples_from_binary(&bin[..bin.len() - 3], batch.meta.clone()).is_err());
}

proptest! {
    #[test]
    fn float_text_round_trips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn json_floats_round_trip(v in prop::collection::vec(-1e300f64..1e300, 1..20)) {
        let text = persist::envelope_string("t", &v).unwrap();
        let back: Vec<f64> = persist::parse_envelope(&text, "t").unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn csv_columns_round_trip(a in prop::collection::vec(-1e6f64..1e6, 1..30), scale in 1e-12f64..1e12) {
        let b: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let text = columns_to_csv(&[("a", &a), ("b", &b)]).unwrap();
        let cols = csv_to_columns(&text).unwrap();
        prop_assert_eq!(&cols["a"], &a);
        prop_assert_eq!(&cols["b"], &b);
    }
}

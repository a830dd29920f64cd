//! Experiment configuration (TOML) and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clt::CltExperiment;
use crate::error::{Error, Result};
use crate::orthopoly::Precision;
use crate::potential::{Potential, TestFunction};
use crate::quadrature::QuadSpec;
use crate::sampler::SamplerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    /// Coefficients of V in increasing degree.
    pub coeffs: Vec<f64>,
    /// Half-width margin of the working interval [-2-d, 2+d].
    pub d: f64,
    pub d1: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            coeffs: vec![0.0, 0.0, 0.5],
            d: 1.0,
            d1: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrecisionSection {
    pub digits: u32,
}

impl Default for PrecisionSection {
    fn default() -> Self {
        Self { digits: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: usize,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub step_size: f64,
    /// Exact tridiagonal draws instead of Metropolis (V = x^2/2 only).
    pub tridiagonal: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            chains: 4,
            sweeps: 20_000,
            burnin: 2_000,
            thin: 1,
            step_size: 0.1,
            tridiagonal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub beta: u8,
    /// Ladder of ensemble sizes.
    pub n: Vec<usize>,
    /// Test functions as coefficient lists.
    pub phi: Vec<Vec<f64>>,
    /// Perturbation strengths for the stability scan.
    pub t: Vec<f64>,
    /// Perturbing test function of the stability scan.
    pub perturbation: Vec<f64>,
    pub seed: u64,
    /// Attach kernel variances where n is even and at most 128.
    pub kernel: bool,
    /// Band used by the M-matrix limit check.
    pub band: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            beta: 1,
            n: vec![16, 32, 64],
            phi: vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0]],
            t: vec![-1.0, 0.0, 1.0],
            perturbation: vec![0.0, 0.0, 1.0],
            seed: 1,
            kernel: true,
            band: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write sample dumps in the binary format.
    pub binary: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            binary: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreadsSection {
    /// 0 means all available cores.
    pub count: usize,
}

impl Default for ThreadsSection {
    fn default() -> Self {
        Self { count: 0 }
    }
}

/// Fully resolved configuration of a run. Every section and key is optional
/// in the file; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub potential: PotentialSection,
    pub quadrature: QuadSpec,
    pub precision: PrecisionSection,
    pub sampler: SamplerSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
    pub threads: ThreadsSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.potential()?;
        Precision::from_digits(self.precision.digits)?;
        self.phis()?;
        TestFunction::new(self.experiment.perturbation.clone())?;
        let e = &self.experiment;
        if e.beta != 1 && e.beta != 2 {
            return Err(Error::Config(format!(
                "experiment.beta must be 1 or 2, got {}",
                e.beta
            )));
        }
        if e.n.is_empty() || e.n.contains(&0) {
            return Err(Error::Config(
                "experiment.n must list positive sizes".into(),
            ));
        }
        if e.band > 6 {
            return Err(Error::Config(format!(
                "experiment.band must be at most 6, got {}",
                e.band
            )));
        }
        if let Some(t) = e.t.iter().find(|t| !(t.abs() <= 2.0)) {
            return Err(Error::Config(format!(
                "experiment.t entries must satisfy |t| <= 2, got {t}"
            )));
        }
        if self.quadrature.panels == 0 || self.quadrature.order < 2 {
            return Err(Error::Config(
                "quadrature needs panels >= 1 and order >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Potential> {
        let p = &self.potential;
        Potential::with_strip(p.coeffs.clone(), p.d, p.d1)
    }

    pub fn phis(&self) -> Result<Vec<TestFunction>> {
        self.experiment
            .phi
            .iter()
            .cloned()
            .map(TestFunction::new)
            .collect()
    }

    pub fn perturbation(&self) -> Result<TestFunction> {
        TestFunction::new(self.experiment.perturbation.clone())
    }

    /// Sampler settings for one ensemble size.
    pub fn sampler_config(&self, n: usize, seed: u64) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let cfg = SamplerConfig {
            n,
            beta: self.experiment.beta,
            pot: self.potential()?,
            chains: s.chains,
            sweeps: s.sweeps,
            burnin: s.burnin,
            thin: s.thin,
            step_size: s.step_size,
            master_seed: seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn clt_experiment(&self) -> Result<CltExperiment> {
        let s = &self.sampler;
        Ok(CltExperiment {
            pot: self.potential()?,
            beta: self.experiment.beta,
            phis: self.phis()?,
            n_ladder: self.experiment.n.clone(),
            chains: s.chains,
            sweeps: s.sweeps,
            burnin: s.burnin,
            thin: s.thin,
            step_size: s.step_size,
            master_seed: self.experiment.seed,
            tridiagonal: s.tridiagonal,
            kernel: self.experiment.kernel,
            quad: self.quadrature,
            precision_digits: self.precision.digits,
        })
    }

    /// SHA-256 of the canonical JSON form (object keys sorted), so the hash
    /// does not depend on key order or formatting in the file. Thread count
    /// and output directory do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = ThreadsSection::default();
        c.output.dir = OutputSection::default().dir;
        let v = serde_json::to_value(&c).expect("config serialises");
        hex::encode(Sha256::digest(canonical_json(&v).as_bytes()))
    }
}

fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&m[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!(
            "[{}]",
            a.iter().map(canonical_json).collect::<Vec<_>>().join(",")
        ),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepState {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStatus {
    pub name: String,
    pub status: StepState,
    pub message: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub steps: Vec<StepStatus>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            format_version: crate::persist::FORMAT_VERSION,
            command: command.into(),
            config_hash: config.hash(),
            steps: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.steps.iter().all(|s| s.status != StepState::Failed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn dotted_keys_and_hash_stability() {
        let a = "potential.coeffs = [0.0, 0.0, 0.35, 0.0, 0.025]\nexperiment.n = [40]\nsampler.chains = 2\n";
        let b = "[sampler]\nchains = 2\n\n[experiment]\nn = [40]\n\n[potential]\ncoeffs = [0.0, 0.0, 0.35, 0.0, 0.025]\n";
        let ca = ExperimentConfig::from_toml_str(a).unwrap();
        let cb = ExperimentConfig::from_toml_str(b).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(ca.hash(), cb.hash());
        assert_ne!(ca.hash(), ExperimentConfig::default().hash());
        assert_eq!(ca.hash().len(), 64);
        let mut cc = ca.clone();
        cc.threads.count = 3;
        cc.output.dir = "elsewhere".into();
        assert_eq!(cc.hash(), ca.hash());
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let e = ExperimentConfig::from_toml_str("[sampler]\nchains = 2\nchainz = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Parse(_)));
        assert!(msg.contains("chainz") && msg.contains("line 3"), "{msg}");
        assert!(e.is_validation());
    }

    #[test]
    fn semantic_validation() {
        for bad in [
            "experiment.beta = 4",
            "precision.digits = 40",
            "potential.coeffs = [0.0, 1.0, 0.5]",
            "experiment.t = [3.0]",
            "experiment.phi = [[0, 0, 0, 0, 0, 0, 0, 0, 0, 1]]",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(e.is_validation(), "{bad}: {e}");
        }
    }

    #[test]
    fn sampler_section_is_validated() {
        let cfg = ExperimentConfig::from_toml_str("sampler.burnin = 30000").unwrap();
        assert!(cfg.sampler_config(8, 1).is_err());
    }
}

//! Versioned JSON reports, CSV bulk arrays and the binary sample dump.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite f64. Non-finite values appear as JSON `null`.
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::sampler::{BatchMeta, ChainSamples, SampleBatch};

pub const FORMAT_VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"LGAS";
pub const HISTOGRAM_BINS: usize = 64;
pub const SAMPLE_CSV_HEADER: [&str; 4] = ["chain", "sweep", "index", "value"];

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

struct SigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, SigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes utf-8"))
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T: Serialize> {
    format_version: u32,
    kind: &'a str,
    data: &'a T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    #[allow(dead_code)]
    format_version: u32,
    kind: String,
    data: T,
}

pub fn envelope_string<T: Serialize>(kind: &str, data: &T) -> Result<String> {
    to_json_string(&EnvelopeRef {
        format_version: FORMAT_VERSION,
        kind,
        data,
    })
}

/// Parse an envelope. Version is checked before anything else so old files
/// fail with a migration message rather than a field error.
pub fn parse_envelope<T: DeserializeOwned>(text: &str, kind: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("malformed JSON: {e}")))?;
    let found = value
        .get("format_version")
        .ok_or_else(|| Error::Parse("missing format_version".into()))?;
    if found.as_u64() != Some(FORMAT_VERSION as u64) {
        return Err(Error::Version {
            found: found.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let env: Envelope<T> = serde_json::from_value(value)
        .map_err(|e| Error::Parse(format!("invalid {kind} file: {e}")))?;
    if env.kind != kind {
        return Err(Error::Parse(format!(
            "expected a {kind} file, found {}",
            env.kind
        )));
    }
    Ok(env.data)
}

/// Write to `path.tmp` then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let res = (|| -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(Error::from)
}

pub fn save_json<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    write_atomic(path, envelope_string(kind, data)?.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_envelope(&text, kind).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Kind tag written into the envelope of a report type.
pub trait Report: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

macro_rules! report_kind {
    ($($t:ty => $k:literal),* $(,)?) => {
        $(impl Report for $t { const KIND: &'static str = $k; })*
    };
}

report_kind! {
    crate::clt::CltReport => "clt_report",
    crate::clt::CltOutcome => "clt_run",
    Vec<crate::clt::CltReport> => "clt_reports",
    crate::equilibrium::EquilibriumData => "equilibrium",
    crate::equilibrium::ConditionReport => "one_cut_conditions",
    crate::orthopoly::RecurrenceTable => "recurrence_table",
    crate::kernels::ConventionReport => "kernel_convention",
    Vec<crate::kernels::StabilityRow> => "perturbation_stability",
    crate::asymptotics::RecurrenceCheck => "recurrence_check",
    crate::asymptotics::MLimitReport => "m_limit",
    crate::asymptotics::StringResidual => "string_equations",
    BatchMeta => "sample_meta",
    crate::config::RunManifest => "manifest",
    crate::config::ExperimentConfig => "config",
    KernelSummary => "kernel_summary",
    VerifyReport => "verify",
}

pub fn save<T: Report>(path: &Path, data: &T) -> Result<()> {
    save_json(path, T::KIND, data)
}

pub fn load<T: Report>(path: &Path) -> Result<T> {
    load_json(path, T::KIND)
}

/// Variances and diagnostics of the kernel stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub n: usize,
    pub beta1: Vec<(
        crate::potential::TestFunction,
        crate::kernels::VarianceEstimate,
    )>,
    pub beta2: Vec<(
        crate::potential::TestFunction,
        crate::kernels::VarianceEstimate,
    )>,
    /// int p11, exactly 1 for the normalised kernel.
    pub p11_mass: f64,
    /// |int p11 - 1|.
    pub p11_mass_deviation: f64,
    pub m_inv_norm: f64,
    pub condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub all_passed: bool,
    pub checks: Vec<CheckResult>,
}

// ---- samples ----

pub fn samples_to_csv(batch: &SampleBatch) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SAMPLE_CSV_HEADER).map_err(csv_err)?;
    for c in &batch.chains {
        for (s, cfg) in c.sweeps.iter().zip(&c.configs) {
            for (i, v) in cfg.iter().enumerate() {
                w.write_record([
                    c.chain.to_string(),
                    s.to_string(),
                    i.to_string(),
                    fmt_f64(*v),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Rebuild a batch from its CSV rows and metadata sidecar.
pub fn samples_from_csv(text: &str, meta: BatchMeta) -> Result<SampleBatch> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(SAMPLE_CSV_HEADER) {
        return Err(Error::Parse(format!(
            "sample CSV header must be {}",
            SAMPLE_CSV_HEADER.join(",")
        )));
    }
    let n = meta.n;
    let mut chains: Vec<ChainSamples> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = line + 2;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| {
                Error::Parse(format!(
                    "line {row}: missing column {}",
                    SAMPLE_CSV_HEADER[i]
                ))
            })
        };
        let bad = |i: usize| Error::Parse(format!("line {row}: bad {}", SAMPLE_CSV_HEADER[i]));
        let chain: u32 = field(0)?.parse().map_err(|_| bad(0))?;
        let sweep: u64 = field(1)?.parse().map_err(|_| bad(1))?;
        let index: usize = field(2)?.parse().map_err(|_| bad(2))?;
        let value: f64 = field(3)?.parse().map_err(|_| bad(3))?;
        if chains.last().map(|c| c.chain) != Some(chain) {
            chains.push(ChainSamples {
                chain,
                sweeps: Vec::new(),
                configs: Vec::new(),
            });
        }
        let c = chains.last_mut().expect("pushed");
        if index == 0 {
            c.sweeps.push(sweep);
            c.configs.push(Vec::with_capacity(n));
        }
        let cfg = c.configs.last_mut().ok_or_else(|| bad(2))?;
        if index != cfg.len() || index >= n || c.sweeps.last() != Some(&sweep) {
            return Err(Error::Parse(format!("line {row}: rows out of order")));
        }
        cfg.push(value);
    }
    for c in &chains {
        if c.configs.iter().any(|x| x.len() != n) {
            return Err(Error::Parse(format!(
                "chain {} has a truncated configuration",
                c.chain
            )));
        }
    }
    Ok(SampleBatch { meta, chains })
}

/// Writes `<stem>.csv` and `<stem>.meta.json`.
pub fn save_samples(dir: &Path, stem: &str, batch: &SampleBatch) -> Result<Vec<String>> {
    let csv_name = format!("{stem}.csv");
    let meta_name = format!("{stem}.meta.json");
    write_atomic(&dir.join(&csv_name), samples_to_csv(batch)?.as_bytes())?;
    save(&dir.join(&meta_name), &batch.meta)?;
    Ok(vec![csv_name, meta_name])
}

pub fn load_samples(dir: &Path, stem: &str) -> Result<SampleBatch> {
    let meta: BatchMeta = load(&dir.join(format!("{stem}.meta.json")))?;
    let path = dir.join(format!("{stem}.csv"));
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    samples_from_csv(&text, meta)
}

/// Binary dump: magic "LGAS", u32 version, u64 n, u64 record count, then
/// per record u32 chain, u64 sweep and n f64 values, all little-endian.
pub fn samples_to_binary(batch: &SampleBatch) -> Vec<u8> {
    let n = batch.meta.n;
    let mut out = Vec::with_capacity(24 + batch.len() * (12 + 8 * n));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(batch.len() as u64).to_le_bytes());
    for c in &batch.chains {
        for (s, cfg) in c.sweeps.iter().zip(&c.configs) {
            out.extend_from_slice(&c.chain.to_le_bytes());
            out.extend_from_slice(&s.to_le_bytes());
            for v in cfg {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn samples_from_binary(bytes: &[u8], meta: BatchMeta) -> Result<SampleBatch> {
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + k)
            .ok_or_else(|| Error::Parse("binary sample file truncated".into()))?;
        pos += k;
        Ok(s)
    };
    if take(4)? != BINARY_MAGIC {
        return Err(Error::Parse("not a binary sample file".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    if n != meta.n {
        return Err(Error::Parse(format!(
            "binary file has n = {n}, metadata says {}",
            meta.n
        )));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let mut chains: Vec<ChainSamples> = Vec::new();
    for _ in 0..count {
        let chain = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let sweep = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let cfg: Vec<f64> = take(8 * n)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if chains.last().map(|c| c.chain) != Some(chain) {
            chains.push(ChainSamples {
                chain,
                sweeps: Vec::new(),
                configs: Vec::new(),
            });
        }
        let c = chains.last_mut().expect("pushed");
        c.sweeps.push(sweep);
        c.configs.push(cfg);
    }
    if take(1).is_ok() {
        return Err(Error::Parse("trailing bytes in binary sample file".into()));
    }
    Ok(SampleBatch { meta, chains })
}

// ---- bulk arrays ----

/// Generic numeric CSV from named columns of equal length.
pub fn columns_to_csv(columns: &[(&str, &[f64])]) -> Result<String> {
    let len = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != len) {
        return Err(Error::Config("CSV columns must have equal length".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns.iter().map(|c| c.0))
        .map_err(csv_err)?;
    for i in 0..len {
        w.write_record(columns.iter().map(|c| fmt_f64(c.1[i])))
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ascii"))
}

/// Named columns of a numeric CSV.
pub fn csv_to_columns(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let names: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (i, f) in rec.iter().enumerate() {
            let v = f.parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: bad number in column {}",
                    line + 2,
                    names[i]
                ))
            })?;
            cols[i].push(v);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

/// Eigenvalue histogram with Poisson standard errors on the density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub count: Vec<f64>,
    pub density: Vec<f64>,
    pub density_se: Vec<f64>,
}

/// Histogram of all eigenvalues, normalised to integrate to 1.
pub fn eigenvalue_histogram(batch: &SampleBatch, bins: usize) -> Histogram {
    let (a, b) = batch.meta.interval;
    let width = (b - a) / bins as f64;
    let mut count = vec![0.0; bins];
    let mut total = 0.0;
    for cfg in batch.configs() {
        for &x in cfg {
            let i = (((x - a) / width) as usize).min(bins - 1);
            count[i] += 1.0;
            total += 1.0;
        }
    }
    let norm = if total > 0.0 {
        1.0 / (total * width)
    } else {
        0.0
    };
    Histogram {
        lo: (0..bins).map(|i| a + i as f64 * width).collect(),
        hi: (0..bins).map(|i| a + (i + 1) as f64 * width).collect(),
        density: count.iter().map(|c| c * norm).collect(),
        density_se: count.iter().map(|c| c.sqrt() * norm).collect(),
        count,
    }
}

pub fn histogram_to_csv(h: &Histogram) -> Result<String> {
    columns_to_csv(&[
        ("bin_lo", &h.lo),
        ("bin_hi", &h.hi),
        ("count", &h.count),
        ("density", &h.density),
        ("density_se", &h.density_se),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clt::{assemble_report, FluctuationReport, LadderEntry};
    use crate::potential::{Potential, TestFunction};
    use crate::sampler::{sample_log_gas, SamplerConfig};

    fn small_batch() -> SampleBatch {
        sample_log_gas(&SamplerConfig {
            n: 4,
            beta: 1,
            pot: Potential::gaussian(),
            chains: 2,
            sweeps: 60,
            burnin: 20,
            thin: 3,
            step_size: 0.3,
            master_seed: 9,
        })
        .unwrap()
    }

    fn sample_report() -> crate::clt::CltReport {
        let fl = |v: f64| FluctuationReport {
            draws: 1000,
            ess: 400.0,
            mean: 0.1,
            mean_se: 0.05,
            variance: v,
            variance_se: 0.1,
            skewness: 0.01,
            skewness_se: 0.12,
            excess_kurtosis: -0.03,
            kurtosis_se: 0.24,
            ks_statistic: 0.02,
            ks_pvalue: 0.7,
            moments_normal: true,
        };
        let entry = |n: usize, v: f64| LadderEntry {
            n,
            seed: 7,
            tau: Some(2.5),
            split_rhat: None,
            diagnostics_unreliable: false,
            fluctuation: fl(v),
            kernel_variance: None,
            discrepancy_se: None,
        };
        assemble_report(
            "gaussian".into(),
            1,
            TestFunction::new(vec![0.0, 1.0 / 3.0]).unwrap(),
            vec![entry(16, 2.0 / 3.0), entry(32, 1.9)],
        )
    }

    #[test]
    fn clt_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report();
        let p = dir.path().join("clt.json");
        save(&p, &r).unwrap();
        let back: crate::clt::CltReport = load(&p).unwrap();
        assert_eq!(back, r);
        assert!(fs::read_to_string(&p)
            .unwrap()
            .contains("6.6666666666666663e-1"));
    }

    #[test]
    fn sample_csv_byte_identical() {
        let b = small_batch();
        let csv1 = samples_to_csv(&b).unwrap();
        let back = samples_from_csv(&csv1, b.meta.clone()).unwrap();
        assert_eq!(back, b);
        assert_eq!(samples_to_csv(&back).unwrap(), csv1);

        let dir = tempfile::tempdir().unwrap();
        save_samples(dir.path(), "s", &b).unwrap();
        assert_eq!(load_samples(dir.path(), "s").unwrap(), b);
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let b = small_batch();
        let bytes = samples_to_binary(&b);
        assert_eq!(samples_from_binary(&bytes, b.meta.clone()).unwrap(), b);
        let e = samples_from_binary(&bytes[..bytes.len() - 3], b.meta.clone()).unwrap_err();
        assert!(matches!(e, Error::Parse(_)));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(
            samples_from_binary(&v2, b.meta.clone()),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn corrupted_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        save(&p, &sample_report()).unwrap();
        let good = fs::read_to_string(&p).unwrap();

        fs::write(&p, &good[..good.len() / 2]).unwrap();
        let e = load::<crate::clt::CltReport>(&p).unwrap_err();
        assert!(matches!(e, Error::Parse(_)), "{e}");

        fs::write(
            &p,
            good.replace("\"format_version\": 1", "\"format_version\": 0"),
        )
        .unwrap();
        let e = load::<crate::clt::CltReport>(&p).unwrap_err();
        assert!(matches!(e, Error::Version { .. }), "{e}");

        fs::write(&p, &good).unwrap();
        assert!(load::<crate::orthopoly::RecurrenceTable>(&p).is_err());

        let csv = samples_to_csv(&small_batch()).unwrap();
        let broken = csv.replacen(",3,", ",5,", 1);
        assert!(samples_from_csv(&broken, small_batch().meta).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_atomic(&p, b"{}").unwrap();
        let names: Vec<_> = fs::read_dir(p.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("x.json")]);
    }

    #[test]
    fn histogram_normalised() {
        let b = small_batch();
        let h = eigenvalue_histogram(&b, HISTOGRAM_BINS);
        let w = h.hi[0] - h.lo[0];
        let mass: f64 = h.density.iter().map(|d| d * w).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let cols = csv_to_columns(&histogram_to_csv(&h).unwrap()).unwrap();
        assert_eq!(cols["density"], h.density);
    }

    #[test]
    fn non_finite_becomes_null() {
        let s = to_json_string(&vec![1.0, f64::NAN]).unwrap();
        assert!(s.contains("null"));
        assert!(s.contains("1.0000000000000000e0"));
    }
}

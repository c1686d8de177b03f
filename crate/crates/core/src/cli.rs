//! Experiment config parsing and validation, result persistence and the
//! `hermfield` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::chaoscalc::chaos_report;
use crate::error::{Error, Result, Violation};
use crate::fieldsim::build_sampler;
use crate::harness::{
    run_experiment, CovarianceSpec, ExperimentConfig, ExperimentResult, FactorSpec, LadderSpec, OutputKind, PhiSpec,
    MIN_REPLICATES, SCHEMA,
};
use crate::hermite::MAX_ORDER;
use crate::ratelab::{classify, fbs_regime, rate_g};

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn table<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Table> {
        match v {
            Value::Table(t) => Some(t),
            other => {
                self.fail(path, format!("expected a table, found {}", other.type_str()));
                None
            }
        }
    }

    fn keys(&mut self, t: &Table, path: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.fail(
                    &join(path, k),
                    format!("unknown key (expected one of: {})", allowed.join(", ")),
                );
            }
        }
    }

    fn required<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a Value> {
        let v = t.get(key);
        if v.is_none() {
            self.fail(&join(path, key), "missing required key");
        }
        v
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            other => {
                self.fail(path, format!("expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn integer(&mut self, v: &Value, path: &str, min: i64) -> Option<i64> {
        match v {
            Value::Integer(i) if *i >= min => Some(*i),
            Value::Integer(i) => {
                self.fail(path, format!("must be at least {min}, got {i}"));
                None
            }
            other => {
                self.fail(path, format!("expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn float(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            Value::Float(x) => {
                self.fail(path, format!("must be finite, got {x}"));
                None
            }
            other => {
                self.fail(path, format!("expected a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            other => {
                self.fail(path, format!("expected an array, found {}", other.type_str()));
                None
            }
        }
    }

    /// Float field that must satisfy `ok`, reported with `rule`.
    fn bounded(&mut self, t: &Table, path: &str, key: &str, ok: impl Fn(f64) -> bool, rule: &str) -> Option<f64> {
        let p = join(path, key);
        let x = self.required(t, path, key).and_then(|v| self.float(v, &p))?;
        if ok(x) {
            Some(x)
        } else {
            self.fail(&p, format!("{rule}, got {x}"));
            None
        }
    }

    fn dim(&mut self, t: &Table, path: &str) -> Option<usize> {
        match t.get("dim") {
            None => Some(1),
            Some(v) => self.integer(v, &join(path, "dim"), 1).map(|d| d as usize),
        }
    }

    fn factor(&mut self, v: &Value, path: &str) -> Option<FactorSpec> {
        let t = self.table(v, path)?;
        let family = self
            .required(t, path, "family")
            .and_then(|v| self.string(v, &join(path, "family")))?;
        let spec = match family.as_str() {
            "fgn" => {
                self.keys(t, path, &["family", "hurst"]);
                let hurst = self.bounded(t, path, "hurst", |h| h > 0.0 && h < 1.0, "must lie in (0, 1)");
                Some(FactorSpec::Fgn { hurst: hurst? })
            }
            "cauchy" => {
                self.keys(t, path, &["family", "beta", "dim"]);
                let beta = self.bounded(t, path, "beta", |b| b > 0.0, "must be positive");
                let dim = self.dim(t, path);
                Some(FactorSpec::Cauchy { beta: beta?, dim: dim? })
            }
            "exponential" => {
                self.keys(t, path, &["family", "scale", "dim"]);
                let scale = self.bounded(t, path, "scale", |s| s > 0.0, "must be positive");
                let dim = self.dim(t, path);
                Some(FactorSpec::Exponential {
                    scale: scale?,
                    dim: dim?,
                })
            }
            "white_noise" => {
                self.keys(t, path, &["family", "dim"]);
                Some(FactorSpec::WhiteNoise {
                    dim: self.dim(t, path)?,
                })
            }
            other => {
                self.fail(
                    &join(path, "family"),
                    format!("unknown family `{other}` (expected fgn, cauchy, exponential, white_noise)"),
                );
                None
            }
        };
        spec
    }

    fn factors(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<FactorSpec>> {
        let p = join(path, key);
        let a = self.required(t, path, key).and_then(|v| self.array(v, &p))?;
        if a.is_empty() {
            self.fail(&p, "needs at least one factor");
        }
        let out: Vec<Option<FactorSpec>> = a
            .iter()
            .enumerate()
            .map(|(i, v)| self.factor(v, &format!("{p}[{i}]")))
            .collect();
        out.into_iter().collect()
    }

    fn covariance(&mut self, v: &Value, path: &str) -> Option<CovarianceSpec> {
        let t = self.table(v, path)?;
        let structure = self
            .required(t, path, "structure")
            .and_then(|v| self.string(v, &join(path, "structure")))?;
        let spec = match structure.as_str() {
            "separable" => {
                self.keys(t, path, &["structure", "factors"]);
                CovarianceSpec::Separable {
                    factors: self.factors(t, path, "factors")?,
                }
            }
            "gneiting" => {
                self.keys(t, path, &["structure", "c1", "c2"]);
                let c1 = self
                    .required(t, path, "c1")
                    .and_then(|v| self.factor(v, &join(path, "c1")));
                let c2 = self
                    .required(t, path, "c2")
                    .and_then(|v| self.factor(v, &join(path, "c2")));
                CovarianceSpec::Gneiting { c1: c1?, c2: c2? }
            }
            "additive" => {
                self.keys(t, path, &["structure", "factors", "weights"]);
                let factors = self.factors(t, path, "factors");
                let wp = join(path, "weights");
                let weights = self
                    .required(t, path, "weights")
                    .and_then(|v| self.array(v, &wp))
                    .and_then(|a| {
                        a.iter()
                            .enumerate()
                            .map(|(i, v)| self.float(v, &format!("{wp}[{i}]")))
                            .collect::<Option<Vec<f64>>>()
                    });
                if let Some(f) = &factors {
                    if f.len() != 2 {
                        self.fail(
                            &join(path, "factors"),
                            format!("additive models take 2 factors, got {}", f.len()),
                        );
                    }
                }
                if let Some(w) = &weights {
                    if w.len() != 2 || w.iter().any(|&x| !(x > 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                        self.fail(&wp, "needs two positive weights summing to 1");
                    }
                }
                CovarianceSpec::Additive {
                    factors: factors?,
                    weights: weights?,
                }
            }
            "isotropic" => {
                self.keys(t, path, &["structure", "model", "block_dims"]);
                let model = self
                    .required(t, path, "model")
                    .and_then(|v| self.factor(v, &join(path, "model")));
                let bp = join(path, "block_dims");
                let dims = self
                    .required(t, path, "block_dims")
                    .and_then(|v| self.array(v, &bp))
                    .and_then(|a| {
                        a.iter()
                            .enumerate()
                            .map(|(i, v)| self.integer(v, &format!("{bp}[{i}]"), 1).map(|d| d as usize))
                            .collect::<Option<Vec<usize>>>()
                    });
                CovarianceSpec::Isotropic {
                    model: model?,
                    block_dims: dims?,
                }
            }
            other => {
                self.fail(
                    &join(path, "structure"),
                    format!("unknown structure `{other}` (expected separable, gneiting, additive, isotropic)"),
                );
                return None;
            }
        };
        if let Err(e) = spec.build() {
            self.fail(path, e.to_string());
            return None;
        }
        Some(spec)
    }

    fn phi(&mut self, v: &Value, path: &str) -> Option<PhiSpec> {
        let t = self.table(v, path)?;
        let kind = self
            .required(t, path, "kind")
            .and_then(|v| self.string(v, &join(path, "kind")))?;
        match kind.as_str() {
            "pure" => {
                self.keys(t, path, &["kind", "q"]);
                let qp = join(path, "q");
                let q = self.required(t, path, "q").and_then(|v| self.integer(v, &qp, 1))?;
                if q as usize > MAX_ORDER {
                    self.fail(&qp, format!("at most {MAX_ORDER}, got {q}"));
                    return None;
                }
                Some(PhiSpec::Pure { q: q as usize })
            }
            "indicator" => {
                self.keys(t, path, &["kind", "level"]);
                let level = self
                    .required(t, path, "level")
                    .and_then(|v| self.float(v, &join(path, "level")))?;
                Some(PhiSpec::Indicator { level })
            }
            other => {
                self.fail(
                    &join(path, "kind"),
                    format!("unknown kind `{other}` (expected pure, indicator)"),
                );
                None
            }
        }
    }

    fn ladder(&mut self, v: &Value, path: &str, blocks: Option<usize>) -> Option<LadderSpec> {
        let t = self.table(v, path)?;
        self.keys(t, path, &["rungs", "t", "exponents"]);
        let uints = |c: &mut Self, v: &Value, p: &str, min: i64| -> Option<Vec<u64>> {
            let a = c.array(v, p)?;
            a.iter()
                .enumerate()
                .map(|(i, v)| c.integer(v, &format!("{p}[{i}]"), min).map(|x| x as u64))
                .collect::<Vec<_>>()
                .into_iter()
                .collect()
        };
        let rp = join(path, "rungs");
        let rungs = t.get("rungs").and_then(|v| {
            let a = self.array(v, &rp)?;
            a.iter()
                .enumerate()
                .map(|(i, r)| {
                    uints(self, r, &format!("{rp}[{i}]"), 1).map(|r| r.into_iter().map(|x| x as usize).collect())
                })
                .collect::<Vec<Option<Vec<usize>>>>()
                .into_iter()
                .collect::<Option<Vec<Vec<usize>>>>()
        });
        let tp = join(path, "t");
        let ts = t.get("t").and_then(|v| uints(self, v, &tp, 2));
        let ep = join(path, "exponents");
        let exponents = t.get("exponents").and_then(|v| {
            let a = self.array(v, &ep)?;
            a.iter()
                .enumerate()
                .map(|(i, x)| {
                    let p = format!("{ep}[{i}]");
                    let g = self.float(x, &p)?;
                    if g < 0.0 {
                        self.fail(&p, format!("must be nonnegative, got {g}"));
                        return None;
                    }
                    Some(g)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Option<Vec<f64>>>()
        });
        let has = |k: &str| t.contains_key(k);
        if has("rungs") == has("t") {
            self.fail(path, "give exactly one of `rungs` or `t`");
            return None;
        }
        if has("rungs") && has("exponents") {
            self.fail(&ep, "exponents only apply to a `t` ladder");
        }
        let spec = LadderSpec {
            rungs: if has("rungs") { Some(rungs?) } else { None },
            t: if has("t") { Some(ts?) } else { None },
            exponents: if has("exponents") { Some(exponents?) } else { None },
        };
        let blocks = blocks?;
        if let Some(e) = &spec.exponents {
            if e.len() != blocks {
                self.fail(&ep, format!("needs one exponent per block ({blocks}), got {}", e.len()));
                return None;
            }
        }
        let sides = spec.sides(blocks).ok()?;
        let key = if spec.rungs.is_some() { rp } else { tp };
        if sides.is_empty() {
            self.fail(&key, "ladder is empty");
            return None;
        }
        for (i, s) in sides.iter().enumerate() {
            if s.len() != blocks {
                self.fail(
                    &format!("{key}[{i}]"),
                    format!("needs one side per block ({blocks}), got {}", s.len()),
                );
                return None;
            }
        }
        for (i, w) in sides.windows(2).enumerate() {
            let grows = w[0].iter().zip(&w[1]).all(|(a, b)| b >= a) && w[1] != w[0];
            if !grows {
                self.fail(
                    &format!("{key}[{}]", i + 1),
                    format!("ladder must be strictly increasing: {:?} after {:?}", w[1], w[0]),
                );
            }
        }
        Some(spec)
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Parses and validates an experiment config, collecting every violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = toml::from_str(text).map_err(|e| {
        Error::Config(vec![Violation {
            path: String::new(),
            message: format!("not valid TOML: {e}"),
        }])
    })?;
    let mut c = Checker { violations: Vec::new() };
    c.keys(
        &root,
        "",
        &[
            "schema",
            "name",
            "seed",
            "replicates",
            "outputs",
            "covariance",
            "phi",
            "ladder",
        ],
    );
    let schema = c.required(&root, "", "schema").and_then(|v| c.string(v, "schema"));
    if let Some(s) = &schema {
        if s != SCHEMA {
            c.fail("schema", format!("unsupported schema `{s}` (expected `{SCHEMA}`)"));
        }
    }
    let name = c.required(&root, "", "name").and_then(|v| c.string(v, "name"));
    if let Some(n) = &name {
        if n.is_empty() || !n.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
            c.fail(
                "name",
                "must be nonempty and use only ASCII letters, digits, '-', '_' or '.'",
            );
        }
    }
    let seed = c.required(&root, "", "seed").and_then(|v| c.integer(v, "seed", 0));
    let replicates = c
        .required(&root, "", "replicates")
        .and_then(|v| c.integer(v, "replicates", MIN_REPLICATES as i64));
    let outputs = match root.get("outputs") {
        None => Some([OutputKind::Normality].into_iter().collect()),
        Some(v) => c.array(v, "outputs").and_then(|a| {
            a.iter()
                .enumerate()
                .map(|(i, v)| {
                    let p = format!("outputs[{i}]");
                    let s = c.string(v, &p)?;
                    match Value::String(s.clone()).try_into::<OutputKind>() {
                        Ok(k) => Some(k),
                        Err(_) => {
                            c.fail(
                                &p,
                                format!("unknown output `{s}` (expected normality, kurtosis_series, rate_fit, chaos_reports)"),
                            );
                            None
                        }
                    }
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Option<BTreeSet<OutputKind>>>()
        }),
    };
    let covariance = c
        .required(&root, "", "covariance")
        .and_then(|v| c.covariance(v, "covariance"));
    let phi = c.required(&root, "", "phi").and_then(|v| c.phi(v, "phi"));
    let blocks = covariance.as_ref().map(|s| s.block_dims().len());
    let ladder = c
        .required(&root, "", "ladder")
        .and_then(|v| c.ladder(v, "ladder", blocks));
    if !c.violations.is_empty() {
        return Err(Error::Config(c.violations));
    }
    match (schema, name, seed, replicates, outputs, covariance, phi, ladder) {
        (
            Some(schema),
            Some(name),
            Some(seed),
            Some(replicates),
            Some(outputs),
            Some(covariance),
            Some(phi),
            Some(ladder),
        ) => Ok(ExperimentConfig {
            schema,
            name,
            seed: seed as u64,
            replicates: replicates as usize,
            outputs,
            covariance,
            phi,
            ladder,
        }),
        _ => Err(Error::Config(vec![Violation {
            path: String::new(),
            message: "incomplete config".into(),
        }])),
    }
}

pub fn serialize_config(config: &ExperimentConfig) -> Result<String> {
    config.to_toml()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub config: PathBuf,
    pub result: PathBuf,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub seed: u64,
    pub files: RunFiles,
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// One CSV row per rung.
pub fn write_csv(result: &ExperimentResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record([
        "rung",
        "n",
        "points",
        "mean",
        "mean_se",
        "var",
        "var_se",
        "skew",
        "skew_se",
        "kurtosis",
        "kurtosis_se",
        "ks",
        "ks_critical",
        "gaussian",
        "exact_kurtosis",
    ])
    .map_err(ser)?;
    for r in &result.rungs {
        let s = &r.stats;
        let n = r.sides.iter().max().copied().unwrap_or(0);
        w.write_record([
            r.rung.to_string(),
            n.to_string(),
            r.points.to_string(),
            s.mean.value.to_string(),
            s.mean.stderr.to_string(),
            s.variance.value.to_string(),
            s.variance.stderr.to_string(),
            s.skewness.value.to_string(),
            s.skewness.stderr.to_string(),
            s.excess_kurtosis.value.to_string(),
            s.excess_kurtosis.stderr.to_string(),
            s.ks.to_string(),
            s.ks_critical.to_string(),
            r.gaussian.to_string(),
            r.exact_fourth_cumulant.map(|k| k.0.to_string()).unwrap_or_default(),
        ])
        .map_err(ser)?;
    }
    w.flush()?;
    Ok(())
}

fn create_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| io_at(path, e))?;
    f.write_all(bytes).map_err(|e| io_at(path, e))?;
    Ok(())
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Writes config, result JSON, rung CSV and manifest under `dir`. Existing
/// files are never replaced: a clash moves all four to the next free
/// `-<k>` suffix.
pub fn persist_result(result: &ExperimentResult, dir: &Path, started_at: DateTime<Utc>) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    let stem = &result.config.name;
    let files = (0..)
        .map(|k| {
            let base = if k == 0 { stem.clone() } else { format!("{stem}-{k}") };
            RunFiles {
                config: dir.join(format!("{base}.config.toml")),
                result: dir.join(format!("{base}.result.json")),
                csv: dir.join(format!("{base}.rungs.csv")),
                manifest: dir.join(format!("{base}.manifest.json")),
            }
        })
        .find(|f| [&f.config, &f.result, &f.csv, &f.manifest].iter().all(|p| !p.exists()))
        .expect("unbounded suffixes");
    create_new(&files.config, serialize_config(&result.config)?.as_bytes())?;
    let json = serde_json::to_string_pretty(result).map_err(|e| Error::Serialization(e.to_string()))?;
    create_new(&files.result, json.as_bytes())?;
    let mut csv_bytes = Vec::new();
    write_csv(result, &mut csv_bytes)?;
    create_new(&files.csv, &csv_bytes)?;
    let manifest = RunManifest {
        config_hash: result.config_hash.clone(),
        tool_version: result.code_version.clone(),
        started_at: timestamp(started_at),
        finished_at: timestamp(Utc::now()),
        seed: result.config.seed,
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    create_new(&manifest.files.manifest, text.as_bytes())?;
    Ok(manifest)
}

/// Recomputes the hash of the stored config and of the config embedded in
/// the stored result; true when both match the manifest.
pub fn verify_manifest(path: &Path) -> Result<bool> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| io_at(p, e));
    let manifest: RunManifest = serde_json::from_str(&read(path)?).map_err(|e| Error::Serialization(e.to_string()))?;
    let stored = read(&manifest.files.config)?;
    let digest: String = Sha256::digest(stored.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let result: ExperimentResult =
        serde_json::from_str(&read(&manifest.files.result)?).map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(digest == manifest.config_hash && result.config.hash()? == manifest.config_hash)
}

#[derive(Debug, Parser)]
#[command(
    name = "hermfield",
    version,
    about = "Hermite functionals of Gaussian fields on growing lattices"
)]
struct Cli {
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config and report the sampler and embedding spectrum per rung.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact chaos diagnostics at the Hermite rank for each rung.
    Chaos {
        #[arg(long)]
        config: PathBuf,
        /// Only this rung.
        #[arg(long)]
        rung: Option<usize>,
    },
    /// Limit regime of the configured model and growth path.
    Classify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full Monte Carlo run, persisted under `--out`.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sheet rate table `g(q, H, N)`, or the sheet regime with `--alpha`/`--beta`.
    Rates {
        /// Hermite order.
        #[arg(long, default_value_t = 2)]
        q: usize,
        /// Comma-separated Hurst indices.
        #[arg(long, value_delimiter = ',')]
        hurst: Vec<f64>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n: Vec<f64>,
        /// Hurst index of the first sheet direction.
        #[arg(long, requires = "beta")]
        alpha: Option<f64>,
        /// Hurst index of the second sheet direction.
        #[arg(long, requires = "alpha")]
        beta: Option<f64>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    parse_config(&text)
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Serialization(e.to_string()))
}

#[derive(Serialize)]
struct RungSpectrum {
    rung: usize,
    sides: Vec<usize>,
    sampler: crate::fieldsim::SamplerMethod,
    embedding_shape: Option<Vec<usize>>,
    min_eigenvalue: Option<f64>,
}

#[derive(Serialize)]
struct RateRow {
    q: usize,
    hurst: f64,
    n: f64,
    g: f64,
}

fn dispatch(command: Command) -> Result<String> {
    let text = match command {
        Command::Validate { config } => {
            let c = load(&config)?;
            let cov = c.covariance.build()?;
            let mut rows = Vec::new();
            for (i, lattice) in c.lattices()?.iter().enumerate() {
                let s = build_sampler(&cov, lattice).map_err(|e| Error::Rung {
                    rung: i,
                    source: Box::new(e),
                })?;
                rows.push(RungSpectrum {
                    rung: i,
                    sides: lattice.blocks.iter().map(|b| b.sizes[0]).collect(),
                    sampler: s.method(),
                    embedding_shape: s.embedding_shape().map(<[usize]>::to_vec),
                    min_eigenvalue: Some(s.min_eigenvalue()).filter(|x| x.is_finite()),
                });
            }
            to_json(&rows)?
        }
        Command::Chaos { config, rung } => {
            let c = load(&config)?;
            let cov = c.covariance.build()?;
            let rank = c.phi.build()?.rank()?;
            let lattices = c.lattices()?;
            let picked: Vec<usize> = match rung {
                Some(r) if r < lattices.len() => vec![r],
                Some(r) => {
                    return Err(Error::OutOfRange {
                        coordinate: r,
                        size: lattices.len(),
                    })
                }
                None => (0..lattices.len()).collect(),
            };
            let reports = picked
                .into_iter()
                .map(|i| {
                    chaos_report(&cov, &lattices[i], rank).map_err(|e| Error::Rung {
                        rung: i,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            to_json(&reports)?
        }
        Command::Classify { config } => {
            let c = load(&config)?;
            let cov = c.covariance.build()?;
            let rank = c.phi.build()?.rank()?;
            let growth = c.ladder.growth(cov.block_dims().len())?;
            to_json(&classify(&cov, rank, &growth)?)?
        }
        Command::Experiment { config, out: dir, seed } => {
            let mut c = load(&config)?;
            if let Some(s) = seed {
                if s > i64::MAX as u64 {
                    return Err(Error::InvalidParameter(format!("seed must be at most {}", i64::MAX)));
                }
                c.seed = s;
            }
            let started = Utc::now();
            let result = run_experiment(&c)?;
            let manifest = persist_result(&result, &dir, started)?;
            to_json(&manifest)?
        }
        Command::Rates {
            q,
            hurst,
            n,
            alpha,
            beta,
        } => match (alpha, beta) {
            (Some(a), Some(b)) => to_json(&fbs_regime(a, b, q)?)?,
            _ => {
                let mut rows = Vec::new();
                for &h in &hurst {
                    for &size in &n {
                        rows.push(RateRow {
                            q,
                            hurst: h,
                            n: size,
                            g: rate_g(q, h, size)?,
                        });
                    }
                }
                to_json(&rows)?
            }
        },
    };
    Ok(text)
}

/// Runs the command line; returns the process exit code. Clap usage errors
/// exit with 2, like validation failures.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let outcome = with_threads(cli.threads, || dispatch(cli.command));
    match outcome.and_then(|text| Ok(writeln!(out, "{text}")?)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(_threads: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"
schema = "hermfield.experiment.v1"
name = "minimal"
seed = 1
replicates = 100

[covariance]
structure = "separable"
factors = [{ family = "white_noise" }]

[phi]
kind = "pure"
q = 2

[ladder]
rungs = [[8], [16]]
"#;

    fn violations(text: &str) -> Vec<Violation> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn minimal_round_trips() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.outputs, [OutputKind::Normality].into_iter().collect());
        assert_eq!(
            c.covariance,
            CovarianceSpec::Separable {
                factors: vec![FactorSpec::WhiteNoise { dim: 1 }]
            }
        );
        let text = serialize_config(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
        let a: Table = toml::from_str(&text).unwrap();
        let b: Table = toml::from_str(&serialize_config(&parse_config(&text).unwrap()).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace(
            "factors = [{ family = \"white_noise\" }]",
            "factors = [{ family = \"fgn\", hurstt = 0.3 }]",
        );
        let v = violations(&text);
        assert!(v.iter().any(|v| v.path == "covariance.factors[0].hurstt"), "{v:?}");
        assert!(v.iter().any(|v| v.path == "covariance.factors[0].hurst"), "{v:?}");
    }

    #[test]
    fn negative_beta_names_the_block() {
        let text = MINIMAL.replace(
            "factors = [{ family = \"white_noise\" }]",
            "factors = [{ family = \"white_noise\" }, { family = \"cauchy\", beta = -1 }]",
        );
        let v = violations(&text);
        assert!(v.iter().any(|v| v.path == "covariance.factors[1].beta"), "{v:?}");
    }

    #[test]
    fn collects_every_violation() {
        let text = MINIMAL
            .replace("replicates = 100", "replicates = 20\ncolour = 3")
            .replace("q = 2", "q = \"two\"")
            .replace("rungs = [[8], [16]]", "rungs = [[16], [8]]");
        let v = violations(&text);
        let paths: Vec<&str> = v.iter().map(|v| v.path.as_str()).collect();
        for p in ["replicates", "colour", "phi.q", "ladder.rungs[1]"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
        assert!(matches!(parse_config("not = [toml"), Err(Error::Config(_))));
    }

    #[test]
    fn model_level_constraints_surface() {
        let text = MINIMAL.replace(
            "structure = \"separable\"\nfactors = [{ family = \"white_noise\" }]",
            "structure = \"additive\"\nfactors = [{ family = \"white_noise\" }, { family = \"white_noise\" }]\nweights = [0.5, 0.6]",
        );
        let v = violations(&text);
        assert!(v.iter().any(|v| v.path == "covariance.weights"), "{v:?}");
    }

    fn sample_result() -> ExperimentResult {
        run_experiment(&parse_config(MINIMAL).unwrap()).unwrap()
    }

    #[test]
    fn persist_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_result();
        let m1 = persist_result(&r, dir.path(), Utc::now()).unwrap();
        let m2 = persist_result(&r, dir.path(), Utc::now()).unwrap();
        assert_ne!(m1.files.result, m2.files.result);
        assert!(m2.files.result.to_string_lossy().ends_with("minimal-1.result.json"));
        assert!(verify_manifest(&m1.files.manifest).unwrap());
        assert!(verify_manifest(&m2.files.manifest).unwrap());
        let back: ExperimentResult = serde_json::from_str(&fs::read_to_string(&m1.files.result).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = fs::read_to_string(&m1.files.csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + r.rungs.len());
        assert!(csv.starts_with("rung,n,points,mean,"));
        fs::write(
            &m1.files.config,
            serialize_config(&r.config).unwrap().replace("seed = 1", "seed = 2"),
        )
        .unwrap();
        assert!(!verify_manifest(&m1.files.manifest).unwrap());
    }

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().map(OsString::from), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn command_line_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.toml");
        fs::write(&good, MINIMAL).unwrap();
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, MINIMAL.replace("replicates = 100", "replicates = 5")).unwrap();
        let g = good.to_str().unwrap();
        let (code, out, _) = run_args(&["hermfield", "validate", "--config", g]);
        assert_eq!(code, 0);
        assert!(out.contains("kronecker_circulant"));
        let (code, _, err) = run_args(&["hermfield", "validate", "--config", bad.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(err.contains("replicates"));
        let (code, _, _) = run_args(&["hermfield", "chaos", "--config", g]);
        assert_eq!(code, 0);
        let (code, out, _) = run_args(&["hermfield", "classify", "--config", g]);
        assert_eq!(code, 0);
        assert!(out.contains("CENTRAL"));
        let (code, out, _) = run_args(&["hermfield", "rates", "--q", "2", "--hurst", "0.3,0.6", "--n", "100"]);
        assert_eq!(code, 0);
        assert_eq!(out.matches("\"g\"").count(), 2);
        let (code, _, _) = run_args(&["hermfield", "rates", "--hurst", "0.9", "--n", "100"]);
        assert_eq!(code, 2);
        let (code, out, _) = run_args(&["hermfield", "rates", "--alpha", "0.3", "--beta", "0.9"]);
        assert_eq!(code, 0);
        assert!(out.contains("\"case\": 4"));
        let (code, _, _) = run_args(&["hermfield", "validate", "--config", "/nonexistent/x.toml"]);
        assert_eq!(code, 1);
        let (code, _, _) = run_args(&["hermfield", "frobnicate"]);
        assert_eq!(code, 2);
        let out_dir = dir.path().join("runs");
        let (code, out, err) = run_args(&[
            "hermfield",
            "--threads",
            "2",
            "experiment",
            "--config",
            g,
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "5",
        ]);
        assert_eq!(code, 0, "{err}");
        let m: RunManifest = serde_json::from_str(&out).unwrap();
        assert_eq!(m.seed, 5);
        assert!(verify_manifest(&m.files.manifest).unwrap());
    }

    #[test]
    fn numerical_failures_exit_three() {
        let e = Error::NonEmbeddable { min_eigenvalue: -1.0 };
        assert_eq!(e.exit_code(), 3);
        assert_eq!(
            Error::Rung {
                rung: 1,
                source: Box::new(e)
            }
            .exit_code(),
            3
        );
    }

    fn arb_factor() -> impl Strategy<Value = FactorSpec> {
        prop_oneof![
            (0.01f64..0.99).prop_map(|hurst| FactorSpec::Fgn { hurst }),
            (0.01f64..4.0, 1usize..3).prop_map(|(beta, dim)| FactorSpec::Cauchy { beta, dim }),
            (0.1f64..10.0, 1usize..3).prop_map(|(scale, dim)| FactorSpec::Exponential { scale, dim }),
            (1usize..3).prop_map(|dim| FactorSpec::WhiteNoise { dim }),
        ]
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            factors in proptest::collection::vec(arb_factor(), 1..4),
            seed in 0u64..(i64::MAX as u64),
            replicates in 100usize..100_000,
            q in 1usize..6,
            level in -3.0f64..3.0,
            use_level in any::<bool>(),
            outputs in proptest::collection::btree_set(prop_oneof![
                Just(OutputKind::Normality), Just(OutputKind::KurtosisSeries),
                Just(OutputKind::RateFit), Just(OutputKind::ChaosReports)], 0..4),
            t0 in 16u64..50,
        ) {
            let blocks = factors.len();
            let c = ExperimentConfig {
                schema: SCHEMA.into(),
                name: "prop".into(),
                seed,
                replicates,
                outputs,
                covariance: CovarianceSpec::Separable { factors },
                phi: if use_level { PhiSpec::Indicator { level } } else { PhiSpec::Pure { q } },
                ladder: LadderSpec { rungs: None, t: Some(vec![t0, 2 * t0, 4 * t0]), exponents: Some(vec![0.5; blocks]) },
            };
            let text = serialize_config(&c).unwrap();
            prop_assert_eq!(parse_config(&text).unwrap(), c);
        }
    }
}

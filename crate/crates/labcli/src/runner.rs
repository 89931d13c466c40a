use crate::catalog::Experiment;
use crate::error::{io_err, usage, Result};
use crate::experiments::{Check, Settings};
use crate::params::Params;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";

/// A named experiment, its resolved configuration, the seeds and where to
/// write artifacts.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub params: Params,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn new(params: Params, seeds: Vec<u64>, out: impl Into<PathBuf>) -> Result<Self> {
        if seeds.is_empty() {
            return usage("at least one seed is required");
        }
        let mut seen = BTreeSet::new();
        if let Some(s) = seeds.iter().find(|s| !seen.insert(**s)) {
            return usage(format!("seed {s} given twice"));
        }
        Ok(ExperimentSpec {
            params,
            seeds,
            out: out.into(),
        })
    }

    pub fn experiment(&self) -> Experiment {
        self.params.experiment()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub key: String,
    pub values: Vec<String>,
}

/// One (configuration, seed) sub-run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<String>,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionRecord {
    pub name: String,
    /// Absent for sweep-level assertions.
    pub config_id: Option<String>,
    /// Absent for assertions pooled over seeds.
    pub seed: Option<u64>,
    pub passed: bool,
    pub detail: String,
}

/// Record of one invocation. Contains no timestamps or absolute paths, so the
/// same spec and seeds give a byte-identical file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub spec_hash: String,
    pub params: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepInfo>,
    pub runs: Vec<RunRecord>,
    /// Files computed over all seeds of one configuration.
    pub pooled_outputs: Vec<String>,
    pub aggregate: Option<String>,
    pub declared_assertions: usize,
    pub assertions: Vec<AssertionRecord>,
    pub pass: bool,
}

impl RunManifest {
    pub fn passed_count(&self) -> usize {
        self.assertions.iter().filter(|a| a.passed).count()
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// First 8 hex digits of the SHA-256 of the experiment name and its sorted
/// `key=value` lines.
pub fn config_id(params: &Params) -> String {
    let mut h = Sha256::new();
    h.update(params.experiment().name().as_bytes());
    for (k, v) in params.values() {
        h.update(format!("\n{k}={v}").as_bytes());
    }
    hex(&h.finalize())[..8].to_string()
}

fn spec_hash(params: &Params, seeds: &[u64], sweep: Option<&SweepInfo>) -> Result<String> {
    let body = serde_json::json!({
        "experiment": params.experiment().name(),
        "params": params.values(),
        "seeds": seeds,
        "sweep": sweep,
    });
    Ok(hex(&Sha256::digest(serde_json::to_vec(&body)?)))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err(&path))
}

fn file_name(exp: Experiment, config_id: &str, seed: u64, suffix: &str) -> String {
    if suffix.is_empty() {
        format!("{exp}_{config_id}_{seed}.csv")
    } else {
        format!("{exp}_{config_id}_{seed}_{suffix}.csv")
    }
}

/// Results of all seeds of one configuration.
struct ConfigResult {
    config_id: String,
    runs: Vec<RunRecord>,
    assertions: Vec<AssertionRecord>,
    pooled_outputs: Vec<String>,
    declared: usize,
    /// Per seed, the scalar summaries of the sub-run (empty if it failed).
    metrics: Vec<BTreeMap<String, f64>>,
}

fn run_config(params: &Params, seeds: &[u64], out: &Path, sweep_value: Option<&str>) -> Result<ConfigResult> {
    let settings = Settings::from_params(params)?;
    let exp = params.experiment();
    let cid = config_id(params);
    let declared = settings.declared();
    let pooled = settings.declared_pooled();
    let mut res = ConfigResult {
        config_id: cid.clone(),
        runs: Vec::new(),
        assertions: Vec::new(),
        pooled_outputs: Vec::new(),
        declared: declared.len() * seeds.len() + pooled.len(),
        metrics: Vec::new(),
    };
    let record = |c: &Check, seed: Option<u64>| AssertionRecord {
        name: c.name.clone(),
        config_id: Some(cid.clone()),
        seed,
        passed: c.passed,
        detail: c.detail.clone(),
    };
    for &seed in seeds {
        let mut run = RunRecord {
            config_id: cid.clone(),
            seed,
            sweep_value: sweep_value.map(String::from),
            outputs: Vec::new(),
            error: None,
        };
        let mut checks: Vec<Check> = Vec::new();
        match settings.run_seed(exp, &cid, seed) {
            Ok(o) => {
                for (suffix, body) in &o.files {
                    let name = file_name(exp, &cid, seed, suffix);
                    write_file(out, &name, body)?;
                    run.outputs.push(name);
                }
                checks = o.checks;
                res.metrics.push(o.metrics);
            }
            Err(e) => {
                run.error = Some(e.to_string());
                res.metrics.push(BTreeMap::new());
            }
        }
        // every declared assertion gets an outcome, in declared order
        for name in &declared {
            let c = match checks.iter().find(|c| &c.name == name) {
                Some(c) => c.clone(),
                None => Check {
                    name: name.clone(),
                    passed: false,
                    detail: match &run.error {
                        Some(e) => format!("run failed: {e}"),
                        None => "no outcome recorded".into(),
                    },
                },
            };
            res.assertions.push(record(&c, Some(seed)));
        }
        eprintln!(
            "{exp} {cid} seed {seed}: {}",
            run.error.as_deref().unwrap_or(&format!(
                "{}/{} assertions passed",
                checks.iter().filter(|c| c.passed).count(),
                declared.len()
            ))
        );
        res.runs.push(run);
    }
    if !pooled.is_empty() {
        let (files, checks, failure) = match settings.run_pooled(seeds) {
            Ok((f, c)) => (f, c, None),
            Err(e) => (vec![], vec![], Some(e.to_string())),
        };
        for (suffix, body) in &files {
            let name = format!("{exp}_{cid}_{suffix}.csv");
            write_file(out, &name, body)?;
            res.pooled_outputs.push(name);
        }
        for name in &pooled {
            let c = checks
                .iter()
                .find(|c| &c.name == name)
                .cloned()
                .unwrap_or_else(|| Check {
                    name: name.clone(),
                    passed: false,
                    detail: format!(
                        "pooled statistics failed: {}",
                        failure.as_deref().unwrap_or("no outcome recorded")
                    ),
                });
            res.assertions.push(record(&c, None));
        }
    }
    Ok(res)
}

fn finish(
    params: &Params,
    seeds: &[u64],
    out: &Path,
    sweep: Option<SweepInfo>,
    configs: Vec<ConfigResult>,
    extra: Vec<AssertionRecord>,
    aggregate: Option<String>,
) -> Result<RunManifest> {
    let declared = configs.iter().map(|c| c.declared).sum::<usize>() + extra.len();
    let mut runs = Vec::new();
    let mut pooled_outputs = Vec::new();
    let mut assertions = Vec::new();
    for c in configs {
        runs.extend(c.runs);
        pooled_outputs.extend(c.pooled_outputs);
        assertions.extend(c.assertions);
    }
    assertions.extend(extra);
    debug_assert_eq!(declared, assertions.len());
    let pass = declared == assertions.len() && assertions.iter().all(|a| a.passed);
    let m = RunManifest {
        tool: "ganlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: params.experiment().name().into(),
        spec_hash: spec_hash(params, seeds, sweep.as_ref())?,
        params: params.values().clone(),
        seeds: seeds.to_vec(),
        sweep,
        runs,
        pooled_outputs,
        aggregate,
        declared_assertions: declared,
        assertions,
        pass,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    write_file(out, MANIFEST_NAME, &text)?;
    Ok(m)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

/// Runs the experiment once per seed and writes the CSVs and the manifest.
pub fn run(spec: &ExperimentSpec) -> Result<RunManifest> {
    Settings::from_params(&spec.params)?;
    create_out(&spec.out)?;
    let c = run_config(&spec.params, &spec.seeds, &spec.out, None)?;
    finish(&spec.params, &spec.seeds, &spec.out, None, vec![c], vec![], None)
}

/// Direction a sweep-level assertion expects of one metric.
struct Trend {
    name: &'static str,
    metric: &'static str,
    /// The metric should fall as the swept value moves in this direction.
    falls_as_value_rises: bool,
}

fn trend(exp: Experiment, key: &str) -> Option<Trend> {
    match (exp, key) {
        (Experiment::WassersteinBounds, "sigma") => Some(Trend {
            name: "matched_gap_shrinks_with_sigma",
            metric: "matched_gap",
            falls_as_value_rises: false,
        }),
        (Experiment::Vanishing, "d_iters") => Some(Trend {
            name: "final_gen_grad_norm_decreases_with_d_iters",
            metric: "final_gen_grad_norm",
            falls_as_value_rises: true,
        }),
        _ => None,
    }
}

/// Runs the cross product of `values` and seeds, writes every sub-run's CSVs,
/// an aggregate CSV with the swept value as a column, and the manifest.
pub fn sweep(spec: &ExperimentSpec, key: &str, values: &[String]) -> Result<RunManifest> {
    let exp = spec.experiment();
    if values.is_empty() {
        return usage("a sweep needs at least one value");
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut p = spec.params.clone();
        p.set(key, v)?;
        Settings::from_params(&p)?;
        configs.push(p);
    }
    create_out(&spec.out)?;
    let mut results = Vec::with_capacity(values.len());
    for (p, v) in configs.iter().zip(values) {
        results.push(run_config(p, &spec.seeds, &spec.out, Some(v))?);
    }

    let names: BTreeSet<&String> = results
        .iter()
        .flat_map(|r| r.metrics.iter().flat_map(|m| m.keys()))
        .collect();
    let mut csv = format!("{key},seed,config_id");
    for n in &names {
        let _ = write!(csv, ",{n}");
    }
    csv.push('\n');
    for (r, v) in results.iter().zip(values) {
        for (seed, m) in spec.seeds.iter().zip(&r.metrics) {
            let _ = write!(csv, "{v},{seed},{}", r.config_id);
            for n in &names {
                match m.get(*n) {
                    Some(x) => {
                        let _ = write!(csv, ",{x:.16e}");
                    }
                    None => csv.push_str(",nan"),
                }
            }
            csv.push('\n');
        }
    }
    let aggregate = format!("{exp}_sweep_{}.csv", key.replace('.', "_"));
    write_file(&spec.out, &aggregate, &csv)?;

    let mut extra = Vec::new();
    if let (Some(t), true) = (trend(exp, key), values.len() > 1) {
        for (si, &seed) in spec.seeds.iter().enumerate() {
            extra.push(trend_assertion(&t, values, &results, si, seed));
        }
    }
    let info = SweepInfo {
        key: key.to_string(),
        values: values.to_vec(),
    };
    finish(
        &spec.params,
        &spec.seeds,
        &spec.out,
        Some(info),
        results,
        extra,
        Some(aggregate),
    )
}

fn trend_assertion(t: &Trend, values: &[String], results: &[ConfigResult], si: usize, seed: u64) -> AssertionRecord {
    let mut pts: Vec<(f64, Option<f64>)> = values
        .iter()
        .zip(results)
        .map(|(v, r)| {
            (
                v.parse::<f64>().unwrap_or(f64::NAN),
                r.metrics[si].get(t.metric).copied(),
            )
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !t.falls_as_value_rises {
        pts.reverse();
    }
    let shown: Vec<String> = pts
        .iter()
        .map(|(v, m)| match m {
            Some(m) => format!("{v}:{m:.3e}"),
            None => format!("{v}:missing"),
        })
        .collect();
    let passed = pts
        .windows(2)
        .all(|w| matches!((w[0].1, w[1].1), (Some(a), Some(b)) if b < a));
    AssertionRecord {
        name: t.name.to_string(),
        config_id: None,
        seed: Some(seed),
        passed,
        detail: format!("{} along the sweep: {}", t.metric, shown.join(" -> ")),
    }
}

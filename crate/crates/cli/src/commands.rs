use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mmgm::datamodel::{load_dataset, save_dataset, MatrixBundle};
use mmgm::experiments::{run_coverage, run_roc, CoverageSpec, RocSpec};
use mmgm::inference::{self, Estimates, ModelFit, TestOptions};
use mmgm::simulate::{simulate_dataset, SimulationSpec};
use mmgm::spatial::SpatialOptions;
use mmgm::temporal::TemporalOptions;
use mmgm::{EdgeSet, MultiSessionDataset};

use crate::config::{gamma_value, output_name, parse_list, spec_hash, Overlay};
use crate::{CliError, CoverageArgs, FitArgs, FitFlags, RocArgs, SimulateArgs, SimulationFlags, TestArgs};

/// Keys holding file-system locations; they do not enter the spec hash.
const PATH_KEYS: [&str; 4] = ["out", "data", "fit_dir", "signs"];

fn path_free<T: Serialize>(config: &T) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Value::Object(map) = &mut v {
        for k in PATH_KEYS {
            map.remove(k);
        }
    }
    v
}

fn list<T: std::str::FromStr>(flag: &str, s: &Option<String>) -> Result<Option<Vec<T>>, CliError> {
    s.as_deref()
        .map(|v| parse_list(v).map_err(|e| CliError::config(format!("--{flag}: {e}"))))
        .transpose()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn apply_simulation(ov: &mut Overlay, prefix: &str, f: &SimulationFlags) -> Result<(), CliError> {
    let at = |k: &'static str| [prefix, k];
    ov.set(&at("kind"), f.kind.clone());
    let dims = |k: &'static str| [prefix, "dims", k];
    let n = list::<usize>("n", &f.n)?;
    let m = f.m.or_else(|| ov.get(&dims("m")).and_then(Value::as_u64).map(|v| v as usize));
    let n = match (n, m) {
        (Some(n), Some(m)) if n.len() == 1 => Some(vec![n[0]; m]),
        (n, _) => n,
    };
    let m = f.m.or(n.as_ref().map(Vec::len));
    ov.set(&dims("m"), m);
    ov.set(&dims("n"), n);
    ov.set(&dims("p"), f.p);
    ov.set(&dims("q"), f.q);
    ov.set(&at("temporal_alpha"), list::<f64>("temporal-alpha", &f.temporal_alpha)?);
    ov.set(&at("edge_prob_override"), f.edge_prob);
    Ok(())
}

fn apply_fit(ov: &mut Overlay, prefix: &[&str], f: &FitFlags) -> Result<(), CliError> {
    let path = |a: &'static str, b: &'static str| -> Vec<&str> {
        let mut v = prefix.to_vec();
        v.push(a);
        v.push(b);
        v
    };
    if let Some(g) = &f.gamma {
        ov.set(&path("spatial", "gamma"), Some(gamma_value(g, f.c0, f.folds)?));
    } else if f.c0.is_some() {
        ov.set(&path("spatial", "gamma"), Some(gamma_value("theory", f.c0, None)?));
    }
    if f.no_target_scaling {
        ov.set(&path("spatial", "scale_by_target"), Some(false));
    }
    ov.set(&path("temporal", "bandwidth"), list::<usize>("bandwidth", &f.bandwidth)?);
    ov.set(&path("temporal", "rule"), f.bandwidth_rule.clone());
    ov.set(&path("temporal", "alpha"), list::<f64>("alpha", &f.alpha)?);
    ov.set(&path("temporal", "eta"), f.eta);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    simulation: SimulationSpec,
    out: PathBuf,
}

pub fn simulate(a: SimulateArgs) -> Result<Value, CliError> {
    let mut ov = Overlay::load(a.config.as_deref())?;
    apply_simulation(&mut ov, "simulation", &a.sim)?;
    ov.set(&["simulation", "seed"], a.seed);
    ov.set(&["out"], a.out);
    let cfg: SimulateConfig = ov.finish()?;
    cfg.simulation.validate()?;
    let ds = simulate_dataset(&cfg.simulation)?;
    save_dataset(&ds, &cfg.out)?;
    let spec = path_free(&cfg);
    let hash = spec_hash(&spec);
    let truth = ds.ground_truth.as_ref().expect("simulated data carries its truth");
    let summary = json!({
        "command": "simulate",
        "spec_hash": hash,
        "config": spec,
        "dims": ds.dims(),
        "support_edges": truth.zero_edges().len().abs_diff(ds.dims().q() * (ds.dims().q() - 1) / 2),
    });
    write_json(&cfg.out.join("simulate.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    data: PathBuf,
    out: PathBuf,
    #[serde(default)]
    spatial: SpatialOptions,
    #[serde(default)]
    temporal: TemporalOptions,
}

pub fn fit(a: FitArgs) -> Result<Value, CliError> {
    let mut ov = Overlay::load(a.config.as_deref())?;
    ov.set(&["data"], a.data);
    ov.set(&["out"], a.out);
    apply_fit(&mut ov, &[], &a.fit)?;
    let cfg: FitConfig = ov.finish()?;
    let ds = load_dataset(&cfg.data)?;
    let model = ModelFit::fit(&ds, &cfg.spatial, &cfg.temporal)?;
    ensure_dir(&cfg.out)?;
    model.to_bundle().save(&cfg.out, "fit")?;
    let spec = path_free(&cfg);
    let hash = spec_hash(&spec);
    let nodes = &model.spatial.nodes;
    let summary = json!({
        "command": "fit",
        "spec_hash": hash,
        "config": spec,
        "dims": ds.dims(),
        "frob_sq_over_p": model.temporal.frob_sq_over_p(),
        "bandwidth": model.temporal.sessions.iter().map(|s| s.bandwidth).collect::<Vec<_>>(),
        "ridge_points": model.temporal.sessions.iter().map(|s| s.ridge_points.clone()).collect::<Vec<_>>(),
        "gamma": nodes.iter().map(|n| n.gamma).collect::<Vec<_>>(),
        "max_kkt_residual": nodes.iter().map(|n| n.kkt_residual).fold(0.0, f64::max),
        "all_converged": nodes.iter().all(|n| n.converged),
    });
    write_json(&cfg.out.join("fit_summary.json"), &summary)?;
    Ok(summary)
}

fn default_edges() -> String {
    "off-diagonal".into()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestConfig {
    data: PathBuf,
    #[serde(default)]
    fit_dir: Option<PathBuf>,
    out: PathBuf,
    #[serde(default = "default_edges")]
    edges: String,
    #[serde(default)]
    signs: Option<PathBuf>,
    #[serde(default)]
    test: TestOptions,
    #[serde(default)]
    c: f64,
    #[serde(default)]
    spatial: SpatialOptions,
    #[serde(default)]
    temporal: TemporalOptions,
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>, CliError> {
    let bad = || CliError::config(format!("cannot parse node range `{s}` (expected A..B)"));
    let (a, b) = s.trim().split_once("..").ok_or_else(bad)?;
    Ok(a.trim().parse().map_err(|_| bad())?..b.trim().parse().map_err(|_| bad())?)
}

fn parse_pair(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("cannot parse edge `{s}`"));
    let (i, j) = s
        .trim()
        .split_once(['-', ','])
        .ok_or_else(bad)?;
    Ok((i.trim().parse().map_err(|_| bad())?, j.trim().parse().map_err(|_| bad())?))
}

/// Resolves an edge-set description against a dataset.
pub fn resolve_edges(spec: &str, ds: &MultiSessionDataset) -> Result<EdgeSet, CliError> {
    let q = ds.dims().q();
    let edges = match spec.split_once(':') {
        None if spec == "off-diagonal" || spec == "off" => EdgeSet::off_diagonal(q),
        None if spec == "zero" => ds
            .ground_truth
            .as_ref()
            .ok_or_else(|| CliError::config("edge set `zero` needs a dataset with ground truth"))?
            .zero_edges(),
        Some(("cross-block", ranges)) => {
            let (a, b) = ranges
                .split_once(',')
                .ok_or_else(|| CliError::config("cross-block needs two ranges A..B,C..D"))?;
            EdgeSet::cross_block(parse_range(a)?, parse_range(b)?, q)?
        }
        Some(("pairs", list)) => EdgeSet::new(
            list.split(';').filter(|s| !s.trim().is_empty()).map(parse_pair).collect::<Result<_, _>>()?,
            q,
        )?,
        Some(("file", path)) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(Path::new(path), e))?;
            let pairs = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
                .map(parse_pair)
                .collect::<Result<_, _>>()?;
            EdgeSet::new(pairs, q)?
        }
        _ => return Err(CliError::config(format!("unknown edge set `{spec}`"))),
    };
    Ok(edges)
}

fn read_signs(path: &Path, m: usize, k: usize) -> Result<DMatrix<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_list::<f64>(l).map_err(|e| CliError::config(format!("signs: {e}"))))
        .collect::<Result<_, _>>()?;
    if rows.len() != m || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::config(format!("signs file must have {m} rows of {k} values")));
    }
    Ok(DMatrix::from_fn(m, k, |l, e| rows[l][e]))
}

pub fn test(a: TestArgs) -> Result<Value, CliError> {
    let mut ov = Overlay::load(a.config.as_deref())?;
    ov.set(&["data"], a.data);
    ov.set(&["fit_dir"], a.fit_dir);
    ov.set(&["out"], a.out);
    ov.set(&["edges"], a.edges);
    ov.set(&["signs"], a.signs);
    ov.set(&["test", "alpha"], a.level);
    ov.set(&["test", "bootstrap"], a.bootstrap);
    ov.set(&["test", "seed"], a.seed);
    ov.set(&["c"], a.c);
    apply_fit(&mut ov, &[], &a.fit)?;
    let cfg: TestConfig = ov.finish()?;
    if cfg.signs.is_some() && cfg.c != 0.0 {
        return Err(CliError::config("signs cannot be combined with a c-level test"));
    }
    let ds = load_dataset(&cfg.data)?;
    let estimates = match &cfg.fit_dir {
        Some(dir) => Estimates::from_bundle(&MatrixBundle::load(dir.join("fit.json"))?, ds.dims().clone())?,
        None => ModelFit::fit(&ds, &cfg.spatial, &cfg.temporal)?.estimates(),
    };
    let edges = resolve_edges(&cfg.edges, &ds)?;
    let signs = cfg
        .signs
        .as_deref()
        .map(|p| read_signs(p, ds.dims().m(), edges.len()))
        .transpose()?;
    let outcome = if cfg.c > 0.0 {
        inference::c_level_test(&estimates, &edges, cfg.c, &cfg.test)?
    } else if cfg.c < 0.0 {
        return Err(mmgm::Error::NegativeC(cfg.c).into());
    } else {
        inference::simultaneous_test(&estimates, &edges, &cfg.test, signs.as_ref())?
    };
    let pvalues = inference::fit_pvalues(&estimates)?;
    let spec = path_free(&cfg);
    let hash = spec_hash(&spec);
    ensure_dir(&cfg.out)?;
    let mut csv = String::from("i,j,t_hat,single_edge_p\n");
    for (&(i, j), t) in outcome.statistic.edges.iter().zip(&outcome.statistic.t_hat) {
        csv.push_str(&format!("{i},{j},{t},{}\n", pvalues[(i, j)]));
    }
    write_text(&cfg.out.join(output_name("test_edges", &hash, cfg.test.seed, "csv")), &csv)?;
    let summary = json!({
        "command": "test",
        "spec_hash": hash,
        "config": spec,
        "result": outcome.result,
        "s_min_eigenvalue": outcome.covariance.min_eigenvalue,
        "s_nonpositive_diagonal": outcome.covariance.nonpositive_diagonal,
    });
    write_json(&cfg.out.join(output_name("test", &hash, cfg.test.seed, "json")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverageConfig {
    coverage: CoverageSpec,
    out: PathBuf,
}

pub fn coverage(a: CoverageArgs) -> Result<Value, CliError> {
    let ov = Overlay::load(a.config.as_deref())?;
    let mut ov = apply_nested_simulation(ov, "coverage", &a.sim)?;
    ov.set(&["coverage", "simulation", "seed"], a.sim_seed);
    ov.set(&["coverage", "replications"], a.replications);
    ov.set(&["coverage", "bootstrap"], a.bootstrap);
    ov.set(&["coverage", "levels"], list::<f64>("levels", &a.levels)?);
    ov.set(
        &["coverage", "edge_sets"],
        list::<String>("edge-sets", &a.edge_sets)?,
    );
    ov.set(&["coverage", "seed"], a.seed);
    ov.set(&["out"], a.out);
    apply_fit(&mut ov, &["coverage"], &a.fit)?;
    let cfg: CoverageConfig = ov.finish()?;
    let report = run_coverage(&cfg.coverage)?;
    let spec = path_free(&cfg);
    let hash = spec_hash(&spec);
    ensure_dir(&cfg.out)?;
    let seed = cfg.coverage.seed;
    write_text(&cfg.out.join(output_name("coverage", &hash, seed, "csv")), &report.to_csv())?;
    let summary = json!({
        "command": "coverage",
        "spec_hash": hash,
        "config": spec,
        "rows": report.rows,
        "failures": report.failures,
    });
    write_json(&cfg.out.join(output_name("coverage", &hash, seed, "json")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RocConfig {
    roc: RocSpec,
    out: PathBuf,
}

/// Applies simulation flags under `<section>.simulation`.
fn apply_nested_simulation(ov: Overlay, section: &str, f: &SimulationFlags) -> Result<Overlay, CliError> {
    let mut root = ov.into_value();
    let existing = root
        .get(section)
        .and_then(|s| s.get("simulation"))
        .cloned();
    let mut scratch = Overlay::from_value(json!({ "simulation": existing.unwrap_or(json!({})) }));
    apply_simulation(&mut scratch, "simulation", f)?;
    let sim = scratch.into_value()["simulation"].take();
    if !root.get(section).is_some_and(Value::is_object) {
        root[section] = json!({});
    }
    root[section]["simulation"] = sim;
    Ok(Overlay::from_value(root))
}

pub fn roc(a: RocArgs) -> Result<Value, CliError> {
    let ov = Overlay::load(a.config.as_deref())?;
    let mut ov = apply_nested_simulation(ov, "roc", &a.sim)?;
    ov.set(&["roc", "replications"], a.replications);
    ov.set(&["roc", "thresholds"], list::<f64>("thresholds", &a.thresholds)?);
    ov.set(&["roc", "seed"], a.seed);
    ov.set(&["out"], a.out);
    apply_fit(&mut ov, &["roc"], &a.fit)?;
    let cfg: RocConfig = ov.finish()?;
    let report = run_roc(&cfg.roc)?;
    let spec = path_free(&cfg);
    let hash = spec_hash(&spec);
    ensure_dir(&cfg.out)?;
    let seed = cfg.roc.seed;
    write_text(&cfg.out.join(output_name("roc", &hash, seed, "csv")), &report.to_csv())?;
    let summary = json!({
        "command": "roc",
        "spec_hash": hash,
        "config": spec,
        "auc": report.curves.iter().map(|c| json!({
            "method": c.method,
            "mean_auc": c.mean_auc,
            "per_replication": c.auc,
        })).collect::<Vec<_>>(),
        "failures": report.failures,
    });
    write_json(&cfg.out.join(output_name("roc", &hash, seed, "json")), &summary)?;
    Ok(summary)
}

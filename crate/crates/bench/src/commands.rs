//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xwan_core::primal::PrimalRegistry;
use xwan_core::problem::PresetRegistry;
use xwan_core::trainer::Session;
use xwan_core::Error;

use crate::config::{set_path, RunConfig};
use crate::heatmap::{emit_heatmap, Axis, SolutionGrid};
use crate::output::{fmt_num, prepare_dir, write_json, write_timing, MetricsWriter, RunStatus, Summary, SummaryBase};
use crate::CliError;

/// Settings shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub seed: Option<u64>,
    pub force: bool,
    pub threads: usize,
}

fn load(config: &Path, common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

/// Problem presets and primal model kinds available to the commands.
pub struct Registries {
    pub presets: PresetRegistry,
    pub models: PrimalRegistry,
}

impl Registries {
    pub fn builtin() -> Self {
        Self {
            presets: PresetRegistry::builtin(),
            models: PrimalRegistry::builtin(),
        }
    }
}

/// Train one model kind into `dir` (which must exist and be empty).
pub fn run_one(cfg: &RunConfig, kind: &str, dir: &Path, reg: &Registries) -> Result<Summary, CliError> {
    let tc = cfg.train_config(kind, &reg.presets)?;
    let mut echo = cfg.clone();
    echo.model.kind = Some(kind.to_string());
    write_json(&dir.join("config.json"), &echo.resolved())?;
    let base = SummaryBase {
        preset: tc.problem.clone(),
        model: kind.to_string(),
        d: tc.d,
        seed: tc.seed,
        epsilon: tc.epsilon,
        eval_trials: tc.eval_trials,
        lr_primal: tc.lr_primal(),
        max_retries: tc.max_retries,
        config: echo.resolved(),
    };
    let session = Session::new(tc, &reg.presets, &reg.models)?;
    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"), cfg.output.wall_time_in_metrics)?;
    let mut sink_err = None;
    let mut seen = Vec::new();
    let result = session.run(&mut |r| {
        seen.push(r.clone());
        if sink_err.is_none() {
            if let Err(e) = metrics.write(r) {
                sink_err = Some(e);
            }
        }
    });
    if let Some(e) = sink_err {
        return Err(e);
    }
    write_timing(&dir.join("timing.csv"), &seen)?;
    match result {
        Ok(outcome) => {
            write_json(
                &dir.join("params.json"),
                &serde_json::json!({ "primal": outcome.primal.to_json(), "phi": outcome.phi }),
            )?;
            let summary = Summary::from_outcome(base, &outcome);
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(summary)
        }
        Err(e @ Error::Aborted { .. }) => {
            let time = seen.last().map_or(0.0, |r| r.wall_time_s);
            let summary = Summary::aborted(base, e.to_string(), seen.len(), time);
            write_json(&dir.join("summary.json"), &summary)?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_train(config: &Path, out: &Path, common: &Common) -> Result<Summary, CliError> {
    let cfg = load(config, common)?;
    let kind = cfg.model.kind.clone().unwrap_or_else(|| "xnode".into());
    prepare_dir(out, common.force)?;
    run_one(&cfg, &kind, out, &Registries::builtin())
}

/// Run `jobs` on up to `threads` workers; results keep job order.
fn run_parallel<T: Send>(n: usize, threads: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Summary row for a finished or aborted run; other errors propagate.
fn settle(result: Result<Summary, CliError>, dir: &Path) -> Result<Summary, CliError> {
    match result {
        Ok(s) => Ok(s),
        Err(e) if e.exit_code() == 2 => crate::output::read_summary(&dir.join("summary.json")),
        Err(e) => Err(e),
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::Completed => "completed",
        RunStatus::Aborted => "aborted",
    }
}

const RESULT_COLUMNS: [&str; 7] = ["rel_err", "rel_err_se", "time_per_epoch_s", "n_epsilon", "t_epsilon", "epochs", "status"];

fn result_fields(s: &Summary) -> Vec<String> {
    vec![
        fmt_num(s.rel_err),
        fmt_num(s.rel_err_se),
        fmt_num(Some(s.time_per_epoch_s)),
        s.n_epsilon.map(|n| n.to_string()).unwrap_or_default(),
        fmt_num(s.t_epsilon),
        s.epochs.to_string(),
        status_name(s.status).to_string(),
    ]
}

fn any_aborted(rows: &[Summary]) -> Result<(), CliError> {
    match rows.iter().find(|s| s.status == RunStatus::Aborted) {
        Some(s) => Err(CliError::Core(Error::Aborted {
            retries: s.retries,
            reason: format!("{} run: {}", s.model, s.message.clone().unwrap_or_default()),
        })),
        None => Ok(()),
    }
}

pub const COMPARE_KINDS: [&str; 2] = ["xnode", "dnn"];

/// Both primal kinds with the same seed; one row each in compare.csv.
pub fn cmd_compare(config: &Path, out: &Path, common: &Common) -> Result<Vec<Summary>, CliError> {
    let cfg = load(config, common)?;
    compare(&cfg, out, common, &Registries::builtin(), &COMPARE_KINDS)
}

/// Train each of `kinds` under `out/<kind>` and write compare.csv.
pub fn compare(cfg: &RunConfig, out: &Path, common: &Common, reg: &Registries, kinds: &[&str]) -> Result<Vec<Summary>, CliError> {
    if let Some(kind) = &cfg.model.kind {
        return Err(CliError::Config(format!(
            "compare runs every model kind; remove model.kind ({kind:?}) from the config"
        )));
    }
    for kind in kinds {
        cfg.train_config(kind, &reg.presets)?;
    }
    prepare_dir(out, common.force)?;
    let results = run_parallel(kinds.len(), common.threads, &|i| {
        let dir = out.join(kinds[i]);
        std::fs::create_dir_all(&dir)?;
        settle(run_one(cfg, kinds[i], &dir, reg), &dir)
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut w = csv::Writer::from_path(out.join("compare.csv"))?;
    let mut header = vec!["model"];
    header.extend(RESULT_COLUMNS);
    w.write_record(&header)?;
    for s in &rows {
        let mut rec = vec![s.model.clone()];
        rec.extend(result_fields(s));
        w.write_record(&rec)?;
    }
    w.flush()?;
    any_aborted(&rows)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameters: Vec<SweepParam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    /// Dotted key path into the run config, e.g. `training.lr_primal`.
    pub name: String,
    pub values: Vec<Value>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read sweep spec {}: {e}", path.display())))?;
        let spec: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("sweep spec {}: {e}", path.display())))?;
        if spec.parameters.is_empty() || spec.parameters.iter().any(|p| p.values.is_empty()) {
            return Err(CliError::Config("sweep spec needs at least one parameter with at least one value".into()));
        }
        Ok(spec)
    }

    /// Cross product in row-major order (last parameter fastest).
    pub fn combinations(&self) -> Vec<Vec<Value>> {
        let mut out = vec![Vec::new()];
        for p in &self.parameters {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    p.values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push(v.clone());
                        c
                    })
                })
                .collect();
        }
        out
    }
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn cmd_sweep(config: &Path, sweep: &Path, out: &Path, common: &Common) -> Result<Vec<Summary>, CliError> {
    let cfg = load(config, common)?;
    let spec = SweepSpec::load(sweep)?;
    let reg = Registries::builtin();
    let combos = spec.combinations();
    let mut runs = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut doc = cfg.resolved();
        for (p, v) in spec.parameters.iter().zip(combo) {
            set_path(&mut doc, &p.name, v.clone())?;
        }
        let run = RunConfig::from_value(doc)?;
        let kind = run.model.kind.clone().unwrap_or_else(|| "xnode".into());
        run.train_config(&kind, &reg.presets)?;
        runs.push((run, kind));
    }
    prepare_dir(out, common.force)?;
    let dirs: Vec<PathBuf> = (0..runs.len()).map(|i| out.join(format!("run_{i:03}"))).collect();
    let results = run_parallel(runs.len(), common.threads, &|i| {
        std::fs::create_dir_all(&dirs[i])?;
        settle(run_one(&runs[i].0, &runs[i].1, &dirs[i], &reg), &dirs[i])
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let mut header = vec!["run".to_string()];
    header.extend(spec.parameters.iter().map(|p| p.name.clone()));
    header.extend(RESULT_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, (combo, s)) in combos.iter().zip(&rows).enumerate() {
        let mut rec = vec![format!("run_{i:03}")];
        rec.extend(combo.iter().map(value_label));
        rec.extend(result_fields(s));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_sweep_grid(out, &spec, &rows)?;
    any_aborted(&rows)?;
    Ok(rows)
}

/// Final error over the first two swept parameters (rows × columns); a
/// single parameter gives one row. Missing errors are written empty.
fn write_sweep_grid(out: &Path, spec: &SweepSpec, rows: &[Summary]) -> Result<(), CliError> {
    let first = &spec.parameters[0];
    let (row_vals, col_param) = match spec.parameters.get(1) {
        Some(second) if spec.parameters.len() == 2 => (first.values.clone(), Some(second)),
        _ if spec.parameters.len() == 1 => (vec![Value::Null], Some(first)),
        _ => return Ok(()),
    };
    let col_param = col_param.expect("set above");
    let ncol = col_param.values.len();
    let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
    let corner = if spec.parameters.len() == 2 { format!("{}\\{}", first.name, col_param.name) } else { col_param.name.clone() };
    let mut header = vec![corner];
    header.extend(col_param.values.iter().map(value_label));
    w.write_record(&header)?;
    let mut numeric = Vec::with_capacity(row_vals.len());
    for (r, rv) in row_vals.iter().enumerate() {
        let mut rec = vec![if rv.is_null() { "rel_err".to_string() } else { value_label(rv) }];
        let cells: Vec<Option<f64>> = (0..ncol).map(|c| rows[r * ncol + c].rel_err).collect();
        rec.extend(cells.iter().map(|v| fmt_num(*v)));
        w.write_record(&rec)?;
        numeric.push(cells);
    }
    w.flush()?;
    // heatmap when both axes are numeric and every cell has a value
    let as_f64 = |vals: &[Value]| vals.iter().map(|v| v.as_f64()).collect::<Option<Vec<f64>>>();
    if spec.parameters.len() == 2 {
        if let (Some(ys), Some(xs)) = (as_f64(&first.values), as_f64(&col_param.values)) {
            if let Some(grid) = numeric.iter().map(|r| r.iter().copied().collect::<Option<Vec<f64>>>()).collect::<Option<Vec<_>>>() {
                emit_heatmap(out, "grid", &xs, &ys, &grid, (&col_param.name, &first.name), "relative error")?;
            }
        }
    }
    Ok(())
}

/// Options of the heatmap subcommand.
#[derive(Clone, Debug)]
pub struct HeatmapArgs {
    pub params: Option<PathBuf>,
    pub time: Option<f64>,
    pub resolution: usize,
    pub axes: Option<String>,
}

pub fn cmd_heatmap(config: &Path, out: &Path, args: &HeatmapArgs, common: &Common) -> Result<SolutionGrid, CliError> {
    let cfg = load(config, common)?;
    let presets = PresetRegistry::builtin();
    let models = PrimalRegistry::builtin();
    let kind = cfg.model.kind.clone().unwrap_or_else(|| "xnode".into());
    let tc = cfg.train_config(&kind, &presets)?;
    let (problem, domain) = presets.get(&tc.problem)?.build(tc.d, tc.domain.clone())?;
    let primal = match &args.params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read parameters {}: {e}", path.display())))?;
            let doc: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(models.load(&doc["primal"])?)
        }
        None => None,
    };
    let d = tc.d;
    let axes = match &args.axes {
        Some(s) => {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(CliError::Config(format!("--axes takes two comma-separated names, got {s:?}")));
            }
            (Axis::parse(parts[0], d)?, Axis::parse(parts[1], d)?)
        }
        None if d == 1 => (Axis::Time, Axis::Space(0)),
        None => (Axis::Space(0), Axis::Space(1)),
    };
    let time = args.time.unwrap_or(domain.horizon);
    let grid = SolutionGrid::of_model(primal.as_deref(), &problem, &domain, tc.n_t, axes, args.resolution, time)?;
    prepare_dir(out, common.force)?;
    let source = if primal.is_some() { kind.as_str() } else { "exact" };
    grid.emit(out, &format!("{} {source}, t = {time}", tc.problem))?;
    Ok(grid)
}

pub fn presets_listing() -> String {
    let mut s = String::new();
    for p in PresetRegistry::builtin().iter() {
        s.push_str(&format!("{:<10} d={:<3} {}\n", p.name(), p.default_dim(), p.description()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn combinations_are_row_major() {
        let spec = SweepSpec {
            parameters: vec![
                SweepParam {
                    name: "a".into(),
                    values: vec![json!(1), json!(2)],
                },
                SweepParam {
                    name: "b".into(),
                    values: vec![json!("x"), json!("y"), json!("z")],
                },
            ],
        };
        let c = spec.combinations();
        assert_eq!(c.len(), 6);
        assert_eq!(c[1], vec![json!(1), json!("y")]);
        assert_eq!(c[3], vec![json!(2), json!("x")]);
    }

    #[test]
    fn parallel_runner_keeps_order() {
        let r = run_parallel(7, 3, &|i| i * i);
        assert_eq!(r, vec![0, 1, 4, 9, 16, 25, 36]);
    }

    #[test]
    fn listing_names_every_preset() {
        let s = presets_listing();
        for name in ["example1", "example2", "example3", "example4"] {
            assert!(s.contains(name));
        }
    }
}

//! Run-directory files.

use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xwan_core::trainer::{MetricsRecord, TrainOutcome};

use crate::CliError;

pub const METRICS_HEADER: [&str; 8] = ["epoch", "wall_time_s", "l_int", "l_bdry", "l_init", "total", "rel_err", "rel_err_se"];

/// Create `dir`, refusing a non-empty existing one unless `force`, in which
/// case it is emptied first.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(CliError::Config(format!(
                "output directory {} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Shortest round-trip form, scientific outside `[1e-4, 1e15)`; empty for a
/// missing value.
pub fn fmt_num(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) => format!("{x}"),
        Some(x) => format!("{x:e}"),
    }
}

pub struct MetricsWriter {
    out: csv::Writer<File>,
    wall_time: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, wall_time: bool) -> Result<Self, CliError> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(METRICS_HEADER)?;
        out.flush()?;
        Ok(Self { out, wall_time })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<(), CliError> {
        let l = &r.loss;
        self.out.write_record([
            r.epoch.to_string(),
            if self.wall_time { fmt_num(Some(r.wall_time_s)) } else { String::new() },
            fmt_num(Some(l.l_int)),
            fmt_num(Some(l.l_bdry)),
            fmt_num(Some(l.l_init)),
            fmt_num(Some(l.total)),
            fmt_num(r.rel_err),
            fmt_num(r.rel_err_se),
        ])?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_timing(path: &Path, history: &[MetricsRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "wall_time_s"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), fmt_num(Some(r.wall_time_s))])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Converged,
    Completed,
    Aborted,
}

/// Contents of summary.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub preset: String,
    pub model: String,
    pub d: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub epochs: usize,
    pub epsilon: f64,
    pub rel_err: Option<f64>,
    pub rel_err_se: Option<f64>,
    pub eval_trials: usize,
    pub excluded_points: usize,
    pub n_epsilon: Option<usize>,
    pub t_epsilon: Option<f64>,
    pub train_time_s: f64,
    pub time_per_epoch_s: f64,
    pub retries: usize,
    pub final_lr_primal: f64,
    pub message: Option<String>,
    pub config: Value,
}

impl Summary {
    pub fn from_outcome(base: SummaryBase, o: &TrainOutcome) -> Self {
        let err = o.final_error;
        Self {
            status: if o.converged { RunStatus::Converged } else { RunStatus::Completed },
            epochs: o.epochs,
            rel_err: err.map(|e| e.mean),
            rel_err_se: err.map(|e| e.se),
            excluded_points: err.map_or(0, |e| e.excluded),
            n_epsilon: o.n_epsilon.map(|n| n.0),
            t_epsilon: o.n_epsilon.map(|n| n.1),
            train_time_s: o.train_time_s,
            time_per_epoch_s: o.time_per_epoch(),
            retries: o.retries,
            final_lr_primal: o.lr_primal,
            message: None,
            ..base.into_summary()
        }
    }

    pub fn aborted(base: SummaryBase, message: String, epochs: usize, train_time_s: f64) -> Self {
        Self {
            status: RunStatus::Aborted,
            epochs,
            train_time_s,
            time_per_epoch_s: train_time_s / epochs.max(1) as f64,
            message: Some(message),
            ..base.into_summary()
        }
    }
}

/// Fields known before training.
pub struct SummaryBase {
    pub preset: String,
    pub model: String,
    pub d: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub eval_trials: usize,
    pub lr_primal: f64,
    pub max_retries: usize,
    pub config: Value,
}

impl SummaryBase {
    fn into_summary(self) -> Summary {
        Summary {
            preset: self.preset,
            model: self.model,
            d: self.d,
            seed: self.seed,
            status: RunStatus::Completed,
            epochs: 0,
            epsilon: self.epsilon,
            rel_err: None,
            rel_err_se: None,
            eval_trials: self.eval_trials,
            excluded_points: 0,
            n_epsilon: None,
            t_epsilon: None,
            train_time_s: 0.0,
            time_per_epoch_s: 0.0,
            retries: self.max_retries,
            final_lr_primal: self.lr_primal,
            message: None,
            config: self.config,
        }
    }
}

/// Parse and check a summary document.
pub fn validate_summary(v: &Value) -> Result<Summary, CliError> {
    let s: Summary = serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("invalid summary: {e}")))?;
    let nonneg = |x: f64| x.is_finite() && x >= 0.0;
    let ok = nonneg(s.train_time_s)
        && nonneg(s.time_per_epoch_s)
        && nonneg(s.epsilon)
        && s.rel_err.is_none_or(nonneg)
        && s.rel_err_se.is_none_or(nonneg)
        && s.t_epsilon.is_none_or(nonneg)
        && s.n_epsilon.is_none_or(|n| n >= 1 && n <= s.epochs)
        && s.rel_err.is_some() == s.rel_err_se.is_some()
        && s.n_epsilon.is_some() == s.t_epsilon.is_some()
        && (s.status == RunStatus::Aborted) == s.message.is_some()
        && s.config.is_object();
    if !ok {
        return Err(CliError::Config("summary fields are inconsistent".into()));
    }
    Ok(s)
}

pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    validate_summary(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SummaryBase {
        SummaryBase {
            preset: "example1".into(),
            model: "xnode".into(),
            d: 2,
            seed: 3,
            epsilon: 0.1,
            eval_trials: 5,
            lr_primal: 0.015,
            max_retries: 0,
            config: serde_json::json!({"problem": {"preset": "example1"}}),
        }
    }

    #[test]
    fn aborted_summary_round_trips() {
        let s = Summary::aborted(base(), "non-finite loss".into(), 4, 2.0);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(validate_summary(&v).unwrap(), s);
    }

    #[test]
    fn inconsistent_summaries_are_rejected() {
        let mut s = Summary::aborted(base(), "x".into(), 4, 2.0);
        s.message = None;
        assert!(validate_summary(&serde_json::to_value(&s).unwrap()).is_err());
        let mut s = Summary::aborted(base(), "x".into(), 4, 2.0);
        s.n_epsilon = Some(9);
        s.t_epsilon = Some(1.0);
        assert!(validate_summary(&serde_json::to_value(&s).unwrap()).is_err());
        let mut v = serde_json::to_value(Summary::aborted(base(), "x".into(), 1, 0.0)).unwrap();
        v["surprise"] = 1.into();
        assert!(validate_summary(&v).is_err());
    }

    #[test]
    fn numbers_use_shortest_form() {
        assert_eq!(fmt_num(Some(0.1)), "0.1");
        assert_eq!(fmt_num(Some(1e-300)), "1e-300");
        assert_eq!(fmt_num(Some(-2.5e-7)), "-2.5e-7");
        assert_eq!(fmt_num(Some(0.0)), "0");
        assert_eq!(fmt_num(None), "");
    }

    #[test]
    fn refuses_occupied_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), "x").unwrap();
        assert!(prepare_dir(dir.path(), false).is_err());
        prepare_dir(dir.path(), true).unwrap();
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    proptest::proptest! {
        #[test]
        fn printed_numbers_parse_back_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            proptest::prop_assert_eq!(fmt_num(Some(x)).parse::<f64>().unwrap(), x);
        }

        #[test]
        fn finished_summaries_round_trip(
            epochs in 1usize..5000,
            err in 0.0f64..10.0,
            se in 0.0f64..1.0,
            crossing in proptest::option::of(0.0f64..1.0),
            time in 0.0f64..1e4,
        ) {
            let n_epsilon = crossing.map(|c| 1 + (c * (epochs - 1) as f64) as usize);
            let s = Summary {
                status: if n_epsilon.is_some() { RunStatus::Converged } else { RunStatus::Completed },
                epochs,
                rel_err: Some(err),
                rel_err_se: Some(se),
                n_epsilon,
                t_epsilon: crossing.map(|c| c * time),
                train_time_s: time,
                time_per_epoch_s: time / epochs as f64,
                ..base().into_summary()
            };
            let text = serde_json::to_string_pretty(&s).unwrap();
            let v: Value = serde_json::from_str(&text).unwrap();
            proptest::prop_assert_eq!(validate_summary(&v).unwrap(), s);
        }
    }
}

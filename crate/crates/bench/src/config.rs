//! Run configuration documents.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xwan_core::domain::DomainSpec;
use xwan_core::primal::ModelConfig;
use xwan_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub domain: Option<DomainSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub preset: String,
    /// Preset default when absent.
    #[serde(default)]
    pub d: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSection {
    Hypercube {
        #[serde(default = "unit")]
        horizon: f64,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "unit")]
        horizon: f64,
    },
    Hourglass {
        #[serde(default = "unit")]
        horizon: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl DomainSection {
    pub fn to_spec(&self, d: usize) -> DomainSpec {
        match self {
            Self::Hypercube { horizon } => DomainSpec {
                horizon: *horizon,
                ..DomainSpec::hypercube(d)
            },
            Self::Ball { center, radius, horizon } => DomainSpec {
                horizon: *horizon,
                ..DomainSpec::ball(center.clone(), *radius)
            },
            Self::Hourglass { horizon } => DomainSpec {
                horizon: *horizon,
                ..DomainSpec::hourglass()
            },
        }
    }
}

/// Model settings. `kind` stays unset for `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: Option<String>,
    pub h_dim: usize,
    pub init_hidden: Vec<usize>,
    pub vec_hidden: Vec<usize>,
    pub substeps: usize,
    pub dnn_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub activation: xwan_core::nets::Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            kind: None,
            h_dim: m.h_dim,
            init_hidden: m.init_hidden,
            vec_hidden: m.vec_hidden,
            substeps: m.substeps,
            dnn_hidden: m.dnn_hidden,
            phi_hidden: m.phi_hidden,
            activation: m.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub n_r: usize,
    pub n_b: usize,
    pub n_t: usize,
    pub k_u: usize,
    pub k_phi: usize,
    /// `400000·d²` when absent.
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    /// Per-kind default when absent.
    pub lr_primal: Option<f64>,
    pub lr_phi: f64,
    pub max_epochs: usize,
    pub epsilon: f64,
    pub check_every: usize,
    pub check_points: usize,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            n_r: t.n_r,
            n_b: t.n_b,
            n_t: t.n_t,
            k_u: t.k_u,
            k_phi: t.k_phi,
            alpha: None,
            gamma: None,
            lr_primal: None,
            lr_phi: t.lr_phi,
            max_epochs: t.max_epochs,
            epsilon: t.epsilon,
            check_every: t.check_every,
            check_points: t.check_points,
            max_retries: t.max_retries,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub points: usize,
    pub trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            points: t.eval_points,
            trials: t.eval_trials,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Fill the wall-time column of metrics.csv.
    pub wall_time_in_metrics: bool,
}

/// Keys that may be omitted, with the value used in their place.
pub fn defaults_table() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    let m = ModelConfig::default();
    vec![
        ("problem.d", "preset default".into()),
        ("domain", "preset domain".into()),
        ("model.kind", "xnode (train); both (compare)".into()),
        ("model.h_dim", m.h_dim.to_string()),
        ("model.init_hidden", format!("{:?}", m.init_hidden)),
        ("model.vec_hidden", format!("{:?}", m.vec_hidden)),
        ("model.substeps", m.substeps.to_string()),
        ("model.dnn_hidden", format!("{:?}", m.dnn_hidden)),
        ("model.phi_hidden", format!("{:?}", m.phi_hidden)),
        ("model.activation", "tanh".into()),
        ("training.n_r", t.n_r.to_string()),
        ("training.n_b", t.n_b.to_string()),
        ("training.n_t", t.n_t.to_string()),
        ("training.k_u", t.k_u.to_string()),
        ("training.k_phi", t.k_phi.to_string()),
        ("training.alpha", "400000·d²".into()),
        ("training.gamma", "400000·d²".into()),
        ("training.lr_primal", "0.015 (xnode), 5e-5 (dnn)".into()),
        ("training.lr_phi", t.lr_phi.to_string()),
        ("training.max_epochs", t.max_epochs.to_string()),
        ("training.epsilon", t.epsilon.to_string()),
        ("training.check_every", t.check_every.to_string()),
        ("training.check_points", t.check_points.to_string()),
        ("training.max_retries", t.max_retries.to_string()),
        ("training.seed", t.seed.to_string()),
        ("eval.points", t.eval_points.to_string()),
        ("eval.trials", t.eval_trials.to_string()),
        ("output.wall_time_in_metrics", "false".into()),
    ]
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        Self::from_value(v).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Training settings for one model kind.
    pub fn train_config(&self, kind: &str, presets: &xwan_core::problem::PresetRegistry) -> Result<TrainConfig, CliError> {
        let preset = presets.get(&self.problem.preset)?;
        let d = self.problem.d.unwrap_or_else(|| preset.default_dim());
        let a = &self.model;
        let t = &self.training;
        let cfg = TrainConfig {
            problem: self.problem.preset.clone(),
            d,
            domain: self.domain.as_ref().map(|s| s.to_spec(d)),
            n_r: t.n_r,
            n_b: t.n_b,
            n_t: t.n_t,
            k_u: t.k_u,
            k_phi: t.k_phi,
            alpha: t.alpha,
            gamma: t.gamma,
            lr_primal: t.lr_primal,
            lr_phi: t.lr_phi,
            max_epochs: t.max_epochs,
            epsilon: t.epsilon,
            check_every: t.check_every,
            check_points: t.check_points,
            eval_points: self.eval.points,
            eval_trials: self.eval.trials,
            max_retries: t.max_retries,
            seed: t.seed,
            model: ModelConfig {
                kind: kind.to_string(),
                h_dim: a.h_dim,
                init_hidden: a.init_hidden.clone(),
                vec_hidden: a.vec_hidden.clone(),
                substeps: a.substeps,
                dnn_hidden: a.dnn_hidden.clone(),
                phi_hidden: a.phi_hidden.clone(),
                activation: a.activation,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The document with every defaulted key written out.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Set the value at a dotted key path, rejecting paths that do not name an
/// existing key of the resolved document.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("unknown parameter {path:?}")))?;
        if !obj.contains_key(*part) {
            return Err(CliError::Config(format!("unknown parameter {path:?}")));
        }
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked above");
    }
    Err(CliError::Config(format!("unknown parameter {path:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use xwan_core::problem::PresetRegistry;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_value(json!({"problem": {"preset": "example1"}})).unwrap();
        let t = c.train_config("xnode", &PresetRegistry::builtin()).unwrap();
        assert_eq!((t.d, t.n_r, t.n_b, t.n_t, t.k_u, t.k_phi), (5, 400, 400, 20, 2, 1));
        assert_eq!(t.alpha(), 1e7);
        assert_eq!(t.lr_primal(), 0.015);
        assert_eq!(t.lr_phi, 0.04);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            json!({"problem": {"preset": "example1"}, "extra": 1}),
            json!({"problem": {"preset": "example1", "dim": 2}}),
            json!({"problem": {"preset": "example1"}, "training": {"lr": 0.1}}),
            json!({"problem": {"preset": "example1"}, "model": {"width": 3}}),
            json!({"problem": {"preset": "example1"}, "domain": {"kind": "torus"}}),
        ] {
            assert!(RunConfig::from_value(doc.clone()).is_err(), "{doc}");
        }
        assert!(RunConfig::from_value(json!({})).is_err());
    }

    #[test]
    fn resolved_document_round_trips() {
        let c = RunConfig::from_value(json!({
            "problem": {"preset": "example2", "d": 3},
            "domain": {"kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.4},
            "model": {"kind": "dnn", "dnn_hidden": [8]},
            "training": {"seed": 4, "lr_primal": 0.001}
        }))
        .unwrap();
        let again = RunConfig::from_value(c.resolved()).unwrap();
        assert_eq!(c, again);
        let t = again.train_config("dnn", &PresetRegistry::builtin()).unwrap();
        let v = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
        assert!((t.domain.unwrap().omega_max_volume() - v).abs() < 1e-12);
    }

    #[test]
    fn dotted_paths() {
        let c = RunConfig::from_value(json!({"problem": {"preset": "example1"}})).unwrap();
        let mut v = c.resolved();
        set_path(&mut v, "training.lr_phi", json!(0.5)).unwrap();
        set_path(&mut v, "model.h_dim", json!(3)).unwrap();
        let c = RunConfig::from_value(v.clone()).unwrap();
        assert_eq!((c.training.lr_phi, c.model.h_dim), (0.5, 3));
        assert!(set_path(&mut v, "training.nope", json!(1)).is_err());
        assert!(set_path(&mut v, "training.lr_phi.x", json!(1)).is_err());
    }
}

//! Primal solution models behind a common interface, selected by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xwan_autodiff::{Scalar, Var};

use crate::domain::{DomainSpec, TIME_TOL};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::nets::{mlp_forward_jet, Activation, MlpConfig, MlpParams};
use crate::problem::{spatial_gradient, time_derivative, PdeProblem, SpaceTimeFn};
use crate::xnode::{XNodeConfig, XNodeParams, XNodeView};

/// One sub-path of a query: integration times, which of them are wanted,
/// and the datum (with its spatial gradient) feeding an XNODE lift.
#[derive(Clone, Debug, PartialEq)]
pub struct SubPathQuery {
    pub times: Vec<f64>,
    pub keep: Vec<bool>,
    pub init: f64,
    pub init_grad: Vec<f64>,
}

/// Evaluation request along the constant path at `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathQuery {
    pub x: Vec<f64>,
    pub subpaths: Vec<SubPathQuery>,
}

impl PathQuery {
    /// Wanted times in output order.
    pub fn kept_times(&self) -> Vec<f64> {
        self.subpaths
            .iter()
            .flat_map(|s| s.times.iter().zip(&s.keep).filter(|(_, &k)| k).map(|(&t, _)| t))
            .collect()
    }

    pub fn kept_count(&self) -> usize {
        self.subpaths.iter().map(|s| s.keep.iter().filter(|&&k| k).count()).sum()
    }

    /// Every time of the schedule at `x`, with sub-path data per the
    /// initial-lift rule.
    pub fn from_schedule(problem: &PdeProblem, schedule: &crate::domain::SubPathSchedule, partition_only: bool) -> Self {
        let x = &schedule.x;
        let subpaths = schedule
            .intervals
            .iter()
            .zip(schedule.times.iter().zip(&schedule.in_partition))
            .enumerate()
            .map(|(i, (&(entry, _), (times, mask)))| {
                let (init, init_grad) = lift_datum(problem, i, entry, x);
                SubPathQuery {
                    times: times.clone(),
                    keep: if partition_only { mask.clone() } else { vec![true; times.len()] },
                    init,
                    init_grad,
                }
            })
            .collect();
        Self { x: x.clone(), subpaths }
    }

    /// Single time `t` at `x`, integrated along the sub-path of `partition`
    /// that contains it. `None` when no sub-path contains `t`.
    pub fn at_point(problem: &PdeProblem, domain: &DomainSpec, partition: &[f64], t: f64, x: &[f64]) -> Result<Option<Self>> {
        let schedule = domain.schedule(x, partition)?;
        for (i, (&(lo, hi), times)) in schedule.intervals.iter().zip(&schedule.times).enumerate() {
            if t < lo - TIME_TOL || t > hi + TIME_TOL {
                continue;
            }
            let mut ts: Vec<f64> = times.iter().copied().filter(|&s| s < t - TIME_TOL).collect();
            ts.push(t.max(lo));
            let mut keep = vec![false; ts.len()];
            *keep.last_mut().unwrap() = true;
            let (init, init_grad) = lift_datum(problem, i, lo, x);
            return Ok(Some(Self {
                x: x.to_vec(),
                subpaths: vec![SubPathQuery {
                    times: ts,
                    keep,
                    init,
                    init_grad,
                }],
            }));
        }
        Ok(None)
    }

    /// Times `times` along a full path from t = 0 at `x`.
    pub fn full_path(problem: &PdeProblem, x: &[f64], times: &[f64]) -> Self {
        let (init, init_grad) = lift_datum(problem, 0, 0.0, x);
        Self {
            x: x.to_vec(),
            subpaths: vec![SubPathQuery {
                times: times.to_vec(),
                keep: vec![true; times.len()],
                init,
                init_grad,
            }],
        }
    }
}

/// Initial data for a first sub-path starting at zero, boundary data at the
/// entry time otherwise. The entry time is held fixed when differentiating
/// in x.
fn lift_datum(problem: &PdeProblem, index: usize, entry: f64, x: &[f64]) -> (f64, Vec<f64>) {
    if index == 0 && entry == 0.0 {
        (problem.h(x), spatial_gradient(problem.initial.as_ref(), 0.0, x))
    } else {
        (problem.g(entry, x), spatial_gradient(problem.boundary.as_ref(), entry, x))
    }
}

/// Model output at one wanted point. `grad` and `dt` are populated only when
/// derivatives were requested.
#[derive(Clone, Debug)]
pub struct PointEval<S> {
    pub t: f64,
    pub u: S,
    pub grad: Vec<S>,
    pub dt: S,
}

impl PointEval<f64> {
    pub fn lift<S: Scalar>(&self) -> PointEval<S> {
        PointEval {
            t: self.t,
            u: S::constant(self.u),
            grad: self.grad.iter().map(|&g| S::constant(g)).collect(),
            dt: S::constant(self.dt),
        }
    }
}

pub trait Primal: Send + Sync {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<()>;
    /// Values, and optionally spatial gradients and time derivatives, at the
    /// kept points of the query.
    fn eval(&self, q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<f64>>>;
    /// As [`Primal::eval`] with the parameters replaced by tape variables.
    fn eval_tape<'t>(&self, weights: &[Var<'t>], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<Var<'t>>>>;
    fn to_json(&self) -> serde_json::Value;
    fn clone_box(&self) -> Box<dyn Primal>;
}

impl Clone for Box<dyn Primal> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Architecture settings for both primal kinds and the test network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: String,
    pub h_dim: usize,
    pub init_hidden: Vec<usize>,
    pub vec_hidden: Vec<usize>,
    pub substeps: usize,
    pub dnn_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "xnode".into(),
            h_dim: 6,
            init_hidden: vec![16],
            vec_hidden: vec![20, 20],
            substeps: 1,
            dnn_hidden: vec![40; 6],
            phi_hidden: vec![40; 6],
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    /// Test network on `(t, x)`.
    pub fn phi_net(&self, d: usize) -> MlpConfig {
        MlpConfig::new(d + 1, self.phi_hidden.clone(), 1, self.activation)
    }
}

#[derive(Clone, Debug)]
pub struct XNodePrimal {
    pub params: XNodeParams,
}

impl XNodePrimal {
    fn eval_generic<S: Scalar>(&self, weights: &[S], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<S>>> {
        let cfg = &self.params.config;
        check_dim(cfg.d, &q.x)?;
        let view = XNodeView::from_flat(cfg, weights)?;
        let n = if derivatives { cfg.d } else { 0 };
        let xs: Vec<Jet<S>> = q
            .x
            .iter()
            .enumerate()
            .map(|(k, &v)| if derivatives { Jet::seed(S::constant(v), n, k) } else { Jet::lift(S::constant(v), 0) })
            .collect();
        let mut out = Vec::with_capacity(q.kept_count());
        for sp in &q.subpaths {
            let Some(last) = sp.keep.iter().rposition(|&k| k) else {
                continue;
            };
            let init = if derivatives {
                let g: Vec<S> = sp.init_grad.iter().map(|&v| S::constant(v)).collect();
                Jet::from_parts(S::constant(sp.init), &g)
            } else {
                Jet::lift(S::constant(sp.init), 0)
            };
            let path = view.path(&xs, init, &sp.times[..=last], derivatives)?;
            for (j, &t) in sp.times[..=last].iter().enumerate() {
                if !sp.keep[j] {
                    continue;
                }
                let o = &path.values[j];
                out.push(PointEval {
                    t,
                    u: o.v,
                    grad: o.t[..n].to_vec(),
                    dt: if derivatives { path.dt[j] } else { S::zero() },
                });
            }
        }
        Ok(out)
    }
}

impl Primal for XNodePrimal {
    fn kind(&self) -> &'static str {
        "xnode"
    }
    fn dim(&self) -> usize {
        self.params.config.d
    }
    fn param_count(&self) -> usize {
        self.params.config.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.params.flat()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.params.set_flat(flat)
    }
    fn eval(&self, q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<f64>>> {
        self.eval_generic(&self.params.flat(), q, derivatives)
    }
    fn eval_tape<'t>(&self, weights: &[Var<'t>], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<Var<'t>>>> {
        self.eval_generic(weights, q, derivatives)
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "xnode", "model": self.params })
    }
    fn clone_box(&self) -> Box<dyn Primal> {
        Box::new(self.clone())
    }
}

/// Fully connected network on `(t, x)`.
#[derive(Clone, Debug)]
pub struct DnnPrimal {
    pub net: MlpParams,
}

impl DnnPrimal {
    fn eval_generic<S: Scalar>(&self, weights: &[S], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<S>>> {
        let d = self.dim();
        check_dim(d, &q.x)?;
        let n = if derivatives { d + 1 } else { 0 };
        let mut input: Vec<Jet<S>> = Vec::with_capacity(d + 1);
        let mut out = Vec::with_capacity(q.kept_count());
        for t in q.kept_times() {
            input.clear();
            let jet = |v: f64, k: usize| {
                if derivatives {
                    Jet::seed(S::constant(v), n, k)
                } else {
                    Jet::lift(S::constant(v), 0)
                }
            };
            // time is tangent direction d, space directions 0..d
            input.push(jet(t, d));
            input.extend(q.x.iter().enumerate().map(|(k, &v)| jet(v, k)));
            let o = mlp_forward_jet(&self.net.config, weights, &input)?[0];
            out.push(PointEval {
                t,
                u: o.v,
                grad: if derivatives { o.t[..d].to_vec() } else { Vec::new() },
                dt: if derivatives { o.t[d] } else { S::zero() },
            });
        }
        Ok(out)
    }
}

impl Primal for DnnPrimal {
    fn kind(&self) -> &'static str {
        "dnn"
    }
    fn dim(&self) -> usize {
        self.net.config.input_dim - 1
    }
    fn param_count(&self) -> usize {
        self.net.len()
    }
    fn params(&self) -> Vec<f64> {
        self.net.params.clone()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.net.len() {
            return Err(Error::Shape(format!("expected {} dnn parameters, got {}", self.net.len(), flat.len())));
        }
        self.net.params.copy_from_slice(flat);
        Ok(())
    }
    fn eval(&self, q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<f64>>> {
        self.eval_generic(&self.net.params, q, derivatives)
    }
    fn eval_tape<'t>(&self, weights: &[Var<'t>], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<Var<'t>>>> {
        self.eval_generic(weights, q, derivatives)
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "dnn", "model": self.net })
    }
    fn clone_box(&self) -> Box<dyn Primal> {
        Box::new(self.clone())
    }
}

/// `scale · u + shift` for a closed-form `u`. Has no parameters; used as an
/// evaluation oracle.
#[derive(Clone)]
pub struct ClosedFormPrimal {
    pub d: usize,
    pub u: Arc<dyn SpaceTimeFn>,
    pub scale: f64,
    pub shift: f64,
}

impl ClosedFormPrimal {
    pub fn new(d: usize, u: Arc<dyn SpaceTimeFn>) -> Self {
        Self { d, u, scale: 1.0, shift: 0.0 }
    }
}

impl Primal for ClosedFormPrimal {
    fn kind(&self) -> &'static str {
        "closed_form"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn param_count(&self) -> usize {
        0
    }
    fn params(&self) -> Vec<f64> {
        Vec::new()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if !flat.is_empty() {
            return Err(Error::Shape("closed-form model has no parameters".into()));
        }
        Ok(())
    }
    fn eval(&self, q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<f64>>> {
        check_dim(self.d, &q.x)?;
        let u = self.u.as_ref();
        Ok(q.kept_times()
            .into_iter()
            .map(|t| PointEval {
                t,
                u: self.scale * u.value(t, &q.x) + self.shift,
                grad: if derivatives {
                    spatial_gradient(u, t, &q.x).into_iter().map(|g| self.scale * g).collect()
                } else {
                    Vec::new()
                },
                dt: if derivatives { self.scale * time_derivative(u, t, &q.x) } else { 0.0 },
            })
            .collect())
    }
    fn eval_tape<'t>(&self, _weights: &[Var<'t>], q: &PathQuery, derivatives: bool) -> Result<Vec<PointEval<Var<'t>>>> {
        Ok(self.eval(q, derivatives)?.iter().map(PointEval::lift).collect())
    }
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "closed_form", "scale": self.scale, "shift": self.shift })
    }
    fn clone_box(&self) -> Box<dyn Primal> {
        Box::new(self.clone())
    }
}

fn check_dim(d: usize, x: &[f64]) -> Result<()> {
    if x.len() != d {
        return Err(Error::Shape(format!("model expects {d}-dimensional points, got {}", x.len())));
    }
    Ok(())
}

/// Constructs and restores one kind of primal model.
pub trait PrimalFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, config: &ModelConfig, d: usize, seed: u64) -> Result<Box<dyn Primal>>;
    fn load(&self, model: &serde_json::Value) -> Result<Box<dyn Primal>>;
}

struct XNodeFactory;
struct DnnFactory;

impl PrimalFactory for XNodeFactory {
    fn name(&self) -> &'static str {
        "xnode"
    }
    fn build(&self, c: &ModelConfig, d: usize, seed: u64) -> Result<Box<dyn Primal>> {
        let config = XNodeConfig {
            d,
            h_dim: c.h_dim,
            init_hidden: c.init_hidden.clone(),
            vec_hidden: c.vec_hidden.clone(),
            activation: c.activation,
            substeps: c.substeps,
        };
        Ok(Box::new(XNodePrimal {
            params: XNodeParams::init(config, seed)?,
        }))
    }
    fn load(&self, model: &serde_json::Value) -> Result<Box<dyn Primal>> {
        let p: XNodeParams = serde_json::from_value(model.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let p = XNodeParams::from_parts(p.config, p.theta1, p.theta2, p.readout)?;
        Ok(Box::new(XNodePrimal { params: p }))
    }
}

impl PrimalFactory for DnnFactory {
    fn name(&self) -> &'static str {
        "dnn"
    }
    fn build(&self, c: &ModelConfig, d: usize, seed: u64) -> Result<Box<dyn Primal>> {
        let config = MlpConfig::new(d + 1, c.dnn_hidden.clone(), 1, c.activation);
        Ok(Box::new(DnnPrimal {
            net: MlpParams::init(config, seed)?,
        }))
    }
    fn load(&self, model: &serde_json::Value) -> Result<Box<dyn Primal>> {
        Ok(Box::new(DnnPrimal {
            net: MlpParams::from_json(model)?,
        }))
    }
}

/// Primal model kinds by name.
pub struct PrimalRegistry {
    entries: BTreeMap<&'static str, Box<dyn PrimalFactory>>,
}

impl PrimalRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(XNodeFactory));
        r.register(Box::new(DnnFactory));
        r
    }

    pub fn register(&mut self, factory: Box<dyn PrimalFactory>) {
        self.entries.insert(factory.name(), factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    fn factory(&self, kind: &str) -> Result<&dyn PrimalFactory> {
        self.entries.get(kind).map(|f| f.as_ref()).ok_or_else(|| {
            Error::Config(format!("unknown model kind {kind:?}; known: {}", self.names().join(", ")))
        })
    }

    pub fn build(&self, config: &ModelConfig, d: usize, seed: u64) -> Result<Box<dyn Primal>> {
        self.factory(&config.kind)?.build(config, d, seed)
    }

    /// Restore from the document written by [`Primal::to_json`].
    pub fn load(&self, doc: &serde_json::Value) -> Result<Box<dyn Primal>> {
        let kind = doc["kind"]
            .as_str()
            .ok_or_else(|| Error::Config("model document has no kind".into()))?;
        self.factory(kind)?.load(&doc["model"])
    }
}

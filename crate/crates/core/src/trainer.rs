//! Alternating descent/ascent training of a primal model against the test
//! network, with Adam for both, divergence retries and relative-error stopping.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xwan_autodiff::Tape;

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::nets::{MlpConfig, MlpParams};
use crate::primal::{ModelConfig, PathQuery, Primal, PrimalRegistry};
use crate::problem::{PdeProblem, PresetRegistry};
use crate::weakform::{Collocation, LossBreakdown, WeakForm};

/// Stream ids of the fixed-point error probe and the final evaluation,
/// disjoint from the per-epoch plan streams.
const PROBE_STREAM: u64 = u64::MAX - 1;
const EVAL_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub problem: String,
    pub d: usize,
    /// Replaces the preset's domain when set.
    pub domain: Option<DomainSpec>,
    pub n_r: usize,
    pub n_b: usize,
    pub n_t: usize,
    pub k_u: usize,
    pub k_phi: usize,
    /// `None` means `400000·d²`.
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    /// `None` means the kind's default (0.015 xnode, 5e-5 dnn).
    pub lr_primal: Option<f64>,
    pub lr_phi: f64,
    pub max_epochs: usize,
    pub epsilon: f64,
    pub check_every: usize,
    pub check_points: usize,
    pub eval_points: usize,
    pub eval_trials: usize,
    pub max_retries: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            problem: "example1".into(),
            d: 2,
            domain: None,
            n_r: 400,
            n_b: 400,
            n_t: 20,
            k_u: 2,
            k_phi: 1,
            alpha: None,
            gamma: None,
            lr_primal: None,
            lr_phi: 0.04,
            max_epochs: 2000,
            epsilon: 1e-3,
            check_every: 10,
            check_points: 2000,
            eval_points: 2000,
            eval_trials: 50,
            max_retries: 3,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

pub fn default_penalty(d: usize) -> f64 {
    400000.0 * (d * d) as f64
}

pub fn default_primal_lr(kind: &str) -> f64 {
    match kind {
        "dnn" => 5e-5,
        _ => 0.015,
    }
}

impl TrainConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| default_penalty(self.d))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| default_penalty(self.d))
    }

    pub fn lr_primal(&self) -> f64 {
        self.lr_primal.unwrap_or_else(|| default_primal_lr(&self.model.kind))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_r", self.n_r),
            ("n_b", self.n_b),
            ("max_epochs", self.max_epochs),
            ("check_every", self.check_every),
            ("check_points", self.check_points),
            ("eval_points", self.eval_points),
            ("eval_trials", self.eval_trials),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_t < 2 {
            return Err(Error::Config(format!("n_t must be at least 2, got {}", self.n_t)));
        }
        if self.k_u + self.k_phi == 0 {
            return Err(Error::Config("k_u and k_phi cannot both be zero".into()));
        }
        let reals = [
            ("alpha", self.alpha()),
            ("gamma", self.gamma()),
            ("lr_primal", self.lr_primal()),
            ("lr_phi", self.lr_phi),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in reals {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction. `ascent` flips the update direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, ascent: bool) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let sign = if ascent { 1.0 } else { -1.0 };
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += sign * lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    /// Cumulative training time, excluding error checks.
    pub wall_time_s: f64,
    pub loss: LossBreakdown,
    pub rel_err: Option<f64>,
    pub rel_err_se: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub se: f64,
    /// Sampled points that no sub-path reaches.
    pub excluded: usize,
}

/// Fixed evaluation points with their exact values.
#[derive(Clone, Debug)]
pub struct ErrorProbe {
    pub queries: Vec<PathQuery>,
    pub exact: Vec<f64>,
    pub excluded: usize,
}

/// Uniform partition of `[0, horizon]` with `n` points.
pub fn uniform_partition(n: usize, horizon: f64) -> Vec<f64> {
    (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect()
}

impl ErrorProbe {
    pub fn sample(problem: &PdeProblem, domain: &DomainSpec, n_t: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let exact = problem
            .exact
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no exact solution to measure error against", problem.name)))?;
        let partition = uniform_partition(n_t.max(2), domain.horizon);
        let mut probe = Self {
            queries: Vec::with_capacity(n),
            exact: Vec::with_capacity(n),
            excluded: 0,
        };
        for _ in 0..n {
            let (t, x) = domain.sample_spacetime(rng)?;
            match PathQuery::at_point(problem, domain, &partition, t, &x)? {
                Some(q) => {
                    probe.exact.push(exact.value(t, &x));
                    probe.queries.push(q);
                }
                None => probe.excluded += 1,
            }
        }
        Ok(probe)
    }

    /// `sqrt(Σ(u_θ − u)² / Σu²)` over the probe points.
    pub fn relative_error(&self, primal: &dyn Primal) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (q, &u) in self.queries.iter().zip(&self.exact) {
            let v = primal.eval(q, false)?[0].u;
            num += (v - u) * (v - u);
            den += u * u;
        }
        if den == 0.0 {
            return Err(Error::Config("exact solution vanishes at every probe point".into()));
        }
        Ok((num / den).sqrt())
    }
}

/// Model value at `(t, x)`. Points outside every sub-path are integrated
/// from t = 0 along the full path, as on Ω_max.
pub fn predict_at(primal: &dyn Primal, problem: &PdeProblem, domain: &DomainSpec, n_t: usize, t: f64, x: &[f64]) -> Result<f64> {
    let partition = uniform_partition(n_t.max(2), domain.horizon);
    let q = match PathQuery::at_point(problem, domain, &partition, t, x)? {
        Some(q) => q,
        None => {
            let mut times: Vec<f64> = partition.iter().copied().filter(|&s| s < t - crate::domain::TIME_TOL).collect();
            times.push(t);
            let mut q = PathQuery::full_path(problem, x, &times);
            let sp = &mut q.subpaths[0];
            sp.keep.iter_mut().for_each(|k| *k = false);
            *sp.keep.last_mut().expect("nonempty") = true;
            q
        }
    };
    Ok(primal.eval(&q, false)?[0].u)
}

/// Mean and standard error of the relative L² error over `n_trials` fresh
/// point sets. XNODE values at `(t, x)` come from integrating along `x` on a
/// uniform `n_t`-point partition with `t` inserted.
pub fn relative_error(
    primal: &dyn Primal,
    problem: &PdeProblem,
    domain: &DomainSpec,
    n_t: usize,
    n_points: usize,
    n_trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ErrorEstimate> {
    if n_trials == 0 || n_points == 0 {
        return Err(Error::Config("error estimate needs at least one trial and one point".into()));
    }
    let mut errs = Vec::with_capacity(n_trials);
    let mut excluded = 0;
    for _ in 0..n_trials {
        let probe = ErrorProbe::sample(problem, domain, n_t, n_points, rng)?;
        excluded += probe.excluded;
        errs.push(probe.relative_error(primal)?);
    }
    let (mean, se) = mean_se(&errs);
    Ok(ErrorEstimate { mean, se, excluded })
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// First epoch (and its wall time) whose error estimate is at most `eps`.
pub fn n_epsilon_t_epsilon(history: &[MetricsRecord], eps: f64) -> Option<(usize, f64)> {
    history
        .iter()
        .find(|r| r.rel_err.is_some_and(|e| e <= eps))
        .map(|r| (r.epoch, r.wall_time_s))
}

/// Plan randomness for one epoch attempt.
pub fn plan_rng(seed: u64, epoch: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 8) | attempt as u64);
    rng
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub struct TrainOutcome {
    pub primal: Box<dyn Primal>,
    pub phi: MlpParams,
    pub history: Vec<MetricsRecord>,
    pub final_error: Option<ErrorEstimate>,
    pub n_epsilon: Option<(usize, f64)>,
    pub epochs: usize,
    pub train_time_s: f64,
    pub retries: usize,
    pub lr_primal: f64,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn time_per_epoch(&self) -> f64 {
        self.train_time_s / self.epochs.max(1) as f64
    }
}

/// Problem, domain and models resolved from a config.
pub struct Session {
    pub config: TrainConfig,
    pub problem: PdeProblem,
    pub domain: DomainSpec,
    pub primal: Box<dyn Primal>,
    pub phi_net: MlpConfig,
    pub phi: Vec<f64>,
}

impl Session {
    pub fn new(config: TrainConfig, presets: &PresetRegistry, models: &PrimalRegistry) -> Result<Self> {
        config.validate()?;
        let (problem, domain) = presets.get(&config.problem)?.build(config.d, config.domain.clone())?;
        let primal = models.build(&config.model, config.d, config.seed)?;
        Self::with_primal(config, problem, domain, primal)
    }

    pub fn with_primal(config: TrainConfig, problem: PdeProblem, domain: DomainSpec, primal: Box<dyn Primal>) -> Result<Self> {
        config.validate()?;
        if primal.dim() != domain.dim() {
            return Err(Error::Config(format!(
                "model dimension {} does not match domain dimension {}",
                primal.dim(),
                domain.dim()
            )));
        }
        let phi_net = config.model.phi_net(config.d);
        let phi = MlpParams::init(phi_net.clone(), config.seed.wrapping_add(0x9e37_79b9))?.params;
        Ok(Self {
            config,
            problem,
            domain,
            primal,
            phi_net,
            phi,
        })
    }

    pub fn run(self, sink: &mut dyn FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
        train(self, sink)
    }
}

struct Snapshot {
    theta: Vec<f64>,
    phi: Vec<f64>,
    adam_u: Adam,
    adam_phi: Adam,
}

/// One epoch: resample, `k_u` descent steps on the primal against the cached
/// test function, then `k_phi` ascent steps on the test function against the
/// cached primal.
#[allow(clippy::too_many_arguments)]
fn epoch_step(
    s: &mut Session,
    adam_u: &mut Adam,
    adam_phi: &mut Adam,
    lr_u: f64,
    epoch: usize,
    attempt: usize,
    tape: &mut Tape,
) -> Result<LossBreakdown> {
    let c = &s.config;
    let plan = s.domain.sample_plan(c.n_t, c.n_r, c.n_b, &mut plan_rng(c.seed, epoch, attempt))?;
    let coll = Collocation::build(&s.problem, &s.domain, &plan)?;
    let wf = WeakForm {
        problem: &s.problem,
        domain: &s.domain,
        coll: &coll,
        phi_net: &s.phi_net,
        alpha: c.alpha(),
        gamma: c.gamma(),
    };
    let mut last = None;
    if c.k_u > 0 {
        let phi_cache = wf.phi_values(&s.phi)?;
        let mut theta = s.primal.params();
        for _ in 0..c.k_u {
            let g = wf.primal_gradient(s.primal.as_ref(), &phi_cache, tape)?;
            check_finite(&g.loss, &g.grad)?;
            adam_u.update(&mut theta, &g.grad, lr_u, false)?;
            s.primal.set_params(&theta)?;
            last = Some(g.loss);
        }
    }
    if c.k_phi > 0 {
        let u_cache = wf.primal_values(s.primal.as_ref())?;
        for _ in 0..c.k_phi {
            let g = wf.phi_gradient(&u_cache, &s.phi, tape)?;
            check_finite(&g.loss, &g.grad)?;
            adam_phi.update(&mut s.phi, &g.grad, c.lr_phi, true)?;
            last = Some(g.loss);
        }
    }
    Ok(last.expect("at least one step per epoch"))
}

fn check_finite(loss: &LossBreakdown, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(())
}

fn train(mut s: Session, sink: &mut dyn FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    let c = s.config.clone();
    let probe = match s.problem.exact {
        Some(_) => Some(ErrorProbe::sample(
            &s.problem,
            &s.domain,
            c.n_t,
            c.check_points,
            &mut stream_rng(c.seed, PROBE_STREAM),
        )?),
        None => None,
    };
    let mut adam_u = Adam::new(s.primal.param_count());
    let mut adam_phi = Adam::new(s.phi.len());
    let mut lr_u = c.lr_primal();
    let mut tape = Tape::new();
    let mut history = Vec::new();
    let mut retries = 0;
    let mut train_time = 0.0;
    let mut converged = false;
    for epoch in 1..=c.max_epochs {
        let snap = Snapshot {
            theta: s.primal.params(),
            phi: s.phi.clone(),
            adam_u: adam_u.clone(),
            adam_phi: adam_phi.clone(),
        };
        let mut attempt = 0;
        let loss = loop {
            let start = Instant::now();
            let res = epoch_step(&mut s, &mut adam_u, &mut adam_phi, lr_u, epoch, attempt, &mut tape);
            train_time += start.elapsed().as_secs_f64();
            match res {
                Ok(loss) => break loss,
                Err(Error::Divergence { step }) => {
                    retries += 1;
                    if retries > c.max_retries {
                        return Err(Error::Aborted {
                            retries: c.max_retries,
                            reason: format!("non-finite loss or state at epoch {epoch} (step {step}) with primal lr {lr_u:e}"),
                        });
                    }
                    s.primal.set_params(&snap.theta)?;
                    s.phi.clone_from(&snap.phi);
                    adam_u = snap.adam_u.clone();
                    adam_phi = snap.adam_phi.clone();
                    lr_u *= 0.5;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let mut record = MetricsRecord {
            epoch,
            wall_time_s: train_time,
            loss,
            rel_err: None,
            rel_err_se: None,
        };
        let check = epoch % c.check_every == 0 || epoch == c.max_epochs;
        match &probe {
            Some(p) if check => {
                let e = p.relative_error(s.primal.as_ref())?;
                record.rel_err = Some(e);
                record.rel_err_se = Some(0.0);
                converged = e <= c.epsilon;
            }
            Some(_) => {}
            None => converged = loss.total <= c.epsilon,
        }
        sink(&record);
        history.push(record);
        if converged {
            break;
        }
    }
    let final_error = match s.problem.exact {
        Some(_) => Some(relative_error(
            s.primal.as_ref(),
            &s.problem,
            &s.domain,
            c.n_t,
            c.eval_points,
            c.eval_trials,
            &mut stream_rng(c.seed, EVAL_STREAM),
        )?),
        None => None,
    };
    let n_epsilon = n_epsilon_t_epsilon(&history, c.epsilon);
    Ok(TrainOutcome {
        phi: MlpParams::from_params(s.phi_net.clone(), s.phi.clone())?,
        primal: s.primal,
        epochs: history.len(),
        history,
        final_error,
        n_epsilon,
        train_time_s: train_time,
        retries,
        lr_primal: lr_u,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::primal::ClosedFormPrimal;
    use crate::weakform::Collocation;

    fn tiny(kind: &str, problem: &str, d: usize) -> TrainConfig {
        TrainConfig {
            problem: problem.into(),
            d,
            n_r: 12,
            n_b: 8,
            n_t: 4,
            max_epochs: 3,
            check_every: 1,
            check_points: 50,
            eval_points: 50,
            eval_trials: 3,
            seed: 17,
            model: ModelConfig {
                kind: kind.into(),
                h_dim: 3,
                init_hidden: vec![4],
                vec_hidden: vec![6],
                dnn_hidden: vec![6, 6],
                phi_hidden: vec![6],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn session(c: TrainConfig) -> Session {
        Session::new(c, &PresetRegistry::builtin(), &PrimalRegistry::builtin()).unwrap()
    }

    fn history(c: TrainConfig) -> Vec<MetricsRecord> {
        session(c).run(&mut |_| {}).unwrap().history
    }

    fn record(epoch: usize, e: f64) -> MetricsRecord {
        MetricsRecord {
            epoch,
            wall_time_s: epoch as f64 * 0.5,
            loss: LossBreakdown::default(),
            rel_err: Some(e),
            rel_err_se: Some(0.0),
        }
    }

    #[test]
    fn first_crossing_of_tolerance() {
        let h: Vec<_> = [0.5, 0.2, 0.05, 0.01].iter().enumerate().map(|(i, &e)| record(i + 1, e)).collect();
        assert_eq!(n_epsilon_t_epsilon(&h, 0.05), Some((3, 1.5)));
        assert_eq!(n_epsilon_t_epsilon(&h, 0.9), Some((1, 0.5)));
        assert_eq!(n_epsilon_t_epsilon(&h, 0.001), None);
    }

    #[test]
    fn adam_examples() {
        let mut a = Adam::new(2);
        let mut p = vec![1.0, -2.0];
        a.update(&mut p, &[0.0, 0.0], 0.1, false).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut a = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        a.update(&mut p, &[3.0, -0.5], 0.1, false).unwrap();
        assert!((p[0] + 0.1 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 0.1 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        let mut q = vec![0.0];
        let mut b = Adam::new(1);
        b.update(&mut q, &[2.0], 0.1, true).unwrap();
        assert!(q[0] > 0.0);
        let first = q[0];
        b.update(&mut q, &[-2.0], 0.1, true).unwrap();
        assert!((q[0] - first).abs() < first);
        // decayed moments after a zero gradient
        b.update(&mut q, &[0.0], 0.1, true).unwrap();
        assert_eq!(b.step, 3);
        assert!(Adam::new(1).update(&mut [0.0, 1.0], &[0.0], 0.1, false).is_err());
    }

    #[test]
    fn one_epoch_runs_are_identical() {
        for kind in ["xnode", "dnn"] {
            let mut c = tiny(kind, "example1", 2);
            c.max_epochs = 1;
            let a = history(c.clone());
            let b = history(c);
            assert_eq!(a.len(), 1);
            assert_eq!(
                (a[0].loss, a[0].rel_err),
                (b[0].loss, b[0].rel_err),
                "{kind}"
            );
        }
    }

    #[test]
    fn seeds_change_the_run() {
        let c = tiny("xnode", "example4", 1);
        let a = history(c.clone());
        let b = history(TrainConfig { seed: 18, ..c });
        assert_ne!(a[0].loss, b[0].loss);
    }

    #[test]
    fn exact_oracle_has_zero_error() {
        let (problem, domain) = PresetRegistry::builtin().get("example1").unwrap().build(2, None).unwrap();
        let oracle = ClosedFormPrimal::new(2, problem.exact.clone().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = relative_error(&oracle, &problem, &domain, 10, 200, 5, &mut rng).unwrap();
        assert_eq!((e.mean, e.se, e.excluded), (0.0, 0.0, 0));
        let scaled = ClosedFormPrimal {
            scale: 1.1,
            ..oracle.clone()
        };
        let e = relative_error(&scaled, &problem, &domain, 10, 200, 5, &mut rng).unwrap();
        assert!((e.mean - 0.1).abs() < 1e-12 && e.se < 1e-12);
    }

    #[test]
    fn constant_shift_error_matches_closed_form_ratio() {
        let (problem, domain) = PresetRegistry::builtin().get("example1").unwrap().build(2, None).unwrap();
        let exact = problem.exact.clone().unwrap();
        let delta = 0.05;
        let shifted = ClosedFormPrimal {
            shift: delta,
            ..ClosedFormPrimal::new(2, exact.clone())
        };
        let e = relative_error(&shifted, &problem, &domain, 10, 4000, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        // independent estimate of ‖u‖² over the unit spacetime cube
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 200_000;
        let norm_sq = (0..n)
            .map(|_| {
                let (t, x) = domain.sample_spacetime(&mut rng).unwrap();
                exact.value(t, &x).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let expected = delta * (1.0 / norm_sq).sqrt();
        assert!((e.mean - expected).abs() < 0.03 * expected, "{} vs {expected}", e.mean);
    }

    #[test]
    fn hourglass_error_counts_no_exclusions_for_interior_points() {
        let (problem, domain) = PresetRegistry::builtin().get("example4").unwrap().build(1, None).unwrap();
        let oracle = ClosedFormPrimal::new(1, problem.exact.clone().unwrap());
        let e = relative_error(&oracle, &problem, &domain, 8, 300, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.excluded, 0);
    }

    #[test]
    fn config_errors() {
        let mut c = tiny("xnode", "example1", 2);
        c.n_t = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny("xnode", "nope", 2);
        c.n_t = 3;
        assert!(Session::new(c, &PresetRegistry::builtin(), &PrimalRegistry::builtin()).is_err());
        assert_eq!(default_penalty(2), 1.6e6);
        assert_eq!(tiny("dnn", "example1", 2).lr_primal(), 5e-5);
        assert_eq!(tiny("xnode", "example1", 2).lr_primal(), 0.015);
    }

    #[test]
    fn divergence_exhausts_retries_then_aborts() {
        let mut c = tiny("xnode", "example1", 2);
        c.lr_primal = Some(1e300);
        c.max_epochs = 50;
        let mut s = session(c);
        let mut theta = s.primal.params();
        theta.iter_mut().for_each(|w| *w *= 1e150);
        s.primal.set_params(&theta).unwrap();
        match s.run(&mut |_| {}) {
            Err(Error::Aborted { retries, .. }) => assert_eq!(retries, 3),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("run should abort"),
        }
    }

    fn fixed_form(seed: u64) -> (Session, Collocation) {
        let s = session(tiny("xnode", "example1", 2));
        let plan = s.domain.sample_plan(4, 10, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let coll = Collocation::build(&s.problem, &s.domain, &plan).unwrap();
        (s, coll)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn small_primal_step_does_not_increase_loss(seed in 0u64..500) {
            let (mut s, coll) = fixed_form(seed);
            let wf = WeakForm { problem: &s.problem, domain: &s.domain, coll: &coll, phi_net: &s.phi_net, alpha: 10.0, gamma: 10.0 };
            let mut tape = Tape::new();
            let cache = wf.phi_values(&s.phi).unwrap();
            let g = wf.primal_gradient(s.primal.as_ref(), &cache, &mut tape).unwrap();
            let theta = s.primal.params();
            let mut lr = 1e-2;
            let mut ok = false;
            for _ in 0..=20 {
                let mut p = theta.clone();
                Adam::new(p.len()).update(&mut p, &g.grad, lr, false).unwrap();
                s.primal.set_params(&p).unwrap();
                if wf.total_loss(s.primal.as_ref(), &s.phi).unwrap().total <= g.loss.total {
                    ok = true;
                    break;
                }
                lr *= 0.5;
            }
            prop_assert!(ok);
        }

        #[test]
        fn small_adversary_step_does_not_decrease_interior_loss(seed in 0u64..500) {
            let (s, coll) = fixed_form(seed);
            let wf = WeakForm { problem: &s.problem, domain: &s.domain, coll: &coll, phi_net: &s.phi_net, alpha: 10.0, gamma: 10.0 };
            let mut tape = Tape::new();
            let cache = wf.primal_values(s.primal.as_ref()).unwrap();
            let g = wf.phi_gradient(&cache, &s.phi, &mut tape).unwrap();
            let mut lr = 1e-2;
            let mut ok = false;
            for _ in 0..=20 {
                let mut p = s.phi.clone();
                Adam::new(p.len()).update(&mut p, &g.grad, lr, true).unwrap();
                if wf.total_loss(s.primal.as_ref(), &p).unwrap().l_int >= g.loss.l_int {
                    ok = true;
                    break;
                }
                lr *= 0.5;
            }
            prop_assert!(ok);
        }

        #[test]
        fn relative_error_is_scale_invariant(c in prop_oneof![-5.0..-0.2f64, 0.2..5.0f64], shift in -0.3..0.3f64) {
            let (problem, domain) = PresetRegistry::builtin().get("example1").unwrap().build(2, None).unwrap();
            let exact = problem.exact.clone().unwrap();
            let probe = ErrorProbe::sample(&problem, &domain, 5, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let model = ClosedFormPrimal { shift, scale: 0.9, ..ClosedFormPrimal::new(2, exact.clone()) };
            let base = probe.relative_error(&model).unwrap();
            let scaled_model = ClosedFormPrimal { shift: c * shift, scale: c * 0.9, ..ClosedFormPrimal::new(2, exact) };
            let scaled_probe = ErrorProbe { exact: probe.exact.iter().map(|u| c * u).collect(), ..probe.clone() };
            let scaled = scaled_probe.relative_error(&scaled_model).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1e-300));
        }
    }
}

//! Weak-form residual, the three loss terms and their Monte Carlo estimators.
//!
//! Losses over a sample plan are assembled group by group: each interior
//! group is one constant spatial path, recorded on a small tape and swept
//! immediately. Because the interior loss is `ln R² − ln P` with `R` and `P`
//! sums over groups, the per-group gradients of `R` and `P` are accumulated
//! separately and combined once the totals are known.

use xwan_autodiff::{Scalar, Tape, Var};

use crate::domain::{DomainSpec, SamplePlan};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::nets::{mlp_forward_jet, MlpConfig};
use crate::primal::{PathQuery, PointEval, Primal};
use crate::problem::PdeProblem;

/// Clamp applied inside the logarithms of the interior loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_int: f64,
    pub l_bdry: f64,
    pub l_init: f64,
    pub total: f64,
    /// Estimate of `B(u, φ) − f(φ)`.
    pub residual: f64,
    /// Estimate of `‖φ‖²`.
    pub phi_norm_sq: f64,
}

impl LossBreakdown {
    pub fn assemble(residual: f64, phi_norm_sq: f64, l_bdry: f64, l_init: f64, alpha: f64, gamma: f64) -> Self {
        let l_int = loss_int(residual, phi_norm_sq);
        Self {
            l_int,
            l_bdry,
            l_init,
            total: l_int + alpha * l_bdry + gamma * l_init,
            residual,
            phi_norm_sq,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.residual.is_finite() && self.phi_norm_sq.is_finite()
    }
}

/// `ln(max(r², floor) / max(‖φ‖², floor))`.
pub fn loss_int(residual: f64, phi_norm_sq: f64) -> f64 {
    (residual * residual).max(LOG_FLOOR).ln() - phi_norm_sq.max(LOG_FLOOR).ln()
}

/// Mean squared difference times the measure of the sampled set.
pub fn loss_mse(values: &[f64], targets: &[f64], measure: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("squared-error loss over an empty point set".into()));
    }
    if values.len() != targets.len() {
        return Err(Error::Shape(format!("{} values against {} targets", values.len(), targets.len())));
    }
    let sum: f64 = values.iter().zip(targets).map(|(u, g)| (u - g) * (u - g)).sum();
    Ok(sum / values.len() as f64 * measure)
}

/// `dist(t, x) · φ_net(t, x)` with spatial tangents when `derivatives` is set.
pub fn test_function<S: Scalar>(
    net: &MlpConfig,
    weights: &[S],
    domain: &DomainSpec,
    t: f64,
    x: &[f64],
    derivatives: bool,
) -> Result<Jet<S>> {
    let n = if derivatives { x.len() } else { 0 };
    let tj = Jet::lift(S::constant(t), n);
    let xs: Vec<Jet<S>> = x
        .iter()
        .enumerate()
        .map(|(k, &v)| if derivatives { Jet::seed(S::constant(v), n, k) } else { Jet::lift(S::constant(v), 0) })
        .collect();
    let mut input = Vec::with_capacity(x.len() + 1);
    input.push(tj);
    input.extend_from_slice(&xs);
    let out = mlp_forward_jet(net, weights, &input)?[0];
    Ok(domain.boundary_distance(tj, &xs) * out)
}

/// Coefficients at one interior collocation point.
#[derive(Clone, Debug)]
pub struct PointCoeffs {
    pub t: f64,
    pub f: f64,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

impl PointCoeffs {
    pub fn at(problem: &PdeProblem, t: f64, x: &[f64]) -> Self {
        Self {
            t,
            f: problem.f(t, x),
            a: problem.diffusion_at(t, x),
            b: problem.drift_at(t, x),
        }
    }
}

/// `∂_t u φ + Σ a_ij ∂_j u ∂_i φ + Σ b_i ∂_i u φ + c(u) φ − f φ` at one point.
pub fn integrand<S: Scalar>(problem: &PdeProblem, x: &[f64], c: &PointCoeffs, u: &PointEval<S>, phi: &Jet<S>) -> S {
    let d = x.len();
    let mut acc = u.dt * phi.v;
    match &c.a {
        None => {
            for i in 0..d {
                acc += u.grad[i] * phi.t[i];
            }
        }
        Some(a) => {
            for i in 0..d {
                for j in 0..d {
                    let aij = a[i * d + j];
                    if aij != 0.0 {
                        acc += u.grad[j] * phi.t[i] * aij;
                    }
                }
            }
        }
    }
    if let Some(b) = &c.b {
        let mut drift = S::zero();
        for i in 0..d {
            drift += u.grad[i] * b[i];
        }
        acc += drift * phi.v;
    }
    let (cv, dc) = (problem.reaction)(u.u.value(), c.t, x);
    let cu = u.u.apply(cv, dc);
    acc + (cu - c.f) * phi.v
}

/// Monte Carlo estimate of `B(u, φ) − f(φ)`: mean integrand times `volume`.
pub fn weak_residual(
    problem: &PdeProblem,
    points: &[(f64, Vec<f64>)],
    u: &[PointEval<f64>],
    phi: &[Jet<f64>],
    volume: f64,
) -> Result<f64> {
    if points.len() != u.len() || points.len() != phi.len() {
        return Err(Error::Shape(format!(
            "{} points, {} primal evaluations, {} test-function evaluations",
            points.len(),
            u.len(),
            phi.len()
        )));
    }
    if points.is_empty() {
        return Err(Error::Config("weak residual over an empty point set".into()));
    }
    let sum: f64 = points
        .iter()
        .zip(u.iter().zip(phi))
        .map(|((t, x), (ue, pe))| integrand(problem, x, &PointCoeffs::at(problem, *t, x), ue, pe))
        .sum();
    Ok(sum / points.len() as f64 * volume)
}

/// One constant spatial path of the interior set.
#[derive(Clone, Debug)]
pub struct InteriorGroup {
    pub query: PathQuery,
    pub coeffs: Vec<PointCoeffs>,
}

/// Points with prescribed values (boundary or initial data).
#[derive(Clone, Debug)]
pub struct TargetGroup {
    pub query: PathQuery,
    pub targets: Vec<f64>,
}

/// A sample plan resolved into evaluation groups and estimator weights.
#[derive(Clone, Debug)]
pub struct Collocation {
    pub interior: Vec<InteriorGroup>,
    pub boundary: Vec<TargetGroup>,
    pub initial: Vec<TargetGroup>,
    pub w_int: f64,
    pub w_bdry: f64,
    pub w_init: f64,
    /// Boundary points that no sub-path reaches within tolerance.
    pub skipped_boundary: usize,
}

impl Collocation {
    pub fn build(problem: &PdeProblem, domain: &DomainSpec, plan: &SamplePlan) -> Result<Self> {
        let horizon = domain.horizon;
        let n_t = plan.times.len();
        let n_r = plan.interior.len();
        let omega = domain.omega_max_volume();
        let mut interior = Vec::with_capacity(n_r);
        for x in &plan.interior {
            let schedule = domain.schedule(x, &plan.times)?;
            let query = PathQuery::from_schedule(problem, &schedule, true);
            if query.kept_count() == 0 {
                continue;
            }
            let coeffs = query.kept_times().iter().map(|&t| PointCoeffs::at(problem, t, x)).collect();
            interior.push(InteriorGroup { query, coeffs });
        }
        let mut boundary = Vec::new();
        let mut skipped = 0;
        let w_bdry;
        if domain.is_time_varying() {
            for (t, x) in &plan.boundary_spacetime {
                match PathQuery::at_point(problem, domain, &plan.times, *t, x)? {
                    Some(query) => boundary.push(TargetGroup {
                        query,
                        targets: vec![problem.g(*t, x)],
                    }),
                    None => skipped += 1,
                }
            }
            w_bdry = domain.boundary_measure()? / plan.boundary_spacetime.len().max(1) as f64;
        } else {
            for x in &plan.boundary {
                let query = PathQuery::full_path(problem, x, &plan.times);
                let targets = plan.times.iter().map(|&t| problem.g(t, x)).collect();
                boundary.push(TargetGroup { query, targets });
            }
            w_bdry = domain.boundary_measure()? / (plan.boundary.len() * n_t).max(1) as f64;
        }
        let initial = plan
            .initial
            .iter()
            .map(|x| TargetGroup {
                query: PathQuery::full_path(problem, x, &[0.0]),
                targets: vec![problem.h(x)],
            })
            .collect();
        Ok(Self {
            interior,
            boundary,
            initial,
            w_int: horizon * omega / (n_r * n_t) as f64,
            w_bdry,
            w_init: omega / n_r as f64,
            skipped_boundary: skipped,
        })
    }

    pub fn interior_points(&self) -> usize {
        self.interior.iter().map(|g| g.coeffs.len()).sum()
    }
}

/// Primal values needed by the adversary step, computed once per epoch.
#[derive(Clone, Debug)]
pub struct PrimalCache {
    pub interior: Vec<Vec<PointEval<f64>>>,
    pub l_bdry: f64,
    pub l_init: f64,
}

/// Gradients of the total loss, with the loss values they were taken at.
#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: LossBreakdown,
    pub grad: Vec<f64>,
}

/// Loss assembly for one problem, domain and collocation set.
pub struct WeakForm<'a> {
    pub problem: &'a PdeProblem,
    pub domain: &'a DomainSpec,
    pub coll: &'a Collocation,
    pub phi_net: &'a MlpConfig,
    pub alpha: f64,
    pub gamma: f64,
}

fn target_sum_sq<S: Scalar>(values: &[PointEval<S>], targets: &[f64]) -> S {
    let mut acc = S::zero();
    for (v, &g) in values.iter().zip(targets) {
        acc += (v.u - g).square();
    }
    acc
}

/// `∂ l_int / ∂R` and `∂ l_int / ∂P`, zero where the clamp is active.
fn log_ratio_slopes(r: f64, p: f64) -> (f64, f64) {
    let dr = if r * r > LOG_FLOOR { 2.0 / r } else { 0.0 };
    let dp = if p > LOG_FLOOR { -1.0 / p } else { 0.0 };
    (dr, dp)
}

fn leaves<'t>(tape: &'t Tape, values: &[f64]) -> Vec<Var<'t>> {
    values.iter().map(|&v| Var::leaf(tape, v)).collect()
}

fn accumulate(tape: &Tape, out: Var<'_>, adj: &mut Vec<f64>, into: &mut [f64]) -> Result<()> {
    if let Some(id) = out.id() {
        tape.backward_seeded(&[(id, 1.0)], adj)?;
        for (g, a) in into.iter_mut().zip(adj.iter()) {
            *g += a;
        }
    } else {
        tape.check()?;
    }
    Ok(())
}

impl WeakForm<'_> {
    /// Test-function values and spatial gradients at every interior point.
    pub fn phi_values(&self, phi: &[f64]) -> Result<Vec<Vec<Jet<f64>>>> {
        self.coll
            .interior
            .iter()
            .map(|g| {
                g.coeffs
                    .iter()
                    .map(|c| test_function(self.phi_net, phi, self.domain, c.t, &g.query.x, true))
                    .collect()
            })
            .collect()
    }

    pub fn primal_values(&self, primal: &dyn Primal) -> Result<PrimalCache> {
        let interior = self
            .coll
            .interior
            .iter()
            .map(|g| primal.eval(&g.query, true))
            .collect::<Result<Vec<_>>>()?;
        let mut b = 0.0;
        for g in &self.coll.boundary {
            b += target_sum_sq(&primal.eval(&g.query, false)?, &g.targets);
        }
        let mut i = 0.0;
        for g in &self.coll.initial {
            i += target_sum_sq(&primal.eval(&g.query, false)?, &g.targets);
        }
        Ok(PrimalCache {
            interior,
            l_bdry: b * self.coll.w_bdry,
            l_init: i * self.coll.w_init,
        })
    }

    /// Loss values from cached evaluations.
    pub fn breakdown(&self, u: &PrimalCache, phi: &[Vec<Jet<f64>>]) -> LossBreakdown {
        let (mut r, mut p) = (0.0, 0.0);
        for ((g, ue), pe) in self.coll.interior.iter().zip(&u.interior).zip(phi) {
            for ((c, uv), pv) in g.coeffs.iter().zip(ue).zip(pe) {
                r += integrand(self.problem, &g.query.x, c, uv, pv);
                p += pv.v * pv.v;
            }
        }
        LossBreakdown::assemble(
            r * self.coll.w_int,
            p * self.coll.w_int,
            u.l_bdry,
            u.l_init,
            self.alpha,
            self.gamma,
        )
    }

    pub fn total_loss(&self, primal: &dyn Primal, phi: &[f64]) -> Result<LossBreakdown> {
        Ok(self.breakdown(&self.primal_values(primal)?, &self.phi_values(phi)?))
    }

    /// Gradient of the total loss in the primal parameters with the test
    /// function held fixed at `phi_cache`.
    pub fn primal_gradient(&self, primal: &dyn Primal, phi_cache: &[Vec<Jet<f64>>], tape: &mut Tape) -> Result<LossGradient> {
        let params = primal.params();
        let np = params.len();
        let mut g_r = vec![0.0; np];
        let mut g_b = vec![0.0; np];
        let mut g_i = vec![0.0; np];
        let mut adj = Vec::new();
        let (mut r, mut p) = (0.0, 0.0);
        for (g, pe) in self.coll.interior.iter().zip(phi_cache) {
            tape.clear();
            let w = leaves(tape, &params);
            let ue = primal.eval_tape(&w, &g.query, true)?;
            let mut acc = Var::constant(0.0);
            for ((c, uv), pv) in g.coeffs.iter().zip(&ue).zip(pe) {
                let phi_c = Jet::from_parts(Var::constant(pv.v), &pv.tangents().iter().map(|&v| Var::constant(v)).collect::<Vec<_>>());
                acc += integrand(self.problem, &g.query.x, c, uv, &phi_c);
                p += pv.v * pv.v;
            }
            r += acc.value();
            accumulate(tape, acc, &mut adj, &mut g_r)?;
        }
        let mut b = 0.0;
        for g in &self.coll.boundary {
            tape.clear();
            let w = leaves(tape, &params);
            let s = target_sum_sq(&primal.eval_tape(&w, &g.query, false)?, &g.targets);
            b += s.value();
            accumulate(tape, s, &mut adj, &mut g_b)?;
        }
        let mut i = 0.0;
        for g in &self.coll.initial {
            tape.clear();
            let w = leaves(tape, &params);
            let s = target_sum_sq(&primal.eval_tape(&w, &g.query, false)?, &g.targets);
            i += s.value();
            accumulate(tape, s, &mut adj, &mut g_i)?;
        }
        let (wi, wb, w0) = (self.coll.w_int, self.coll.w_bdry, self.coll.w_init);
        let loss = LossBreakdown::assemble(r * wi, p * wi, b * wb, i * w0, self.alpha, self.gamma);
        let (dr, _) = log_ratio_slopes(loss.residual, loss.phi_norm_sq);
        let grad = (0..np)
            .map(|k| dr * wi * g_r[k] + self.alpha * wb * g_b[k] + self.gamma * w0 * g_i[k])
            .collect();
        Ok(LossGradient { loss, grad })
    }

    /// Gradient of the total loss in the test-function parameters with the
    /// primal held fixed at `u`.
    pub fn phi_gradient(&self, u: &PrimalCache, phi: &[f64], tape: &mut Tape) -> Result<LossGradient> {
        let np = phi.len();
        let mut g_r = vec![0.0; np];
        let mut g_p = vec![0.0; np];
        let mut adj = Vec::new();
        let (mut r, mut p) = (0.0, 0.0);
        for (g, ue) in self.coll.interior.iter().zip(&u.interior) {
            tape.clear();
            let w = leaves(tape, phi);
            let mut acc_r = Var::constant(0.0);
            let mut acc_p = Var::constant(0.0);
            for (c, uv) in g.coeffs.iter().zip(ue) {
                let pv = test_function(self.phi_net, &w, self.domain, c.t, &g.query.x, true)?;
                let uc = uv.lift::<Var>();
                acc_r += integrand(self.problem, &g.query.x, c, &uc, &pv);
                acc_p += pv.v.square();
            }
            r += acc_r.value();
            p += acc_p.value();
            accumulate(tape, acc_r, &mut adj, &mut g_r)?;
            accumulate(tape, acc_p, &mut adj, &mut g_p)?;
        }
        let wi = self.coll.w_int;
        let loss = LossBreakdown::assemble(r * wi, p * wi, u.l_bdry, u.l_init, self.alpha, self.gamma);
        let (dr, dp) = log_ratio_slopes(loss.residual, loss.phi_norm_sq);
        let grad = (0..np).map(|k| wi * (dr * g_r[k] + dp * g_p[k])).collect();
        Ok(LossGradient { loss, grad })
    }

    /// Whole loss on a single tape, with both parameter sets as leaves.
    /// Returns the loss and its gradients in the primal and test-function
    /// parameters. Reference for the grouped gradients above.
    pub fn total_loss_tape(&self, primal: &dyn Primal, phi: &[f64]) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let pw = leaves(&tape, &primal.params());
        let fw = leaves(&tape, phi);
        let wi = self.coll.w_int;
        let mut r = Var::constant(0.0);
        let mut p = Var::constant(0.0);
        for g in &self.coll.interior {
            let ue = primal.eval_tape(&pw, &g.query, true)?;
            for (c, uv) in g.coeffs.iter().zip(&ue) {
                let pv = test_function(self.phi_net, &fw, self.domain, c.t, &g.query.x, true)?;
                r += integrand(self.problem, &g.query.x, c, uv, &pv);
                p += pv.v.square();
            }
        }
        let r = r * wi;
        let p = p * wi;
        let mut b = Var::constant(0.0);
        for g in &self.coll.boundary {
            b += target_sum_sq(&primal.eval_tape(&pw, &g.query, false)?, &g.targets);
        }
        let mut i = Var::constant(0.0);
        for g in &self.coll.initial {
            i += target_sum_sq(&primal.eval_tape(&pw, &g.query, false)?, &g.targets);
        }
        let b = b * self.coll.w_bdry;
        let i = i * self.coll.w_init;
        let num = if r.value() * r.value() > LOG_FLOOR { r.square().ln() } else { Var::constant(LOG_FLOOR.ln()) };
        let den = if p.value() > LOG_FLOOR { p.ln() } else { Var::constant(LOG_FLOOR.ln()) };
        let total = num - den + b * self.alpha + i * self.gamma;
        let loss = LossBreakdown::assemble(r.value(), p.value(), b.value(), i.value(), self.alpha, self.gamma);
        let (gp, gf) = match total.id() {
            Some(id) => {
                let adj = tape.backward(id)?;
                (
                    pw.iter().map(|v| v.id().map_or(0.0, |n| adj.wrt(n))).collect(),
                    fw.iter().map(|v| v.id().map_or(0.0, |n| adj.wrt(n))).collect(),
                )
            }
            None => (vec![0.0; pw.len()], vec![0.0; fw.len()]),
        };
        Ok((loss, gp, gf))
    }
}

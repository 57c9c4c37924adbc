//! Problem data for `∂_t u − ∇·(a∇u) + b·∇u + c(u) = f` with Dirichlet
//! boundary data g and initial data h, manufactured solutions and the named
//! benchmark presets.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xwan_autodiff::{Dual, Scalar};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};

type D1 = Dual<f64>;
type D2 = Dual<Dual<f64>>;

/// Closed-form function of `(t, x)` written once for every scalar type.
pub trait Formula {
    fn eval<S: Scalar>(&self, t: S, x: &[S]) -> S;
}

/// Object-safe view of a [`Formula`] with first and second derivatives.
pub trait SpaceTimeFn: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn dual(&self, t: D1, x: &[D1]) -> D1;
    fn hyper(&self, t: D2, x: &[D2]) -> D2;
}

impl<F: Formula + Send + Sync> SpaceTimeFn for F {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.eval(t, x)
    }
    fn dual(&self, t: D1, x: &[D1]) -> D1 {
        self.eval(t, x)
    }
    fn hyper(&self, t: D2, x: &[D2]) -> D2 {
        self.eval(t, x)
    }
}

/// Spatial gradient of `f(t, ·)` at `x`.
pub fn spatial_gradient(f: &dyn SpaceTimeFn, t: f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let xs: Vec<D1> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| if i == k { Dual::variable(v) } else { Dual::lift(v) })
                .collect();
            f.dual(Dual::lift(t), &xs).t
        })
        .collect()
}

pub fn time_derivative(f: &dyn SpaceTimeFn, t: f64, x: &[f64]) -> f64 {
    let xs: Vec<D1> = x.iter().map(|&v| Dual::lift(v)).collect();
    f.dual(Dual::variable(t), &xs).t
}

pub fn laplacian(f: &dyn SpaceTimeFn, t: f64, x: &[f64]) -> f64 {
    (0..x.len())
        .map(|k| {
            let xs: Vec<D2> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i == k {
                        Dual::new(Dual::variable(v), Dual::constant(1.0))
                    } else {
                        Dual::constant(v)
                    }
                })
                .collect();
            f.hyper(Dual::constant(t), &xs).t.t
        })
        .sum()
}

pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// `(u, t, x) ↦ (c, ∂c/∂u)`.
pub type ReactionFn = Arc<dyn Fn(f64, f64, &[f64]) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    Identity,
    /// Row-major d×d matrix.
    Field(MatrixField),
}

#[derive(Clone)]
pub enum Drift {
    Zero,
    Field(MatrixField),
}

#[derive(Clone)]
pub struct PdeProblem {
    pub name: String,
    pub d: usize,
    pub diffusion: Diffusion,
    pub drift: Drift,
    pub reaction: ReactionFn,
    pub forcing: ScalarField,
    pub boundary: Arc<dyn SpaceTimeFn>,
    /// Initial data; evaluated at t = 0.
    pub initial: Arc<dyn SpaceTimeFn>,
    pub exact: Option<Arc<dyn SpaceTimeFn>>,
}

impl std::fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeProblem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// `c(u) = −u²`.
pub fn negative_square() -> ReactionFn {
    Arc::new(|u, _t, _x| (-u * u, -2.0 * u))
}

impl PdeProblem {
    pub fn g(&self, t: f64, x: &[f64]) -> f64 {
        self.boundary.value(t, x)
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        self.initial.value(0.0, x)
    }

    pub fn f(&self, t: f64, x: &[f64]) -> f64 {
        (self.forcing)(t, x)
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        match &self.diffusion {
            Diffusion::Identity => None,
            Diffusion::Field(a) => Some(a(t, x)),
        }
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        match &self.drift {
            Drift::Zero => None,
            Drift::Field(b) => Some(b(t, x)),
        }
    }

    /// Checks that the symmetric part of `a` minus `alpha·I` is positive
    /// definite at `n` sampled interior points.
    pub fn check_uniformly_parabolic(&self, domain: &DomainSpec, alpha: f64, n: usize, seed: u64) -> Result<()> {
        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n {
            let (t, x) = domain.sample_spacetime(&mut rng)?;
            let a = match self.diffusion_at(t, &x) {
                None => {
                    if alpha < 1.0 {
                        continue;
                    }
                    vec![]
                }
                Some(a) => a,
            };
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let aij = if a.is_empty() { f64::from(i == j) } else { 0.5 * (a[i * d + j] + a[j * d + i]) };
                    m[i * d + j] = aij - if i == j { alpha } else { 0.0 };
                }
            }
            if !cholesky_positive(&mut m, d) {
                return Err(Error::Config(format!(
                    "diffusion is not uniformly parabolic with constant {alpha} at t = {t}, x = {x:?}"
                )));
            }
        }
        Ok(())
    }
}

fn cholesky_positive(m: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = m[j * d + j];
        for k in 0..j {
            diag -= m[j * d + k] * m[j * d + k];
        }
        if diag <= 0.0 {
            return false;
        }
        let l = diag.sqrt();
        m[j * d + j] = l;
        for i in j + 1..d {
            let mut v = m[i * d + j];
            for k in 0..j {
                v -= m[i * d + k] * m[j * d + k];
            }
            m[i * d + j] = v / l;
        }
    }
    true
}

/// Forcing of the benchmark operator `∂_t u − Δu − u²` for the given solution.
pub fn benchmark_forcing(exact: &dyn SpaceTimeFn, t: f64, x: &[f64]) -> f64 {
    let u = exact.value(t, x);
    time_derivative(exact, t, x) - laplacian(exact, t, x) - u * u
}

/// Central difference refined by one Richardson step.
fn richardson_first(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let c = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * c(0.5 * h) - c(h)) / 3.0
}

fn richardson_second(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let fx = f(x);
    let c = |h: f64| (f(x + h) - 2.0 * fx + f(x - h)) / (h * h);
    (4.0 * c(0.5 * h) - c(h)) / 3.0
}

/// `∂_t u − Δu − u² − f` with derivatives of `u` taken by finite differences.
pub fn fd_residual(exact: &dyn SpaceTimeFn, forcing: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64]) -> f64 {
    let ut = richardson_first(&|s| exact.value(s, x), t, 1e-3);
    let mut lap = 0.0;
    for k in 0..x.len() {
        lap += richardson_second(
            &|s| {
                let mut xs = x.to_vec();
                xs[k] = s;
                exact.value(t, &xs)
            },
            x[k],
            1e-3,
        );
    }
    let u = exact.value(t, x);
    ut - lap - u * u - forcing(t, x)
}

pub const MANUFACTURE_TOL: f64 = 1e-6;
pub const MANUFACTURE_POINTS: usize = 1000;

/// Problem for the benchmark operator (a = I, b = 0, c(u) = −u²) whose exact
/// solution is `exact`. The forcing is differentiated exactly; the result is
/// checked against finite differences at random interior points.
pub fn manufacture(name: &str, exact: Arc<dyn SpaceTimeFn>, domain: &DomainSpec, seed: u64) -> Result<PdeProblem> {
    domain.validate()?;
    let d = domain.dim();
    let ex = exact.clone();
    let forcing: ScalarField = Arc::new(move |t, x| benchmark_forcing(ex.as_ref(), t, x));
    let problem = PdeProblem {
        name: name.to_string(),
        d,
        diffusion: Diffusion::Identity,
        drift: Drift::Zero,
        reaction: negative_square(),
        forcing,
        boundary: exact.clone(),
        initial: exact.clone(),
        exact: Some(exact),
    };
    verify_manufactured(&problem, domain, MANUFACTURE_POINTS, seed)?;
    Ok(problem)
}

/// Largest finite-difference residual over `n` random interior points;
/// fails with the worst point when it exceeds [`MANUFACTURE_TOL`].
pub fn verify_manufactured(problem: &PdeProblem, domain: &DomainSpec, n: usize, seed: u64) -> Result<f64> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Config("manufactured check needs an exact solution".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forcing = |t: f64, x: &[f64]| problem.f(t, x);
    let mut worst = (0.0f64, 0.0, Vec::new());
    for _ in 0..n {
        let (t, x) = domain.sample_spacetime(&mut rng)?;
        let r = fd_residual(exact.as_ref(), &forcing, t, &x).abs();
        if !(r <= worst.0) {
            worst = (r, t, x);
        }
    }
    if !(worst.0 < MANUFACTURE_TOL) {
        return Err(Error::Manufacture {
            residual: worst.0,
            t: worst.1,
            x: worst.2,
        });
    }
    Ok(worst.0)
}

/// `2 sin(πx₁/2) cos(πx₂/2) e^{−t}`.
#[derive(Clone, Copy, Debug)]
pub struct SineCosine;

impl Formula for SineCosine {
    fn eval<S: Scalar>(&self, t: S, x: &[S]) -> S {
        (x[0] * (PI / 2.0)).sin() * (x[1] * (PI / 2.0)).cos() * (-t).exp() * 2.0
    }
}

/// `(π/2)^d · 2e^{−t} · Π_i sin(πx_i/2 + πi/2)`, with i counted from 1.
#[derive(Clone, Copy, Debug)]
pub struct ShiftedSineProduct;

impl Formula for ShiftedSineProduct {
    fn eval<S: Scalar>(&self, t: S, x: &[S]) -> S {
        let d = x.len();
        let mut acc = (-t).exp() * (2.0 * (PI / 2.0).powi(d as i32));
        for (i, &xi) in x.iter().enumerate() {
            acc = acc * (xi * (PI / 2.0) + PI * (i + 1) as f64 / 2.0).sin();
        }
        acc
    }
}

/// `2 sin(πx/2) e^{−t}` in one dimension.
#[derive(Clone, Copy, Debug)]
pub struct Sine1D;

impl Formula for Sine1D {
    fn eval<S: Scalar>(&self, t: S, x: &[S]) -> S {
        (x[0] * (PI / 2.0)).sin() * (-t).exp() * 2.0
    }
}

/// Named problem with a default domain.
pub trait ProblemPreset: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn default_dim(&self) -> usize;
    fn exact(&self) -> Arc<dyn SpaceTimeFn>;
    fn domain(&self, d: usize) -> Result<DomainSpec>;
    fn build(&self, d: usize, domain: Option<DomainSpec>) -> Result<(PdeProblem, DomainSpec)> {
        let domain = match domain {
            Some(dom) => dom,
            None => self.domain(d)?,
        };
        if domain.dim() != d {
            return Err(Error::Config(format!(
                "{}: domain dimension {} does not match d = {d}",
                self.name(),
                domain.dim()
            )));
        }
        let problem = manufacture(self.name(), self.exact(), &domain, 0x5eed)?;
        Ok((problem, domain))
    }
}

struct Example1;
struct Example2;
struct Example3;
struct Example4;

fn need_two(name: &str, d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Config(format!("{name} needs d ≥ 2, got {d}")));
    }
    Ok(())
}

impl ProblemPreset for Example1 {
    fn name(&self) -> &'static str {
        "example1"
    }
    fn description(&self) -> &'static str {
        "unit cube, u = 2 sin(πx₁/2) cos(πx₂/2) e^{-t}"
    }
    fn default_dim(&self) -> usize {
        5
    }
    fn exact(&self) -> Arc<dyn SpaceTimeFn> {
        Arc::new(SineCosine)
    }
    fn domain(&self, d: usize) -> Result<DomainSpec> {
        need_two(self.name(), d)?;
        Ok(DomainSpec::hypercube(d))
    }
}

impl ProblemPreset for Example2 {
    fn name(&self) -> &'static str {
        "example2"
    }
    fn description(&self) -> &'static str {
        "ball of radius 0.5 centred at (0.5, …, 0.5), same solution as example1"
    }
    fn default_dim(&self) -> usize {
        5
    }
    fn exact(&self) -> Arc<dyn SpaceTimeFn> {
        Arc::new(SineCosine)
    }
    fn domain(&self, d: usize) -> Result<DomainSpec> {
        need_two(self.name(), d)?;
        Ok(DomainSpec::ball(vec![0.5; d], 0.5))
    }
}

impl ProblemPreset for Example3 {
    fn name(&self) -> &'static str {
        "example3"
    }
    fn description(&self) -> &'static str {
        "unit cube, u = (π/2)^d 2e^{-t} Π sin(πx_i/2 + πi/2), any dimension"
    }
    fn default_dim(&self) -> usize {
        4
    }
    fn exact(&self) -> Arc<dyn SpaceTimeFn> {
        Arc::new(ShiftedSineProduct)
    }
    fn domain(&self, d: usize) -> Result<DomainSpec> {
        if d == 0 {
            return Err(Error::Config("example3 needs d ≥ 1".into()));
        }
        Ok(DomainSpec::hypercube(d))
    }
}

impl ProblemPreset for Example4 {
    fn name(&self) -> &'static str {
        "example4"
    }
    fn description(&self) -> &'static str {
        "hourglass time-varying domain in 1-D, u = 2 sin(πx/2) e^{-t}"
    }
    fn default_dim(&self) -> usize {
        1
    }
    fn exact(&self) -> Arc<dyn SpaceTimeFn> {
        Arc::new(Sine1D)
    }
    fn domain(&self, d: usize) -> Result<DomainSpec> {
        if d != 1 {
            return Err(Error::Config(format!("example4 is one-dimensional, got d = {d}")));
        }
        Ok(DomainSpec::hourglass())
    }
}

/// Problem presets by name.
pub struct PresetRegistry {
    entries: BTreeMap<&'static str, Box<dyn ProblemPreset>>,
}

impl PresetRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Example1));
        r.register(Box::new(Example2));
        r.register(Box::new(Example3));
        r.register(Box::new(Example4));
        r
    }

    pub fn register(&mut self, preset: Box<dyn ProblemPreset>) {
        self.entries.insert(preset.name(), preset);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ProblemPreset> {
        self.entries.get(name).map(|p| p.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown problem preset {name:?}; known: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn ProblemPreset> {
        self.entries.values().map(|p| p.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl Formula for Zero {
        fn eval<S: Scalar>(&self, _t: S, _x: &[S]) -> S {
            S::zero()
        }
    }

    struct TimeOnly;
    impl Formula for TimeOnly {
        fn eval<S: Scalar>(&self, t: S, _x: &[S]) -> S {
            t
        }
    }

    #[test]
    fn example1_forcing_matches_hand_derivation() {
        let (p, _) = PresetRegistry::builtin().get("example1").unwrap().build(2, None).unwrap();
        for &(t, x1, x2) in &[(0.1, 0.2, 0.3), (0.7, 0.9, 0.05), (1.0, 0.5, 0.5)] {
            let s = (PI * x1 / 2.0).sin();
            let c = (PI * x2 / 2.0).cos();
            let hand = (PI * PI - 2.0) * s * c * (-t).exp() - 4.0 * s * s * c * c * (-2.0 * t).exp();
            assert!((p.f(t, &[x1, x2]) - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_solution_gives_zero_data() {
        let p = manufacture("zero", Arc::new(Zero), &DomainSpec::hypercube(2), 1).unwrap();
        assert_eq!(p.f(0.3, &[0.1, 0.2]), 0.0);
        assert_eq!(p.g(0.3, &[0.0, 0.2]), 0.0);
        assert_eq!(p.h(&[0.5, 0.5]), 0.0);
    }

    #[test]
    fn time_solution_forcing() {
        let p = manufacture("t", Arc::new(TimeOnly), &DomainSpec::hypercube(1), 1).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            assert!((p.f(t, &[0.3]) - (1.0 - t * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn presets_pass_residual_check() {
        let reg = PresetRegistry::builtin();
        for (name, d) in [("example1", 2), ("example2", 5), ("example3", 2), ("example4", 1)] {
            let preset = reg.get(name).unwrap();
            let (p, dom) = preset.build(d, None).unwrap();
            let r = verify_manufactured(&p, &dom, 200, 3).unwrap();
            assert!(r < MANUFACTURE_TOL, "{name}: {r}");
        }
    }

    #[test]
    fn wrong_forcing_is_reported_with_worst_point() {
        let dom = DomainSpec::hypercube(2);
        let mut p = manufacture("ex", Arc::new(SineCosine), &dom, 1).unwrap();
        p.forcing = Arc::new(|t, x| benchmark_forcing(&SineCosine, t, x) + 1e-3 * x[0]);
        match verify_manufactured(&p, &dom, 100, 2) {
            Err(Error::Manufacture { residual, x, .. }) => {
                assert!(residual > 5e-4 && x[0] > 0.5);
            }
            other => panic!("expected manufacture error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = PresetRegistry::builtin().get("nope").err().unwrap().to_string();
        assert!(err.contains("example4"));
    }

    #[test]
    fn parabolicity_check() {
        let dom = DomainSpec::hypercube(2);
        let mut p = manufacture("ex", Arc::new(SineCosine), &dom, 1).unwrap();
        p.check_uniformly_parabolic(&dom, 0.5, 50, 1).unwrap();
        p.diffusion = Diffusion::Field(Arc::new(|_, x| vec![1.0, 0.0, 0.0, x[0] - 0.5]));
        assert!(p.check_uniformly_parabolic(&dom, 0.1, 50, 1).is_err());
    }

    #[test]
    fn derivative_helpers() {
        let x = [0.3, 0.8];
        let g = spatial_gradient(&SineCosine, 0.2, &x);
        let e = (-0.2f64).exp();
        let h = PI / 2.0;
        assert!((g[0] - 2.0 * h * (h * x[0]).cos() * (h * x[1]).cos() * e).abs() < 1e-14);
        assert!((g[1] + 2.0 * h * (h * x[0]).sin() * (h * x[1]).sin() * e).abs() < 1e-14);
        let u = SineCosine.eval(0.2, &x);
        assert!((laplacian(&SineCosine, 0.2, &x) + PI * PI / 2.0 * u).abs() < 1e-13);
        assert!((time_derivative(&SineCosine, 0.2, &x) + u).abs() < 1e-15);
    }
}

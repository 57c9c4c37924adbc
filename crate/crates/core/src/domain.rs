//! Space-time domain geometry: membership, sampling, boundary cutoff, the
//! time-independent cover, and entry/exit times of constant spatial paths.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xwan_autodiff::Scalar;

use crate::error::{Error, Result};

/// Tolerance for comparing times against partition members.
pub const TIME_TOL: f64 = 1e-9;
/// Target width of bracketing intervals when entry/exit times are found numerically.
pub const BISECTION_TOL: f64 = 1e-10;
const SCAN_STEPS: usize = 2000;
const MAX_REJECTIONS: usize = 1_000_000;

pub type Indicator = Arc<dyn Fn(f64, &[f64]) -> bool + Send + Sync>;
pub type IntervalSolver = Arc<dyn Fn(&[f64]) -> Vec<(f64, f64)> + Send + Sync>;
/// Returns the cutoff value and its spatial gradient.
pub type DistanceFn = Arc<dyn Fn(f64, &[f64]) -> (f64, Vec<f64>) + Send + Sync>;
pub type BoundarySampler = Arc<dyn Fn(&mut ChaCha8Rng) -> (f64, Vec<f64>) + Send + Sync>;

/// User-supplied time-varying domain.
#[derive(Clone)]
pub struct GeneralDomain {
    pub dim: usize,
    pub indicator: Indicator,
    /// Closed-form entry/exit times; bisection on the indicator otherwise.
    pub intervals: Option<IntervalSolver>,
    pub distance: DistanceFn,
    pub boundary_sampler: Option<BoundarySampler>,
    pub boundary_measure: Option<f64>,
    /// Box containing every cross-section.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone)]
pub enum DomainKind {
    /// Unit cube `[0, 1]^d`.
    HyperCube { d: usize },
    Ball { center: Vec<f64>, radius: f64 },
    /// One-dimensional domain whose half-width around 0.5 narrows linearly to
    /// 0.25 at t = 0.5 and widens back to 0.5 at t = 1.
    Hourglass1D,
    General(GeneralDomain),
}

impl fmt::Debug for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::HyperCube { d } => write!(f, "HyperCube({d})"),
            DomainKind::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            DomainKind::Hourglass1D => write!(f, "Hourglass1D"),
            DomainKind::General(g) => write!(f, "General(d = {}, box {:?}..{:?})", g.dim, g.lo, g.hi),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub horizon: f64,
}

/// Smallest time-independent region covering every cross-section.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaMax {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// Sub-paths of a constant spatial path with their collocation times.
#[derive(Clone, Debug, PartialEq)]
pub struct SubPathSchedule {
    pub x: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub times: Vec<Vec<f64>>,
    /// Whether each time is a member of the partition, as opposed to an
    /// added entry or exit time.
    pub in_partition: Vec<Vec<bool>>,
}

impl SubPathSchedule {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Collocation sets for one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub times: Vec<f64>,
    pub interior: Vec<Vec<f64>>,
    /// Spatial boundary points; empty for time-varying domains.
    pub boundary: Vec<Vec<f64>>,
    /// Points on the lateral boundary of the space-time domain; empty for
    /// time-independent domains, where `times × boundary` is used.
    pub boundary_spacetime: Vec<(f64, Vec<f64>)>,
    /// Interior points that lie in the initial cross-section.
    pub initial: Vec<Vec<f64>>,
}

/// Half-width of the hourglass cross-section around 0.5.
pub fn hourglass_half_width(t: f64) -> f64 {
    if t <= 0.5 {
        0.5 * (1.0 - t)
    } else {
        0.5 * t
    }
}

/// Volume of a d-ball of the given radius.
pub fn ball_volume(d: usize, radius: f64) -> f64 {
    // V_d = V_{d-2} · 2π r² / d
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 * radius };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI * radius * radius / k as f64;
        k += 2;
    }
    v
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let dir = unit_direction(rng, d);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + r * u).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Partition of `[0, horizon]` with fixed endpoints and `n - 2` sorted
/// uniform interior draws.
pub fn sample_partition(rng: &mut ChaCha8Rng, n: usize, horizon: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("time partition needs at least 2 points, got {n}")));
    }
    let mut inner: Vec<f64> = (0..n - 2).map(|_| rng.random_range(0.0..horizon)).collect();
    inner.sort_by(f64::total_cmp);
    let mut times = Vec::with_capacity(n);
    times.push(0.0);
    times.extend(inner);
    times.push(horizon);
    Ok(times)
}

/// Sub-path collocation lists for the given entry/exit intervals.
///
/// Each list starts at the entry time, takes every partition member in
/// `(entry, exit]`, and ends with the exit time when the path leaves before
/// the horizon at a time that is not itself a partition member.
pub fn build_subpath_times(x: &[f64], intervals: &[(f64, f64)], partition: &[f64], horizon: f64) -> Result<SubPathSchedule> {
    if partition.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("time partition must be strictly increasing".into()));
    }
    let member = |t: f64| partition.iter().any(|&p| (p - t).abs() <= TIME_TOL);
    let mut times = Vec::with_capacity(intervals.len());
    let mut masks = Vec::with_capacity(intervals.len());
    for &(lo, hi) in intervals {
        let mut ts = vec![lo];
        let mut mask = vec![member(lo)];
        for &p in partition {
            if p > lo + TIME_TOL && p <= hi + TIME_TOL {
                ts.push(p);
                mask.push(true);
            }
        }
        if hi < horizon - TIME_TOL && !member(hi) {
            ts.push(hi);
            mask.push(false);
        }
        times.push(ts);
        masks.push(mask);
    }
    Ok(SubPathSchedule {
        x: x.to_vec(),
        intervals: intervals.to_vec(),
        times,
        in_partition: masks,
    })
}

fn clean_intervals(raw: Vec<(f64, f64)>, horizon: f64) -> Vec<(f64, f64)> {
    raw.into_iter()
        .map(|(lo, hi)| (lo.max(0.0), if hi.is_finite() { hi.min(horizon) } else { horizon }))
        .filter(|&(lo, hi)| hi - lo > BISECTION_TOL)
        .collect()
}

/// Entry/exit times of `t ↦ inside(t)` on `[0, horizon]` by scanning and
/// bisection.
pub fn intervals_by_bisection(inside: impl Fn(f64) -> bool, horizon: f64) -> Vec<(f64, f64)> {
    let refine = |mut a: f64, mut b: f64, a_inside: bool| {
        // invariant: inside(a) == a_inside, inside(b) != a_inside
        while b - a > BISECTION_TOL {
            let m = 0.5 * (a + b);
            if inside(m) == a_inside {
                a = m;
            } else {
                b = m;
            }
        }
        if a_inside {
            a
        } else {
            b
        }
    };
    let dt = horizon / SCAN_STEPS as f64;
    let mut out = Vec::new();
    let mut prev = inside(0.0);
    let mut entry = prev.then_some(0.0);
    for k in 1..=SCAN_STEPS {
        let t = if k == SCAN_STEPS { horizon } else { k as f64 * dt };
        let cur = inside(t);
        if cur != prev {
            let t0 = t - dt;
            if cur {
                entry = Some(refine(t0, t, false));
            } else if let Some(e) = entry.take() {
                out.push((e, refine(t0, t, true)));
            }
            prev = cur;
        }
    }
    if let Some(e) = entry {
        out.push((e, horizon));
    }
    out
}

impl DomainSpec {
    pub fn hypercube(d: usize) -> Self {
        Self {
            kind: DomainKind::HyperCube { d },
            horizon: 1.0,
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Self {
            kind: DomainKind::Ball { center, radius },
            horizon: 1.0,
        }
    }

    pub fn hourglass() -> Self {
        Self {
            kind: DomainKind::Hourglass1D,
            horizon: 1.0,
        }
    }

    pub fn general(g: GeneralDomain, horizon: f64) -> Self {
        Self {
            kind: DomainKind::General(g),
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        match &self.kind {
            DomainKind::HyperCube { d } if *d == 0 => Err(Error::Config("cube dimension must be at least 1".into())),
            DomainKind::Ball { center, radius } if center.is_empty() || !(*radius > 0.0) => {
                Err(Error::Config("ball needs a nonempty center and positive radius".into()))
            }
            DomainKind::Hourglass1D if (self.horizon - 1.0).abs() > 1e-12 => {
                Err(Error::Config("the hourglass domain is defined for horizon 1".into()))
            }
            DomainKind::General(g) if g.lo.len() != g.dim || g.hi.len() != g.dim || g.dim == 0 => {
                Err(Error::Config("general domain box does not match its dimension".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::HyperCube { d } => *d,
            DomainKind::Ball { center, .. } => center.len(),
            DomainKind::Hourglass1D => 1,
            DomainKind::General(g) => g.dim,
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self.kind, DomainKind::Hourglass1D | DomainKind::General(_))
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        if !(-1e-12..=self.horizon + 1e-12).contains(&t) {
            return false;
        }
        match &self.kind {
            DomainKind::HyperCube { .. } => x.iter().all(|v| (0.0..=1.0).contains(v)),
            DomainKind::Ball { center, radius } => dist_sq(x, center) <= radius * radius,
            DomainKind::Hourglass1D => (x[0] - 0.5).abs() <= hourglass_half_width(t) + 1e-12,
            DomainKind::General(g) => (g.indicator)(t, x),
        }
    }

    pub fn omega_max(&self) -> OmegaMax {
        match &self.kind {
            DomainKind::HyperCube { d } => OmegaMax::Box {
                lo: vec![0.0; *d],
                hi: vec![1.0; *d],
            },
            DomainKind::Ball { center, radius } => OmegaMax::Ball {
                center: center.clone(),
                radius: *radius,
            },
            DomainKind::Hourglass1D => OmegaMax::Box {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            DomainKind::General(g) => OmegaMax::Box {
                lo: g.lo.clone(),
                hi: g.hi.clone(),
            },
        }
    }

    pub fn in_omega_max(&self, x: &[f64]) -> bool {
        match self.omega_max() {
            OmegaMax::Box { lo, hi } => x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h),
            OmegaMax::Ball { center, radius } => dist_sq(x, &center) <= radius * radius,
        }
    }

    pub fn omega_max_volume(&self) -> f64 {
        match self.omega_max() {
            OmegaMax::Box { lo, hi } => lo.iter().zip(&hi).map(|(l, h)| h - l).product(),
            OmegaMax::Ball { center, radius } => ball_volume(center.len(), radius),
        }
    }

    /// Measure of the space-time interior, when known in closed form.
    pub fn spacetime_volume(&self) -> Option<f64> {
        match &self.kind {
            DomainKind::HyperCube { .. } | DomainKind::Ball { .. } => Some(self.horizon * self.omega_max_volume()),
            DomainKind::Hourglass1D => Some(0.75),
            DomainKind::General(_) => None,
        }
    }

    /// Measure of the lateral boundary in space-time.
    pub fn boundary_measure(&self) -> Result<f64> {
        match &self.kind {
            DomainKind::HyperCube { d } => Ok(self.horizon * 2.0 * *d as f64),
            DomainKind::Ball { center, radius } => {
                let d = center.len() as f64;
                Ok(self.horizon * d / radius * ball_volume(center.len(), *radius))
            }
            DomainKind::Hourglass1D => Ok(2.0 * 1.25f64.sqrt()),
            DomainKind::General(g) => g
                .boundary_measure
                .ok_or_else(|| Error::Geometry("general domain has no boundary measure".into())),
        }
    }

    /// Entry and exit times of the constant path at `x`, with an exit beyond
    /// the horizon clamped to it and zero-length visits dropped.
    pub fn entry_exit(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let t_end = self.horizon;
        let raw = match &self.kind {
            DomainKind::HyperCube { .. } | DomainKind::Ball { .. } => {
                if self.contains(0.0, x) {
                    vec![(0.0, t_end)]
                } else {
                    vec![]
                }
            }
            DomainKind::Hourglass1D => {
                let delta = (x[0] - 0.5).abs();
                if delta <= 0.25 {
                    vec![(0.0, 1.0)]
                } else if delta <= 0.5 {
                    vec![(0.0, 1.0 - 2.0 * delta), (2.0 * delta, 1.0)]
                } else {
                    vec![]
                }
            }
            DomainKind::General(g) => match &g.intervals {
                Some(solver) => solver(x),
                None => intervals_by_bisection(|t| (g.indicator)(t, x), t_end),
            },
        };
        clean_intervals(raw, t_end)
    }

    pub fn schedule(&self, x: &[f64], partition: &[f64]) -> Result<SubPathSchedule> {
        build_subpath_times(x, &self.entry_exit(x), partition, self.horizon)
    }

    /// Cutoff that vanishes on the spatial boundary of the cross-section at
    /// `t` and is positive inside. Normalized to 1 at the center for the
    /// built-in shapes.
    pub fn boundary_distance<S: Scalar>(&self, t: S, x: &[S]) -> S {
        match &self.kind {
            DomainKind::HyperCube { d } => {
                let mut acc = S::constant(4f64.powi(*d as i32));
                for &xi in x {
                    acc = acc * xi * (-xi + 1.0);
                }
                acc
            }
            DomainKind::Ball { center, radius } => {
                let r2 = radius * radius;
                let mut s = S::zero();
                for (&xi, &c) in x.iter().zip(center) {
                    s += (xi - c).square();
                }
                (-s + r2) / r2
            }
            DomainKind::Hourglass1D => {
                let tv = t.value();
                let w = if tv <= 0.5 { (-t + 1.0) * 0.5 } else { t * 0.5 };
                let dx = x[0] - 0.5;
                let adx = if dx.value() < 0.0 { -dx } else { dx };
                (w - adx) / w
            }
            DomainKind::General(g) => {
                let xv: Vec<f64> = x.iter().map(|v| v.value()).collect();
                let (v, grad) = (g.distance)(t.value(), &xv);
                let mut acc = S::constant(v);
                for ((&xi, &gi), &x0) in x.iter().zip(&grad).zip(&xv) {
                    acc += (xi - x0) * gi;
                }
                acc
            }
        }
    }

    fn sample_omega_max(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.omega_max() {
            OmegaMax::Box { lo, hi } => lo.iter().zip(&hi).map(|(&l, &h)| rng.random_range(l..=h)).collect(),
            OmegaMax::Ball { center, radius } => uniform_in_ball(rng, &center, radius),
        }
    }

    fn sample_spatial_boundary(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match &self.kind {
            DomainKind::HyperCube { d } => {
                let face = rng.random_range(0..2 * d);
                let mut x: Vec<f64> = (0..*d).map(|_| rng.random::<f64>()).collect();
                x[face / 2] = (face % 2) as f64;
                Ok(x)
            }
            DomainKind::Ball { center, radius } => {
                let dir = unit_direction(rng, center.len());
                Ok(center.iter().zip(&dir).map(|(c, u)| c + radius * u).collect())
            }
            _ => Err(Error::Geometry("spatial boundary sampling needs a time-independent domain".into())),
        }
    }

    fn sample_lateral_boundary(&self, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)> {
        match &self.kind {
            DomainKind::Hourglass1D => {
                // |w'| is constant, so uniform t is uniform in arc length.
                let t: f64 = rng.random();
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Ok((t, vec![0.5 + side * hourglass_half_width(t)]))
            }
            DomainKind::General(g) => match &g.boundary_sampler {
                Some(s) => Ok(s(rng)),
                None => Err(Error::Geometry("general domain has no boundary sampler".into())),
            },
            _ => {
                let t = rng.random_range(0.0..=self.horizon);
                Ok((t, self.sample_spatial_boundary(rng)?))
            }
        }
    }

    /// Uniform point of the space-time interior, by rejection from the cover
    /// when the domain varies in time.
    pub fn sample_spacetime(&self, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)> {
        for _ in 0..MAX_REJECTIONS {
            let t = rng.random_range(0.0..=self.horizon);
            let x = self.sample_omega_max(rng);
            if !self.is_time_varying() || self.contains(t, &x) {
                return Ok((t, x));
            }
        }
        Err(Error::Geometry(format!(
            "no interior point found in {MAX_REJECTIONS} attempts"
        )))
    }

    pub fn sample_plan(&self, n_t: usize, n_r: usize, n_b: usize, rng: &mut ChaCha8Rng) -> Result<SamplePlan> {
        if n_r == 0 || n_b == 0 {
            return Err(Error::Config("collocation counts must be at least 1".into()));
        }
        let times = sample_partition(rng, n_t, self.horizon)?;
        let interior: Vec<Vec<f64>> = (0..n_r).map(|_| self.sample_omega_max(rng)).collect();
        let (boundary, boundary_spacetime) = if self.is_time_varying() {
            let pts = (0..n_b).map(|_| self.sample_lateral_boundary(rng)).collect::<Result<_>>()?;
            (Vec::new(), pts)
        } else {
            let pts = (0..n_b).map(|_| self.sample_spatial_boundary(rng)).collect::<Result<_>>()?;
            (pts, Vec::new())
        };
        let initial = interior.iter().filter(|x| self.contains(0.0, x)).cloned().collect();
        Ok(SamplePlan {
            times,
            interior,
            boundary,
            boundary_spacetime,
            initial,
        })
    }
}

fn dist_sq(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

//! XNODE: a neural ODE along constant spatial paths. The hidden state starts
//! from a learned lift of the initial or boundary datum, evolves under a
//! vector field that also sees the spatial point, and is read out linearly.

use serde::{Deserialize, Serialize};
use xwan_autodiff::Scalar;

use crate::domain::SubPathSchedule;
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::nets::{mlp_forward_jet, Activation, MlpConfig, MlpParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XNodeConfig {
    pub d: usize,
    pub h_dim: usize,
    pub init_hidden: Vec<usize>,
    pub vec_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub substeps: usize,
}

impl XNodeConfig {
    pub fn init_net(&self) -> MlpConfig {
        MlpConfig::new(1, self.init_hidden.clone(), self.h_dim, self.activation)
    }

    /// Input layout `(h, t, x)`.
    pub fn vec_net(&self) -> MlpConfig {
        MlpConfig::new(self.h_dim + 1 + self.d, self.vec_hidden.clone(), self.h_dim, self.activation)
    }

    pub fn param_count(&self) -> usize {
        self.init_net().param_count() + self.vec_net().param_count() + self.h_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h_dim == 0 || self.substeps == 0 {
            return Err(Error::Config("xnode needs d, h_dim and substeps of at least 1".into()));
        }
        self.init_net().validate()?;
        self.vec_net().validate()
    }
}

/// Initial-lift net, vector-field net and readout weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XNodeParams {
    pub config: XNodeConfig,
    pub theta1: MlpParams,
    pub theta2: MlpParams,
    pub readout: Vec<f64>,
}

impl XNodeParams {
    pub fn init(config: XNodeConfig, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        config.validate()?;
        let theta1 = MlpParams::init(config.init_net(), seed)?;
        let theta2 = MlpParams::init(config.vec_net(), seed.wrapping_add(1))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let bound = (6.0 / (config.h_dim + 1) as f64).sqrt();
        let readout = (0..config.h_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(Self {
            config,
            theta1,
            theta2,
            readout,
        })
    }

    pub fn from_parts(config: XNodeConfig, theta1: MlpParams, theta2: MlpParams, readout: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if theta1.config != config.init_net() || theta2.config != config.vec_net() || readout.len() != config.h_dim {
            return Err(Error::Shape("xnode parts do not chain through h_dim".into()));
        }
        Ok(Self {
            config,
            theta1,
            theta2,
            readout,
        })
    }

    /// Parameters in the order θ₁, θ₂, readout.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.config.param_count());
        v.extend_from_slice(&self.theta1.params);
        v.extend_from_slice(&self.theta2.params);
        v.extend_from_slice(&self.readout);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} xnode parameters, got {}",
                self.config.param_count(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(self.theta1.len());
        let (b, c) = rest.split_at(self.theta2.len());
        self.theta1.params.copy_from_slice(a);
        self.theta2.params.copy_from_slice(b);
        self.readout.copy_from_slice(c);
        Ok(())
    }

    pub fn view(&self) -> XNodeView<'_, f64> {
        XNodeView {
            config: &self.config,
            init_net: self.theta1.config.clone(),
            vec_net: self.theta2.config.clone(),
            w1: &self.theta1.params,
            w2: &self.theta2.params,
            wr: &self.readout,
        }
    }
}

/// Borrowed parameters of any scalar type, split into the three parts.
pub struct XNodeView<'a, S> {
    pub config: &'a XNodeConfig,
    init_net: MlpConfig,
    vec_net: MlpConfig,
    w1: &'a [S],
    w2: &'a [S],
    wr: &'a [S],
}

impl<'a, S: Scalar> XNodeView<'a, S> {
    /// Split a flat parameter slice laid out as by [`XNodeParams::flat`].
    pub fn from_flat(config: &'a XNodeConfig, flat: &'a [S]) -> Result<Self> {
        let init_net = config.init_net();
        let vec_net = config.vec_net();
        if flat.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} xnode parameters, got {}",
                config.param_count(),
                flat.len()
            )));
        }
        let (w1, rest) = flat.split_at(init_net.param_count());
        let (w2, wr) = rest.split_at(vec_net.param_count());
        Ok(Self {
            config,
            init_net,
            vec_net,
            w1,
            w2,
            wr,
        })
    }

    pub fn lift(&self, init_value: Jet<S>) -> Result<Vec<Jet<S>>> {
        mlp_forward_jet(&self.init_net, self.w1, &[init_value])
    }

    pub fn field(&self, h: &[Jet<S>], t: f64, x: &[Jet<S>]) -> Result<Vec<Jet<S>>> {
        let n = x.iter().map(|j| j.n).max().unwrap_or(0);
        let mut input = Vec::with_capacity(h.len() + 1 + x.len());
        input.extend_from_slice(h);
        input.push(Jet::lift(S::constant(t), n));
        input.extend_from_slice(x);
        mlp_forward_jet(&self.vec_net, self.w2, &input)
    }

    pub fn readout(&self, h: &[Jet<S>]) -> Jet<S> {
        let n = h.iter().map(|j| j.n).max().unwrap_or(0);
        let mut o = Jet::lift(S::zero(), n);
        for (&w, hj) in self.wr.iter().zip(h) {
            o.v += w * hj.v;
            for k in 0..hj.n {
                o.t[k] += w * hj.t[k];
            }
        }
        o
    }

    pub fn readout_value(&self, v: &[Jet<S>]) -> S {
        let mut o = S::zero();
        for (&w, vj) in self.wr.iter().zip(v) {
            o += w * vj.v;
        }
        o
    }

    /// Outputs at every time of `times` and, when `with_dt` is set, their
    /// time derivatives. `x` carries the spatial tangent directions and
    /// `init_value` the datum feeding the initial lift.
    pub fn path(&self, x: &[Jet<S>], init_value: Jet<S>, times: &[f64], with_dt: bool) -> Result<PathOutput<S>> {
        let h0 = self.lift(init_value)?;
        let want_last = with_dt;
        let (states, fields) = rk4_path(|h, t| self.field(h, t, x), h0, times, self.config.substeps, want_last)?;
        let values = states.iter().map(|h| self.readout(h)).collect();
        let dt = if with_dt {
            fields.iter().map(|f| self.readout_value(f)).collect()
        } else {
            Vec::new()
        };
        Ok(PathOutput { values, dt })
    }
}

#[derive(Clone, Debug)]
pub struct PathOutput<S> {
    pub values: Vec<Jet<S>>,
    pub dt: Vec<S>,
}

/// Classical RK4 through the nodes of `times`, each interval split into
/// `substeps` equal steps. Returns the state at every node and the vector
/// field evaluated at every node (the last one only if `field_at_last`).
fn rk4_path<T, F>(
    mut field: F,
    h0: Vec<T>,
    times: &[f64],
    substeps: usize,
    field_at_last: bool,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)>
where
    T: Scalar,
    F: FnMut(&[T], f64) -> Result<Vec<T>>,
{
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("integration times must be strictly increasing".into()));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut fields = Vec::with_capacity(times.len());
    let mut h = h0;
    let mut step = 0;
    for (j, &t0) in times.iter().enumerate() {
        let Some(&t1) = times.get(j + 1) else {
            break;
        };
        let dt = (t1 - t0) / substeps as f64;
        for s in 0..substeps {
            let t = t0 + s as f64 * dt;
            let k1 = field(&h, t)?;
            let y2: Vec<T> = h.iter().zip(&k1).map(|(&a, &k)| a + k * (0.5 * dt)).collect();
            let k2 = field(&y2, t + 0.5 * dt)?;
            let y3: Vec<T> = h.iter().zip(&k2).map(|(&a, &k)| a + k * (0.5 * dt)).collect();
            let k3 = field(&y3, t + 0.5 * dt)?;
            let y4: Vec<T> = h.iter().zip(&k3).map(|(&a, &k)| a + k * dt).collect();
            let k4 = field(&y4, t + dt)?;
            let next: Vec<T> = (0..h.len())
                .map(|i| h[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0))
                .collect();
            if s == 0 {
                states.push(std::mem::replace(&mut h, next));
                fields.push(k1);
            } else {
                h = next;
            }
            step += 1;
            if h.iter().any(|v| !v.value().is_finite()) {
                return Err(Error::Divergence { step });
            }
        }
    }
    if field_at_last && !times.is_empty() {
        fields.push(field(&h, *times.last().unwrap())?);
    }
    if !times.is_empty() {
        states.push(h);
    }
    Ok((states, fields))
}

/// States at every node of `times` under `dh/dt = field(h, t)`.
pub fn rk4_integrate<F>(mut field: F, h0: &[f64], times: &[f64], substeps: usize) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    rk4_path(|h, t| Ok(field(h, t)), h0.to_vec(), times, substeps, false).map(|(s, _)| s)
}

fn constants(x: &[f64]) -> Vec<Jet<f64>> {
    x.iter().map(|&v| Jet::lift(v, 0)).collect()
}

/// Outputs of the model along the constant path at `x`.
pub fn xnode_forward(params: &XNodeParams, x: &[f64], times: &[f64], init_value: f64) -> Result<Vec<f64>> {
    check_x(params, x)?;
    let out = params.view().path(&constants(x), Jet::lift(init_value, 0), times, false)?;
    Ok(out.values.iter().map(|j| j.v).collect())
}

/// `∂_t o = readout(N^vec(h, t, x))` by linearity of the readout.
pub fn temporal_derivative(params: &XNodeParams, x: &[f64], h_state: &[f64], t: f64) -> Result<f64> {
    check_x(params, x)?;
    let view = params.view();
    let f = view.field(&constants(h_state), t, &constants(x))?;
    Ok(view.readout_value(&f))
}

/// Hidden states along the path, for use with [`temporal_derivative`].
pub fn hidden_states(params: &XNodeParams, x: &[f64], times: &[f64], init_value: f64) -> Result<Vec<Vec<f64>>> {
    check_x(params, x)?;
    let view = params.view();
    let h0 = view.lift(Jet::lift(init_value, 0))?;
    let xs = constants(x);
    let (states, _) = rk4_path(|h, t| view.field(h, t, &xs), h0, times, params.config.substeps, false)?;
    Ok(states.iter().map(|h| h.iter().map(|j| j.v).collect()).collect())
}

fn check_x(params: &XNodeParams, x: &[f64]) -> Result<()> {
    if x.len() != params.config.d {
        return Err(Error::Shape(format!(
            "xnode expects {}-dimensional points, got {}",
            params.config.d,
            x.len()
        )));
    }
    Ok(())
}

/// One row per point, one column per time, on a time-independent domain.
pub fn predict_grid(
    params: &XNodeParams,
    points: &[Vec<f64>],
    times: &[f64],
    h: &dyn Fn(&[f64]) -> f64,
) -> Result<Vec<Vec<f64>>> {
    points.iter().map(|x| xnode_forward(params, x, times, h(x))).collect()
}

/// Datum feeding the initial lift of sub-path `index` starting at `entry`:
/// the initial data when the first sub-path starts at time zero, the
/// boundary data at the entry point otherwise.
pub fn initial_datum(
    index: usize,
    entry: f64,
    x: &[f64],
    h: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(f64, &[f64]) -> f64,
) -> f64 {
    if index == 0 && entry == 0.0 {
        h(x)
    } else {
        g(entry, x)
    }
}

/// Outputs on every sub-path of the schedule, at the schedule's times.
pub fn predict_timevarying(
    params: &XNodeParams,
    schedule: &SubPathSchedule,
    h: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(f64, &[f64]) -> f64,
) -> Result<Vec<Vec<f64>>> {
    schedule
        .intervals
        .iter()
        .zip(&schedule.times)
        .enumerate()
        .map(|(i, (&(entry, _), times))| {
            let init = initial_datum(i, entry, &schedule.x, h, g);
            xnode_forward(params, &schedule.x, times, init)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_subpath_times, DomainSpec};

    /// h_dim = 1, identity lift, field −h, identity readout.
    pub(crate) fn exponential(d: usize) -> XNodeParams {
        let config = XNodeConfig {
            d,
            h_dim: 1,
            init_hidden: vec![],
            vec_hidden: vec![],
            activation: Activation::Tanh,
            substeps: 1,
        };
        let theta1 = MlpParams::from_params(config.init_net(), vec![1.0, 0.0]).unwrap();
        let mut w2 = vec![0.0; config.vec_net().param_count()];
        w2[0] = -1.0;
        let theta2 = MlpParams::from_params(config.vec_net(), w2).unwrap();
        XNodeParams::from_parts(config, theta1, theta2, vec![1.0]).unwrap()
    }

    fn small(d: usize, seed: u64) -> XNodeParams {
        XNodeParams::init(
            XNodeConfig {
                d,
                h_dim: 3,
                init_hidden: vec![4],
                vec_hidden: vec![5],
                activation: Activation::Tanh,
                substeps: 1,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let s = rk4_integrate(|h, _| vec![0.0; h.len()], &[2.5, -1.0], &[0.0, 0.3, 1.0], 2).unwrap();
        assert!(s.iter().all(|h| h == &vec![2.5, -1.0]));
    }

    #[test]
    fn single_rk4_step_of_decay() {
        let s = rk4_integrate(|h, _| vec![-h[0]], &[1.0], &[0.0, 0.1], 1).unwrap();
        // k1 = −1, k2 = −0.95, k3 = −0.9525, k4 = −0.90475
        let hand = 1.0 + 0.1 / 6.0 * (-1.0 - 2.0 * 0.95 - 2.0 * 0.9525 - 0.90475);
        assert!((s[1][0] - hand).abs() < 1e-15);
        assert!((s[1][0] - 0.9048375).abs() < 1e-9);
        assert!((s[1][0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn constant_rate_is_exact() {
        let s = rk4_integrate(|_, _| vec![1.0], &[0.0], &[0.0, 0.5, 1.0], 1).unwrap();
        assert_eq!(s, vec![vec![0.0], vec![0.5], vec![1.0]]);
    }

    #[test]
    fn divergence_reports_step() {
        let err = rk4_integrate(|h, _| vec![h[0] * h[0] * 1e200], &[1e100], &[0.0, 0.5, 1.0], 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1 }));
    }

    #[test]
    fn rk4_order_is_four() {
        let steps: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&h| {
                let n = (1.0 / h).round() as usize;
                let times: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
                let s = rk4_integrate(|y, _| vec![-y[0]], &[1.0], &times, 1).unwrap();
                (s[n][0] - (-1.0f64).exp()).abs()
            })
            .collect();
        let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        assert!((slope - 4.0).abs() < 0.2, "slope {slope}");
    }

    pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        cov / var
    }

    #[test]
    fn zero_vector_field_gives_constant_output() {
        let mut p = small(2, 3);
        p.theta2.params.iter_mut().for_each(|w| *w = 0.0);
        let o = xnode_forward(&p, &[0.2, 0.7], &[0.0, 0.4, 1.0], 0.8).unwrap();
        assert!(o.iter().all(|&v| v == o[0]));
        assert_eq!(temporal_derivative(&p, &[0.2, 0.7], &[0.1, 0.2, 0.3], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn exponential_configuration() {
        let p = exponential(1);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let o = xnode_forward(&p, &[0.3], &times, 1.5).unwrap();
        for (t, v) in times.iter().zip(&o) {
            assert!((v - 1.5 * (-t).exp()).abs() < 1e-7);
        }
        let hs = hidden_states(&p, &[0.3], &times, 1.5).unwrap();
        let dt = temporal_derivative(&p, &[0.3], &hs[7], times[7]).unwrap();
        assert!((dt + o[7]).abs() < 1e-12);
        let grid = predict_grid(&p, &[vec![0.1], vec![0.4]], &times, &|x| if x[0] < 0.2 { 1.0 } else { 2.0 }).unwrap();
        for (a, b) in grid[0].iter().zip(&grid[1]) {
            assert!((b - 2.0 * a).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_readout_has_zero_time_derivative() {
        let mut p = small(1, 5);
        p.readout = vec![0.0; 3];
        assert_eq!(temporal_derivative(&p, &[0.4], &[1.0, -2.0, 0.5], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn single_time_is_initial_readout() {
        let p = small(2, 7);
        let o = xnode_forward(&p, &[0.5, 0.5], &[0.0], 0.3).unwrap();
        let lift = p.theta1.eval(&[0.3]).unwrap();
        let expect: f64 = lift.iter().zip(&p.readout).map(|(a, b)| a * b).sum();
        assert_eq!(o, vec![expect]);
    }

    #[test]
    fn path_time_derivative_matches_field_at_nodes() {
        let p = small(2, 11);
        let x = [0.3, 0.6];
        let times = [0.0, 0.2, 0.5, 1.0];
        let xs: Vec<Jet<f64>> = x.iter().map(|&v| Jet::lift(v, 0)).collect();
        let out = p.view().path(&xs, Jet::lift(0.4, 0), &times, true).unwrap();
        let hs = hidden_states(&p, &x, &times, 0.4).unwrap();
        for (j, &t) in times.iter().enumerate() {
            assert_eq!(out.dt[j], temporal_derivative(&p, &x, &hs[j], t).unwrap());
        }
    }

    #[test]
    fn spatial_tangents_match_finite_differences() {
        let mut p = small(2, 13);
        p.config.substeps = 2;
        let x = [0.3, 0.6];
        let times = [0.0, 0.3, 1.0];
        let init = |x: &[f64]| (x[0] * 2.0).sin() + x[1];
        let xs: Vec<Jet<f64>> = (0..2).map(|k| Jet::seed(x[k], 2, k)).collect();
        let init_jet = Jet::from_parts(init(&x), &[2.0 * (2.0 * x[0]).cos(), 1.0]);
        let out = p.view().path(&xs, init_jet, &times, false).unwrap();
        let step = 1e-6;
        for k in 0..2 {
            let mut up = x;
            up[k] += step;
            let mut dn = x;
            dn[k] -= step;
            let fu = xnode_forward(&p, &up, &times, init(&up)).unwrap();
            let fd = xnode_forward(&p, &dn, &times, init(&dn)).unwrap();
            for j in 0..times.len() {
                let fdv = (fu[j] - fd[j]) / (2.0 * step);
                assert!((out.values[j].t[k] - fdv).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn timevarying_single_subpath_reduces_to_forward() {
        let p = small(1, 17);
        let times = [0.0, 0.25, 0.6, 1.0];
        let dom = DomainSpec::hypercube(1);
        let s = dom.schedule(&[0.4], &times).unwrap();
        let h = |x: &[f64]| x[0] * 3.0;
        let g = |_t: f64, _x: &[f64]| f64::NAN;
        let tv = predict_timevarying(&p, &s, &h, &g).unwrap();
        let grid = predict_grid(&p, &[vec![0.4]], &times, &h).unwrap();
        assert_eq!(tv, grid);
    }

    #[test]
    fn hourglass_subpaths_start_from_their_data() {
        let p = small(1, 19);
        let part: Vec<f64> = (0..9).map(|k| k as f64 * 0.125).collect();
        let s = DomainSpec::hourglass().schedule(&[0.9], &part).unwrap();
        assert_eq!(s.intervals.len(), 2);
        let h = |x: &[f64]| 10.0 + x[0];
        let g = |t: f64, x: &[f64]| 20.0 + t + x[0];
        let out = predict_timevarying(&p, &s, &h, &g).unwrap();
        let first = xnode_forward(&p, &[0.9], &s.times[0], h(&[0.9])).unwrap();
        let second = xnode_forward(&p, &[0.9], &s.times[1], g(s.intervals[1].0, &[0.9])).unwrap();
        assert_eq!(out, vec![first, second]);
        assert!((s.intervals[1].0 - 0.8).abs() < 1e-12);
        let none = build_subpath_times(&[1.5], &[], &part, 1.0).unwrap();
        assert!(predict_timevarying(&p, &none, &h, &g).unwrap().is_empty());
    }

    #[test]
    fn flat_round_trip() {
        let p = small(3, 23);
        let mut q = small(3, 29);
        q.set_flat(&p.flat()).unwrap();
        assert_eq!(p, q);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(20))]

        #[test]
        fn trajectories_of_nearby_fields_stay_within_the_gronwall_bound(
            seed in 0u64..10_000,
            gap in proptest::collection::vec(-0.5..0.5f64, 2),
            start_gap in proptest::collection::vec(-0.2..0.2f64, 2),
        ) {
            // V1 = tanh network on (h, t); V2 = V1 + gap·sin(3t), sup distance max|gap|
            let net = MlpParams::init(MlpConfig::new(3, vec![4], 2, Activation::Tanh), seed).unwrap();
            let l = net.lipschitz_bound();
            let m = gap.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let v1 = |h: &[f64], t: f64| net.eval(&[h[0], h[1], t]).unwrap();
            let v2 = |h: &[f64], t: f64| {
                let mut v = net.eval(&[h[0], h[1], t]).unwrap();
                for (vi, g) in v.iter_mut().zip(&gap) {
                    *vi += g * (3.0 * t).sin();
                }
                v
            };
            let f1 = [0.3, -0.1];
            let f2 = [f1[0] + start_gap[0], f1[1] + start_gap[1]];
            let d0 = start_gap.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
            let a = rk4_integrate(v1, &f1, &times, 8).unwrap();
            let b = rk4_integrate(v2, &f2, &times, 8).unwrap();
            for (k, &t) in times.iter().enumerate() {
                let dist = a[k].iter().zip(&b[k]).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                let bound = d0 * (l * t).exp() + m / l * ((l * t).exp() - 1.0) + 1e-6;
                proptest::prop_assert!(dist <= bound, "t {t}: {dist} > {bound}");
            }
        }
    }
}

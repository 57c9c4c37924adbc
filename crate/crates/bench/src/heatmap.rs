//! Solution slices on a 2-D grid, written as CSV and SVG.
//!
//! Colours come from a 256-step linear map: level `k = round(255·(v − min) /
//! (max − min))` (0 for a constant grid) is drawn as the RGB interpolation
//! `(68, 1, 84) + k/255 · ((253, 231, 37) − (68, 1, 84))`, rounded per channel.

use std::fmt::Write as _;
use std::path::Path;

use xwan_core::domain::DomainSpec;
use xwan_core::primal::Primal;
use xwan_core::problem::PdeProblem;
use xwan_core::trainer::predict_at;

use crate::output::fmt_num;
use crate::CliError;

const LOW: [f64; 3] = [68.0, 1.0, 84.0];
const HIGH: [f64; 3] = [253.0, 231.0, 37.0];

/// A plotted coordinate: time or one spatial component (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Space(usize),
}

impl Axis {
    pub fn parse(s: &str, d: usize) -> Result<Self, CliError> {
        if s == "t" {
            return Ok(Self::Time);
        }
        let k = s
            .strip_prefix('x')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= d)
            .ok_or_else(|| CliError::Config(format!("axis {s:?} must be t or x1..x{d}")))?;
        Ok(Self::Space(k - 1))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Time => "t".into(),
            Self::Space(k) => format!("x{}", k + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionGrid {
    pub x_axis: Axis,
    pub y_axis: Axis,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[j][i]` at `(xs[i], ys[j])`.
    pub values: Vec<Vec<f64>>,
    /// `|u_θ − u|` when an exact solution exists.
    pub error: Option<Vec<Vec<f64>>>,
    /// Time of the slice when time is not plotted.
    pub time: f64,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn axis_range(axis: Axis, domain: &DomainSpec) -> (f64, f64) {
    match axis {
        Axis::Time => (0.0, domain.horizon),
        Axis::Space(k) => match domain.omega_max() {
            xwan_core::domain::OmegaMax::Box { lo, hi } => (lo[k], hi[k]),
            xwan_core::domain::OmegaMax::Ball { center, radius } => (center[k] - radius, center[k] + radius),
        },
    }
}

impl SolutionGrid {
    /// Evaluate `value(t, x)` on an `n × n` grid over the two axes; spatial
    /// coordinates not plotted are fixed at 0.
    pub fn sample(
        x_axis: Axis,
        y_axis: Axis,
        n: usize,
        time: f64,
        domain: &DomainSpec,
        value: &dyn Fn(f64, &[f64]) -> Result<f64, CliError>,
        exact: Option<&dyn Fn(f64, &[f64]) -> f64>,
    ) -> Result<Self, CliError> {
        if x_axis == y_axis || n == 0 {
            return Err(CliError::Config("heatmap needs two distinct axes and at least one cell".into()));
        }
        let (x0, x1) = axis_range(x_axis, domain);
        let (y0, y1) = axis_range(y_axis, domain);
        let xs = linspace(x0, x1, n);
        let ys = linspace(y0, y1, n);
        let d = domain.dim();
        let mut values = vec![vec![0.0; n]; n];
        let mut error = exact.map(|_| vec![vec![0.0; n]; n]);
        for (j, &yv) in ys.iter().enumerate() {
            for (i, &xv) in xs.iter().enumerate() {
                let mut t = time;
                let mut x = vec![0.0; d];
                for (axis, v) in [(x_axis, xv), (y_axis, yv)] {
                    match axis {
                        Axis::Time => t = v,
                        Axis::Space(k) => x[k] = v,
                    }
                }
                let u = value(t, &x)?;
                if !u.is_finite() {
                    return Err(CliError::Config(format!("non-finite prediction at t = {t}, x = {x:?}")));
                }
                values[j][i] = u;
                if let (Some(err), Some(f)) = (error.as_mut(), exact) {
                    err[j][i] = (u - f(t, &x)).abs();
                }
            }
        }
        Ok(Self {
            x_axis,
            y_axis,
            xs,
            ys,
            values,
            error,
            time,
        })
    }

    /// Grid of model predictions (or of the exact solution when `primal` is
    /// `None`).
    pub fn of_model(
        primal: Option<&dyn Primal>,
        problem: &PdeProblem,
        domain: &DomainSpec,
        n_t: usize,
        axes: (Axis, Axis),
        n: usize,
        time: f64,
    ) -> Result<Self, CliError> {
        let exact = problem.exact.clone();
        let exact_fn = exact.as_ref().map(|u| move |t: f64, x: &[f64]| u.value(t, x));
        let value = |t: f64, x: &[f64]| -> Result<f64, CliError> {
            match (primal, exact.as_ref()) {
                (Some(p), _) => Ok(predict_at(p, problem, domain, n_t, t, x)?),
                (None, Some(u)) => Ok(u.value(t, x)),
                (None, None) => Err(CliError::Config("no model parameters and no exact solution to plot".into())),
            }
        };
        let exact_ref = exact_fn.as_ref().map(|f| f as &dyn Fn(f64, &[f64]) -> f64);
        Self::sample(axes.0, axes.1, n, time, domain, &value, if primal.is_some() { exact_ref } else { None })
    }
}

pub fn color(level: u8) -> [u8; 3] {
    let s = level as f64 / 255.0;
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (LOW[k] + s * (HIGH[k] - LOW[k])).round() as u8;
    }
    c
}

pub fn level(v: f64, min: f64, max: f64) -> u8 {
    if max <= min {
        return 0;
    }
    ((v - min) / (max - min) * 255.0).round().clamp(0.0, 255.0) as u8
}

fn bounds(values: &[Vec<f64>]) -> (f64, f64) {
    values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Self-contained SVG with one rect per cell, a colour bar and the min/max.
pub fn render_svg(xs: &[f64], ys: &[f64], values: &[Vec<f64>], x_label: &str, y_label: &str, title: &str) -> String {
    let (nx, ny) = (xs.len(), ys.len());
    let cell = (400.0 / nx.max(ny) as f64).max(4.0);
    let (left, top) = (50.0, 40.0);
    let width = left + cell * nx as f64 + 130.0;
    let height = top + cell * ny as f64 + 50.0;
    let (min, max) = bounds(values);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for (j, row) in values.iter().enumerate() {
        // first row at the bottom
        let y = top + cell * (ny - 1 - j) as f64;
        for (i, &v) in row.iter().enumerate() {
            let [r, g, b] = color(level(v, min, max));
            let x = left + cell * i as f64;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{r:02x}{g:02x}{b:02x}"/>"##
            );
        }
    }
    let bottom = top + cell * ny as f64;
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{} ∈ [{}, {}]</text>"#,
        left + cell * nx as f64 / 2.0,
        bottom + 20.0,
        escape(x_label),
        fmt_num(xs.first().copied()),
        fmt_num(xs.last().copied())
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{} ∈ [{}, {}]</text>"#,
        top + cell * ny as f64 / 2.0,
        top + cell * ny as f64 / 2.0,
        escape(y_label),
        fmt_num(ys.first().copied()),
        fmt_num(ys.last().copied())
    );
    let bar_x = left + cell * nx as f64 + 20.0;
    let bar_h = cell * ny as f64;
    let step = bar_h / 256.0;
    for k in 0..=255u8 {
        let [r, g, b] = color(k);
        let y = top + bar_h - step * (k as f64 + 1.0);
        let _ = writeln!(
            s,
            r##"<rect x="{bar_x}" y="{y}" width="16" height="{step}" fill="#{r:02x}{g:02x}{b:02x}"/>"##
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">max {}</text>"#,
        bar_x + 22.0,
        top + 10.0,
        fmt_num(Some(max))
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">min {}</text>"#,
        bar_x + 22.0,
        top + bar_h,
        fmt_num(Some(min))
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Matrix CSV: header row of x values, then one row per y value.
pub fn write_grid_csv(path: &Path, xs: &[f64], ys: &[f64], values: &[Vec<f64>], corner: &str) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![corner.to_string()];
    header.extend(xs.iter().map(|&x| fmt_num(Some(x))));
    w.write_record(&header)?;
    for (y, row) in ys.iter().zip(values) {
        let mut rec = vec![fmt_num(Some(*y))];
        rec.extend(row.iter().map(|&v| fmt_num(Some(v))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `<stem>.svg` and `<stem>.csv` into `dir`.
pub fn emit_heatmap(dir: &Path, stem: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], labels: (&str, &str), title: &str) -> Result<(), CliError> {
    if values.len() != ys.len() || values.iter().any(|r| r.len() != xs.len()) {
        return Err(CliError::Config(format!("{stem}: grid shape does not match its axes")));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{stem}: grid has non-finite entries")));
    }
    std::fs::write(dir.join(format!("{stem}.svg")), render_svg(xs, ys, values, labels.0, labels.1, title))?;
    write_grid_csv(&dir.join(format!("{stem}.csv")), xs, ys, values, &format!("{}\\{}", labels.1, labels.0))
}

impl SolutionGrid {
    pub fn emit(&self, dir: &Path, title: &str) -> Result<(), CliError> {
        let (xl, yl) = (self.x_axis.label(), self.y_axis.label());
        emit_heatmap(dir, "solution", &self.xs, &self.ys, &self.values, (&xl, &yl), title)?;
        if let Some(err) = &self.error {
            emit_heatmap(dir, "abs_error", &self.xs, &self.ys, err, (&xl, &yl), &format!("|error| {title}"))?;
        }
        Ok(())
    }

    pub fn max_cell(&self) -> (f64, f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for (j, row) in self.values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if v > best.0 {
                    best = (v, self.xs[i], self.ys[j]);
                }
            }
        }
        best
    }
}

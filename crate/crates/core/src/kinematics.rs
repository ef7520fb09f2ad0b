//! The kinematic half of a structured representation.
//!
//! A [`Kinematics`] value is `(shape, trail, duration)`. The shape is one
//! of three axisymmetric emitter primitives, and the trail is `N` per-step
//! changes `(dr, dtheta, dphi)` in the spherical coordinates of the shape's
//! outer boundary, one step per `1/N` of a particle's lifetime. Applying
//! the steps one after another to the boundary point set yields the shape
//! at each time step, which is what the distance metric compares.
//!
//! Kinematics come from three places: extraction from simulated particle
//! trajectories, direct graphical input (shape control, trail strokes,
//! duration slider), and extrapolation between two existing effects (see
//! [`crate::search::extrapolate`]).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effect::EmissionKind;
use crate::geometry::{to_spherical, wrap_angle, wrap_delta, SphericalPoint, Vec3};
use crate::simulator::TrajectorySample;

/// Default number of trail steps per particle lifetime.
pub const DEFAULT_TRAIL_STEPS: usize = 8;

/// Slider range for graphical duration input, seconds.
pub const DURATION_SLIDER_RANGE: (f64, f64) = (0.1, 10.0);

/// Largest radius/height accepted from graphical input, meters.
pub const MAX_GRAPHICAL_EXTENT: f64 = 20.0;

/// Particles closer than this to the axis contribute no azimuth change.
const POLE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("boundary needs at least 4 points, got {0}")]
    TooFewBoundaryPoints(usize),
    #[error("no trajectory samples")]
    EmptySamples,
    #[error("trail needs at least one step")]
    NoSteps,
    #[error("particle {0} has fewer than two samples")]
    TooFewSamples(u32),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{field}: {message}")]
    Input { field: String, message: String },
}

fn input_err(field: impl Into<String>, message: impl Into<String>) -> KinematicsError {
    KinematicsError::Input {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionShape {
    pub kind: EmissionKind,
    /// Outer radius, meters.
    pub r: f64,
    /// Height, meters; zero unless the kind is cylinder.
    #[serde(default)]
    pub h: f64,
}

impl EmissionShape {
    pub fn new(kind: EmissionKind, r: f64, h: f64) -> Self {
        let h = if kind == EmissionKind::Cylinder { h } else { 0.0 };
        Self { kind, r, h }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self {
            kind: self.kind,
            r: self.r * s,
            h: self.h * s,
        }
    }
}

/// One trail step: spherical-coordinate deltas of the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct TrailStep {
    pub delta_r: f64,
    pub delta_theta: f64,
    pub delta_phi: f64,
}

impl TrailStep {
    pub const ZERO: TrailStep = TrailStep {
        delta_r: 0.0,
        delta_theta: 0.0,
        delta_phi: 0.0,
    };

    pub fn new(delta_r: f64, delta_theta: f64, delta_phi: f64) -> Self {
        Self {
            delta_r,
            delta_theta,
            delta_phi,
        }
    }

    fn as_array(self) -> [f64; 3] {
        [self.delta_r, self.delta_theta, self.delta_phi]
    }
}

impl From<[f64; 3]> for TrailStep {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<TrailStep> for [f64; 3] {
    fn from(s: TrailStep) -> Self {
        s.as_array()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trail {
    pub steps: Vec<TrailStep>,
}

impl Trail {
    pub fn zero(n: usize) -> Self {
        Self {
            steps: vec![TrailStep::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Running azimuth advance after each step.
    pub fn cumulative_phi(&self) -> Vec<f64> {
        self.steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.delta_phi;
                Some(*acc)
            })
            .collect()
    }

    /// Re-divides the trail into `n` steps, treating the cumulative change
    /// as piecewise linear in lifetime fraction.
    pub fn resample(&self, n: usize) -> Trail {
        let m = self.steps.len();
        if n == m || m == 0 {
            return if m == 0 { Trail::zero(n) } else { self.clone() };
        }
        let mut cumulative = vec![[0.0; 3]; m + 1];
        for (i, s) in self.steps.iter().enumerate() {
            let a = s.as_array();
            for c in 0..3 {
                cumulative[i + 1][c] = cumulative[i][c] + a[c];
            }
        }
        let at = |f: f64| -> [f64; 3] {
            let x = f * m as f64;
            let i = (x.floor() as usize).min(m - 1);
            let w = x - i as f64;
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = cumulative[i][c] + w * (cumulative[i + 1][c] - cumulative[i][c]);
            }
            out
        };
        let mut prev = [0.0; 3];
        let steps = (1..=n)
            .map(|j| {
                let cur = if j == n { cumulative[m] } else { at(j as f64 / n as f64) };
                let step = [cur[0] - prev[0], cur[1] - prev[1], cur[2] - prev[2]];
                prev = cur;
                TrailStep::from(step)
            })
            .collect();
        Trail { steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kinematics {
    pub shape: EmissionShape,
    pub trail: Trail,
    /// First birth to last death, seconds.
    pub duration: f64,
}

impl Kinematics {
    pub fn check(&self) -> Result<(), KinematicsError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(input_err("duration", "must be > 0"));
        }
        if !(self.shape.r.is_finite() && self.shape.r >= 0.0) {
            return Err(input_err("shape.r", "must be >= 0"));
        }
        if !(self.shape.h.is_finite() && self.shape.h >= 0.0) {
            return Err(input_err("shape.h", "must be >= 0"));
        }
        if self.shape.kind != EmissionKind::Cylinder && self.shape.h != 0.0 {
            return Err(input_err("shape.h", "must be 0 unless the shape is a cylinder"));
        }
        if self.trail.is_empty() {
            return Err(KinematicsError::NoSteps);
        }
        if self
            .trail
            .steps
            .iter()
            .any(|s| s.as_array().iter().any(|v| !v.is_finite()))
        {
            return Err(KinematicsError::NonFinite("trail"));
        }
        Ok(())
    }

    /// Shape states after each trail step, `m` boundary points each.
    pub fn evolve(&self, m: usize) -> Result<Vec<ShapeState>, KinematicsError> {
        let mut state = boundary_points(&self.shape, m)?;
        Ok(self
            .trail
            .steps
            .iter()
            .map(|step| {
                state = apply_trail_step(&state, step);
                state.clone()
            })
            .collect())
    }
}

/// The outer-boundary point set of a shape at one trail step.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeState {
    pub boundary: Vec<SphericalPoint>,
}

impl ShapeState {
    pub fn to_cartesian(&self) -> Vec<Vec3> {
        self.boundary.iter().map(|p| p.to_cartesian()).collect()
    }

    /// Largest distance of any boundary point from the polar axis.
    pub fn equatorial_radius(&self) -> f64 {
        self.boundary
            .iter()
            .map(|p| p.equatorial())
            .fold(0.0, f64::max)
    }
}

/// Splits `total` items over rings in proportion to `weights` (largest
/// remainder, at least one per ring).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let rings = weights.len();
    let spare = total - rings;
    let sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| w / sum * spare as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..rings).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

fn ring(out: &mut Vec<SphericalPoint>, rho: f64, z: f64, count: usize) {
    for k in 0..count {
        let phi = TAU * k as f64 / count as f64;
        let p = [rho * phi.cos(), rho * phi.sin(), z];
        // inputs are finite by construction
        out.push(to_spherical(p).unwrap_or(SphericalPoint::new(0.0, 0.0, 0.0)));
    }
}

/// Samples `m` points on the outer boundary of `shape`: the rim of a circle,
/// latitude rings on a sphere, or evenly spaced rings (rims included) on a
/// cylinder's lateral surface, centered on the origin.
pub fn boundary_points(shape: &EmissionShape, m: usize) -> Result<ShapeState, KinematicsError> {
    if m < 4 {
        return Err(KinematicsError::TooFewBoundaryPoints(m));
    }
    let r = shape.r;
    let mut boundary = Vec::with_capacity(m);
    match shape.kind {
        EmissionKind::Circle => {
            for k in 0..m {
                boundary.push(SphericalPoint::new(r, FRAC_PI_2, TAU * k as f64 / m as f64));
            }
        }
        EmissionKind::Sphere => {
            let rings = ((PI * m as f64 / 4.0).sqrt().round() as usize).clamp(1, m / 2);
            let thetas: Vec<f64> = (0..rings)
                .map(|l| PI * (l as f64 + 0.5) / rings as f64)
                .collect();
            let weights: Vec<f64> = thetas.iter().map(|t| t.sin()).collect();
            for (theta, count) in thetas.iter().zip(apportion(m, &weights)) {
                for k in 0..count {
                    boundary.push(SphericalPoint::new(r, *theta, TAU * k as f64 / count as f64));
                }
            }
        }
        EmissionKind::Cylinder => {
            let h = shape.h;
            let rings = if r > 0.0 && h > 0.0 {
                let x = 4.0 * m as f64 * h / (TAU * r);
                ((1.0 + (1.0 + x).sqrt()) / 2.0).round() as usize
            } else if h > 0.0 {
                m / 2
            } else {
                2
            };
            let rings = rings.clamp(2, m / 2);
            let counts = apportion(m, &vec![1.0; rings]);
            for (l, count) in counts.into_iter().enumerate() {
                let z = if l + 1 == rings {
                    h / 2.0
                } else {
                    -h / 2.0 + h * l as f64 / (rings - 1) as f64
                };
                ring(&mut boundary, r, z, count);
            }
        }
    }
    Ok(ShapeState { boundary })
}

/// Adds one step's deltas to every boundary point, clamping `r` at zero and
/// `theta` into `[0, pi]` and wrapping `phi`.
pub fn apply_trail_step(state: &ShapeState, step: &TrailStep) -> ShapeState {
    ShapeState {
        boundary: state
            .boundary
            .iter()
            .map(|p| {
                SphericalPoint::new(
                    p.r + step.delta_r,
                    p.theta + step.delta_theta,
                    wrap_angle(p.phi + step.delta_phi),
                )
            })
            .collect(),
    }
}

fn lerp3(a: &Vec3, b: &Vec3, w: f64) -> Vec3 {
    [
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ]
}

/// Position of one particle at age `t`, linearly interpolated between
/// samples (which are sorted by age).
fn position_at_age(samples: &[&TrajectorySample], t: f64) -> Vec3 {
    let idx = samples.partition_point(|s| s.t <= t);
    if idx == 0 {
        return samples[0].position;
    }
    if idx == samples.len() {
        return samples[idx - 1].position;
    }
    let (a, b) = (samples[idx - 1], samples[idx]);
    let span = b.t - a.t;
    if span <= 0.0 {
        return a.position;
    }
    lerp3(&a.position, &b.position, (t - a.t) / span)
}

fn fit_shape(births: &[Vec3], mean_size: f64) -> EmissionShape {
    let n = births.len() as f64;
    let mut rho_sum = 0.0;
    let mut rho_max: f64 = 0.0;
    let mut norm_sum = 0.0;
    let mut norm_min = f64::INFINITY;
    let mut norm_max: f64 = 0.0;
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    for p in births {
        let rho = p[0].hypot(p[1]);
        let norm = rho.hypot(p[2]);
        rho_sum += rho;
        rho_max = rho_max.max(rho);
        norm_sum += norm;
        norm_min = norm_min.min(norm);
        norm_max = norm_max.max(norm);
        z_min = z_min.min(p[2]);
        z_max = z_max.max(p[2]);
    }
    let height = z_max - z_min;
    let degenerate = rho_max == 0.0 && height == 0.0;
    let isotropic = !degenerate
        && (height / 2.0 - rho_max).abs() <= 0.2 * rho_max
        && norm_max - norm_min <= 0.2 * norm_max;
    if isotropic {
        EmissionShape::new(EmissionKind::Sphere, norm_sum / n + mean_size, 0.0)
    } else if height > 0.2 * rho_max {
        EmissionShape::new(EmissionKind::Cylinder, rho_sum / n + mean_size, height)
    } else {
        EmissionShape::new(EmissionKind::Circle, rho_sum / n + mean_size, 0.0)
    }
}

/// Derives kinematics from simulated trajectories.
///
/// Each particle is resampled at lifetime fractions `i / n_steps`; trail
/// step `i` is the mean change of the particles' spherical coordinates over
/// the `i`-th window. Particles on the axis at either end of a window
/// count as zero azimuth change, and axis crossings are unfolded. The shape is fitted from birth positions and padded
/// by the mean particle size, and the duration is the latest birth plus the
/// longest observed age.
pub fn extract_kinematics(
    samples: &[TrajectorySample],
    n_steps: usize,
) -> Result<Kinematics, KinematicsError> {
    if samples.is_empty() {
        return Err(KinematicsError::EmptySamples);
    }
    if n_steps == 0 {
        return Err(KinematicsError::NoSteps);
    }
    if samples
        .iter()
        .any(|s| !s.t.is_finite() || !s.birth_time.is_finite() || s.position.iter().any(|c| !c.is_finite()))
    {
        return Err(KinematicsError::NonFinite("samples"));
    }

    let mut ordered: Vec<&TrajectorySample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.particle_id.cmp(&b.particle_id).then(a.t.total_cmp(&b.t)));

    let mut sums = vec![[0.0f64; 3]; n_steps];
    let mut births = Vec::new();
    let mut size_sum = 0.0;
    let mut max_birth: f64 = 0.0;
    let mut max_age: f64 = 0.0;

    for particle in ordered.chunk_by(|a, b| a.particle_id == b.particle_id) {
        if particle.len() < 2 {
            return Err(KinematicsError::TooFewSamples(particle[0].particle_id));
        }
        let first = particle[0];
        let lifetime = particle[particle.len() - 1].t;
        births.push(position_at_age(particle, 0.0));
        size_sum += first.size;
        max_birth = max_birth.max(first.birth_time);
        max_age = max_age.max(lifetime);

        let mut prev = to_spherical(position_at_age(particle, 0.0))
            .map_err(|_| KinematicsError::NonFinite("samples"))?;
        for (i, sum) in sums.iter_mut().enumerate() {
            let t = lifetime * (i + 1) as f64 / n_steps as f64;
            let cur = to_spherical(position_at_age(particle, t))
                .map_err(|_| KinematicsError::NonFinite("samples"))?;
            sum[0] += cur.r - prev.r;
            sum[1] += cur.theta - prev.theta;
            if prev.equatorial() >= POLE_EPS && cur.equatorial() >= POLE_EPS {
                let mut d = wrap_delta(cur.phi - prev.phi);
                if d.abs() > FRAC_PI_2 {
                    // passing through the axis flips the azimuth by pi
                    d = wrap_delta(d - PI);
                }
                sum[2] += d;
            }
            prev = cur;
        }
    }

    let count = births.len() as f64;
    let trail = Trail {
        steps: sums
            .iter()
            .map(|s| TrailStep::new(s[0] / count, s[1] / count, s[2] / count))
            .collect(),
    };
    let duration = max_birth + max_age;
    if !(duration > 0.0) {
        return Err(input_err("samples", "observed duration must be > 0"));
    }
    Ok(Kinematics {
        shape: fit_shape(&births, size_sum / count),
        trail,
        duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapePlacement {
    #[serde(default)]
    pub translation: Vec3,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for ShapePlacement {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeControl {
    pub kind: EmissionKind,
    pub radius: f64,
    #[serde(default)]
    pub height: f64,
    #[serde(default)]
    pub placement: ShapePlacement,
}

/// A mouse-drawn trail segment in shape-local coordinates. Only the part of
/// the displacement lying in the plane spanned by the symmetry axis and the
/// start point's outward direction is kept; spin comes from `spiral_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stroke {
    pub start: Vec3,
    pub end: Vec3,
    /// Radians per second about the symmetry axis.
    #[serde(default)]
    pub spiral_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphicalIntent {
    pub shape: ShapeControl,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
    /// Seconds.
    pub duration: f64,
}

/// Projects a stroke's displacement onto its start point's meridian plane,
/// returning `(radial, axial)` components.
fn project_stroke(stroke: &Stroke) -> (f64, f64) {
    let d = [
        stroke.end[0] - stroke.start[0],
        stroke.end[1] - stroke.start[1],
        stroke.end[2] - stroke.start[2],
    ];
    let rho = stroke.start[0].hypot(stroke.start[1]);
    let radial = if rho > 0.0 {
        (d[0] * stroke.start[0] + d[1] * stroke.start[1]) / rho
    } else {
        // on the axis the plane is the one containing the stroke itself
        d[0].hypot(d[1])
    };
    (radial, d[2])
}

/// Converts graphical input into kinematics with `n_steps` trail steps.
///
/// Strokes are chained head to tail into one path in the meridian plane,
/// starting at the first stroke's start point. The path is cut into
/// `n_steps` pieces of equal arc length, and each piece becomes one
/// `(dr, dtheta)` step. A piece's `dphi` is the spiral rate of the stroke
/// its midpoint falls on, times `duration / n_steps`.
pub fn kinematics_from_graphical_input(
    intent: &GraphicalIntent,
    n_steps: usize,
) -> Result<Kinematics, KinematicsError> {
    if n_steps == 0 {
        return Err(KinematicsError::NoSteps);
    }
    let (lo, hi) = DURATION_SLIDER_RANGE;
    if !(intent.duration.is_finite() && (lo..=hi).contains(&intent.duration)) {
        return Err(input_err(
            "duration",
            format!("must lie in [{lo}, {hi}] s, got {}", intent.duration),
        ));
    }
    let control = &intent.shape;
    let scale = control.placement.scale;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(input_err("shape.placement.scale", "must be > 0"));
    }
    for (field, v) in [("shape.radius", control.radius), ("shape.height", control.height)] {
        if !(v.is_finite() && (0.0..=MAX_GRAPHICAL_EXTENT).contains(&(v * scale))) {
            return Err(input_err(
                field,
                format!("scaled value must lie in [0, {MAX_GRAPHICAL_EXTENT}] m"),
            ));
        }
    }
    if control.placement.translation.iter().any(|v| !v.is_finite()) {
        return Err(input_err("shape.placement.translation", "must be finite"));
    }
    let shape = EmissionShape::new(control.kind, control.radius * scale, control.height * scale);

    if intent.strokes.is_empty() {
        return Ok(Kinematics {
            shape,
            trail: Trail::zero(n_steps),
            duration: intent.duration,
        });
    }

    // path vertices in (radial, axial) coordinates
    let first = intent.strokes[0].start;
    let mut vertices = vec![(first[0].hypot(first[1]), first[2])];
    let mut lengths = Vec::with_capacity(intent.strokes.len());
    for (i, stroke) in intent.strokes.iter().enumerate() {
        if stroke
            .start
            .iter()
            .chain(&stroke.end)
            .chain(std::iter::once(&stroke.spiral_rate))
            .any(|v| !v.is_finite())
        {
            return Err(input_err(format!("strokes[{i}]"), "must be finite"));
        }
        let (dr, dz) = project_stroke(stroke);
        let len = dr.hypot(dz);
        if len == 0.0 && stroke.spiral_rate == 0.0 {
            return Err(input_err(
                format!("strokes[{i}]"),
                "stroke has no length and no spiral",
            ));
        }
        let (r0, z0) = vertices[vertices.len() - 1];
        vertices.push((r0 + dr, z0 + dz));
        lengths.push(len);
    }
    let total: f64 = lengths.iter().sum();
    let mut ends = Vec::with_capacity(lengths.len());
    let mut acc = 0.0;
    for l in &lengths {
        acc += l;
        ends.push(acc);
    }

    let point_at = |s: f64| -> (f64, f64) {
        let k = ends.partition_point(|&e| e < s).min(lengths.len() - 1);
        let start = if k == 0 { 0.0 } else { ends[k - 1] };
        let w = if lengths[k] > 0.0 { (s - start) / lengths[k] } else { 0.0 };
        let (a, b) = (vertices[k], vertices[k + 1]);
        (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1))
    };
    let rate_at = |s: f64| -> f64 {
        if total == 0.0 {
            let rates = intent.strokes.iter().map(|s| s.spiral_rate);
            return rates.sum::<f64>() / intent.strokes.len() as f64;
        }
        let k = ends.partition_point(|&e| e < s).min(lengths.len() - 1);
        intent.strokes[k].spiral_rate
    };
    let polar = |(rho, z): (f64, f64)| (rho.hypot(z), rho.abs().atan2(z));

    let dt = intent.duration / n_steps as f64;
    let mut prev = polar(vertices[0]);
    let steps = (1..=n_steps)
        .map(|i| {
            let s = total * i as f64 / n_steps as f64;
            let here = if i == n_steps {
                vertices[vertices.len() - 1]
            } else {
                point_at(s)
            };
            let cur = polar(here);
            let mid = total * (i as f64 - 0.5) / n_steps as f64;
            let step = TrailStep::new(cur.0 - prev.0, cur.1 - prev.1, rate_at(mid) * dt);
            prev = cur;
            step
        })
        .collect();
    Ok(Kinematics {
        shape,
        trail: Trail { steps },
        duration: intent.duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effect::{DirectionMode, EffectDefinition, EmitterSpec, TrajectoryKind};
    use crate::simulator::simulate;
    use std::f64::consts::FRAC_PI_4;

    fn effect(kind: EmissionKind, radius: f64) -> EffectDefinition {
        EffectDefinition {
            id: "k".into(),
            description: "k".into(),
            theme: "k".into(),
            emitter: EmitterSpec {
                emission_kind: kind,
                emission_radius: radius,
                emission_height: (kind == EmissionKind::Cylinder).then_some(1.0),
                direction_mode: DirectionMode::Spherical,
                cone_axis_angle: None,
                speed: 0.0,
                trajectory: TrajectoryKind::Linear,
                curvature: None,
                spiral_rate: 0.0,
                particle_lifetime: 1.0,
                emission_window: 0.0,
                particle_size: 0.0,
                emission_rate: 10.0,
            },
            seed: 3,
        }
    }

    #[test]
    fn circle_rim_layout() {
        let s = boundary_points(&EmissionShape::new(EmissionKind::Circle, 1.0, 0.0), 4).unwrap();
        let phis: Vec<f64> = s.boundary.iter().map(|p| p.phi).collect();
        for (p, want) in phis.iter().zip([0.0, FRAC_PI_2, PI, 1.5 * PI]) {
            assert!((p - want).abs() < 1e-15);
        }
        assert!(s.boundary.iter().all(|p| p.r == 1.0 && p.theta == FRAC_PI_2));
    }

    #[test]
    fn sphere_surface_radius() {
        let s = boundary_points(&EmissionShape::new(EmissionKind::Sphere, 2.0, 0.0), 64).unwrap();
        assert_eq!(s.boundary.len(), 64);
        assert!(s.boundary.iter().all(|p| (p.r - 2.0).abs() < 1e-15));
    }

    #[test]
    fn cylinder_is_height_centered() {
        let s = boundary_points(&EmissionShape::new(EmissionKind::Cylinder, 1.0, 2.0), 64).unwrap();
        let pts = s.to_cartesian();
        assert_eq!(pts.len(), 64);
        let zmin = pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        let zmax = pts.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
        assert!((zmin + 1.0).abs() < 1e-12 && (zmax - 1.0).abs() < 1e-12);
        assert!(pts.iter().all(|p| (p[0].hypot(p[1]) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn boundary_needs_four_points() {
        let shape = EmissionShape::new(EmissionKind::Circle, 1.0, 0.0);
        assert_eq!(
            boundary_points(&shape, 3),
            Err(KinematicsError::TooFewBoundaryPoints(3))
        );
        for kind in [EmissionKind::Circle, EmissionKind::Cylinder, EmissionKind::Sphere] {
            for m in [4, 5, 17, 64, 129] {
                let s = boundary_points(&EmissionShape::new(kind, 0.7, 0.4), m).unwrap();
                assert_eq!(s.boundary.len(), m, "{kind:?} {m}");
            }
        }
    }

    #[test]
    fn trail_step_rules() {
        let rim = boundary_points(&EmissionShape::new(EmissionKind::Circle, 1.0, 0.0), 16).unwrap();
        assert_eq!(apply_trail_step(&rim, &TrailStep::ZERO), rim);

        let turned = apply_trail_step(&rim, &TrailStep::new(0.0, 0.0, FRAC_PI_2));
        for (a, b) in rim.boundary.iter().zip(&turned.boundary) {
            assert_eq!(a.r, b.r);
            assert!((wrap_delta(b.phi - a.phi) - FRAC_PI_2).abs() < 1e-12);
        }

        let pole = ShapeState {
            boundary: vec![SphericalPoint::new(1.0, 0.0, 0.0)],
        };
        let grown = apply_trail_step(&pole, &TrailStep::new(0.5, 0.0, 0.0));
        assert_eq!(grown.boundary[0], SphericalPoint::new(1.5, 0.0, 0.0));

        let clamped = apply_trail_step(&pole, &TrailStep::new(-3.0, -1.0, 7.0));
        assert_eq!(clamped.boundary[0].r, 0.0);
        assert_eq!(clamped.boundary[0].theta, 0.0);
    }

    #[test]
    fn expanding_ring_extraction() {
        let mut d = effect(EmissionKind::Circle, 0.5);
        d.emitter.speed = 1.0;
        let k = extract_kinematics(&simulate(&d, 1024, 16).unwrap(), 8).unwrap();
        assert_eq!(k.shape.kind, EmissionKind::Circle);
        assert!((k.shape.r - 0.5).abs() < 1e-12);
        for s in &k.trail.steps {
            assert!((s.delta_r - 0.125).abs() < 0.05 * 0.125);
            assert!(s.delta_theta.abs() < 1e-9);
            assert!(s.delta_phi.abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_sphere_extraction() {
        let d = effect(EmissionKind::Sphere, 1.0);
        let k = extract_kinematics(&simulate(&d, 1024, 16).unwrap(), 8).unwrap();
        assert_eq!(k.shape.kind, EmissionKind::Sphere);
        assert!(k.trail.steps.iter().all(|s| s.as_array().iter().all(|v| v.abs() < 1e-6)));
        assert!((k.duration - 1.0).abs() < 1e-12);

        // composing the whole trail leaves the boundary in place
        let start = boundary_points(&k.shape, 64).unwrap();
        let end = k.evolve(64).unwrap().pop().unwrap();
        for (a, b) in start.to_cartesian().iter().zip(end.to_cartesian()) {
            assert!(crate::geometry::dist_sq(a, &b).sqrt() < 1e-6);
        }
    }

    #[test]
    fn spiral_column_extraction() {
        let mut d = effect(EmissionKind::Circle, 0.05);
        d.emitter.direction_mode = DirectionMode::Conical;
        d.emitter.cone_axis_angle = Some(0.0);
        d.emitter.speed = 1.0;
        d.emitter.spiral_rate = TAU;
        let k = extract_kinematics(&simulate(&d, 1024, 16).unwrap(), 8).unwrap();
        for s in &k.trail.steps {
            assert!((s.delta_phi - FRAC_PI_4).abs() < 0.05 * FRAC_PI_4, "{s:?}");
        }
    }

    #[test]
    fn fits_cylinder_and_pads_size() {
        let mut d = effect(EmissionKind::Cylinder, 0.5);
        d.emitter.emission_height = Some(2.0);
        d.emitter.particle_size = 0.1;
        let k = extract_kinematics(&simulate(&d, 512, 4).unwrap(), 8).unwrap();
        assert_eq!(k.shape.kind, EmissionKind::Cylinder);
        assert!((k.shape.r - 0.6).abs() < 1e-12);
        assert!((k.shape.h - 2.0).abs() < 0.01);
    }

    #[test]
    fn extraction_errors_and_resampling() {
        assert_eq!(extract_kinematics(&[], 8), Err(KinematicsError::EmptySamples));
        let mut d = effect(EmissionKind::Circle, 0.5);
        d.emitter.speed = 1.0;
        // two samples per particle, eight steps: interpolation, no error
        let k = extract_kinematics(&simulate(&d, 64, 2).unwrap(), 8).unwrap();
        assert!(k.trail.steps.iter().all(|s| (s.delta_r - 0.125).abs() < 1e-12));
        let one = simulate(&d, 4, 2).unwrap();
        assert_eq!(
            extract_kinematics(&one[..1], 8),
            Err(KinematicsError::TooFewSamples(0))
        );
    }

    #[test]
    fn particle_count_stability() {
        let mut d = effect(EmissionKind::Sphere, 0.4);
        d.emitter.speed = 1.5;
        d.emitter.trajectory = TrajectoryKind::Curved;
        d.emitter.curvature = Some(0.7);
        d.emitter.spiral_rate = 1.0;
        d.emitter.emission_window = 0.5;
        let a = extract_kinematics(&simulate(&d, 1024, 16).unwrap(), 8).unwrap();
        let b = extract_kinematics(&simulate(&d, 4096, 16).unwrap(), 8).unwrap();
        for (x, y) in a.trail.steps.iter().zip(&b.trail.steps) {
            for (u, v) in x.as_array().iter().zip(y.as_array()) {
                assert!((u - v).abs() <= 0.02 * v.abs().max(1e-2), "{u} vs {v}");
            }
        }
    }

    fn vertical_stroke() -> GraphicalIntent {
        GraphicalIntent {
            shape: ShapeControl {
                kind: EmissionKind::Circle,
                radius: 1.0,
                height: 0.0,
                placement: ShapePlacement::default(),
            },
            strokes: vec![Stroke {
                start: [1.0, 0.0, 0.0],
                end: [1.0, 0.0, 2.0],
                spiral_rate: 0.0,
            }],
            duration: 1.0,
        }
    }

    #[test]
    fn vertical_stroke_moves_boundary_up() {
        let k = kinematics_from_graphical_input(&vertical_stroke(), 8).unwrap();
        let mut p = ShapeState {
            boundary: vec![SphericalPoint::new(1.0, FRAC_PI_2, 0.0)],
        };
        for (i, step) in k.trail.steps.iter().enumerate() {
            p = apply_trail_step(&p, step);
            let q = p.boundary[0];
            // oracle: segment from (1, 0) to (1, 2) split into 8 equal parts
            assert!((q.axial() - 0.25 * (i + 1) as f64).abs() < 1e-12);
            assert!((q.equatorial() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graphical_spiral_and_static() {
        let mut intent = vertical_stroke();
        intent.strokes[0].spiral_rate = TAU;
        let k = kinematics_from_graphical_input(&intent, 8).unwrap();
        assert!(k.trail.steps.iter().all(|s| (s.delta_phi - FRAC_PI_4).abs() < 1e-15));

        intent.strokes.clear();
        let k = kinematics_from_graphical_input(&intent, 8).unwrap();
        assert_eq!(k.trail, Trail::zero(8));
        assert_eq!(k.shape, EmissionShape::new(EmissionKind::Circle, 1.0, 0.0));
    }

    #[test]
    fn graphical_input_errors() {
        let mut intent = vertical_stroke();
        intent.duration = 20.0;
        assert!(matches!(
            kinematics_from_graphical_input(&intent, 8),
            Err(KinematicsError::Input { field, .. }) if field == "duration"
        ));
        let mut intent = vertical_stroke();
        intent.strokes[0].end = intent.strokes[0].start;
        assert!(matches!(
            kinematics_from_graphical_input(&intent, 8),
            Err(KinematicsError::Input { field, .. }) if field == "strokes[0]"
        ));
    }

    #[test]
    fn stroke_projection_drops_tangential_part() {
        let mut intent = vertical_stroke();
        intent.strokes[0].end = [1.5, 0.8, 0.0];
        let k = kinematics_from_graphical_input(&intent, 4).unwrap();
        let total: f64 = k.trail.steps.iter().map(|s| s.delta_r).sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn resample_preserves_total_change() {
        let k = kinematics_from_graphical_input(&vertical_stroke(), 8).unwrap();
        let r = k.trail.resample(5);
        assert_eq!(r.len(), 5);
        for c in 0..3 {
            let a: f64 = k.trail.steps.iter().map(|s| s.as_array()[c]).sum();
            let b: f64 = r.steps.iter().map(|s| s.as_array()[c]).sum();
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(k.trail.resample(8), k.trail);
    }

    #[test]
    fn serializes_as_plain_arrays() {
        let k = kinematics_from_graphical_input(&vertical_stroke(), 2).unwrap();
        let v = serde_json::to_value(&k).unwrap();
        assert!(v["trail"][0].is_array());
        assert_eq!(v["shape"]["kind"], "circle");
        let back: Kinematics = serde_json::from_value(v).unwrap();
        assert_eq!(back, k);
    }
}

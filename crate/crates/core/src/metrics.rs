//! Distances between kinematic representations and the combined similarity.
//!
//! Two kinematics are compared by evolving each shape's boundary point set
//! along its trail and summing, per step, the Hausdorff distance of the two
//! point sets plus a rotation penalty for the difference in accumulated
//! azimuth. The sum is then multiplied by a duration factor that grows with
//! the square of the duration mismatch. The result is a semi-metric:
//! non-negative and symmetric, with no triangle inequality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effect::{DirectionMode, ShapeClass, TrajectoryKind};
use crate::geometry::Vec3;
use crate::kinematics::{Kinematics, KinematicsError, ShapeState};
use crate::search::SearchConstraint;
use crate::semantics::{cosine_clamped, SemanticDescriptor, SemanticsError};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptySet,
    #[error("duration must be > 0, got {0}")]
    BadDuration(f64),
    #[error("{0}")]
    BadParameter(String),
    #[error("fewer than two effects to compare")]
    TooFew,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// How the rotation-penalty weight is chosen at each trail step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Half the mean of the two evolved shapes' equatorial radii, so the
    /// penalty is a length comparable to the arc a boundary point sweeps.
    HalfEquatorialRadius,
    Fixed(f64),
}

impl LambdaMode {
    fn weight(self, eq_c: f64, eq_i: f64) -> f64 {
        match self {
            LambdaMode::HalfEquatorialRadius => 0.25 * (eq_c + eq_i),
            LambdaMode::Fixed(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub lambda_mode: LambdaMode,
    pub alpha: f64,
    pub m_boundary: usize,
    /// Distance scale used to turn a kinematic distance into a similarity.
    pub sigma: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            lambda_mode: LambdaMode::HalfEquatorialRadius,
            alpha: DEFAULT_ALPHA,
            m_boundary: DEFAULT_BOUNDARY_SAMPLES,
            sigma: 1.0,
        }
    }
}

impl MetricParams {
    pub fn check(&self) -> Result<(), MetricError> {
        let bad = |m: &str| Err(MetricError::BadParameter(m.to_string()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if self.m_boundary < 4 {
            return bad("m_boundary must be >= 4");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l.is_finite() && l >= 0.0) {
                return bad("lambda must be >= 0");
            }
        }
        Ok(())
    }
}

/// A corpus effect's representation: semantic descriptor and kinematics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredRepresentation {
    pub semantic: SemanticDescriptor,
    pub kinematics: Kinematics,
}

/// Largest squared distance from a point of `from_scale * from` to its
/// nearest point of `to_scale * to`, or `floor_sq` if that is larger.
/// Returns early with a value above `cutoff_sq` once the result is known to
/// exceed it.
///
/// Points whose nearest neighbor is already no farther than the running
/// maximum cannot change the result, so their scan stops there. The scan
/// for each point starts at the previous point's nearest neighbor, which is
/// usually close because boundary sets are generated ring by ring.
pub(crate) fn directed_sq(
    from: &[Vec3],
    from_scale: f64,
    to: &[Vec3],
    to_scale: f64,
    floor_sq: f64,
    cutoff_sq: f64,
) -> f64 {
    let n = to.len();
    let mut cmax = floor_sq;
    let mut hint = 0;
    for a in from {
        let p = [from_scale * a[0], from_scale * a[1], from_scale * a[2]];
        let mut best = f64::INFINITY;
        let mut best_idx = hint;
        for k in 0..n {
            let idx = if hint + k < n { hint + k } else { hint + k - n };
            let b = &to[idx];
            let dx = p[0] - to_scale * b[0];
            let dy = p[1] - to_scale * b[1];
            let dz = p[2] - to_scale * b[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best {
                best = d;
                best_idx = idx;
                if best <= cmax {
                    break;
                }
            }
        }
        hint = best_idx;
        if best > cmax {
            cmax = best;
            if cmax > cutoff_sq {
                return cmax;
            }
        }
    }
    cmax
}

/// Squared Hausdorff distance between `a` and `scale * b`, or some value
/// above `cutoff_sq` when it exceeds that.
pub(crate) fn hausdorff_sq_scaled(a: &[Vec3], b: &[Vec3], scale: f64, cutoff_sq: f64) -> f64 {
    let ab = directed_sq(a, 1.0, b, scale, 0.0, cutoff_sq);
    if ab > cutoff_sq {
        return ab;
    }
    directed_sq(b, scale, a, 1.0, ab, cutoff_sq)
}

/// Hausdorff distance in Euclidean 3-space.
pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(hausdorff_sq_scaled(a, b, 1.0, f64::INFINITY).sqrt())
}

/// Per-step shape distance: Hausdorff distance of the two boundary sets
/// plus `lambda * (1 - cos(delta_phi))`.
pub fn shape_step_distance(
    sc: &ShapeState,
    si: &ShapeState,
    delta_phi: f64,
    params: &MetricParams,
) -> Result<f64, MetricError> {
    let h = hausdorff(&sc.to_cartesian(), &si.to_cartesian())?;
    let lambda = params
        .lambda_mode
        .weight(sc.equatorial_radius(), si.equatorial_radius());
    Ok(h + rotation_penalty(lambda, delta_phi))
}

pub(crate) fn rotation_penalty(lambda: f64, delta_phi: f64) -> f64 {
    lambda * (1.0 - delta_phi.cos())
}

/// Precomputed evolution of one kinematics: boundary point sets after each
/// trail step plus the per-step quantities the metric needs.
#[derive(Debug, Clone)]
pub struct Evolution {
    /// Cartesian boundary points after each step.
    pub states: Vec<Vec<Vec3>>,
    /// Accumulated azimuth advance after each step.
    pub cum_phi: Vec<f64>,
    /// Equatorial radius after each step.
    pub eq_radius: Vec<f64>,
    pub duration: f64,
    /// Distinct `(distance from axis, axial coordinate)` pairs per step.
    pub(crate) rings: Vec<Vec<[f64; 2]>>,
    /// Distinct point norms per step, ascending.
    pub(crate) norms: Vec<Vec<f64>>,
}

impl Evolution {
    pub fn new(k: &Kinematics, m: usize) -> Result<Self, MetricError> {
        k.check()?;
        let states = k.evolve(m)?;
        let mut rings = Vec::with_capacity(states.len());
        let mut norms = Vec::with_capacity(states.len());
        for s in &states {
            let mut rz: Vec<[f64; 2]> = s.boundary.iter().map(|p| [p.equatorial(), p.axial()]).collect();
            rz.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
            rz.dedup();
            let mut rs: Vec<f64> = s.boundary.iter().map(|p| p.r).collect();
            rs.sort_by(f64::total_cmp);
            rs.dedup();
            rings.push(rz);
            norms.push(rs);
        }
        Ok(Self {
            eq_radius: states.iter().map(ShapeState::equatorial_radius).collect(),
            states: states.iter().map(ShapeState::to_cartesian).collect(),
            cum_phi: k.trail.cumulative_phi(),
            duration: k.duration,
            rings,
            norms,
        })
    }

    pub fn steps(&self) -> usize {
        self.states.len()
    }
}

fn aligned_trails(kc: &Kinematics, ki: &Kinematics) -> (Kinematics, Kinematics) {
    let n = kc.trail.len().max(ki.trail.len());
    let fit = |k: &Kinematics| Kinematics {
        trail: k.trail.resample(n),
        ..k.clone()
    };
    (fit(kc), fit(ki))
}

/// Sum over trail steps of the shape distance between the two evolved
/// shapes. Trails of different lengths are resampled to the longer one.
pub fn trail_distance(kc: &Kinematics, ki: &Kinematics, params: &MetricParams) -> Result<f64, MetricError> {
    params.check()?;
    let (kc, ki) = aligned_trails(kc, ki);
    let ec = Evolution::new(&kc, params.m_boundary)?;
    let ei = Evolution::new(&ki, params.m_boundary)?;
    Ok(evolution_trail_distance(&ec, &ei, params))
}

pub(crate) fn evolution_trail_distance(ec: &Evolution, ei: &Evolution, params: &MetricParams) -> f64 {
    let mut total = 0.0;
    for j in 0..ec.steps() {
        let h = hausdorff_sq_scaled(&ec.states[j], &ei.states[j], 1.0, f64::INFINITY).sqrt();
        let lambda = params.lambda_mode.weight(ec.eq_radius[j], ei.eq_radius[j]);
        total += h + rotation_penalty(lambda, ec.cum_phi[j] - ei.cum_phi[j]);
    }
    total
}

/// `1 + alpha * (max(dc/di, di/dc) - 1)^2`.
pub fn duration_factor(dc: f64, di: f64, alpha: f64) -> Result<f64, MetricError> {
    for d in [dc, di] {
        if !(d.is_finite() && d > 0.0) {
            return Err(MetricError::BadDuration(d));
        }
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(MetricError::BadParameter("alpha must be >= 0".into()));
    }
    Ok(raw_duration_factor(dc, di, alpha))
}

pub(crate) fn raw_duration_factor(dc: f64, di: f64, alpha: f64) -> f64 {
    let ratio = (dc / di).max(di / dc);
    1.0 + alpha * (ratio - 1.0) * (ratio - 1.0)
}

/// Trail distance times the duration factor.
pub fn kinematic_distance(kc: &Kinematics, ki: &Kinematics, params: &MetricParams) -> Result<f64, MetricError> {
    let trail = trail_distance(kc, ki, params)?;
    Ok(trail * duration_factor(kc.duration, ki.duration, params.alpha)?)
}

/// Kinematic distance between two precomputed evolutions of equal length.
pub fn evolution_distance(ec: &Evolution, ei: &Evolution, params: &MetricParams) -> f64 {
    evolution_trail_distance(ec, ei, params) * raw_duration_factor(ec.duration, ei.duration, params.alpha)
}

/// `w * semantic + (1 - w) * exp(-distance / sigma)`, clamped to `[0, 1]`.
pub fn similarity_from_parts(semantic: f64, kinematic_distance: f64, w: f64, sigma: f64) -> f64 {
    let kin = if w < 1.0 {
        (-kinematic_distance / sigma).exp()
    } else {
        0.0
    };
    let sem = if w > 0.0 { semantic } else { 0.0 };
    (w * sem + (1.0 - w) * kin).clamp(0.0, 1.0)
}

/// Weighted similarity between a constraint and a corpus representation,
/// without alignment. A constraint lacking a component carries a weight
/// that already puts everything on the other one.
pub fn combined_similarity(
    rc: &SearchConstraint,
    ri: &StructuredRepresentation,
    params: &MetricParams,
) -> Result<f64, MetricError> {
    params.check()?;
    let w = rc.weight;
    if !(0.0..=1.0).contains(&w) {
        return Err(MetricError::BadParameter(format!("weight must lie in [0, 1], got {w}")));
    }
    let sem = match &rc.semantic {
        Some(s) if w > 0.0 => cosine_clamped(&s.embedding, &ri.semantic.embedding)?,
        _ => 0.0,
    };
    let dk = match &rc.kinematics {
        Some(k) if w < 1.0 => kinematic_distance(k, &ri.kinematics, params)?,
        _ => 0.0,
    };
    Ok(similarity_from_parts(sem, dk, w, params.sigma))
}

/// The categorical and scalar attributes compared by the consistency audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyItem {
    pub duration: f64,
    pub shape: ShapeClass,
    pub direction: DirectionMode,
    pub trajectory: TrajectoryKind,
}

/// Mean pairwise distances of a group of effects, per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyDistances {
    /// Mean absolute duration difference, seconds.
    pub duration: f64,
    /// Fraction of pairs with different shape classes.
    pub shape: f64,
    /// Mean trail score: 0 if direction mode and trajectory both match,
    /// 0.5 if one matches, 1 if neither.
    pub trail: f64,
}

pub fn pair_consistency(a: &ConsistencyItem, b: &ConsistencyItem) -> ConsistencyDistances {
    let mismatches =
        u8::from(a.direction != b.direction) + u8::from(a.trajectory != b.trajectory);
    ConsistencyDistances {
        duration: (a.duration - b.duration).abs(),
        shape: if a.shape == b.shape { 0.0 } else { 1.0 },
        trail: f64::from(mismatches) / 2.0,
    }
}

/// Mean pairwise consistency distances over all pairs of `items`.
pub fn composition_consistency(items: &[ConsistencyItem]) -> Result<ConsistencyDistances, MetricError> {
    if items.len() < 2 {
        return Err(MetricError::TooFew);
    }
    let mut sum = [0.0; 3];
    let mut pairs = 0usize;
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            let d = pair_consistency(a, b);
            sum[0] += d.duration;
            sum[1] += d.shape;
            sum[2] += d.trail;
            pairs += 1;
        }
    }
    let n = pairs as f64;
    Ok(ConsistencyDistances {
        duration: sum[0] / n,
        shape: sum[1] / n,
        trail: sum[2] / n,
    })
}

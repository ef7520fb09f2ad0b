//! Alignment-based retrieval and the two exploration modes.
//!
//! A candidate is compared with a query after choosing the transformation
//! (axis reorientation, uniform scale, duration scale) that minimizes
//!
//! ```text
//! J(T) = D_trail(q, T(c)) * f(d_q, d_T(c)) + rho * (|ln scale| + |ln duration_scale|)
//! ```
//!
//! over a fixed grid, where `f` is the duration factor. The regularizer
//! keeps the free duration scale from cancelling the duration factor. The
//! grid is searched exhaustively in effect, but cheap lower bounds on the
//! Hausdorff terms (norms and meridian-plane ring positions are invariant
//! or nearly so under the grid's rotations) let most grid points and most
//! candidates be discarded without computing a single 3-D Hausdorff
//! distance.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::effect::EmissionKind;
use crate::geometry::{norm, Vec3};
use crate::kinematics::{EmissionShape, Kinematics, Trail, TrailStep};
use crate::metrics::{
    hausdorff_sq_scaled, raw_duration_factor, rotation_penalty, similarity_from_parts, Evolution,
    LambdaMode, MetricError, MetricParams, StructuredRepresentation,
};
use crate::semantics::{
    cosine_clamped, expand_directionally, EmbeddingProvider, LlmProvider, SemanticDescriptor,
};

/// Default number of results per search.
pub const DEFAULT_TOP_K: usize = 4;

/// Scale constant of the signed-log transform used by extrapolation.
pub const SLOG_EPS: f64 = 0.01;

/// Smallest duration extrapolation may produce, seconds.
pub const MIN_EXTRAPOLATED_DURATION: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("corpus index is empty")]
    EmptyCorpus,
    #[error("constraint needs a semantic or a kinematic component")]
    EmptyConstraint,
    #[error("weight: {0}")]
    BadWeight(String),
    #[error("k must be >= 1")]
    BadK,
    #[error("unknown effect {0:?}")]
    NotFound(String),
    #[error("extrapolation produced a non-finite {0}")]
    Extrapolation(&'static str),
    #[error("{0}")]
    BadConfig(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A signed axis permutation applied about the origin. Each non-identity
/// option is a half-turn, so it is its own inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisReorientation {
    #[default]
    Identity,
    /// Symmetry axis laid along `+x`.
    TiltX90,
    /// Symmetry axis laid along `+y`.
    TiltY90,
    /// Symmetry axis reversed.
    Flip,
}

impl AxisReorientation {
    pub const ALL: [AxisReorientation; 4] = [
        AxisReorientation::Identity,
        AxisReorientation::TiltX90,
        AxisReorientation::TiltY90,
        AxisReorientation::Flip,
    ];

    pub fn apply(self, [x, y, z]: Vec3) -> Vec3 {
        match self {
            AxisReorientation::Identity => [x, y, z],
            AxisReorientation::TiltX90 => [z, -y, x],
            AxisReorientation::TiltY90 => [-x, z, y],
            AxisReorientation::Flip => [x, -y, -z],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transformation {
    pub axis_reorientation: AxisReorientation,
    pub scale: f64,
    pub duration_scale: f64,
}

impl Default for Transformation {
    fn default() -> Self {
        Self {
            axis_reorientation: AxisReorientation::Identity,
            scale: 1.0,
            duration_scale: 1.0,
        }
    }
}

impl Transformation {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(format!("scale must be > 0, got {}", self.scale));
        }
        if !(self.duration_scale.is_finite() && self.duration_scale > 0.0) {
            return Err(format!("duration_scale must be > 0, got {}", self.duration_scale));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        Self {
            axis_reorientation: self.axis_reorientation,
            scale: 1.0 / self.scale,
            duration_scale: 1.0 / self.duration_scale,
        }
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        let [x, y, z] = self.axis_reorientation.apply(p);
        [self.scale * x, self.scale * y, self.scale * z]
    }
}

impl std::fmt::Display for Transformation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let axis = match self.axis_reorientation {
            AxisReorientation::Identity => "identity",
            AxisReorientation::TiltX90 => "tilt_x_90",
            AxisReorientation::TiltY90 => "tilt_y_90",
            AxisReorientation::Flip => "flip",
        };
        write!(f, "{axis},scale={:.6},duration_scale={:.6}", self.scale, self.duration_scale)
    }
}

impl Evolution {
    /// The evolution with every boundary point moved by `t` and the
    /// duration multiplied by `t.duration_scale`. Equatorial radii are
    /// scaled but, like azimuth advances, measured before reorientation.
    pub fn transformed(&self, t: &Transformation) -> Evolution {
        let states: Vec<Vec<Vec3>> = self
            .states
            .iter()
            .map(|s| s.iter().map(|p| t.apply_point(*p)).collect())
            .collect();
        let mut rings = Vec::with_capacity(states.len());
        let mut norms = Vec::with_capacity(states.len());
        for s in &states {
            let mut rz: Vec<[f64; 2]> = s.iter().map(|p| [p[0].hypot(p[1]), p[2]]).collect();
            rz.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
            rz.dedup();
            let mut ns: Vec<f64> = s.iter().map(norm).collect();
            ns.sort_by(f64::total_cmp);
            ns.dedup();
            rings.push(rz);
            norms.push(ns);
        }
        Evolution {
            states,
            cum_phi: self.cum_phi.clone(),
            eq_radius: self.eq_radius.iter().map(|r| r * t.scale).collect(),
            duration: self.duration * t.duration_scale,
            rings,
            norms,
        }
    }
}

/// The discrete transformation family searched by alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformGrid {
    pub scales: Vec<f64>,
    pub duration_scales: Vec<f64>,
}

impl Default for TransformGrid {
    fn default() -> Self {
        Self {
            scales: log_grid(4.0, 6),
            duration_scales: log_grid(3.0, 4),
        }
    }
}

/// `base^(k/half)` for `k = -half..=half`: log-spaced over `[1/base, base]`
/// and symmetric about 1 in log space.
pub fn log_grid(base: f64, half: i32) -> Vec<f64> {
    (-half..=half)
        .map(|k| if k == 0 { 1.0 } else { base.powf(k as f64 / half as f64) })
        .collect()
}

impl TransformGrid {
    pub fn check(&self) -> Result<(), SearchError> {
        for (name, values) in [("scales", &self.scales), ("duration_scales", &self.duration_scales)] {
            if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(SearchError::BadConfig(format!("grid {name} must be nonempty and positive")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        AxisReorientation::ALL.len() * self.scales.len() * self.duration_scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in enumeration order: orientation, then scale, then
    /// duration scale.
    pub fn points(&self) -> Vec<Transformation> {
        let mut out = Vec::with_capacity(self.len());
        for o in AxisReorientation::ALL {
            for &scale in &self.scales {
                for &duration_scale in &self.duration_scales {
                    out.push(Transformation {
                        axis_reorientation: o,
                        scale,
                        duration_scale,
                    });
                }
            }
        }
        out
    }

    /// The grid point with the same orientation and the log-nearest scale
    /// and duration scale.
    pub fn nearest(&self, t: &Transformation) -> Transformation {
        let pick = |values: &[f64], x: f64| {
            values
                .iter()
                .copied()
                .min_by(|a, b| (a.ln() - x.ln()).abs().total_cmp(&(b.ln() - x.ln()).abs()))
                .unwrap_or(1.0)
        };
        Transformation {
            axis_reorientation: t.axis_reorientation,
            scale: pick(&self.scales, t.scale),
            duration_scale: pick(&self.duration_scales, t.duration_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub top_k: usize,
    pub extrapolation_coefficients: Vec<f64>,
    pub grid: TransformGrid,
    /// Regularizer weight per unit `|ln scale|`, as a multiple of sigma.
    pub regularizer_weight: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            extrapolation_coefficients: vec![1.5, 2.0, 3.0],
            grid: TransformGrid::default(),
            regularizer_weight: 0.05,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        if self.top_k == 0 {
            return Err(SearchError::BadK);
        }
        if self.extrapolation_coefficients.is_empty()
            || self.extrapolation_coefficients.iter().any(|c| !c.is_finite())
        {
            return Err(SearchError::BadConfig(
                "extrapolation_coefficients must be nonempty and finite".into(),
            ));
        }
        if !(self.regularizer_weight.is_finite() && self.regularizer_weight >= 0.0) {
            return Err(SearchError::BadConfig("regularizer_weight must be >= 0".into()));
        }
        self.grid.check()
    }
}

/// A query: optional semantic and kinematic parts and the weight `w` of
/// the semantic side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConstraint {
    pub semantic: Option<SemanticDescriptor>,
    pub kinematics: Option<Kinematics>,
    pub weight: f64,
}

/// Weight used when both components are present and none was given.
pub const DEFAULT_WEIGHT: f64 = 0.5;

impl SearchConstraint {
    /// Builds a constraint. A missing component forces the weight to the
    /// other side; an explicit weight that puts everything on the missing
    /// component is rejected.
    pub fn new(
        semantic: Option<SemanticDescriptor>,
        kinematics: Option<Kinematics>,
        weight: Option<f64>,
    ) -> Result<Self, SearchError> {
        if let Some(w) = weight {
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(SearchError::BadWeight(format!("must lie in [0, 1], got {w}")));
            }
        }
        let weight = match (&semantic, &kinematics, weight) {
            (None, None, _) => return Err(SearchError::EmptyConstraint),
            (Some(_), None, Some(w)) if w == 0.0 => {
                return Err(SearchError::BadWeight("0 needs a kinematic component".into()))
            }
            (None, Some(_), Some(w)) if w == 1.0 => {
                return Err(SearchError::BadWeight("1 needs a semantic component".into()))
            }
            (Some(_), None, _) => 1.0,
            (None, Some(_), _) => 0.0,
            (Some(_), Some(_), w) => w.unwrap_or(DEFAULT_WEIGHT),
        };
        if let Some(k) = &kinematics {
            k.check().map_err(MetricError::from)?;
        }
        Ok(Self {
            semantic,
            kinematics,
            weight,
        })
    }

    pub fn from_representation(rep: &StructuredRepresentation, weight: f64) -> Result<Self, SearchError> {
        Self::new(Some(rep.semantic.clone()), Some(rep.kinematics.clone()), Some(weight))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub effect_id: String,
    pub similarity: f64,
    pub best_transformation: Transformation,
    /// Aligned objective `J(T*)`; `None` for queries without kinematics.
    pub kinematic_distance: Option<f64>,
}

fn rank_order(a: &RankedResult, b: &RankedResult) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.effect_id.cmp(&b.effect_id))
}

/// A corpus index with every entry's evolution precomputed.
#[derive(Debug)]
pub struct SearchIndex {
    corpus: CorpusIndex,
    ids: Vec<String>,
    evolutions: Vec<Evolution>,
    positions: HashMap<String, usize>,
    params: MetricParams,
    config: SearchConfig,
    trail_steps: usize,
}

impl SearchIndex {
    pub fn new(corpus: CorpusIndex, config: SearchConfig) -> Result<Self, SearchError> {
        config.check()?;
        let mut params = corpus.params.metric;
        params.sigma = corpus.sigma;
        params.check()?;
        let ids: Vec<String> = corpus.entries.keys().cloned().collect();
        let evolutions = corpus
            .entries
            .values()
            .map(|e| Evolution::new(&e.representation.kinematics, params.m_boundary))
            .collect::<Result<Vec<_>, _>>()?;
        let positions = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let trail_steps = corpus.params.trail_steps;
        Ok(Self {
            corpus,
            ids,
            evolutions,
            positions,
            params,
            config,
            trail_steps,
        })
    }

    pub fn corpus(&self) -> &CorpusIndex {
        &self.corpus
    }

    pub fn params(&self) -> &MetricParams {
        &self.params
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn representation(&self, id: &str) -> Option<&StructuredRepresentation> {
        self.corpus.entries.get(id).map(|e| &e.representation)
    }

    fn regularizer(&self) -> f64 {
        self.config.regularizer_weight * self.params.sigma
    }
}

/// The constraint side of an alignment, with its boundary sets already
/// reoriented for every grid orientation (each orientation is its own
/// inverse, so `H(q, R(s c)) = H(R q, s c)`).
struct Query {
    evo: Evolution,
    rotated: Vec<Vec<Vec<Vec3>>>,
}

impl Query {
    fn new(evo: Evolution) -> Self {
        let rotated = AxisReorientation::ALL
            .iter()
            .map(|o| {
                evo.states
                    .iter()
                    .map(|s| s.iter().map(|p| o.apply(*p)).collect())
                    .collect()
            })
            .collect();
        Self { evo, rotated }
    }
}

#[derive(Debug, Clone, Copy)]
struct Alignment {
    index: usize,
    transformation: Transformation,
    objective: f64,
}

/// Shrinks a lower bound just enough to absorb rounding differences between
/// the bound's arithmetic and the exact evaluation.
fn safe(lb: f64) -> f64 {
    lb * (1.0 - 1e-9) - 1e-12
}

struct Aligner<'a> {
    query: &'a Query,
    params: &'a MetricParams,
    grid: &'a TransformGrid,
    rho: f64,
    abs_ln_s: Vec<f64>,
    abs_ln_ds: Vec<f64>,
}

impl<'a> Aligner<'a> {
    fn new(query: &'a Query, params: &'a MetricParams, grid: &'a TransformGrid, rho: f64) -> Self {
        Self {
            query,
            params,
            grid,
            rho,
            abs_ln_s: grid.scales.iter().map(|s| s.ln().abs()).collect(),
            abs_ln_ds: grid.duration_scales.iter().map(|s| s.ln().abs()).collect(),
        }
    }

    fn lambda(&self, j: usize, cand: &Evolution, s: f64) -> f64 {
        match self.params.lambda_mode {
            LambdaMode::HalfEquatorialRadius => 0.25 * (self.query.evo.eq_radius[j] + s * cand.eq_radius[j]),
            LambdaMode::Fixed(l) => l,
        }
    }

    fn penalties(&self, cand: &Evolution, s: f64) -> f64 {
        (0..self.query.evo.steps())
            .map(|j| {
                rotation_penalty(self.lambda(j, cand, s), self.query.evo.cum_phi[j] - cand.cum_phi[j])
            })
            .sum()
    }

    /// Best duration scale for a trail distance `d` at scale index `si`:
    /// returns (duration index, objective).
    fn best_duration(&self, d: f64, cand: &Evolution, si: usize) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (di, ds) in self.grid.duration_scales.iter().enumerate() {
            let f = raw_duration_factor(self.query.evo.duration, ds * cand.duration, self.params.alpha);
            let j = d * f + self.rho * (self.abs_ln_s[si] + self.abs_ln_ds[di]);
            if j < best.1 {
                best = (di, j);
            }
        }
        best
    }

    /// Orientation-free bound from the extreme norms of each step.
    fn coarse_bound(&self, cand: &Evolution, si: usize) -> f64 {
        let s = self.grid.scales[si];
        let q = &self.query.evo;
        let mut d = self.penalties(cand, s);
        for j in 0..q.steps() {
            let (qn, cn) = (&q.norms[j], &cand.norms[j]);
            let lo = (qn[0] - s * cn[0]).abs();
            let hi = (qn[qn.len() - 1] - s * cn[cn.len() - 1]).abs();
            d += lo.max(hi);
        }
        self.best_duration(safe(d).max(0.0), cand, si).1
    }

    /// Tighter bound for one orientation and scale: meridian-plane ring
    /// Hausdorff distance for orientations that keep the axis, norm
    /// Hausdorff distance otherwise.
    fn fine_bound(&self, cand: &Evolution, o: AxisReorientation, si: usize) -> f64 {
        let s = self.grid.scales[si];
        let q = &self.query.evo;
        let mut d = self.penalties(cand, s);
        for j in 0..q.steps() {
            d += match o {
                AxisReorientation::Identity => ring_hausdorff(&q.rings[j], &cand.rings[j], s, 1.0),
                AxisReorientation::Flip => ring_hausdorff(&q.rings[j], &cand.rings[j], s, -1.0),
                _ => norm_hausdorff(&q.norms[j], &cand.norms[j], s),
            };
        }
        self.best_duration(safe(d).max(0.0), cand, si).1
    }

    /// Exact trail distance at `(o, si)`, or `None` once it is known that
    /// the objective exceeds `cutoff`.
    fn trail_distance(&self, cand: &Evolution, o: AxisReorientation, si: usize, cutoff: f64) -> Option<f64> {
        let s = self.grid.scales[si];
        let budget = cutoff - self.rho * self.abs_ln_s[si];
        if budget < 0.0 {
            return None;
        }
        let rotated = &self.query.rotated[o.index()];
        let mut total = 0.0;
        for j in 0..self.query.evo.steps() {
            let rp = rotation_penalty(self.lambda(j, cand, s), self.query.evo.cum_phi[j] - cand.cum_phi[j]);
            let room = budget - total - rp;
            if room < 0.0 {
                return None;
            }
            let cutoff_sq = if budget.is_finite() {
                room * room * (1.0 + 1e-9) + 1e-300
            } else {
                f64::INFINITY
            };
            let h_sq = hausdorff_sq_scaled(&rotated[j], &cand.states[j], s, cutoff_sq);
            if h_sq > cutoff_sq {
                return None;
            }
            total += h_sq.sqrt() + rp;
        }
        if total > budget {
            return None;
        }
        Some(total)
    }

    /// Grid minimizer of the objective, or `None` if every grid point's
    /// objective exceeds `cutoff`. Ties go to the earliest grid point.
    fn align(&self, cand: &Evolution, cutoff: f64) -> Option<Alignment> {
        let ns = self.grid.scales.len();
        let nd = self.grid.duration_scales.len();
        let mut order: Vec<(f64, usize, AxisReorientation, usize)> = Vec::with_capacity(4 * ns);
        for si in 0..ns {
            if self.coarse_bound(cand, si) > cutoff {
                continue;
            }
            for o in AxisReorientation::ALL {
                let lb = self.fine_bound(cand, o, si);
                if lb <= cutoff {
                    order.push((lb, (o.index() * ns + si) * nd, o, si));
                }
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best: Option<Alignment> = None;
        for (lb, base, o, si) in order {
            let limit = best.map_or(cutoff, |b| b.objective.min(cutoff));
            if lb > limit {
                break;
            }
            let Some(d) = self.trail_distance(cand, o, si, limit) else {
                continue;
            };
            let (di, j) = self.best_duration(d, cand, si);
            if j > cutoff {
                continue;
            }
            let index = base + di;
            let better = match best {
                None => true,
                Some(b) => j < b.objective || (j == b.objective && index < b.index),
            };
            if better {
                best = Some(Alignment {
                    index,
                    transformation: Transformation {
                        axis_reorientation: o,
                        scale: self.grid.scales[si],
                        duration_scale: self.grid.duration_scales[di],
                    },
                    objective: j,
                });
            }
        }
        best
    }

    /// The objective at one transformation, evaluated in full.
    fn objective_at(&self, cand: &Evolution, t: &Transformation) -> f64 {
        let mut total = 0.0;
        let rotated = &self.query.rotated[t.axis_reorientation.index()];
        for j in 0..self.query.evo.steps() {
            let rp = rotation_penalty(self.lambda(j, cand, t.scale), self.query.evo.cum_phi[j] - cand.cum_phi[j]);
            total += hausdorff_sq_scaled(&rotated[j], &cand.states[j], t.scale, f64::INFINITY).sqrt() + rp;
        }
        let f = raw_duration_factor(self.query.evo.duration, t.duration_scale * cand.duration, self.params.alpha);
        total * f + self.rho * (t.scale.ln().abs() + t.duration_scale.ln().abs())
    }
}

fn ring_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]], s: f64, z_sign: f64) -> f64 {
    let directed = |x: &[[f64; 2]], xs: f64, xz: f64, y: &[[f64; 2]], ys: f64, yz: f64| {
        let mut cmax = 0.0f64;
        for p in x {
            let (pr, pz) = (xs * p[0], xz * xs * p[1]);
            let mut best = f64::INFINITY;
            for q in y {
                let dr = pr - ys * q[0];
                let dz = pz - yz * ys * q[1];
                best = best.min(dr * dr + dz * dz);
                if best <= cmax {
                    break;
                }
            }
            cmax = cmax.max(best);
        }
        cmax
    };
    directed(a, 1.0, 1.0, b, s, z_sign)
        .max(directed(b, s, z_sign, a, 1.0, 1.0))
        .sqrt()
}

fn norm_hausdorff(a: &[f64], b: &[f64], s: f64) -> f64 {
    let nearest = |sorted: &[f64], scale: f64, x: f64| {
        let i = sorted.partition_point(|v| scale * v < x);
        let mut best = f64::INFINITY;
        if i < sorted.len() {
            best = best.min((scale * sorted[i] - x).abs());
        }
        if i > 0 {
            best = best.min((x - scale * sorted[i - 1]).abs());
        }
        best
    };
    let ab = a.iter().map(|x| nearest(b, s, *x)).fold(0.0, f64::max);
    let ba = b.iter().map(|x| nearest(a, 1.0, s * x)).fold(0.0, f64::max);
    ab.max(ba)
}

/// Resamples a kinematics' trail to `n` steps.
fn with_steps(k: &Kinematics, n: usize) -> Kinematics {
    if k.trail.len() == n {
        return k.clone();
    }
    Kinematics {
        trail: k.trail.resample(n),
        ..k.clone()
    }
}

/// The grid transformation minimizing the alignment objective of `ki`
/// against `kc`, with its objective value.
pub fn align(
    kc: &Kinematics,
    ki: &Kinematics,
    params: &MetricParams,
    config: &SearchConfig,
) -> Result<(Transformation, f64), SearchError> {
    params.check()?;
    config.check()?;
    let n = kc.trail.len().max(ki.trail.len());
    let ec = Evolution::new(&with_steps(kc, n), params.m_boundary)?;
    let ei = Evolution::new(&with_steps(ki, n), params.m_boundary)?;
    Ok(align_evolutions(&ec, &ei, params, config))
}

/// [`align`] over precomputed evolutions with equal step counts.
pub fn align_evolutions(
    ec: &Evolution,
    ei: &Evolution,
    params: &MetricParams,
    config: &SearchConfig,
) -> (Transformation, f64) {
    let query = Query::new(ec.clone());
    let aligner = Aligner::new(&query, params, &config.grid, config.regularizer_weight * params.sigma);
    let a = aligner
        .align(ei, f64::INFINITY)
        .expect("an unbounded alignment always has a minimizer");
    (a.transformation, a.objective)
}

/// The alignment objective at a given transformation.
pub fn alignment_objective(
    ec: &Evolution,
    ei: &Evolution,
    t: &Transformation,
    params: &MetricParams,
    config: &SearchConfig,
) -> f64 {
    let query = Query::new(ec.clone());
    let aligner = Aligner::new(&query, params, &config.grid, config.regularizer_weight * params.sigma);
    aligner.objective_at(ei, t)
}

/// The `k` most similar corpus effects to `constraint`, skipping ids in
/// `exclude`. Sorted by similarity descending, then id ascending.
pub fn search_topk(
    constraint: &SearchConstraint,
    index: &SearchIndex,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<RankedResult>, SearchError> {
    if index.is_empty() {
        return Err(SearchError::EmptyCorpus);
    }
    if k == 0 {
        return Err(SearchError::BadK);
    }
    let w = constraint.weight;
    if !(0.0..=1.0).contains(&w) {
        return Err(SearchError::BadWeight(format!("must lie in [0, 1], got {w}")));
    }
    let params = index.params();
    let sigma = params.sigma;

    let sems: Vec<f64> = match &constraint.semantic {
        Some(s) if w > 0.0 => index
            .corpus
            .entries
            .values()
            .map(|e| cosine_clamped(&s.embedding, &e.representation.semantic.embedding))
            .collect::<Result<_, _>>()
            .map_err(MetricError::from)?,
        _ => vec![0.0; index.len()],
    };
    let live: Vec<usize> = (0..index.len())
        .filter(|&i| !exclude.contains(&index.ids[i]))
        .collect();

    let query = match &constraint.kinematics {
        Some(kin) => Some(Query::new(Evolution::new(
            &with_steps(kin, index.trail_steps),
            params.m_boundary,
        )?)),
        None => None,
    };
    let aligner = query
        .as_ref()
        .map(|q| Aligner::new(q, params, &index.config.grid, index.regularizer()));

    let result = |i: usize, sim: f64, al: Option<Alignment>| RankedResult {
        effect_id: index.ids[i].clone(),
        similarity: sim,
        best_transformation: al.map(|a| a.transformation).unwrap_or_default(),
        kinematic_distance: al.map(|a| a.objective),
    };

    let Some(aligner) = aligner.filter(|_| w < 1.0) else {
        // Pure semantic ranking; kinematics, if any, only annotate.
        let mut ranked: Vec<RankedResult> = live
            .iter()
            .map(|&i| result(i, similarity_from_parts(sems[i], 0.0, 1.0, sigma), None))
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        if let Some(q) = &query {
            let aligner = Aligner::new(q, params, &index.config.grid, index.regularizer());
            for r in &mut ranked {
                let i = index.positions[&r.effect_id];
                let al = aligner.align(&index.evolutions[i], f64::INFINITY);
                r.best_transformation = al.map(|a| a.transformation).unwrap_or_default();
                r.kinematic_distance = al.map(|a| a.objective);
            }
        }
        return Ok(ranked);
    };

    // Best-first over candidates by their similarity upper bound.
    let mut order: Vec<(f64, usize)> = live
        .iter()
        .map(|&i| {
            let cand = &index.evolutions[i];
            let lb = (0..index.config.grid.scales.len())
                .map(|si| aligner.coarse_bound(cand, si))
                .fold(f64::INFINITY, f64::min);
            (similarity_from_parts(sems[i], lb.max(0.0), w, sigma), i)
        })
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(index.ids[a.1].cmp(&index.ids[b.1])));

    let mut top: Vec<RankedResult> = Vec::with_capacity(k + 1);
    for (ub, i) in order {
        let cutoff = if top.len() == k {
            let kth = top[k - 1].similarity - 1e-12;
            if ub < kth {
                break;
            }
            let room = (kth - w * sems[i]) / (1.0 - w);
            if room > 0.0 {
                -sigma * room.ln() * (1.0 + 1e-9) + 1e-12
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        let Some(al) = aligner.align(&index.evolutions[i], cutoff) else {
            continue;
        };
        let sim = similarity_from_parts(sems[i], al.objective, w, sigma);
        let r = result(i, sim, Some(al));
        let pos = top.partition_point(|t| rank_order(t, &r) == Ordering::Less);
        top.insert(pos, r);
        top.truncate(k);
    }
    Ok(top)
}

/// `sign(x) * ln(1 + |x| / eps)`.
pub fn slog(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    x.signum() * (x.abs() / SLOG_EPS).ln_1p()
}

/// Inverse of [`slog`].
pub fn slog_inv(y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    y.signum() * SLOG_EPS * y.abs().exp_m1()
}

/// Per-step `(axial change, equatorial change, azimuth change)` of the
/// boundary point that starts on the shape's equator.
fn meridian_steps(k: &Kinematics) -> Vec<[f64; 3]> {
    let mut r = k.shape.r;
    let mut theta = FRAC_PI_2;
    let (mut z, mut rho) = (r * theta.cos(), r * theta.sin());
    k.trail
        .steps
        .iter()
        .map(|s| {
            r += s.delta_r;
            theta += s.delta_theta;
            let (nz, nrho) = (r * theta.cos(), r * theta.sin());
            let out = [nz - z, nrho - rho, s.delta_phi];
            z = nz;
            rho = nrho;
            out
        })
        .collect()
}

/// Extrapolates from `ka` towards and beyond `kb` in signed-log space.
///
/// Shape radius and height, duration, and each step's axial, equatorial and
/// azimuthal changes of the equator point are mapped through [`slog`],
/// combined as `a + c (b - a)`, and mapped back; the steps are then
/// re-encoded as spherical deltas. `c = 0` reproduces `ka` and `c = 1`
/// reproduces `kb`. The shape kind is taken from `ka` below `c = 0.5` and
/// from `kb` otherwise.
pub fn extrapolate(ka: &Kinematics, kb: &Kinematics, c: f64) -> Result<Kinematics, SearchError> {
    if !c.is_finite() {
        return Err(SearchError::Extrapolation("coefficient"));
    }
    let n = ka.trail.len().max(kb.trail.len());
    let (ka, kb) = (with_steps(ka, n), with_steps(kb, n));
    let mix = |a: f64, b: f64| {
        let (sa, sb) = (slog(a), slog(b));
        slog_inv(sa + c * (sb - sa))
    };
    let finite = |x: f64, what: &'static str| {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(SearchError::Extrapolation(what))
        }
    };

    let kind = if c < 0.5 { ka.shape.kind } else { kb.shape.kind };
    let r = finite(mix(ka.shape.r, kb.shape.r), "radius")?.max(0.0);
    let h = if kind == EmissionKind::Cylinder {
        finite(mix(ka.shape.h, kb.shape.h), "height")?.max(0.0)
    } else {
        0.0
    };
    let duration = finite(mix(ka.duration, kb.duration), "duration")?.max(MIN_EXTRAPOLATED_DURATION);

    let (ma, mb) = (meridian_steps(&ka), meridian_steps(&kb));
    let mut theta = FRAC_PI_2;
    let mut radius = r;
    let (mut z, mut rho) = (r * theta.cos(), r * theta.sin());
    let mut steps = Vec::with_capacity(n);
    for (a, b) in ma.iter().zip(&mb) {
        z += finite(mix(a[0], b[0]), "trail")?;
        rho += finite(mix(a[1], b[1]), "trail")?;
        let dphi = finite(mix(a[2], b[2]), "trail")?;
        let nr = rho.hypot(z);
        let nt = if nr > 1e-12 {
            let raw = rho.atan2(z);
            raw + TAU * ((theta - raw) / TAU).round()
        } else {
            theta
        };
        steps.push(TrailStep::new(nr - radius, nt - theta, dphi));
        radius = nr;
        theta = nt;
    }
    let out = Kinematics {
        shape: EmissionShape::new(kind, r, h),
        trail: Trail { steps },
        duration,
    };
    out.check().map_err(|_| SearchError::Extrapolation("kinematics"))?;
    Ok(out)
}

fn lookup<'a>(index: &'a SearchIndex, id: &str) -> Result<&'a StructuredRepresentation, SearchError> {
    index
        .representation(id)
        .ok_or_else(|| SearchError::NotFound(id.to_string()))
}

/// Top-k neighbors of a selected corpus effect.
pub fn local_explore(
    selected_id: &str,
    index: &SearchIndex,
    weight: f64,
    exclude: &HashSet<String>,
) -> Result<Vec<RankedResult>, SearchError> {
    let rep = lookup(index, selected_id)?;
    let constraint = SearchConstraint::from_representation(rep, weight)?;
    search_topk(&constraint, index, index.config.top_k, exclude)
}

/// Searches along the direction from `prev_id` to `curr_id`.
///
/// Semantic probes come from the language model's directional expansion
/// and kinematic probes from [`extrapolate`] at each configured coefficient;
/// the two lists are paired positionally, cycling the shorter one. Results
/// of all probes are merged keeping each effect's best similarity, with
/// both endpoints and `exclude` left out. Equal endpoints fall back to
/// [`local_explore`].
pub fn directional_explore(
    prev_id: &str,
    curr_id: &str,
    user_intent: &str,
    index: &SearchIndex,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
    weight: f64,
    exclude: &HashSet<String>,
) -> Result<Vec<RankedResult>, SearchError> {
    let prev = lookup(index, prev_id)?;
    let curr = lookup(index, curr_id)?;
    if prev_id == curr_id {
        return local_explore(curr_id, index, weight, exclude);
    }
    let coefficients = &index.config.extrapolation_coefficients;
    let texts = expand_directionally(&prev.semantic, &curr.semantic, user_intent, llm, coefficients.len());
    let semantics: Vec<SemanticDescriptor> = texts
        .iter()
        .map(|t| SemanticDescriptor::from_normalized(t, embedder).unwrap_or_else(|_| curr.semantic.clone()))
        .collect();
    let semantics = if semantics.is_empty() {
        vec![curr.semantic.clone()]
    } else {
        semantics
    };

    let mut skip = exclude.clone();
    skip.insert(prev_id.to_string());
    skip.insert(curr_id.to_string());

    let k = index.config.top_k;
    let mut merged: BTreeMap<String, RankedResult> = BTreeMap::new();
    for p in 0..semantics.len().max(coefficients.len()) {
        let semantic = semantics[p % semantics.len()].clone();
        let kinematics = extrapolate_shrinking(&prev.kinematics, &curr.kinematics, coefficients[p % coefficients.len()]);
        let probe = SearchConstraint::new(Some(semantic), Some(kinematics), Some(weight))?;
        for r in search_topk(&probe, index, k, &skip)? {
            match merged.get(&r.effect_id) {
                Some(old) if old.similarity >= r.similarity => {}
                _ => {
                    merged.insert(r.effect_id.clone(), r);
                }
            }
        }
    }
    let mut out: Vec<RankedResult> = merged.into_values().collect();
    out.sort_by(rank_order);
    out.truncate(k);
    Ok(out)
}

/// Extrapolates at `c`, halving the distance past `kb` until the result is
/// finite; falls back to `kb` itself.
fn extrapolate_shrinking(ka: &Kinematics, kb: &Kinematics, c: f64) -> Kinematics {
    let mut c = c;
    for _ in 0..8 {
        if let Ok(k) = extrapolate(ka, kb, c) {
            return k;
        }
        c = 1.0 + (c - 1.0) / 2.0;
    }
    kb.clone()
}

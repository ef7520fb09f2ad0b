//! Parametric particle-effect descriptions and the composed-artwork model.
//!
//! An [`EffectDefinition`] is the unit of a corpus: a free-text description
//! plus an [`EmitterSpec`] that is just rich enough to reproduce every
//! emission-shape / emission-trail combination the engine reasons about
//! (circle, cylinder and sphere emitters; conical or spherical emission;
//! straight or constant-curvature paths; an optional spin about the
//! symmetry axis). All quantities are SI: meters, seconds, radians.
//!
//! The symmetry axis of every effect is the local `+z` axis and the emitter
//! is centered on the origin.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::search::Transformation;

/// Emitters with a radius below this are classified as points.
pub const POINT_RADIUS_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Circle,
    Cylinder,
    Sphere,
}

impl fmt::Display for EmissionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmissionKind::Circle => "circle",
            EmissionKind::Cylinder => "cylinder",
            EmissionKind::Sphere => "sphere",
        })
    }
}

/// Initial velocity direction rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// Velocity tilted `cone_axis_angle` away from `+z`, towards the
    /// particle's own azimuth.
    Conical,
    /// Velocity points away from the emitter center.
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Linear,
    Curved,
}

/// Derived emission-shape class. `Point` is never stored: it is how small
/// emitters of any kind are classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Point,
    Circle,
    Cylinder,
    Sphere,
}

impl From<EmissionKind> for ShapeClass {
    fn from(kind: EmissionKind) -> Self {
        match kind {
            EmissionKind::Circle => ShapeClass::Circle,
            EmissionKind::Cylinder => ShapeClass::Cylinder,
            EmissionKind::Sphere => ShapeClass::Sphere,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub emission_kind: EmissionKind,
    /// Meters.
    pub emission_radius: f64,
    /// Meters; cylinders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_height: Option<f64>,
    pub direction_mode: DirectionMode,
    /// Radians from `+z`; conical emission only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone_axis_angle: Option<f64>,
    /// Meters per second.
    pub speed: f64,
    pub trajectory: TrajectoryKind,
    /// Inverse meters; curved trajectories only. Positive values bend the
    /// path away from `+z` (towards the particle's outward horizontal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    /// Radians per second about the symmetry axis.
    #[serde(default)]
    pub spiral_rate: f64,
    /// Seconds.
    pub particle_lifetime: f64,
    /// Seconds during which particles are born.
    pub emission_window: f64,
    /// Meters.
    pub particle_size: f64,
    /// Particles per second.
    pub emission_rate: f64,
}

impl EmitterSpec {
    /// First particle birth to last particle death.
    pub fn total_duration(&self) -> f64 {
        self.emission_window + self.particle_lifetime
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectDefinition {
    pub id: String,
    pub description: String,
    pub theme: String,
    pub emitter: EmitterSpec,
    pub seed: u64,
}

/// One failed invariant, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Returns every invariant violation of `def`; an empty list means valid.
pub fn validate_effect(def: &EffectDefinition) -> Vec<Violation> {
    let mut out = Vec::new();
    if def.id.trim().is_empty() {
        out.push(Violation::new("id", "must be nonempty"));
    }
    if def.description.trim().is_empty() {
        out.push(Violation::new("description", "must be nonempty"));
    }
    let e = &def.emitter;

    let mut non_negative = |field: &str, value: f64| {
        if !value.is_finite() {
            out.push(Violation::new(field, "must be finite"));
        } else if value < 0.0 {
            out.push(Violation::new(field, format!("must be >= 0, got {value}")));
        }
    };
    non_negative("emitter.emission_radius", e.emission_radius);
    non_negative("emitter.speed", e.speed);
    non_negative("emitter.emission_window", e.emission_window);
    non_negative("emitter.particle_size", e.particle_size);

    match (e.emission_kind, e.emission_height) {
        (EmissionKind::Cylinder, None) => out.push(Violation::new(
            "emitter.emission_height",
            "required for cylinder emitters",
        )),
        (EmissionKind::Cylinder, Some(h)) => non_negative("emitter.emission_height", h),
        (_, Some(_)) => out.push(Violation::new(
            "emitter.emission_height",
            "only allowed for cylinder emitters",
        )),
        (_, None) => {}
    }

    match (e.direction_mode, e.cone_axis_angle) {
        (DirectionMode::Conical, None) => out.push(Violation::new(
            "emitter.cone_axis_angle",
            "required for conical emission",
        )),
        (DirectionMode::Conical, Some(a)) => {
            if !a.is_finite() || !(0.0..=PI).contains(&a) {
                out.push(Violation::new(
                    "emitter.cone_axis_angle",
                    format!("must lie in [0, pi], got {a}"),
                ));
            }
        }
        (DirectionMode::Spherical, Some(_)) => out.push(Violation::new(
            "emitter.cone_axis_angle",
            "only allowed for conical emission",
        )),
        (DirectionMode::Spherical, None) => {}
    }

    match (e.trajectory, e.curvature) {
        (TrajectoryKind::Curved, None) => out.push(Violation::new(
            "emitter.curvature",
            "required for curved trajectories",
        )),
        (TrajectoryKind::Curved, Some(k)) if !k.is_finite() => {
            out.push(Violation::new("emitter.curvature", "must be finite"))
        }
        (TrajectoryKind::Linear, Some(_)) => out.push(Violation::new(
            "emitter.curvature",
            "only allowed for curved trajectories",
        )),
        _ => {}
    }

    if !e.spiral_rate.is_finite() {
        out.push(Violation::new("emitter.spiral_rate", "must be finite"));
    }
    if !(e.particle_lifetime.is_finite() && e.particle_lifetime > 0.0) {
        out.push(Violation::new("emitter.particle_lifetime", "must be > 0"));
    }
    if !(e.emission_rate.is_finite() && e.emission_rate > 0.0) {
        out.push(Violation::new("emitter.emission_rate", "must be > 0"));
    }
    out
}

/// Point when the emitter radius is under [`POINT_RADIUS_THRESHOLD`],
/// otherwise the stored emission kind.
pub fn classify_emission_shape(def: &EffectDefinition) -> ShapeClass {
    classify_radius(def.emitter.emission_kind, def.emitter.emission_radius)
}

pub(crate) fn classify_radius(kind: EmissionKind, radius: f64) -> ShapeClass {
    if radius < POINT_RADIUS_THRESHOLD {
        ShapeClass::Point
    } else {
        kind.into()
    }
}

/// Checks id uniqueness plus per-definition validity over a whole corpus.
pub fn validate_corpus(defs: &[EffectDefinition]) -> Vec<(usize, Violation)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, def) in defs.iter().enumerate() {
        if !seen.insert(def.id.as_str()) {
            out.push((i, Violation::new("id", format!("duplicate id {:?}", def.id))));
        }
        out.extend(validate_effect(def).into_iter().map(|v| (i, v)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkItem {
    pub effect_id: String,
    pub placement: Placement,
    #[serde(default)]
    pub start_delay: f64,
    #[serde(default = "one")]
    pub playback_speed: f64,
}

fn one() -> f64 {
    1.0
}

/// Where an effect sits in an artwork: an alignment transformation plus a
/// world-space offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub transformation: Transformation,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            transformation: Transformation::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkComposition {
    pub name: String,
    pub items: Vec<ArtworkItem>,
}

impl ArtworkComposition {
    /// Field-level checks plus referential integrity against `resolves`.
    pub fn validate(&self, resolves: impl Fn(&str) -> bool) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Violation::new("name", "must be nonempty"));
        }
        if self.items.is_empty() {
            out.push(Violation::new("items", "artwork needs at least one effect"));
        }
        for (i, item) in self.items.iter().enumerate() {
            if !resolves(&item.effect_id) {
                out.push(Violation::new(
                    &format!("items[{i}].effect_id"),
                    format!("unknown effect {:?}", item.effect_id),
                ));
            }
            if !(item.start_delay.is_finite() && item.start_delay >= 0.0) {
                out.push(Violation::new(
                    &format!("items[{i}].start_delay"),
                    "must be >= 0",
                ));
            }
            if !(item.playback_speed.is_finite() && item.playback_speed > 0.0) {
                out.push(Violation::new(
                    &format!("items[{i}].playback_speed"),
                    "must be > 0",
                ));
            }
            if item.translation_is_invalid() {
                out.push(Violation::new(
                    &format!("items[{i}].placement.translation"),
                    "must be finite",
                ));
            }
            if let Err(msg) = item.placement.transformation.check() {
                out.push(Violation::new(
                    &format!("items[{i}].placement.transformation"),
                    msg,
                ));
            }
        }
        out
    }
}

impl ArtworkItem {
    fn translation_is_invalid(&self) -> bool {
        self.placement.translation.iter().any(|v| !v.is_finite())
    }
}

/// The document written by artwork export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkExport {
    pub engine_version: String,
    #[serde(flatten)]
    pub artwork: ArtworkComposition,
}

impl ArtworkExport {
    pub fn new(artwork: ArtworkComposition) -> Self {
        Self {
            engine_version: crate::ENGINE_VERSION.to_string(),
            artwork,
        }
    }
}

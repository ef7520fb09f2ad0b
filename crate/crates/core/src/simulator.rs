//! Deterministic closed-form simulation of an [`EffectDefinition`].
//!
//! Every particle moves in its own meridian plane (the plane through the
//! symmetry axis and its birth azimuth) along a straight line or a
//! constant-curvature arc, while that plane spins about the axis at
//! `spiral_rate`. Positions are evaluated in closed form at each sample
//! time, so there is no integration error to speak of.
//!
//! Birth azimuths (and the second shape coordinate) come from a seeded
//! two-dimensional additive recurrence, which keeps the population
//! azimuthally balanced at any particle count; birth times come from a
//! per-particle ChaCha stream keyed by `(seed, particle_id)`. Adding
//! particles never changes the existing ones.

use std::f64::consts::TAU;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effect::{
    validate_effect, DirectionMode, EffectDefinition, EmissionKind, TrajectoryKind, Violation,
};
use crate::geometry::Vec3;

pub const DEFAULT_PARTICLE_COUNT: usize = 1024;
pub const DEFAULT_SAMPLES_PER_LIFETIME: usize = 16;

// R2 sequence constants (inverse powers of the plastic number).
const R2_A1: f64 = 0.754_877_666_246_692_7;
const R2_A2: f64 = 0.569_840_290_998_053_2;

// Below this |curvature * path length| the straight-line formula is used.
const CURVATURE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub particle_id: u32,
    /// Seconds since particle birth.
    pub t: f64,
    /// Seconds since effect start.
    pub birth_time: f64,
    pub position: Vec3,
    pub size: f64,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid effect definition: {}", join(.0))]
    InvalidDefinition(Vec<Violation>),
    #[error("{0}")]
    BadParameter(&'static str),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Birth state of one particle in its meridian frame.
#[derive(Debug, Clone, Copy)]
struct Birth {
    azimuth: f64,
    rho: f64,
    z: f64,
    /// Polar angle of the initial velocity, from `+z` towards outward.
    heading: f64,
    birth_time: f64,
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn sequence_offsets(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (rng.gen::<f64>(), rng.gen::<f64>())
}

fn birth(def: &EffectDefinition, id: u32, offsets: (f64, f64)) -> Birth {
    let e = &def.emitter;
    let q1 = frac(offsets.0 + f64::from(id) * R2_A1);
    let q2 = frac(offsets.1 + f64::from(id) * R2_A2);
    let mut rng = ChaCha8Rng::seed_from_u64(def.seed);
    rng.set_stream(u64::from(id));
    let birth_time = e.emission_window * rng.gen::<f64>();

    let radius = e.emission_radius;
    let (rho, z) = match e.emission_kind {
        EmissionKind::Circle => (radius, 0.0),
        EmissionKind::Cylinder => (radius, (q2 - 0.5) * e.emission_height.unwrap_or(0.0)),
        EmissionKind::Sphere => {
            let cos_t = 1.0 - 2.0 * q2;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            (radius * sin_t, radius * cos_t)
        }
    };
    let heading = match e.direction_mode {
        DirectionMode::Conical => e.cone_axis_angle.unwrap_or(0.0),
        DirectionMode::Spherical if rho == 0.0 && z == 0.0 => (1.0 - 2.0 * q2).clamp(-1.0, 1.0).acos(),
        DirectionMode::Spherical => rho.atan2(z),
    };
    Birth {
        azimuth: TAU * q1,
        rho,
        z,
        heading,
        birth_time,
    }
}

/// Position of a particle `age` seconds after its birth.
fn position_at(def: &EffectDefinition, b: &Birth, age: f64) -> Vec3 {
    let e = &def.emitter;
    let s = e.speed * age;
    let curvature = match e.trajectory {
        TrajectoryKind::Curved => e.curvature.unwrap_or(0.0),
        TrajectoryKind::Linear => 0.0,
    };
    let (rho, z) = if (curvature * s).abs() < CURVATURE_EPS {
        (b.rho + s * b.heading.sin(), b.z + s * b.heading.cos())
    } else {
        let end = b.heading + curvature * s;
        (
            b.rho + (b.heading.cos() - end.cos()) / curvature,
            b.z + (end.sin() - b.heading.sin()) / curvature,
        )
    };
    let azimuth = b.azimuth + e.spiral_rate * age;
    let (sa, ca) = azimuth.sin_cos();
    [rho * ca, rho * sa, z]
}

/// Simulates `particle_count` particles, each sampled `samples_per_lifetime`
/// times evenly over its lifetime (both ends included).
///
/// Output is ordered by particle id, then by age.
pub fn simulate(
    def: &EffectDefinition,
    particle_count: usize,
    samples_per_lifetime: usize,
) -> Result<Vec<TrajectorySample>, SimulationError> {
    let violations = validate_effect(def);
    if !violations.is_empty() {
        return Err(SimulationError::InvalidDefinition(violations));
    }
    if particle_count == 0 {
        return Err(SimulationError::BadParameter("particle_count must be >= 1"));
    }
    if samples_per_lifetime < 2 {
        return Err(SimulationError::BadParameter(
            "samples_per_lifetime must be >= 2",
        ));
    }
    if u32::try_from(particle_count).is_err() {
        return Err(SimulationError::BadParameter("particle_count too large"));
    }
    let offsets = sequence_offsets(def.seed);
    let lifetime = def.emitter.particle_lifetime;
    let size = def.emitter.particle_size;
    let last = (samples_per_lifetime - 1) as f64;

    let per_particle: Vec<Vec<TrajectorySample>> = (0..particle_count as u32)
        .into_par_iter()
        .map(|id| {
            let b = birth(def, id, offsets);
            (0..samples_per_lifetime)
                .map(|k| {
                    // the last sample lands exactly on the lifetime
                    let t = if k + 1 == samples_per_lifetime {
                        lifetime
                    } else {
                        lifetime * (k as f64 / last)
                    };
                    TrajectorySample {
                        particle_id: id,
                        t,
                        birth_time: b.birth_time,
                        position: position_at(def, &b, t),
                        size,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_particle.into_iter().flatten().collect())
}

/// Writes samples as tab-separated text, one per line:
/// `particle_id birth_time t x y z size`.
pub fn write_trajectory_dump<W: Write>(samples: &[TrajectorySample], mut out: W) -> io::Result<()> {
    for s in samples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.particle_id,
            s.birth_time,
            s.t,
            s.position[0],
            s.position[1],
            s.position[2],
            s.size
        )?;
    }
    Ok(())
}

pub fn parse_trajectory_dump<R: BufRead>(input: R) -> io::Result<Vec<TrajectorySample>> {
    let bad = |line: usize, what: &str| {
        io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {what}"))
    };
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(bad(i + 1, "expected 7 columns"));
        }
        let particle_id = cols[0].parse().map_err(|_| bad(i + 1, "particle_id"))?;
        let mut nums = [0.0f64; 6];
        for (slot, col) in nums.iter_mut().zip(&cols[1..]) {
            *slot = col.parse().map_err(|_| bad(i + 1, "number"))?;
        }
        out.push(TrajectorySample {
            particle_id,
            birth_time: nums[0],
            t: nums[1],
            position: [nums[2], nums[3], nums[4]],
            size: nums[5],
        });
    }
    Ok(out)
}

/// Keeps at most `max_particles` particles, spread evenly over the ids.
pub fn downsample(samples: &[TrajectorySample], max_particles: usize) -> Vec<TrajectorySample> {
    let Some(last) = samples.last() else {
        return Vec::new();
    };
    let count = last.particle_id as usize + 1;
    if max_particles >= count {
        return samples.to_vec();
    }
    if max_particles == 0 {
        return Vec::new();
    }
    let keep: std::collections::BTreeSet<u32> = (0..max_particles)
        .map(|i| (i * count / max_particles) as u32)
        .collect();
    samples
        .iter()
        .filter(|s| keep.contains(&s.particle_id))
        .copied()
        .collect()
}

/// Unwrapped azimuth travelled by one particle across consecutive samples.
pub fn azimuth_advance(samples: &[TrajectorySample]) -> f64 {
    samples
        .windows(2)
        .map(|w| {
            let a = w[0].position[1].atan2(w[0].position[0]);
            let b = w[1].position[1].atan2(w[1].position[0]);
            crate::geometry::wrap_delta(b - a)
        })
        .sum()
}

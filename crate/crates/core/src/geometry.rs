//! Spherical coordinates about the effect's symmetry axis.
//!
//! The polar axis is `+z`. `theta` is measured from `+z` and lies in
//! `[0, pi]`; `phi` is the azimuth from `+x` towards `+y` in `[0, 2pi)`.
//! At the origin and on the axis `phi` is stored as 0.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, PartialEq)]
#[error("non-finite coordinate in {0:?}")]
pub struct NonFinite(pub Vec3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalPoint {
    /// Builds a point, normalizing into the canonical ranges.
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        let r = r.max(0.0);
        let theta = theta.clamp(0.0, PI);
        let phi = if r == 0.0 || theta == 0.0 || theta == PI {
            0.0
        } else {
            wrap_angle(phi)
        };
        Self { r, theta, phi }
    }

    pub fn to_cartesian(self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [self.r * st * cp, self.r * st * sp, self.r * ct]
    }

    /// Distance from the polar axis, `r sin(theta)`.
    pub fn equatorial(self) -> f64 {
        self.r * self.theta.sin()
    }

    /// Signed coordinate along the polar axis, `r cos(theta)`.
    pub fn axial(self) -> f64 {
        self.r * self.theta.cos()
    }
}

/// Converts a Cartesian point to spherical coordinates.
pub fn to_spherical(p: Vec3) -> Result<SphericalPoint, NonFinite> {
    if p.iter().any(|c| !c.is_finite()) {
        return Err(NonFinite(p));
    }
    let [x, y, z] = p;
    let rho = x.hypot(y);
    let r = rho.hypot(z);
    if r == 0.0 {
        return Ok(SphericalPoint {
            r: 0.0,
            theta: 0.0,
            phi: 0.0,
        });
    }
    let theta = rho.atan2(z);
    let phi = if rho == 0.0 { 0.0 } else { wrap_angle(y.atan2(x)) };
    Ok(SphericalPoint { r, theta, phi })
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_delta(d: f64) -> f64 {
    let w = wrap_angle(d);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dist_sq(a, &[0.0; 3]).sqrt()
}

//! Design parameterization of the curvature-polynomial energy density.
//!
//! A design is the six coefficients of
//! `f(k1, k2) = a20 k1² + a11 k1 k2 + a02 k2² + a10 k1 + a01 k2 + a00`
//! plus the conserved mean phase value `m0`. The same density can be written
//! as a rotated, translated and stretched quadric
//! `f = g (k̃ᵀ diag(1, α) k̃ − c)` with `k̃ = R(θ) (k − kc)`; [`GeometricParams`]
//! holds that form and [`to_standard`] / [`to_geometric`] convert between them.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order used by every CSV/JSON record of a design.
pub const DESIGN_COLUMNS: [&str; 7] = ["a20", "a11", "a02", "a10", "a01", "a00", "m0"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub a20: f64,
    pub a11: f64,
    pub a02: f64,
    pub a10: f64,
    pub a01: f64,
    pub a00: f64,
    pub m0: f64,
}

impl DesignParams {
    pub fn new(a20: f64, a11: f64, a02: f64, a10: f64, a01: f64, a00: f64, m0: f64) -> Self {
        Self {
            a20,
            a11,
            a02,
            a10,
            a01,
            a00,
            m0,
        }
    }

    /// Components in [`DESIGN_COLUMNS`] order.
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.a20, self.a11, self.a02, self.a10, self.a01, self.a00, self.m0,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; 7] = v.try_into().map_err(|_| Error::Shape {
            expected: 7,
            got: v.len(),
        })?;
        Ok(Self::from_array(arr))
    }

    /// Multiplies the six energy coefficients by `factor`, leaving `m0` alone.
    pub fn scale_energy(&self, factor: f64) -> Self {
        let mut v = self.to_array();
        for c in &mut v[..6] {
            *c *= factor;
        }
        Self::from_array(v)
    }

    pub fn csv_header() -> String {
        DESIGN_COLUMNS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.to_array()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let vals = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad design value {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_slice(&vals)
    }

    /// Symmetric matrix of the quadratic part, `[[a20, a11/2], [a11/2, a02]]`.
    fn quadratic_form(&self) -> [[f64; 2]; 2] {
        [[self.a20, 0.5 * self.a11], [0.5 * self.a11, self.a02]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricParams {
    pub kappa1_c: f64,
    pub kappa2_c: f64,
    pub theta: f64,
    pub alpha: f64,
    pub c: f64,
    pub g: f64,
    pub m0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadricClass {
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Surface energy per unit area at principal curvatures `(k1, k2)`.
pub fn energy_density(theta: &DesignParams, k1: f64, k2: f64) -> f64 {
    theta.a20 * k1 * k1
        + theta.a11 * k1 * k2
        + theta.a02 * k2 * k2
        + theta.a10 * k1
        + theta.a01 * k2
        + theta.a00
}

/// Partial derivatives `(∂f/∂k1, ∂f/∂k2)` of [`energy_density`].
pub fn energy_density_grad(theta: &DesignParams, k1: f64, k2: f64) -> (f64, f64) {
    (
        2.0 * theta.a20 * k1 + theta.a11 * k2 + theta.a10,
        theta.a11 * k1 + 2.0 * theta.a02 * k2 + theta.a01,
    )
}

pub fn to_standard(geo: &GeometricParams) -> Result<DesignParams> {
    if !(geo.g > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale factor g must be positive, got {}",
            geo.g
        )));
    }
    let GeometricParams {
        kappa1_c: k1c,
        kappa2_c: k2c,
        theta,
        alpha,
        c,
        g,
        m0,
    } = *geo;
    let (s2, c2) = (2.0 * theta).sin_cos();
    let a20 = 0.5 * g * (1.0 + alpha - alpha * c2 + c2);
    let a11 = g * (1.0 - alpha) * s2;
    let a02 = 0.5 * g * (1.0 + alpha + alpha * c2 - c2);
    let a10 = -g * ((1.0 + alpha) * k1c + (1.0 - alpha) * k1c * c2 + (1.0 - alpha) * k2c * s2);
    let a01 = -g * ((1.0 + alpha) * k2c + (alpha - 1.0) * k2c * c2 + (1.0 - alpha) * k1c * s2);
    let a00 = 0.5
        * g
        * ((1.0 + alpha) * (k1c * k1c + k2c * k2c)
            + (1.0 - alpha) * (k1c * k1c - k2c * k2c) * c2
            + 2.0 * k1c * k2c * (1.0 - alpha) * s2
            - 2.0 * c);
    Ok(DesignParams::new(a20, a11, a02, a10, a01, a00, m0))
}

/// Inverse of [`to_standard`].
///
/// The gauge is fixed by the eigen-decomposition of the quadratic form: the
/// larger eigenvalue becomes `g` (so `α ≤ 1`), `θ` is the angle of its
/// eigenvector folded into `[−π/2, π/2)`, and isotropic forms get `θ = 0`.
/// Parabolic forms take the minimum-norm center.
pub fn to_geometric(theta: &DesignParams) -> Result<GeometricParams> {
    let q = theta.quadratic_form();
    let (a, b, d) = (q[0][0], q[0][1], q[1][1]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lam_max = mean + radius;
    let lam_min = mean - radius;
    let scale = lam_max.abs().max(lam_min.abs());
    if scale == 0.0 {
        return Err(Error::DegenerateForm(
            "quadratic part is identically zero".into(),
        ));
    }
    if lam_max <= 1e-12 * scale {
        return Err(Error::DegenerateForm(format!(
            "largest eigenvalue {lam_max} is not positive; no representation with g > 0"
        )));
    }
    let g = lam_max;
    let alpha = lam_min / lam_max;
    let angle = if radius <= 1e-12 * scale {
        0.0
    } else {
        fold_half_turn(0.5 * (2.0 * b).atan2(a - d))
    };

    // Linear part is -2 Q kc; solve in the eigenbasis, rejecting components
    // along a null direction.
    let lin = [theta.a10, theta.a01];
    let basis = [[angle.cos(), angle.sin()], [-angle.sin(), angle.cos()]];
    let eig = [lam_max, lam_min];
    let lin_norm = lin[0].hypot(lin[1]);
    let mut center = [0.0; 2];
    for (v, &lam) in basis.iter().zip(&eig) {
        let proj = -0.5 * (v[0] * lin[0] + v[1] * lin[1]);
        let coeff = if lam.abs() <= 1e-12 * scale {
            if proj.abs() > 1e-12 * lin_norm.max(1.0) {
                return Err(Error::NoCenter(
                    "linear term has a component along the flat direction".into(),
                ));
            }
            0.0
        } else {
            proj / lam
        };
        center[0] += coeff * v[0];
        center[1] += coeff * v[1];
    }
    let quad_at_center = q[0][0] * center[0] * center[0]
        + 2.0 * q[0][1] * center[0] * center[1]
        + q[1][1] * center[1] * center[1];
    let c = (quad_at_center - theta.a00) / g;
    Ok(GeometricParams {
        kappa1_c: center[0],
        kappa2_c: center[1],
        theta: angle,
        alpha,
        c,
        g,
        m0: theta.m0,
    })
}

fn fold_half_turn(angle: f64) -> f64 {
    let mut a = angle;
    while a >= FRAC_PI_2 {
        a -= std::f64::consts::PI;
    }
    while a < -FRAC_PI_2 {
        a += std::f64::consts::PI;
    }
    a
}

/// Classifies the quadric by the sign of the quadratic-form determinant.
pub fn classify(theta: &DesignParams) -> Result<QuadricClass> {
    let q = theta.quadratic_form();
    let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
    let mean = 0.5 * (q[0][0] + q[1][1]);
    let radius = (0.25 * (q[0][0] - q[1][1]).powi(2) + q[0][1] * q[0][1]).sqrt();
    let nuclear = (mean + radius).abs() + (mean - radius).abs();
    if nuclear == 0.0 {
        return Err(Error::DegenerateForm(
            "quadratic part is identically zero".into(),
        ));
    }
    // det scales quadratically with the coefficients.
    let tol = 1e-12 * nuclear * nuclear;
    Ok(if det > tol {
        QuadricClass::Elliptic
    } else if det < -tol {
        QuadricClass::Hyperbolic
    } else {
        QuadricClass::Parabolic
    })
}

/// Per-component sampling intervals for [`sample_design`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignBounds {
    pub min: [f64; 7],
    pub max: [f64; 7],
}

impl Default for DesignBounds {
    fn default() -> Self {
        Self {
            min: [0.0, -2.0, 0.0, -200.0, -200.0, -5000.0, -0.8],
            max: [1.0, 2.0, 1.0, 200.0, 200.0, 5000.0, -0.15],
        }
    }
}

impl DesignBounds {
    pub fn validate(&self) -> Result<()> {
        for (j, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "bounds for {} are not ordered: [{lo}, {hi}]",
                    DESIGN_COLUMNS[j]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &DesignParams) -> bool {
        theta
            .to_array()
            .iter()
            .enumerate()
            .all(|(j, v)| *v >= self.min[j] && *v <= self.max[j])
    }

    /// Reads these bounds in units of the cell edge and re-expresses them on a
    /// box of side `length`: curvatures shrink by `1/length`, so the linear
    /// coefficients scale by `1/length` and the constant by `1/length²`.
    pub fn per_unit_cell(&self, length: f64) -> Self {
        let mut out = *self;
        for j in [3, 4] {
            out.min[j] /= length;
            out.max[j] /= length;
        }
        out.min[5] /= length * length;
        out.max[5] /= length * length;
        out
    }

    /// Degenerate bounds that always sample `theta`.
    pub fn point(theta: &DesignParams) -> Self {
        let v = theta.to_array();
        Self { min: v, max: v }
    }
}

pub fn sample_design<R: Rng + ?Sized>(rng: &mut R, bounds: &DesignBounds) -> DesignParams {
    let mut v = [0.0; 7];
    for (j, slot) in v.iter_mut().enumerate() {
        let (lo, hi) = (bounds.min[j], bounds.max[j]);
        *slot = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    }
    DesignParams::from_array(v)
}

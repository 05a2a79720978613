//! Periodic phase field on `[0, 100]³` evolved by a mass-conserving
//! H⁻¹ gradient flow of the diffuse curvature energy.

mod curvature;
mod evolve;
mod spectral;

pub use curvature::{
    band_compensation, discrete_energy, energy_gradient, energy_scale, level_set_curvatures,
    CurvatureFields, SURFACE_NORMALIZATION,
};
pub use evolve::{evolve, is_feasible, Diagnostics};
pub use spectral::{step, Stepper};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::DesignParams;
use crate::error::{Error, Result};

/// Edge length of the non-dimensional cubic domain.
pub const DOMAIN_LENGTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    n: usize,
    values: Vec<f64>,
}

impl PhaseField {
    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            n,
            values: vec![value; n * n * n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("grid size {n} < 3")));
        }
        if values.len() != n * n * n {
            return Err(Error::Shape {
                expected: n * n * n,
                got: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    /// Samples `f(x, y, z)` at cell positions `i * spacing`.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let h = DOMAIN_LENGTH / n as f64;
        let mut values = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    values.push(f(i as f64 * h, j as f64 * h, k as f64 * h));
                }
            }
        }
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        DOMAIN_LENGTH / self.n as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var =
            self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Numerical settings of the gradient flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Interface thickness; `None` means twice the grid spacing.
    pub epsilon: Option<f64>,
    pub dt: f64,
    /// Biharmonic stabilization; `None` derives it from the design.
    pub sigma: Option<f64>,
    /// Multiplier `C` applied to the derived stabilization.
    pub sigma_scale: f64,
    /// Sixth-order stabilization in units of `ε³`, matching the stiffness of
    /// the curvature terms.
    pub sigma6_scale: f64,
    pub max_steps: usize,
    pub energy_tol: f64,
    pub window: usize,
    pub noise_amp: f64,
    pub grad_clamp: f64,
    /// Regularization of `|∇u|` in the energy's curvatures, as a fraction of
    /// the peak interface gradient `1/(√2 ε)`.
    pub grad_reg: f64,
    pub band: f64,
    /// Width in `|u|` over which cell energies fade to zero at the band edge;
    /// zero gives a hard cutoff.
    pub taper: f64,
    /// Relative per-step energy increase that triggers a retried step with
    /// half the time step.
    pub max_energy_rise: f64,
    pub min_dt: f64,
    /// Penalty on `|u| > 1`, relative to the design's energy scale over `ε`.
    pub confinement: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            dt: 100.0,
            sigma: None,
            sigma_scale: 1.0,
            sigma6_scale: 5.0,
            max_steps: 4000,
            energy_tol: 1e-4,
            window: 50,
            noise_amp: 0.05,
            grad_clamp: 1e-8,
            grad_reg: 0.3,
            band: 0.9,
            taper: 0.05,
            max_energy_rise: 1e-3,
            min_dt: 1e-6,
            confinement: 300.0,
        }
    }
}

impl SolverConfig {
    /// Short quench for dataset generation: a run counts as settled once its
    /// energy moves by less than 5% over 20 steps, within 300 steps.
    pub fn desk() -> Self {
        Self {
            max_steps: 300,
            energy_tol: 5e-2,
            window: 20,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "epsilon must be > 0, got {eps}"
                )));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.band > 0.0 && self.band < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "band must lie in (0, 1), got {}",
                self.band
            )));
        }
        if !(self.taper >= 0.0 && self.taper < self.band) {
            return Err(Error::InvalidParameter(format!(
                "taper must lie in [0, band), got {}",
                self.taper
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, spacing: f64) -> f64 {
        self.epsilon.unwrap_or(2.0 * spacing)
    }

    pub fn sigma6_for(&self, epsilon: f64) -> f64 {
        self.sigma6_scale * epsilon.powi(3)
    }

    /// Stabilization coefficient for `theta`: `C * 2 * max(a20, a02, 1)` unless
    /// set explicitly.
    pub fn sigma_for(&self, theta: &DesignParams) -> f64 {
        self.sigma
            .unwrap_or_else(|| 2.0 * theta.a20.max(theta.a02).max(1.0) * self.sigma_scale)
    }
}

/// Constant `m0` plus uniform noise, shifted so the discrete mean is exactly `m0`.
pub fn init_field<R: Rng + ?Sized>(
    n: usize,
    m0: f64,
    noise_amp: f64,
    rng: &mut R,
) -> Result<PhaseField> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("grid size {n} < 3")));
    }
    if !(noise_amp >= 0.0) || !(m0.abs() + noise_amp < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need |m0| + noise_amp < 1, got m0 = {m0}, noise_amp = {noise_amp}"
        )));
    }
    if noise_amp == 0.0 {
        return Ok(PhaseField::constant(n, m0));
    }
    let mut values: Vec<f64> = (0..n * n * n)
        .map(|_| m0 + rng.gen_range(-noise_amp..=noise_amp))
        .collect();
    let shift = values.iter().map(|v| v - m0).sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v -= shift;
    }
    Ok(PhaseField { n, values })
}

/// Sidecar of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub m0: f64,
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub theta: Option<DesignParams>,
}

impl FieldHeader {
    /// Header for `u` with the default interface width and no provenance.
    pub fn for_field(u: &PhaseField, cfg: &SolverConfig) -> Self {
        Self {
            n: u.n(),
            length: DOMAIN_LENGTH,
            m0: u.mean(),
            epsilon: cfg.epsilon_for(u.spacing()),
            seed: None,
            theta: None,
        }
    }
}

fn field_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `u` as little-endian `f32` (x fastest) plus `<path>.json`.
pub fn write_field(path: &Path, u: &PhaseField, header: &FieldHeader) -> Result<()> {
    if header.n != u.n() {
        return Err(Error::Shape {
            expected: u.n(),
            got: header.n,
        });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for &v in u.values() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    std::fs::write(
        field_sidecar(path),
        serde_json::to_string_pretty(header)? + "\n",
    )?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(PhaseField, FieldHeader)> {
    let missing = |p: PathBuf| {
        move |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(p),
            _ => e.into(),
        }
    };
    let side = field_sidecar(path);
    let header: FieldHeader =
        serde_json::from_str(&std::fs::read_to_string(&side).map_err(missing(side.clone()))?)?;
    let bytes = std::fs::read(path).map_err(missing(path.to_path_buf()))?;
    let expected = header.n.pow(3) * 4;
    if bytes.len() != expected {
        return Err(Error::Shape {
            expected,
            got: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((PhaseField::from_values(header.n, values)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_without_noise_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = init_field(8, -0.4, 0.0, &mut rng).unwrap();
        assert!(u.values().iter().all(|&v| v == -0.4));
    }

    #[test]
    fn init_mean_is_exact() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = init_field(16, -0.37, 0.05, &mut rng).unwrap();
            assert!((u.mean() - -0.37).abs() <= 1e-14);
            let shift_bound = 0.05 + 0.05 / 4.0;
            assert!(u.values().iter().all(|v| (v + 0.37).abs() <= shift_bound));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_field(12, 0.1, 0.05, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_field(12, 0.1, 0.05, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn init_rejects_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_field(8, 0.97, 0.05, &mut rng).is_err());
        assert!(init_field(8, -1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.raw");
        let u = init_field(6, -0.2, 0.3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut header = FieldHeader::for_field(&u, &SolverConfig::default());
        header.seed = Some(3);
        write_field(&path, &u, &header).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 6 * 6 * 6 * 4);
        let (v, h) = read_field(&path).unwrap();
        assert_eq!(h, header);
        for (a, b) in u.values().iter().zip(v.values()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        assert!(matches!(
            read_field(&dir.path().join("none.raw")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            band: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

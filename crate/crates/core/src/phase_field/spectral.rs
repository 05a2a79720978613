use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::curvature::{energy_and_gradient, energy_scale};
use super::{PhaseField, SolverConfig, DOMAIN_LENGTH};
use crate::design_space::DesignParams;
use crate::error::{Error, Result};

/// Separable 3D FFT over an `n³` x-fastest grid.
struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft3 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            line: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let fft = if inverse {
            self.inverse.clone()
        } else {
            self.forward.clone()
        };
        for row in data.chunks_exact_mut(n) {
            fft.process_with_scratch(row, &mut self.scratch);
        }
        for stride in [n, n * n] {
            for outer in 0..n * n {
                // Base index of the line along the strided axis.
                let base = if stride == n {
                    (outer / n) * n * n + outer % n
                } else {
                    outer
                };
                for (t, slot) in self.line.iter_mut().enumerate() {
                    *slot = data[base + t * stride];
                }
                fft.process_with_scratch(&mut self.line, &mut self.scratch);
                for (t, slot) in self.line.iter().enumerate() {
                    data[base + t * stride] = *slot;
                }
            }
        }
        if inverse {
            let norm = 1.0 / (n * n * n) as f64;
            for v in data.iter_mut() {
                *v *= norm;
            }
        }
    }
}

/// Reusable semi-implicit spectral integrator for one grid size.
pub struct Stepper {
    n: usize,
    fft: Fft3,
    k2: Vec<f64>,
    u_hat: Vec<Complex64>,
    mu_hat: Vec<Complex64>,
}

impl Stepper {
    pub fn new(n: usize) -> Self {
        let freq: Vec<f64> = (0..n)
            .map(|m| {
                let m = if m <= n / 2 {
                    m as f64
                } else {
                    m as f64 - n as f64
                };
                2.0 * PI * m / DOMAIN_LENGTH
            })
            .collect();
        let mut k2 = Vec::with_capacity(n * n * n);
        for kz in &freq {
            for ky in &freq {
                for kx in &freq {
                    k2.push(kx * kx + ky * ky + kz * kz);
                }
            }
        }
        Self {
            n,
            fft: Fft3::new(n),
            k2,
            u_hat: vec![Complex64::default(); n * n * n],
            mu_hat: vec![Complex64::default(); n * n * n],
        }
    }

    /// One update with time step `dt`; returns the new field together with
    /// the energy of the input field.
    pub fn advance(
        &mut self,
        u: &PhaseField,
        theta: &DesignParams,
        cfg: &SolverConfig,
        dt: f64,
        step_index: usize,
    ) -> Result<(PhaseField, f64)> {
        let (energy, grad) = energy_and_gradient(u, theta, cfg);
        if !energy.is_finite() {
            return Err(Error::Divergence { step: step_index });
        }
        let next = self.apply(u, &grad, theta, cfg, dt, step_index)?;
        Ok((next, energy))
    }

    /// Update driven by a precomputed energy gradient of `u`.
    pub(crate) fn apply(
        &mut self,
        u: &PhaseField,
        grad: &[f64],
        theta: &DesignParams,
        cfg: &SolverConfig,
        dt: f64,
        step_index: usize,
    ) -> Result<PhaseField> {
        assert_eq!(u.n(), self.n, "stepper built for a different grid");
        let h = u.spacing();
        let eps = cfg.epsilon_for(h);
        // Chemical potential per unit volume, in units of the design's energy scale.
        let inv_vol = 1.0 / (h * h * h * energy_scale(theta, eps));
        let sigma = cfg.sigma_for(theta);
        let sigma6 = cfg.sigma6_for(eps);

        for ((uh, mh), (&uv, &gv)) in self
            .u_hat
            .iter_mut()
            .zip(self.mu_hat.iter_mut())
            .zip(u.values().iter().zip(grad))
        {
            *uh = Complex64::new(uv, 0.0);
            *mh = Complex64::new(gv * inv_vol, 0.0);
        }
        self.fft.transform(&mut self.u_hat, false);
        self.fft.transform(&mut self.mu_hat, false);
        for ((uh, mh), &k2) in self.u_hat.iter_mut().zip(&self.mu_hat).zip(&self.k2) {
            // (u⁺ − u)/dt = Δμ + (σΔ² − σ₆Δ³)(u⁺ − u); the zero mode is left as is.
            let k4 = k2 * k2;
            *uh -= *mh * (dt * k2 / (1.0 + dt * (sigma * k4 + sigma6 * k4 * k2)));
        }
        self.fft.transform(&mut self.u_hat, true);

        let old_mean = u.mean();
        let mut values: Vec<f64> = self.u_hat.iter().map(|c| c.re).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: step_index });
        }
        // Remove the O(1e-16) drift of the inverse transform.
        let drift = values.iter().sum::<f64>() / values.len() as f64 - old_mean;
        for v in &mut values {
            *v -= drift;
        }
        Ok(PhaseField { n: self.n, values })
    }
}

/// One semi-implicit spectral step of the H⁻¹ flow with the configured `dt`.
pub fn step(u: &PhaseField, theta: &DesignParams, cfg: &SolverConfig) -> Result<PhaseField> {
    Stepper::new(u.n())
        .advance(u, theta, cfg, cfg.dt, 0)
        .map(|(next, _)| next)
}

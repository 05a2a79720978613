use log::debug;
use serde::{Deserialize, Serialize};

use super::curvature::energy_and_gradient;
use super::spectral::Stepper;
use super::{discrete_energy, PhaseField, SolverConfig};
use crate::design_space::DesignParams;
use crate::error::{Error, Result};

/// Magnitude past which the field is considered to have blown up.
const BLOWUP_LIMIT: f64 = 1e3;

/// Factor by which the time step recovers after each accepted step.
const DT_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Energy of every accepted state, starting with the initial field.
    pub energy: Vec<f64>,
    pub mean_u: Vec<f64>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub final_dt: f64,
    pub converged: bool,
    pub feasible: bool,
}

impl Diagnostics {
    pub fn initial_energy(&self) -> f64 {
        self.energy[0]
    }

    pub fn final_energy(&self) -> f64 {
        *self.energy.last().expect("trace holds the initial energy")
    }

    /// `step,energy,mean_u` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,energy,mean_u\n");
        for (i, (e, m)) in self.energy.iter().zip(&self.mean_u).enumerate() {
            out.push_str(&format!("{i},{e:e},{m:e}\n"));
        }
        out
    }
}

/// A run is feasible when it converged to a phase-separated field holding
/// both phases (which also guarantees a non-empty zero level set).
pub fn is_feasible(u: &PhaseField, converged: bool) -> bool {
    let (lo, hi) = u.min_max();
    converged && u.std_dev() > 0.4 && lo < 0.0 && hi > 0.0
}

/// Iterates the spectral step until the relative energy change over
/// `cfg.window` accepted steps drops below `cfg.energy_tol`.
///
/// A step whose energy rises by more than `cfg.max_energy_rise` (relative) is
/// retried with half the time step; `dt` recovers geometrically afterwards.
/// Running out of retries at `cfg.min_dt` is reported as divergence.
pub fn evolve(
    u0: &PhaseField,
    theta: &DesignParams,
    cfg: &SolverConfig,
) -> Result<(PhaseField, Diagnostics)> {
    cfg.validate()?;
    let e0 = discrete_energy(u0, theta, cfg);
    let mut diag = Diagnostics {
        energy: vec![e0],
        mean_u: vec![u0.mean()],
        steps: 0,
        rejected_steps: 0,
        final_dt: cfg.dt,
        converged: false,
        feasible: false,
    };
    if cfg.max_steps == 0 {
        return Ok((u0.clone(), diag));
    }
    if !e0.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }

    let mut stepper = Stepper::new(u0.n());
    let mut u = u0.clone();
    let (mut energy, mut grad) = energy_and_gradient(&u, theta, cfg);
    let mut dt = cfg.dt;
    let mut attempts = 0;
    while diag.steps < cfg.max_steps {
        attempts += 1;
        let next = stepper.apply(&u, &grad, theta, cfg, dt, diag.steps)?;
        let (lo, hi) = next.min_max();
        if lo < -BLOWUP_LIMIT || hi > BLOWUP_LIMIT {
            return Err(Error::Divergence { step: diag.steps });
        }
        let (next_energy, next_grad) = energy_and_gradient(&next, theta, cfg);
        let rise = (next_energy - energy) / energy.abs().max(f64::MIN_POSITIVE);
        if !(rise <= cfg.max_energy_rise) {
            if dt <= cfg.min_dt || attempts > 50 * cfg.max_steps {
                return Err(Error::Divergence { step: diag.steps });
            }
            dt = (0.5 * dt).max(cfg.min_dt);
            diag.rejected_steps += 1;
            continue;
        }
        u = next;
        energy = next_energy;
        grad = next_grad;
        diag.steps += 1;
        diag.energy.push(energy);
        diag.mean_u.push(u.mean());
        dt = (dt * DT_GROWTH).min(cfg.dt);

        let t = diag.energy.len() - 1;
        if t >= cfg.window {
            let past = diag.energy[t - cfg.window];
            let scale = energy.abs().max(1e-12 * e0.abs()).max(f64::MIN_POSITIVE);
            if (energy - past).abs() / scale < cfg.energy_tol {
                diag.converged = true;
                break;
            }
        }
    }
    diag.final_dt = dt;
    diag.feasible = is_feasible(&u, diag.converged);
    debug!(
        "evolve: {} steps ({} rejected), energy {:.6e} -> {:.6e}, converged {}",
        diag.steps, diag.rejected_steps, e0, energy, diag.converged
    );
    Ok((u, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_field::init_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_steps_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u0 = init_field(8, -0.3, 0.05, &mut rng).unwrap();
        let cfg = SolverConfig {
            max_steps: 0,
            ..Default::default()
        };
        let theta = DesignParams::new(1.0, 0.0, 1.0, 0.0, 0.0, 1.0, -0.3);
        let (u, diag) = evolve(&u0, &theta, &cfg).unwrap();
        assert_eq!(u, u0);
        assert!(!diag.converged);
        assert_eq!(diag.steps, 0);
    }

    #[test]
    fn csv_trace_has_header_and_rows() {
        let diag = Diagnostics {
            energy: vec![2.0, 1.0],
            mean_u: vec![-0.3, -0.3],
            steps: 1,
            rejected_steps: 0,
            final_dt: 0.05,
            converged: false,
            feasible: false,
        };
        let csv = diag.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "step,energy,mean_u");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }

    #[test]
    fn feasibility_predicate() {
        let mixed = PhaseField::constant(8, -0.3);
        assert!(!is_feasible(&mixed, true));
        let split = PhaseField::from_fn(8, |x, _, _| if x < 50.0 { 1.0 } else { -1.0 });
        assert!(is_feasible(&split, true));
        assert!(!is_feasible(&split, false));
    }
}

//! Evolve a noisy field under a sphere-favoring energy and write the result.
//!
//! cargo run --release --example simulate -- [out_dir]

use curvdesign::design_space::{to_standard, GeometricParams};
use curvdesign::encoding::HistogramSpec;
use curvdesign::phase_field::SolverConfig;
use curvdesign::pipeline::run_simulation;

fn main() -> curvdesign::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "simulate-out".into());
    let theta = to_standard(&GeometricParams {
        kappa1_c: 0.1,
        kappa2_c: 0.1,
        theta: 0.0,
        alpha: 1.0,
        c: 0.0,
        g: 1.0,
        m0: -0.6,
    })?;
    let solver = SolverConfig {
        max_steps: 600,
        ..SolverConfig::desk()
    };
    let summary = run_simulation(&theta, 32, 1, &solver, &HistogramSpec::desk(), out.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

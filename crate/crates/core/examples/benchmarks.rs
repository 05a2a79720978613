//! Curvature encodings of the benchmark structures and how far apart they are.
//!
//! cargo run --release --example benchmarks -- [out_dir]

use std::path::PathBuf;

use curvdesign::benchmarks::{voxel_sphere, SpinodoidParams, Target};
use curvdesign::encoding::HistogramSpec;
use curvdesign::phase_field::SolverConfig;
use curvdesign::pipeline::write_benchmark;

fn main() -> curvdesign::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "benchmarks-out".into()));
    let solver = SolverConfig::default();
    let spec = HistogramSpec::desk();
    let targets = [
        ("pns", Target::pns(48)),
        ("spinodoid", Target::spinodoid(&SpinodoidParams::default(), 48)?),
        ("bone", Target::bone(&voxel_sphere(48, 14.0))?),
    ];
    let mut encodings = Vec::new();
    for (name, target) in &targets {
        let chi = write_benchmark(target, &solver, &spec, &out.join(name))?;
        let (k1, k2) = chi.mode();
        println!("{name:<10} mode ({k1:+.3}, {k2:+.3})");
        encodings.push(chi);
    }
    for i in 0..targets.len() {
        for j in i + 1..targets.len() {
            let tv = encodings[i].total_variation(&encodings[j])?;
            println!("TV({}, {}) = {tv:.3}", targets[i].0, targets[j].0);
        }
    }
    Ok(())
}

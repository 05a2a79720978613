//! Sample designs, simulate them and store the feasible pairs.
//!
//! cargo run --release --example dataset -- [out_dir] [n]

use std::path::PathBuf;

use curvdesign::pipeline::{default_workers, generate_dataset, Dataset, DatasetConfig};

fn main() -> curvdesign::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "dataset-out".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let cfg = DatasetConfig {
        grid: 24,
        ..DatasetConfig::desk(n, 0)
    };
    // Rerunning resumes from the manifest.
    let manifest = generate_dataset(&cfg, &out, default_workers())?;
    println!("{} feasible of {} attempted", manifest.count, manifest.attempted);
    for (reason, count) in manifest.rejection_summary() {
        println!("  rejected ({reason}): {count}");
    }
    let data = Dataset::load(&out)?;
    println!("first design: {:?}", data.thetas[0]);
    Ok(())
}

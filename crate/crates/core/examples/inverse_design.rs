//! Train both networks on a small dataset, invert a benchmark encoding and
//! re-simulate the predicted design.
//!
//! cargo run --release --example inverse_design -- [work_dir]

use std::path::PathBuf;

use curvdesign::benchmarks::Target;
use curvdesign::neural::TrainConfig;
use curvdesign::phase_field::SolverConfig;
use curvdesign::pipeline::*;

fn main() -> curvdesign::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "inverse-out".into()));
    let data = work.join("data");
    let cfg = DatasetConfig {
        grid: 24,
        ..DatasetConfig::desk(40, 0)
    };
    generate_dataset(&cfg, &data, default_workers())?;

    let fnn = work.join("f.mlp");
    let inn = work.join("g.mlp");
    let short = |base: TrainConfig| TrainConfig {
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-3,
        ..base
    };
    let f = train_forward_model(&data, Preset::Desk, &short(TrainConfig::forward_default()), &fnn)?;
    println!("forward loss {:.4} -> {:.4}", f.train_loss[0], f.final_train_loss());
    let g = train_inverse_model(&data, &fnn, Preset::Desk, &short(TrainConfig::inverse_default()), &inn)?;
    println!("reconstruction loss {:.4} -> {:.4}", g.train_loss[0], g.final_train_loss());

    let models = Models::load(&fnn, &inn)?;
    let verify = VerifyConfig {
        grid: 24,
        ..Default::default()
    };
    let solver = SolverConfig::default();
    let source = TargetSource::Benchmark(Box::new(Target::pns(32)));
    let result = run_inverse_design(&source, &models, &solver, Some(&verify))?;
    let summary = write_inverse_design(&result, Some(&verify), &solver, &work.join("pns"))?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

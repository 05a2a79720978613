use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use curvdesign::benchmarks::{
    voxel_sphere, ConeRule, SpinodoidParams, Target, VoxelImage,
};
use curvdesign::design_space::DesignParams;
use curvdesign::encoding::{write_encodings, CurvatureEncoding, HistogramSpec};
use curvdesign::neural::TrainConfig;
use curvdesign::phase_field::SolverConfig;
use curvdesign::pipeline::{
    default_workers, generate_dataset, run_inverse_design, run_simulation, train_forward_model,
    train_inverse_model, write_benchmark, write_inverse_design, DatasetConfig, Models, Preset,
    TargetSource, VerifyConfig, THREADS_ENV,
};
use curvdesign::{Error, Result};

#[derive(Parser)]
#[command(name = "curvdesign", version, about = "Curvature-driven topology generation and inverse design")]
struct Cli {
    /// Print every default configuration as JSON and exit.
    #[arg(long)]
    show_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverPreset {
    Default,
    Desk,
}

impl SolverPreset {
    fn config(self) -> SolverConfig {
        match self {
            SolverPreset::Default => SolverConfig::default(),
            SolverPreset::Desk => SolverConfig::desk(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "default")]
    solver: SolverPreset,
    #[arg(long)]
    max_steps: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut cfg = self.solver.config();
        if let Some(s) = self.max_steps {
            cfg.max_steps = s;
        }
        cfg
    }
}

#[derive(Args, Clone)]
struct BinArgs {
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Curvature range `min,max`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    range: Option<(f64, f64)>,
}

impl BinArgs {
    fn spec(&self) -> Result<HistogramSpec> {
        let mut spec = HistogramSpec::with_bins(self.bins);
        if let Some((lo, hi)) = self.range {
            spec.kappa_min = lo;
            spec.kappa_max = hi;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected min,max")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one design and write field, energy trace, surface and encoding.
    Simulate {
        /// JSON file holding the design, as an object or a 7-element array.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        bins: BinArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate (or resume) a dataset of feasible design/encoding pairs.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 48)]
        grid: usize,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the thread override variable or the core count.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a field snapshot, OBJ surface or curvature-sample file.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        bins: BinArgs,
        /// Box side of an OBJ input, if not the standard box.
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the forward surrogate.
    TrainFnn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inverse network through a frozen forward surrogate.
    TrainInn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fnn: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a design for a target topology.
    Invert {
        /// Encoding file (.chi/.bin with CHI1 header), OBJ, samples or field.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        fnn: PathBuf,
        #[arg(long)]
        inn: PathBuf,
        /// Re-simulate the predicted design and compare encodings.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 48)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a benchmark topology and its encoding.
    Benchmark {
        #[command(subcommand)]
        kind: BenchmarkKind,
    },
}

#[derive(Args, Clone)]
struct BenchOut {
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[command(flatten)]
    bins: BinArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchmarkKind {
    Spinodoid {
        #[arg(long, default_value_t = 1000)]
        q: usize,
        /// Wave number in units of π.
        #[arg(long, default_value_t = 15.0)]
        beta_pi: f64,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        /// Cone half-angles in degrees about x, y, z.
        #[arg(long, value_delimiter = ',', default_values_t = [60.0, 30.0, 10.0])]
        cones: Vec<f64>,
        /// Admit directions lying in an odd number of cones.
        #[arg(long)]
        xor: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: BenchOut,
    },
    Pns {
        #[command(flatten)]
        common: BenchOut,
    },
    Bone {
        /// Raw voxel image with a JSON sidecar; a voxelized sphere if omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: BenchOut,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThetaJson {
    Params(DesignParams),
    Array([f64; 7]),
}

fn read_theta(path: &Path) -> Result<DesignParams> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(match serde_json::from_str(&text)? {
        ThetaJson::Params(p) => p,
        ThetaJson::Array(a) => DesignParams::from_array(a),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn show_config() -> Result<()> {
    print_json(&serde_json::json!({
        "threads_env": THREADS_ENV,
        "default_workers": default_workers(),
        "solver_default": SolverConfig::default(),
        "solver_desk": SolverConfig::desk(),
        "histogram_default": HistogramSpec::default(),
        "histogram_desk": HistogramSpec::desk(),
        "dataset_desk": DatasetConfig::desk(2000, 0),
        "train_forward": TrainConfig::forward_default(),
        "train_inverse": TrainConfig::inverse_default(),
        "spinodoid": SpinodoidParams::default(),
        "verify": VerifyConfig::default(),
    }))
}

fn is_encoding_file(path: &Path) -> bool {
    std::fs::File::open(path)
        .and_then(|mut f| {
            let mut magic = [0u8; 4];
            std::io::Read::read_exact(&mut f, &mut magic).map(|_| &magic == b"CHI1")
        })
        .unwrap_or(false)
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn field_sidecar_exists(path: &Path) -> bool {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    Path::new(&s).exists()
}

/// Picks the reader for a geometry or encoding input by its content.
fn target_source(path: &Path, extent: Option<f64>) -> TargetSource {
    if has_extension(path, "obj") {
        TargetSource::Mesh {
            path: path.to_path_buf(),
            extent,
        }
    } else if is_encoding_file(path) {
        TargetSource::Encoding(path.to_path_buf())
    } else if field_sidecar_exists(path) {
        TargetSource::Field(path.to_path_buf())
    } else {
        TargetSource::Samples(path.to_path_buf())
    }
}

fn train_config(base: TrainConfig, epochs: Option<usize>, seed: Option<u64>) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(base.epochs),
        seed: seed.unwrap_or(base.seed),
        ..base
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            theta,
            grid,
            seed,
            solver,
            bins,
            out,
        } => {
            let theta = read_theta(&theta)?;
            let summary =
                run_simulation(&theta, grid, seed, &solver.config(), &bins.spec()?, &out)?;
            print_json(&summary)
        }
        Command::GenData {
            n,
            grid,
            bins,
            seed,
            workers,
            max_steps,
            out,
        } => {
            let mut cfg = DatasetConfig::desk(n, seed);
            cfg.grid = grid;
            cfg.histogram = HistogramSpec::with_bins(bins);
            if let Some(s) = max_steps {
                cfg.solver.max_steps = s;
            }
            let m = generate_dataset(&cfg, &out, workers.unwrap_or_else(default_workers))?;
            println!(
                "{} feasible pairs from {} samples in {}",
                m.count,
                m.attempted,
                out.display()
            );
            for (reason, count) in m.rejection_summary() {
                println!("  rejected {count}: {reason}");
            }
            Ok(())
        }
        Command::Encode {
            input,
            bins,
            extent,
            out,
        } => {
            let spec = bins.spec()?;
            let solver = SolverConfig::default();
            let enc = target_source(&input, extent).encoding(&spec, &solver)?;
            write_encodings(&out, &spec, std::slice::from_ref(&enc.values))?;
            println!("mode {:?}", enc.mode());
            Ok(())
        }
        Command::TrainFnn {
            data,
            preset,
            epochs,
            seed,
            out,
        } => {
            let cfg = train_config(TrainConfig::forward_default(), epochs, seed);
            let report = train_forward_model(&data, preset.into(), &cfg, &out)?;
            println!(
                "train loss {:.6e} test loss {:?} in {:.1} s",
                report.final_train_loss(),
                report.final_test_loss(),
                report.wall_time_s
            );
            Ok(())
        }
        Command::TrainInn {
            data,
            fnn,
            preset,
            epochs,
            seed,
            out,
        } => {
            let cfg = train_config(TrainConfig::inverse_default(), epochs, seed);
            let report = train_inverse_model(&data, &fnn, preset.into(), &cfg, &out)?;
            println!(
                "reconstruction loss {:.6e} held out {:?} in {:.1} s",
                report.final_train_loss(),
                report.final_test_loss(),
                report.wall_time_s
            );
            Ok(())
        }
        Command::Invert {
            target,
            fnn,
            inn,
            verify,
            grid,
            seed,
            out,
        } => {
            let models = Models::load(&fnn, &inn)?;
            let solver = SolverConfig::default();
            let vcfg = verify.then(|| VerifyConfig {
                grid,
                seed,
                ..Default::default()
            });
            let source = target_source(&target, None);
            let result = run_inverse_design(&source, &models, &solver, vcfg.as_ref())?;
            let summary = write_inverse_design(&result, vcfg.as_ref(), &solver, &out)?;
            print_json(&summary)
        }
        Command::Benchmark { kind } => {
            let solver = SolverConfig::default();
            let (target, common) = match kind {
                BenchmarkKind::Spinodoid {
                    q,
                    beta_pi,
                    rho,
                    cones,
                    xor,
                    seed,
                    common,
                } => {
                    let cone_angles: [f64; 3] = cones.try_into().map_err(|c: Vec<f64>| {
                        Error::InvalidInput(format!("expected three cone angles, got {}", c.len()))
                    })?;
                    let p = SpinodoidParams {
                        beta: beta_pi * std::f64::consts::PI,
                        q,
                        cone_angles: cone_angles.map(f64::to_radians),
                        rho,
                        seed,
                        rule: if xor { ConeRule::Xor } else { ConeRule::Union },
                    };
                    (Target::spinodoid(&p, common.grid)?, common)
                }
                BenchmarkKind::Pns { common } => (Target::pns(common.grid), common),
                BenchmarkKind::Bone { input, common } => {
                    let img = match input {
                        Some(path) => VoxelImage::read_raw(&path)?,
                        None => voxel_sphere(common.grid, 0.3 * common.grid as f64),
                    };
                    (Target::bone(&img)?, common)
                }
            };
            let enc: CurvatureEncoding =
                write_benchmark(&target, &solver, &common.bins.spec()?, &common.out)?;
            println!("mode {:?}", enc.mode());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = if cli.show_config {
        show_config()
    } else if let Some(command) = cli.command {
        run(command)
    } else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(2);
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Dataset generation, model training on stored datasets, and the
//! inverse-design workflow behind the command-line tool.

use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{field_samples, Target};
use crate::design_space::{sample_design, DesignBounds, DesignParams, DESIGN_COLUMNS};
use crate::encoding::{
    append_encodings, histogram, read_encodings, read_json, truncate_encodings, write_encodings,
    write_json, ChiScaler, CurvatureEncoding, HistogramSpec, ThetaScaler, CHI_HEADER_LEN,
};
use crate::error::{open_artifact, Error, Result};
use crate::neural::{
    forward_dims, inverse_dims, invert, sidecar_path, train_forward, train_inverse,
    CheckpointMeta, Matrix, Mlp, TrainConfig, TrainReport, DESK_FORWARD_HIDDEN,
    DESK_INVERSE_HIDDEN, PAPER_FORWARD_HIDDEN, PAPER_INVERSE_HIDDEN,
};
use crate::phase_field::{
    evolve, init_field, read_field, write_field, Diagnostics, FieldHeader, PhaseField,
    SolverConfig, DOMAIN_LENGTH,
};
use crate::surface::{marching_cubes, mesh_curvatures, CurvatureSamples, TriMesh};

/// Environment variable overriding the default worker count.
pub const THREADS_ENV: &str = "CURVDESIGN_THREADS";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THETA_FILE: &str = "theta.csv";
pub const CHI_FILE: &str = "chi.bin";

const MANIFEST_FORMAT: &str = "curvdesign-dataset/1";
const FLUSH_EVERY: usize = 10;

/// `CURVDESIGN_THREADS` if set to a positive integer, else the number of
/// available cores.
pub fn default_workers() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Random stream for sample `index`: the master seed with stream `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Noisy initial field around `theta.m0`, evolved to a settled state.
pub fn simulate(
    theta: &DesignParams,
    grid: usize,
    solver: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(PhaseField, Diagnostics)> {
    let u0 = init_field(grid, theta.m0, solver.noise_amp, rng)?;
    evolve(&u0, theta, solver)
}

/// Curvature encoding of the zero level set of a periodic field.
pub fn encode_field(
    u: &PhaseField,
    solver: &SolverConfig,
    spec: &HistogramSpec,
) -> Result<CurvatureEncoding> {
    histogram(&field_samples(u, true, solver)?, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_target: usize,
    pub grid: usize,
    pub bounds: DesignBounds,
    pub solver: SolverConfig,
    pub histogram: HistogramSpec,
    pub seed: u64,
    /// Generation aborts when fewer than `abort_rate` of the last
    /// `abort_window` samples were feasible.
    pub abort_window: usize,
    pub abort_rate: f64,
}

impl DatasetConfig {
    /// 48³ grid, 40 bins, the short quench solver and the default bounds read
    /// per unit cell.
    pub fn desk(n_target: usize, seed: u64) -> Self {
        Self {
            n_target,
            grid: 48,
            bounds: DesignBounds::default().per_unit_cell(DOMAIN_LENGTH),
            solver: SolverConfig::desk(),
            histogram: HistogramSpec::desk(),
            seed,
            abort_window: 200,
            abort_rate: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_target == 0 {
            return Err(Error::InvalidParameter("n_target must be >= 1".into()));
        }
        if self.grid < 8 {
            return Err(Error::InvalidParameter(format!(
                "grid must be >= 8, got {}",
                self.grid
            )));
        }
        if self.abort_window == 0 || !(0.0..=1.0).contains(&self.abort_rate) {
            return Err(Error::InvalidParameter(
                "abort window must be >= 1 and abort rate in [0, 1]".into(),
            ));
        }
        self.bounds.validate()?;
        self.solver.validate()?;
        self.histogram.validate()
    }

    /// Everything except the target count must agree to extend a dataset.
    fn same_recipe(&self, other: &Self) -> bool {
        Self {
            n_target: other.n_target,
            ..self.clone()
        } == *other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleStatus {
    /// Stored as row `row`, whose encoding starts `chi_offset` bytes into the
    /// encoding file.
    Feasible { row: u64, chi_offset: u64 },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    pub theta: DesignParams,
    pub steps: usize,
    pub converged: bool,
    pub final_energy: Option<f64>,
    #[serde(flatten)]
    pub status: SampleStatus,
}

impl SampleRecord {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SampleStatus::Feasible { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: DatasetConfig,
    pub workers: usize,
    /// Feasible pairs stored.
    pub count: u64,
    /// Samples evaluated, i.e. the next sample index.
    pub attempted: u64,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: Self = read_json(&dir.join(MANIFEST_FILE))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::IncompatibleEncoding(format!(
                "unknown dataset format {:?}",
                m.format
            )));
        }
        Ok(m)
    }

    /// Writes through a temporary file so a crash never leaves a torn manifest.
    fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        write_json(&tmp, self)?;
        std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Tally of rejection reasons, most frequent first.
    pub fn rejection_summary(&self) -> Vec<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            if let SampleStatus::Rejected { reason } = &r.status {
                *counts.entry(reason.split(':').next().unwrap_or(reason)).or_default() += 1;
            }
        }
        let mut out: Vec<(String, usize)> =
            counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

struct Outcome {
    record: SampleRecord,
    chi: Option<Vec<f64>>,
}

fn evaluate_sample(cfg: &DatasetConfig, index: u64) -> Outcome {
    let mut rng = sample_rng(cfg.seed, index);
    let theta = sample_design(&mut rng, &cfg.bounds);
    let mut record = SampleRecord {
        index,
        theta,
        steps: 0,
        converged: false,
        final_energy: None,
        status: SampleStatus::Rejected {
            reason: String::new(),
        },
    };
    let reject = |mut record: SampleRecord, reason: String| {
        debug!("sample {index} rejected: {reason}");
        record.status = SampleStatus::Rejected { reason };
        Outcome { record, chi: None }
    };
    let (u, diag) = match simulate(&theta, cfg.grid, &cfg.solver, &mut rng) {
        Ok(r) => r,
        Err(e @ Error::Divergence { .. }) => return reject(record, format!("diverged: {e}")),
        Err(e) => return reject(record, format!("invalid: {e}")),
    };
    record.steps = diag.steps;
    record.converged = diag.converged;
    record.final_energy = Some(diag.final_energy());
    if !diag.converged {
        return reject(record, format!("not converged: {} steps", diag.steps));
    }
    if !diag.feasible {
        return reject(
            record,
            format!("not phase separated: std {:.3}", u.std_dev()),
        );
    }
    match encode_field(&u, &cfg.solver, &cfg.histogram) {
        Ok(enc) => Outcome {
            record,
            chi: Some(enc.values),
        },
        Err(e) => reject(record, format!("no encoding: {e}")),
    }
}

fn write_theta_header(path: &Path) -> Result<()> {
    std::fs::write(path, DesignParams::csv_header() + "\n")?;
    Ok(())
}

/// Keeps the header and the first `count` rows.
fn truncate_theta(path: &Path, count: u64) -> Result<()> {
    let input = BufReader::new(open_artifact(path)?);
    let mut kept = String::new();
    for line in input.lines().take(count as usize + 1) {
        kept.push_str(&line?);
        kept.push('\n');
    }
    if kept.lines().count() != count as usize + 1 {
        return Err(Error::IncompatibleEncoding(format!(
            "{} holds fewer than {count} rows",
            path.display()
        )));
    }
    std::fs::write(path, kept)?;
    Ok(())
}

struct Committer<'a> {
    dir: &'a Path,
    manifest: DatasetManifest,
    theta_rows: String,
    chi_rows: Vec<Vec<f64>>,
    unflushed: usize,
    recent: VecDeque<bool>,
}

impl Committer<'_> {
    fn commit(&mut self, mut outcome: Outcome) {
        let m = &mut self.manifest;
        if let Some(chi) = outcome.chi.take() {
            let row = m.count;
            outcome.record.status = SampleStatus::Feasible {
                row,
                chi_offset: CHI_HEADER_LEN + row * 4 * m.config.histogram.len() as u64,
            };
            self.theta_rows.push_str(&outcome.record.theta.to_csv_row());
            self.theta_rows.push('\n');
            self.chi_rows.push(chi);
            m.count += 1;
        }
        self.recent.push_back(outcome.record.is_feasible());
        if self.recent.len() > m.config.abort_window {
            self.recent.pop_front();
        }
        m.attempted = outcome.record.index + 1;
        m.records.push(outcome.record);
        self.unflushed += 1;
    }

    fn flush(&mut self) -> Result<()> {
        if self.unflushed == 0 {
            return Ok(());
        }
        let mut theta = OpenOptions::new()
            .append(true)
            .open(self.dir.join(THETA_FILE))?;
        theta.write_all(self.theta_rows.as_bytes())?;
        append_encodings(
            &self.dir.join(CHI_FILE),
            &self.manifest.config.histogram,
            &self.chi_rows,
        )?;
        self.manifest.save(self.dir)?;
        self.theta_rows.clear();
        self.chi_rows.clear();
        self.unflushed = 0;
        info!(
            "dataset: {}/{} feasible after {} samples",
            self.manifest.count, self.manifest.config.n_target, self.manifest.attempted
        );
        Ok(())
    }

    fn feasibility_collapsed(&self) -> Option<f64> {
        let cfg = &self.manifest.config;
        if self.recent.len() < cfg.abort_window {
            return None;
        }
        let rate = self.recent.iter().filter(|&&f| f).count() as f64 / self.recent.len() as f64;
        (rate < cfg.abort_rate).then_some(rate)
    }
}

/// Samples designs until `cfg.n_target` feasible pairs are stored in `dir`.
///
/// Sample `i` draws from [`sample_rng`]`(seed, i)`, and results are committed
/// in index order, so the stored dataset does not depend on `workers`. An
/// existing dataset with the same recipe is resumed (or extended to a larger
/// target) from its manifest; files are first rolled back to the manifest.
pub fn generate_dataset(cfg: &DatasetConfig, dir: &Path, workers: usize) -> Result<DatasetManifest> {
    cfg.validate()?;
    if workers == 0 {
        return Err(Error::InvalidParameter("workers must be >= 1".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut manifest = match DatasetManifest::load(dir) {
        Ok(m) if m.config.same_recipe(cfg) => {
            truncate_theta(&dir.join(THETA_FILE), m.count)?;
            truncate_encodings(&dir.join(CHI_FILE), m.count)?;
            info!("resuming dataset at {} feasible / {} samples", m.count, m.attempted);
            m
        }
        Ok(_) => {
            return Err(Error::IncompatibleEncoding(format!(
                "{} holds a dataset with a different recipe",
                dir.display()
            )))
        }
        Err(Error::MissingArtifact(_)) => {
            write_theta_header(&dir.join(THETA_FILE))?;
            write_encodings(&dir.join(CHI_FILE), &cfg.histogram, &[])?;
            DatasetManifest {
                format: MANIFEST_FORMAT.into(),
                config: cfg.clone(),
                workers,
                count: 0,
                attempted: 0,
                records: Vec::new(),
            }
        }
        Err(e) => return Err(e),
    };
    manifest.config.n_target = cfg.n_target;
    manifest.workers = workers;
    if manifest.count >= cfg.n_target as u64 {
        manifest.save(dir)?;
        return Ok(manifest);
    }

    let recent = manifest
        .records
        .iter()
        .rev()
        .take(cfg.abort_window)
        .rev()
        .map(SampleRecord::is_feasible)
        .collect();
    let start = manifest.attempted;
    let mut committer = Committer {
        dir,
        manifest,
        theta_rows: String::new(),
        chi_rows: Vec::new(),
        unflushed: 0,
        recent,
    };
    let next = AtomicU64::new(start);
    let stop = AtomicBool::new(false);
    let result = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Outcome>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if tx.send(evaluate_sample(cfg, i)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = start;
        let outcome = (|| {
            for out in rx.iter() {
                pending.insert(out.record.index, out);
                while let Some(out) = pending.remove(&expected) {
                    expected += 1;
                    committer.commit(out);
                    if committer.manifest.count >= cfg.n_target as u64 {
                        return Ok(());
                    }
                    if let Some(rate) = committer.feasibility_collapsed() {
                        return Err(Error::FeasibilityAbort {
                            rate,
                            window: cfg.abort_window,
                        });
                    }
                    if committer.unflushed >= FLUSH_EVERY {
                        committer.flush()?;
                    }
                }
            }
            Ok(())
        })();
        stop.store(true, Ordering::Relaxed);
        drop(rx);
        outcome
    });
    committer.flush()?;
    if let Err(e) = result {
        if matches!(e, Error::FeasibilityAbort { .. }) {
            warn!(
                "aborting: rejection reasons {:?}",
                committer.manifest.rejection_summary()
            );
        }
        return Err(e);
    }
    Ok(committer.manifest)
}

/// A stored dataset with its files validated against the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub thetas: Vec<DesignParams>,
    pub chis: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let (spec, chis) = read_encodings(&dir.join(CHI_FILE))?;
        manifest.config.histogram.check_same(&spec)?;
        let input = BufReader::new(open_artifact(&dir.join(THETA_FILE))?);
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == DesignParams::csv_header() => {}
            _ => {
                return Err(Error::IncompatibleEncoding(format!(
                    "{} lacks the header {:?}",
                    THETA_FILE,
                    DESIGN_COLUMNS.join(",")
                )))
            }
        }
        let thetas = lines
            .map(|l| DesignParams::from_csv_row(&l?))
            .collect::<Result<Vec<_>>>()?;
        let count = manifest.count as usize;
        if thetas.len() != count || chis.len() != count {
            return Err(Error::IncompatibleEncoding(format!(
                "manifest lists {count} pairs but files hold {} designs and {} encodings",
                thetas.len(),
                chis.len()
            )));
        }
        Ok(Self {
            manifest,
            thetas,
            chis,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn spec(&self) -> &HistogramSpec {
        &self.manifest.config.histogram
    }
}

/// Deterministic shuffle of `0..n` split into (train, test).
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Scaled network inputs and targets; scalers are fitted on the training
/// split only.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub theta_scaler: ThetaScaler,
    pub chi_scaler: ChiScaler,
    pub train: (Matrix, Matrix),
    pub test: (Matrix, Matrix),
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

pub const TEST_FRACTION: f64 = 0.1;

pub fn prepare(data: &Dataset, seed: u64) -> Result<Prepared> {
    if data.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "need at least two pairs, got {}",
            data.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(data.len(), TEST_FRACTION, seed);
    let fit_thetas: Vec<DesignParams> = train_idx.iter().map(|&i| data.thetas[i]).collect();
    let theta_scaler = ThetaScaler::fit(&fit_thetas)?;
    let chi_scaler = ChiScaler::fit(train_idx.iter().map(|&i| data.chis[i].as_slice()))?;
    prepare_with(data, theta_scaler, chi_scaler, train_idx, test_idx)
}

fn prepare_with(
    data: &Dataset,
    theta_scaler: ThetaScaler,
    chi_scaler: ChiScaler,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
) -> Result<Prepared> {
    let build = |idx: &[usize]| -> Result<(Matrix, Matrix)> {
        let x = idx
            .iter()
            .map(|&i| theta_scaler.scale(&data.thetas[i]).map(|v| v.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let y = idx
            .iter()
            .map(|&i| chi_scaler.scale(&data.chis[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok((Matrix::from_rows(&x)?, Matrix::from_rows(&y)?))
    };
    let train = build(&train_idx)?;
    let test = build(&test_idx)?;
    Ok(Prepared {
        theta_scaler,
        chi_scaler,
        train,
        test,
        train_idx,
        test_idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn forward_hidden(self) -> &'static [usize] {
        match self {
            Preset::Paper => &PAPER_FORWARD_HIDDEN,
            Preset::Desk => &DESK_FORWARD_HIDDEN,
        }
    }

    pub fn inverse_hidden(self) -> &'static [usize] {
        match self {
            Preset::Paper => &PAPER_INVERSE_HIDDEN,
            Preset::Desk => &DESK_INVERSE_HIDDEN,
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Scaler files written next to a forward checkpoint.
fn scaler_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    (
        with_suffix(checkpoint, ".theta_scaler.json"),
        with_suffix(checkpoint, ".chi_scaler.json"),
    )
}

/// Loss curve written next to a checkpoint.
pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".loss.csv")
}

/// How a sidecar of `checkpoint` refers to `file`: by name when both share a
/// directory, otherwise by absolute path.
fn reference(checkpoint: &Path, file: &Path) -> Result<PathBuf> {
    let file = std::fs::canonicalize(file)?;
    let dir = match checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => std::fs::canonicalize(d)?,
        None => std::env::current_dir()?,
    };
    Ok(match (file.parent(), file.file_name()) {
        (Some(parent), Some(name)) if parent == dir => PathBuf::from(name),
        _ => file,
    })
}

/// Sidecar paths are relative to the checkpoint's directory.
fn resolve_near(checkpoint: &Path, stored: &Path) -> PathBuf {
    match checkpoint.parent() {
        Some(dir) if stored.is_relative() => dir.join(stored),
        _ => stored.to_path_buf(),
    }
}

fn resolve(checkpoint: &Path, stored: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    stored
        .clone()
        .map(|p| resolve_near(checkpoint, &p))
        .ok_or_else(|| {
            Error::IncompatibleEncoding(format!(
                "{} does not reference a {what}",
                sidecar_path(checkpoint).display()
            ))
        })
}

/// Trains the forward surrogate on a stored dataset and writes the
/// checkpoint, its sidecar, the fitted scalers and the loss curve.
pub fn train_forward_model(
    data_dir: &Path,
    preset: Preset,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<TrainReport> {
    let data = Dataset::load(data_dir)?;
    let prep = prepare(&data, cfg.seed)?;
    let dims = forward_dims(preset.forward_hidden(), data.spec().len());
    let (model, report) = train_forward(&dims, &prep.train.0, &prep.train.1, Some((&prep.test.0, &prep.test.1)), cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(out)?;
    let (theta_path, chi_path) = scaler_paths(out);
    prep.theta_scaler.save(&theta_path)?;
    prep.chi_scaler.save(&chi_path)?;
    CheckpointMeta {
        role: "forward".into(),
        dims,
        train_config: cfg.clone(),
        histogram: *data.spec(),
        theta_scaler: theta_path.file_name().map(PathBuf::from),
        chi_scaler: chi_path.file_name().map(PathBuf::from),
    }
    .save(out)?;
    report.write_csv(&loss_csv_path(out))?;
    Ok(report)
}

/// Trained surrogate pair with the scalers and encoding they were fitted on.
#[derive(Debug, Clone)]
pub struct Models {
    pub f: Mlp,
    pub g: Option<Mlp>,
    pub spec: HistogramSpec,
    pub theta_scaler: ThetaScaler,
    pub chi_scaler: ChiScaler,
    pub forward_meta: CheckpointMeta,
}

impl Models {
    pub fn load_forward(fnn: &Path) -> Result<Self> {
        let meta = CheckpointMeta::load(fnn)?;
        if meta.role != "forward" {
            return Err(Error::IncompatibleEncoding(format!(
                "{} is a {} checkpoint, expected forward",
                fnn.display(),
                meta.role
            )));
        }
        let f = Mlp::load(fnn)?;
        if f.dims() != meta.dims.as_slice() || f.output_dim() != meta.histogram.len() || f.input_dim() != 7 {
            return Err(Error::IncompatibleEncoding(format!(
                "{} does not match its sidecar",
                fnn.display()
            )));
        }
        let theta_scaler = ThetaScaler::load(&resolve(fnn, &meta.theta_scaler, "design scaler")?)?;
        let chi_scaler = ChiScaler::load(&resolve(fnn, &meta.chi_scaler, "encoding scaler")?)?;
        Ok(Self {
            f,
            g: None,
            spec: meta.histogram,
            theta_scaler,
            chi_scaler,
            forward_meta: meta,
        })
    }

    pub fn load(fnn: &Path, inn: &Path) -> Result<Self> {
        let mut models = Self::load_forward(fnn)?;
        let meta = CheckpointMeta::load(inn)?;
        let g = Mlp::load(inn)?;
        if meta.role != "inverse"
            || meta.histogram != models.spec
            || g.dims() != meta.dims.as_slice()
            || g.input_dim() != models.spec.len()
            || g.output_dim() != models.f.input_dim()
        {
            return Err(Error::IncompatibleEncoding(format!(
                "{} is not an inverse model for {}",
                inn.display(),
                fnn.display()
            )));
        }
        models.g = Some(g);
        Ok(models)
    }

    fn inverse(&self) -> Result<&Mlp> {
        self.g
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no inverse model loaded".into()))
    }
}

/// Trains the inverse network through the frozen forward surrogate, on the
/// same split and scalers the surrogate was trained with.
pub fn train_inverse_model(
    data_dir: &Path,
    fnn: &Path,
    preset: Preset,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<TrainReport> {
    let models = Models::load_forward(fnn)?;
    let data = Dataset::load(data_dir)?;
    models.spec.check_same(data.spec())?;
    let (train_idx, test_idx) =
        split_indices(data.len(), TEST_FRACTION, models.forward_meta.train_config.seed);
    let prep = prepare_with(
        &data,
        models.theta_scaler.clone(),
        models.chi_scaler.clone(),
        train_idx,
        test_idx,
    )?;
    let dims = inverse_dims(preset.inverse_hidden(), models.spec.len());
    let (g, report) = train_inverse(&dims, &prep.train.1, Some(&prep.test.1), &models.f, cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    g.save(out)?;
    let (theta_path, chi_path) = scaler_paths(fnn);
    CheckpointMeta {
        role: "inverse".into(),
        dims,
        train_config: cfg.clone(),
        histogram: models.spec,
        theta_scaler: Some(reference(out, &theta_path)?),
        chi_scaler: Some(reference(out, &chi_path)?),
    }
    .save(out)?;
    report.write_csv(&loss_csv_path(out))?;
    Ok(report)
}

/// Where the target topology of an inverse-design query comes from.
#[derive(Debug, Clone)]
pub enum TargetSource {
    /// First row of an encoding file.
    Encoding(PathBuf),
    /// Binary curvature samples on the standard box.
    Samples(PathBuf),
    /// OBJ surface in a box of side `extent` (the standard box if `None`),
    /// oriented with normals pointing away from the solid.
    Mesh { path: PathBuf, extent: Option<f64> },
    /// Periodic field snapshot.
    Field(PathBuf),
    Benchmark(Box<Target>),
}

impl TargetSource {
    /// Reads the target as an encoding on `spec`.
    pub fn encoding(&self, spec: &HistogramSpec, solver: &SolverConfig) -> Result<CurvatureEncoding> {
        match self {
            TargetSource::Encoding(path) => {
                let (file_spec, rows) = read_encodings(path)?;
                spec.check_same(&file_spec)?;
                let row = rows.into_iter().next().ok_or_else(|| {
                    Error::IncompatibleEncoding(format!("{} holds no encodings", path.display()))
                })?;
                CurvatureEncoding::new(row, file_spec)
            }
            TargetSource::Samples(path) => histogram(&CurvatureSamples::read_binary(path)?, spec),
            TargetSource::Mesh { path, extent } => {
                let samples = mesh_curvatures(&TriMesh::read_obj(path)?)?;
                let samples = match extent {
                    Some(e) => crate::benchmarks::rescale_to_domain(&samples, *e, DOMAIN_LENGTH)?,
                    None => samples,
                };
                histogram(&samples, spec)
            }
            TargetSource::Field(path) => {
                let (u, _) = read_field(path)?;
                encode_field(&u, solver, spec)
            }
            TargetSource::Benchmark(target) => histogram(&target.samples(solver)?, spec),
        }
    }
}

/// Settings for re-simulating a predicted design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub grid: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            grid: 48,
            solver: SolverConfig::desk(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub field: PhaseField,
    pub diagnostics: Diagnostics,
    pub encoding: Option<CurvatureEncoding>,
    /// Total variation between the regenerated and target encodings.
    pub tv_to_target: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseDesign {
    pub theta: DesignParams,
    pub target: CurvatureEncoding,
    /// Surrogate encoding of the predicted design.
    pub reconstructed: CurvatureEncoding,
    pub tv_reconstruction: f64,
    pub verification: Option<Verification>,
}

/// Re-simulates `theta` and compares its encoding with `target`.
pub fn verify_design(
    theta: &DesignParams,
    target: &CurvatureEncoding,
    cfg: &VerifyConfig,
) -> Result<Verification> {
    let mut rng = sample_rng(cfg.seed, 0);
    let (field, diagnostics) = simulate(theta, cfg.grid, &cfg.solver, &mut rng)?;
    let (encoding, failure) = match encode_field(&field, &cfg.solver, &target.spec) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tv_to_target = encoding
        .as_ref()
        .map(|e| e.total_variation(target))
        .transpose()?;
    Ok(Verification {
        field,
        diagnostics,
        encoding,
        tv_to_target,
        failure,
    })
}

pub fn run_inverse_design(
    source: &TargetSource,
    models: &Models,
    solver: &SolverConfig,
    verify: Option<&VerifyConfig>,
) -> Result<InverseDesign> {
    let target = source.encoding(&models.spec, solver)?;
    let inv = invert(
        &target,
        &models.spec,
        &models.theta_scaler,
        &models.chi_scaler,
        models.inverse()?,
        &models.f,
    )?;
    let reconstructed = CurvatureEncoding::new(inv.reconstructed, models.spec)?;
    let tv_reconstruction = reconstructed.total_variation(&target)?;
    let verification = verify
        .map(|cfg| verify_design(&inv.theta, &target, cfg))
        .transpose()?;
    Ok(InverseDesign {
        theta: inv.theta,
        target,
        reconstructed,
        tv_reconstruction,
        verification,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseDesignSummary {
    pub theta: DesignParams,
    pub histogram: HistogramSpec,
    pub tv_reconstruction: f64,
    pub verify: Option<VerifyConfig>,
    pub verify_steps: Option<usize>,
    pub verify_converged: Option<bool>,
    pub verify_feasible: Option<bool>,
    pub tv_verification: Option<f64>,
    pub verify_failure: Option<String>,
}

/// Writes `theta.json`, `summary.json`, `target.chi`, `reconstructed.chi`,
/// `comparison.csv` and, when verified, `verification.chi`, `field.raw` and
/// `energy.csv`.
pub fn write_inverse_design(
    result: &InverseDesign,
    verify: Option<&VerifyConfig>,
    solver: &SolverConfig,
    dir: &Path,
) -> Result<InverseDesignSummary> {
    std::fs::create_dir_all(dir)?;
    let spec = result.target.spec;
    write_json(&dir.join("theta.json"), &result.theta)?;
    write_encodings(&dir.join("target.chi"), &spec, std::slice::from_ref(&result.target.values))?;
    write_encodings(
        &dir.join("reconstructed.chi"),
        &spec,
        std::slice::from_ref(&result.reconstructed.values),
    )?;
    let ver = result.verification.as_ref();
    let mut csv = String::from("i,j,kappa1,kappa2,target,reconstructed,verification\n");
    for idx in 0..spec.len() {
        let (i, j) = spec.bin_pair(idx);
        let v = ver
            .and_then(|v| v.encoding.as_ref())
            .map_or(String::new(), |e| format!("{:e}", e.values[idx]));
        csv.push_str(&format!(
            "{i},{j},{:e},{:e},{:e},{:e},{v}\n",
            spec.bin_center(i),
            spec.bin_center(j),
            result.target.values[idx],
            result.reconstructed.values[idx],
        ));
    }
    std::fs::write(dir.join("comparison.csv"), csv)?;
    if let Some(v) = ver {
        if let Some(e) = &v.encoding {
            write_encodings(&dir.join("verification.chi"), &spec, std::slice::from_ref(&e.values))?;
        }
        let cfg = verify.cloned().unwrap_or_default();
        let header = FieldHeader {
            seed: Some(cfg.seed),
            theta: Some(result.theta),
            ..FieldHeader::for_field(&v.field, solver)
        };
        write_field(&dir.join("field.raw"), &v.field, &header)?;
        std::fs::write(dir.join("energy.csv"), v.diagnostics.to_csv())?;
    }
    let summary = InverseDesignSummary {
        theta: result.theta,
        histogram: spec,
        tv_reconstruction: result.tv_reconstruction,
        verify: verify.cloned(),
        verify_steps: ver.map(|v| v.diagnostics.steps),
        verify_converged: ver.map(|v| v.diagnostics.converged),
        verify_feasible: ver.map(|v| v.diagnostics.feasible),
        tv_verification: ver.and_then(|v| v.tv_to_target),
        verify_failure: ver.and_then(|v| v.failure.clone()),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub theta: DesignParams,
    pub grid: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub histogram: HistogramSpec,
    pub steps: usize,
    pub rejected_steps: usize,
    pub converged: bool,
    pub feasible: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub surface_area: Option<f64>,
    pub mode: Option<(f64, f64)>,
}

/// Evolves one design and writes the field snapshot, energy trace, surface
/// mesh, curvature samples and encoding to `dir`. Geometry files are skipped
/// when the field has no interface.
pub fn run_simulation(
    theta: &DesignParams,
    grid: usize,
    seed: u64,
    solver: &SolverConfig,
    spec: &HistogramSpec,
    dir: &Path,
) -> Result<SimulationSummary> {
    std::fs::create_dir_all(dir)?;
    let mut rng = sample_rng(seed, 0);
    let (u, diag) = simulate(theta, grid, solver, &mut rng)?;
    let header = FieldHeader {
        seed: Some(seed),
        theta: Some(*theta),
        m0: theta.m0,
        ..FieldHeader::for_field(&u, solver)
    };
    write_field(&dir.join("field.raw"), &u, &header)?;
    std::fs::write(dir.join("energy.csv"), diag.to_csv())?;
    let geometry = write_geometry(&u, true, solver, spec, dir);
    let (surface_area, mode) = match geometry {
        Ok((area, enc)) => (Some(area), Some(enc.mode())),
        Err(Error::EmptySurface) => (None, None),
        Err(e) => return Err(e),
    };
    let summary = SimulationSummary {
        theta: *theta,
        grid,
        seed,
        solver: solver.clone(),
        histogram: *spec,
        steps: diag.steps,
        rejected_steps: diag.rejected_steps,
        converged: diag.converged,
        feasible: diag.feasible,
        initial_energy: diag.initial_energy(),
        final_energy: diag.final_energy(),
        surface_area,
        mode,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes `surface.obj`, `samples.bin` and `chi.bin` for the zero level set.
pub fn write_geometry(
    u: &PhaseField,
    periodic: bool,
    solver: &SolverConfig,
    spec: &HistogramSpec,
    dir: &Path,
) -> Result<(f64, CurvatureEncoding)> {
    let mesh = if periodic {
        marching_cubes(u, 0.0)?
    } else {
        crate::surface::marching_cubes_open(u, 0.0)?
    };
    mesh.write_obj(&dir.join("surface.obj"))?;
    let samples = field_samples(u, periodic, solver)?;
    samples.write_binary(&dir.join("samples.bin"))?;
    let enc = histogram(&samples, spec)?;
    write_encodings(&dir.join("chi.bin"), spec, std::slice::from_ref(&enc.values))?;
    Ok((mesh.total_area(), enc))
}

/// Writes a benchmark target's field, geometry and encoding to `dir`.
pub fn write_benchmark(
    target: &Target,
    solver: &SolverConfig,
    spec: &HistogramSpec,
    dir: &Path,
) -> Result<CurvatureEncoding> {
    std::fs::create_dir_all(dir)?;
    let header = FieldHeader::for_field(&target.field, solver);
    write_field(&dir.join("field.raw"), &target.field, &header)?;
    let (_, enc) = write_geometry(&target.field, target.periodic, solver, spec, dir)?;
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workers_env_override() {
        std::env::set_var(THREADS_ENV, "3");
        assert_eq!(default_workers(), 3);
        std::env::set_var(THREADS_ENV, "zero");
        assert!(default_workers() >= 1);
        std::env::remove_var(THREADS_ENV);
    }

    #[test]
    fn sample_streams_differ() {
        use rand::Rng;
        let a: u64 = sample_rng(5, 0).gen();
        let b: u64 = sample_rng(5, 1).gen();
        let c: u64 = sample_rng(5, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn split_is_a_partition() {
        let (train, test) = split_indices(50, 0.1, 3);
        assert_eq!(test.len(), 5);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 0.1, 3), (train, test));
        assert_eq!(split_indices(2, 0.9, 0).0.len(), 1);
    }

    #[test]
    fn recipe_ignores_target_count() {
        let a = DatasetConfig::desk(10, 1);
        assert!(a.same_recipe(&DatasetConfig::desk(20, 1)));
        assert!(!a.same_recipe(&DatasetConfig::desk(10, 2)));
    }

    #[test]
    fn config_validation() {
        assert!(DatasetConfig::desk(0, 0).validate().is_err());
        assert!(DatasetConfig { grid: 4, ..DatasetConfig::desk(1, 0) }.validate().is_err());
        assert!(DatasetConfig::desk(1, 0).validate().is_ok());
    }

    #[test]
    fn theta_truncation_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(THETA_FILE);
        write_theta_header(&path).unwrap();
        let row = DesignParams::new(0.5, 0.0, 0.5, 0.0, 0.0, 0.0, -0.5).to_csv_row();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{row}\n{row}\n{row}").unwrap();
        truncate_theta(&path, 1).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert!(truncate_theta(&path, 5).is_err());
    }
}

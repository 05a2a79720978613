//! Dense ReLU networks with a ReLU6/6 output layer, Adam, and the forward
//! surrogate / inverse designer training loops.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::DesignParams;
use crate::encoding::{ChiScaler, CurvatureEncoding, HistogramSpec, ThetaScaler};
use crate::error::{Error, Result};

const MLP_MAGIC: &[u8; 4] = b"MLP1";
const OUTPUT_BIAS_INIT: f64 = 3.0;

pub const PAPER_FORWARD_HIDDEN: [usize; 9] = [50, 150, 300, 600, 1200, 2500, 5000, 10000, 20000];
pub const PAPER_INVERSE_HIDDEN: [usize; 4] = [5000, 1000, 200, 40];
pub const DESK_FORWARD_HIDDEN: [usize; 2] = [64, 256];
pub const DESK_INVERSE_HIDDEN: [usize; 2] = [256, 64];

/// `[7, hidden..., k]`.
pub fn forward_dims(hidden: &[usize], k: usize) -> Vec<usize> {
    let mut d = vec![7];
    d.extend_from_slice(hidden);
    d.push(k);
    d
}

/// `[k, hidden..., 7]`.
pub fn inverse_dims(hidden: &[usize], k: usize) -> Vec<usize> {
    let mut d = vec![k];
    d.extend_from_slice(hidden);
    d.push(7);
    d
}

/// Row-major dense matrix, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `c = a·b + beta·c` for `m×k` by `k×n` operands given by their strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs + 1;
    assert!(k == 0 || a.len() >= extent(m, k, rsa, csa));
    assert!(k == 0 || b.len() >= extent(k, n, rsb, csb));
    assert!(c.len() >= extent(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Per-layer parameter arrays; weights are `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations kept for the backward pass.
struct Trace {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "layer dims {dims:?} need at least two non-zero widths"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        })
    }

    /// Weights uniform on `±sqrt(6 / fan_in)`. Hidden biases start at zero and
    /// output biases at 3, the middle of the ReLU6 ramp, so no output unit
    /// starts saturated.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        if let Some(out) = model.biases.last_mut() {
            out.iter_mut().for_each(|b| *b = OUTPUT_BIAS_INIT);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in model.weights.iter_mut().enumerate() {
            let limit = (6.0 / dims[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// FNV-1a over the bit patterns of all parameters.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.weights.iter().chain(&self.biases).flatten() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::from_rows(&[x])?)?.data)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.trace(x)?.output)
    }

    fn trace(&self, x: &Matrix) -> Result<Trace> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.cols,
            });
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = x.clone();
        for l in 0..self.num_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let mut z = Matrix::zeros(a.rows, dout);
            for row in z.data.chunks_exact_mut(dout) {
                row.copy_from_slice(&self.biases[l]);
            }
            gemm(
                a.rows,
                din,
                dout,
                &a.data,
                (din, 1),
                &self.weights[l],
                (1, din),
                1.0,
                &mut z.data,
                (dout, 1),
            );
            let mut next = z.clone();
            if l == last {
                next.data
                    .iter_mut()
                    .for_each(|v| *v = v.clamp(0.0, 6.0) / 6.0);
            } else {
                next.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok(Trace {
            inputs,
            pre,
            output: a,
        })
    }

    /// Reverse pass from `d_out = ∂L/∂output`; returns parameter gradients and
    /// `∂L/∂input`.
    fn backprop(&self, trace: &Trace, d_out: Matrix) -> (Gradients, Matrix) {
        let last = self.num_layers() - 1;
        let mut grads = Gradients::zeros_like(self);
        let mut d = d_out;
        for l in (0..self.num_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let z = &trace.pre[l];
            for (g, &zv) in d.data.iter_mut().zip(&z.data) {
                let active = if l == last {
                    zv > 0.0 && zv < 6.0
                } else {
                    zv > 0.0
                };
                *g = if active {
                    if l == last {
                        *g / 6.0
                    } else {
                        *g
                    }
                } else {
                    0.0
                };
            }
            let a = &trace.inputs[l];
            gemm(
                dout,
                d.rows,
                din,
                &d.data,
                (1, dout),
                &a.data,
                (din, 1),
                0.0,
                &mut grads.weights[l],
                (din, 1),
            );
            for row in d.data.chunks_exact(dout) {
                for (b, v) in grads.biases[l].iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut da = Matrix::zeros(d.rows, din);
            gemm(
                d.rows,
                dout,
                din,
                &d.data,
                (dout, 1),
                &self.weights[l],
                (din, 1),
                0.0,
                &mut da.data,
                (din, 1),
            );
            d = da;
        }
        (grads, d)
    }

    /// Loss `(1/n) Σ ‖f(x) − y‖²` and its exact parameter gradient.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.loss_and_gradients_full(x, y)?;
        Ok((loss, grads))
    }

    fn loss_and_gradients_full(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Gradients, Matrix)> {
        if x.rows == 0 {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let trace = self.trace(x)?;
        check_targets(&trace.output, y)?;
        let (loss, d_out) = squared_error(&trace.output, y);
        let (g, dx) = self.backprop(&trace, d_out);
        Ok((loss, g, dx))
    }

    /// `(1/n) Σ ‖f(x) − y‖²` evaluated in chunks.
    pub fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        if x.rows != y.rows {
            return Err(Error::Shape {
                expected: x.rows,
                got: y.rows,
            });
        }
        let mut total = 0.0;
        for start in (0..x.rows).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(x.rows)).collect();
            let out = self.forward_batch(&x.select(&idx))?;
            let target = y.select(&idx);
            check_targets(&out, &target)?;
            total += sum_squared(&out, &target);
        }
        Ok(total / x.rows.max(1) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MLP_MAGIC)?;
        out.write_all(&(self.num_layers() as u32).to_le_bytes())?;
        for &d in &self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => e.into(),
        })?;
        let mut bytes = Vec::new();
        BufReader::new(file).read_to_end(&mut bytes)?;
        let bad = |what: &str| Error::IncompatibleEncoding(format!("{}: {what}", path.display()));
        if bytes.len() < 8 || &bytes[..4] != MLP_MAGIC {
            return Err(bad("not an MLP1 checkpoint"));
        }
        let word = |o: usize| -> Option<usize> {
            bytes
                .get(o..o + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        };
        let layers = word(4).ok_or_else(|| bad("truncated header"))?;
        let dims: Vec<usize> = (0..=layers)
            .map(|i| word(8 + 4 * i).ok_or_else(|| bad("truncated header")))
            .collect::<Result<_>>()?;
        let mut model = Self::zeros(&dims).map_err(|_| bad("invalid layer dims"))?;
        let mut offset = 8 + 4 * (layers + 1);
        if bytes.len() != offset + 8 * model.param_count() {
            return Err(bad("parameter block has the wrong length"));
        }
        let mut next = || {
            let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"));
            offset += 8;
            v
        };
        for l in 0..layers {
            for v in model.weights[l].iter_mut() {
                *v = next();
            }
            for v in model.biases[l].iter_mut() {
                *v = next();
            }
        }
        Ok(model)
    }
}

const EVAL_CHUNK: usize = 256;

fn check_targets(out: &Matrix, y: &Matrix) -> Result<()> {
    if out.cols != y.cols || out.rows != y.rows {
        return Err(Error::Shape {
            expected: out.rows * out.cols,
            got: y.rows * y.cols,
        });
    }
    Ok(())
}

fn sum_squared(out: &Matrix, y: &Matrix) -> f64 {
    out.data
        .iter()
        .zip(&y.data)
        .map(|(o, t)| (o - t) * (o - t))
        .sum()
}

fn squared_error(out: &Matrix, y: &Matrix) -> (f64, Matrix) {
    let n = out.rows as f64;
    let loss = sum_squared(out, y) / n;
    let mut d = Matrix::zeros(out.rows, out.cols);
    for ((g, o), t) in d.data.iter_mut().zip(&out.data).zip(&y.data) {
        *g = 2.0 * (o - t) / n;
    }
    (loss, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Reshuffle the training set every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 220,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn forward_default() -> Self {
        Self::default()
    }

    pub fn inverse_default() -> Self {
        Self {
            epochs: 600,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Losses per epoch; index 0 holds the losses of the untrained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<Option<f64>>,
    pub wall_time_s: f64,
    pub checksum: u64,
}

impl PartialEq for TrainReport {
    /// Wall time is not part of a run's identity.
    fn eq(&self, other: &Self) -> bool {
        self.train_loss == other.train_loss
            && self.test_loss == other.test_loss
            && self.checksum == other.checksum
    }
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        *self.train_loss.last().expect("report holds epoch 0")
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        *self.test_loss.last().expect("report holds epoch 0")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for (epoch, (tr, te)) in self.train_loss.iter().zip(&self.test_loss).enumerate() {
            let te = te.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!("{epoch},{tr:e},{te}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let g = grads.weights.iter().chain(&grads.biases);
        let m = self.m.weights.iter_mut().chain(self.m.biases.iter_mut());
        let v = self.v.weights.iter_mut().chain(self.v.biases.iter_mut());
        for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Mini-batch Adam over `n` samples; `batch_grad` returns the gradient of the
/// mean batch loss, `eval` the (train, test) losses recorded after each epoch.
fn run_training(
    model: &mut Mlp,
    n: usize,
    cfg: &TrainConfig,
    mut batch_grad: impl FnMut(&Mlp, &[usize]) -> Result<Gradients>,
    eval: impl Fn(&Mlp) -> Result<(f64, Option<f64>)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model);
    let (tr, te) = eval(model)?;
    let mut report = TrainReport {
        train_loss: vec![tr],
        test_loss: vec![te],
        wall_time_s: 0.0,
        checksum: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch_grad(model, batch)?;
            adam.step(model, &grads, cfg);
        }
        let (tr, te) = eval(model)?;
        if !tr.is_finite() {
            return Err(Error::Divergence { step: epoch });
        }
        log::debug!("epoch {epoch}: train {tr:.6e} test {te:?}");
        report.train_loss.push(tr);
        report.test_loss.push(te);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    report.checksum = model.checksum();
    Ok(report)
}

/// Plain supervised regression `x → y` with the loss `(1/n) Σ ‖f(x) − y‖²`.
pub fn train_supervised(
    dims: &[usize],
    x: &Matrix,
    y: &Matrix,
    test: Option<(&Matrix, &Matrix)>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    let mut model = Mlp::new(dims, cfg.seed)?;
    if x.rows != y.rows {
        return Err(Error::Shape {
            expected: x.rows,
            got: y.rows,
        });
    }
    if x.cols != model.input_dim() || y.cols != model.output_dim() {
        return Err(Error::Shape {
            expected: model.input_dim() + model.output_dim(),
            got: x.cols + y.cols,
        });
    }
    let report = run_training(
        &mut model,
        x.rows,
        cfg,
        |m, idx| Ok(m.loss_and_gradient(&x.select(idx), &y.select(idx))?.1),
        |m| {
            let test = test.map(|(tx, ty)| m.loss(tx, ty)).transpose()?;
            Ok((m.loss(x, y)?, test))
        },
    )?;
    Ok((model, report))
}

/// Forward surrogate `Θˢ → χˢ`.
pub fn train_forward(
    dims: &[usize],
    theta: &Matrix,
    chi: &Matrix,
    test: Option<(&Matrix, &Matrix)>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    if dims.first() != Some(&7) {
        return Err(Error::Shape {
            expected: 7,
            got: dims.first().copied().unwrap_or(0),
        });
    }
    train_supervised(dims, theta, chi, test, cfg)
}

/// `(1/n) Σ ‖f(g(χ)) − χ‖²`.
pub fn reconstruction_loss(g: &Mlp, f: &Mlp, chi: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..chi.rows).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(chi.rows)).collect();
        let batch = chi.select(&idx);
        let out = f.forward_batch(&g.forward_batch(&batch)?)?;
        total += sum_squared(&out, &batch);
    }
    Ok(total / chi.rows.max(1) as f64)
}

fn composed_gradient(g: &Mlp, f: &Mlp, chi: &Matrix) -> Result<(f64, Gradients)> {
    let gt = g.trace(chi)?;
    let ft = f.trace(&gt.output)?;
    let (loss, d_out) = squared_error(&ft.output, chi);
    let (_, d_theta) = f.backprop(&ft, d_out);
    let (grads, _) = g.backprop(&gt, d_theta);
    Ok((loss, grads))
}

/// Inverse designer `χˢ → Θˢ` trained through the frozen surrogate `f`.
pub fn train_inverse(
    dims: &[usize],
    chi: &Matrix,
    test: Option<&Matrix>,
    f: &Mlp,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    let mut g = Mlp::new(dims, cfg.seed)?;
    let k = f.output_dim();
    if g.input_dim() != k || g.output_dim() != f.input_dim() || chi.cols != k {
        return Err(Error::Shape {
            expected: k,
            got: g.input_dim(),
        });
    }
    let report = run_training(
        &mut g,
        chi.rows,
        cfg,
        |m, idx| Ok(composed_gradient(m, f, &chi.select(idx))?.1),
        |m| {
            let test = test.map(|t| reconstruction_loss(m, f, t)).transpose()?;
            Ok((reconstruction_loss(m, f, chi)?, test))
        },
    )?;
    Ok((g, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub theta: DesignParams,
    /// Surrogate prediction of the encoding of `theta`, unscaled.
    pub reconstructed: Vec<f64>,
}

/// `Θ = unscale(g(h(χ)))` and `χ* = h⁻¹(f(g(h(χ))))`.
pub fn invert(
    target: &CurvatureEncoding,
    spec: &HistogramSpec,
    theta_scaler: &ThetaScaler,
    chi_scaler: &ChiScaler,
    g: &Mlp,
    f: &Mlp,
) -> Result<Inversion> {
    if &target.spec != spec || g.input_dim() != spec.len() || f.output_dim() != spec.len() {
        return Err(Error::IncompatibleEncoding(format!(
            "target encoding {:?} does not match the trained spec {:?} (k = {})",
            target.spec,
            spec,
            g.input_dim()
        )));
    }
    let scaled = chi_scaler.scale(&target.values)?;
    let theta_s = g.forward(&scaled)?;
    let chi_s = f.forward(&theta_s)?;
    Ok(Inversion {
        theta: theta_scaler.unscale(&theta_s)?,
        reconstructed: chi_scaler.unscale(&chi_s),
    })
}

/// JSON written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `"forward"` or `"inverse"`.
    pub role: String,
    pub dims: Vec<usize>,
    pub train_config: TrainConfig,
    pub histogram: HistogramSpec,
    pub theta_scaler: Option<PathBuf>,
    pub chi_scaler: Option<PathBuf>,
}

/// `<checkpoint>.json`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl CheckpointMeta {
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        std::fs::write(
            sidecar_path(checkpoint),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = sidecar_path(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.clone()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

//! Area-weighted curvature histograms and the dataset scalers.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design_space::DesignParams;
use crate::error::{Error, Result};
use crate::surface::CurvatureSamples;

const CHI_MAGIC: &[u8; 4] = b"CHI1";
pub const CHI_HEADER_LEN: u64 = 36;
const CHI_COUNT_OFFSET: u64 = 28;

/// Uniform `bins × bins` grid over `[kappa_min, kappa_max]²`. Samples outside
/// the range land in the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins: 200,
            kappa_min: -0.6,
            kappa_max: 0.6,
        }
    }
}

impl HistogramSpec {
    pub fn with_bins(bins: usize) -> Self {
        Self {
            bins,
            ..Self::default()
        }
    }

    /// The 40-bin grid used by the desk-scale preset.
    pub fn desk() -> Self {
        Self::with_bins(40)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidParameter(format!("bins = {} < 2", self.bins)));
        }
        if !(self.kappa_min < self.kappa_max)
            || !self.kappa_min.is_finite()
            || !self.kappa_max.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "curvature range [{}, {}] is empty",
                self.kappa_min, self.kappa_max
            )));
        }
        Ok(())
    }

    /// Length of the serialized lower triangle, `B(B+1)/2`.
    pub fn len(&self) -> usize {
        self.bins * (self.bins + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.bins == 0
    }

    pub fn bin_width(&self) -> f64 {
        (self.kappa_max - self.kappa_min) / self.bins as f64
    }

    pub fn bin_of(&self, kappa: f64) -> usize {
        let x = ((kappa - self.kappa_min) / self.bin_width()).floor();
        if x.is_nan() || x < 0.0 {
            0
        } else {
            (x as usize).min(self.bins - 1)
        }
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.kappa_min + (bin as f64 + 0.5) * self.bin_width()
    }

    /// Serialized position of bin `(i, j)` with `j ≤ i`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i < self.bins);
        i * (i + 1) / 2 + j
    }

    /// Inverse of [`HistogramSpec::index`].
    pub fn bin_pair(&self, index: usize) -> (usize, usize) {
        let mut i = (((8 * index + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
        while (i + 1) * (i + 2) / 2 <= index {
            i += 1;
        }
        while i * (i + 1) / 2 > index {
            i -= 1;
        }
        (i, index - i * (i + 1) / 2)
    }

    pub fn check_same(&self, other: &HistogramSpec) -> Result<()> {
        if self != other {
            return Err(Error::IncompatibleEncoding(format!(
                "histogram spec {other:?} does not match {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEncoding {
    pub values: Vec<f64>,
    pub spec: HistogramSpec,
}

impl CurvatureEncoding {
    pub fn new(values: Vec<f64>, spec: HistogramSpec) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::Shape {
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, spec })
    }

    /// Full `B × B` matrix indexed `[k1 bin][k2 bin]`, zero above the diagonal.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let b = self.spec.bins;
        let mut m = vec![vec![0.0; b]; b];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate().take(i + 1) {
                *slot = self.values[self.spec.index(i, j)];
            }
        }
        m
    }

    pub fn from_matrix(matrix: &[Vec<f64>], spec: HistogramSpec) -> Result<Self> {
        let b = spec.bins;
        if matrix.len() != b || matrix.iter().any(|r| r.len() != b) {
            return Err(Error::Shape {
                expected: b * b,
                got: matrix.iter().map(Vec::len).sum(),
            });
        }
        let mut values = Vec::with_capacity(spec.len());
        for (i, row) in matrix.iter().enumerate() {
            values.extend_from_slice(&row[..=i]);
        }
        Self::new(values, spec)
    }

    /// Bin centers `(k1, k2)` of the most probable bin; the first one in
    /// serialization order wins ties.
    pub fn mode(&self) -> (f64, f64) {
        let mut best = 0;
        for (idx, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = idx;
            }
        }
        let (i, j) = self.spec.bin_pair(best);
        (self.spec.bin_center(i), self.spec.bin_center(j))
    }

    /// Bin indices `(i, j)` of [`CurvatureEncoding::mode`].
    pub fn mode_bin(&self) -> (usize, usize) {
        let (k1, k2) = self.mode();
        (self.spec.bin_of(k1), self.spec.bin_of(k2))
    }

    pub fn total_variation(&self, other: &CurvatureEncoding) -> Result<f64> {
        self.spec.check_same(&other.spec)?;
        Ok(0.5
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

/// Area-weighted probability of each `(k1, k2)` bin.
///
/// Contributions are summed per bin in sorted order, so the result does not
/// depend on the order of the samples.
pub fn histogram(samples: &CurvatureSamples, spec: &HistogramSpec) -> Result<CurvatureEncoding> {
    spec.validate()?;
    let mut contributions: Vec<(usize, f64)> = samples
        .samples
        .iter()
        .map(|s| {
            let (i, j) = (spec.bin_of(s.k1), spec.bin_of(s.k2));
            let (i, j) = if j > i { (j, i) } else { (i, j) };
            (spec.index(i, j), s.area)
        })
        .collect();
    contributions.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut values = vec![0.0; spec.len()];
    for (idx, area) in contributions {
        values[idx] += area;
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptyInput("curvature samples have no area".into()));
    }
    for v in &mut values {
        *v /= total;
    }
    CurvatureEncoding::new(values, *spec)
}

/// Componentwise min-max scaling of design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaScaler {
    pub min: [f64; 7],
    pub max: [f64; 7],
}

impl ThetaScaler {
    pub fn fit(data: &[DesignParams]) -> Result<Self> {
        let first = data
            .first()
            .ok_or_else(|| Error::EmptyInput("no design parameters to fit".into()))?
            .to_array();
        let (mut min, mut max) = (first, first);
        for theta in data {
            for (j, v) in theta.to_array().into_iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    fn check(&self) -> Result<()> {
        match (0..7).find(|&j| !(self.max[j] > self.min[j])) {
            Some(component) => Err(Error::DegenerateComponent { component }),
            None => Ok(()),
        }
    }

    pub fn scale(&self, theta: &DesignParams) -> Result<[f64; 7]> {
        self.check()?;
        let v = theta.to_array();
        Ok(std::array::from_fn(|j| {
            (v[j] - self.min[j]) / (self.max[j] - self.min[j])
        }))
    }

    pub fn unscale(&self, scaled: &[f64]) -> Result<DesignParams> {
        if scaled.len() != 7 {
            return Err(Error::Shape {
                expected: 7,
                got: scaled.len(),
            });
        }
        self.check()?;
        Ok(DesignParams::from_array(std::array::from_fn(|j| {
            self.min[j] + scaled[j] * (self.max[j] - self.min[j])
        })))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Componentwise `h(x) = ln(x − a)/b + c`, fixed by `h(0) = 0`, `h(m) = 0.5`,
/// `h(1) = 1` where `m` is the median over components of the per-component
/// dataset maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiScaler {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub m: f64,
    /// Set when `m ≥ 0.5`; scaling is then the identity.
    pub identity: bool,
}

impl ChiScaler {
    pub fn fit<'a>(data: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut maxima: Vec<f64> = Vec::new();
        for row in data {
            if maxima.is_empty() {
                maxima = row.to_vec();
            } else if row.len() != maxima.len() {
                return Err(Error::Shape {
                    expected: maxima.len(),
                    got: row.len(),
                });
            } else {
                for (m, &v) in maxima.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
        }
        if maxima.is_empty() {
            return Err(Error::EmptyInput("no encodings to fit".into()));
        }
        maxima.sort_by(f64::total_cmp);
        let k = maxima.len();
        let m = if k % 2 == 1 {
            maxima[k / 2]
        } else {
            0.5 * (maxima[k / 2 - 1] + maxima[k / 2])
        };
        Self::from_median(m)
    }

    pub fn from_median(m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::DegenerateDataset(format!(
                "median of component maxima is {m}"
            )));
        }
        if m >= 0.5 {
            log::warn!("median of component maxima {m} >= 0.5, using identity scaling");
            return Ok(Self {
                a: 0.0,
                b: 1.0,
                c: 0.0,
                m,
                identity: true,
            });
        }
        let a = -m * m / (1.0 - 2.0 * m);
        let b = (1.0 - a).ln() - (-a).ln();
        let c = -(-a).ln() / b;
        Ok(Self {
            a,
            b,
            c,
            m,
            identity: false,
        })
    }

    pub fn h(&self, x: f64) -> f64 {
        if self.identity {
            x
        } else {
            (x - self.a).ln() / self.b + self.c
        }
    }

    pub fn h_inv(&self, y: f64) -> f64 {
        if self.identity {
            y
        } else {
            ((y - self.c) * self.b).exp() + self.a
        }
    }

    /// Scales an encoding; components may stray outside `[0, 1]` by at most
    /// `1e-12` and are clamped.
    pub fn scale(&self, chi: &[f64]) -> Result<Vec<f64>> {
        chi.iter()
            .enumerate()
            .map(|(j, &x)| {
                if !(-1e-12..=1.0 + 1e-12).contains(&x) {
                    return Err(Error::InvalidInput(format!(
                        "encoding component {j} = {x} outside [0, 1]"
                    )));
                }
                Ok(self.h(x.clamp(0.0, 1.0)))
            })
            .collect()
    }

    pub fn unscale(&self, scaled: &[f64]) -> Vec<f64> {
        scaled.iter().map(|&y| self.h_inv(y)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn encode_header(spec: &HistogramSpec, count: u64) -> Vec<u8> {
    let mut h = Vec::with_capacity(CHI_HEADER_LEN as usize);
    h.extend_from_slice(CHI_MAGIC);
    h.extend_from_slice(&(spec.bins as u32).to_le_bytes());
    h.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    h.extend_from_slice(&spec.kappa_min.to_le_bytes());
    h.extend_from_slice(&spec.kappa_max.to_le_bytes());
    h.extend_from_slice(&count.to_le_bytes());
    h
}

fn read_header(input: &mut impl Read) -> Result<(HistogramSpec, u64)> {
    let mut h = [0u8; CHI_HEADER_LEN as usize];
    input
        .read_exact(&mut h)
        .map_err(|_| Error::IncompatibleEncoding("truncated encoding header".into()))?;
    if &h[..4] != CHI_MAGIC {
        return Err(Error::IncompatibleEncoding("bad encoding magic".into()));
    }
    let word4 = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().expect("4 bytes")) as usize;
    let word8 = |o: usize| <[u8; 8]>::try_from(&h[o..o + 8]).expect("8 bytes");
    let spec = HistogramSpec {
        bins: word4(4),
        kappa_min: f64::from_le_bytes(word8(12)),
        kappa_max: f64::from_le_bytes(word8(20)),
    };
    spec.validate()
        .map_err(|e| Error::IncompatibleEncoding(e.to_string()))?;
    if word4(8) != spec.len() {
        return Err(Error::IncompatibleEncoding(format!(
            "header k = {} but B = {} implies {}",
            word4(8),
            spec.bins,
            spec.len()
        )));
    }
    Ok((spec, u64::from_le_bytes(word8(28))))
}

fn write_rows(out: &mut impl Write, spec: &HistogramSpec, rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        if row.len() != spec.len() {
            return Err(Error::Shape {
                expected: spec.len(),
                got: row.len(),
            });
        }
        for v in quantize_row(row) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Rounds a row to `f32` while keeping its `f64` sum: the rounding residual is
/// pushed into entries in order of decreasing magnitude, each absorbing what
/// its own precision allows. Non-negative entries stay non-negative.
pub fn quantize_row(row: &[f64]) -> Vec<f32> {
    let mut q: Vec<f32> = row.iter().map(|&v| v as f32).collect();
    let target: f64 = row.iter().sum();
    let mut residual = target - q.iter().map(|&v| v as f64).sum::<f64>();
    if !residual.is_finite() {
        return q;
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].abs().total_cmp(&q[a].abs()).then(a.cmp(&b)));
    for i in order {
        if residual.abs() <= 1e-15 * target.abs().max(1.0) || q[i] == 0.0 {
            break;
        }
        let old = q[i] as f64;
        let mut new = (old + residual) as f32;
        if row[i] >= 0.0 && new < 0.0 {
            new = 0.0;
        }
        residual -= new as f64 - old;
        q[i] = new;
    }
    q
}

/// Drops rows past `count`, e.g. to roll a file back to a manifest.
pub fn truncate_encodings(path: &Path, count: u64) -> Result<()> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let (spec, stored) = read_header(&mut file)?;
    if count > stored {
        return Err(Error::IncompatibleEncoding(format!(
            "cannot truncate {} rows to {count}",
            stored
        )));
    }
    file.set_len(CHI_HEADER_LEN + count * 4 * spec.len() as u64)?;
    file.seek(SeekFrom::Start(CHI_COUNT_OFFSET))?;
    file.write_all(&count.to_le_bytes())?;
    Ok(())
}

/// Writes a `CHI1` encoding file: a 36-byte header followed by `count` rows of
/// `k` little-endian `f32`.
pub fn write_encodings(path: &Path, spec: &HistogramSpec, rows: &[Vec<f64>]) -> Result<()> {
    spec.validate()?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&encode_header(spec, rows.len() as u64))?;
    write_rows(&mut out, spec, rows)?;
    out.flush()?;
    Ok(())
}

/// Appends rows to an encoding file, creating it if missing, and updates the
/// header count.
pub fn append_encodings(path: &Path, spec: &HistogramSpec, rows: &[Vec<f64>]) -> Result<()> {
    if !path.exists() {
        return write_encodings(path, spec, rows);
    }
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let (existing, count) = read_header(&mut file)?;
    existing.check_same(spec)?;
    let row_bytes = 4 * spec.len() as u64;
    file.set_len(CHI_HEADER_LEN + count * row_bytes)?;
    file.seek(SeekFrom::End(0))?;
    let mut out = BufWriter::new(&mut file);
    write_rows(&mut out, spec, rows)?;
    out.flush()?;
    drop(out);
    file.seek(SeekFrom::Start(CHI_COUNT_OFFSET))?;
    file.write_all(&(count + rows.len() as u64).to_le_bytes())?;
    Ok(())
}

pub fn read_encodings(path: &Path) -> Result<(HistogramSpec, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut input = BufReader::new(file);
    let (spec, count) = read_header(&mut input)?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let row_bytes = 4 * spec.len();
    if bytes.len() != count as usize * row_bytes {
        return Err(Error::IncompatibleEncoding(format!(
            "expected {} rows of {} bytes, found {} bytes",
            count,
            row_bytes,
            bytes.len()
        )));
    }
    let rows = bytes
        .chunks_exact(row_bytes)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect();
    Ok((spec, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(triples: &[(f64, f64, f64)]) -> CurvatureSamples {
        CurvatureSamples::from_triples(triples.iter().copied())
    }

    #[test]
    fn single_sample_fills_one_bin() {
        let spec = HistogramSpec::default();
        let enc = histogram(&samples(&[(0.1, -0.1, 1.0)]), &spec).unwrap();
        let idx = spec.index(spec.bin_of(0.1), spec.bin_of(-0.1));
        assert_eq!(enc.values[idx], 1.0);
        assert_eq!(enc.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn two_equal_samples_split_evenly() {
        let enc = histogram(
            &samples(&[(0.1, -0.1, 2.0), (0.3, 0.2, 2.0)]),
            &HistogramSpec::default(),
        )
        .unwrap();
        let mut nz: Vec<f64> = enc.values.iter().copied().filter(|&v| v != 0.0).collect();
        nz.sort_by(f64::total_cmp);
        assert_eq!(nz, vec![0.5, 0.5]);
    }

    #[test]
    fn full_length() {
        assert_eq!(HistogramSpec::default().len(), 20100);
        assert_eq!(HistogramSpec::desk().len(), 820);
    }

    #[test]
    fn zero_area_is_empty_input() {
        let r = histogram(&samples(&[(0.1, 0.0, 0.0)]), &HistogramSpec::default());
        assert!(matches!(r, Err(Error::EmptyInput(_))));
        assert!(histogram(&CurvatureSamples::default(), &HistogramSpec::default()).is_err());
    }

    #[test]
    fn out_of_range_clamps_to_edges() {
        let spec = HistogramSpec::with_bins(10);
        let enc = histogram(&samples(&[(5.0, -5.0, 1.0)]), &spec).unwrap();
        assert_eq!(enc.values[spec.index(9, 0)], 1.0);
    }

    #[test]
    fn bin_pair_inverts_index() {
        let spec = HistogramSpec::with_bins(57);
        for i in 0..57 {
            for j in 0..=i {
                assert_eq!(spec.bin_pair(spec.index(i, j)), (i, j));
            }
        }
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = HistogramSpec::with_bins(12);
        let enc =
            CurvatureEncoding::new((0..spec.len()).map(|_| rng.gen()).collect(), spec).unwrap();
        let m = enc.to_matrix();
        assert!((0..12).all(|i| (i + 1..12).all(|j| m[i][j] == 0.0)));
        assert_eq!(CurvatureEncoding::from_matrix(&m, spec).unwrap(), enc);
    }

    #[test]
    fn mode_and_total_variation() {
        let spec = HistogramSpec::desk();
        let a = histogram(&samples(&[(0.1, 0.1, 3.0), (-0.2, -0.3, 1.0)]), &spec).unwrap();
        let (k1, k2) = a.mode();
        assert!((k1 - 0.1).abs() <= spec.bin_width() && (k2 - 0.1).abs() <= spec.bin_width());
        let b = histogram(&samples(&[(-0.2, -0.3, 1.0)]), &spec).unwrap();
        assert!((a.total_variation(&b).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(a.total_variation(&a).unwrap(), 0.0);
        let other = histogram(&samples(&[(0.0, 0.0, 1.0)]), &HistogramSpec::default()).unwrap();
        assert!(matches!(
            a.total_variation(&other),
            Err(Error::IncompatibleEncoding(_))
        ));
    }

    #[test]
    fn theta_scaler_maps_box_to_unit_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<DesignParams> = (0..50)
            .map(|_| DesignParams::from_array(std::array::from_fn(|_| rng.gen_range(-3.0..3.0))))
            .collect();
        let s = ThetaScaler::fit(&data).unwrap();
        let lo = s.scale(&DesignParams::from_array(s.min)).unwrap();
        let hi = s.scale(&DesignParams::from_array(s.max)).unwrap();
        assert!(lo.iter().all(|&v| v == 0.0));
        assert!(hi.iter().all(|&v| v == 1.0));
        for _ in 0..1000 {
            let theta = DesignParams::from_array(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
            let back = s.unscale(&s.scale(&theta).unwrap()).unwrap().to_array();
            for (x, y) in back.iter().zip(theta.to_array()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn theta_scaler_errors() {
        assert!(matches!(ThetaScaler::fit(&[]), Err(Error::EmptyInput(_))));
        let theta = DesignParams::new(1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -0.3);
        let s = ThetaScaler::fit(&[theta]).unwrap();
        assert!(matches!(
            s.scale(&theta),
            Err(Error::DegenerateComponent { component: 0 })
        ));
    }

    #[test]
    fn chi_scaler_closed_form_at_quarter() {
        let s = ChiScaler::from_median(0.25).unwrap();
        assert!((s.a + 0.125).abs() < 1e-15);
        assert!((s.b - 9f64.ln()).abs() < 1e-12);
        assert!((s.c - 0.946_394_630_357_186).abs() < 1e-12);
        assert!((s.h(0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chi_scaler_near_half_is_nearly_identity() {
        let s = ChiScaler::from_median(0.499).unwrap();
        assert!(!s.identity);
        for x in [0.0, 0.499, 1.0] {
            assert!((s.h(x) - x).abs() < 2e-3);
        }
        assert!((s.h(0.5) - 0.5).abs() < 1e-2);
    }

    #[test]
    fn chi_scaler_fallbacks() {
        assert!(ChiScaler::from_median(0.6).unwrap().identity);
        let zeros = [vec![0.0; 5], vec![0.0; 5]];
        assert!(matches!(
            ChiScaler::fit(zeros.iter().map(Vec::as_slice)),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn chi_scaler_fit_uses_median_of_maxima() {
        let rows = [vec![0.1, 0.0, 0.3, 0.05], vec![0.0, 0.2, 0.1, 0.0]];
        let s = ChiScaler::fit(rows.iter().map(Vec::as_slice)).unwrap();
        assert!((s.m - 0.15).abs() < 1e-15);
    }

    #[test]
    fn chi_scale_rejects_out_of_range() {
        let s = ChiScaler::from_median(0.2).unwrap();
        assert!(s.scale(&[0.5, 1.1]).is_err());
        assert!(s.scale(&[-1e-13, 1.0 + 1e-13]).is_ok());
    }

    proptest! {
        #[test]
        fn chi_scaler_constraints(m in 1e-6f64..0.4999) {
            let s = ChiScaler::from_median(m).unwrap();
            prop_assert!(s.a < 0.0 && s.b > 0.0);
            prop_assert!(s.h(0.0).abs() <= 1e-12);
            prop_assert!((s.h(1.0) - 1.0).abs() <= 1e-12);
            prop_assert!((s.h(m) - 0.5).abs() <= 1e-12);
        }

        #[test]
        fn chi_scaler_monotone_and_lifting(m in 1e-4f64..0.49, x in 0.0f64..1.0, dx in 1e-6f64..0.1) {
            let s = ChiScaler::from_median(m).unwrap();
            prop_assert!(s.h((x + dx).min(1.0)) > s.h(x) || x + dx >= 1.0);
            if x > 0.0 && x < m {
                prop_assert!(s.h(x) > x);
            }
        }

        #[test]
        fn chi_round_trip(m in 1e-4f64..0.49, chi in proptest::collection::vec(0.0f64..=1.0, 1..50)) {
            let s = ChiScaler::from_median(m).unwrap();
            let back = s.unscale(&s.scale(&chi).unwrap());
            for (a, b) in back.iter().zip(&chi) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn histogram_mass_and_permutation(
            raw in proptest::collection::vec((-0.8f64..0.8, -0.8f64..0.8, 1e-3f64..5.0), 1..60),
            seed in any::<u64>(),
        ) {
            let spec = HistogramSpec::with_bins(20);
            let a = histogram(&samples(&raw), &spec).unwrap();
            prop_assert!((a.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(a.values.iter().all(|&v| v >= 0.0));
            let mut shuffled = raw.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let b = histogram(&samples(&shuffled), &spec).unwrap();
            prop_assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn encoding_file_round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chi.bin");
        let spec = HistogramSpec::with_bins(6);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..21).map(|j| (r * 21 + j) as f64 / 64.0).collect())
            .collect();
        write_encodings(&path, &spec, &rows[..2]).unwrap();
        append_encodings(&path, &spec, &rows[2..]).unwrap();
        let (back_spec, back) = read_encodings(&path).unwrap();
        assert_eq!(back_spec, spec);
        assert_eq!(back, rows);
        assert!(matches!(
            append_encodings(&path, &HistogramSpec::with_bins(7), &[]),
            Err(Error::IncompatibleEncoding(_))
        ));
    }

    #[test]
    fn truncate_rolls_back_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chi.bin");
        let spec = HistogramSpec::with_bins(3);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 6]).collect();
        write_encodings(&path, &spec, &rows).unwrap();
        truncate_encodings(&path, 2).unwrap();
        assert_eq!(read_encodings(&path).unwrap().1, rows[..2].to_vec());
        assert!(truncate_encodings(&path, 3).is_err());
    }

    proptest! {
        #[test]
        fn quantized_rows_keep_their_sum(
            raw in proptest::collection::vec(0.0f64..1.0, 1..400),
            sparsity in 0usize..4,
        ) {
            let mut row = raw;
            for (i, v) in row.iter_mut().enumerate() {
                if sparsity > 0 && i % (sparsity + 1) == 0 {
                    *v = 0.0;
                }
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
                let q = quantize_row(&row);
                let sum: f64 = q.iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                for (a, b) in row.iter().zip(&q) {
                    prop_assert!(*b >= 0.0);
                    prop_assert!((*a - *b as f64).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn malformed_encoding_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"CHI0 and more bytes than a header needs....").unwrap();
        assert!(matches!(
            read_encodings(&path),
            Err(Error::IncompatibleEncoding(_))
        ));
        let spec = HistogramSpec::with_bins(4);
        write_encodings(&path, &spec, &[vec![0.1; 10]]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_encodings(&path),
            Err(Error::IncompatibleEncoding(_))
        ));
    }

    #[test]
    fn scaler_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ChiScaler::from_median(0.1).unwrap();
        s.save(&dir.path().join("chi.json")).unwrap();
        assert_eq!(ChiScaler::load(&dir.path().join("chi.json")).unwrap(), s);
        assert!(matches!(
            ThetaScaler::load(&dir.path().join("none.json")),
            Err(Error::MissingArtifact(_))
        ));
    }
}

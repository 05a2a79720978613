//! Generalization targets: spinodoid random fields, a periodic nodal surface
//! and smoothed voxel images.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_field::{level_set_curvatures, PhaseField, SolverConfig, DOMAIN_LENGTH};
use crate::surface::{
    element_curvatures, marching_cubes, marching_cubes_open, CurvatureSamples, TriMesh,
};

/// How the three cone conditions on a wave direction are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConeRule {
    /// Accept directions inside any cone.
    #[default]
    Union,
    /// Accept directions satisfying an odd number of cone conditions.
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinodoidParams {
    /// Wavenumber in 1/length of the source box.
    pub beta: f64,
    pub q: usize,
    /// Cone half-angles about x, y, z in radians; 0 disables a cone.
    pub cone_angles: [f64; 3],
    pub rho: f64,
    pub seed: u64,
    pub rule: ConeRule,
}

impl Default for SpinodoidParams {
    fn default() -> Self {
        Self {
            beta: 15.0 * PI,
            q: 1000,
            cone_angles: [60f64.to_radians(), 30f64.to_radians(), 10f64.to_radians()],
            rho: 0.3,
            seed: 0,
            rule: ConeRule::Union,
        }
    }
}

impl SpinodoidParams {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidParameter(
                "spinodoid needs at least one wave".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho = {} outside (0, 1)",
                self.rho
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta = {} must be positive",
                self.beta
            )));
        }
        if self
            .cone_angles
            .iter()
            .any(|&t| !(0.0..PI / 2.0).contains(&t))
        {
            return Err(Error::InvalidParameter(format!(
                "cone angles {:?} outside [0, π/2)",
                self.cone_angles
            )));
        }
        if self.cone_angles.iter().all(|&t| t == 0.0) {
            return Err(Error::EmptySupport);
        }
        Ok(())
    }

    pub fn accepts(&self, v: &[f64; 3]) -> bool {
        let hits = (0..3)
            .filter(|&i| self.cone_angles[i] > 0.0 && v[i].abs() > self.cone_angles[i].cos())
            .count();
        match self.rule {
            ConeRule::Union => hits > 0,
            ConeRule::Xor => hits % 2 == 1,
        }
    }
}

/// Wave directions and phases of a spinodoid, by rejection sampling on the
/// unit sphere.
pub fn spinodoid_waves(p: &SpinodoidParams) -> Result<Vec<([f64; 3], f64)>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut waves = Vec::with_capacity(p.q);
    let mut attempts = 0usize;
    while waves.len() < p.q {
        attempts += 1;
        if attempts > 10_000 * p.q {
            return Err(Error::EmptySupport);
        }
        let v: [f64; 3] = rng.sample(UnitSphere);
        if p.accepts(&v) {
            let gamma = rng.gen_range(0.0..2.0 * PI);
            waves.push((v, gamma));
        }
    }
    Ok(waves)
}

/// `φ(x) = sqrt(2/Q) Σ cos(β v_q·x + γ_q)` at `x = (i, j, k)·extent/n`.
pub fn spinodoid_field(p: &SpinodoidParams, n: usize, extent: f64) -> Result<PhaseField> {
    if !(extent > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extent = {extent} must be positive"
        )));
    }
    let waves = spinodoid_waves(p)?;
    let h = extent / n as f64;
    let mut acc = vec![0.0; n * n * n];
    let mut axis = vec![[Complex::new(0.0, 0.0); 3]; n];
    for (v, gamma) in &waves {
        // exp(iβ v·x) factorizes over the axes.
        for (i, slot) in axis.iter_mut().enumerate() {
            let x = i as f64 * h;
            for d in 0..3 {
                slot[d] = Complex::from_polar(1.0, p.beta * v[d] * x);
            }
        }
        let phase = Complex::from_polar(1.0, *gamma);
        let mut idx = 0;
        for ak in &axis {
            let zk = phase * ak[2];
            for aj in &axis {
                let yz = zk * aj[1];
                for ai in &axis {
                    acc[idx] += (yz * ai[0]).re;
                    idx += 1;
                }
            }
        }
    }
    let scale = (2.0 / p.q as f64).sqrt();
    acc.iter_mut().for_each(|v| *v *= scale);
    PhaseField::from_values(n, acc)
}

/// Iso value `sqrt(2)·erf⁻¹(2ρ − 1)` enclosing volume fraction `ρ` of a unit
/// Gaussian field; the inverse error function comes from Newton's method on
/// `erf`.
pub fn spinodoid_level(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} outside (0, 1)"
        )));
    }
    let t = 2.0 * rho - 1.0;
    let mut y: f64 = 0.0;
    // erf is concave on y > 0 (convex on y < 0), so iterates from 0 approach
    // the root monotonically.
    for _ in 0..200 {
        let r = libm::erf(y) - t;
        if r.abs() <= 1e-15 {
            break;
        }
        y -= r / (2.0 / PI.sqrt() * (-y * y).exp());
    }
    Ok(2f64.sqrt() * y)
}

/// Spinodoid field shifted so its zero level set bounds the solid phase
/// `φ ≤ level`; the solid side is negative.
pub fn spinodoid_phase(p: &SpinodoidParams, n: usize, extent: f64) -> Result<PhaseField> {
    let level = spinodoid_level(p.rho)?;
    let phi = spinodoid_field(p, n, extent)?;
    PhaseField::from_values(n, phi.values().iter().map(|v| v - level).collect())
}

/// Side of the box on which the nodal surface is jointly periodic.
pub const PNS_PERIOD: f64 = 10.0 * PI;

pub fn pns_value(x: f64, y: f64, z: f64) -> f64 {
    x.sin() * (1.8 * y).sin() + y.sin() * (1.8 * z).sin() + z.sin() * (1.8 * x).sin() - 0.5
}

/// The nodal surface function sampled on `[0, 10π)³`.
pub fn pns_field(n: usize) -> PhaseField {
    let h = PNS_PERIOD / n as f64;
    let mut vals = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                vals.push(pns_value(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }
    PhaseField::from_values(n, vals).expect("n³ values")
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelImage {
    /// Extent along x, y, z; x varies fastest in `data`.
    pub dims: [usize; 3],
    pub spacing: f64,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelHeader {
    pub dims: [usize; 3],
    pub spacing: f64,
    /// 8 or 16.
    pub bits: u8,
}

impl VoxelImage {
    pub fn new(dims: [usize; 3], spacing: f64, data: Vec<f64>) -> Result<Self> {
        let len = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape {
                expected: len,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "voxel image holds non-finite values".into(),
            ));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    /// Raw little-endian unsigned voxels described by `<path>.json`.
    pub fn read_raw(path: &Path) -> Result<Self> {
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let side = std::path::PathBuf::from(side);
        let header: VoxelHeader = serde_json::from_str(
            &std::fs::read_to_string(&side).map_err(|_| Error::MissingArtifact(side.clone()))?,
        )?;
        let bytes = std::fs::read(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let data: Vec<f64> = match header.bits {
            8 => bytes.iter().map(|&b| b as f64).collect(),
            16 => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
                .collect(),
            b => return Err(Error::InvalidInput(format!("unsupported voxel depth {b}"))),
        };
        Self::new(header.dims, header.spacing, data)
    }

    pub fn write_raw(&self, path: &Path, bits: u8) -> Result<()> {
        let bytes: Vec<u8> = match bits {
            8 => self
                .data
                .iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect(),
            16 => self
                .data
                .iter()
                .flat_map(|v| (v.round().clamp(0.0, 65535.0) as u16).to_le_bytes())
                .collect(),
            b => return Err(Error::InvalidInput(format!("unsupported voxel depth {b}"))),
        };
        std::fs::write(path, bytes)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let header = VoxelHeader {
            dims: self.dims,
            spacing: self.spacing,
            bits,
        };
        std::fs::write(side, serde_json::to_string_pretty(&header)? + "\n")?;
        Ok(())
    }

    /// Cubic images only.
    pub fn to_phase_field(&self) -> Result<PhaseField> {
        let [nx, ny, nz] = self.dims;
        if nx != ny || ny != nz {
            return Err(Error::InvalidInput(format!(
                "phase fields are cubic, image is {nx}×{ny}×{nz}"
            )));
        }
        PhaseField::from_values(nx, self.data.clone())
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }
}

/// Binary image of a ball: 1 inside radius `r` (voxels) of the center, 0 outside.
pub fn voxel_sphere(n: usize, r: f64) -> VoxelImage {
    let c = (n as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
                data.push(if d2 <= r * r { 1.0 } else { 0.0 });
            }
        }
    }
    VoxelImage {
        dims: [n, n, n],
        spacing: 1.0,
        data,
    }
}

/// Slope of the final tanh in [`bone_smooth`].
pub const BONE_TANH_SHARPNESS: f64 = 4.0;

/// All-ones kernel applied along one axis: a transposed convolution (kernel 4,
/// stride 2, padding 1) when `up`, otherwise a convolution (kernel 3, stride 2,
/// padding 1). Zero padding outside the image.
fn ones_pass(img: &VoxelImage, axis: usize, up: bool) -> VoxelImage {
    let n = img.dims[axis];
    let m = if up { 2 * n } else { (n + 2 - 3) / 2 + 1 };
    let mut dims = img.dims;
    dims[axis] = m;
    let mut out = VoxelImage {
        dims,
        spacing: if up {
            img.spacing / 2.0
        } else {
            img.spacing * 2.0
        },
        data: vec![0.0; dims.iter().product()],
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let o = [i, j, k][axis];
                let mut src = [i, j, k];
                let mut sum = 0.0;
                if up {
                    // Output o receives input s through tap t when o = 2s + t − 1.
                    for t in 0..4 {
                        let twice = o as i64 + 1 - t;
                        if twice >= 0 && twice % 2 == 0 && ((twice / 2) as usize) < n {
                            src[axis] = (twice / 2) as usize;
                            sum += img.data[img.index(src[0], src[1], src[2])];
                        }
                    }
                } else {
                    for t in 0..3 {
                        let s = 2 * o as i64 + t - 1;
                        if s >= 0 && (s as usize) < n {
                            src[axis] = s as usize;
                            sum += img.data[img.index(src[0], src[1], src[2])];
                        }
                    }
                }
                let idx = out.index(i, j, k);
                out.data[idx] = sum;
            }
        }
    }
    out
}

/// Min-max scaling, an all-ones 4³ transposed convolution (stride 2, padding 1),
/// an all-ones 3³ convolution (stride 2, padding 1), then
/// `tanh(sharpness·(v/216 − 1/2))`. 216 is the interior gain of the two
/// kernels, so the zero level set sits at half intensity.
pub fn bone_smooth(img: &VoxelImage, sharpness: f64) -> Result<VoxelImage> {
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(hi > lo) {
        return Err(Error::DegenerateImage);
    }
    let mut cur = VoxelImage {
        dims: img.dims,
        spacing: img.spacing,
        data: img.data.iter().map(|v| (v - lo) / (hi - lo)).collect(),
    };
    for axis in 0..3 {
        cur = ones_pass(&cur, axis, true);
    }
    for axis in 0..3 {
        cur = ones_pass(&cur, axis, false);
    }
    cur.data
        .iter_mut()
        .for_each(|v| *v = (sharpness * (*v / 216.0 - 0.5)).tanh());
    Ok(cur)
}

/// Rescales a mesh from a box of side `source_extent` to one of side `target`.
pub fn rescale_mesh(mesh: &TriMesh, source_extent: f64, target: f64) -> Result<TriMesh> {
    Ok(mesh.scaled(scale_factor(source_extent, target)?))
}

/// Curvature samples of a surface moved from a box of side `source_extent` to
/// one of side `target`: `κ → κ·source_extent/target`, areas by the square of
/// the inverse.
pub fn rescale_to_domain(
    samples: &CurvatureSamples,
    source_extent: f64,
    target: f64,
) -> Result<CurvatureSamples> {
    Ok(samples.scaled(scale_factor(source_extent, target)?))
}

fn scale_factor(source_extent: f64, target: f64) -> Result<f64> {
    if !(source_extent > 0.0) || !(target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extents must be positive, got {source_extent} → {target}"
        )));
    }
    Ok(target / source_extent)
}

/// Curvature samples of the zero level set of `u`, read on the standard
/// `[0, 100]³` box. Non-periodic fields are triangulated without wrapping and
/// triangles within three cells of a box face are dropped, since the
/// derivative stencils there would read across the seam.
pub fn field_samples(
    u: &PhaseField,
    periodic: bool,
    cfg: &SolverConfig,
) -> Result<CurvatureSamples> {
    let fields = level_set_curvatures(u, cfg);
    let mesh = if periodic {
        marching_cubes(u, 0.0)?
    } else {
        let h = u.spacing();
        let (lo, hi) = (3.0 * h, (u.n() as f64 - 4.0) * h);
        let mut mesh = marching_cubes_open(u, 0.0)?;
        mesh.retain_by_centroid(|c| c.iter().all(|&x| x >= lo && x <= hi));
        if mesh.is_empty() {
            return Err(Error::EmptySurface);
        }
        mesh
    };
    element_curvatures(&mesh, &fields)
}

/// A benchmark target on the standard box.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub field: PhaseField,
    pub periodic: bool,
    /// Side of the source box, which maps to `DOMAIN_LENGTH`.
    pub source_extent: f64,
}

impl Target {
    pub fn spinodoid(p: &SpinodoidParams, n: usize) -> Result<Self> {
        Ok(Self {
            field: spinodoid_phase(p, n, 1.0)?,
            periodic: false,
            source_extent: 1.0,
        })
    }

    pub fn pns(n: usize) -> Self {
        Self {
            field: pns_field(n),
            periodic: true,
            source_extent: PNS_PERIOD,
        }
    }

    pub fn bone(img: &VoxelImage) -> Result<Self> {
        let smooth = bone_smooth(img, BONE_TANH_SHARPNESS)?;
        Ok(Self {
            field: smooth.to_phase_field()?,
            periodic: false,
            source_extent: smooth.dims[0] as f64 * smooth.spacing,
        })
    }

    pub fn samples(&self, cfg: &SolverConfig) -> Result<CurvatureSamples> {
        field_samples(&self.field, self.periodic, cfg)
    }

    /// Factor taking source-box curvatures to the standard box.
    pub fn curvature_factor(&self) -> f64 {
        self.source_extent / DOMAIN_LENGTH
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_stats(u: &PhaseField) -> (f64, f64) {
        let v = u.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        (mean, var)
    }

    #[test]
    fn spinodoid_moments_and_solid_fraction() {
        let p = SpinodoidParams::default();
        let phi = spinodoid_field(&p, 64, 1.0).unwrap();
        let (mean, var) = grid_stats(&phi);
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.05, "var {var}");
        let level = spinodoid_level(p.rho).unwrap();
        let solid =
            phi.values().iter().filter(|&&v| v <= level).count() as f64 / phi.values().len() as f64;
        assert!((solid - 0.3).abs() <= 0.02, "solid {solid}");
    }

    #[test]
    fn spinodoid_matches_direct_sum() {
        let p = SpinodoidParams {
            q: 5,
            seed: 3,
            ..Default::default()
        };
        let phi = spinodoid_field(&p, 8, 1.0).unwrap();
        let waves = spinodoid_waves(&p).unwrap();
        let x = [3.0 / 8.0, 5.0 / 8.0, 1.0 / 8.0];
        let direct: f64 = waves
            .iter()
            .map(|(v, g)| (p.beta * (v[0] * x[0] + v[1] * x[1] + v[2] * x[2]) + g).cos())
            .sum::<f64>()
            * (2.0 / 5.0f64).sqrt();
        assert!((phi.get(3, 5, 1) - direct).abs() < 1e-12);
    }

    #[test]
    fn spinodoid_is_seeded() {
        let p = SpinodoidParams {
            q: 50,
            ..Default::default()
        };
        assert_eq!(
            spinodoid_field(&p, 16, 1.0).unwrap(),
            spinodoid_field(&p, 16, 1.0).unwrap()
        );
    }

    #[test]
    fn cone_rules() {
        let p = SpinodoidParams::default();
        let waves = spinodoid_waves(&p).unwrap();
        assert!(waves.iter().all(|(v, _)| p.accepts(v)));
        let xor = SpinodoidParams {
            rule: ConeRule::Xor,
            cone_angles: [80f64.to_radians(), 80f64.to_radians(), 0.0],
            ..Default::default()
        };
        // Inside both wide cones: accepted by the union, rejected by XOR.
        let v = [0.6, 0.8, 0.0];
        assert!(!xor.accepts(&v));
        assert!(SpinodoidParams {
            rule: ConeRule::Union,
            ..xor.clone()
        }
        .accepts(&v));
        assert!(spinodoid_waves(&xor)
            .unwrap()
            .iter()
            .all(|(v, _)| xor.accepts(v)));
    }

    #[test]
    fn spinodoid_without_cones_is_empty() {
        let p = SpinodoidParams {
            cone_angles: [0.0; 3],
            ..Default::default()
        };
        assert!(matches!(
            spinodoid_field(&p, 8, 1.0),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn level_matches_gaussian_quantiles() {
        // Standard normal quantiles from an independent implementation.
        assert_eq!(spinodoid_level(0.5).unwrap(), 0.0);
        assert!((spinodoid_level(0.3).unwrap() + 0.524_400_512_708_040_9).abs() < 1e-12);
        assert!((spinodoid_level(0.9).unwrap() - 1.281_551_565_544_600_6).abs() < 1e-12);
        assert!((spinodoid_level(0.01).unwrap() + 2.326_347_874_040_840_8).abs() < 1e-11);
        assert!(spinodoid_level(1.0).is_err());
        assert!(spinodoid_level(0.0).is_err());
    }

    #[test]
    fn pns_point_values() {
        assert!((pns_value(0.0, 0.0, 0.0) + 0.5).abs() < 1e-15);
        let q = PI / 2.0;
        assert!((pns_value(q, q, q) - 0.427_050_983_124_842_6).abs() < 1e-12);
        assert!((pns_value(1.0, 2.0, 3.0) + 1.437_611_487_775_258_6).abs() < 1e-12);
        assert!((pns_value(0.3, 4.1, 7.7) + 0.516_052_843_617_357_8).abs() < 1e-12);
    }

    #[test]
    fn pns_is_periodic_on_its_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..PNS_PERIOD));
            for d in 0..3 {
                let mut q = p;
                q[d] += PNS_PERIOD;
                assert!((pns_value(p[0], p[1], p[2]) - pns_value(q[0], q[1], q[2])).abs() < 1e-12);
            }
        }
        let u = pns_field(16);
        assert!((u.get(4, 4, 4) - pns_value(PI * 2.5, PI * 2.5, PI * 2.5)).abs() < 1e-12);
    }

    #[test]
    fn bone_smooth_keeps_even_sizes() {
        let img =
            VoxelImage::new([6, 8, 10], 1.0, (0..480).map(|i| (i % 7) as f64).collect()).unwrap();
        assert_eq!(bone_smooth(&img, 4.0).unwrap().dims, [6, 8, 10]);
    }

    #[test]
    fn bone_smooth_preserves_constant_interior() {
        let n = 12;
        let mut data = vec![0.5; n * n * n];
        data[0] = 0.0;
        data[1] = 1.0;
        let img = VoxelImage::new([n, n, n], 1.0, data).unwrap();
        let out = bone_smooth(&img, 4.0).unwrap();
        let centre = out.data[out.index(6, 6, 6)];
        for (i, j, k) in [(4, 5, 6), (7, 7, 7), (5, 8, 6)] {
            assert!((out.data[out.index(i, j, k)] - centre).abs() < 1e-12);
        }
        assert!(centre.abs() < 1e-12);
    }

    #[test]
    fn bone_smooth_rejects_constant_image() {
        let img = VoxelImage::new([4, 4, 4], 1.0, vec![3.0; 64]).unwrap();
        assert!(matches!(
            bone_smooth(&img, 4.0),
            Err(Error::DegenerateImage)
        ));
    }

    fn mean_curvature_spread(s: &CurvatureSamples) -> f64 {
        let total = s.total_area();
        let mean = s
            .samples
            .iter()
            .map(|x| (x.k1 + x.k2) * x.area)
            .sum::<f64>()
            / total;
        (s.samples
            .iter()
            .map(|x| (x.k1 + x.k2 - mean).powi(2) * x.area)
            .sum::<f64>()
            / total)
            .sqrt()
    }

    #[test]
    fn smoothing_reduces_curvature_spread() {
        let img = voxel_sphere(32, 9.0);
        let cfg = SolverConfig::default();
        let raw = PhaseField::from_values(32, img.data.iter().map(|v| v - 0.5).collect()).unwrap();
        let rough = field_samples(&raw, false, &cfg).unwrap();
        let smooth = Target::bone(&img).unwrap().samples(&cfg).unwrap();
        assert!(mean_curvature_spread(&smooth) < mean_curvature_spread(&rough));
    }

    #[test]
    fn rescaling_curvature() {
        let s = CurvatureSamples::from_triples([(0.1, 0.1, 2.0)]);
        let r = rescale_to_domain(&s, 50.0, 100.0).unwrap();
        assert!((r.samples[0].k1 - 0.05).abs() < 1e-15);
        assert_eq!(r.samples[0].area, 8.0);
        let back = rescale_to_domain(&r, 100.0, 50.0).unwrap();
        assert!(
            (back.samples[0].k1 - 0.1).abs() < 1e-12 && (back.samples[0].area - 2.0).abs() < 1e-12
        );
        assert_eq!(rescale_to_domain(&s, 7.0, 7.0).unwrap(), s);
        assert!(rescale_to_domain(&s, 0.0, 100.0).is_err());
    }

    #[test]
    fn benchmark_targets_histogram() {
        use crate::encoding::{histogram, HistogramSpec};
        let cfg = SolverConfig::default();
        let spec = HistogramSpec::desk();
        let pns = histogram(&Target::pns(32).samples(&cfg).unwrap(), &spec).unwrap();
        assert!((pns.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let p = SpinodoidParams {
            q: 200,
            ..Default::default()
        };
        let sp = histogram(
            &Target::spinodoid(&p, 32).unwrap().samples(&cfg).unwrap(),
            &spec,
        )
        .unwrap();
        assert!((sp.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn voxel_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bone.raw");
        let img =
            VoxelImage::new([2, 3, 4], 0.5, (0..24).map(|i| (i * 1000) as f64).collect()).unwrap();
        img.write_raw(&path, 16).unwrap();
        assert_eq!(VoxelImage::read_raw(&path).unwrap(), img);
        assert!(matches!(img.to_phase_field(), Err(Error::InvalidInput(_))));
    }
}

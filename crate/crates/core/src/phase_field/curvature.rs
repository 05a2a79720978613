//! Diffuse principal curvatures of the level sets of `u`, the discrete
//! curvature energy, and its exact reverse-mode gradient.
//!
//! All spatial derivatives are fourth-order central differences on the
//! periodic grid (a 37-point stencil per cell). The energy gradient is the
//! adjoint of exactly these stencils and cell formulas, so it agrees with
//! finite differences of [`discrete_energy`] to rounding.

use super::{PhaseField, SolverConfig};
use crate::design_space::{energy_density, energy_density_grad, DesignParams};

/// Normalization `3 / (2√2)` that makes the Modica–Mortola density integrate
/// to one across a tanh interface.
pub const SURFACE_NORMALIZATION: f64 = 1.060_660_171_779_821_3;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFields {
    pub n: usize,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub mask: Vec<bool>,
}

impl CurvatureFields {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

// Hessian component order.
const XX: usize = 0;
const YY: usize = 1;
const ZZ: usize = 2;
const XY: usize = 3;
const XZ: usize = 4;
const YZ: usize = 5;

/// Point offsets of the derivative stencils; closed under negation.
const OFFSETS: [[i8; 3]; 37] = {
    let mut out = [[0i8; 3]; 37];
    let mut p = 1;
    let mut axis = 0;
    while axis < 3 {
        let mut s = 1;
        while s <= 2 {
            out[p][axis] = s;
            out[p + 1][axis] = -s;
            p += 2;
            s += 1;
        }
        axis += 1;
    }
    let planes = [[0usize, 1], [0, 2], [1, 2]];
    let mut pl = 0;
    while pl < 3 {
        let (a, b) = (planes[pl][0], planes[pl][1]);
        let mut s = 1;
        while s <= 2 {
            let signs = [[1i8, 1], [1, -1], [-1, 1], [-1, -1]];
            let mut t = 0;
            while t < 4 {
                out[p][a] = signs[t][0] * s;
                out[p][b] = signs[t][1] * s;
                p += 1;
                t += 1;
            }
            s += 1;
        }
        pl += 1;
    }
    out
};

const fn offset_index(o: [i8; 3]) -> usize {
    let mut p = 0;
    while p < OFFSETS.len() {
        if OFFSETS[p][0] == o[0] && OFFSETS[p][1] == o[1] && OFFSETS[p][2] == o[2] {
            return p;
        }
        p += 1;
    }
    panic!("offset not in stencil");
}

/// Fourth-order central-difference weights (in units of `1/h` or `1/h²`)
/// for the three gradient and six Hessian components.
struct Stencil {
    /// `(point, weight)` pairs per component: gx, gy, gz, then Hessian order.
    terms: [Vec<(usize, f64)>; 9],
}

impl Stencil {
    fn new(h: f64) -> Self {
        let unit = |axis: usize, s: i8| {
            let mut o = [0i8; 3];
            o[axis] = s;
            offset_index(o)
        };
        let mut terms: [Vec<(usize, f64)>; 9] = Default::default();
        let d1 = 1.0 / (12.0 * h);
        let d2 = 1.0 / (12.0 * h * h);
        for axis in 0..3 {
            terms[axis] = vec![
                (unit(axis, 1), 8.0 * d1),
                (unit(axis, -1), -8.0 * d1),
                (unit(axis, 2), -d1),
                (unit(axis, -2), d1),
            ];
            terms[3 + axis] = vec![
                (0, -30.0 * d2),
                (unit(axis, 1), 16.0 * d2),
                (unit(axis, -1), 16.0 * d2),
                (unit(axis, 2), -d2),
                (unit(axis, -2), -d2),
            ];
        }
        // Richardson combination of the h and 2h cross stencils.
        let dm = 1.0 / (48.0 * h * h);
        for (slot, (a, b)) in [(XY, (0, 1)), (XZ, (0, 2)), (YZ, (1, 2))] {
            let mut list = Vec::with_capacity(8);
            for (s, w) in [(1i8, 16.0 * dm), (2, -dm)] {
                for (sa, sb) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
                    let mut o = [0i8; 3];
                    o[a] = sa * s;
                    o[b] = sb * s;
                    list.push((offset_index(o), (sa * sb) as f64 * w));
                }
            }
            terms[3 + slot] = list;
        }
        Self { terms }
    }
}

/// Wrapped flat indices of every stencil point around one cell.
type Neighbors = [usize; 37];

struct Grid {
    n: usize,
    /// `wrapped[i * 5 + s + 2]` is `(i + s) mod n` for `s` in `-2..=2`.
    wrapped: Vec<usize>,
}

impl Grid {
    fn new(n: usize) -> Self {
        let mut wrapped = Vec::with_capacity(5 * n);
        for i in 0..n {
            for s in -2..=2isize {
                wrapped.push((i as isize + s).rem_euclid(n as isize) as usize);
            }
        }
        Self { n, wrapped }
    }

    #[inline]
    fn neighbors(&self, i: usize, j: usize, k: usize) -> Neighbors {
        let n = self.n;
        let w = |c: usize, s: i8| self.wrapped[c * 5 + (s + 2) as usize];
        let mut out = [0; 37];
        for (slot, o) in out.iter_mut().zip(OFFSETS.iter()) {
            *slot = w(i, o[0]) + n * (w(j, o[1]) + n * w(k, o[2]));
        }
        out
    }

    fn for_each(&self, mut f: impl FnMut(usize, &Neighbors)) {
        let n = self.n;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    f(i + n * (j + n * k), &self.neighbors(i, j, k));
                }
            }
        }
    }
}

#[inline]
fn derivatives(u: &[f64], nb: &Neighbors, st: &Stencil) -> ([f64; 3], [f64; 6]) {
    let mut d = [0.0; 9];
    for (slot, terms) in d.iter_mut().zip(st.terms.iter()) {
        *slot = terms.iter().map(|&(p, w)| w * u[nb[p]]).sum();
    }
    ([d[0], d[1], d[2]], [d[3], d[4], d[5], d[6], d[7], d[8]])
}

#[inline]
fn hess_times(hs: &[f64; 6], v: &[f64; 3]) -> [f64; 3] {
    [
        hs[XX] * v[0] + hs[XY] * v[1] + hs[XZ] * v[2],
        hs[XY] * v[0] + hs[YY] * v[1] + hs[YZ] * v[2],
        hs[XZ] * v[0] + hs[YZ] * v[1] + hs[ZZ] * v[2],
    ]
}

#[inline]
fn adjugate(hs: &[f64; 6]) -> [f64; 6] {
    [
        hs[YY] * hs[ZZ] - hs[YZ] * hs[YZ],
        hs[XX] * hs[ZZ] - hs[XZ] * hs[XZ],
        hs[XX] * hs[YY] - hs[XY] * hs[XY],
        hs[XZ] * hs[YZ] - hs[XY] * hs[ZZ],
        hs[XY] * hs[YZ] - hs[XZ] * hs[YY],
        hs[XY] * hs[XZ] - hs[XX] * hs[YZ],
    ]
}

#[inline]
fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Intermediate values of the curvature formulas at one cell.
struct CellCurvature {
    n2: f64,
    n: f64,
    trace: f64,
    hg: [f64; 3],
    q: f64,
    ag: [f64; 3],
    p: f64,
    s: f64,
    d: f64,
    k1: f64,
    k2: f64,
}

impl CellCurvature {
    #[inline]
    /// `reg2` is added to `|∇u|²` wherever the gradient norm enters.
    fn new(g: &[f64; 3], hs: &[f64; 6], reg2: f64) -> Self {
        let n2 = dot3(g, g) + reg2;
        let n = n2.sqrt();
        let trace = hs[XX] + hs[YY] + hs[ZZ];
        let hg = hess_times(hs, g);
        let q = dot3(g, &hg);
        let adj = adjugate(hs);
        let ag = hess_times(&adj, g);
        let p = dot3(g, &ag);
        // Curvature sum with the outward normal of the u > 0 phase.
        let s = -trace / n + q / (n2 * n);
        let gauss = p / (n2 * n2);
        let disc = s * s - 4.0 * gauss;
        let d = if disc > 0.0 { disc.sqrt() } else { 0.0 };
        Self {
            n2,
            n,
            trace,
            hg,
            q,
            ag,
            p,
            s,
            d,
            k1: 0.5 * (s + d),
            k2: 0.5 * (s - d),
        }
    }
}

/// Principal curvatures of the level sets through every cell. Cells with
/// `|u| >= band` or `|∇u| < grad_clamp` are masked out and hold zeros.
pub fn level_set_curvatures(u: &PhaseField, cfg: &SolverConfig) -> CurvatureFields {
    let n = u.n();
    let h = u.spacing();
    let vals = u.values();
    let len = n * n * n;
    let mut out = CurvatureFields {
        n,
        k1: vec![0.0; len],
        k2: vec![0.0; len],
        mask: vec![false; len],
    };
    let st = Stencil::new(h);
    Grid::new(n).for_each(|c, nb| {
        if vals[c].abs() >= cfg.band {
            return;
        }
        let (g, hs) = derivatives(vals, nb, &st);
        if dot3(&g, &g).sqrt() < cfg.grad_clamp {
            return;
        }
        let cc = CellCurvature::new(&g, &hs, 0.0);
        out.k1[c] = cc.k1;
        out.k2[c] = cc.k2;
        out.mask[c] = true;
    });
    out
}

/// Weight fading cells out over `|u| ∈ [band - taper, band]` (cubic
/// smoothstep) and its derivative in `u`.
#[inline]
fn band_weight(uc: f64, band: f64, taper: f64) -> (f64, f64) {
    let a = uc.abs();
    if a >= band {
        return (0.0, 0.0);
    }
    if taper <= 0.0 {
        return (1.0, 0.0);
    }
    let s = ((band - a) / taper).min(1.0);
    if s >= 1.0 {
        return (1.0, 0.0);
    }
    let ds = -uc.signum() / taper;
    (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s) * ds)
}

/// Inverse of the fraction of a tanh interface's area that survives the band
/// weight. Across such an interface `γ dx = (3/4)(1 - u²) du`.
pub fn band_compensation(band: f64, taper: f64) -> f64 {
    let full = (band - taper).max(0.0);
    let mut kept = full - full * full * full / 3.0;
    if taper > 0.0 {
        // Composite Simpson over the smooth taper.
        let m = 200;
        let step = (band - full) / m as f64;
        let g = |u: f64| band_weight(u, band, taper).0 * (1.0 - u * u);
        let mut sum = g(full) + g(band);
        for i in 1..m {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(full + i as f64 * step);
        }
        kept += sum * step / 3.0;
    }
    1.0 / (1.5 * kept)
}

struct EnergyKernel<'a> {
    theta: &'a DesignParams,
    eps: f64,
    vol: f64,
    band: f64,
    taper: f64,
    grad_clamp: f64,
    reg2: f64,
    /// Restores unit area per interface after the band cut (see [`band_compensation`]).
    norm: f64,
    /// Stiffness of the penalty on `|u| > 1`.
    confinement: f64,
}

impl<'a> EnergyKernel<'a> {
    fn new(u: &PhaseField, theta: &'a DesignParams, cfg: &SolverConfig) -> Self {
        let h = u.spacing();
        let eps = cfg.epsilon_for(h);
        Self {
            theta,
            eps,
            vol: h * h * h,
            band: cfg.band,
            taper: cfg.taper,
            grad_clamp: cfg.grad_clamp,
            norm: SURFACE_NORMALIZATION * band_compensation(cfg.band, cfg.taper),
            reg2: (cfg.grad_reg / (std::f64::consts::SQRT_2 * eps)).powi(2),
            confinement: cfg.confinement * energy_scale(theta, eps) / eps,
        }
    }

    /// Penalty energy and its derivative for values outside `[-1, 1]`.
    #[inline]
    fn confine(&self, uc: f64) -> (f64, f64) {
        let excess = uc.abs() - 1.0;
        if excess <= 0.0 {
            return (0.0, 0.0);
        }
        (
            0.5 * self.confinement * excess * excess * self.vol,
            self.confinement * excess * uc.signum() * self.vol,
        )
    }

    #[inline]
    fn in_band(&self, uc: f64) -> bool {
        uc.abs() < self.band
    }

    #[inline]
    fn active(&self, uc: f64, g: &[f64; 3]) -> bool {
        self.in_band(uc) && dot3(g, g).sqrt() >= self.grad_clamp
    }

    #[inline]
    fn weight(&self, uc: f64) -> (f64, f64) {
        band_weight(uc, self.band, self.taper)
    }

    #[inline]
    fn surface_density(&self, uc: f64, n2: f64) -> f64 {
        let w = 0.25 * (1.0 - uc * uc) * (1.0 - uc * uc);
        self.norm * (0.5 * self.eps * n2 + w / self.eps)
    }

    #[inline]
    fn energy(&self, uc: f64, g: &[f64; 3], hs: &[f64; 6]) -> f64 {
        let cc = CellCurvature::new(g, hs, self.reg2);
        let (w, _) = self.weight(uc);
        energy_density(self.theta, cc.k1, cc.k2)
            * self.surface_density(uc, dot3(g, g))
            * w
            * self.vol
    }

    /// Cell energy and its partials with respect to `u`, `∇u` and the Hessian.
    #[inline]
    fn adjoint(&self, uc: f64, g: &[f64; 3], hs: &[f64; 6]) -> (f64, f64, [f64; 3], [f64; 6]) {
        let cc = CellCurvature::new(g, hs, self.reg2);
        let f = energy_density(self.theta, cc.k1, cc.k2);
        let gamma = self.surface_density(uc, dot3(g, g));
        let (w, dw_taper) = self.weight(uc);
        let e = f * gamma * w * self.vol;

        let bf = gamma * w * self.vol;
        let bgamma = f * w * self.vol;
        let mut bg = [0.0; 3];
        let mut bh = [0.0; 6];

        // gamma = c0 (eps |g|²/2 + W(u)/eps)
        let dw = -uc * (1.0 - uc * uc);
        let bu = bgamma * self.norm * dw / self.eps + f * gamma * self.vol * dw_taper;
        let bg_gamma = bgamma * self.norm * self.eps;
        for d in 0..3 {
            bg[d] += bg_gamma * g[d];
        }

        let (fk1, fk2) = energy_density_grad(self.theta, cc.k1, cc.k2);
        let bk1 = bf * fk1;
        let bk2 = bf * fk2;
        let mut bs = 0.5 * (bk1 + bk2);
        let bd = 0.5 * (bk1 - bk2);
        let mut bk = 0.0;
        if cc.d > 0.0 {
            bs += bd * cc.s / cc.d;
            bk = -2.0 * bd / cc.d;
        }

        // K = P / n2²
        let n2 = cc.n2;
        let bp = bk / (n2 * n2);
        let mut bn2 = -2.0 * bk * cc.p / (n2 * n2 * n2);

        // S = -t n2^{-1/2} + q n2^{-3/2}
        let n3 = n2 * cc.n;
        let bt = -bs / cc.n;
        let bq = bs / n3;
        bn2 += bs * (0.5 * cc.trace / n3 - 1.5 * cc.q / (n3 * n2));

        for d in 0..3 {
            bg[d] += 2.0 * bn2 * g[d] + 2.0 * bq * cc.hg[d] + 2.0 * bp * cc.ag[d];
        }

        // q = gᵀ H g and the trace
        bh[XX] += bq * g[0] * g[0] + bt;
        bh[YY] += bq * g[1] * g[1] + bt;
        bh[ZZ] += bq * g[2] * g[2] + bt;
        bh[XY] += 2.0 * bq * g[0] * g[1];
        bh[XZ] += 2.0 * bq * g[0] * g[2];
        bh[YZ] += 2.0 * bq * g[1] * g[2];

        // P = gᵀ adj(H) g
        let ba = [
            bp * g[0] * g[0],
            bp * g[1] * g[1],
            bp * g[2] * g[2],
            2.0 * bp * g[0] * g[1],
            2.0 * bp * g[0] * g[2],
            2.0 * bp * g[1] * g[2],
        ];
        bh[YY] += ba[XX] * hs[ZZ];
        bh[ZZ] += ba[XX] * hs[YY];
        bh[YZ] -= 2.0 * ba[XX] * hs[YZ];

        bh[XX] += ba[YY] * hs[ZZ];
        bh[ZZ] += ba[YY] * hs[XX];
        bh[XZ] -= 2.0 * ba[YY] * hs[XZ];

        bh[XX] += ba[ZZ] * hs[YY];
        bh[YY] += ba[ZZ] * hs[XX];
        bh[XY] -= 2.0 * ba[ZZ] * hs[XY];

        bh[XZ] += ba[XY] * hs[YZ];
        bh[YZ] += ba[XY] * hs[XZ];
        bh[XY] -= ba[XY] * hs[ZZ];
        bh[ZZ] -= ba[XY] * hs[XY];

        bh[XY] += ba[XZ] * hs[YZ];
        bh[YZ] += ba[XZ] * hs[XY];
        bh[XZ] -= ba[XZ] * hs[YY];
        bh[YY] -= ba[XZ] * hs[XZ];

        bh[XY] += ba[YZ] * hs[XZ];
        bh[XZ] += ba[YZ] * hs[XY];
        bh[XX] -= ba[YZ] * hs[YZ];
        bh[YZ] -= ba[YZ] * hs[XX];

        (e, bu, bg, bh)
    }
}

/// Characteristic magnitude of the energy density for curvatures up to
/// `1/eps`; sets the confinement stiffness and the flow's time scale.
pub fn energy_scale(theta: &DesignParams, eps: f64) -> f64 {
    let k = 1.0 / eps;
    let scale = theta.a00.abs()
        + (theta.a10.abs() + theta.a01.abs()) * k
        + (theta.a20.abs() + theta.a11.abs() + theta.a02.abs()) * k * k;
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// `Σ f(k1, k2) γ_ε(u) h³` over the valid cells, plus a quadratic penalty on
/// values outside `[-1, 1]` (zero for every field bounded by one).
pub fn discrete_energy(u: &PhaseField, theta: &DesignParams, cfg: &SolverConfig) -> f64 {
    let kernel = EnergyKernel::new(u, theta, cfg);
    let h = u.spacing();
    let vals = u.values();
    let n = u.n();
    let st = Stencil::new(h);
    let slab_len = n * n;
    // Per-slab partial sums keep the reduction order fixed.
    let mut total = 0.0;
    let mut slab = 0.0;
    Grid::new(n).for_each(|c, nb| {
        if kernel.in_band(vals[c]) {
            let (g, hs) = derivatives(vals, nb, &st);
            if kernel.active(vals[c], &g) {
                slab += kernel.energy(vals[c], &g, &hs);
            }
        }
        slab += kernel.confine(vals[c]).0;
        if (c + 1) % slab_len == 0 {
            total += slab;
            slab = 0.0;
        }
    });
    total
}

/// Energy and its exact gradient with respect to every nodal value.
pub(crate) fn energy_and_gradient(
    u: &PhaseField,
    theta: &DesignParams,
    cfg: &SolverConfig,
) -> (f64, Vec<f64>) {
    let kernel = EnergyKernel::new(u, theta, cfg);
    let n = u.n();
    let h = u.spacing();
    let vals = u.values();
    let len = n * n * n;

    let st = Stencil::new(h);
    let mut grad = vec![0.0; len];
    let mut total = 0.0;
    let mut slab = 0.0;
    let slab_len = n * n;
    Grid::new(n).for_each(|c, nb| {
        if kernel.in_band(vals[c]) {
            let (g, hs) = derivatives(vals, nb, &st);
            if kernel.active(vals[c], &g) {
                let (e, du, dg, dh) = kernel.adjoint(vals[c], &g, &hs);
                slab += e;
                grad[c] += du;
                // Transposed stencils: scatter the cell's partials to the
                // points it was computed from.
                let partials = [
                    dg[0], dg[1], dg[2], dh[0], dh[1], dh[2], dh[3], dh[4], dh[5],
                ];
                for (b, terms) in partials.iter().zip(st.terms.iter()) {
                    for &(p, w) in terms {
                        grad[nb[p]] += w * b;
                    }
                }
            }
        }
        let (e, du) = kernel.confine(vals[c]);
        slab += e;
        grad[c] += du;
        if (c + 1) % slab_len == 0 {
            total += slab;
            slab = 0.0;
        }
    });
    (total, grad)
}

/// Exact gradient of [`discrete_energy`] with respect to each nodal value.
pub fn energy_gradient(u: &PhaseField, theta: &DesignParams, cfg: &SolverConfig) -> PhaseField {
    let (_, grad) = energy_and_gradient(u, theta, cfg);
    PhaseField {
        n: u.n(),
        values: grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_field::DOMAIN_LENGTH;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(n: usize, radius: f64, eps: f64) -> PhaseField {
        let c = DOMAIN_LENGTH / 2.0;
        PhaseField::from_fn(n, |x, y, z| {
            let r = ((x - c).powi(2) + (y - c).powi(2) + (z - c).powi(2)).sqrt();
            ((radius - r) / (2f64.sqrt() * eps)).tanh()
        })
    }

    fn slab(n: usize, eps: f64) -> PhaseField {
        // Solid between z = 25 and z = 75: two flat interfaces.
        PhaseField::from_fn(n, |_, _, z| {
            let d = 25.0 - (z - 50.0).abs();
            (d / (2f64.sqrt() * eps)).tanh()
        })
    }

    fn area_only() -> DesignParams {
        DesignParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn sphere_curvatures_match_inverse_radius() {
        let cfg = SolverConfig::default();
        for radius in [10.0, 20.0, 30.0] {
            let u = sphere(64, radius, cfg.epsilon_for(100.0 / 64.0));
            let cf = level_set_curvatures(&u, &cfg);
            // Cells straddling the zero level set.
            let mut checked = 0;
            for idx in 0..cf.k1.len() {
                if cf.mask[idx] && u.values()[idx].abs() < 0.1 {
                    for kk in [cf.k1[idx], cf.k2[idx]] {
                        assert!((kk * radius - 1.0).abs() <= 0.05, "R={radius} k={kk}");
                    }
                    checked += 1;
                }
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn slab_is_flat() {
        let cfg = SolverConfig::default();
        let u = slab(32, cfg.epsilon_for(100.0 / 32.0));
        let cf = level_set_curvatures(&u, &cfg);
        assert!(cf.valid_count() > 0);
        for idx in 0..cf.k1.len() {
            if cf.mask[idx] {
                assert!(cf.k1[idx].abs() <= 1e-3 && cf.k2[idx].abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn sign_flip_reverses_curvatures() {
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..10 * 10 * 10)
            .map(|_| rng.gen_range(-0.8..0.8))
            .collect();
        let u = PhaseField::from_values(10, vals.clone()).unwrap();
        let neg = PhaseField::from_values(10, vals.iter().map(|v| -v).collect()).unwrap();
        let a = level_set_curvatures(&u, &cfg);
        let b = level_set_curvatures(&neg, &cfg);
        assert_eq!(a.mask, b.mask);
        for idx in 0..a.k1.len() {
            if a.mask[idx] {
                let scale = a.k1[idx].abs().max(a.k2[idx].abs()).max(1e-12);
                assert!((a.k1[idx] + b.k2[idx]).abs() <= 1e-9 * scale);
                assert!((a.k2[idx] + b.k1[idx]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn curvatures_are_ordered() {
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..12 * 12 * 12)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let u = PhaseField::from_values(12, vals).unwrap();
        let cf = level_set_curvatures(&u, &cfg);
        for idx in 0..cf.k1.len() {
            assert!(cf.k1[idx] >= cf.k2[idx]);
            if cf.mask[idx] {
                assert!(u.values()[idx].abs() < cfg.band);
            }
        }
    }

    #[test]
    fn sphere_area_energy() {
        let cfg = SolverConfig::default();
        let u = sphere(64, 20.0, cfg.epsilon_for(100.0 / 64.0));
        let e = discrete_energy(&u, &area_only(), &cfg);
        let exact = 4.0 * std::f64::consts::PI * 400.0;
        assert!((e - exact).abs() <= 0.03 * exact, "e = {e}");
    }

    #[test]
    fn slab_area_energy() {
        let cfg = SolverConfig::default();
        let u = slab(64, cfg.epsilon_for(100.0 / 64.0));
        // Two interfaces, each spanning the 100 x 100 cross-section.
        let e = discrete_energy(&u, &area_only(), &cfg) / 2.0;
        assert!((e - 1e4).abs() <= 0.03 * 1e4, "e = {e}");
    }

    #[test]
    fn band_compensation_matches_closed_form() {
        // Hard cut: the surviving fraction is (3/2)(b - b³/3).
        for b in [0.5, 0.9, 0.99] {
            let exact = 1.0 / (1.5 * (b - b * b * b / 3.0));
            assert!((band_compensation(b, 0.0) - exact).abs() < 1e-6);
        }
        assert!(band_compensation(0.9, 0.05) > band_compensation(0.9, 0.0));
    }

    #[test]
    fn zero_design_has_zero_energy() {
        let cfg = SolverConfig::default();
        let u = sphere(16, 20.0, 12.0);
        let theta = DesignParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(discrete_energy(&u, &theta, &cfg), 0.0);
    }

    fn random_field(n: usize, seed: u64) -> PhaseField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PhaseField::from_values(
            n,
            (0..n * n * n).map(|_| rng.gen_range(-1.05..1.05)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SolverConfig::default();
        let theta = DesignParams::new(0.7, -1.3, 0.4, 35.0, -80.0, 900.0, -0.3);
        let u = random_field(8, 1);
        let grad = energy_gradient(&u, &theta, &cfg);
        let gmax = grad.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let step = 1e-4;
        let shifted = |idx: usize, d: f64| {
            let mut v = u.clone();
            v.values_mut()[idx] += d;
            discrete_energy(&v, &theta, &cfg)
        };
        let kinks = [cfg.band - cfg.taper, cfg.band, 1.0];
        for idx in 0..u.values().len() {
            // The weight and the confinement are only C¹ at their breakpoints.
            let v = u.values()[idx].abs();
            if kinks.iter().any(|k| (v - k).abs() < 3.0 * step) {
                continue;
            }
            // Fourth-order central difference.
            let fd = (-shifted(idx, 2.0 * step) + 8.0 * shifted(idx, step)
                - 8.0 * shifted(idx, -step)
                + shifted(idx, -2.0 * step))
                / (12.0 * step);
            let an = grad.values()[idx];
            let err = (fd - an).abs() / an.abs().max(1e-3 * gmax);
            assert!(err <= 1e-6, "idx {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn gradient_of_constant_field_is_zero() {
        let cfg = SolverConfig::default();
        let theta = DesignParams::new(0.7, -1.3, 0.4, 35.0, -80.0, 900.0, -0.3);
        let u = PhaseField::constant(8, -0.3);
        assert!(energy_gradient(&u, &theta, &cfg)
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_design() {
        let cfg = SolverConfig::default();
        let theta = DesignParams::new(0.7, -1.3, 0.4, 35.0, -80.0, 900.0, -0.3);
        let u = random_field(8, 2);
        let a = energy_gradient(&u, &theta, &cfg);
        let b = energy_gradient(&u, &theta.scale_energy(3.5), &cfg);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((3.5 * x - y).abs() <= 1e-12 * (3.5 * x).abs().max(1e-300) + 1e-9);
        }
    }
}

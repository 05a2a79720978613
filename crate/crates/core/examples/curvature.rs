//! Principal curvatures of a diffuse sphere, from the level set and from the
//! triangulated surface alone, and the resulting curvature histogram.

use curvdesign::encoding::{histogram, HistogramSpec};
use curvdesign::phase_field::{level_set_curvatures, PhaseField, SolverConfig};
use curvdesign::surface::{element_curvatures, marching_cubes, mesh_curvatures, CurvatureSamples};

fn mean_curvatures(s: &CurvatureSamples) -> (f64, f64) {
    let a = s.total_area();
    let k1 = s.samples.iter().map(|x| x.k1 * x.area).sum::<f64>() / a;
    let k2 = s.samples.iter().map(|x| x.k2 * x.area).sum::<f64>() / a;
    (k1, k2)
}

fn main() -> curvdesign::Result<()> {
    let n = 48;
    let radius = 20.0;
    let cfg = SolverConfig::default();
    let eps = cfg.epsilon_for(100.0 / n as f64);
    let u = PhaseField::from_fn(n, |x, y, z| {
        let r = ((x - 50.0).powi(2) + (y - 50.0).powi(2) + (z - 50.0).powi(2)).sqrt();
        ((radius - r) / (2f64.sqrt() * eps)).tanh()
    });

    let mesh = marching_cubes(&u, 0.0)?;
    println!("{} triangles, area {:.1} (sphere {:.1})", mesh.len(), mesh.total_area(), 4.0 * std::f64::consts::PI * radius * radius);

    let from_field = element_curvatures(&mesh, &level_set_curvatures(&u, &cfg))?;
    let from_mesh = mesh_curvatures(&mesh)?;
    println!("exact        k1 = k2 = {:.4}", 1.0 / radius);
    let (a, b) = mean_curvatures(&from_field);
    println!("level set    k1 = {a:.4}, k2 = {b:.4}");
    let (a, b) = mean_curvatures(&from_mesh);
    println!("mesh only    k1 = {a:.4}, k2 = {b:.4}");

    let spec = HistogramSpec::desk();
    let chi = histogram(&from_field, &spec)?;
    let (m1, m2) = chi.mode();
    println!("histogram mode ({m1:.3}, {m2:.3}) over {} bins", spec.len());
    Ok(())
}

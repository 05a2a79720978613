//! Moving between the geometric and standard forms of the energy density.

use curvdesign::design_space::*;

fn main() -> curvdesign::Result<()> {
    // Preferred curvatures 0.1 and 0.05 along axes rotated by 30 degrees.
    let geo = GeometricParams {
        kappa1_c: 0.1,
        kappa2_c: 0.05,
        theta: 30f64.to_radians(),
        alpha: 1.0,
        c: 0.0,
        g: 1.0,
        m0: -0.4,
    };
    let theta = to_standard(&geo)?;
    println!("{}", DesignParams::csv_header());
    println!("{}", theta.to_csv_row());
    println!("class: {:?}", classify(&theta)?);

    let back = to_geometric(&theta)?;
    println!("recovered preferred curvatures: {:.4}, {:.4}", back.kappa1_c, back.kappa2_c);

    for (k1, k2) in [(0.1, 0.05), (0.0, 0.0), (0.1, -0.1)] {
        println!("energy density at ({k1}, {k2}): {:.6}", energy_density(&theta, k1, k2));
    }
    Ok(())
}

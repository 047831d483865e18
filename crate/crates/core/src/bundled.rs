//! Bundled reference problems: one jump per entry, covering every catalog
//! density.

use crate::error::Result;
use crate::fields::CompositeJump;
use crate::functionals::EnergyDensity;

#[derive(Debug, Clone)]
pub struct BundledProblem {
    pub name: &'static str,
    pub density: EnergyDensity,
    pub jump: CompositeJump,
}

fn combo(a: &[f64], s: f64, b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| s * x + t * y).collect()
}

/// The ten bundled `(density, jump)` pairs.
pub fn bundled_problems() -> Result<Vec<BundledProblem>> {
    let mut out = Vec::new();
    let mut push = |name: &'static str,
                    density: EnergyDensity,
                    nu: Vec<f64>,
                    vp: Vec<f64>,
                    vm: Vec<f64>|
     -> Result<()> {
        let jump = CompositeJump::simple(density.layout.clone(), nu, vp, vm)?;
        out.push(BundledProblem {
            name,
            density,
            jump,
        });
        Ok(())
    };
    let tilt = vec![0.6, 0.8];
    let tilt_t = vec![-0.8, 0.6];

    push(
        "mm-scalar-2d",
        EnergyDensity::modica_mortola(2, 1)?,
        vec![1.0, 0.0],
        vec![1.0],
        vec![-1.0],
    )?;
    push(
        "mm-scalar-tilted",
        EnergyDensity::modica_mortola(2, 1)?,
        tilt.clone(),
        vec![1.0],
        vec![-1.0],
    )?;
    push(
        "mm-vector-2d",
        EnergyDensity::modica_mortola(2, 2)?,
        vec![0.0, 1.0],
        vec![0.6, 0.8],
        vec![-0.8, 0.6],
    )?;
    push(
        "mm-scaled-well",
        EnergyDensity::modica_mortola_scaled(2, 1, 2.0)?,
        vec![1.0, 0.0],
        vec![1.0],
        vec![-1.0],
    )?;
    push(
        "ag-2d",
        EnergyDensity::aviles_giga(2)?,
        vec![1.0, 0.0],
        vec![0.6, 0.8],
        vec![-0.6, 0.8],
    )?;
    push(
        "ag-2d-tilted",
        EnergyDensity::aviles_giga(2)?,
        tilt.clone(),
        combo(&tilt_t, 0.6, &tilt, 0.8),
        combo(&tilt_t, 0.6, &tilt, -0.8),
    )?;
    push(
        "ag-3d",
        EnergyDensity::aviles_giga(3)?,
        vec![0.0, 0.0, 1.0],
        vec![0.6, 0.0, 0.8],
        vec![0.6, 0.0, -0.8],
    )?;
    push(
        "tgw-2d",
        EnergyDensity::two_gradient_well(2, 1, vec![0.5, 1.0], vec![-0.5, 1.0])?,
        vec![1.0, 0.0],
        vec![0.5, 1.0],
        vec![-0.5, 1.0],
    )?;
    // B = A - a ⊗ ν with a = (1, 0.5), ν = (0.6, 0.8)
    let a = vec![1.0, 0.0, 0.0, 1.0];
    let b = vec![0.4, -0.8, -0.3, 0.6];
    push(
        "tgw-2d-two-rows",
        EnergyDensity::two_gradient_well(2, 2, a.clone(), b.clone())?,
        tilt,
        a,
        b,
    )?;
    push(
        "mm-scalar-3d",
        EnergyDensity::modica_mortola(3, 1)?,
        vec![0.0, 0.0, 1.0],
        vec![1.0],
        vec![-1.0],
    )?;
    Ok(out)
}

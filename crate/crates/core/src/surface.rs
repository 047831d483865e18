//! Surface functionals `K₁`, `K_per` and the kernel-limit functional:
//! densities integrated over the jump set against the area element.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell1d::{optimize_e1_report, E1Options};
use crate::cellnd::{optimize_eper, CellGrid, EperOptions, LatticeBasis};
use crate::error::{arg, Result};
use crate::fields::{CompositeJump, GraphInterface, PiecewiseField};
use crate::functionals::EnergyDensity;
use crate::mollifier::{limit_surface_density, KernelProfile};
use crate::numeric::{gauss_legendre_unit, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    E1,
    Eper,
    KernelLimit,
}

/// Inner solver settings used when evaluating densities at quadrature nodes.
#[derive(Debug, Clone)]
pub struct SurfaceSolvers {
    pub e1_grid_n: usize,
    pub l_grid: Vec<f64>,
    pub e1: E1Options,
    /// Defaults to 64 per axis in two dimensions and 24 in three.
    pub cell_grid: Option<CellGrid>,
    pub eper: EperOptions,
    pub profile: Option<KernelProfile>,
    pub limit_quadrature: usize,
    /// Gauss-Legendre nodes per axis and panel.
    pub order: usize,
    pub panels: usize,
}

impl Default for SurfaceSolvers {
    fn default() -> Self {
        Self {
            e1_grid_n: 1024,
            l_grid: (1..=5).map(|k| 0.5_f64.powi(k)).collect(),
            e1: E1Options::default(),
            cell_grid: None,
            eper: EperOptions::default(),
            profile: None,
            limit_quadrature: 4096,
            order: 8,
            panels: 1,
        }
    }
}

/// Nodes and weights on an interface patch with the area element.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceQuadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub area: Vec<f64>,
}

impl SurfaceQuadrature {
    /// Composite tensor Gauss-Legendre rule, `panels` per axis.
    pub fn new(iface: &GraphInterface, order: usize, panels: usize) -> Self {
        let m = iface.g.nvars;
        let (x, w) = gauss_legendre_unit(order);
        let mut nodes = vec![vec![]];
        let mut weights = vec![1.0];
        for j in 0..m {
            let (a, b) = (iface.patch.lo[j], iface.patch.hi[j]);
            let h = (b - a) / panels as f64;
            let mut nn = Vec::new();
            let mut nw = Vec::new();
            for (p, pw) in nodes.iter().zip(&weights) {
                for k in 0..panels {
                    for (t, tw) in x.iter().zip(&w) {
                        let mut q = p.clone();
                        q.push(a + h * (k as f64 + t));
                        nn.push(q);
                        nw.push(pw * h * tw);
                    }
                }
            }
            nodes = nn;
            weights = nw;
        }
        let area = nodes.iter().map(|xp| iface.area_factor(xp)).collect();
        Self {
            nodes,
            weights,
            area,
        }
    }

    /// `H^{N-1}` measure of the interface.
    pub fn measure(&self) -> f64 {
        let parts: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.area)
            .map(|(w, a)| w * a)
            .collect();
        pairwise_sum(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceContribution {
    pub index: usize,
    pub measure: f64,
    pub value: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub kind: DensityKind,
    pub total: f64,
    pub interfaces: Vec<InterfaceContribution>,
    pub unique_jumps: usize,
    /// Some inner solve did not converge.
    pub partial: bool,
}

fn quantize(jump: &CompositeJump) -> Vec<i64> {
    let q = |x: &f64| (x * 1e12).round() as i64;
    jump.v_plus
        .iter()
        .chain(&jump.v_minus)
        .chain(&jump.nu)
        .chain(&jump.f_plus)
        .chain(&jump.f_minus)
        .map(q)
        .collect()
}

/// Density value at one jump and whether its solver converged.
pub fn density_at(
    density: &EnergyDensity,
    jump: &CompositeJump,
    kind: DensityKind,
    solvers: &SurfaceSolvers,
) -> Result<(f64, bool)> {
    if jump.no_jump {
        return Ok((0.0, true));
    }
    let n = jump.dim();
    match kind {
        DensityKind::E1 => {
            let r = optimize_e1_report(
                density,
                jump,
                solvers.e1_grid_n,
                &solvers.l_grid,
                &solvers.e1,
            )?;
            Ok((r.value, r.converged))
        }
        DensityKind::Eper if n == 1 => density_at(density, jump, DensityKind::E1, solvers),
        DensityKind::Eper => {
            let grid = solvers
                .cell_grid
                .clone()
                .unwrap_or_else(|| CellGrid::uniform(n, if n == 2 { 64 } else { 24 }));
            let basis = LatticeBasis::orthonormal(&jump.nu)?;
            let r = optimize_eper(density, jump, &basis, &grid, &solvers.l_grid, &solvers.eper)?;
            Ok((r.value, r.converged))
        }
        DensityKind::KernelLimit => {
            let prof = solvers
                .profile
                .as_ref()
                .ok_or_else(|| arg("kernel-limit density needs a kernel profile"))?;
            Ok((
                limit_surface_density(density, prof, jump, solvers.limit_quadrature)?,
                true,
            ))
        }
    }
}

/// `Σ_interfaces ∫ density(v⁺, v⁻, ν) dH^{N-1}`; identical jumps are solved
/// once.
pub fn k_functional(
    field: &PiecewiseField,
    density: &EnergyDensity,
    kind: DensityKind,
    solvers: &SurfaceSolvers,
) -> Result<SurfaceReport> {
    let mut keys: Vec<Vec<i64>> = Vec::new();
    let mut unique: Vec<CompositeJump> = Vec::new();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut per_iface = Vec::new();
    for (i, s) in field.interfaces.iter().enumerate() {
        let quad = SurfaceQuadrature::new(s, solvers.order, solvers.panels);
        let mut slots = Vec::with_capacity(quad.nodes.len());
        for xp in &quad.nodes {
            let jump = field.trace_pair(i, xp)?;
            let key = quantize(&jump);
            let k = *index.entry(key.clone()).or_insert_with(|| {
                keys.push(key);
                unique.push(jump);
                unique.len() - 1
            });
            slots.push(k);
        }
        per_iface.push((quad, slots));
    }
    let values: Vec<(f64, bool)> = unique
        .par_iter()
        .map(|j| density_at(density, j, kind, solvers))
        .collect::<Result<Vec<_>>>()?;
    let mut interfaces = Vec::new();
    for (i, (quad, slots)) in per_iface.iter().enumerate() {
        let parts: Vec<f64> = slots
            .iter()
            .zip(quad.weights.iter().zip(&quad.area))
            .map(|(&k, (w, a))| w * a * values[k].0)
            .collect();
        interfaces.push(InterfaceContribution {
            index: i,
            measure: quad.measure(),
            value: pairwise_sum(&parts),
            nodes: quad.nodes.len(),
        });
    }
    let total = pairwise_sum(&interfaces.iter().map(|c| c.value).collect::<Vec<_>>());
    Ok(SurfaceReport {
        kind,
        total,
        interfaces,
        unique_jumps: unique.len(),
        partial: values.iter().any(|v| !v.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoxDomain;
    use crate::poly::Polynomial;
    use crate::state::StateLayout;

    #[test]
    fn curved_measure_self_consistent() {
        let g = Polynomial::new(
            1,
            vec![
                crate::poly::Monomial {
                    coef: 0.1,
                    exps: vec![2],
                },
                crate::poly::Monomial {
                    coef: 0.05,
                    exps: vec![1],
                },
            ],
        )
        .unwrap();
        let s = GraphInterface {
            axis: 1,
            orientation: 1,
            patch: BoxDomain::new(vec![-0.5], vec![0.5]).unwrap(),
            g,
        };
        let a = SurfaceQuadrature::new(&s, 8, 1).measure();
        let b = SurfaceQuadrature::new(&s, 8, 2).measure();
        assert!((a - b).abs() < 1e-6);
        assert!(a > 1.0);
    }

    #[test]
    fn no_interfaces_gives_zero() {
        let d = EnergyDensity::modica_mortola(2, 1).unwrap();
        let dom = BoxDomain::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        let f = PiecewiseField::constant(StateLayout::scalar(2), dom, vec![1.0], vec![]).unwrap();
        let r = k_functional(&f, &d, DensityKind::E1, &SurfaceSolvers::default()).unwrap();
        assert_eq!(r.total, 0.0);
    }
}

//! Energy densities `F = G + W` with analytic per-slot gradients.
//!
//! Slots follow the integrand `F(εⁿ∇ⁿv, …, ε∇v, v, f)`. For a state with
//! `D` scalar components in dimension `N`:
//!
//! * `d1[c * N + j]` is the `j`-th derivative of component `c`,
//! * `d2[(c * N + j) * N + k]` the `(j, k)` second derivative (order 2 only),
//! * `v[c]` the state and `f` the inhomogeneity values.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::poly::{Monomial, Polynomial};
use crate::state::{Block, ConstraintKind, StateLayout};

/// Borrowed slot values for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Slots<'a> {
    pub d2: &'a [f64],
    pub d1: &'a [f64],
    pub v: &'a [f64],
    pub f: &'a [f64],
}

/// Gradient of `F` with respect to each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGradient {
    pub d2: Vec<f64>,
    pub d1: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CatalogEntry {
    /// `|d1|² + s (1 - |v|²)²` for an unconstrained vector of `m` components.
    ModicaMortola { components: usize, well_scale: f64 },
    /// `|d1|² + (1 - |v|²)²` where `v = ∇u` is a curl-free row.
    AvilesGiga,
    /// `|d1|² + |v - A|² |v - B|²` with `v = ∇u` curl-free and `A - B` rank one.
    TwoGradientWell { a: Vec<f64>, b: Vec<f64> },
    /// User polynomial in all slots, variables ordered `(d2, d1, v, f)`.
    PolynomialCustom(Polynomial),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDensity {
    pub name: String,
    pub order: usize,
    pub layout: StateLayout,
    pub n_f: usize,
    pub entry: CatalogEntry,
}

/// Configuration-file description of a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub well_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub well_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub well_b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Block>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<Monomial>>,
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

impl EnergyDensity {
    pub fn modica_mortola(dim: usize, components: usize) -> Result<Self> {
        Self::modica_mortola_scaled(dim, components, 1.0)
    }

    pub fn modica_mortola_scaled(dim: usize, components: usize, well_scale: f64) -> Result<Self> {
        if components == 0 || !(well_scale > 0.0) {
            return Err(arg(
                "Modica-Mortola needs components >= 1 and a positive well scale",
            ));
        }
        Ok(Self {
            name: "modica-mortola".into(),
            order: 1,
            layout: StateLayout::new(
                dim,
                vec![Block {
                    kind: ConstraintKind::Unconstrained,
                    rows: components,
                }],
            )?,
            n_f: 0,
            entry: CatalogEntry::ModicaMortola {
                components,
                well_scale,
            },
        })
    }

    pub fn aviles_giga(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(arg("Aviles-Giga needs dimension >= 2"));
        }
        Ok(Self {
            name: "aviles-giga".into(),
            order: 1,
            layout: StateLayout::new(
                dim,
                vec![Block {
                    kind: ConstraintKind::CurlFree,
                    rows: 1,
                }],
            )?,
            n_f: 0,
            entry: CatalogEntry::AvilesGiga,
        })
    }

    /// Wells `a`, `b` are `rows x dim` matrices stored row-major.
    pub fn two_gradient_well(dim: usize, rows: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = rows * dim;
        if a.len() != n || b.len() != n {
            return Err(shape(format!("wells must have {n} entries")));
        }
        let delta: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        if matrix_rank_one(&delta, rows, dim).is_none() {
            return Err(Error::Construction(
                "two-well matrices must differ by a rank-one matrix".into(),
            ));
        }
        Ok(Self {
            name: "two-gradient-well".into(),
            order: 1,
            layout: StateLayout::new(
                dim,
                vec![Block {
                    kind: ConstraintKind::CurlFree,
                    rows,
                }],
            )?,
            n_f: 0,
            entry: CatalogEntry::TwoGradientWell { a, b },
        })
    }

    /// Custom polynomial density. Nonnegativity is checked on a seeded sample.
    pub fn polynomial(
        order: usize,
        layout: StateLayout,
        n_f: usize,
        poly: Polynomial,
    ) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(arg("derivative order must be 1 or 2"));
        }
        let d = layout.len();
        let n = layout.dim;
        let nvars = if order == 2 { d * n * n } else { 0 } + d * n + d + n_f;
        if poly.nvars != nvars {
            return Err(shape(format!(
                "polynomial has {} variables, slot structure needs {nvars}",
                poly.nvars
            )));
        }
        let dens = Self {
            name: "polynomial".into(),
            order,
            layout,
            n_f,
            entry: CatalogEntry::PolynomialCustom(poly),
        };
        dens.sample_nonnegativity()?;
        Ok(dens)
    }

    pub fn from_config(cfg: &DensityConfig) -> Result<Self> {
        let need = |o: Option<Vec<f64>>, what: &str| {
            o.ok_or_else(|| Error::Config(format!("density '{}' needs '{what}'", cfg.name)))
        };
        match cfg.name.as_str() {
            "modica-mortola" => Self::modica_mortola_scaled(
                cfg.dim,
                cfg.components.unwrap_or(1),
                cfg.well_scale.unwrap_or(1.0),
            ),
            "aviles-giga" => Self::aviles_giga(cfg.dim),
            "two-gradient-well" => Self::two_gradient_well(
                cfg.dim,
                cfg.components.unwrap_or(1),
                need(cfg.well_a.clone(), "well_a")?,
                need(cfg.well_b.clone(), "well_b")?,
            ),
            "polynomial" => {
                let blocks = cfg
                    .blocks
                    .clone()
                    .ok_or_else(|| Error::Config("polynomial density needs 'blocks'".into()))?;
                let layout = StateLayout::new(cfg.dim, blocks)?;
                let order = cfg.order.unwrap_or(1);
                let n_f = cfg.n_f.unwrap_or(0);
                let d = layout.len();
                let nvars =
                    if order == 2 { d * cfg.dim * cfg.dim } else { 0 } + d * cfg.dim + d + n_f;
                let poly = Polynomial::new(nvars, cfg.terms.clone().unwrap_or_default())?;
                Self::polynomial(order, layout, n_f, poly)
            }
            other => Err(Error::Config(format!("unknown density '{other}'"))),
        }
    }

    pub fn to_config(&self) -> DensityConfig {
        let mut cfg = DensityConfig {
            name: self.name.clone(),
            dim: self.dim(),
            components: None,
            well_scale: None,
            well_a: None,
            well_b: None,
            order: None,
            blocks: None,
            n_f: None,
            terms: None,
        };
        match &self.entry {
            CatalogEntry::ModicaMortola {
                components,
                well_scale,
            } => {
                cfg.components = Some(*components);
                cfg.well_scale = Some(*well_scale);
            }
            CatalogEntry::AvilesGiga => {}
            CatalogEntry::TwoGradientWell { a, b } => {
                cfg.components = Some(self.layout.blocks[0].rows);
                cfg.well_a = Some(a.clone());
                cfg.well_b = Some(b.clone());
            }
            CatalogEntry::PolynomialCustom(p) => {
                cfg.order = Some(self.order);
                cfg.blocks = Some(self.layout.blocks.clone());
                cfg.n_f = Some(self.n_f);
                cfg.terms = Some(p.terms.clone());
            }
        }
        cfg
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Number of scalar state components `D`.
    pub fn components(&self) -> usize {
        self.layout.len()
    }

    pub fn d1_len(&self) -> usize {
        self.components() * self.dim()
    }

    pub fn d2_len(&self) -> usize {
        if self.order == 2 {
            self.components() * self.dim() * self.dim()
        } else {
            0
        }
    }

    pub fn check_slots(&self, s: &Slots) -> Result<()> {
        if s.d1.len() != self.d1_len()
            || s.d2.len() != self.d2_len()
            || s.v.len() != self.components()
            || s.f.len() != self.n_f
        {
            return Err(shape(format!(
                "slot shapes (d2 {}, d1 {}, v {}, f {}) do not match density '{}' (d2 {}, d1 {}, v {}, f {})",
                s.d2.len(),
                s.d1.len(),
                s.v.len(),
                s.f.len(),
                self.name,
                self.d2_len(),
                self.d1_len(),
                self.components(),
                self.n_f
            )));
        }
        Ok(())
    }

    /// `F(slots)`; checks shapes.
    pub fn evaluate(&self, s: &Slots) -> Result<f64> {
        self.check_slots(s)?;
        Ok(self.value(s))
    }

    /// Per-slot gradient; checks shapes.
    pub fn gradient(&self, s: &Slots) -> Result<SlotGradient> {
        self.check_slots(s)?;
        let mut g = SlotGradient {
            d2: vec![0.0; self.d2_len()],
            d1: vec![0.0; self.d1_len()],
            v: vec![0.0; self.components()],
        };
        self.value_grad(s, &mut g.d2, &mut g.d1, &mut g.v);
        Ok(g)
    }

    /// Well part `W(v, f) = F(0, …, 0, v, f)`.
    pub fn well(&self, v: &[f64], f: &[f64]) -> f64 {
        let d1 = vec![0.0; self.d1_len()];
        let d2 = vec![0.0; self.d2_len()];
        self.value(&Slots {
            d2: &d2,
            d1: &d1,
            v,
            f,
        })
    }

    /// Zero-set predicate `W(v, f) = 0` (to `1e-12`).
    pub fn zero_set(&self, v: &[f64], f: &[f64]) -> bool {
        self.well(v, f).abs() <= 1e-12
    }

    /// Unchecked evaluation used by inner loops.
    pub fn value(&self, s: &Slots) -> f64 {
        match &self.entry {
            CatalogEntry::ModicaMortola { well_scale, .. } => {
                let r2: f64 = s.v.iter().map(|x| x * x).sum();
                sq_sum(s.d1) + well_scale * (1.0 - r2) * (1.0 - r2)
            }
            CatalogEntry::AvilesGiga => {
                let r2: f64 = s.v.iter().map(|x| x * x).sum();
                sq_sum(s.d1) + (1.0 - r2) * (1.0 - r2)
            }
            CatalogEntry::TwoGradientWell { a, b } => {
                let da: f64 = s.v.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = s.v.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                sq_sum(s.d1) + da * db
            }
            CatalogEntry::PolynomialCustom(p) => SCRATCH.with(|c| {
                let mut c = c.borrow_mut();
                let x = &mut c.0;
                gather(x, s);
                p.eval(x)
            }),
        }
    }

    /// Unchecked value plus gradient written into the provided buffers
    /// (overwritten, not accumulated).
    pub fn value_grad(&self, s: &Slots, g2: &mut [f64], g1: &mut [f64], gv: &mut [f64]) -> f64 {
        match &self.entry {
            CatalogEntry::ModicaMortola { well_scale, .. } => {
                for (g, x) in g1.iter_mut().zip(s.d1) {
                    *g = 2.0 * x;
                }
                let r2: f64 = s.v.iter().map(|x| x * x).sum();
                let c = -4.0 * well_scale * (1.0 - r2);
                for (g, x) in gv.iter_mut().zip(s.v) {
                    *g = c * x;
                }
                sq_sum(s.d1) + well_scale * (1.0 - r2) * (1.0 - r2)
            }
            CatalogEntry::AvilesGiga => {
                for (g, x) in g1.iter_mut().zip(s.d1) {
                    *g = 2.0 * x;
                }
                let r2: f64 = s.v.iter().map(|x| x * x).sum();
                let c = -4.0 * (1.0 - r2);
                for (g, x) in gv.iter_mut().zip(s.v) {
                    *g = c * x;
                }
                sq_sum(s.d1) + (1.0 - r2) * (1.0 - r2)
            }
            CatalogEntry::TwoGradientWell { a, b } => {
                for (g, x) in g1.iter_mut().zip(s.d1) {
                    *g = 2.0 * x;
                }
                let da: f64 = s.v.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = s.v.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                for (i, g) in gv.iter_mut().enumerate() {
                    *g = 2.0 * (s.v[i] - a[i]) * db + 2.0 * (s.v[i] - b[i]) * da;
                }
                sq_sum(s.d1) + da * db
            }
            CatalogEntry::PolynomialCustom(p) => SCRATCH.with(|c| {
                let mut c = c.borrow_mut();
                let (x, g) = &mut *c;
                gather(x, s);
                g.resize(x.len(), 0.0);
                let val = p.eval_grad(x, g);
                let (n2, n1, nv) = (g2.len(), g1.len(), gv.len());
                g2.copy_from_slice(&g[..n2]);
                g1.copy_from_slice(&g[n2..n2 + n1]);
                gv.copy_from_slice(&g[n2 + n1..n2 + n1 + nv]);
                val
            }),
        }
    }

    fn sample_nonnegativity(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let (n2, n1, nv) = (self.d2_len(), self.d1_len(), self.components());
        let mut x = vec![0.0; n2 + n1 + nv + self.n_f];
        for sample in 0..4000 {
            let scale = [0.0, 0.5, 1.0, 2.0][sample % 4];
            for xi in x.iter_mut() {
                *xi = scale * rng.gen_range(-1.0..1.0);
            }
            if sample % 8 == 0 {
                x[..n2 + n1].iter_mut().for_each(|t| *t = 0.0);
            }
            let s = Slots {
                d2: &x[..n2],
                d1: &x[n2..n2 + n1],
                v: &x[n2 + n1..n2 + n1 + nv],
                f: &x[n2 + n1 + nv..],
            };
            let val = self.value(&s);
            if val < -1e-10 {
                return Err(Error::Construction(format!(
                    "polynomial density is negative ({val:e}) at sample point {x:?}"
                )));
            }
        }
        Ok(())
    }
}

fn sq_sum(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

fn gather(x: &mut Vec<f64>, s: &Slots) {
    x.clear();
    x.extend_from_slice(s.d2);
    x.extend_from_slice(s.d1);
    x.extend_from_slice(s.v);
    x.extend_from_slice(s.f);
}

/// If the `rows x cols` matrix `m` is rank one, returns its Frobenius norm.
fn matrix_rank_one(m: &[f64], rows: usize, cols: usize) -> Option<f64> {
    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        return None;
    }
    for i in 0..rows {
        for k in i + 1..rows {
            for j in 0..cols {
                for l in j + 1..cols {
                    let minor =
                        m[i * cols + j] * m[k * cols + l] - m[i * cols + l] * m[k * cols + j];
                    if minor.abs() > 1e-12 * fro * fro {
                        return None;
                    }
                }
            }
        }
    }
    Some(fro)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(d: &EnergyDensity, d1: &[f64], v: &[f64]) -> f64 {
        d.evaluate(&Slots {
            d2: &[],
            d1,
            v,
            f: &[],
        })
        .unwrap()
    }

    #[test]
    fn modica_mortola_values() {
        let mm = EnergyDensity::modica_mortola(1, 1).unwrap();
        assert_eq!(eval(&mm, &[0.0], &[1.0]), 0.0);
        assert_eq!(eval(&mm, &[0.0], &[0.0]), 1.0);
        let g = mm
            .gradient(&Slots {
                d2: &[],
                d1: &[0.0],
                v: &[0.5],
                f: &[],
            })
            .unwrap();
        assert_eq!(g.v[0], -1.5);
        assert_eq!(g.d1[0], 0.0);
    }

    #[test]
    fn aviles_giga_eikonal_well() {
        let ag = EnergyDensity::aviles_giga(2).unwrap();
        let v = [0.6, 0.8];
        assert!(eval(&ag, &[0.0; 4], &v).abs() < 1e-15);
        let g = ag
            .gradient(&Slots {
                d2: &[],
                d1: &[0.0; 4],
                v: &v,
                f: &[],
            })
            .unwrap();
        assert!(g.v.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn two_well_requires_rank_one() {
        assert!(EnergyDensity::two_gradient_well(2, 1, vec![1.0, 0.0], vec![-1.0, 0.0]).is_ok());
        assert!(
            EnergyDensity::two_gradient_well(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 4]).is_err()
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mm = EnergyDensity::modica_mortola(2, 1).unwrap();
        assert!(mm
            .evaluate(&Slots {
                d2: &[],
                d1: &[0.0],
                v: &[0.0],
                f: &[]
            })
            .is_err());
    }

    #[test]
    fn negative_polynomial_rejected() {
        let layout = StateLayout::scalar(1);
        // d1^2 - v^2 can be negative
        let p = Polynomial::new(
            2,
            vec![
                Monomial {
                    coef: 1.0,
                    exps: vec![2, 0],
                },
                Monomial {
                    coef: -1.0,
                    exps: vec![0, 2],
                },
            ],
        )
        .unwrap();
        assert!(EnergyDensity::polynomial(1, layout, 0, p).is_err());
    }

    #[test]
    fn config_round_trip() {
        let d = EnergyDensity::two_gradient_well(2, 1, vec![1.0, 0.0], vec![-1.0, 0.0]).unwrap();
        let back = EnergyDensity::from_config(&d.to_config()).unwrap();
        assert_eq!(d, back);
    }
}

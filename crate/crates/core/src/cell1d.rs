//! One-dimensional transition profiles: the density `E₁`.
//!
//! Profiles are continuous piecewise-linear on a uniform grid of `[-1/2, 1/2]`
//! with Gauss-Legendre quadrature per element. The state is written as
//! `c₀ + B q(t)` so that curl-free rows move only along `ν` and
//! divergence-free rows only in `ν^⊥`; endpoints are pinned to `v±`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::fields::CompositeJump;
use crate::functionals::{CatalogEntry, EnergyDensity, Slots};
use crate::mollifier::fmt;
use crate::numeric::{complement_basis, dot, gauss_legendre_unit, pairwise_sum};
use crate::optim::{minimize, LbfgsOptions};
use crate::state::ConstraintKind;

/// Coarsest level of the node-doubling cascade.
pub const BASE_LEVEL: usize = 128;

/// Smooth quintic step on `[0, 1]` used for ramps: `θ(s)` for `s ∈ [-1/2, 1/2]`.
pub fn quintic_step(s: f64) -> f64 {
    let u = (s + 0.5).clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Reduced coordinates `v = c₀ + B q` of a jump.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBasis {
    pub d: usize,
    pub k: usize,
    pub c0: Vec<f64>,
    /// `d x k`, row-major.
    pub b: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub q_plus: Vec<f64>,
}

impl ProfileBasis {
    pub fn new(jump: &CompositeJump) -> Result<Self> {
        let n = jump.dim();
        let d = jump.layout.len();
        let nu = &jump.nu;
        let scale = 1.0
            + jump
                .v_plus
                .iter()
                .chain(&jump.v_minus)
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut qm = Vec::new();
        let mut qp = Vec::new();
        let mut c0 = vec![0.0; d];
        for (kind, off, rows) in jump.layout.iter() {
            match kind {
                ConstraintKind::Unconstrained => {
                    for r in 0..rows {
                        let mut col = vec![0.0; d];
                        col[off + r] = 1.0;
                        cols.push(col);
                        qm.push(jump.v_minus[off + r]);
                        qp.push(jump.v_plus[off + r]);
                    }
                }
                ConstraintKind::CurlFree => {
                    for r in 0..rows {
                        let o = off + r * n;
                        let vm = &jump.v_minus[o..o + n];
                        let vp = &jump.v_plus[o..o + n];
                        let (am, ap) = (dot(vm, nu), dot(vp, nu));
                        for j in 0..n {
                            let tm = vm[j] - am * nu[j];
                            let tp = vp[j] - ap * nu[j];
                            if (tm - tp).abs() > tol {
                                return Err(arg(format!(
                                    "curl-free row {r} jump is not rank-one along the normal (defect {:e})",
                                    (tm - tp).abs()
                                )));
                            }
                            c0[o + j] = tm;
                        }
                        let mut col = vec![0.0; d];
                        col[o..o + n].copy_from_slice(nu);
                        cols.push(col);
                        qm.push(am);
                        qp.push(ap);
                    }
                }
                ConstraintKind::DivFree => {
                    let basis = complement_basis(nu);
                    for r in 0..rows {
                        let o = off + r * n;
                        let vm = &jump.v_minus[o..o + n];
                        let vp = &jump.v_plus[o..o + n];
                        let (cm, cp) = (dot(vm, nu), dot(vp, nu));
                        if (cm - cp).abs() > tol {
                            return Err(arg(format!(
                                "divergence-free row {r} has a normal-trace jump of {:e}",
                                (cm - cp).abs()
                            )));
                        }
                        for j in 0..n {
                            c0[o + j] = cm * nu[j];
                        }
                        for e in &basis {
                            let mut col = vec![0.0; d];
                            col[o..o + n].copy_from_slice(e);
                            cols.push(col);
                            qm.push(dot(vm, e));
                            qp.push(dot(vp, e));
                        }
                    }
                }
            }
        }
        let k = cols.len();
        let mut b = vec![0.0; d * k];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..d {
                b[i * k + j] = col[i];
            }
        }
        Ok(Self {
            d,
            k,
            c0,
            b,
            q_minus: qm,
            q_plus: qp,
        })
    }

    pub fn state(&self, q: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            let mut s = self.c0[i];
            for j in 0..self.k {
                s += self.b[i * self.k + j] * q[j];
            }
            out[i] = s;
        }
    }

    /// `Bᵀ g`, accumulated into `out`.
    pub fn pull_back(&self, g: &[f64], out: &mut [f64]) {
        for j in 0..self.k {
            let mut s = 0.0;
            for i in 0..self.d {
                s += self.b[i * self.k + j] * g[i];
            }
            out[j] += s;
        }
    }
}

/// Polynomial degree of `F` along an element (derivative slots of order one
/// are constant on elements).
fn element_degree(density: &EnergyDensity) -> u32 {
    match &density.entry {
        CatalogEntry::ModicaMortola { .. }
        | CatalogEntry::AvilesGiga
        | CatalogEntry::TwoGradientWell { .. } => 4,
        CatalogEntry::PolynomialCustom(p) => {
            let (n2, n1, nv) = (density.d2_len(), density.d1_len(), density.components());
            p.terms
                .iter()
                .map(|t| {
                    t.exps[..n2].iter().sum::<u32>()
                        + t.exps[n2 + n1..n2 + n1 + nv].iter().sum::<u32>()
                })
                .max()
                .unwrap_or(0)
        }
    }
}

/// Number of Gauss points per element integrating the energy exactly.
pub fn gauss_points_for(density: &EnergyDensity) -> usize {
    let deg = element_degree(density) as usize;
    2.max((deg + 2) / 2)
}

/// Discrete objective `R_L` at fixed `L` and resolution `n`.
#[derive(Debug, Clone)]
pub struct Cell1dObjective<'a> {
    pub density: &'a EnergyDensity,
    pub jump: &'a CompositeJump,
    pub basis: ProfileBasis,
    pub n: usize,
    pub l: f64,
    gx: Vec<f64>,
    gw: Vec<f64>,
}

impl<'a> Cell1dObjective<'a> {
    pub fn new(
        density: &'a EnergyDensity,
        jump: &'a CompositeJump,
        n: usize,
        l: f64,
    ) -> Result<Self> {
        if density.layout != jump.layout {
            return Err(shape("jump layout does not match the density"));
        }
        if jump.f_plus.len() != density.n_f {
            return Err(shape("jump f values do not match the density"));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return Err(arg("profile grid needs an even number of intervals"));
        }
        if !(l > 0.0) {
            return Err(arg("L must be positive"));
        }
        let basis = ProfileBasis::new(jump)?;
        let (gx, gw) = gauss_legendre_unit(gauss_points_for(density));
        Ok(Self {
            density,
            jump,
            basis,
            n,
            l,
            gx,
            gw,
        })
    }

    /// Number of free unknowns.
    pub fn len(&self) -> usize {
        (self.n - 1) * self.basis.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ramp initialization `q⁻ + θ(t/L)(q⁺ - q⁻)`.
    pub fn ramp(&self) -> Vec<f64> {
        let k = self.basis.k;
        let mut q = vec![0.0; self.len()];
        for i in 1..self.n {
            let t = -0.5 + i as f64 / self.n as f64;
            let th = quintic_step(t / self.l);
            for j in 0..k {
                q[(i - 1) * k + j] =
                    self.basis.q_minus[j] + th * (self.basis.q_plus[j] - self.basis.q_minus[j]);
            }
        }
        q
    }

    /// Nodal states, endpoints set exactly to `v±`.
    pub fn states(&self, q: &[f64]) -> Vec<f64> {
        let d = self.basis.d;
        let k = self.basis.k;
        let mut v = vec![0.0; (self.n + 1) * d];
        v[..d].copy_from_slice(&self.jump.v_minus);
        v[self.n * d..].copy_from_slice(&self.jump.v_plus);
        for i in 1..self.n {
            self.basis
                .state(&q[(i - 1) * k..i * k], &mut v[i * d..(i + 1) * d]);
        }
        v
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; q.len()];
        self.value_grad(q, &mut g)
    }

    /// Energy and gradient with respect to the free unknowns.
    pub fn value_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let (n, d) = (self.n, self.basis.d);
        let dim = self.jump.dim();
        let nu = &self.jump.nu;
        let h = 1.0 / n as f64;
        let l = self.l;
        let order = self.density.order;
        let v = self.states(q);
        let mut gv = vec![0.0; (n + 1) * d];
        // nodal second differences with clamped ghosts
        let mut sec = Vec::new();
        let mut gsec = Vec::new();
        if order == 2 {
            sec = vec![0.0; (n + 1) * d];
            gsec = vec![0.0; (n + 1) * d];
            for i in 0..=n {
                let im = if i == 0 { 0 } else { i - 1 };
                let ip = if i == n { n } else { i + 1 };
                for c in 0..d {
                    sec[i * d + c] = (v[ip * d + c] - 2.0 * v[i * d + c] + v[im * d + c]) / (h * h);
                }
            }
        }
        let mut parts = vec![0.0; n];
        let mut st = vec![0.0; d];
        let mut d1 = vec![0.0; d * dim];
        let mut d2 = vec![0.0; self.density.d2_len()];
        let mut g1 = vec![0.0; d * dim];
        let mut g2 = vec![0.0; self.density.d2_len()];
        let mut gs = vec![0.0; d];
        let mut slope = vec![0.0; d];
        for e in 0..n {
            let t_mid = -0.5 + (e as f64 + 0.5) * h;
            let f: &[f64] = if t_mid < 0.0 {
                &self.jump.f_minus
            } else {
                &self.jump.f_plus
            };
            for c in 0..d {
                slope[c] = (v[(e + 1) * d + c] - v[e * d + c]) / h;
                for j in 0..dim {
                    d1[c * dim + j] = l * slope[c] * nu[j];
                }
            }
            let mut acc = 0.0;
            for (xi, wi) in self.gx.iter().zip(&self.gw) {
                let w = wi * h / l;
                for c in 0..d {
                    st[c] = (1.0 - xi) * v[e * d + c] + xi * v[(e + 1) * d + c];
                }
                if order == 2 {
                    for c in 0..d {
                        let s = (1.0 - xi) * sec[e * d + c] + xi * sec[(e + 1) * d + c];
                        for j in 0..dim {
                            for k in 0..dim {
                                d2[(c * dim + j) * dim + k] = l * l * s * nu[j] * nu[k];
                            }
                        }
                    }
                }
                let val = self.density.value_grad(
                    &Slots {
                        d2: &d2,
                        d1: &d1,
                        v: &st,
                        f,
                    },
                    &mut g2,
                    &mut g1,
                    &mut gs,
                );
                acc += w * val;
                for c in 0..d {
                    gv[e * d + c] += w * (1.0 - xi) * gs[c];
                    gv[(e + 1) * d + c] += w * xi * gs[c];
                    let gslope = w * l * dot(&g1[c * dim..(c + 1) * dim], nu) / h;
                    gv[(e + 1) * d + c] += gslope;
                    gv[e * d + c] -= gslope;
                }
                if order == 2 {
                    for c in 0..d {
                        let mut gsv = 0.0;
                        for j in 0..dim {
                            for k in 0..dim {
                                gsv += g2[(c * dim + j) * dim + k] * nu[j] * nu[k];
                            }
                        }
                        gsv *= w * l * l;
                        gsec[e * d + c] += (1.0 - xi) * gsv;
                        gsec[(e + 1) * d + c] += xi * gsv;
                    }
                }
            }
            parts[e] = acc;
        }
        if order == 2 {
            for i in 0..=n {
                let im = if i == 0 { 0 } else { i - 1 };
                let ip = if i == n { n } else { i + 1 };
                for c in 0..d {
                    let g = gsec[i * d + c] / (h * h);
                    gv[ip * d + c] += g;
                    gv[i * d + c] -= 2.0 * g;
                    gv[im * d + c] += g;
                }
            }
        }
        let k = self.basis.k;
        grad.iter_mut().for_each(|x| *x = 0.0);
        for i in 1..n {
            self.basis
                .pull_back(&gv[i * d..(i + 1) * d], &mut grad[(i - 1) * k..i * k]);
        }
        pairwise_sum(&parts)
    }
}

/// Node-doubling prolongation of free unknowns (exact for P1 profiles).
pub fn prolong(q: &[f64], n: usize, k: usize, q_minus: &[f64], q_plus: &[f64]) -> Vec<f64> {
    let at = |i: usize| -> &[f64] {
        if i == 0 {
            q_minus
        } else if i == n {
            q_plus
        } else {
            &q[(i - 1) * k..i * k]
        }
    };
    let m = 2 * n;
    let mut out = vec![0.0; (m - 1) * k];
    for i in 1..m {
        let dst = &mut out[(i - 1) * k..i * k];
        if i % 2 == 0 {
            dst.copy_from_slice(at(i / 2));
        } else {
            let (a, b) = (at(i / 2), at(i / 2 + 1));
            for j in 0..k {
                dst[j] = 0.5 * (a[j] + b[j]);
            }
        }
    }
    out
}

/// Optimized profile with pinned endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile1D {
    pub t: Vec<f64>,
    /// `(n + 1) x D` nodal states, row per node.
    pub states: Vec<Vec<f64>>,
}

impl Profile1D {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.states.first().map_or(0, |s| s.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|c| format!("theta{c}")));
        wr.write_record(&header)?;
        for (t, s) in self.t.iter().zip(&self.states) {
            let mut rec = vec![fmt(*t)];
            rec.extend(s.iter().map(|v| fmt(*v)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LScanRow {
    pub l: f64,
    pub value: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E1Result {
    pub value: f64,
    pub l_star: f64,
    pub grid_n: usize,
    pub profile: Profile1D,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub table: Vec<LScanRow>,
}

/// Solver knobs for the 1D problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E1Options {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for E1Options {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

pub(crate) struct Solved {
    pub(crate) q: Vec<f64>,
    pub(crate) row: LScanRow,
}

pub(crate) fn solve_at_l(
    density: &EnergyDensity,
    jump: &CompositeJump,
    grid_n: usize,
    l: f64,
    opts: &E1Options,
) -> Result<Solved> {
    let mut levels = vec![grid_n];
    let mut m = grid_n;
    while m.is_multiple_of(2) && m / 2 >= BASE_LEVEL {
        m /= 2;
        levels.push(m);
    }
    levels.reverse();
    let lb = LbfgsOptions {
        grad_tol: opts.grad_tol,
        max_iter: opts.max_iter,
        ..LbfgsOptions::default()
    };
    let mut q: Option<Vec<f64>> = None;
    let mut total_iter = 0;
    let mut last = None;
    for (li, &n) in levels.iter().enumerate() {
        let obj = Cell1dObjective::new(density, jump, n, l)?;
        let x0 = match q.take() {
            None => obj.ramp(),
            Some(prev) => prolong(
                &prev,
                levels[li - 1],
                obj.basis.k,
                &obj.basis.q_minus,
                &obj.basis.q_plus,
            ),
        };
        let out = minimize(|x, g| obj.value_grad(x, g), x0, &lb, |_, _, _| {});
        total_iter += out.iterations;
        q = Some(out.x.clone());
        last = Some(out);
    }
    let out = last.expect("at least one level");
    Ok(Solved {
        q: q.unwrap_or_default(),
        row: LScanRow {
            l,
            value: out.value,
            converged: out.converged,
            grad_norm: out.grad_norm,
            iterations: total_iter,
        },
    })
}

/// Minimum over `l_grid` of the optimized discrete `R_L`. Unconverged runs
/// are reported through the `converged` flags rather than as errors.
pub fn optimize_e1_report(
    density: &EnergyDensity,
    jump: &CompositeJump,
    grid_n: usize,
    l_grid: &[f64],
    opts: &E1Options,
) -> Result<E1Result> {
    if grid_n < BASE_LEVEL {
        return Err(arg(format!("grid_n must be at least {BASE_LEVEL}")));
    }
    if l_grid.is_empty() {
        return Err(arg("empty L grid"));
    }
    // validates shapes and compatibility up front
    Cell1dObjective::new(density, jump, grid_n, l_grid[0])?;
    let solved: Vec<Solved> = l_grid
        .par_iter()
        .map(|&l| solve_at_l(density, jump, grid_n, l, opts))
        .collect::<Result<Vec<_>>>()?;
    let best = solved
        .iter()
        .map(|s| s.row.value)
        .fold(f64::INFINITY, f64::min);
    // tie-break: smallest L within 1e-9 of the minimum
    let star = solved
        .iter()
        .enumerate()
        .filter(|(_, s)| s.row.value <= best + 1e-9)
        .min_by(|a, b| a.1.row.l.partial_cmp(&b.1.row.l).unwrap())
        .map(|(i, _)| i)
        .expect("nonempty");
    let obj = Cell1dObjective::new(density, jump, grid_n, l_grid[star])?;
    let states = obj.states(&solved[star].q);
    let d = obj.basis.d;
    let profile = Profile1D {
        t: (0..=grid_n)
            .map(|i| -0.5 + i as f64 / grid_n as f64)
            .collect(),
        states: states.chunks(d.max(1)).map(|c| c.to_vec()).collect(),
    };
    let s = &solved[star].row;
    Ok(E1Result {
        value: s.value,
        l_star: s.l,
        grid_n,
        profile,
        iterations: solved.iter().map(|s| s.row.iterations).sum(),
        converged: s.converged,
        grad_norm: s.grad_norm,
        table: solved.into_iter().map(|s| s.row).collect(),
    })
}

/// As [`optimize_e1_report`], but fails if no `L` converged.
pub fn optimize_e1(
    density: &EnergyDensity,
    jump: &CompositeJump,
    grid_n: usize,
    l_grid: &[f64],
    opts: &E1Options,
) -> Result<E1Result> {
    let r = optimize_e1_report(density, jump, grid_n, l_grid, opts)?;
    if r.table.iter().all(|row| !row.converged) {
        return Err(Error::Unconverged {
            iterations: r.iterations,
            best: r.value,
            grad_norm: r.grad_norm,
        });
    }
    Ok(r)
}

/// `(L, R_L)` table, in the order of `l_grid`.
pub fn l_scan_report(
    density: &EnergyDensity,
    jump: &CompositeJump,
    grid_n: usize,
    l_grid: &[f64],
    opts: &E1Options,
) -> Result<Vec<LScanRow>> {
    Ok(optimize_e1(density, jump, grid_n, l_grid, opts)?.table)
}

/// `L ∈ {2⁰, …, 2⁻ᵏ}`.
pub fn geometric_l_grid(k_min: i32, k_max: i32) -> Vec<f64> {
    (k_min..=k_max).map(|k| 2f64.powi(-k)).collect()
}

pub fn write_l_scan_csv<W: Write>(rows: &[LScanRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["L", "R_L", "converged", "grad_norm", "iterations"])?;
    for r in rows {
        wr.write_record([
            fmt(r.l),
            fmt(r.value),
            r.converged.to_string(),
            fmt(r.grad_norm),
            r.iterations.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `∫_a^b 2√W(u) du` by the composite trapezoid rule.
pub fn analytic_e1_modica<W: Fn(f64) -> f64>(
    w: W,
    a: f64,
    b: f64,
    quadrature_n: usize,
) -> Result<f64> {
    if quadrature_n < 1 {
        return Err(arg("quadrature needs at least one interval"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let h = (hi - lo) / quadrature_n as f64;
    let mut vals = Vec::with_capacity(quadrature_n + 1);
    for i in 0..=quadrature_n {
        let u = lo + i as f64 * h;
        let wu = w(u);
        if wu < 0.0 {
            return Err(arg(format!("well is negative at u = {u}")));
        }
        let wt = if i == 0 || i == quadrature_n {
            0.5
        } else {
            1.0
        };
        vals.push(wt * h * 2.0 * wu.sqrt());
    }
    Ok(pairwise_sum(&vals))
}

//! Independent reference computations used to cross-check the solvers.
//!
//! Nothing here reuses the cell solvers' discretizations or optimizer:
//! the brute-force `E₁` uses a midpoint finite-difference energy on a
//! stretched line minimized by accelerated projected gradient steps, and the
//! operator tests recompute divergence and curl with their own stencils.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cellnd::{CellGrid, CellObjective, CellOps, LatticeBasis, PerturbationClass, Ramp};
use crate::error::{arg, Error, Result};
use crate::fields::CompositeJump;
use crate::functionals::{EnergyDensity, Slots};
use crate::poly::{Monomial, Polynomial};
use crate::state::{Block, ConstraintKind, StateLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub reference: f64,
    pub test: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Wall-clock seconds; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime: f64,
}

impl OracleReport {
    pub fn new(
        name: impl Into<String>,
        reference: f64,
        test: f64,
        tolerance: f64,
        runtime: f64,
    ) -> Self {
        let pass = (reference - test).abs() <= tolerance * (1.0 + reference.abs());
        Self {
            name: name.into(),
            reference,
            test,
            tolerance,
            pass,
            runtime,
        }
    }
}

/// Half-length of the stretched line `s ∈ [-S, S]`, i.e. `L = 1/(2S)`.
const STRETCH: f64 = 8.0;

struct LineProblem<'a> {
    density: &'a EnergyDensity,
    jump: &'a CompositeJump,
    n: usize,
    ds: f64,
    /// Per component: projection rows of the admissible subspace, `d x d`.
    proj: Vec<f64>,
}

impl LineProblem<'_> {
    fn energy_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
        let d = self.jump.layout.len();
        let dim = self.jump.dim();
        let nu = &self.jump.nu;
        let mut d1 = vec![0.0; d * dim];
        let mut v = vec![0.0; d];
        let mut g2: Vec<f64> = Vec::new();
        let mut g1 = vec![0.0; d * dim];
        let mut gv = vec![0.0; d];
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut total = 0.0;
        for e in 0..self.n {
            let s_mid = -STRETCH + (e as f64 + 0.5) * self.ds;
            let f: &[f64] = if s_mid >= 0.0 {
                &self.jump.f_plus
            } else {
                &self.jump.f_minus
            };
            for c in 0..d {
                let a = w[e * d + c];
                let b = w[(e + 1) * d + c];
                v[c] = 0.5 * (a + b);
                let slope = (b - a) / self.ds;
                for j in 0..dim {
                    d1[c * dim + j] = slope * nu[j];
                }
            }
            let val = self.density.value_grad(
                &Slots {
                    d2: &[],
                    d1: &d1,
                    v: &v,
                    f,
                },
                &mut g2,
                &mut g1,
                &mut gv,
            );
            total += self.ds * val;
            for c in 0..d {
                let gd: f64 = (0..dim).map(|j| g1[c * dim + j] * nu[j]).sum();
                g[(e + 1) * d + c] += gd + 0.5 * self.ds * gv[c];
                g[e * d + c] += -gd + 0.5 * self.ds * gv[c];
            }
        }
        // boundary nodes are fixed; interior gradients are projected
        for c in 0..d {
            g[c] = 0.0;
            g[self.n * d + c] = 0.0;
        }
        let mut tmp = vec![0.0; d];
        for i in 1..self.n {
            let gi = &mut g[i * d..(i + 1) * d];
            for r in 0..d {
                tmp[r] = (0..d).map(|c| self.proj[r * d + c] * gi[c]).sum();
            }
            gi.copy_from_slice(&tmp);
        }
        total
    }
}

fn subspace_projection(jump: &CompositeJump) -> Vec<f64> {
    let d = jump.layout.len();
    let n = jump.dim();
    let nu = &jump.nu;
    let mut p = vec![0.0; d * d];
    for (kind, off, rows) in jump.layout.iter() {
        match kind {
            ConstraintKind::Unconstrained => {
                for r in 0..rows {
                    p[(off + r) * d + off + r] = 1.0;
                }
            }
            ConstraintKind::CurlFree | ConstraintKind::DivFree => {
                for r in 0..rows {
                    let o = off + r * n;
                    for a in 0..n {
                        for b in 0..n {
                            let nn = nu[a] * nu[b];
                            p[(o + a) * d + o + b] = if kind == ConstraintKind::CurlFree {
                                nn
                            } else if a == b {
                                1.0 - nn
                            } else {
                                -nn
                            };
                        }
                    }
                }
            }
        }
    }
    p
}

/// Slow reference value of `E₁` on `n ≥ 4096` elements.
pub fn brute_force_e1(density: &EnergyDensity, jump: &CompositeJump, n: usize) -> Result<f64> {
    if n < 4096 {
        return Err(arg("brute-force reference needs at least 4096 elements"));
    }
    if density.order != 1 {
        return Err(arg(
            "brute-force reference supports first-order densities only",
        ));
    }
    if density.layout != jump.layout || density.n_f != jump.f_plus.len() {
        return Err(arg("jump does not match the density"));
    }
    jump.check_compatible(1e-9)?;
    let d = jump.layout.len();
    let ds = 2.0 * STRETCH / n as f64;
    let prob = LineProblem {
        density,
        jump,
        n,
        ds,
        proj: subspace_projection(jump),
    };
    let delta = jump.delta();
    let mut w = vec![0.0; (n + 1) * d];
    for i in 0..=n {
        let s = -STRETCH + i as f64 * ds;
        let th = ((s + 1.0) / 2.0).clamp(0.0, 1.0);
        for c in 0..d {
            w[i * d + c] = if i == n {
                jump.v_plus[c]
            } else {
                jump.v_minus[c] + th * delta[c]
            };
        }
    }
    let mut g = vec![0.0; w.len()];
    let e0 = prob.energy_grad(&w, &mut g);
    if e0 == 0.0 {
        return Ok(0.0);
    }
    // largest Hessian eigenvalue by power iteration on gradient differences
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut z: Vec<f64> = (0..w.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut lambda = 1.0;
    let mut gp = vec![0.0; w.len()];
    for _ in 0..40 {
        let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        z.iter_mut().for_each(|v| *v /= nz);
        let h = 1e-6;
        let wp: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a + h * b).collect();
        prob.energy_grad(&wp, &mut gp);
        z = gp.iter().zip(&g).map(|(a, b)| (a - b) / h).collect();
        lambda = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let step = 1.0 / (1.5 * lambda.max(1e-12));
    let mut y = w.clone();
    let mut w_prev = w.clone();
    let mut t = 1.0_f64;
    let mut energy = e0;
    let mut history = vec![e0];
    for it in 0..400_000 {
        let ey = prob.energy_grad(&y, &mut g);
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !ey.is_finite() || ey > 1e3 * (1.0 + e0) {
            return Err(Error::Unconverged {
                iterations: it,
                best: energy,
                grad_norm: gmax,
            });
        }
        if gmax / ds <= 1e-9 {
            return Ok(ey);
        }
        let w_new: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let mut gn = vec![0.0; w.len()];
        let e_new = prob.energy_grad(&w_new, &mut gn);
        // restart momentum when the step points uphill
        let uphill: f64 = g
            .iter()
            .zip(w_new.iter().zip(&w_prev))
            .map(|(a, (b, c))| a * (b - c))
            .sum();
        let t_next = if uphill > 0.0 || e_new > energy {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let beta = if t_next == 1.0 {
            0.0
        } else {
            (t - 1.0) / t_next
        };
        y = w_new
            .iter()
            .zip(&w_prev)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        w_prev = w_new;
        t = t_next;
        energy = e_new;
        history.push(energy);
        if history.len() > 2000 {
            let old = history[history.len() - 2001];
            if (old - energy).abs() <= 1e-13 * energy.abs() {
                return Ok(energy);
            }
        }
    }
    Ok(energy)
}

/// Central-difference check of `f`'s gradient at `x`; reports the worst
/// coordinate error relative to the gradient's max norm.
pub fn fd_gradient_check<F>(
    name: &str,
    f: F,
    x: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<OracleReport>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    if !(1e-8..=1e-4).contains(&step) {
        return Err(arg("finite-difference step must lie in [1e-8, 1e-4]"));
    }
    let start = Instant::now();
    let mut g = vec![0.0; x.len()];
    f(x, &mut g);
    let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut scratch = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    let mut worst = 0.0_f64;
    for k in 0..x.len() {
        let h = step * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let fp = f(&xp, &mut scratch);
        xp[k] = x[k] - h;
        let fm = f(&xp, &mut scratch);
        xp[k] = x[k];
        worst = worst.max(((fp - fm) / (2.0 * h) - g[k]).abs() / scale);
    }
    Ok(OracleReport::new(
        name,
        0.0,
        worst,
        tolerance,
        start.elapsed().as_secs_f64(),
    ))
}

fn sum_of_squares_density(layout: StateLayout) -> Result<EnergyDensity> {
    let d = layout.len();
    let n = layout.dim;
    let nv = d * n + d;
    let terms = (0..d * n)
        .map(|k| {
            let mut e = vec![0; nv];
            e[k] = 2;
            Monomial { coef: 1.0, exps: e }
        })
        .collect();
    EnergyDensity::polynomial(1, layout, 0, Polynomial::new(nv, terms)?)
}

fn diff_periodic(x: &[f64], rows: usize, sizes: &[usize], axis: usize) -> Vec<f64> {
    // own index arithmetic: node (i, t₁, …) in row-major order
    let tc: usize = sizes.iter().product();
    let stride: usize = sizes[axis + 1..].iter().product();
    let nj = sizes[axis];
    let h = 1.0 / nj as f64;
    let mut y = vec![0.0; x.len()];
    for i in 0..=rows {
        for t in 0..tc {
            let k = (t / stride) % nj;
            let up = t - k * stride + ((k + 1) % nj) * stride;
            let dn = t - k * stride + ((k + nj - 1) % nj) * stride;
            y[i * tc + t] = (x[i * tc + up] - x[i * tc + dn]) / (2.0 * h);
        }
    }
    y
}

fn diff_normal(x: &[f64], rows: usize, tc: usize) -> Vec<f64> {
    let h = 1.0 / rows as f64;
    let mut y = vec![0.0; x.len()];
    for i in 0..=rows {
        let ip = if i == rows { rows } else { i + 1 };
        let im = if i == 0 { 0 } else { i - 1 };
        for t in 0..tc {
            y[i * tc + t] = (x[ip * tc + t] - x[im * tc + t]) / (2.0 * h);
        }
    }
    y
}

/// Discrete identities behind the cell parametrizations on a
/// `normal x tangential` grid: divergence and curl of random
/// reconstructions, shift equivariance of the periodic stencils, and
/// adjoint consistency.
pub fn operator_self_test(
    normal: usize,
    tangential: &[usize],
    seed: u64,
) -> Result<Vec<OracleReport>> {
    let n = tangential.len() + 1;
    if !(2..=3).contains(&n) {
        return Err(arg("operator self-test needs 2 or 3 dimensions"));
    }
    let grid = CellGrid {
        normal,
        tangential: tangential.to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut nu = vec![0.0; n];
    nu[0] = 1.0;
    let basis = LatticeBasis::orthonormal(&nu)?;
    let tc: usize = tangential.iter().product();

    // divergence of a random divergence-free reconstruction
    let start = Instant::now();
    let layout = StateLayout::new(
        n,
        vec![Block {
            kind: ConstraintKind::DivFree,
            rows: 1,
        }],
    )?;
    let dens = sum_of_squares_density(layout.clone())?;
    let mut vp = vec![0.0; n];
    vp[1] = 0.5;
    let vm: Vec<f64> = vp.iter().map(|v| -v).collect();
    let jump = CompositeJump::simple(layout, nu.clone(), vp, vm)?;
    let obj = CellObjective::new(
        &dens,
        &jump,
        &basis,
        &grid,
        0.25,
        PerturbationClass::Distribution,
        &Ramp::Quintic,
    )?;
    let x: Vec<f64> = (0..obj.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = obj.states(&x);
    // orthonormal lattice: contravariant components are the physical ones
    let mut div = diff_normal(&z[0], normal, tc);
    for j in 1..n {
        let dj = diff_periodic(&z[j], normal, tangential, j - 1);
        div.iter_mut().zip(&dj).for_each(|(a, b)| *a += b);
    }
    let m = div.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    out.push(OracleReport::new(
        "div-of-divfree-reconstruction",
        0.0,
        m,
        1e-12,
        start.elapsed().as_secs_f64(),
    ));

    // curl of a random curl-free reconstruction
    let start = Instant::now();
    let ag = EnergyDensity::aviles_giga(n)?;
    let jump = CompositeJump::simple(
        ag.layout.clone(),
        nu.clone(),
        nu.clone(),
        nu.iter().map(|v| -v).collect(),
    )?;
    let obj = CellObjective::new(
        &ag,
        &jump,
        &basis,
        &grid,
        0.25,
        PerturbationClass::Distribution,
        &Ramp::Quintic,
    )?;
    let x: Vec<f64> = (0..obj.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = obj.states(&x);
    let deriv = |axis: usize, v: &[f64]| {
        if axis == 0 {
            diff_normal(v, normal, tc)
        } else {
            diff_periodic(v, normal, tangential, axis - 1)
        }
    };
    let mut m = 0.0_f64;
    for a in 0..n {
        for b in a + 1..n {
            let p = deriv(a, &z[b]);
            let q = deriv(b, &z[a]);
            m = p
                .iter()
                .zip(&q)
                .fold(m, |acc, (u, v)| acc.max((u - v).abs()));
        }
    }
    out.push(OracleReport::new(
        "curl-of-curlfree-reconstruction",
        0.0,
        m,
        1e-12,
        start.elapsed().as_secs_f64(),
    ));

    // shift equivariance of the periodic stencil and full-period identity
    let start = Instant::now();
    let ops = CellOps::new(normal, tangential);
    let len = ops.len();
    let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut worst = 0.0_f64;
    for j in 0..n - 1 {
        let shift = |v: &[f64], by: usize| -> Vec<f64> {
            let mut s = vec![0.0; len];
            for i in 0..=normal {
                for t in 0..tc {
                    let mut idx = ops.tang.unflatten(t);
                    idx[j] = (idx[j] + by) % tangential[j];
                    s[i * tc + ops.tang.flatten(&idx)] = v[i * tc + t];
                }
            }
            s
        };
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        ops.dt(j, &x, &mut a);
        ops.dt(j, &shift(&x, 1), &mut b);
        let sa = shift(&a, 1);
        worst = sa
            .iter()
            .zip(&b)
            .fold(worst, |m, (u, v)| m.max((u - v).abs()));
        let full = shift(&x, tangential[j]);
        worst = full
            .iter()
            .zip(&x)
            .fold(worst, |m, (u, v)| m.max((u - v).abs()));
    }
    out.push(OracleReport::new(
        "periodic-wrap",
        0.0,
        worst,
        1e-12,
        start.elapsed().as_secs_f64(),
    ));

    // adjoint consistency: the stencils are antisymmetric
    let start = Instant::now();
    let y: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut worst = 0.0_f64;
    let mut dx = vec![0.0; len];
    let mut dy = vec![0.0; len];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    for axis in 0..n {
        if axis == 0 {
            ops.dn_zero(&x, &mut dx);
            ops.dn_zero(&y, &mut dy);
        } else {
            ops.dt(axis - 1, &x, &mut dx);
            ops.dt(axis - 1, &y, &mut dy);
        }
        let lhs = dot(&dx, &y);
        let rhs = -dot(&x, &dy);
        worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    out.push(OracleReport::new(
        "adjoint-consistency",
        0.0,
        worst,
        1e-12,
        start.elapsed().as_secs_f64(),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (k, xi) in x.iter().enumerate() {
                let a = 1.0 + k as f64;
                v += 0.5 * a * xi * xi + xi;
                g[k] = a * xi + 1.0;
            }
            v
        };
        let x = [0.3, -0.2, 0.7, 1.1];
        let r = fd_gradient_check("quadratic", f, &x, 1e-5, 1e-10).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 3.0 * x[0];
            x[0] * x[0]
        };
        let r = fd_gradient_check("corrupted", f, &[0.5], 1e-6, 1e-5).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn self_test_passes_small_grid() {
        for r in operator_self_test(16, &[16], 1).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }
}

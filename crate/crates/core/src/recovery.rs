//! Recovery sequences and their energies.
//!
//! The primary sequence is the mollified field `ψ_ε`. The modified sequence
//! adds a periodic cell perturbation `σ` in the slab `|s₁| < 1/2` around one
//! flat interface, where `s = J⁻¹ (L/ε)(x - x₀)` are lattice coordinates.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellnd::{
    CellObjective, CellOps, LatticeBasis, PeriodicCellField, PerturbationClass, Ramp,
};
use crate::error::{arg, shape, Result};
use crate::fields::{GraphInterface, PiecewiseField};
use crate::functionals::EnergyDensity;
use crate::mollifier::{
    fmt, profile_p, GridSpec, Kernel, KernelProfile, KernelShape, MollifiedField, NodeSlots,
    SlotSource,
};
use crate::numeric::{invert, pairwise_sum};
use crate::state::ConstraintKind;
use crate::surface::{k_functional, DensityKind, SurfaceQuadrature, SurfaceSolvers};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    #[serde(default)]
    pub kernel: KernelShape,
    pub profile_resolution: usize,
    pub epsilons: Vec<f64>,
    /// Grid spacing is at most `ε / spacing_divisor`.
    pub spacing_divisor: f64,
    pub limit_quadrature: usize,
    pub mean_correction: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            kernel: KernelShape::Bump,
            profile_resolution: 4096,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            spacing_divisor: 16.0,
            limit_quadrature: 4096,
            mean_correction: false,
        }
    }
}

impl RecoveryConfig {
    pub fn check(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(arg("epsilon list must be nonempty and positive"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(arg("epsilon list must be strictly decreasing"));
        }
        if !(self.spacing_divisor >= 16.0) {
            return Err(arg("grid spacing must be at most epsilon/16"));
        }
        Ok(())
    }

    pub fn grid(&self, field: &PiecewiseField, epsilon: f64) -> Result<GridSpec> {
        GridSpec::with_max_spacing(
            &field.domain.lo,
            &field.domain.hi,
            epsilon / self.spacing_divisor,
        )
    }

    /// As [`grid`](Self::grid), refined further so that no physical cell is
    /// coarser than the rescaled cell grid of `cell`.
    pub fn modified_grid(
        &self,
        field: &PiecewiseField,
        epsilon: f64,
        cell: &PeriodicCellField,
    ) -> Result<GridSpec> {
        let scale = epsilon / cell.l;
        let mut h = epsilon / self.spacing_divisor;
        h = h.min(scale / cell.grid.normal as f64);
        for (a, &nj) in cell.basis.tangents.iter().zip(&cell.grid.tangential) {
            let len = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            h = h.min(scale * len / nj as f64);
        }
        GridSpec::with_max_spacing(&field.domain.lo, &field.domain.hi, h)
    }
}

/// Midpoint-rule `(1/ε) ∫ F` over the cell-centred `grid`, streamed.
/// Chunk sums are reduced in a fixed order, independent of worker count.
pub fn energy<S: SlotSource + ?Sized>(
    source: &S,
    density: &EnergyDensity,
    epsilon: f64,
    grid: &GridSpec,
) -> Result<f64> {
    if grid.dim() != source.dim() || source.components() != density.components() {
        return Err(shape("grid, field and density dimensions differ"));
    }
    if source.order() < density.order {
        return Err(arg("field slots do not cover the density order"));
    }
    if !(epsilon > 0.0) {
        return Err(arg("epsilon must be positive"));
    }
    let (n, d, order, n_f) = (
        source.dim(),
        source.components(),
        density.order,
        source.n_f(),
    );
    let total = grid.len();
    let chunks = total.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut x = vec![0.0; n];
            let mut s = NodeSlots::zeros(d, n, order, n_f);
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            let mut vals = Vec::with_capacity(hi - lo);
            for idx in lo..hi {
                grid.node(idx, &mut x);
                source.eval(&x, &mut s)?;
                vals.push(density.value(&s.slots()));
            }
            Ok(pairwise_sum(&vals))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&sums) * grid.cell_volume() / epsilon)
}

/// As [`energy`] after checking that `grid` covers `domain`.
pub fn energy_on<S: SlotSource + ?Sized>(
    source: &S,
    density: &EnergyDensity,
    epsilon: f64,
    grid: &GridSpec,
    domain: &crate::fields::BoxDomain,
) -> Result<f64> {
    let covers = grid.dim() == domain.dim()
        && (0..grid.dim()).all(|a| {
            (grid.lo[a] - domain.lo[a]).abs() <= 1e-12 && (grid.hi[a] - domain.hi[a]).abs() <= 1e-12
        });
    if !covers {
        return Err(arg("grid does not cover the domain"));
    }
    energy(source, density, epsilon, grid)
}

/// Primary sequence `ψ_ε`.
pub fn build_primary<'a>(
    field: &'a PiecewiseField,
    kernel: &'a Kernel,
    profile: &'a KernelProfile,
    epsilon: f64,
    order: usize,
) -> Result<MollifiedField<'a>> {
    MollifiedField::new(field, kernel, profile, epsilon, order)
}

/// Lattice adapted to a flat interface: oriented normal and the graph
/// tangents `e_j + ∂_j g e_axis`, so tangential periods follow `x'`.
pub fn interface_basis(iface: &GraphInterface) -> Result<LatticeBasis> {
    if !iface.g.is_affine() {
        return Err(arg("modified sequences need a flat interface"));
    }
    if iface.dim() < 2 {
        return Err(arg("modified sequences need dimension 2 or 3"));
    }
    let xp = iface.patch.lo.clone();
    let grad = iface.g.gradient(&xp);
    let n = iface.dim();
    let tangents = iface
        .tangential_axes()
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let mut q = vec![0.0; n];
            q[a] = 1.0;
            q[iface.axis] = grad[k];
            q
        })
        .collect();
    LatticeBasis::new(iface.normal(&xp), tangents)
}

/// Interpolates a stored cell perturbation and its lattice derivatives.
struct CellSampler {
    n1: usize,
    sizes: Vec<usize>,
    d: usize,
    n: usize,
    pert: Vec<f64>,
    dpert: Vec<f64>,
    hess: Vec<f64>,
    ops: CellOps,
}

impl CellSampler {
    fn new(cell: &PeriodicCellField, order: usize) -> Self {
        let n = cell.basis.dim();
        let m = n - 1;
        let d = cell.layout.len();
        let ops = CellOps::new(cell.grid.normal, &cell.grid.tangential);
        let len = ops.len();
        let comp: Vec<Vec<f64>> = (0..d)
            .map(|c| (0..len).map(|k| cell.perturbation[k * d + c]).collect())
            .collect();
        let mut dpert = vec![0.0; len * d * m];
        let mut buf = vec![0.0; len];
        let mut dcomp = vec![vec![vec![0.0; len]; m]; d];
        for c in 0..d {
            for j in 0..m {
                ops.dt(j, &comp[c], &mut buf);
                for k in 0..len {
                    dpert[(k * d + c) * m + j] = buf[k];
                }
                dcomp[c][j] = buf.clone();
            }
        }
        let mut hess = Vec::new();
        if order == 2 {
            hess = vec![0.0; len * d * n * n];
            let mut put = |c: usize, a: usize, b: usize, v: &[f64]| {
                for k in 0..len {
                    hess[((k * d + c) * n + a) * n + b] = v[k];
                    hess[((k * d + c) * n + b) * n + a] = v[k];
                }
            };
            for c in 0..d {
                ops.dnn_clamped(&comp[c], &mut buf);
                put(c, 0, 0, &buf);
                for j in 0..m {
                    ops.dn_clamped(&dcomp[c][j], &mut buf);
                    put(c, 0, j + 1, &buf);
                    for k in j..m {
                        if k == j {
                            ops.dtt(j, &comp[c], &mut buf);
                        } else {
                            ops.dt(k, &dcomp[c][j], &mut buf);
                        }
                        put(c, j + 1, k + 1, &buf);
                    }
                }
            }
        }
        Self {
            n1: cell.grid.normal,
            sizes: cell.grid.tangential.clone(),
            d,
            n,
            pert: cell.perturbation.clone(),
            dpert,
            hess,
            ops,
        }
    }

    /// Adds `σ(s)`, `∂_s σ` (`D x N`) and the lattice Hessian; `false`
    /// outside the slab.
    fn sample(&self, s: &[f64], sig: &mut [f64], ds: &mut [f64], hs: &mut [f64]) -> bool {
        if !(s[0].abs() < 0.5) {
            return false;
        }
        let (d, n) = (self.d, self.n);
        let m = n - 1;
        let h1 = self.ops.h1;
        let u = (s[0] + 0.5) / h1;
        let i = (u.floor() as usize).min(self.n1 - 1);
        let xi = u - i as f64;
        // multilinear tangential corners
        let mut base = vec![0usize; m];
        let mut frac = vec![0.0; m];
        for j in 0..m {
            let nj = self.sizes[j] as f64;
            let w = ((s[j + 1] + 0.5) * nj).rem_euclid(nj);
            let k = (w.floor() as usize).min(self.sizes[j] - 1);
            base[j] = k;
            frac[j] = w - k as f64;
        }
        sig.iter_mut().for_each(|v| *v = 0.0);
        ds.iter_mut().for_each(|v| *v = 0.0);
        hs.iter_mut().for_each(|v| *v = 0.0);
        let tc = self.ops.tang.count;
        for corner in 0..(1usize << m) {
            let mut wt = 1.0;
            let mut idx = vec![0usize; m];
            for j in 0..m {
                if corner >> j & 1 == 1 {
                    idx[j] = (base[j] + 1) % self.sizes[j];
                    wt *= frac[j];
                } else {
                    idx[j] = base[j];
                    wt *= 1.0 - frac[j];
                }
            }
            if wt == 0.0 {
                continue;
            }
            let t = self.ops.tang.flatten(&idx);
            let (k0, k1) = (i * tc + t, (i + 1) * tc + t);
            for c in 0..d {
                let (a0, a1) = (self.pert[k0 * d + c], self.pert[k1 * d + c]);
                sig[c] += wt * ((1.0 - xi) * a0 + xi * a1);
                ds[c * n] += wt * (a1 - a0) / h1;
                for j in 0..m {
                    let (b0, b1) = (
                        self.dpert[(k0 * d + c) * m + j],
                        self.dpert[(k1 * d + c) * m + j],
                    );
                    ds[c * n + j + 1] += wt * ((1.0 - xi) * b0 + xi * b1);
                }
                if !self.hess.is_empty() {
                    for ab in 0..n * n {
                        let (h0, h1v) = (
                            self.hess[(k0 * d + c) * n * n + ab],
                            self.hess[(k1 * d + c) * n * n + ab],
                        );
                        hs[c * n * n + ab] += wt * ((1.0 - xi) * h0 + xi * h1v);
                    }
                }
            }
        }
        true
    }
}

/// `u_ε = ψ_ε + σ(J⁻¹ (L/ε)(x - x₀))` near one flat interface.
pub struct ModifiedField<'a> {
    pub primary: MollifiedField<'a>,
    pub interface: usize,
    pub l: f64,
    foot: Vec<f64>,
    jinv: Vec<f64>,
    sampler: CellSampler,
}

/// Builds the modified sequence for interface `iface` with the cell
/// perturbation `cell` (computed in [`interface_basis`]).
pub fn build_modified<'a>(
    field: &'a PiecewiseField,
    iface: usize,
    cell: &PeriodicCellField,
    kernel: &'a Kernel,
    profile: &'a KernelProfile,
    epsilon: f64,
    order: usize,
) -> Result<ModifiedField<'a>> {
    let s = field
        .interfaces
        .get(iface)
        .ok_or_else(|| arg(format!("no interface {iface}")))?;
    let basis = interface_basis(s)?;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    if !close(&basis.nu, &cell.basis.nu)
        || basis
            .tangents
            .iter()
            .zip(&cell.basis.tangents)
            .any(|(a, b)| !close(a, b))
    {
        return Err(arg(
            "cell perturbation was not computed in the interface lattice",
        ));
    }
    if cell.layout != field.layout {
        return Err(shape("cell perturbation layout differs from the field"));
    }
    let l = cell.l;
    let foot = s.point(&s.patch.lo);
    // slabs of other interfaces must stay clear of this one
    let reach = epsilon / (2.0 * l) + 0.5 * epsilon;
    for (k, other) in field.interfaces.iter().enumerate() {
        if k == iface {
            continue;
        }
        for xp in other.sample_patch(16) {
            let x = other.point(&xp);
            let dist: f64 = x
                .iter()
                .zip(&foot)
                .zip(&basis.nu)
                .map(|((a, b), nu)| (a - b) * nu)
                .sum();
            if dist.abs() < reach {
                return Err(arg(format!(
                    "interface {k} overlaps the modification slab of interface {iface}"
                )));
            }
        }
    }
    let n = field.dim();
    let jinv = invert(&basis.matrix(), n).ok_or_else(|| arg("singular lattice"))?;
    Ok(ModifiedField {
        primary: MollifiedField::new(field, kernel, profile, epsilon, order)?,
        interface: iface,
        l,
        foot,
        jinv,
        sampler: CellSampler::new(cell, order),
    })
}

impl ModifiedField<'_> {
    /// Lattice coordinates of `x`.
    pub fn lattice_coords(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let scale = self.l / self.primary.epsilon;
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|r| self.jinv[a * n + r] * scale * (x[r] - self.foot[r]))
                    .sum()
            })
            .collect()
    }
}

impl SlotSource for ModifiedField<'_> {
    fn dim(&self) -> usize {
        self.primary.dim()
    }
    fn components(&self) -> usize {
        self.primary.components()
    }
    fn order(&self) -> usize {
        self.primary.order
    }
    fn n_f(&self) -> usize {
        self.primary.n_f()
    }

    fn eval(&self, x: &[f64], out: &mut NodeSlots) -> Result<()> {
        self.primary.eval(x, out)?;
        let s = self.lattice_coords(x);
        let (n, d) = (self.dim(), self.components());
        let mut sig = vec![0.0; d];
        let mut ds = vec![0.0; d * n];
        let mut hs = vec![
            0.0;
            if self.primary.order == 2 {
                d * n * n
            } else {
                0
            }
        ];
        if !self.sampler.sample(&s, &mut sig, &mut ds, &mut hs) {
            return Ok(());
        }
        let l = self.l;
        for c in 0..d {
            out.v[c] += sig[c];
            for r in 0..n {
                let g: f64 = (0..n).map(|a| self.jinv[a * n + r] * ds[c * n + a]).sum();
                out.d1[c * n + r] += l * g;
            }
            if self.primary.order == 2 {
                for r in 0..n {
                    for q in 0..n {
                        let mut acc = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                acc += self.jinv[a * n + r]
                                    * hs[c * n * n + a * n + b]
                                    * self.jinv[b * n + q];
                            }
                        }
                        out.d2[(c * n + r) * n + q] += l * l * acc;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Smooth bump `λ` on a box with `Σ λ · vol = 1` on a given grid.
#[derive(Debug, Clone)]
struct BoxBump {
    center: Vec<f64>,
    width: Vec<f64>,
    scale: f64,
}

impl BoxBump {
    fn factor(tau: f64) -> (f64, f64, f64) {
        let q = 0.25 - tau * tau;
        if q <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let b = (-1.0 / q).exp();
        let g1 = -2.0 * tau / (q * q);
        let g2 = -2.0 / (q * q) - 8.0 * tau * tau / (q * q * q);
        (b, b * g1, b * (g1 * g1 + g2))
    }

    /// `(λ, ∇λ, ∇²λ)` at `x`.
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = x.len();
        let f: Vec<(f64, f64, f64)> = (0..n)
            .map(|a| {
                let (b, b1, b2) = Self::factor((x[a] - self.center[a]) / self.width[a]);
                (b, b1 / self.width[a], b2 / (self.width[a] * self.width[a]))
            })
            .collect();
        let val: f64 = f.iter().map(|t| t.0).product::<f64>() * self.scale;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut p = self.scale;
                for (k, t) in f.iter().enumerate() {
                    p *= if k == a && k == b {
                        t.2
                    } else if k == a || k == b {
                        t.1
                    } else {
                        t.0
                    };
                }
                hess[a * n + b] = p;
            }
            let mut p = self.scale;
            for (k, t) in f.iter().enumerate() {
                p *= if k == a { t.1 } else { t.0 };
            }
            grad[a] = p;
        }
        (val, grad, hess)
    }
}

/// Adds `λ(x) d_ε` to unconstrained components so that the grid mean of the
/// field equals that of the piecewise-constant data.
pub struct MeanCorrected<'a, S: SlotSource> {
    pub inner: &'a S,
    pub shift: Vec<f64>,
    bump: BoxBump,
    epsilon: f64,
}

impl<'a, S: SlotSource> MeanCorrected<'a, S> {
    pub fn new(
        inner: &'a S,
        field: &PiecewiseField,
        epsilon: f64,
        grid: &GridSpec,
    ) -> Result<Self> {
        let n = field.dim();
        let d = field.layout.len();
        let mut bump = BoxBump {
            center: (0..n)
                .map(|a| 0.5 * (field.domain.lo[a] + field.domain.hi[a]))
                .collect(),
            width: field.domain.widths(),
            scale: 1.0,
        };
        let total = grid.len();
        let chunks = total.div_ceil(CHUNK);
        let parts: Vec<(Vec<f64>, f64)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut x = vec![0.0; n];
                let mut s = NodeSlots::zeros(d, n, inner.order(), inner.n_f());
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(total);
                let mut diff = vec![Vec::with_capacity(hi - lo); d];
                let mut lam = Vec::with_capacity(hi - lo);
                for idx in lo..hi {
                    grid.node(idx, &mut x);
                    inner.eval(&x, &mut s)?;
                    let (v0, _) = field.value_at(&x)?;
                    for c in 0..d {
                        diff[c].push(v0[c] - s.v[c]);
                    }
                    lam.push(bump.eval(&x).0);
                }
                Ok((
                    diff.iter().map(|v| pairwise_sum(v)).collect(),
                    pairwise_sum(&lam),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let vol = grid.cell_volume();
        let lam_total = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>()) * vol;
        bump.scale = 1.0 / lam_total;
        let kinds = field.layout.component_kinds();
        let shift = (0..d)
            .map(|c| {
                if kinds[c] == ConstraintKind::Unconstrained {
                    pairwise_sum(&parts.iter().map(|p| p.0[c]).collect::<Vec<_>>()) * vol
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            inner,
            shift,
            bump,
            epsilon,
        })
    }
}

impl<S: SlotSource> SlotSource for MeanCorrected<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn components(&self) -> usize {
        self.inner.components()
    }
    fn order(&self) -> usize {
        self.inner.order()
    }
    fn n_f(&self) -> usize {
        self.inner.n_f()
    }

    fn eval(&self, x: &[f64], out: &mut NodeSlots) -> Result<()> {
        self.inner.eval(x, out)?;
        let (lam, grad, hess) = self.bump.eval(x);
        let n = x.len();
        let e = self.epsilon;
        for (c, &sh) in self.shift.iter().enumerate() {
            if sh == 0.0 {
                continue;
            }
            out.v[c] += lam * sh;
            for r in 0..n {
                out.d1[c * n + r] += e * sh * grad[r];
            }
            if !out.d2.is_empty() {
                for rq in 0..n * n {
                    out.d2[c * n * n + rq] += e * e * sh * hess[rq];
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    Primary,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epsilon: f64,
    pub energy: f64,
    pub predicted: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub kind: SequenceKind,
    pub points: Vec<TracePoint>,
    pub predicted: f64,
    pub extrapolated: f64,
    pub extrapolated_gap: f64,
    /// Empirical convergence rate from the last three points.
    pub rate: Option<f64>,
    pub monotone: bool,
}

impl EnergyTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epsilon", "energy", "predicted", "gap"])?;
        for p in &self.points {
            wr.write_record([fmt(p.epsilon), fmt(p.energy), fmt(p.predicted), fmt(p.gap)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn rel_gap(value: f64, predicted: f64) -> f64 {
    if predicted == 0.0 {
        value.abs()
    } else {
        (value - predicted) / predicted.abs()
    }
}

/// Least-squares line through the last (up to) three points, evaluated at
/// `ε = 0`.
pub fn richardson(eps: &[f64], vals: &[f64]) -> f64 {
    let k = eps.len().min(3);
    let (e, v) = (&eps[eps.len() - k..], &vals[vals.len() - k..]);
    if k == 1 {
        return v[0];
    }
    let (a, _) = crate::numeric::linear_fit(e, v);
    a
}

fn empirical_rate(eps: &[f64], vals: &[f64]) -> Option<f64> {
    let k = eps.len();
    if k < 3 {
        return None;
    }
    let d1 = vals[k - 2] - vals[k - 3];
    let d2 = vals[k - 1] - vals[k - 2];
    if d1 == 0.0 || d2 == 0.0 || d1.signum() != d2.signum() {
        return None;
    }
    Some((d1 / d2).ln() / (eps[k - 2] / eps[k - 1]).ln())
}

/// Cell perturbation attached to one interface for the modified sequence.
#[derive(Debug, Clone)]
pub struct CellPerturbation {
    pub interface: usize,
    pub cell: PeriodicCellField,
}

/// `H(σ, L)`: cell energy of the kernel ramp plus the stored perturbation.
pub fn cell_prediction(
    field: &PiecewiseField,
    density: &EnergyDensity,
    profile: &KernelProfile,
    pert: &CellPerturbation,
) -> Result<f64> {
    let s = field
        .interfaces
        .get(pert.interface)
        .ok_or_else(|| arg(format!("no interface {}", pert.interface)))?;
    let xp: Vec<f64> = s
        .patch
        .lo
        .iter()
        .zip(&s.patch.hi)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let jump = field.trace_pair(pert.interface, &xp)?;
    let cell = &pert.cell;
    let obj = CellObjective::new(
        density,
        &jump,
        &cell.basis,
        &cell.grid,
        cell.l,
        PerturbationClass::Distribution,
        &Ramp::Kernel(profile.clone()),
    )?;
    let d = cell.layout.len();
    let len = obj.ops.len();
    let tc = obj.ops.tang.count;
    let z: Vec<Vec<f64>> = (0..d)
        .map(|c| {
            (0..len)
                .map(|k| obj.ramp_nodes[(k / tc) * d + c] + cell.perturbation[k * d + c])
                .collect()
        })
        .collect();
    Ok(obj.energy_of_states(&z).0)
}

/// Energies along the `ε` list with the predicted limit.
pub fn epsilon_scan(
    field: &PiecewiseField,
    density: &EnergyDensity,
    config: &RecoveryConfig,
    modified: Option<&CellPerturbation>,
) -> Result<EnergyTrace> {
    config.check()?;
    let kernel = Kernel::new(config.kernel, field.dim())?;
    let profile = profile_p(&kernel, config.profile_resolution)?;
    let solvers = SurfaceSolvers {
        profile: Some(profile.clone()),
        limit_quadrature: config.limit_quadrature,
        ..SurfaceSolvers::default()
    };
    let surf = k_functional(field, density, DensityKind::KernelLimit, &solvers)?;
    let predicted = match modified {
        None => surf.total,
        Some(p) => {
            let s = &field.interfaces[p.interface];
            let measure = SurfaceQuadrature::new(s, 8, 1).measure();
            let h = cell_prediction(field, density, &profile, p)?;
            let others: Vec<f64> = surf
                .interfaces
                .iter()
                .filter(|c| c.index != p.interface)
                .map(|c| c.value)
                .collect();
            h * measure + pairwise_sum(&others)
        }
    };
    let order = density.order;
    let energies: Vec<f64> = config
        .epsilons
        .par_iter()
        .map(|&eps| {
            let grid = match modified {
                None => config.grid(field, eps)?,
                Some(p) => config.modified_grid(field, eps, &p.cell)?,
            };
            match modified {
                None => {
                    let src = build_primary(field, &kernel, &profile, eps, order)?;
                    if config.mean_correction {
                        let mc = MeanCorrected::new(&src, field, eps, &grid)?;
                        energy_on(&mc, density, eps, &grid, &field.domain)
                    } else {
                        energy_on(&src, density, eps, &grid, &field.domain)
                    }
                }
                Some(p) => {
                    let src =
                        build_modified(field, p.interface, &p.cell, &kernel, &profile, eps, order)?;
                    energy_on(&src, density, eps, &grid, &field.domain)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<TracePoint> = config
        .epsilons
        .iter()
        .zip(&energies)
        .map(|(&epsilon, &energy)| TracePoint {
            epsilon,
            energy,
            predicted,
            gap: rel_gap(energy, predicted),
        })
        .collect();
    let extrapolated = richardson(&config.epsilons, &energies);
    let scale = energies.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * (1.0 + scale);
    let diffs: Vec<f64> = energies.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = diffs.iter().all(|&d| d <= tol) || diffs.iter().all(|&d| d >= -tol);
    Ok(EnergyTrace {
        kind: if modified.is_some() {
            SequenceKind::Modified
        } else {
            SequenceKind::Primary
        },
        points,
        predicted,
        extrapolated,
        extrapolated_gap: rel_gap(extrapolated, predicted),
        rate: empirical_rate(&config.epsilons, &energies),
        monotone,
    })
}

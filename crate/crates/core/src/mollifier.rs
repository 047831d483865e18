//! Radial mollifiers, their hyperplane-slice profiles and the mollified
//! piecewise-constant field.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::fields::{CompositeJump, PiecewiseField};
use crate::functionals::{EnergyDensity, Slots};
use crate::numeric::{composite_gl, gauss_legendre_unit, pairwise_sum, sphere_area};

const A: f64 = 0.25;

/// Radial profile family `ω` on `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
#[derive(Default)]
pub enum KernelShape {
    /// `exp(-1 / (1/4 - r²))`
    #[default]
    Bump,
    /// `(1/4 - r²)^power`, `power >= 2`
    Polynomial { power: u32 },
}

/// Normalized radial kernel `η(z) = c ω(|z|)` in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub shape: KernelShape,
    pub dim: usize,
    pub norm: f64,
}

impl Kernel {
    pub fn new(shape: KernelShape, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(arg("kernel dimension must be 1, 2 or 3"));
        }
        if let KernelShape::Polynomial { power } = shape {
            if power < 2 {
                return Err(arg("polynomial kernel needs power >= 2"));
            }
        }
        let mut k = Self {
            shape,
            dim,
            norm: 1.0,
        };
        let d = dim as i32;
        let mass = sphere_area(dim) * composite_gl(|r| k.raw(r) * r.powi(d - 1), 0.0, 0.5, 512, 8);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Construction("kernel has no mass".into()));
        }
        k.norm = 1.0 / mass;
        Ok(k)
    }

    pub fn bump(dim: usize) -> Result<Self> {
        Self::new(KernelShape::Bump, dim)
    }

    fn raw(&self, r: f64) -> f64 {
        let u = A - r * r;
        if u <= 0.0 {
            return 0.0;
        }
        match self.shape {
            KernelShape::Bump => (-1.0 / u).exp(),
            KernelShape::Polynomial { power } => u.powi(power as i32),
        }
    }

    /// `ω(r)`.
    pub fn omega(&self, r: f64) -> f64 {
        self.norm * self.raw(r)
    }

    /// `ω'(r) / r`, smooth through `r = 0`.
    pub fn w1(&self, r: f64) -> f64 {
        let u = A - r * r;
        if u <= 0.0 {
            return 0.0;
        }
        self.norm
            * match self.shape {
                KernelShape::Bump => -2.0 * (-1.0 / u).exp() / (u * u),
                KernelShape::Polynomial { power } => -2.0 * power as f64 * u.powi(power as i32 - 1),
            }
    }

    /// `(d/dr w1)(r) / r`.
    pub fn w2(&self, r: f64) -> f64 {
        let u = A - r * r;
        if u <= 0.0 {
            return 0.0;
        }
        self.norm
            * match self.shape {
                KernelShape::Bump => {
                    let om = (-1.0 / u).exp();
                    let w1 = -2.0 * om / (u * u);
                    -2.0 * w1 / (u * u) - 8.0 * om / (u * u * u)
                }
                KernelShape::Polynomial { power } => {
                    let k = power as f64;
                    4.0 * k * (k - 1.0) * u.powi(power as i32 - 2)
                }
            }
    }

    /// `η(z)`.
    pub fn eta(&self, z: &[f64]) -> f64 {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.omega(r)
    }

    /// Slice integral `p(t)` of `η` over the hyperplane `{z·e = t}`.
    pub fn slice(&self, t: f64) -> f64 {
        let t = t.abs();
        if t >= 0.5 {
            return 0.0;
        }
        if self.dim == 1 {
            return self.omega(t);
        }
        let rho = (A - t * t).sqrt();
        let d = self.dim as i32;
        sphere_area(self.dim - 1)
            * composite_gl(
                |s| self.omega((t * t + s * s).sqrt()) * s.powi(d - 2),
                0.0,
                rho,
                16,
                8,
            )
    }

    /// `p'(t)`.
    pub fn slice_derivative(&self, t: f64) -> f64 {
        if t.abs() >= 0.5 {
            return 0.0;
        }
        if self.dim == 1 {
            return t * self.w1(t.abs());
        }
        let rho = (A - t * t).sqrt();
        let d = self.dim as i32;
        sphere_area(self.dim - 1)
            * t
            * composite_gl(
                |s| self.w1((t * t + s * s).sqrt()) * s.powi(d - 2),
                0.0,
                rho,
                16,
                8,
            )
    }
}

/// Tabulated slice profile `p` with its cumulative `P` on the uniform grid
/// `t_i = -1/2 + i / resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProfile {
    pub resolution: usize,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub dp: Vec<f64>,
    pub cum: Vec<f64>,
    /// Quadrature value of `∫ p` before normalization of `P`.
    pub mass: f64,
}

/// Slice profile of `kernel` at the given resolution (even, at least 64).
pub fn profile_p(kernel: &Kernel, resolution: usize) -> Result<KernelProfile> {
    if resolution < 64 || !resolution.is_multiple_of(2) {
        return Err(arg("profile resolution must be an even number >= 64"));
    }
    let r = resolution;
    let h = 1.0 / r as f64;
    let half = r / 2;
    let node = |i: usize| (i as f64 - half as f64) * h;
    // left half including the centre; mirrored for exact evenness
    let left: Vec<(f64, f64)> = (0..=half)
        .into_par_iter()
        .map(|i| {
            let t = node(i);
            (kernel.slice(t), kernel.slice_derivative(t))
        })
        .collect();
    let mids: Vec<f64> = (0..half)
        .into_par_iter()
        .map(|i| kernel.slice(node(i) + 0.5 * h))
        .collect();
    let mut p = vec![0.0; r + 1];
    let mut dp = vec![0.0; r + 1];
    for i in 0..=half {
        p[i] = left[i].0;
        p[r - i] = left[i].0;
        dp[i] = left[i].1;
        dp[r - i] = -left[i].1;
    }
    dp[half] = 0.0;
    p[0] = 0.0;
    p[r] = 0.0;
    let mut partial = vec![0.0; half + 1];
    for i in 0..half {
        partial[i + 1] = partial[i] + h / 6.0 * (p[i] + 4.0 * mids[i] + p[i + 1]);
    }
    let total = 2.0 * partial[half];
    let mut cum = vec![0.0; r + 1];
    for i in 0..=half {
        cum[i] = partial[i] / total;
        cum[r - i] = 1.0 - cum[i];
    }
    cum[half] = 0.5;
    Ok(KernelProfile {
        resolution: r,
        t: (0..=r).map(node).collect(),
        p,
        dp,
        cum,
        mass: total,
    })
}

impl KernelProfile {
    fn locate(&self, s: f64) -> (usize, f64) {
        // s in [0, 1]
        let x = s * self.resolution as f64;
        let i = (x.floor() as usize).min(self.resolution - 1);
        (i, x - i as f64)
    }

    /// `p(t)`, exactly even and zero outside `(-1/2, 1/2)`.
    pub fn p_at(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 0.5 {
            return 0.0;
        }
        let h = 1.0 / self.resolution as f64;
        let (i, u) = self.locate(a + 0.5);
        hermite(
            self.p[i],
            self.p[i + 1],
            self.dp[i] * h,
            self.dp[i + 1] * h,
            u,
        )
    }

    /// `p'(t)`, exactly odd.
    pub fn dp_at(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 0.5 {
            return 0.0;
        }
        let (i, u) = self.locate(a + 0.5);
        let v = (1.0 - u) * self.dp[i] + u * self.dp[i + 1];
        if t < 0.0 {
            -v
        } else {
            v
        }
    }

    /// `P(t) = ∫_{-∞}^t p`, with `P(-t) = 1 - P(t)` exactly.
    pub fn cum_at(&self, t: f64) -> f64 {
        if t <= -0.5 {
            return 0.0;
        }
        if t >= 0.5 {
            return 1.0;
        }
        if t > 0.0 {
            return 1.0 - self.cum_at(-t);
        }
        let h = 1.0 / self.resolution as f64;
        let (i, u) = self.locate(t + 0.5);
        hermite(
            self.cum[i],
            self.cum[i + 1],
            self.p[i] * h,
            self.p[i + 1] * h,
            u,
        )
    }

    /// CSV with columns `t, p, P`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "p", "P"])?;
        for i in 0..=self.resolution {
            wr.write_record([fmt(self.t[i]), fmt(self.p[i]), fmt(self.cum[i])])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn hermite(y0: f64, y1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * m0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * m1
}

/// `Γ(t) = P(t) v⁻ + (1 - P(t)) v⁺`.
pub fn gamma(profile: &KernelProfile, jump: &CompositeJump, t: f64) -> Vec<f64> {
    let c = profile.cum_at(t);
    if c == 0.0 {
        return jump.v_plus.clone();
    }
    if c == 1.0 {
        return jump.v_minus.clone();
    }
    jump.v_minus
        .iter()
        .zip(&jump.v_plus)
        .map(|(m, p)| p + c * (m - p))
        .collect()
}

/// CSV of `Γ` on `samples + 1` uniform points of `[-1/2, 1/2]`, columns
/// `t, gamma0, …`.
pub fn write_gamma_csv<W: Write>(
    profile: &KernelProfile,
    jump: &CompositeJump,
    samples: usize,
    w: W,
) -> Result<()> {
    if samples == 0 {
        return Err(arg("gamma table needs at least one interval"));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..jump.v_plus.len()).map(|c| format!("gamma{c}")));
    wr.write_record(&header)?;
    for i in 0..=samples {
        let t = -0.5 + i as f64 / samples as f64;
        let mut rec = vec![fmt(t)];
        rec.extend(gamma(profile, jump, t).into_iter().map(fmt));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// `t ↦ Γ(t)` for a fixed jump.
pub fn gamma_profile<'a>(
    profile: &'a KernelProfile,
    jump: &'a CompositeJump,
) -> impl Fn(f64) -> Vec<f64> + 'a {
    move |t| gamma(profile, jump, t)
}

/// `a` for `t > 0`, `b` for `t < 0`; `t = 0` takes the `t > 0` branch.
pub fn zeta<'a, T: ?Sized>(t: f64, a: &'a T, b: &'a T) -> &'a T {
    if t >= 0.0 {
        a
    } else {
        b
    }
}

/// `∫ F(p Δ⊗ν, Γ, ζ(t, f⁻, f⁺)) dt` over `[-1/2, 1/2]` by the composite
/// trapezoid rule with `quadrature` intervals. Second-order densities get
/// the slot `-p'(t) Δ⊗ν⊗ν`.
pub fn limit_surface_density(
    density: &EnergyDensity,
    profile: &KernelProfile,
    jump: &CompositeJump,
    quadrature: usize,
) -> Result<f64> {
    if density.layout != jump.layout {
        return Err(shape("jump layout does not match the density"));
    }
    if jump.f_plus.len() != density.n_f {
        return Err(shape("jump f values do not match the density"));
    }
    if quadrature < 2 {
        return Err(arg("quadrature needs at least two intervals"));
    }
    let n = jump.dim();
    let d = density.components();
    let delta = jump.delta();
    let h = 1.0 / quadrature as f64;
    let vals: Vec<f64> = (0..quadrature + 1)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let t = -0.5 + i as f64 * h;
            let p = profile.p_at(t);
            let mut d1 = vec![0.0; d * n];
            for c in 0..d {
                for j in 0..n {
                    d1[c * n + j] = p * delta[c] * jump.nu[j];
                }
            }
            let mut d2 = vec![0.0; density.d2_len()];
            if density.order == 2 {
                let dp = profile.dp_at(t);
                for c in 0..d {
                    for j in 0..n {
                        for k in 0..n {
                            d2[(c * n + j) * n + k] = -dp * delta[c] * jump.nu[j] * jump.nu[k];
                        }
                    }
                }
            }
            let v = gamma(profile, jump, t);
            let f = zeta(t, &jump.f_minus[..], &jump.f_plus[..]);
            let w = if i == 0 || i == quadrature {
                0.5 * h
            } else {
                h
            };
            w * density.value(&Slots {
                d2: &d2,
                d1: &d1,
                v: &v,
                f,
            })
        })
        .collect();
    Ok(pairwise_sum(&vals))
}

/// Cell-centred tensor grid over the box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() {
            return Err(shape("grid corners and counts differ in dimension"));
        }
        if n.contains(&0) || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(arg(
                "grid needs a nonempty box and at least one node per axis",
            ));
        }
        Ok(Self { lo, hi, n })
    }

    /// Grid over the box with spacing at most `h_max` on every axis.
    pub fn with_max_spacing(lo: &[f64], hi: &[f64], h_max: f64) -> Result<Self> {
        let n = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| ((b - a) / h_max * (1.0 - 1e-12)).ceil().max(1.0) as usize)
            .collect();
        Self::new(lo.to_vec(), hi.to_vec(), n)
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(&self.n)
            .map(|((a, b), k)| (b - a) / *k as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Node coordinates of the flat index `idx` (first axis slowest).
    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let h = self.spacing();
        let mut rem = idx;
        for a in (0..self.dim()).rev() {
            let i = rem % self.n[a];
            rem /= self.n[a];
            out[a] = self.lo[a] + (i as f64 + 0.5) * h[a];
        }
    }
}

/// Pointwise values of a field and its scaled derivatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeSlots {
    pub v: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub f: Vec<f64>,
}

impl NodeSlots {
    pub fn zeros(d: usize, n: usize, order: usize, n_f: usize) -> Self {
        Self {
            v: vec![0.0; d],
            d1: vec![0.0; d * n],
            d2: vec![0.0; if order == 2 { d * n * n } else { 0 }],
            f: vec![0.0; n_f],
        }
    }

    pub fn slots(&self) -> Slots<'_> {
        Slots {
            d2: &self.d2,
            d1: &self.d1,
            v: &self.v,
            f: &self.f,
        }
    }
}

/// A field that can be sampled pointwise with `ε`-scaled derivative slots.
pub trait SlotSource: Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    fn order(&self) -> usize;
    fn n_f(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut NodeSlots) -> Result<()>;
}

/// Quadrature rule on the ball `B_{1/2}` carrying `η`, `∇η` and `∇²η`.
#[derive(Debug, Clone)]
struct BallRule {
    z: Vec<f64>,
    w_eta: Vec<f64>,
    w_grad: Vec<f64>,
    w_hess: Vec<f64>,
}

impl BallRule {
    fn new(kernel: &Kernel) -> Self {
        let n = kernel.dim;
        let mut pts: Vec<(Vec<f64>, f64)> = Vec::new();
        match n {
            1 => {
                let (x, w) = gauss_legendre_unit(96);
                for (xi, wi) in x.iter().zip(&w) {
                    pts.push((vec![xi - 0.5], *wi));
                }
            }
            2 => {
                let (r, wr) = gauss_legendre_unit(40);
                let m = 160;
                for (ri, wri) in r.iter().zip(&wr) {
                    let rr = 0.5 * ri;
                    for k in 0..m {
                        let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                        pts.push((
                            vec![rr * th.cos(), rr * th.sin()],
                            0.5 * wri * rr * 2.0 * std::f64::consts::PI / m as f64,
                        ));
                    }
                }
            }
            _ => {
                let (r, wr) = gauss_legendre_unit(24);
                let (c, wc) = gauss_legendre_unit(24);
                let m = 48;
                for (ri, wri) in r.iter().zip(&wr) {
                    let rr = 0.5 * ri;
                    for (ci, wci) in c.iter().zip(&wc) {
                        let ct = 2.0 * ci - 1.0;
                        let st = (1.0 - ct * ct).sqrt();
                        for k in 0..m {
                            let ph = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                            let w = 0.5 * wri * rr * rr * 2.0 * wci * 2.0 * std::f64::consts::PI
                                / m as f64;
                            pts.push((vec![rr * st * ph.cos(), rr * st * ph.sin(), rr * ct], w));
                        }
                    }
                }
            }
        }
        let mut rule = BallRule {
            z: Vec::with_capacity(pts.len() * n),
            w_eta: Vec::with_capacity(pts.len()),
            w_grad: Vec::with_capacity(pts.len() * n),
            w_hess: Vec::with_capacity(pts.len() * n * n),
        };
        for (z, w) in pts {
            let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (om, w1, w2) = (kernel.omega(r), kernel.w1(r), kernel.w2(r));
            rule.w_eta.push(w * om);
            for j in 0..n {
                rule.w_grad.push(w * w1 * z[j]);
            }
            for j in 0..n {
                for k in 0..n {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    rule.w_hess.push(w * (w1 * delta + w2 * z[j] * z[k]));
                }
            }
            rule.z.extend(z);
        }
        rule
    }

    fn len(&self) -> usize {
        self.w_eta.len()
    }
}

#[derive(Debug, Clone)]
struct InterfaceInfo {
    affine: bool,
    /// Conservative bound on `√(1 + |∇g|²)` over the patch.
    reach: f64,
}

/// `ψ_ε = η_ε * v` for a piecewise-constant field, evaluated pointwise.
///
/// Nodes near exactly one flat interface use the closed form
/// `v⁻ + Δ P(d/ε)`; other nodes within `ε/2` of an interface use ball
/// quadrature of `v(x + εz) - v(x)`.
pub struct MollifiedField<'a> {
    pub field: &'a PiecewiseField,
    pub kernel: &'a Kernel,
    pub profile: &'a KernelProfile,
    pub epsilon: f64,
    pub order: usize,
    ball: BallRule,
    info: Vec<InterfaceInfo>,
}

impl<'a> MollifiedField<'a> {
    pub fn new(
        field: &'a PiecewiseField,
        kernel: &'a Kernel,
        profile: &'a KernelProfile,
        epsilon: f64,
        order: usize,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(arg("epsilon must be positive"));
        }
        if kernel.dim != field.dim() {
            return Err(shape("kernel dimension differs from field dimension"));
        }
        let info = field
            .interfaces
            .iter()
            .map(|s| {
                let affine = s.g.is_affine();
                let mut reach: f64 = 1.0;
                for xp in s.sample_patch(12) {
                    reach = reach.max(s.area_factor(&xp));
                }
                if !affine {
                    reach *= 1.25;
                }
                InterfaceInfo { affine, reach }
            })
            .collect();
        Ok(Self {
            field,
            kernel,
            profile,
            epsilon,
            order,
            ball: BallRule::new(kernel),
            info,
        })
    }

    /// Interfaces whose `ε/2`-neighbourhood may contain `x`.
    pub fn nearby(&self, x: &[f64]) -> Vec<usize> {
        let half = 0.5 * self.epsilon;
        let mut out = Vec::new();
        for (i, s) in self.field.interfaces.iter().enumerate() {
            let off = s.vertical_offset(x);
            let hit = if self.info[i].affine {
                let xp = s.tangential(x);
                off.abs() / s.area_factor(&xp) < half
            } else {
                off.abs() < half * self.info[i].reach + 1e-14
            };
            if hit {
                out.push(i);
            }
        }
        out
    }

    fn value_at(&self, x: &[f64]) -> Result<&[f64]> {
        Ok(self.field.value_at(x)?.0)
    }
}

impl SlotSource for MollifiedField<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn components(&self) -> usize {
        self.field.layout.len()
    }
    fn order(&self) -> usize {
        self.order
    }
    fn n_f(&self) -> usize {
        self.field.n_f
    }

    fn eval(&self, x: &[f64], out: &mut NodeSlots) -> Result<()> {
        let n = self.dim();
        let d = self.components();
        let (v0, f0) = self.field.value_at(x)?;
        out.f.copy_from_slice(f0);
        out.d1.iter_mut().for_each(|t| *t = 0.0);
        out.d2.iter_mut().for_each(|t| *t = 0.0);
        let near = self.nearby(x);
        if near.is_empty() {
            out.v.copy_from_slice(v0);
            return Ok(());
        }
        if near.len() == 1 && self.info[near[0]].affine {
            let i = near[0];
            let s = &self.field.interfaces[i];
            let xp = s.tangential(x);
            let c = s.area_factor(&xp);
            let dist = s.vertical_offset(x) / c;
            let nu = s.raw_normal(&xp);
            let mut sides = self.field.raw_sides(x);
            sides[i] = 1;
            let up = self
                .field
                .region_for_sides(&sides)
                .ok_or_else(|| Error::Domain(format!("no region above interface {i} at {x:?}")))?;
            sides[i] = -1;
            let down = self
                .field
                .region_for_sides(&sides)
                .ok_or_else(|| Error::Domain(format!("no region below interface {i} at {x:?}")))?;
            let (vu, vd) = (
                &self.field.regions[up].value,
                &self.field.regions[down].value,
            );
            let s_ = dist / self.epsilon;
            let cp = self.profile.cum_at(s_);
            let p = self.profile.p_at(s_);
            for c in 0..d {
                let delta = vu[c] - vd[c];
                out.v[c] = vd[c] + delta * cp;
                for j in 0..n {
                    out.d1[c * n + j] = delta * p * nu[j];
                }
            }
            if self.order == 2 {
                let dp = self.profile.dp_at(s_);
                for c in 0..d {
                    let delta = vu[c] - vd[c];
                    for j in 0..n {
                        for k in 0..n {
                            out.d2[(c * n + j) * n + k] = delta * dp * nu[j] * nu[k];
                        }
                    }
                }
            }
            return Ok(());
        }
        // ball quadrature with the constant part subtracted
        let m = self.ball.len();
        let mut y = vec![0.0; n];
        let mut acc_v = vec![0.0; d];
        let mut acc_g = vec![0.0; d * n];
        let mut acc_h = vec![0.0; d * n * n];
        for k in 0..m {
            for j in 0..n {
                y[j] = x[j] + self.epsilon * self.ball.z[k * n + j];
            }
            let vy = self.value_at(&y)?;
            for c in 0..d {
                let diff = vy[c] - v0[c];
                if diff == 0.0 {
                    continue;
                }
                acc_v[c] += self.ball.w_eta[k] * diff;
                for j in 0..n {
                    acc_g[c * n + j] -= self.ball.w_grad[k * n + j] * diff;
                }
                if self.order == 2 {
                    for jk in 0..n * n {
                        acc_h[c * n * n + jk] += self.ball.w_hess[k * n * n + jk] * diff;
                    }
                }
            }
        }
        for c in 0..d {
            out.v[c] = v0[c] + acc_v[c];
        }
        out.d1.copy_from_slice(&acc_g);
        if self.order == 2 {
            out.d2.copy_from_slice(&acc_h);
        }
        Ok(())
    }
}

/// Sampled field with slots on a grid; arrays are node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub dim: usize,
    pub components: usize,
    pub order: usize,
    pub n_f: usize,
    pub v: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub f: Vec<f64>,
}

impl GridField {
    /// Samples `source` at every grid node.
    pub fn sample<S: SlotSource + ?Sized>(source: &S, grid: &GridSpec) -> Result<Self> {
        if grid.dim() != source.dim() {
            return Err(shape("grid dimension differs from field dimension"));
        }
        let (n, d, order, n_f) = (
            source.dim(),
            source.components(),
            source.order(),
            source.n_f(),
        );
        let nodes: Vec<NodeSlots> = (0..grid.len())
            .into_par_iter()
            .with_min_len(1024)
            .map(|idx| {
                let mut x = vec![0.0; n];
                grid.node(idx, &mut x);
                let mut s = NodeSlots::zeros(d, n, order, n_f);
                source.eval(&x, &mut s).map(|_| s)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = GridField {
            grid: grid.clone(),
            dim: n,
            components: d,
            order,
            n_f,
            v: Vec::with_capacity(nodes.len() * d),
            d1: Vec::with_capacity(nodes.len() * d * n),
            d2: Vec::new(),
            f: Vec::with_capacity(nodes.len() * n_f),
        };
        for s in nodes {
            out.v.extend(s.v);
            out.d1.extend(s.d1);
            out.d2.extend(s.d2);
            out.f.extend(s.f);
        }
        Ok(out)
    }

    /// CSV with node coordinates, values and first-derivative slots.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let (n, d) = (self.dim, self.components);
        let mut header: Vec<String> = (0..n).map(|a| format!("x{a}")).collect();
        header.extend((0..d).map(|c| format!("v{c}")));
        for c in 0..d {
            header.extend((0..n).map(|j| format!("d1_{c}_{j}")));
        }
        wr.write_record(&header)?;
        let mut x = vec![0.0; n];
        for idx in 0..self.grid.len() {
            self.grid.node(idx, &mut x);
            let mut rec: Vec<String> = x.iter().map(|v| fmt(*v)).collect();
            rec.extend(self.v[idx * d..(idx + 1) * d].iter().map(|v| fmt(*v)));
            rec.extend(
                self.d1[idx * d * n..(idx + 1) * d * n]
                    .iter()
                    .map(|v| fmt(*v)),
            );
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Mollified field `ψ_ε` sampled on `grid` with `ε∇ψ_ε` (and `ε²∇²ψ_ε`
/// when `order == 2`).
pub fn mollify(
    field: &PiecewiseField,
    kernel: &Kernel,
    profile: &KernelProfile,
    epsilon: f64,
    order: usize,
    grid: &GridSpec,
) -> Result<GridField> {
    let m = MollifiedField::new(field, kernel, profile, epsilon, order)?;
    GridField::sample(&m, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoxDomain;
    use crate::state::StateLayout;

    #[test]
    fn p_support_and_positivity() {
        for n in 1..=3 {
            let k = Kernel::bump(n).unwrap();
            let prof = profile_p(&k, 256).unwrap();
            assert_eq!(prof.p_at(0.5), 0.0);
            assert_eq!(prof.p_at(-0.7), 0.0);
            assert!(prof.p_at(0.0) > 0.0);
            assert!((prof.mass - 1.0).abs() < 1e-8, "n={n} mass={}", prof.mass);
        }
    }

    #[test]
    fn gamma_clamps_and_centres() {
        let k = Kernel::bump(1).unwrap();
        let prof = profile_p(&k, 128).unwrap();
        let j = CompositeJump::simple(StateLayout::scalar(1), vec![1.0], vec![1.0], vec![-1.0])
            .unwrap();
        assert_eq!(gamma(&prof, &j, -0.5), vec![1.0]);
        assert_eq!(gamma(&prof, &j, -3.0), vec![1.0]);
        assert_eq!(gamma(&prof, &j, 0.5), vec![-1.0]);
        assert_eq!(gamma(&prof, &j, 0.0), vec![0.0]);
    }

    #[test]
    fn zeta_branches() {
        let (a, b) = ([1.0], [2.0]);
        assert_eq!(zeta(1.0, &a[..], &b[..]), &a);
        assert_eq!(zeta(-2.0, &a[..], &b[..]), &b);
        assert_eq!(zeta(0.0, &a[..], &b[..]), &a);
    }

    #[test]
    fn constant_field_mollifies_to_itself() {
        let k = Kernel::bump(2).unwrap();
        let prof = profile_p(&k, 256).unwrap();
        let dom = BoxDomain::new(vec![-0.5; 2], vec![0.5; 2]).unwrap();
        let f = PiecewiseField::constant(StateLayout::scalar(2), dom, vec![0.3], vec![]).unwrap();
        let g = GridSpec::new(vec![-0.5; 2], vec![0.5; 2], vec![8, 8]).unwrap();
        let out = mollify(&f, &k, &prof, 0.1, 1, &g).unwrap();
        assert!(out.v.iter().all(|&v| v == 0.3));
        assert!(out.d1.iter().all(|&v| v == 0.0));
    }
}

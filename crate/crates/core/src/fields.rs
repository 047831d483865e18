//! Piecewise-constant composite fields with graph interfaces.
//!
//! An interface is the graph `x_a = g(x')` of a polynomial over the
//! remaining (tangential) axes, listed in increasing order. Every point of
//! space gets a raw side `sign(x_a - g(x'))` per interface (`+1` on the graph
//! itself); regions are identified by their side pattern. The interface
//! orientation selects which raw side is the `+` side of the jump.

use serde::{Deserialize, Serialize};

use crate::error::{arg, shape, Error, Result};
use crate::functionals::{DensityConfig, EnergyDensity};
use crate::numeric::{dot, gauss_legendre_unit, norm};
use crate::poly::Polynomial;
use crate::state::{ConstraintKind, StateLayout};

/// Jump data at one interface point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeJump {
    pub layout: StateLayout,
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    /// Set when both sides carry identical data.
    pub no_jump: bool,
}

/// Compatibility defect of a jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpDefect {
    pub kind: ViolationKind,
    pub block: usize,
    pub row: usize,
    pub magnitude: f64,
}

impl CompositeJump {
    pub fn new(
        layout: StateLayout,
        x: Vec<f64>,
        nu: Vec<f64>,
        v_plus: Vec<f64>,
        v_minus: Vec<f64>,
        f_plus: Vec<f64>,
        f_minus: Vec<f64>,
    ) -> Result<Self> {
        let n = layout.dim;
        if nu.len() != n || x.len() != n {
            return Err(shape(format!("normal and point must have {n} components")));
        }
        if (norm(&nu) - 1.0).abs() > 1e-12 {
            return Err(arg(format!(
                "normal must be a unit vector, |nu| = {}",
                norm(&nu)
            )));
        }
        layout.check_value(&v_plus, "v_plus")?;
        layout.check_value(&v_minus, "v_minus")?;
        if f_plus.len() != f_minus.len() {
            return Err(shape("f_plus and f_minus differ in length"));
        }
        let no_jump = v_plus == v_minus && f_plus == f_minus;
        Ok(Self {
            layout,
            x,
            nu,
            v_plus,
            v_minus,
            f_plus,
            f_minus,
            no_jump,
        })
    }

    /// Scalar jump at the origin with normal `nu`.
    pub fn simple(
        layout: StateLayout,
        nu: Vec<f64>,
        v_plus: Vec<f64>,
        v_minus: Vec<f64>,
    ) -> Result<Self> {
        let x = vec![0.0; layout.dim];
        Self::new(layout, x, nu, v_plus, v_minus, vec![], vec![])
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn kinds(&self) -> Vec<ConstraintKind> {
        self.layout.component_kinds()
    }

    /// `v⁺ - v⁻`.
    pub fn delta(&self) -> Vec<f64> {
        self.v_plus
            .iter()
            .zip(&self.v_minus)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// The same jump seen with the opposite normal.
    pub fn flipped(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            x: self.x.clone(),
            nu: self.nu.iter().map(|v| -v).collect(),
            v_plus: self.v_minus.clone(),
            v_minus: self.v_plus.clone(),
            f_plus: self.f_minus.clone(),
            f_minus: self.f_plus.clone(),
            no_jump: self.no_jump,
        }
    }

    /// Rank-one defects of curl-free rows and normal-trace defects of
    /// divergence-free rows exceeding `tol`.
    pub fn defects(&self, tol: f64) -> Vec<JumpDefect> {
        let n = self.dim();
        let delta = self.delta();
        let mut out = Vec::new();
        for (bi, (kind, off, rows)) in self.layout.iter().enumerate() {
            for r in 0..rows {
                let row = || &delta[off + r * n..off + (r + 1) * n];
                match kind {
                    ConstraintKind::Unconstrained => {}
                    ConstraintKind::CurlFree => {
                        let d = row();
                        let a = dot(d, &self.nu);
                        let m = d
                            .iter()
                            .zip(&self.nu)
                            .fold(0.0_f64, |m, (x, nu)| m.max((x - a * nu).abs()));
                        if m > tol {
                            out.push(JumpDefect {
                                kind: ViolationKind::RankOne,
                                block: bi,
                                row: r,
                                magnitude: m,
                            });
                        }
                    }
                    ConstraintKind::DivFree => {
                        let m = dot(row(), &self.nu).abs();
                        if m > tol {
                            out.push(JumpDefect {
                                kind: ViolationKind::NormalTrace,
                                block: bi,
                                row: r,
                                magnitude: m,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn check_compatible(&self, tol: f64) -> Result<()> {
        match self.defects(tol).first() {
            None => Ok(()),
            Some(d) => Err(arg(format!(
                "incompatible jump: {:?} defect {:e} in block {} row {}",
                d.kind, d.magnitude, d.block, d.row
            ))),
        }
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(shape("box corners differ in dimension"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Construction("box has an empty side".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }
}

/// Interface `x_axis = g(x')` over the patch `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInterface {
    pub axis: usize,
    pub orientation: i8,
    pub patch: BoxDomain,
    pub g: Polynomial,
}

impl GraphInterface {
    pub fn dim(&self) -> usize {
        self.g.nvars + 1
    }

    /// Axes spanning `x'`, in increasing order.
    pub fn tangential_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&a| a != self.axis).collect()
    }

    pub fn tangential(&self, x: &[f64]) -> Vec<f64> {
        self.tangential_axes().iter().map(|&a| x[a]).collect()
    }

    /// `x_axis - g(x')`.
    pub fn vertical_offset(&self, x: &[f64]) -> f64 {
        let xp = self.tangential(x);
        x[self.axis] - self.g.eval(&xp)
    }

    pub fn raw_side(&self, x: &[f64]) -> i8 {
        if self.vertical_offset(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    /// Graph point above `x'`.
    pub fn point(&self, xp: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (k, &a) in self.tangential_axes().iter().enumerate() {
            x[a] = xp[k];
        }
        x[self.axis] = self.g.eval(xp);
        x
    }

    /// `(1, -∇g) / √(1 + |∇g|²)` embedded in the original axes.
    pub fn raw_normal(&self, xp: &[f64]) -> Vec<f64> {
        let grad = self.g.gradient(xp);
        let c = (1.0 + grad.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let mut nu = vec![0.0; self.dim()];
        nu[self.axis] = 1.0 / c;
        for (k, &a) in self.tangential_axes().iter().enumerate() {
            nu[a] = -grad[k] / c;
        }
        nu
    }

    pub fn normal(&self, xp: &[f64]) -> Vec<f64> {
        let o = self.orientation as f64;
        self.raw_normal(xp).into_iter().map(|v| o * v).collect()
    }

    /// Area element `√(1 + |∇g|²)`.
    pub fn area_factor(&self, xp: &[f64]) -> f64 {
        let grad = self.g.gradient(xp);
        (1.0 + grad.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn flipped(&self) -> Self {
        let mut s = self.clone();
        s.orientation = -s.orientation;
        s
    }

    /// Tensor Gauss-Legendre points of the patch, `k` per axis.
    pub fn sample_patch(&self, k: usize) -> Vec<Vec<f64>> {
        let m = self.g.nvars;
        let (x, _) = gauss_legendre_unit(k);
        let mut pts = vec![vec![]];
        for j in 0..m {
            let (a, b) = (self.patch.lo[j], self.patch.hi[j]);
            let mut next = Vec::new();
            for p in &pts {
                for t in &x {
                    let mut q = p.clone();
                    q.push(a + (b - a) * t);
                    next.push(q);
                }
            }
            pts = next;
        }
        pts
    }
}

/// One constant piece of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Raw side per interface; `0` matches either side.
    pub sides: Vec<i8>,
    pub value: Vec<f64>,
    #[serde(default)]
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseField {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub n_f: usize,
    pub layout: StateLayout,
    pub domain: BoxDomain,
    #[serde(default)]
    pub interfaces: Vec<GraphInterface>,
    pub regions: Vec<Region>,
}

impl PiecewiseField {
    pub fn new(
        layout: StateLayout,
        n_f: usize,
        domain: BoxDomain,
        interfaces: Vec<GraphInterface>,
        regions: Vec<Region>,
    ) -> Result<Self> {
        let f = Self {
            density: None,
            n_f,
            layout,
            domain,
            interfaces,
            regions,
        };
        f.check_structure()?;
        Ok(f)
    }

    fn check_structure(&self) -> Result<()> {
        let n = self.layout.dim;
        if self.domain.dim() != n {
            return Err(shape("domain dimension differs from layout dimension"));
        }
        BoxDomain::new(self.domain.lo.clone(), self.domain.hi.clone())?;
        for (i, s) in self.interfaces.iter().enumerate() {
            if s.axis >= n || s.g.nvars + 1 != n || s.patch.dim() + 1 != n {
                return Err(shape(format!("interface {i} does not match dimension {n}")));
            }
            if s.orientation != 1 && s.orientation != -1 {
                return Err(arg(format!("interface {i} orientation must be +1 or -1")));
            }
            if n > 1 && s.patch.lo.iter().zip(&s.patch.hi).any(|(a, b)| !(a < b)) {
                return Err(Error::Construction(format!(
                    "interface {i} has a degenerate patch"
                )));
            }
        }
        if self.regions.is_empty() {
            return Err(Error::Construction(
                "field needs at least one region".into(),
            ));
        }
        for (r, reg) in self.regions.iter().enumerate() {
            if reg.sides.len() != self.interfaces.len() {
                return Err(shape(format!("region {r} lists {} sides", reg.sides.len())));
            }
            self.layout
                .check_value(&reg.value, &format!("region {r} value"))?;
            if reg.f.len() != self.n_f {
                return Err(shape(format!(
                    "region {r} has {} f values, expected {}",
                    reg.f.len(),
                    self.n_f
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: Self = toml::from_str(s)?;
        f.check_structure()?;
        Ok(f)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Constant field.
    pub fn constant(
        layout: StateLayout,
        domain: BoxDomain,
        value: Vec<f64>,
        f: Vec<f64>,
    ) -> Result<Self> {
        let n_f = f.len();
        Self::new(
            layout,
            n_f,
            domain,
            vec![],
            vec![Region {
                sides: vec![],
                value,
                f,
            }],
        )
    }

    /// Parallel graph interfaces along `axis`, listed bottom to top; `pieces`
    /// holds `(value, f)` for the `k + 1` layers from below.
    pub fn stacked(
        layout: StateLayout,
        domain: BoxDomain,
        axis: usize,
        graphs: Vec<Polynomial>,
        pieces: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        if pieces.len() != graphs.len() + 1 {
            return Err(shape("need one more piece than interfaces"));
        }
        let n = layout.dim;
        let tang: Vec<usize> = (0..n).filter(|&a| a != axis).collect();
        let patch = BoxDomain {
            lo: tang.iter().map(|&a| domain.lo[a]).collect(),
            hi: tang.iter().map(|&a| domain.hi[a]).collect(),
        };
        let k = graphs.len();
        let interfaces = graphs
            .into_iter()
            .map(|g| GraphInterface {
                axis,
                orientation: 1,
                patch: patch.clone(),
                g,
            })
            .collect();
        let n_f = pieces[0].1.len();
        let regions = pieces
            .into_iter()
            .enumerate()
            .map(|(r, (value, f))| Region {
                sides: (0..k).map(|i| if i < r { 1 } else { -1 }).collect(),
                value,
                f,
            })
            .collect();
        Self::new(layout, n_f, domain, interfaces, regions)
    }

    /// Single flat interface `x_axis = c` with `below` and `above` values.
    pub fn flat_step(
        layout: StateLayout,
        domain: BoxDomain,
        axis: usize,
        c: f64,
        below: Vec<f64>,
        above: Vec<f64>,
    ) -> Result<Self> {
        let m = layout.dim - 1;
        Self::stacked(
            layout,
            domain,
            axis,
            vec![Polynomial::constant(m, c)],
            vec![(below, vec![]), (above, vec![])],
        )
    }

    pub fn raw_sides(&self, x: &[f64]) -> Vec<i8> {
        self.interfaces.iter().map(|s| s.raw_side(x)).collect()
    }

    pub fn region_for_sides(&self, sides: &[i8]) -> Option<usize> {
        self.regions.iter().position(|r| {
            r.sides
                .iter()
                .zip(sides)
                .all(|(&want, &got)| want == 0 || want == got)
        })
    }

    /// Region containing `x`.
    pub fn region_at(&self, x: &[f64]) -> Result<usize> {
        let sides = self.raw_sides(x);
        self.region_for_sides(&sides)
            .ok_or_else(|| Error::Domain(format!("no region matches side pattern {sides:?}")))
    }

    pub fn value_at(&self, x: &[f64]) -> Result<(&[f64], &[f64])> {
        let r = &self.regions[self.region_at(x)?];
        Ok((&r.value, &r.f))
    }

    /// One-sided traces at the graph point above `x'` of interface `iface`.
    pub fn trace_pair(&self, iface: usize, xp: &[f64]) -> Result<CompositeJump> {
        let s = self
            .interfaces
            .get(iface)
            .ok_or_else(|| arg(format!("no interface {iface}")))?;
        if xp.len() != s.g.nvars {
            return Err(shape("tangential point has the wrong dimension"));
        }
        if !s.patch.contains(xp) {
            return Err(Error::Domain(format!(
                "{xp:?} lies outside the interface patch"
            )));
        }
        let x = s.point(xp);
        let mut sides = self.raw_sides(&x);
        sides[iface] = s.orientation;
        let plus = self
            .region_for_sides(&sides)
            .ok_or_else(|| Error::Domain(format!("no region on the + side at {x:?}")))?;
        sides[iface] = -s.orientation;
        let minus = self
            .region_for_sides(&sides)
            .ok_or_else(|| Error::Domain(format!("no region on the - side at {x:?}")))?;
        let (rp, rm) = (&self.regions[plus], &self.regions[minus]);
        let mut jump = CompositeJump::new(
            self.layout.clone(),
            x,
            s.normal(xp),
            rp.value.clone(),
            rm.value.clone(),
            rp.f.clone(),
            rm.f.clone(),
        )?;
        jump.no_jump = plus == minus || jump.no_jump;
        Ok(jump)
    }

    /// Same field with every interface orientation reversed.
    pub fn flipped(&self) -> Self {
        let mut f = self.clone();
        f.interfaces = f.interfaces.iter().map(|s| s.flipped()).collect();
        f
    }

    /// Field and domain translated by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut f = self.clone();
        for (i, v) in shift.iter().enumerate() {
            f.domain.lo[i] += v;
            f.domain.hi[i] += v;
        }
        for s in f.interfaces.iter_mut() {
            let tang = s.tangential_axes();
            let sp: Vec<f64> = tang.iter().map(|&a| shift[a]).collect();
            let mut g = s.g.shifted(&sp);
            let zero = vec![0; g.nvars];
            match g.terms.iter_mut().find(|t| t.exps == zero) {
                Some(t) => t.coef += shift[s.axis],
                None => g.terms.push(crate::poly::Monomial {
                    coef: shift[s.axis],
                    exps: zero,
                }),
            }
            s.g = g;
            for (k, &a) in tang.iter().enumerate() {
                s.patch.lo[k] += shift[a];
                s.patch.hi[k] += shift[a];
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Shape,
    ZeroSet,
    RankOne,
    NormalTrace,
    Intersection,
    Containment,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Vec<f64>,
    pub magnitude: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

const TRACE_TOL: f64 = 1e-9;

/// Every violated admissibility condition of `field` for `density`.
pub fn validate(field: &PiecewiseField, density: &EnergyDensity) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |kind, location: Vec<f64>, magnitude: f64, detail: String| {
        out.push(Violation {
            kind,
            location,
            magnitude,
            detail,
        })
    };
    if density.layout != field.layout || density.n_f != field.n_f {
        push(
            ViolationKind::Shape,
            vec![],
            f64::NAN,
            format!("field layout/f do not match density '{}'", density.name),
        );
        return ValidationReport { violations: out };
    }
    for (r, reg) in field.regions.iter().enumerate() {
        let w = density.well(&reg.value, &reg.f);
        if w.abs() > 1e-12 {
            push(
                ViolationKind::ZeroSet,
                vec![],
                w,
                format!("region {r} value off the zero set"),
            );
        }
    }
    let n = field.dim();
    for (i, s) in field.interfaces.iter().enumerate() {
        // containment: patch is the domain cross-section and the graph stays strictly inside
        let tang = s.tangential_axes();
        for (k, &a) in tang.iter().enumerate() {
            let d = (s.patch.lo[k] - field.domain.lo[a])
                .abs()
                .max((s.patch.hi[k] - field.domain.hi[a]).abs());
            if d > 1e-12 {
                push(
                    ViolationKind::Containment,
                    vec![],
                    d,
                    format!(
                        "interface {i} patch differs from the domain cross-section along axis {a}"
                    ),
                );
            }
        }
        let pts = s.sample_patch(9).into_iter().chain(patch_corners(s));
        for xp in pts {
            let x = s.point(&xp);
            let (lo, hi) = (field.domain.lo[s.axis], field.domain.hi[s.axis]);
            if x[s.axis] <= lo || x[s.axis] >= hi {
                push(
                    ViolationKind::Containment,
                    x.clone(),
                    (x[s.axis] - 0.5 * (lo + hi)).abs(),
                    format!("interface {i} leaves the domain"),
                );
                continue;
            }
            for (j, o) in field.interfaces.iter().enumerate() {
                if j != i && o.vertical_offset(&x).abs() < 1e-9 {
                    push(
                        ViolationKind::Intersection,
                        x.clone(),
                        0.0,
                        format!("interfaces {i} and {j} touch"),
                    );
                }
            }
            match field.trace_pair(i, &xp) {
                Ok(jump) => {
                    for d in jump.defects(TRACE_TOL) {
                        push(
                            d.kind,
                            x.clone(),
                            d.magnitude,
                            format!("interface {i}, block {} row {}", d.block, d.row),
                        );
                    }
                }
                Err(e) => push(ViolationKind::Coverage, x.clone(), f64::NAN, e.to_string()),
            }
        }
        // intersections between sampled points: sign changes of other offsets along the graph
        for (j, o) in field.interfaces.iter().enumerate() {
            if j <= i {
                continue;
            }
            let signs: Vec<i8> = s
                .sample_patch(17)
                .iter()
                .map(|xp| o.raw_side(&s.point(xp)))
                .collect();
            if signs.iter().any(|&v| v != signs[0]) {
                push(
                    ViolationKind::Intersection,
                    vec![],
                    0.0,
                    format!("interfaces {i} and {j} cross"),
                );
            }
        }
    }
    // coverage of the domain by regions
    let k: usize = 7;
    let total = k.pow(n as u32);
    for idx in 0..total {
        let mut x = vec![0.0; n];
        let mut rem = idx;
        for a in 0..n {
            let t = (rem % k) as f64 / (k - 1) as f64;
            rem /= k;
            x[a] = field.domain.lo[a] + t * (field.domain.hi[a] - field.domain.lo[a]);
        }
        if field.region_at(&x).is_err() {
            push(
                ViolationKind::Coverage,
                x,
                f64::NAN,
                "no region covers this point".into(),
            );
        }
    }
    ValidationReport { violations: out }
}

fn patch_corners(s: &GraphInterface) -> Vec<Vec<f64>> {
    let m = s.g.nvars;
    (0..(1usize << m))
        .map(|mask| {
            (0..m)
                .map(|j| {
                    if mask >> j & 1 == 1 {
                        s.patch.hi[j]
                    } else {
                        s.patch.lo[j]
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Block;

    fn unit_box(n: usize) -> BoxDomain {
        BoxDomain::new(vec![-0.5; n], vec![0.5; n]).unwrap()
    }

    #[test]
    fn one_dimensional_step_trace() {
        let f = PiecewiseField::flat_step(
            StateLayout::scalar(1),
            unit_box(1),
            0,
            0.0,
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        let j = f.trace_pair(0, &[]).unwrap();
        assert_eq!(j.v_plus, vec![1.0]);
        assert_eq!(j.v_minus, vec![-1.0]);
        assert_eq!(j.nu, vec![1.0]);
        assert!(!j.no_jump);
    }

    #[test]
    fn constant_field_has_no_jump() {
        let f = PiecewiseField::flat_step(
            StateLayout::scalar(1),
            unit_box(1),
            0,
            0.0,
            vec![1.0],
            vec![1.0],
        )
        .unwrap();
        let j = f.trace_pair(0, &[]).unwrap();
        assert!(j.no_jump);
        assert_eq!(j.v_plus, j.v_minus);
    }

    #[test]
    fn tilted_graph_normal() {
        let f = PiecewiseField::stacked(
            StateLayout::scalar(2),
            unit_box(2),
            0,
            vec![Polynomial::affine(0.0, &[0.2])],
            vec![(vec![0.0], vec![]), (vec![1.0], vec![])],
        )
        .unwrap();
        let j = f.trace_pair(0, &[0.1]).unwrap();
        let c = 1.04_f64.sqrt();
        assert!((j.nu[0] - 1.0 / c).abs() < 1e-15);
        assert!((j.nu[1] + 0.2 / c).abs() < 1e-15);
        assert!((norm(&j.nu) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_patch_is_domain_error() {
        let f = PiecewiseField::flat_step(
            StateLayout::scalar(2),
            unit_box(2),
            0,
            0.0,
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(f.trace_pair(0, &[0.7]), Err(Error::Domain(_))));
    }

    #[test]
    fn validate_reports_zero_set_violation() {
        let mm = EnergyDensity::modica_mortola(1, 1).unwrap();
        let good = PiecewiseField::flat_step(
            StateLayout::scalar(1),
            unit_box(1),
            0,
            0.0,
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        assert!(validate(&good, &mm).is_empty());
        let bad = PiecewiseField::flat_step(
            StateLayout::scalar(1),
            unit_box(1),
            0,
            0.0,
            vec![-1.0],
            vec![0.5],
        )
        .unwrap();
        let rep = validate(&bad, &mm);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::ZeroSet);
        assert!((rep.violations[0].magnitude - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn normal_trace_violation_detected() {
        let layout = StateLayout::new(
            2,
            vec![Block {
                kind: ConstraintKind::DivFree,
                rows: 1,
            }],
        )
        .unwrap();
        let f = PiecewiseField::flat_step(
            layout.clone(),
            unit_box(2),
            0,
            0.0,
            vec![0.0, 0.0],
            vec![0.1, 1.0],
        )
        .unwrap();
        let j = f.trace_pair(0, &[0.0]).unwrap();
        let d = j.defects(1e-12);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, ViolationKind::NormalTrace);
        assert!((d[0].magnitude - 0.1).abs() < 1e-15);
    }

    #[test]
    fn orientation_flip_swaps_traces() {
        let f = PiecewiseField::flat_step(
            StateLayout::scalar(2),
            unit_box(2),
            1,
            0.1,
            vec![-1.0],
            vec![1.0],
        )
        .unwrap();
        let a = f.trace_pair(0, &[0.2]).unwrap();
        let b = f.flipped().trace_pair(0, &[0.2]).unwrap();
        assert_eq!(a.flipped(), b);
    }

    #[test]
    fn toml_round_trip() {
        let mut f = PiecewiseField::stacked(
            StateLayout::scalar(2),
            unit_box(2),
            1,
            vec![
                Polynomial::affine(-0.1, &[0.3]),
                Polynomial::constant(1, 0.25),
            ],
            vec![
                (vec![-1.0], vec![]),
                (vec![1.0], vec![]),
                (vec![-1.0], vec![]),
            ],
        )
        .unwrap();
        f.density = Some(EnergyDensity::modica_mortola(2, 1).unwrap().to_config());
        let s = f.to_toml_string().unwrap();
        let back = PiecewiseField::from_toml_str(&s).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn crossing_interfaces_reported() {
        let f = PiecewiseField::stacked(
            StateLayout::scalar(2),
            unit_box(2),
            0,
            vec![
                Polynomial::affine(0.0, &[0.5]),
                Polynomial::affine(0.0, &[-0.5]),
            ],
            vec![
                (vec![-1.0], vec![]),
                (vec![1.0], vec![]),
                (vec![-1.0], vec![]),
            ],
        )
        .unwrap();
        let mm = EnergyDensity::modica_mortola(2, 1).unwrap();
        let rep = validate(&f, &mm);
        assert!(rep
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Intersection));
    }
}

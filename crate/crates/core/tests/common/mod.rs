#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlayer_core::{Block, ConstraintKind, EnergyDensity, Monomial, Polynomial, StateLayout};

/// Builds a polynomial from sparse terms `(coef, [(var, exp)])`.
pub fn poly(nvars: usize, terms: &[(f64, &[(usize, u32)])]) -> Polynomial {
    let terms = terms
        .iter()
        .map(|(c, vars)| {
            let mut exps = vec![0; nvars];
            for &(v, e) in vars.iter() {
                exps[v] += e;
            }
            Monomial { coef: *c, exps }
        })
        .collect();
    Polynomial::new(nvars, terms).unwrap()
}

/// `Σ d2² + Σ d1² + (1 - |v|²)²` for an arbitrary layout and order.
pub fn quadratic_well(order: usize, layout: StateLayout) -> EnergyDensity {
    let d = layout.len();
    let n = layout.dim;
    let n2 = if order == 2 { d * n * n } else { 0 };
    let nv = n2 + d * n + d;
    let mut terms: Vec<(f64, Vec<(usize, u32)>)> = Vec::new();
    for k in 0..n2 + d * n {
        terms.push((1.0, vec![(k, 2)]));
    }
    let v0 = n2 + d * n;
    terms.push((1.0, vec![]));
    for a in 0..d {
        terms.push((-2.0, vec![(v0 + a, 2)]));
        for b in 0..d {
            terms.push((1.0, vec![(v0 + a, 2), (v0 + b, 2)]));
        }
    }
    let refs: Vec<(f64, &[(usize, u32)])> = terms.iter().map(|(c, v)| (*c, v.as_slice())).collect();
    EnergyDensity::polynomial(order, layout, 0, poly(nv, &refs)).unwrap()
}

pub fn layout(dim: usize, kind: ConstraintKind, rows: usize) -> StateLayout {
    StateLayout::new(dim, vec![Block { kind, rows }]).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest relative discrepancy between an analytic gradient and central
/// differences along `probes` random coordinates.
pub fn fd_mismatch<F: Fn(&[f64], &mut [f64]) -> f64>(
    f: F,
    x: &[f64],
    probes: usize,
    seed: u64,
) -> f64 {
    let mut g = vec![0.0; x.len()];
    f(x, &mut g);
    let mut r = rng(seed);
    let mut scratch = vec![0.0; x.len()];
    let mut worst = 0.0_f64;
    let gscale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for _ in 0..probes {
        let k = r.gen_range(0..x.len());
        let h = 1e-5 * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        xp[k] += h;
        let fp = f(&xp, &mut scratch);
        xp[k] -= 2.0 * h;
        let fm = f(&xp, &mut scratch);
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / gscale);
    }
    worst
}

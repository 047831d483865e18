//! Sparse multivariate polynomials with explicit monomial exponents.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub nvars: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.exps.len() != nvars {
                return Err(shape(format!(
                    "monomial has {} exponents, polynomial has {nvars} variables",
                    t.exps.len()
                )));
            }
            if !t.coef.is_finite() {
                return Err(shape("non-finite polynomial coefficient"));
            }
        }
        Ok(Self { nvars, terms })
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self {
            nvars,
            terms: vec![Monomial {
                coef: c,
                exps: vec![0; nvars],
            }],
        }
    }

    /// `c + Σ b_j x_j`.
    pub fn affine(c: f64, slope: &[f64]) -> Self {
        let n = slope.len();
        let mut terms = vec![Monomial {
            coef: c,
            exps: vec![0; n],
        }];
        for (j, &b) in slope.iter().enumerate() {
            let mut e = vec![0; n];
            e[j] = 1;
            terms.push(Monomial { coef: b, exps: e });
        }
        Self { nvars: n, terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exps.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Degree with respect to variable `var` alone.
    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms.iter().map(|t| t.exps[var]).max().unwrap_or(0)
    }

    /// True if every monomial has total degree at most one.
    pub fn is_affine(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.coef == 0.0 || t.exps.iter().sum::<u32>() <= 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut s = 0.0;
        for t in &self.terms {
            let mut m = t.coef;
            for (xi, &e) in x.iter().zip(&t.exps) {
                if e > 0 {
                    m *= xi.powi(e as i32);
                }
            }
            s += m;
        }
        s
    }

    /// Value and gradient; `grad` must have length `nvars`.
    pub fn eval_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = 0.0;
        for t in &self.terms {
            let mut m = t.coef;
            for (xi, &e) in x.iter().zip(&t.exps) {
                if e > 0 {
                    m *= xi.powi(e as i32);
                }
            }
            s += m;
            for (j, &ej) in t.exps.iter().enumerate() {
                if ej == 0 {
                    continue;
                }
                let mut d = t.coef * ej as f64;
                for (k, (xk, &ek)) in x.iter().zip(&t.exps).enumerate() {
                    let p = if k == j { ek - 1 } else { ek };
                    if p > 0 {
                        d *= xk.powi(p as i32);
                    }
                }
                grad[j] += d;
            }
        }
        s
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.nvars];
        self.eval_grad(x, &mut g);
        g
    }

    /// The polynomial `x ↦ p(x - s)`, expanded into monomials.
    pub fn shifted(&self, s: &[f64]) -> Polynomial {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in &self.terms {
            // expand Π (x_j - s_j)^{e_j}
            let mut partial: Vec<(Vec<u32>, f64)> = vec![(vec![0; self.nvars], t.coef)];
            for (j, &e) in t.exps.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * (e as usize + 1));
                for (exps, c) in &partial {
                    for k in 0..=e {
                        let binom = binomial(e, k);
                        let mut ex = exps.clone();
                        ex[j] = k;
                        next.push((ex, c * binom * (-s[j]).powi((e - k) as i32)));
                    }
                }
                partial = next;
            }
            for (ex, c) in partial {
                *acc.entry(ex).or_insert(0.0) += c;
            }
        }
        Polynomial {
            nvars: self.nvars,
            terms: acc
                .into_iter()
                .map(|(exps, coef)| Monomial { coef, exps })
                .collect(),
        }
    }

    /// Hessian at `x`, row-major.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.nvars;
        let mut h = vec![0.0; n * n];
        for t in &self.terms {
            for a in 0..n {
                for b in 0..n {
                    let mut e: Vec<i64> = t.exps.iter().map(|&v| v as i64).collect();
                    let mut c = t.coef * e[a] as f64;
                    e[a] -= 1;
                    if e[a] < 0 {
                        continue;
                    }
                    c *= e[b] as f64;
                    e[b] -= 1;
                    if e[b] < 0 || c == 0.0 {
                        continue;
                    }
                    let mut m = c;
                    for (xk, &ek) in x.iter().zip(&e) {
                        if ek > 0 {
                            m *= xk.powi(ek as i32);
                        }
                    }
                    h[a * n + b] += m;
                }
            }
        }
        h
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

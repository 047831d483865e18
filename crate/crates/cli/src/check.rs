//! The `check` command: analytic and brute-force oracles, kernel profile
//! properties, discrete operator identities, finite-difference gradient
//! checks and the `E_per ≤ E₁` invariant.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tlayer_core::bundled::{bundled_problems, BundledProblem};
use tlayer_core::cell1d::{analytic_e1_modica, optimize_e1_report, Cell1dObjective, E1Options};
use tlayer_core::cellnd::{
    optimize_eper, CellGrid, CellObjective, EperOptions, LatticeBasis, PerturbationClass, Ramp,
};
use tlayer_core::mollifier::{gamma, profile_p, Kernel, KernelProfile};
use tlayer_core::oracles::{brute_force_e1, fd_gradient_check, operator_self_test, OracleReport};
use tlayer_core::{CompositeJump, EnergyDensity, Result, Slots};

use crate::config::{CheckConfig, RunConfig};
use crate::output::{OutputDir, Status};

const MM_VALUE: f64 = 8.0 / 3.0;
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
/// Coordinates sampled per cell-objective gradient check.
const FD_COORDS: usize = 48;
const E1_GRID: usize = 1024;
const BRUTE_GRID: usize = 4096;

#[derive(Serialize)]
struct CheckSummary<'a> {
    passed: usize,
    failed: usize,
    reports: &'a [OracleReport],
}

#[derive(Serialize)]
struct CheckInputs<'a> {
    check: &'a CheckConfig,
}

fn l_grid() -> Vec<f64> {
    (1..=5).map(|k| 0.5_f64.powi(k)).collect()
}

fn e1_value(density: &EnergyDensity, jump: &CompositeJump) -> Result<f64> {
    Ok(optimize_e1_report(density, jump, E1_GRID, &l_grid(), &E1Options::default())?.value)
}

fn mm_problem(problems: &[BundledProblem]) -> &BundledProblem {
    problems
        .iter()
        .find(|p| p.name == "mm-scalar-2d")
        .expect("bundled set contains the scalar MM problem")
}

fn analytic_mm(p: &BundledProblem) -> Result<Vec<OracleReport>> {
    let analytic = analytic_e1_modica(|u| (1.0 - u * u).powi(2), -1.0, 1.0, 1 << 16)?;
    let e1 = e1_value(&p.density, &p.jump)?;
    Ok(vec![
        OracleReport::new("analytic-mm-integral", MM_VALUE, analytic, 1e-8, 0.0),
        OracleReport::new("analytic-mm-e1", MM_VALUE, e1, 1e-3, 0.0),
    ])
}

fn brute_force(p: &BundledProblem) -> Result<OracleReport> {
    let reference = brute_force_e1(&p.density, &p.jump, BRUTE_GRID)?;
    let e1 = e1_value(&p.density, &p.jump)?;
    Ok(OracleReport::new(
        format!("brute-force-e1/{}", p.name),
        reference,
        e1,
        1e-3,
        0.0,
    ))
}

fn kernel_reports(seed: u64) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for dim in 1..=3 {
        let kernel = Kernel::bump(dim)?;
        let prof = profile_p(&kernel, 4096)?;
        out.push(OracleReport::new(
            format!("kernel-mass/{dim}d"),
            1.0,
            prof.mass,
            1e-8,
            0.0,
        ));
        let n = prof.resolution;
        let odd = (0..=n)
            .map(|i| (prof.p[i] - prof.p[n - i]).abs())
            .fold(0.0, f64::max);
        out.push(OracleReport::new(
            format!("kernel-evenness/{dim}d"),
            0.0,
            odd,
            1e-12,
            0.0,
        ));
        let mut outside = prof.p[0].abs().max(prof.p[n].abs());
        for _ in 0..64 {
            let t = 0.5 + rng.gen_range(0.0..1.0);
            outside = outside.max(prof.p_at(t).abs()).max(prof.p_at(-t).abs());
        }
        out.push(OracleReport::new(
            format!("kernel-support/{dim}d"),
            0.0,
            outside,
            0.0,
            0.0,
        ));
        out.push(gamma_clamp(&prof, dim, &mut rng)?);
    }
    Ok(out)
}

fn gamma_clamp(prof: &KernelProfile, dim: usize, rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let density = EnergyDensity::modica_mortola(dim, 2)?;
    let mut nu = vec![0.0; dim];
    nu[0] = 1.0;
    let jump = CompositeJump::simple(density.layout.clone(), nu, vec![0.6, 0.8], vec![-0.8, 0.6])?;
    let mut worst = 0.0_f64;
    for _ in 0..64 {
        let t = rng.gen_range(0.5..2.0);
        // Γ = P v⁻ + (1 - P) v⁺ with P = 0 below the layer
        let gp = gamma(prof, &jump, t);
        let gm = gamma(prof, &jump, -t);
        for c in 0..2 {
            worst = worst
                .max((gp[c] - jump.v_minus[c]).abs())
                .max((gm[c] - jump.v_plus[c]).abs());
        }
    }
    Ok(OracleReport::new(
        format!("gamma-clamp/{dim}d"),
        0.0,
        worst,
        0.0,
        0.0,
    ))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

/// Central-difference check of the density gradient at random slot values.
fn density_fd(p: &BundledProblem, points: usize, rng: &mut ChaCha8Rng) -> Result<OracleReport> {
    let d = &p.density;
    let (n2, n1, nv) = (d.d2_len(), d.d1_len(), d.components());
    let f: Vec<f64> = random_vec(rng, d.n_f, 1.0);
    let eval = |x: &[f64], g: &mut [f64]| {
        let (d2, rest) = x.split_at(n2);
        let (d1, v) = rest.split_at(n1);
        let mut g2 = vec![0.0; n2];
        let mut g1 = vec![0.0; n1];
        let mut gv = vec![0.0; nv];
        let val = d.value_grad(&Slots { d2, d1, v, f: &f }, &mut g2, &mut g1, &mut gv);
        g[..n2].copy_from_slice(&g2);
        g[n2..n2 + n1].copy_from_slice(&g1);
        g[n2 + n1..].copy_from_slice(&gv);
        val
    };
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let x = random_vec(rng, n2 + n1 + nv, 1.5);
        let r = fd_gradient_check("density", eval, &x, FD_STEP, FD_TOL)?;
        worst = worst.max(r.test);
    }
    Ok(OracleReport::new(
        format!("fd-density/{}", p.name),
        0.0,
        worst,
        FD_TOL,
        0.0,
    ))
}

/// Gradient check restricted to `FD_COORDS` distinct random coordinates.
fn sampled_fd<F>(name: String, f: F, x0: &[f64], rng: &mut ChaCha8Rng) -> Result<OracleReport>
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let mut idx = sample(rng, x0.len(), FD_COORDS.min(x0.len())).into_vec();
    idx.sort_unstable();
    let sub = |y: &[f64], g: &mut [f64]| {
        let mut x = x0.to_vec();
        for (j, &i) in idx.iter().enumerate() {
            x[i] += y[j];
        }
        let mut gf = vec![0.0; x.len()];
        let v = f(&x, &mut gf);
        for (j, &i) in idx.iter().enumerate() {
            g[j] = gf[i];
        }
        v
    };
    let r = fd_gradient_check(&name, sub, &vec![0.0; idx.len()], FD_STEP, FD_TOL)?;
    Ok(OracleReport::new(name, 0.0, r.test, FD_TOL, 0.0))
}

fn objective_fd(p: &BundledProblem, rng: &mut ChaCha8Rng) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    let o1 = Cell1dObjective::new(&p.density, &p.jump, 128, 0.125)?;
    let mut q = o1.ramp();
    q.iter_mut()
        .for_each(|v| *v += 0.05 * rng.gen_range(-1.0..1.0));
    out.push(sampled_fd(
        format!("fd-cell1d/{}", p.name),
        |x, g| o1.value_grad(x, g),
        &q,
        rng,
    )?);
    let dim = p.jump.dim();
    let n = if dim == 2 { 32 } else { 16 };
    let grid = CellGrid::uniform(dim, n);
    let basis = LatticeBasis::orthonormal(&p.jump.nu)?;
    for class in [PerturbationClass::Distribution, PerturbationClass::Smooth] {
        let obj = CellObjective::new(
            &p.density,
            &p.jump,
            &basis,
            &grid,
            0.125,
            class,
            &Ramp::Quintic,
        )?;
        let x = random_vec(rng, obj.len(), 0.05);
        let tag = match class {
            PerturbationClass::Distribution => "distribution",
            PerturbationClass::Smooth => "smooth",
        };
        out.push(sampled_fd(
            format!("fd-cell/{}/{tag}", p.name),
            |x, g| obj.value_grad(x, g),
            &x,
            rng,
        )?);
    }
    Ok(out)
}

fn eper_reports(p: &BundledProblem, compare: bool) -> Result<Vec<OracleReport>> {
    let dim = p.jump.dim();
    let n = if dim == 2 { 64 } else { 24 };
    let basis = LatticeBasis::orthonormal(&p.jump.nu)?;
    let r = optimize_eper(
        &p.density,
        &p.jump,
        &basis,
        &CellGrid::uniform(dim, n),
        &l_grid(),
        &EperOptions::default(),
    )?;
    let mut out = vec![OracleReport::new(
        format!("eper-le-e1/{}", p.name),
        0.0,
        (r.value - r.e1_value).max(0.0),
        1e-6,
        0.0,
    )];
    if compare {
        out.push(OracleReport::new(
            format!("eper-vs-e1/{}", p.name),
            r.e1_value,
            r.value,
            1e-3,
            0.0,
        ));
    }
    Ok(out)
}

/// Every report of the suite, in a fixed order.
pub fn suite(cfg: &CheckConfig, seed: u64) -> Result<Vec<OracleReport>> {
    let problems = bundled_problems()?;
    let mm = mm_problem(&problems);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = analytic_mm(mm)?;
    reports.push(brute_force(mm)?);
    reports.extend(kernel_reports(seed)?);
    for (normal, tangential) in [(32, vec![32]), (16, vec![16, 16])] {
        let dim = tangential.len() + 1;
        reports.extend(
            operator_self_test(normal, &tangential, seed)?
                .into_iter()
                .map(|mut r| {
                    r.name = format!("{}/{dim}d", r.name);
                    r
                }),
        );
    }
    for p in &problems {
        reports.push(density_fd(p, cfg.fd_points, &mut rng)?);
    }
    for p in &problems {
        reports.extend(objective_fd(p, &mut rng)?);
    }
    reports.extend(eper_reports(mm, true)?);
    if cfg.thorough {
        for p in problems.iter().filter(|p| p.name != mm.name) {
            reports.push(brute_force(p)?);
            reports.extend(eper_reports(p, false)?);
        }
    }
    Ok(reports)
}

pub fn run(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let reports = suite(&cfg.check, cfg.seed())?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    let summary = CheckSummary {
        passed: reports.len() - failed,
        failed,
        reports: &reports,
    };
    out.json("check.json", &CheckInputs { check: &cfg.check }, &summary)?;
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!(
            "FAIL {}: reference {:e}, test {:e}, tolerance {:e}",
            r.name, r.reference, r.test, r.tolerance
        );
    }
    let status = if failed == 0 {
        Status::Ok
    } else {
        Status::Invariant
    };
    Ok((
        status,
        format!(
            "{}/{} checks passed -> {}",
            reports.len() - failed,
            reports.len(),
            out.display()
        ),
    ))
}

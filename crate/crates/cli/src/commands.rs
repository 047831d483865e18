//! Bodies of the `e1`, `eper`, `limit-density`, `recover` and `scan`
//! commands. Each writes its artifacts to the output directory and returns
//! the exit status with a one-line summary.

use serde::Serialize;
use tlayer_core::cell1d::{optimize_e1_report, write_l_scan_csv, LScanRow};
use tlayer_core::cellnd::{
    optimize_eper, write_eper_scan_csv, CellGrid, EPerResult, EperOptions, EperRow, LatticeBasis,
    Ramp,
};
use tlayer_core::mollifier::{
    limit_surface_density, profile_p, write_gamma_csv, Kernel, KernelProfile,
};
use tlayer_core::recovery::{
    epsilon_scan, interface_basis, CellPerturbation, EnergyTrace, RecoveryConfig,
};
use tlayer_core::{
    validate, CompositeJump, DensityConfig, EnergyDensity, Error, PiecewiseField, Result,
};

use crate::config::{
    E1Config, EperConfig, JumpConfig, KernelConfig, RampChoice, RecoverConfig, RunConfig,
};
use crate::output::{OutputDir, Status};

/// Tolerance of the `E_per ≤ E₁` invariant.
const EXCESS_TOL: f64 = 1e-6;
/// Largest admissible discrete curl or divergence of a cell field.
const STRUCTURE_TOL: f64 = 1e-12;
/// Slack of the modified-versus-primary limit comparison.
const MODIFIED_TOL: f64 = 1e-3;

#[derive(Serialize, Default)]
struct Inputs<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    density: Option<DensityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jump: Option<&'a JumpConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e1: Option<&'a E1Config>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eper: Option<&'a EperConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<&'a KernelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recover: Option<&'a RecoverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scan_eper: Option<bool>,
}

fn kernel_profile(cfg: &RunConfig, dim: usize) -> Result<KernelProfile> {
    let kernel =
        Kernel::new(cfg.kernel.shape, dim).map_err(|e| Error::Config(format!("kernel: {e}")))?;
    profile_p(&kernel, cfg.kernel.resolution)
}

/// Cell solver options including the ramp.
pub fn eper_options(cfg: &RunConfig, dim: usize) -> Result<EperOptions> {
    let mut opts = cfg.eper.options(cfg.seed());
    opts.track_structure = true;
    if cfg.eper.ramp == RampChoice::Kernel {
        opts.ramp = Ramp::Kernel(kernel_profile(cfg, dim)?);
    }
    Ok(opts)
}

#[derive(Serialize)]
struct E1Summary<'a> {
    value: f64,
    l_star: f64,
    grid_n: usize,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
    table: &'a [LScanRow],
}

pub fn e1(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let density = cfg.density()?;
    let jump = cfg.jump(&density)?;
    let r = optimize_e1_report(
        &density,
        &jump,
        cfg.e1.grid_n,
        &cfg.e1.l_values(),
        &cfg.e1.options(),
    )?;
    r.profile.write_csv(out.csv("profile.csv")?)?;
    let inputs = Inputs {
        density: Some(density.to_config()),
        jump: cfg.jump.as_ref(),
        e1: Some(&cfg.e1),
        ..Inputs::default()
    };
    let summary = E1Summary {
        value: r.value,
        l_star: r.l_star,
        grid_n: r.grid_n,
        iterations: r.iterations,
        converged: r.converged,
        grad_norm: r.grad_norm,
        table: &r.table,
    };
    out.json("e1.json", &inputs, &summary)?;
    let status = if r.converged {
        Status::Ok
    } else {
        Status::Unconverged
    };
    Ok((
        status,
        format!(
            "E1 = {:.10} at L = {} (converged: {}) -> {}",
            r.value,
            r.l_star,
            r.converged,
            out.display()
        ),
    ))
}

#[derive(Serialize)]
struct EperSummary<'a> {
    value: f64,
    l_star: f64,
    e1_value: f64,
    basis: &'a LatticeBasis,
    grid: &'a CellGrid,
    perturbation_norm: f64,
    converged: bool,
    seed: Option<u64>,
    invariants: Vec<String>,
    table: &'a [EperRow],
}

/// Violated cell invariants: `E_per ≤ E₁` and exact structure.
fn eper_invariants(r: &EPerResult) -> Vec<String> {
    let mut bad = Vec::new();
    if r.value > r.e1_value + EXCESS_TOL {
        bad.push(format!(
            "E_per {} exceeds E1 {} by more than {EXCESS_TOL:e}",
            r.value, r.e1_value
        ));
    }
    for row in &r.table {
        if row.max_curl > STRUCTURE_TOL || row.max_div > STRUCTURE_TOL {
            bad.push(format!(
                "L = {}: curl {:e} / divergence {:e} above {STRUCTURE_TOL:e}",
                row.l, row.max_curl, row.max_div
            ));
        }
    }
    bad
}

fn eper_summary(r: &EPerResult) -> EperSummary<'_> {
    EperSummary {
        value: r.value,
        l_star: r.l_star,
        e1_value: r.e1_value,
        basis: &r.basis,
        grid: &r.grid,
        perturbation_norm: r.perturbation_norm,
        converged: r.converged,
        seed: r.seed,
        invariants: eper_invariants(r),
        table: &r.table,
    }
}

fn cell_status(r: &EPerResult) -> Status {
    if !eper_invariants(r).is_empty() {
        Status::Invariant
    } else if !r.converged {
        Status::Unconverged
    } else {
        Status::Ok
    }
}

fn solve_cell(
    cfg: &RunConfig,
    density: &EnergyDensity,
    jump: &CompositeJump,
    l_grid: &[f64],
) -> Result<EPerResult> {
    let dim = density.dim();
    if dim < 2 {
        return crate::config::config_err("periodic cells need dimension 2 or 3");
    }
    let grid = cfg.eper.grid(dim)?;
    let basis = cfg.eper.basis(&jump.nu)?;
    let opts = eper_options(cfg, dim)?;
    optimize_eper(density, jump, &basis, &grid, l_grid, &opts)
}

pub fn eper(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let density = cfg.density()?;
    let jump = cfg.jump(&density)?;
    let r = solve_cell(cfg, &density, &jump, &cfg.e1.l_values())?;
    r.field.write_csv(out.csv("cell.csv")?)?;
    let inputs = Inputs {
        density: Some(density.to_config()),
        jump: cfg.jump.as_ref(),
        e1: Some(&cfg.e1),
        eper: Some(&cfg.eper),
        kernel: (cfg.eper.ramp == RampChoice::Kernel).then_some(&cfg.kernel),
        ..Inputs::default()
    };
    out.json("eper.json", &inputs, &eper_summary(&r))?;
    Ok((
        cell_status(&r),
        format!(
            "E_per = {:.10} at L = {} (E1 = {:.10}, converged: {}) -> {}",
            r.value,
            r.l_star,
            r.e1_value,
            r.converged,
            out.display()
        ),
    ))
}

#[derive(Serialize)]
struct LimitSummary {
    value: f64,
    mass: f64,
    dim: usize,
}

pub fn limit_density(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let density = cfg.density()?;
    let jump = cfg.jump(&density)?;
    let profile = kernel_profile(cfg, density.dim())?;
    let value = limit_surface_density(&density, &profile, &jump, cfg.kernel.quadrature)?;
    profile.write_csv(out.csv("kernel_profile.csv")?)?;
    write_gamma_csv(
        &profile,
        &jump,
        cfg.kernel.gamma_samples,
        out.csv("gamma.csv")?,
    )?;
    let inputs = Inputs {
        density: Some(density.to_config()),
        jump: cfg.jump.as_ref(),
        kernel: Some(&cfg.kernel),
        ..Inputs::default()
    };
    let summary = LimitSummary {
        value,
        mass: profile.mass,
        dim: density.dim(),
    };
    out.json("limit_density.json", &inputs, &summary)?;
    Ok((Status::Ok, format!("K = {value:.10} -> {}", out.display())))
}

#[derive(Serialize)]
struct ModifiedSummary<'a> {
    interface: usize,
    cell: EperSummary<'a>,
    trace: &'a EnergyTrace,
}

#[derive(Serialize)]
struct RecoverSummary<'a> {
    interfaces: usize,
    primary: &'a EnergyTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    modified: Option<ModifiedSummary<'a>>,
    invariants: Vec<String>,
}

/// Cell perturbation on interface `iface`, computed with the kernel ramp in
/// the interface lattice.
fn interface_cell(
    cfg: &RunConfig,
    field: &PiecewiseField,
    density: &EnergyDensity,
    iface: usize,
) -> Result<EPerResult> {
    let s = field.interfaces.get(iface).ok_or_else(|| {
        Error::Config(format!("recover.modified_interface {iface} does not exist"))
    })?;
    let basis = interface_basis(s).map_err(|e| Error::Config(e.to_string()))?;
    let xp: Vec<f64> = s
        .patch
        .lo
        .iter()
        .zip(&s.patch.hi)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let jump = field.trace_pair(iface, &xp)?;
    let dim = field.dim();
    let grid = cfg.eper.grid(dim)?;
    let mut opts = eper_options(cfg, dim)?;
    opts.ramp = Ramp::Kernel(kernel_profile(cfg, dim)?);
    optimize_eper(density, &jump, &basis, &grid, &[cfg.recover.cell_l], &opts)
}

pub fn recover(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let field = cfg.field()?;
    let density = cfg.field_density(&field)?;
    let report = validate(&field, &density);
    if !report.is_empty() {
        let first = &report.violations[0];
        return crate::config::config_err(format!(
            "field is not admissible ({} violations, first: {})",
            report.violations.len(),
            first.detail
        ));
    }
    let rc = RecoveryConfig {
        kernel: cfg.kernel.shape,
        profile_resolution: cfg.kernel.resolution,
        epsilons: cfg.recover.epsilons.clone(),
        spacing_divisor: cfg.recover.spacing_divisor,
        limit_quadrature: cfg.kernel.quadrature,
        mean_correction: cfg.recover.mean_correction,
    };
    rc.check()
        .map_err(|e| Error::Config(format!("recover: {e}")))?;
    let primary = epsilon_scan(&field, &density, &rc, None)?;
    primary.write_csv(out.csv("trace_primary.csv")?)?;

    let mut status = Status::Ok;
    let mut invariants = Vec::new();
    let cell_and_trace = match cfg.recover.modified_interface {
        None => None,
        Some(iface) => {
            let cell = interface_cell(cfg, &field, &density, iface)?;
            let pert = CellPerturbation {
                interface: iface,
                cell: cell.field.clone(),
            };
            let trace = epsilon_scan(&field, &density, &rc, Some(&pert))?;
            trace.write_csv(out.csv("trace_modified.csv")?)?;
            cell.field.write_csv(out.csv("cell.csv")?)?;
            if trace.extrapolated > primary.extrapolated + MODIFIED_TOL {
                invariants.push(format!(
                    "modified limit {} exceeds primary limit {} by more than {MODIFIED_TOL:e}",
                    trace.extrapolated, primary.extrapolated
                ));
            }
            status = status.worst(cell_status(&cell));
            Some((iface, cell, trace))
        }
    };
    if !invariants.is_empty() {
        status = status.worst(Status::Invariant);
    }
    let summary = RecoverSummary {
        interfaces: field.interfaces.len(),
        primary: &primary,
        modified: cell_and_trace
            .as_ref()
            .map(|(iface, cell, trace)| ModifiedSummary {
                interface: *iface,
                cell: eper_summary(cell),
                trace,
            }),
        invariants,
    };
    let inputs = Inputs {
        density: Some(density.to_config()),
        kernel: Some(&cfg.kernel),
        recover: Some(&cfg.recover),
        eper: cfg.recover.modified_interface.map(|_| &cfg.eper),
        ..Inputs::default()
    };
    out.json("recover.json", &inputs, &summary)?;
    let mut line = format!(
        "primary limit {:.8} (predicted {:.8}, gap {:+.3e})",
        primary.extrapolated, primary.predicted, primary.extrapolated_gap
    );
    if let Some((_, _, t)) = &cell_and_trace {
        line.push_str(&format!(
            ", modified limit {:.8} (predicted {:.8}, gap {:+.3e})",
            t.extrapolated, t.predicted, t.extrapolated_gap
        ));
    }
    line.push_str(&format!(" -> {}", out.display()));
    Ok((status, line))
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    e1: &'a [LScanRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    eper: Option<EperSummary<'a>>,
}

pub fn scan(cfg: &RunConfig, out: &OutputDir) -> Result<(Status, String)> {
    let density = cfg.density()?;
    let jump = cfg.jump(&density)?;
    let l_grid = cfg.e1.l_values();
    let r = optimize_e1_report(&density, &jump, cfg.e1.grid_n, &l_grid, &cfg.e1.options())?;
    write_l_scan_csv(&r.table, out.csv("scan.csv")?)?;
    let mut status = if r.table.iter().all(|row| row.converged) {
        Status::Ok
    } else {
        Status::Unconverged
    };
    let cell = if cfg.scan.eper {
        let c = solve_cell(cfg, &density, &jump, &l_grid)?;
        write_eper_scan_csv(&c.table, out.csv("scan_eper.csv")?)?;
        status = status.worst(cell_status(&c));
        Some(c)
    } else {
        None
    };
    let inputs = Inputs {
        density: Some(density.to_config()),
        jump: cfg.jump.as_ref(),
        e1: Some(&cfg.e1),
        eper: cfg.scan.eper.then_some(&cfg.eper),
        kernel: (cfg.scan.eper && cfg.eper.ramp == RampChoice::Kernel).then_some(&cfg.kernel),
        scan_eper: Some(cfg.scan.eper),
        ..Inputs::default()
    };
    let summary = ScanSummary {
        e1: &r.table,
        eper: cell.as_ref().map(eper_summary),
    };
    out.json("scan.json", &inputs, &summary)?;
    Ok((
        status,
        format!(
            "{} L values, min R_L = {:.10} at L = {} -> {}",
            l_grid.len(),
            r.value,
            r.l_star,
            out.display()
        ),
    ))
}

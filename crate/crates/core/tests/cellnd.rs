mod common;

use common::*;
use tlayer_core::cell1d::Cell1dObjective;
use tlayer_core::cellnd::*;
use tlayer_core::{CompositeJump, ConstraintKind, EnergyDensity, StateLayout};

fn tilted_basis_2d(nu: &[f64]) -> LatticeBasis {
    let t = [-nu[1] * 1.7, nu[0] * 1.7];
    LatticeBasis::new(nu.to_vec(), vec![t.to_vec()]).unwrap()
}

fn check_gradient(
    density: &EnergyDensity,
    jump: &CompositeJump,
    basis: &LatticeBasis,
    grid: &CellGrid,
    class: PerturbationClass,
    seed: u64,
) {
    let obj = CellObjective::new(density, jump, basis, grid, 0.3, class, &Ramp::Quintic).unwrap();
    let mut r = rng(seed);
    let x = random_vec(&mut r, obj.len(), 0.05);
    let err = fd_mismatch(|x, g| obj.value_grad(x, g), &x, 40, seed + 1);
    assert!(err < 1e-6, "gradient mismatch {err:e}");
    let (curl, div) = obj.structure_defects(&x);
    assert!(curl < 1e-12 && div < 1e-12, "curl {curl:e} div {div:e}");
}

#[test]
fn gradient_scalar_tilted_basis() {
    let d = EnergyDensity::modica_mortola(2, 1).unwrap();
    let nu = [0.6, 0.8];
    let j =
        CompositeJump::simple(StateLayout::scalar(2), nu.to_vec(), vec![1.0], vec![-1.0]).unwrap();
    for class in [PerturbationClass::Distribution, PerturbationClass::Smooth] {
        check_gradient(
            &d,
            &j,
            &tilted_basis_2d(&nu),
            &CellGrid::uniform(2, 16),
            class,
            3,
        );
    }
}

#[test]
fn gradient_curl_free_block() {
    let d = EnergyDensity::aviles_giga(2).unwrap();
    let nu = [1.0, 0.0];
    let j = CompositeJump::simple(
        d.layout.clone(),
        nu.to_vec(),
        vec![0.6, 0.8],
        vec![-0.6, 0.8],
    )
    .unwrap();
    check_gradient(
        &d,
        &j,
        &tilted_basis_2d(&nu),
        &CellGrid::uniform(2, 16),
        PerturbationClass::Distribution,
        5,
    );
}

#[test]
fn gradient_div_free_block() {
    let d = quadratic_well(1, layout(2, ConstraintKind::DivFree, 1));
    let nu = [1.0, 0.0];
    let j = CompositeJump::simple(
        d.layout.clone(),
        nu.to_vec(),
        vec![0.6, 0.8],
        vec![0.6, -0.8],
    )
    .unwrap();
    check_gradient(
        &d,
        &j,
        &tilted_basis_2d(&nu),
        &CellGrid::uniform(2, 16),
        PerturbationClass::Distribution,
        7,
    );
}

#[test]
fn gradient_second_order_density() {
    let d = quadratic_well(2, StateLayout::scalar(2));
    let nu = [0.6, 0.8];
    let j =
        CompositeJump::simple(StateLayout::scalar(2), nu.to_vec(), vec![1.0], vec![-1.0]).unwrap();
    check_gradient(
        &d,
        &j,
        &tilted_basis_2d(&nu),
        &CellGrid::uniform(2, 16),
        PerturbationClass::Distribution,
        9,
    );
}

#[test]
fn gradient_three_dimensional_blocks() {
    let nu = [0.0, 0.6, 0.8];
    let basis =
        LatticeBasis::new(nu.to_vec(), vec![vec![1.0, 0.0, 0.0], vec![0.5, -0.8, 0.6]]).unwrap();
    let grid = CellGrid::uniform(3, 16);
    let ag = EnergyDensity::aviles_giga(3).unwrap();
    // both states have unit length and share the tangential part
    let j = CompositeJump::simple(
        ag.layout.clone(),
        nu.to_vec(),
        vec![0.0, 0.6, 0.8],
        vec![0.0, -0.6, -0.8],
    )
    .unwrap();
    check_gradient(&ag, &j, &basis, &grid, PerturbationClass::Distribution, 11);
    let dv = quadratic_well(1, layout(3, ConstraintKind::DivFree, 1));
    let jd = CompositeJump::simple(
        dv.layout.clone(),
        nu.to_vec(),
        vec![0.8, 0.36, 0.48],
        vec![-0.8, 0.36, 0.48],
    )
    .unwrap();
    check_gradient(&dv, &jd, &basis, &grid, PerturbationClass::Smooth, 13);
}

#[test]
fn one_dimensional_profiles_reproduce_e1() {
    let d = EnergyDensity::aviles_giga(2).unwrap();
    let nu = [0.6, 0.8];
    let tau = [-0.8, 0.6];
    let vp = [0.6 * tau[0] + 0.8 * nu[0], 0.6 * tau[1] + 0.8 * nu[1]];
    let vm = [0.6 * tau[0] - 0.8 * nu[0], 0.6 * tau[1] - 0.8 * nu[1]];
    let j = CompositeJump::simple(d.layout.clone(), nu.to_vec(), vp.to_vec(), vm.to_vec()).unwrap();
    let grid = CellGrid::uniform(2, 32);
    let o1 = Cell1dObjective::new(&d, &j, 32, 0.25).unwrap();
    let mut r = rng(17);
    let mut q = o1.ramp();
    for v in q.iter_mut() {
        *v += 0.05 * r.next_u32_f();
    }
    let e1 = o1.value(&q);
    let obj = CellObjective::new(
        &d,
        &j,
        &tilted_basis_2d(&nu),
        &grid,
        0.25,
        PerturbationClass::Distribution,
        &Ramp::Quintic,
    )
    .unwrap();
    let x = obj.from_profile(&o1.states(&q));
    let ep = obj.value(&x);
    assert!((ep - e1).abs() < 1e-12 * (1.0 + e1), "{ep} vs {e1}");
}

trait UnitSample {
    fn next_u32_f(&mut self) -> f64;
}

impl UnitSample for rand_chacha::ChaCha8Rng {
    fn next_u32_f(&mut self) -> f64 {
        use rand::Rng;
        self.gen_range(-1.0..1.0)
    }
}

#[test]
fn eper_does_not_exceed_e1() {
    let d = EnergyDensity::modica_mortola(2, 1).unwrap();
    let nu = [1.0, 0.0];
    let j =
        CompositeJump::simple(StateLayout::scalar(2), nu.to_vec(), vec![1.0], vec![-1.0]).unwrap();
    let basis = LatticeBasis::orthonormal(&nu).unwrap();
    let r = optimize_eper(
        &d,
        &j,
        &basis,
        &CellGrid::uniform(2, 32),
        &[0.25, 0.125],
        &EperOptions::default(),
    )
    .unwrap();
    assert!(r.value <= r.e1_value + 1e-6);
    assert!(r.converged);
    assert!(r.perturbation_norm < 1e-10);
    for row in &r.table {
        assert!(row.max_excess <= 1e-6);
    }
}

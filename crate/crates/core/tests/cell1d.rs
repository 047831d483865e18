mod common;

use common::{fd_mismatch, layout, quadratic_well, random_vec, rng};
use rand::Rng;
use tlayer_core::cell1d::*;
use tlayer_core::oracles::brute_force_e1;
use tlayer_core::{CompositeJump, ConstraintKind, EnergyDensity, StateLayout};

fn mm_jump() -> (EnergyDensity, CompositeJump) {
    let d = EnergyDensity::modica_mortola(2, 1).unwrap();
    let j = CompositeJump::simple(
        StateLayout::scalar(2),
        vec![1.0, 0.0],
        vec![1.0],
        vec![-1.0],
    )
    .unwrap();
    (d, j)
}

fn ag_jump() -> (EnergyDensity, CompositeJump) {
    let d = EnergyDensity::aviles_giga(2).unwrap();
    let j = CompositeJump::simple(
        d.layout.clone(),
        vec![1.0, 0.0],
        vec![0.6, 0.8],
        vec![-0.6, 0.8],
    )
    .unwrap();
    (d, j)
}

#[test]
fn gradients_match_finite_differences_on_random_profiles() {
    let mut r = rng(11);
    let mut cases: Vec<(EnergyDensity, CompositeJump)> = vec![mm_jump(), ag_jump()];
    // second-order and constrained blocks with an oblique normal
    let nu = vec![0.6, 0.8];
    let l = layout(2, ConstraintKind::CurlFree, 1);
    cases.push((
        quadratic_well(2, l.clone()),
        CompositeJump::simple(l, nu.clone(), vec![0.6, 0.8], vec![-0.6, -0.8]).unwrap(),
    ));
    let l = layout(2, ConstraintKind::DivFree, 1);
    cases.push((
        quadratic_well(1, l.clone()),
        CompositeJump::simple(l, nu.clone(), vec![-0.8, 0.6], vec![0.8, -0.6]).unwrap(),
    ));
    let l = layout(2, ConstraintKind::Unconstrained, 2);
    cases.push((
        quadratic_well(2, l.clone()),
        CompositeJump::simple(l, nu, vec![1.0, 0.0], vec![0.0, 1.0]).unwrap(),
    ));
    let mut checked = 0;
    for (d, j) in &cases {
        for _ in 0..20 {
            let n = 2 * r.gen_range(4..20);
            let lval = r.gen_range(0.05..1.0);
            let obj = Cell1dObjective::new(d, j, n, lval).unwrap();
            let mut q = obj.ramp();
            let kick = random_vec(&mut r, q.len(), 0.3);
            q.iter_mut().zip(&kick).for_each(|(a, b)| *a += b);
            let err = fd_mismatch(|x, g| obj.value_grad(x, g), &q, 40, checked);
            assert!(err < 1e-6, "case {checked}: {err}");
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
}

#[test]
fn modica_mortola_reaches_eight_thirds() {
    let (d, j) = mm_jump();
    let r = optimize_e1(&d, &j, 1024, &geometric_l_grid(1, 5), &E1Options::default()).unwrap();
    assert!(r.converged);
    assert!(
        (r.value - 8.0 / 3.0).abs() < 2e-3 * 8.0 / 3.0,
        "{}",
        r.value
    );
    assert!(r.value >= 8.0 / 3.0 - 1e-9);
    let exact = analytic_e1_modica(|u| (1.0 - u * u).powi(2), -1.0, 1.0, 20_000).unwrap();
    assert!((exact - 8.0 / 3.0).abs() < 1e-6);
}

#[test]
fn reflection_symmetry() {
    for (d, j) in [mm_jump(), ag_jump()] {
        let grid = geometric_l_grid(1, 4);
        let a = optimize_e1(&d, &j, 512, &grid, &E1Options::default()).unwrap();
        let b = optimize_e1(&d, &j.flipped(), 512, &grid, &E1Options::default()).unwrap();
        assert!((a.value - b.value).abs() < 1e-8, "{} {}", a.value, b.value);
    }
}

#[test]
fn refinement_is_monotone() {
    for (d, j) in [mm_jump(), ag_jump()] {
        let mut prev = f64::INFINITY;
        for n in [128, 256, 512, 1024] {
            let v = optimize_e1(&d, &j, n, &[0.125], &E1Options::default())
                .unwrap()
                .value;
            assert!(v <= prev + 1e-9, "n = {n}: {v} > {prev}");
            prev = v;
        }
    }
}

#[test]
fn no_jump_has_zero_energy() {
    let d = EnergyDensity::modica_mortola(2, 1).unwrap();
    let j = CompositeJump::simple(StateLayout::scalar(2), vec![1.0, 0.0], vec![1.0], vec![1.0])
        .unwrap();
    let r = optimize_e1(&d, &j, 256, &[0.5, 0.25], &E1Options::default()).unwrap();
    assert!(r.value.abs() < 1e-14);
}

#[test]
fn profile_endpoints_are_pinned() {
    let (d, j) = ag_jump();
    let r = optimize_e1(&d, &j, 256, &[0.25], &E1Options::default()).unwrap();
    assert_eq!(r.profile.states[0], j.v_minus);
    assert_eq!(r.profile.states[256], j.v_plus);
    // the curl-free row only moves along the normal
    for s in &r.profile.states {
        assert!((s[1] - 0.8).abs() < 1e-12);
    }
}

#[test]
fn aviles_giga_agrees_with_brute_force() {
    let (d, j) = ag_jump();
    let fast = optimize_e1(&d, &j, 2048, &geometric_l_grid(1, 5), &E1Options::default())
        .unwrap()
        .value;
    let slow = brute_force_e1(&d, &j, 4096).unwrap();
    assert!((fast - slow).abs() <= 1e-3 * slow, "{fast} {slow}");
}

#[test]
fn scan_csv_has_header_and_rows() {
    let (d, j) = mm_jump();
    let rows = l_scan_report(&d, &j, 128, &[0.5, 0.25], &E1Options::default()).unwrap();
    let mut buf = Vec::new();
    write_l_scan_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("L,R_L,"));
}

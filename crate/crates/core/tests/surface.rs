mod common;

use tlayer_core::fields::BoxDomain;
use tlayer_core::mollifier::{profile_p, Kernel};
use tlayer_core::surface::*;
use tlayer_core::{EnergyDensity, PiecewiseField, Polynomial, StateLayout};

fn mm() -> EnergyDensity {
    EnergyDensity::modica_mortola(2, 1).unwrap()
}

fn step(hi: f64) -> PiecewiseField {
    let dom = BoxDomain::new(vec![-0.5, -hi], vec![0.5, hi]).unwrap();
    PiecewiseField::flat_step(StateLayout::scalar(2), dom, 0, 0.1, vec![-1.0], vec![1.0]).unwrap()
}

fn fast() -> SurfaceSolvers {
    SurfaceSolvers {
        e1_grid_n: 512,
        l_grid: vec![0.25, 0.125, 0.0625],
        ..SurfaceSolvers::default()
    }
}

#[test]
fn flat_modica_mortola_k1() {
    let r = k_functional(&step(0.5), &mm(), DensityKind::E1, &fast()).unwrap();
    assert!(
        (r.total - 8.0 / 3.0).abs() < 2e-3 * 8.0 / 3.0,
        "{}",
        r.total
    );
    assert_eq!(r.unique_jumps, 1);
    assert!(!r.partial);
    assert!((r.interfaces[0].measure - 1.0).abs() < 1e-14);
}

#[test]
fn kper_does_not_exceed_k1() {
    // the ordering is structural when the cell's normal resolution matches
    // the 1D grid
    let f = step(0.5);
    let s = SurfaceSolvers {
        cell_grid: Some(tlayer_core::cellnd::CellGrid {
            normal: 512,
            tangential: vec![16],
        }),
        ..fast()
    };
    let k1 = k_functional(&f, &mm(), DensityKind::E1, &s).unwrap().total;
    let kp = k_functional(&f, &mm(), DensityKind::Eper, &s)
        .unwrap()
        .total;
    assert!(kp <= k1 + 1e-6, "{kp} > {k1}");
    assert!((kp - k1).abs() < 2e-3 * k1);
}

#[test]
fn additive_over_interfaces() {
    let dom = BoxDomain::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
    let f = PiecewiseField::stacked(
        StateLayout::scalar(2),
        dom,
        0,
        vec![Polynomial::constant(1, -0.2), Polynomial::constant(1, 0.2)],
        vec![
            (vec![-1.0], vec![]),
            (vec![1.0], vec![]),
            (vec![-1.0], vec![]),
        ],
    )
    .unwrap();
    let s = fast();
    let one = k_functional(&step(0.5), &mm(), DensityKind::E1, &s)
        .unwrap()
        .total;
    let r = k_functional(&f, &mm(), DensityKind::E1, &s).unwrap();
    assert_eq!(r.interfaces.len(), 2);
    assert!((r.total - 2.0 * one).abs() < 1e-12);
    // both interfaces share one jump up to orientation
    assert!(r.unique_jumps <= 2);
}

#[test]
fn orientation_invariance() {
    let f = step(0.5);
    let s = fast();
    let a = k_functional(&f, &mm(), DensityKind::E1, &s).unwrap().total;
    let b = k_functional(&f.flipped(), &mm(), DensityKind::E1, &s)
        .unwrap()
        .total;
    assert!((a - b).abs() < 1e-8);
}

#[test]
fn scales_with_interface_measure() {
    let s = fast();
    let a = k_functional(&step(0.5), &mm(), DensityKind::E1, &s)
        .unwrap()
        .total;
    let b = k_functional(&step(1.0), &mm(), DensityKind::E1, &s)
        .unwrap()
        .total;
    assert!((b - 2.0 * a).abs() < 1e-10);
}

#[test]
fn curved_interface_uses_area_element() {
    let dom = BoxDomain::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
    let g = common::poly(1, &[(0.2, &[(0, 1)])]);
    let f = PiecewiseField::stacked(
        StateLayout::scalar(2),
        dom,
        1,
        vec![g],
        vec![(vec![-1.0], vec![]), (vec![1.0], vec![])],
    )
    .unwrap();
    let prof = profile_p(&Kernel::bump(2).unwrap(), 1024).unwrap();
    let s = SurfaceSolvers {
        profile: Some(prof),
        ..fast()
    };
    let r = k_functional(&f, &mm(), DensityKind::KernelLimit, &s).unwrap();
    let len = (1.0f64 + 0.04).sqrt();
    assert!((r.interfaces[0].measure - len).abs() < 1e-12);
    let flat = k_functional(&step(0.5), &mm(), DensityKind::KernelLimit, &s).unwrap();
    assert!((r.total - len * flat.total).abs() < 1e-9 * r.total);
}

#[test]
fn kernel_limit_needs_profile() {
    assert!(k_functional(&step(0.5), &mm(), DensityKind::KernelLimit, &fast()).is_err());
}

#[test]
fn report_serializes_kebab_case() {
    let r = k_functional(&step(0.5), &mm(), DensityKind::E1, &fast()).unwrap();
    let j = serde_json::to_string(&r).unwrap();
    assert!(j.contains("\"kind\":\"e1\""));
    assert_eq!(
        serde_json::to_string(&DensityKind::KernelLimit).unwrap(),
        "\"kernel-limit\""
    );
}

mod common;

use tlayer_core::fields::BoxDomain;
use tlayer_core::mollifier::*;
use tlayer_core::poly::Monomial;
use tlayer_core::{
    Block, CompositeJump, ConstraintKind, EnergyDensity, PiecewiseField, Polynomial, StateLayout,
};

fn trapezoid_mass(k: &Kernel, m: usize) -> f64 {
    // nodes at the box corners carry zero kernel mass, so plain sums suffice
    let h = 1.0 / m as f64;
    let n = k.dim;
    let total = (m + 1).pow(n as u32);
    let mut z = vec![0.0; n];
    let mut s = 0.0;
    for idx in 0..total {
        let mut r = idx;
        for za in z.iter_mut() {
            *za = -0.5 + (r % (m + 1)) as f64 * h;
            r /= m + 1;
        }
        s += k.eta(&z);
    }
    s * h.powi(n as i32)
}

#[test]
fn kernel_mass_by_cartesian_trapezoid() {
    for (n, m) in [(1, 2000), (2, 600), (3, 160)] {
        let k = Kernel::bump(n).unwrap();
        let mass = trapezoid_mass(&k, m);
        assert!((mass - 1.0).abs() < 1e-10, "dim {n}: {mass}");
    }
}

#[test]
fn polynomial_kernel_slice_at_origin_matches_closed_form() {
    // ω = (1/4 - r²)² in the plane: c = 192/π and p(0) = 2c/60
    let k = Kernel::new(KernelShape::Polynomial { power: 2 }, 2).unwrap();
    let exact = 6.4 / std::f64::consts::PI;
    assert!((k.slice(0.0) - exact).abs() < 1e-8);
    let prof = profile_p(&k, 1024).unwrap();
    assert!((prof.p_at(0.0) - exact).abs() < 1e-8);
}

#[test]
fn profile_properties_at_every_dimension() {
    for n in 1..=3 {
        let k = Kernel::bump(n).unwrap();
        for res in [64, 256, 2048] {
            let prof = profile_p(&k, res).unwrap();
            assert!((prof.mass - 1.0).abs() < 1e-8, "mass {}", prof.mass);
            for i in 0..=res {
                assert!((prof.p[i] - prof.p[res - i]).abs() <= 1e-12);
            }
            assert_eq!(prof.p_at(0.5), 0.0);
            assert_eq!(prof.p_at(-0.5), 0.0);
            assert_eq!(prof.cum_at(0.0), 0.5);
        }
    }
}

fn mm_jump(n: usize) -> (EnergyDensity, CompositeJump) {
    let d = EnergyDensity::modica_mortola(n, 1).unwrap();
    let mut nu = vec![0.0; n];
    nu[0] = 1.0;
    let j = CompositeJump::simple(StateLayout::scalar(n), nu, vec![1.0], vec![-1.0]).unwrap();
    (d, j)
}

#[test]
fn limit_density_self_converges_and_bounds_e1() {
    for n in 1..=3 {
        let (d, j) = mm_jump(n);
        let prof = profile_p(&Kernel::bump(n).unwrap(), 4096).unwrap();
        let a = limit_surface_density(&d, &prof, &j, 2048).unwrap();
        let b = limit_surface_density(&d, &prof, &j, 4096).unwrap();
        assert!((a - b).abs() <= 1e-6 * b, "{a} {b}");
        assert!(b >= 8.0 / 3.0);
    }
}

#[test]
fn limit_density_without_jump_is_zero() {
    let d = EnergyDensity::modica_mortola(2, 1).unwrap();
    let j = CompositeJump::simple(StateLayout::scalar(2), vec![0.0, 1.0], vec![1.0], vec![1.0])
        .unwrap();
    let prof = profile_p(&Kernel::bump(2).unwrap(), 256).unwrap();
    assert_eq!(limit_surface_density(&d, &prof, &j, 512).unwrap(), 0.0);
}

fn step_1d() -> PiecewiseField {
    let dom = BoxDomain::new(vec![-0.5], vec![0.5]).unwrap();
    PiecewiseField::flat_step(StateLayout::scalar(1), dom, 0, 0.0, vec![-1.0], vec![1.0]).unwrap()
}

#[test]
fn one_dimensional_step_is_zero_at_the_jump() {
    let f = step_1d();
    let k = Kernel::bump(1).unwrap();
    let prof = profile_p(&k, 1024).unwrap();
    let m = MollifiedField::new(&f, &k, &prof, 0.1, 1).unwrap();
    let mut s = NodeSlots::zeros(1, 1, 1, 0);
    m.eval(&[0.0], &mut s).unwrap();
    assert!(s.v[0].abs() < 1e-15);
    for x in [-0.3, 0.051, 0.2] {
        m.eval(&[x], &mut s).unwrap();
        assert_eq!(s.v[0], if x < 0.0 { -1.0 } else { 1.0 });
        assert_eq!(s.d1[0], 0.0);
    }
}

fn two_interface_field(shift: f64) -> PiecewiseField {
    let dom = BoxDomain::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
    let curved = Polynomial::new(
        1,
        vec![
            Monomial {
                coef: -0.1,
                exps: vec![0],
            },
            Monomial {
                coef: 0.4,
                exps: vec![2],
            },
        ],
    )
    .unwrap();
    let flat = Polynomial::constant(1, 0.02);
    PiecewiseField::stacked(
        StateLayout::scalar(2),
        dom,
        1,
        vec![curved, flat],
        vec![
            (vec![-1.0 + shift], vec![]),
            (vec![0.3 + shift], vec![]),
            (vec![1.0 + shift], vec![]),
        ],
    )
    .unwrap()
}

#[test]
fn mollification_commutes_with_constants() {
    let (a, b) = (two_interface_field(0.0), two_interface_field(0.7));
    let k = Kernel::bump(2).unwrap();
    let prof = profile_p(&k, 1024).unwrap();
    let grid = GridSpec::new(vec![-0.5, -0.5], vec![0.5, 0.5], vec![40, 40]).unwrap();
    let ga = mollify(&a, &k, &prof, 0.1, 2, &grid).unwrap();
    let gb = mollify(&b, &k, &prof, 0.1, 2, &grid).unwrap();
    for (x, y) in ga.v.iter().zip(&gb.v) {
        assert!((x + 0.7 - y).abs() < 1e-12);
    }
    for (x, y) in ga.d1.iter().zip(&gb.d1).chain(ga.d2.iter().zip(&gb.d2)) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn divfree_field() -> PiecewiseField {
    // tilted interface x₂ = 0.3 x₁ with normal ∝ (-0.3, 1); the jump is tangential
    let layout = StateLayout::new(
        2,
        vec![Block {
            kind: ConstraintKind::DivFree,
            rows: 1,
        }],
    )
    .unwrap();
    let dom = BoxDomain::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
    let g = Polynomial::affine(0.0, &[0.3]);
    let c = (1.0f64 + 0.09).sqrt();
    let nu = [-0.3 / c, 1.0 / c];
    let tau = [1.0 / c, 0.3 / c];
    let below: Vec<f64> = (0..2).map(|a| 0.6 * nu[a] - 0.8 * tau[a]).collect();
    let above: Vec<f64> = (0..2).map(|a| 0.6 * nu[a] + 0.8 * tau[a]).collect();
    PiecewiseField::stacked(
        layout,
        dom,
        1,
        vec![g],
        vec![(below, vec![]), (above, vec![])],
    )
    .unwrap()
}

fn max_discrete_divergence(f: &PiecewiseField, m: usize) -> f64 {
    let k = Kernel::bump(2).unwrap();
    let prof = profile_p(&k, 4096).unwrap();
    let grid = GridSpec::new(vec![-0.25, -0.25], vec![0.25, 0.25], vec![m, m]).unwrap();
    let gf = mollify(f, &k, &prof, 0.1, 1, &grid).unwrap();
    let h = 0.5 / m as f64;
    let at = |i: usize, j: usize, c: usize| gf.v[(i * m + j) * 2 + c];
    let mut worst = 0.0_f64;
    for i in 1..m - 1 {
        for j in 1..m - 1 {
            let div = (at(i + 1, j, 0) - at(i - 1, j, 0)) / (2.0 * h)
                + (at(i, j + 1, 1) - at(i, j - 1, 1)) / (2.0 * h);
            worst = worst.max(div.abs());
        }
    }
    worst
}

#[test]
fn divergence_of_mollified_divfree_block_is_second_order() {
    let f = divfree_field();
    let coarse = max_discrete_divergence(&f, 100);
    let fine = max_discrete_divergence(&f, 200);
    let rate = (coarse / fine).log2();
    assert!(rate >= 1.8, "rate {rate} ({coarse:e} -> {fine:e})");
}

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use tlayer_bench::{l_grid, mm_step, problem};
use tlayer_core::cell1d::{optimize_e1_report, Cell1dObjective, E1Options};
use tlayer_core::cellnd::{
    optimize_eper, CellGrid, CellInit, CellObjective, EperOptions, LatticeBasis, PerturbationClass,
    Ramp,
};
use tlayer_core::mollifier::{limit_surface_density, profile_p, Kernel};
use tlayer_core::recovery::{build_primary, energy, RecoveryConfig};
use tlayer_core::EnergyDensity;

fn e1(c: &mut Criterion) {
    let p = problem("mm-scalar-2d");
    let opts = E1Options::default();
    c.bench_function("e1/mm/1024", |b| {
        b.iter(|| {
            optimize_e1_report(&p.density, &p.jump, 1024, &l_grid(), &opts)
                .unwrap()
                .value
        })
    });
    let obj = Cell1dObjective::new(&p.density, &p.jump, 1024, 0.125).unwrap();
    let q = obj.ramp();
    let mut g = vec![0.0; q.len()];
    c.bench_function("e1/value-grad/1024", |b| {
        b.iter(|| obj.value_grad(black_box(&q), &mut g))
    });
}

fn eper(c: &mut Criterion) {
    let mut group = c.benchmark_group("eper");
    group.sample_size(10);
    for name in ["mm-scalar-2d", "ag-2d"] {
        let p = problem(name);
        let basis = LatticeBasis::orthonormal(&p.jump.nu).unwrap();
        let grid = CellGrid::uniform(2, 32);
        let opts = EperOptions {
            init: CellInit::Zero,
            ..EperOptions::default()
        };
        group.bench_function(format!("{name}/32x32/zero-init"), |b| {
            b.iter(|| {
                optimize_eper(&p.density, &p.jump, &basis, &grid, &[0.125], &opts)
                    .unwrap()
                    .value
            })
        });
        let obj = CellObjective::new(
            &p.density,
            &p.jump,
            &basis,
            &CellGrid::uniform(2, 64),
            0.125,
            PerturbationClass::Distribution,
            &Ramp::Quintic,
        )
        .unwrap();
        let x = vec![0.01; obj.len()];
        let mut g = vec![0.0; x.len()];
        group.bench_function(format!("{name}/value-grad/64x64"), |b| {
            b.iter(|| obj.value_grad(black_box(&x), &mut g))
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    let p = problem("mm-scalar-2d");
    let k = Kernel::bump(2).unwrap();
    c.bench_function("kernel/profile/4096", |b| {
        b.iter(|| profile_p(&k, 4096).unwrap().mass)
    });
    let prof = profile_p(&k, 4096).unwrap();
    c.bench_function("kernel/limit-density/4096", |b| {
        b.iter(|| limit_surface_density(&p.density, &prof, &p.jump, 4096).unwrap())
    });
}

fn recovery(c: &mut Criterion) {
    let mut group = c.benchmark_group("recovery");
    group.sample_size(10);
    let field = mm_step(2);
    let density = EnergyDensity::modica_mortola(2, 1).unwrap();
    let k = Kernel::bump(2).unwrap();
    let prof = profile_p(&k, 4096).unwrap();
    let cfg = RecoveryConfig::default();
    for eps in [0.05, 0.025] {
        let grid = cfg.grid(&field, eps).unwrap();
        let src = build_primary(&field, &k, &prof, eps, 1).unwrap();
        group.bench_function(format!("primary-energy/eps={eps}"), |b| {
            b.iter(|| energy(&src, &density, eps, &grid).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, e1, eper, kernel, recovery);
criterion_main!(benches);

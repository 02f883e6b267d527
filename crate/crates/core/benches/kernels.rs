use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pluripot::capacity::{capacity, CapacityOrder};
use pluripot::dirichlet::solve_c1;
use pluripot::exec;
use pluripot::field::{sample, ScalarField};
use pluripot::grid::{make_grid, region_from_predicate, Domain, Grid};
use pluripot::measure::ma_smooth;
use pluripot::model::parse_model;
use pluripot::psh::check_psh;

fn grid(n: usize, res: usize) -> Arc<Grid> {
    make_grid(&Domain::unit_ball(n).unwrap(), res).unwrap()
}

fn field(g: &Arc<Grid>, text: &str) -> ScalarField {
    sample(&parse_model(text).unwrap(), g).unwrap()
}

fn both<F: FnMut()>(c: &mut Criterion, name: &str, mut f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    for parallel in [true, false] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            exec::set_parallel(parallel);
            b.iter(&mut f);
        });
    }
    exec::set_parallel(true);
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let g2 = grid(2, 24);
    let u2 = field(&g2, "abs2(z1) + 2*abs2(z2) + 0.3*abs2(z1)*abs2(z2)");
    both(c, "ma_smooth_c2_res24", || {
        ma_smooth(&u2).unwrap();
    });
    both(c, "check_psh_c2_res24", || {
        check_psh(&u2, 1e-9);
    });

    let g1 = grid(1, 128);
    let k = region_from_predicate(&g1, |x| (x[0] - 0.2).hypot(x[1]) <= 0.3);
    both(c, "capacity_grid_lane_res128", || {
        capacity(&k, &g1, CapacityOrder::FullN).unwrap();
    });

    let f = field(&g1, "4 + re(z)");
    let zero = field(&g1, "0");
    both(c, "solve_c1_res128", || {
        solve_c1(&f, &zero).unwrap();
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);

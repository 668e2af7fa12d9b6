//! Metric checks: the matching distance is a metric, the 1-D quantile and
//! assignment routes agree, quadrature integrals hit one, projections
//! match analytic marginals, and realized cost arithmetic.

use std::sync::Arc;

use nfmkv_core::diffcore::ParamStore;
use nfmkv_core::flows::{BaseDensity, TimeIndexedFlow};
use nfmkv_core::metrics::{
    consecutive_wdist, density_integral, projected_density_2d, realized_cost, wasserstein,
};
use nfmkv_core::problems::{make_crowd_motion, MuSnapshot};
use nfmkv_core::sde::{gen_wiener, simulate_forward, SimContext, TimeGrid, ValueNets};
use nfmkv_core::stream::StreamKey;

fn random_cloud(m: usize, dim: usize, key: StreamKey) -> Vec<f64> {
    (0..m * dim).map(|i| key.normal_at(i as u64)).collect()
}

#[test]
fn wasserstein_is_a_metric_on_point_sets() {
    let key = StreamKey::root(3).tag("metric");
    for trial in 0..10u64 {
        let a = random_cloud(24, 2, key.child(3 * trial));
        let b = random_cloud(24, 2, key.child(3 * trial + 1));
        let c = random_cloud(24, 2, key.child(3 * trial + 2));
        let wab = wasserstein(&a, &b, 2, 1).unwrap();
        let wba = wasserstein(&b, &a, 2, 1).unwrap();
        assert!((wab - wba).abs() < 1e-12, "asymmetric: {wab} vs {wba}");
        let wac = wasserstein(&a, &c, 2, 1).unwrap();
        let wcb = wasserstein(&c, &b, 2, 1).unwrap();
        assert!(
            wab <= wac + wcb + 1e-12,
            "triangle violated: {wab} > {wac} + {wcb}"
        );
        assert!(wab > 0.0, "distinct clouds at zero distance");
    }
    // Zero iff equal as multisets (any ordering).
    let a = [0.5, 0.5, -1.0, 2.0, 0.0, 0.0];
    let shuffled = [0.0, 0.0, 0.5, 0.5, -1.0, 2.0];
    assert!(wasserstein(&a, &shuffled, 2, 1).unwrap() < 1e-14);
}

#[test]
fn quantile_formula_equals_assignment_in_1d() {
    let key = StreamKey::root(7).tag("q-vs-a");
    for trial in 0..20u64 {
        let m = 8 + (key.u64_at(trial) % 57) as usize; // up to 64
        let a = random_cloud(m, 1, key.child(2 * trial));
        let b = random_cloud(m, 1, key.child(2 * trial + 1));
        let quantile = wasserstein(&a, &b, 1, 1).unwrap();
        // Exact assignment on the same sets, via the d >= 2 path with a
        // padded zero second coordinate.
        let pad = |v: &[f64]| -> Vec<f64> {
            v.iter().flat_map(|&x| [x, 0.0]).collect()
        };
        let assigned = wasserstein(&pad(&a), &pad(&b), 2, 1).unwrap();
        assert!(
            (quantile - assigned).abs() < 1e-10,
            "trial {trial}: quantile {quantile} vs assignment {assigned}"
        );
    }
}

#[test]
fn ring_density_integral_is_exact_for_uniform() {
    let mut store = ParamStore::new();
    let flow = TimeIndexedFlow::ring(&mut store, BaseDensity::UniformRing, 3, 8);
    flow.init(&mut store, StreamKey::root(5));
    let di = density_integral(&flow, &store, 2, 512, StreamKey::root(6)).unwrap();
    assert!((di.integral - 1.0).abs() < 1e-12, "integral {}", di.integral);
    assert!(di.log_diff <= -12.0);
    assert!(di.coverage_ok);
}

#[test]
fn planar_density_integral_close_to_one() {
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian {
        mean: vec![0.0, 0.0],
        std: vec![1.0, 1.0],
    };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 2, 2, 16);
    flow.init(&mut store, StreamKey::root(8));
    // Perturb so this is not the trivial identity.
    for (i, v) in store.values_mut().iter_mut().enumerate() {
        *v += 0.25 * (2.0 * StreamKey::root(9).uniform_at(i as u64) - 1.0);
    }
    let di = density_integral(&flow, &store, 2, 200, StreamKey::root(10)).unwrap();
    assert!(
        (0.999..=1.001).contains(&di.integral),
        "integral {}",
        di.integral
    );
    assert!(di.coverage_ok, "boundary density too large");
}

#[test]
fn projected_histogram_matches_standard_normal_marginal() {
    // 50-dimensional standard normal; the first-two-coordinate marginal is
    // the 2-D standard normal.
    let d = 50;
    let m = 40_000;
    let key = StreamKey::root(11).tag("proj");
    let samples: Vec<f64> = (0..m * d).map(|i| key.normal_at(i as u64)).collect();
    let p = projected_density_2d(&samples, d, 64).unwrap();
    assert!(
        (p.integral - 1.0).abs() < 0.05,
        "projected integral {}",
        p.integral
    );
    // Compare occupied cells against the analytic marginal within noise.
    let (x0lo, x0hi) = p.x0_range;
    let (x1lo, x1hi) = p.x1_range;
    let c0 = (x0hi - x0lo) / 64.0;
    let c1 = (x1hi - x1lo) / 64.0;
    let mut worst = 0.0f64;
    for i in 0..64 {
        for j in 0..64 {
            let x = x0lo + (i as f64 + 0.5) * c0;
            let y = x1lo + (j as f64 + 0.5) * c1;
            let want = (-(x * x + y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI);
            let got = p.grid[i * 64 + j];
            // Binomial standard error of the histogram cell.
            let se = (want / (m as f64 * c0 * c1)).sqrt().max(1e-4);
            worst = worst.max((got - want).abs() / se);
        }
    }
    assert!(worst < 5.0, "worst cell deviation {worst} standard errors");
}

#[test]
fn projection_of_a_point_mass_is_a_single_cell() {
    let samples = vec![1.0; 3 * 5]; // five samples at (1,1,1)
    let p = projected_density_2d(&samples, 3, 16).unwrap();
    let occupied = p.grid.iter().filter(|&&v| v > 0.0).count();
    // Smoothing spreads a point mass over at most a 3x3 patch.
    assert!(occupied <= 9, "{occupied} occupied cells");
    assert!((p.integral - 1.0).abs() < 0.2);
}

#[test]
fn identity_flow_consecutive_distance_shrinks_with_samples() {
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian {
        mean: vec![0.0, 0.0],
        std: vec![1.0, 1.0],
    };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 4, 2, 8);
    flow.init(&mut store, StreamKey::root(21));
    // Identity flow: all motion is Monte-Carlo fluctuation. With a common
    // base stream per pair the coupled estimate is exactly zero.
    let w = consecutive_wdist(&flow, &store, 256, StreamKey::root(22)).unwrap();
    assert!(w.mean < 1e-12, "identity flow mean distance {}", w.mean);

    // Perturbed flow: distances stay finite and the estimator is stable
    // in M (coupled sampling).
    for (i, v) in store.values_mut().iter_mut().enumerate() {
        *v += 0.2 * (2.0 * StreamKey::root(23).uniform_at(i as u64) - 1.0);
    }
    let w256 = consecutive_wdist(&flow, &store, 256, StreamKey::root(24)).unwrap();
    let w1024 = consecutive_wdist(&flow, &store, 1024, StreamKey::root(25)).unwrap();
    assert!(w256.mean > 0.0 && w1024.mean > 0.0);
    assert!(
        (w256.mean - w1024.mean).abs() < 0.5 * w256.mean.max(w1024.mean),
        "estimates differ wildly: {} vs {}",
        w256.mean,
        w1024.mean
    );
}

#[test]
fn realized_cost_arithmetic() {
    // Zero control, far interaction cloud, zero-ish g is impossible for
    // crowd (g >= 1), so check against the hand-computed expectation.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let p = make_crowd_motion(
        1,
        vec![0.0],
        1e-9,
        grid,
        BaseDensity::Gaussian { mean: vec![0.0], std: vec![1e-12] },
    )
    .unwrap();
    let cloud: Arc<[f64]> = vec![1e4].into();
    let mu = MuSnapshot::from_parts(1, vec![cloud; 9], None);
    let w = gen_wiener(&grid, 4, 1, StreamKey::root(31).tag("w")).unwrap();
    let mut store = ParamStore::new();
    let nets = ValueNets::register(&mut store, 1, 8, &[4], &[]);
    let ctx = SimContext {
        problem: &p,
        mu: &mu,
        wiener: &w,
        x0_key: StreamKey::root(31).tag("x0"),
    };
    let traj = simulate_forward(&ctx, &store, &nets).unwrap();
    // f == 0 (zero control, dead interaction), g = e^{|X_T|^2} with X_T ~ 0.
    let j = realized_cost(&p, &traj, &mu);
    assert!((j - 1.0).abs() < 1e-6, "cost {j}");
}

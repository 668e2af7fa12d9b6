//! Flow block and density-path checks: bijectivity, log-determinant
//! consistency against numerical Jacobians, mass conservation under
//! quadrature, and sampler/density agreement.

use nfmkv_core::diffcore::{fd_check, MlpScratch, ParamStore, Tape};
use nfmkv_core::flows::{BaseDensity, FlowBlock, MafBlock, SplineBlock, TimeIndexedFlow};
use nfmkv_core::stream::StreamKey;

fn perturb(store: &mut ParamStore, key: StreamKey, scale: f64) {
    for (i, v) in store.values_mut().iter_mut().enumerate() {
        *v += (2.0 * key.uniform_at(i as u64) - 1.0) * scale;
    }
}

fn maf_block(dim: usize, seed: u64, perturbation: f64) -> (ParamStore, FlowBlock) {
    let mut store = ParamStore::new();
    let b = MafBlock::register(&mut store, "b", dim, 16);
    b.init(&mut store, StreamKey::root(seed));
    perturb(&mut store, StreamKey::root(seed).tag("perturb"), perturbation);
    (store, FlowBlock::MafAffine(b))
}

fn spline_block(seed: u64, perturbation: f64) -> (ParamStore, FlowBlock) {
    let mut store = ParamStore::new();
    let b = SplineBlock::register(&mut store, "b", 16, true);
    b.init(&mut store, StreamKey::root(seed).tag("spline-init"));
    perturb(&mut store, StreamKey::root(seed).tag("perturb"), perturbation);
    (store, FlowBlock::CircularSpline(b))
}

fn random_point(dim: usize, ring: bool, key: StreamKey, i: u64) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            if ring {
                key.uniform_at(i * dim as u64 + k as u64)
            } else {
                2.5 * key.normal_at(i * dim as u64 + k as u64)
            }
        })
        .collect()
}

#[test]
fn round_trip_and_logdet_antisymmetry_all_kinds() {
    let cases: Vec<(ParamStore, FlowBlock, bool)> = vec![
        {
            let (s, b) = maf_block(3, 1, 0.4);
            (s, b, false)
        },
        {
            let (s, b) = spline_block(2, 0.5);
            (s, b, true)
        },
        {
            (ParamStore::new(), FlowBlock::reversal(4), false)
        },
    ];
    let key = StreamKey::root(99).tag("roundtrip");
    for (store, block, ring) in &cases {
        let dim = match block {
            FlowBlock::MafAffine(_) => 3,
            FlowBlock::CircularSpline(_) => 1,
            FlowBlock::Permute { perm, .. } => perm.len(),
        };
        let mut scratch = MlpScratch::default();
        let (mut y, mut x_back) = (Vec::new(), Vec::new());
        let mut max_rt = 0.0f64;
        let mut max_anti = 0.0f64;
        for i in 0..1000u64 {
            let x = random_point(dim, *ring, key, i);
            let ld_f = block.forward_raw(store, &x, &mut scratch, &mut y).unwrap();
            let ld_i = block.inverse_raw(store, &y, &mut scratch, &mut x_back).unwrap();
            for k in 0..dim {
                let mut d = (x_back[k] - x[k]).abs();
                if *ring {
                    d = d.min((1.0 - d).abs());
                }
                max_rt = max_rt.max(d);
            }
            max_anti = max_anti.max((ld_f + ld_i).abs());
        }
        assert!(max_rt < 1e-6, "round-trip error {max_rt} for {block:?}");
        assert!(max_anti < 1e-8, "log-det asymmetry {max_anti} for {block:?}");
    }
}

#[test]
fn maf_zero_conditioners_are_identity() {
    let mut store = ParamStore::new();
    let b = MafBlock::register(&mut store, "b", 3, 8);
    b.init(&mut store, StreamKey::root(4));
    // init_final_zero makes the map exactly x -> x with zero log-det.
    let mut scratch = MlpScratch::default();
    let mut y = Vec::new();
    let block = FlowBlock::MafAffine(b);
    let x = [0.3, -1.7, 0.9];
    let ld = block.forward_raw(&store, &x, &mut scratch, &mut y).unwrap();
    assert_eq!(y.as_slice(), &x);
    assert_eq!(ld, 0.0);
}

#[test]
fn maf_constant_log_scale_doubles_coordinates() {
    // Configure every conditioner to output scale 2 and shift 0.
    let mut store = ParamStore::new();
    let b = MafBlock::register(&mut store, "b", 3, 8);
    b.init(&mut store, StreamKey::root(4));
    // The squashed log-scale is C*tanh(a/C); solve for raw a giving ln 2.
    let c = 5.0f64;
    let a_raw = c * ((2.0f64.ln() / c) as f64).atanh();
    store.segment_mut(store.id_by_name("b.c0").unwrap())[0] = a_raw;
    for i in 1..3 {
        let bid = store.id_by_name(&format!("b.c{i}.b1")).unwrap();
        store.segment_mut(bid)[0] = a_raw;
    }
    let block = FlowBlock::MafAffine(b);
    let mut scratch = MlpScratch::default();
    let mut y = Vec::new();
    let x = [0.5, -1.0, 2.0];
    let ld = block.forward_raw(&store, &x, &mut scratch, &mut y).unwrap();
    for k in 0..3 {
        assert!((y[k] - 2.0 * x[k]).abs() < 1e-12, "coord {k}: {}", y[k]);
    }
    assert!((ld - 3.0 * 2.0f64.ln()).abs() < 1e-12, "logdet {ld}");
}

#[test]
fn logdet_matches_numerical_jacobian() {
    // Oracle: finite-difference Jacobian determinant on random 2-D inputs.
    let (store, block) = maf_block(2, 7, 0.5);
    let mut scratch = MlpScratch::default();
    let key = StreamKey::root(21);
    let h = 1e-6;
    for i in 0..50u64 {
        let x = random_point(2, false, key, i);
        let mut y0 = Vec::new();
        let ld = block.forward_raw(&store, &x, &mut scratch, &mut y0).unwrap();
        let mut jac = [[0.0f64; 2]; 2];
        for c in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (mut yp, mut ym) = (Vec::new(), Vec::new());
            block.forward_raw(&store, &xp, &mut scratch, &mut yp).unwrap();
            block.forward_raw(&store, &xm, &mut scratch, &mut ym).unwrap();
            for r in 0..2 {
                jac[r][c] = (yp[r] - ym[r]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!(
            (det.abs().ln() - ld).abs() < 1e-4,
            "point {i}: logdet {ld} vs numerical {}",
            det.abs().ln()
        );
    }
}

#[test]
fn spline_logdet_matches_numerical_derivative() {
    let (store, block) = spline_block(3, 0.6);
    let mut scratch = MlpScratch::default();
    let key = StreamKey::root(31);
    let h = 1e-7;
    for i in 0..100u64 {
        let x = key.uniform_at(i) * 0.98 + 0.01;
        let mut y0 = Vec::new();
        let ld = block
            .forward_raw(&store, &[x], &mut scratch, &mut y0)
            .unwrap();
        let (mut yp, mut ym) = (Vec::new(), Vec::new());
        block.forward_raw(&store, &[x + h], &mut scratch, &mut yp).unwrap();
        block.forward_raw(&store, &[x - h], &mut scratch, &mut ym).unwrap();
        let mut dy = yp[0] - ym[0];
        // Unwrap if the offset wrapped one of the probes around the ring.
        if dy > 0.5 {
            dy -= 1.0;
        }
        if dy < -0.5 {
            dy += 1.0;
        }
        let slope = dy / (2.0 * h);
        assert!(
            (slope.abs().ln() - ld).abs() < 1e-4,
            "x={x}: logdet {ld} vs numerical {}",
            slope.abs().ln()
        );
    }
}

#[test]
fn maf_jacobian_is_lower_triangular() {
    let (store, block) = maf_block(4, 11, 0.5);
    let mut scratch = MlpScratch::default();
    let key = StreamKey::root(41);
    let h = 1e-6;
    for i in 0..20u64 {
        let x = random_point(4, false, key, i);
        for c in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (mut yp, mut ym) = (Vec::new(), Vec::new());
            block.forward_raw(&store, &xp, &mut scratch, &mut yp).unwrap();
            block.forward_raw(&store, &xm, &mut scratch, &mut ym).unwrap();
            for r in 0..c {
                let entry = (yp[r] - ym[r]) / (2.0 * h);
                assert!(
                    entry.abs() < 1e-8,
                    "J[{r}][{c}] = {entry} above the diagonal"
                );
            }
        }
    }
}

#[test]
fn tape_paths_match_raw_paths() {
    let (store, block) = maf_block(3, 13, 0.4);
    let mut scratch = MlpScratch::default();
    let x = [0.4, -0.8, 1.2];
    let mut y_raw = Vec::new();
    let ld_raw = block.forward_raw(&store, &x, &mut scratch, &mut y_raw).unwrap();
    let mut t = Tape::new(&store);
    let xv = t.constant(&x);
    let (yv, ldv) = block.forward_tape(&mut t, xv);
    for (a, b) in y_raw.iter().zip(t.value(yv)) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!((ld_raw - t.scalar_value(ldv)).abs() < 1e-14);

    let (store, block) = spline_block(17, 0.5);
    let y = [0.37];
    let mut x_raw = Vec::new();
    let ld_raw = block.inverse_raw(&store, &y, &mut scratch, &mut x_raw).unwrap();
    let mut t = Tape::new(&store);
    let yv = t.constant(&y);
    let (xv, ldv) = block.inverse_tape(&mut t, yv);
    assert!((x_raw[0] - t.value(xv)[0]).abs() < 1e-12);
    assert!((ld_raw - t.scalar_value(ldv)).abs() < 1e-12);
}

#[test]
fn block_losses_pass_fd_check() {
    // Gradient of a forward+logdet composite with respect to block params.
    let (store, block) = maf_block(2, 19, 0.3);
    let err = fd_check(
        &store,
        |t| {
            let x = t.constant(&[0.3, -0.6]);
            let (y, ld) = block.forward_tape(t, x);
            let sq = t.square(y);
            let s = t.sum(sq);
            t.add(s, ld)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "maf fd err {err}");

    let (store, block) = spline_block(23, 0.4);
    let err = fd_check(
        &store,
        |t| {
            let y = t.constant(&[0.41]);
            let (x, ld) = block.inverse_tape(t, y);
            let s = t.sum(x);
            t.add(s, ld)
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "spline fd err {err}");
}

fn ring_flow(steps: usize, seed: u64, perturbation: f64) -> (ParamStore, TimeIndexedFlow) {
    let mut store = ParamStore::new();
    let base = BaseDensity::SinusoidRing { amp: 0.3, freq: 1 };
    let flow = TimeIndexedFlow::ring(&mut store, base, steps, 16);
    flow.init(&mut store, StreamKey::root(seed));
    perturb(&mut store, StreamKey::root(seed).tag("p"), perturbation);
    (store, flow)
}

fn plane_flow(steps: usize, seed: u64, perturbation: f64) -> (ParamStore, TimeIndexedFlow) {
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian {
        mean: vec![0.5, -0.5],
        std: vec![0.8, 1.1],
    };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, steps, 2, 16);
    flow.init(&mut store, StreamKey::root(seed));
    perturb(&mut store, StreamKey::root(seed).tag("p"), perturbation);
    (store, flow)
}

#[test]
fn identity_flow_logprob_is_base_logprob() {
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian { mean: vec![0.0], std: vec![1.0] };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 4, 1, 8);
    flow.init(&mut store, StreamKey::root(3));
    let lp = flow.logprob_at_step(&store, 4, &[0.0]).unwrap();
    assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12, "lp {lp}");
    for n in 0..=4 {
        for &x in &[-1.3, 0.2, 2.4] {
            let lp = flow.logprob_at_step(&store, n, &[x]).unwrap();
            let want = flow.base().log_density(&[x]);
            assert!((lp - want).abs() < 1e-12);
        }
    }
}

#[test]
fn sample_at_step_zero_returns_base_samples() {
    let (store, flow) = plane_flow(3, 5, 0.3);
    let key = StreamKey::root(8).tag("s");
    let got = flow.sample_at_step(&store, 0, 16, key).unwrap();
    let mut want = vec![0.0; 2];
    for i in 0..16 {
        flow.base().sample_into(key, i as u64, &mut want);
        assert_eq!(&got[i * 2..i * 2 + 2], want.as_slice());
    }
    // Same stream twice gives identical samples.
    let again = flow.sample_at_step(&store, 3, 16, key).unwrap();
    let again2 = flow.sample_at_step(&store, 3, 16, key).unwrap();
    assert_eq!(again, again2);
}

#[test]
fn identity_flow_samples_match_base_moments() {
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian { mean: vec![1.0, -2.0], std: vec![0.5, 1.5] };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 5, 2, 8);
    flow.init(&mut store, StreamKey::root(6));
    let m = 10_000;
    let s = flow
        .sample_at_step(&store, 5, m, StreamKey::root(10).tag("mom"))
        .unwrap();
    for k in 0..2 {
        let mean: f64 = s.chunks_exact(2).map(|r| r[k]).sum::<f64>() / m as f64;
        let want_mean = [1.0, -2.0][k];
        let sd = [0.5, 1.5][k];
        let bound = 3.0 * sd / (m as f64).sqrt();
        assert!((mean - want_mean).abs() < bound, "coord {k} mean {mean}");
    }
}

#[test]
fn quadrature_mass_is_one_at_every_step() {
    // Change of variables preserves mass exactly; the quadrature supplies
    // the tolerance. Holds for untrained (perturbed) flows too.
    let (store, flow) = ring_flow(6, 29, 0.5);
    for n in 0..=6 {
        let cells = 512;
        let mass: f64 = (0..cells)
            .map(|j| {
                let x = j as f64 / cells as f64;
                flow.logprob_at_step(&store, n, &[x]).unwrap().exp()
            })
            .sum::<f64>()
            / cells as f64;
        assert!((0.99..=1.01).contains(&mass), "step {n} mass {mass}");
    }

    let (store, flow) = plane_flow(3, 33, 0.35);
    for n in [0, 2, 3] {
        // 6-sigma box around the sampled support.
        let m = 2000;
        let s = flow
            .sample_at_step(&store, n, m, StreamKey::root(60).child(n as u64))
            .unwrap();
        let mut mean = [0.0f64; 2];
        let mut var = [0.0f64; 2];
        for r in s.chunks_exact(2) {
            mean[0] += r[0];
            mean[1] += r[1];
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for r in s.chunks_exact(2) {
            var[0] += (r[0] - mean[0]).powi(2);
            var[1] += (r[1] - mean[1]).powi(2);
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let cells = 220;
        let mut mass = 0.0;
        let (w0, w1) = (6.0 * var[0].sqrt(), 6.0 * var[1].sqrt());
        let (h0, h1) = (2.0 * w0 / cells as f64, 2.0 * w1 / cells as f64);
        for i in 0..=cells {
            for j in 0..=cells {
                let x = [mean[0] - w0 + i as f64 * h0, mean[1] - w1 + j as f64 * h1];
                let wq = if i == 0 || i == cells { 0.5 } else { 1.0 }
                    * if j == 0 || j == cells { 0.5 } else { 1.0 };
                mass += wq * flow.logprob_at_step(&store, n, &x).unwrap().exp();
            }
        }
        mass *= h0 * h1;
        assert!((0.99..=1.01).contains(&mass), "step {n} mass {mass}");
    }
}

#[test]
fn sampler_agrees_with_density_entropy() {
    // Quadrature entropy of the step-N ring density vs the sample mean of
    // the log-density: agreement within 3 standard errors.
    let (store, flow) = ring_flow(4, 37, 0.5);
    let n = 4;
    let cells = 4096;
    let mut neg_entropy = 0.0;
    for j in 0..cells {
        let x = j as f64 / cells as f64;
        let lp = flow.logprob_at_step(&store, n, &[x]).unwrap();
        neg_entropy += lp.exp() * lp;
    }
    neg_entropy /= cells as f64;

    let m = 10_000;
    let samples = flow
        .sample_at_step(&store, n, m, StreamKey::root(71).tag("ent"))
        .unwrap();
    let lps: Vec<f64> = samples
        .chunks_exact(1)
        .map(|r| flow.logprob_at_step(&store, n, r).unwrap())
        .collect();
    let mean: f64 = lps.iter().sum::<f64>() / m as f64;
    let var: f64 = lps.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / m as f64;
    let se = (var / m as f64).sqrt();
    assert!(
        (mean - neg_entropy).abs() < 3.0 * se + 1e-3,
        "mean logprob {mean} vs -entropy {neg_entropy} (se {se})"
    );
}

#[test]
fn dis_loss_examples() {
    // Identity flow, standard normal base, all states at zero: the NLL is
    // 0.5*log(2*pi) per point.
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian { mean: vec![0.0], std: vec![1.0] };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 3, 1, 8);
    flow.init(&mut store, StreamKey::root(2));
    let zeros = vec![0.0; 8];
    let states: Vec<&[f64]> = vec![&zeros, &zeros, &zeros];
    let loss = flow.dis_loss(&store, &states).unwrap();
    assert!((loss - 0.918_938_533_204_672_7).abs() < 1e-12, "loss {loss}");

    // M = 1, N = 1 reduces to a single negative log-density.
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian { mean: vec![0.0], std: vec![1.0] };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 1, 1, 8);
    flow.init(&mut store, StreamKey::root(2));
    let one = vec![0.7];
    let states: Vec<&[f64]> = vec![&one];
    let loss = flow.dis_loss(&store, &states).unwrap();
    let want = -flow.logprob_at_step(&store, 1, &[0.7]).unwrap();
    assert!((loss - want).abs() < 1e-14);
}

#[test]
fn dis_loss_is_locally_minimal_at_the_matching_flow() {
    // States drawn from the base itself; the identity flow is the global
    // optimum in the population limit. Perturbing any parameter segment
    // must not reduce the empirical loss (up to fd-noise).
    let mut store = ParamStore::new();
    let base = BaseDensity::Gaussian { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] };
    let flow = TimeIndexedFlow::euclidean(&mut store, base, 2, 2, 8);
    flow.init(&mut store, StreamKey::root(44));

    let m = 8192;
    let key = StreamKey::root(45).tag("data");
    let mut states = vec![Vec::with_capacity(m * 2), Vec::with_capacity(m * 2)];
    let mut buf = [0.0; 2];
    for n in 0..2 {
        for i in 0..m {
            flow.base().sample_into(key.child(n as u64), i as u64, &mut buf);
            states[n].extend_from_slice(&buf);
        }
    }
    let views: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
    let base_loss = flow.dis_loss(&store, &views).unwrap();

    let pkey = StreamKey::root(46).tag("sweep");
    let seg_ids: Vec<_> = store.segments().map(|(id, _)| id).collect();
    for trial in 0..100u64 {
        let seg = seg_ids[(pkey.u64_at(2 * trial) % seg_ids.len() as u64) as usize];
        let mut probe = store.clone();
        let sk = pkey.child(trial);
        // Perturbations large enough that the curvature term dominates the
        // finite-sample score noise at this M.
        for (j, v) in probe.segment_mut(seg).iter_mut().enumerate() {
            *v += (2.0 * sk.uniform_at(j as u64) - 1.0) * 0.3;
        }
        let loss = flow.dis_loss(&probe, &views).unwrap();
        assert!(
            loss >= base_loss - 1e-9,
            "trial {trial}: perturbed loss {loss} below optimum {base_loss}"
        );
    }
}

#[test]
fn terminal_loss_arithmetic() {
    let (store, flow) = plane_flow(2, 55, 0.2);
    let key = StreamKey::root(7).tag("term");
    // g == 0 everywhere gives zero loss.
    let l0 = flow.terminal_loss(&store, |_| 0.0, 64, key).unwrap();
    assert_eq!(l0, 0.0);
    // g == e (distance-1 case of the crowd terminal) gives e^2.
    let le = flow
        .terminal_loss(&store, |_| std::f64::consts::E, 64, key)
        .unwrap();
    assert!((le - std::f64::consts::E.powi(2)).abs() < 1e-12);
    // g == 1 (all samples at the target) gives exactly 1.
    let l1 = flow.terminal_loss(&store, |_| 1.0, 64, key).unwrap();
    assert!((l1 - 1.0).abs() < 1e-15);
}

#[test]
fn ring_flow_rejects_points_outside_domain() {
    let (store, flow) = ring_flow(2, 61, 0.3);
    assert!(flow.logprob_at_step(&store, 1, &[1.2]).is_err());
    assert!(flow.logprob_at_step(&store, 1, &[-0.1]).is_err());
}

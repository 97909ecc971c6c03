//! Cross-module property tests: decomposition structure, graph builder
//! contracts, serialization round trips, and gradient fidelity of randomly
//! composed tape programs against central finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsat::data::{make_windows, Split, TimeSeriesFrame, WindowDataset};
use tsat::emd::{decompose, satisfies_imf_property, Series};
use tsat::graph::{build_adjacency, build_graph, NodeMatrix, SiftParams};
use tsat::graph_io::{graph_to_text, parse_graphs};
use tsat::metrics::{mae, rmse};
use tsat::tape::Tape;
use tsat::tensor::Tensor;

fn signal_strategy() -> impl Strategy<Value = Vec<f64>> {
    (
        64usize..200,
        2.0f64..10.0,
        6.0f64..20.0,
        0.1f64..1.0,
        -1.0f64..1.0,
        0.0f64..std::f64::consts::TAU,
    )
        .prop_map(|(len, c1, c2, amp2, slope, phase)| {
            (0..len)
                .map(|t| {
                    let tf = t as f64 / len as f64;
                    (std::f64::consts::TAU * c1 * tf).sin()
                        + amp2 * (std::f64::consts::TAU * c2 * tf + phase).sin()
                        + slope * tf
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decomposition_reconstructs_and_is_structural(x in signal_strategy()) {
        let d = decompose(&Series::new("p", x.clone()).unwrap(), 5).unwrap();
        let recon = d.reconstruct();
        let scale = x.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-30);
        let err = x.iter().zip(&recon).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max) / scale;
        prop_assert!(err < 1e-10);
        for imf in &d.imfs {
            prop_assert!(satisfies_imf_property(imf));
        }
    }

    #[test]
    fn decomposition_scales_homogeneously(x in signal_strategy(), c in 0.5f64..8.0) {
        let base = decompose(&Series::new("p", x.clone()).unwrap(), 4).unwrap();
        let scaled_input: Vec<f64> = x.iter().map(|v| c * v).collect();
        let scaled = decompose(&Series::new("p", scaled_input).unwrap(), 4).unwrap();
        prop_assert_eq!(base.num_imfs(), scaled.num_imfs());
        for (a, b) in base.imfs.iter().zip(&scaled.imfs) {
            let scale = a.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-30);
            for (av, bv) in a.iter().zip(b) {
                prop_assert!((c * av - bv).abs() / (c * scale) < 1e-8);
            }
        }
    }

    #[test]
    fn window_count_matches_formula(
        span in 12usize..160,
        l_x in 8usize..24,
        l_y in 1usize..8,
        stride in 1usize..12,
    ) {
        let data: Vec<f64> = (0..2 * span).map(|i| (i as f64 * 0.37).sin()).collect();
        let frame = TimeSeriesFrame::new(
            Tensor::new(vec![2, span], data[..2 * span].to_vec()).unwrap(),
            vec!["a".into(), "b".into()],
            None,
        )
        .unwrap();
        let res = make_windows(&frame, &(0..span), l_x, l_y, stride, Split::Train);
        let expected = WindowDataset::expected_count(span, l_x, l_y, stride);
        if span < l_x + l_y {
            prop_assert!(res.is_err());
        } else {
            let ds = res.unwrap();
            prop_assert_eq!(ds.windows.len(), expected);
            for w in &ds.windows {
                prop_assert_eq!(w.y_start, w.x_start + l_x);
            }
        }
    }

    #[test]
    fn rmse_dominates_mae(values in proptest::collection::vec(-10.0f64..10.0, 2..40)) {
        let n = values.len() / 2;
        if n >= 1 {
            let pred = Tensor::new(vec![1, n], values[..n].to_vec()).unwrap();
            let target = Tensor::new(vec![1, n], values[n..2 * n].to_vec()).unwrap();
            prop_assert!(rmse(&pred, &target).unwrap() >= mae(&pred, &target).unwrap() - 1e-15);
        }
    }

    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..5, cols in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = tape.softmax_rows(x).unwrap();
        let sv = tape.value(s);
        for i in 0..rows {
            let row_sum: f64 = sv.row(i).iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-12);
            for &v in sv.row(i) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n, p) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let a = rand_mat(&mut rng, m, k);
        let b = rand_mat(&mut rng, k, n);
        let c = rand_mat(&mut rng, n, p);
        let mut tape = Tape::new();
        let (ta, tb, tc) = (tape.constant(a), tape.constant(b), tape.constant(c));
        let ab = tape.matmul(ta, tb).unwrap();
        let ab_c = tape.matmul(ab, tc).unwrap();
        let bc = tape.matmul(tb, tc).unwrap();
        let a_bc = tape.matmul(ta, bc).unwrap();
        let left = tape.value(ab_c);
        let right = tape.value(a_bc);
        let scale = left.data().iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn adjacency_monotone_under_threshold(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..6);
        let mut rho = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            rho.data_mut()[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                rho.data_mut()[i * n + j] = v;
                rho.data_mut()[j * n + i] = v;
            }
        }
        let mut prev = build_adjacency(&rho, 0.0).unwrap();
        for &c in &[0.2, 0.4, 0.6, 0.8, 1.0] {
            let next = build_adjacency(&rho, c).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(next.at(i, j) <= prev.at(i, j));
                }
            }
            prev = next;
        }
    }

    #[test]
    fn graph_text_round_trip(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..5);
        let l = rng.gen_range(16..48);
        let mut data = Vec::with_capacity(n * l);
        for _ in 0..n {
            let cycles = rng.gen_range(2.0..8.0);
            let slope: f64 = rng.gen_range(-1.0..1.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for t in 0..l {
                let tf = t as f64 / l as f64;
                data.push((std::f64::consts::TAU * cycles * tf + phase).sin() + slope * tf);
            }
        }
        let w = NodeMatrix::new(
            Tensor::new(vec![n, l], data).unwrap(),
            (0..n).map(|i| format!("s{}", i)).collect(),
            rng.gen_range(0..1000),
        )
        .unwrap();
        let g = build_graph(&w, rng.gen_range(1..5), 0.5, &SiftParams::default()).unwrap();
        let back = parse_graphs(&graph_to_text(&g), "mem").unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &g);
    }
}

/// Gradient fidelity of a randomly composed program touching every
/// differentiable primitive, against central finite differences.
#[test]
fn composite_tape_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let x0 = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap();
        let w1 = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut b1 = Tensor::from_vec((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
        // Keep the relu inputs away from its kink at zero so the central
        // difference stays one-sided.
        {
            let a = tsat::tensor::matmul_raw(x0.data(), w1.data(), 2, 3, 4);
            for j in 0..4 {
                while (0..2).any(|i| (a[i * 4 + j] + b1.data()[j]).abs() < 1e-3) {
                    b1.data_mut()[j] += 3e-3;
                }
            }
        }
        let w2 = Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let gain = Tensor::from_vec((0..4).map(|_| rng.gen_range(0.5..1.5)).collect());
        let bias = Tensor::from_vec((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let alphas = Tensor::from_vec((0..3).map(|_| rng.gen_range(0.2..1.0)).collect());
        let target = Tensor::new(vec![2, 4], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let leaves: Vec<Tensor> = vec![x0, w1, b1, w2, gain, bias, alphas];

        // Forward program reused for the analytic pass and every FD probe.
        // Layer norm sees the tanh activations (O(1) row variance): its eps
        // guard is a kink at var == eps, and a finite-difference check must
        // stay clear of non-smooth points, like relu at exactly zero.
        let run = |vals: &[Tensor]| -> (Tape, tsat::tape::NodeId, Vec<tsat::tape::NodeId>) {
            let mut tape = Tape::new();
            let ids: Vec<_> = vals.iter().map(|t| tape.param(t.clone())).collect();
            let (x, w1, b1, w2, gain, bias, alphas) =
                (ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], ids[6]);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(31337);
            let a = tape.matmul(x, w1).unwrap();
            let ab = tape.add_row(a, b1).unwrap();
            let r = tape.relu(ab);
            let t = tape.tanh(r);
            let ln = tape.layer_norm(t, gain, bias, 1e-8).unwrap();
            let m = tape.matmul(ln, w2).unwrap();
            let sm = tape.softmax_rows(m).unwrap();
            let a1 = tape.index(alphas, 1).unwrap();
            let scaled = tape.scale_by(sm, a1).unwrap();
            let e = tape.exp(scaled);
            let prod = tape.mul(e, sm).unwrap();
            let lt = tape.transpose(prod).unwrap();
            let sq = tape.matmul(prod, lt).unwrap();
            let back = tape.matmul(sq, prod).unwrap();
            let cat = tape.concat_cols(&[prod, back]).unwrap();
            let dropped = tape.dropout(cat, 0.3, &mut drop_rng);
            let target_node = tape.constant(target.clone());
            let diff = tape.sub(dropped, target_node).unwrap();
            let sqd = tape.mul(diff, diff).unwrap();
            let loss = tape.mean_all(sqd);
            (tape, loss, ids)
        };

        let (mut tape, loss, ids) = run(&leaves);
        tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = ids.iter().map(|&id| tape.grad(id).unwrap().clone()).collect();

        for gi in 0..leaves.len() {
            let mut fd = vec![0.0; leaves[gi].numel()];
            for e in 0..fd.len() {
                let mut plus = leaves.clone();
                plus[gi].data_mut()[e] += h;
                let (tp, lp, _) = run(&plus);
                let up = tp.value(lp).data()[0];
                let mut minus = leaves.clone();
                minus[gi].data_mut()[e] -= h;
                let (tm, lm, _) = run(&minus);
                let down = tm.value(lm).data()[0];
                fd[e] = (up - down) / (2.0 * h);
            }
            // Scale by the larger of the two gradient magnitudes, with a
            // floor that keeps finite-difference rounding noise on
            // vanishing gradients from registering as error.
            let fd_scale = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            let an_scale = analytic[gi].data().iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            let scale = fd_scale.max(an_scale).max(1e-5);
            let dev = analytic[gi]
                .data()
                .iter()
                .zip(&fd)
                .map(|(a, f)| (a - f).abs())
                .fold(0.0f64, f64::max);
            let rel = dev / scale;
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "seed {} group {} relative error {} exceeds 1e-4",
                seed,
                gi,
                rel
            );
        }
    }
    eprintln!("composite gradient check worst relative error: {:.3e}", worst);
}

/// The sub and scale paths in the composite above keep constants out of the
/// gradient; spot-check that constants report no gradient requirement but
/// still carry adjoints of the right shape after backward.
#[test]
fn constants_receive_shaped_adjoints() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
    let c = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
    let s = tape.mul(p, c).unwrap();
    let loss = tape.mean_all(s);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(p).unwrap().shape(), &[2]);
    assert_eq!(tape.grad(c).unwrap().shape(), &[2]);
}

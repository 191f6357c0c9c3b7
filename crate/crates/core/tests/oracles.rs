//! Reference checks against independently computed expectations: closed-form
//! fits, dense sampling, Monte-Carlo probes and goodness-of-fit tests.

use gara_core::agents::{DqnAgent, DqnConfig, HighLevelAgent, LowLevelAgent};
use gara_core::forward_model::{ForwardModel, ForwardModelConfig, TransitionRecord};
use gara_core::interval::{propagate_affine, reach_box, IntervalBox};
use gara_core::maze::{Action, MazeConfig, MazeState};
use gara_core::mlp::{loss_mse, AdamConfig, AdamState, Gradients, Layer, Mlp};
use gara_core::partition::{GoalSpace, ReachVerdict, RefineParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx(b: &[(f64, f64)]) -> IntervalBox {
    IntervalBox::from_bounds(b).unwrap()
}

/// Pearson statistic of observed counts against a uniform expectation.
fn chi_square(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn adam_fits_a_line_to_least_squares_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
    // closed-form least squares through the data: slope 2, intercept 0, residual 0
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope - 2.0).abs() < 1e-12 && (my - slope * mx).abs() < 1e-12);

    let mut net = Mlp::zeros(&[1, 1]).unwrap();
    let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(0.01));
    let mut grads = Gradients::zeros_like(&net);
    let mut loss = f64::INFINITY;
    for _ in 0..2000 {
        grads.fill_zero();
        loss = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let out = net.forward(&[*x]).unwrap()[0];
            loss += (out - y).powi(2) / n;
            let g = net.backward(&[*x], &[2.0 * (out - y) / n]).unwrap();
            for (acc, v) in grads.values_mut().zip(g.values()) {
                *acc += v;
            }
        }
        adam.step(&mut net, &grads).unwrap();
    }
    assert!(loss < 1e-3, "final mse {loss}");
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10 {
        let hidden = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        sizes.extend((0..hidden).map(|_| rng.random_range(2..=8)));
        sizes.push(rng.random_range(1..=3));
        let mut net = Mlp::init_random(&sizes, trial).unwrap();
        // zero biases put dead units exactly on the ReLU kink
        for layer in net.layers_mut() {
            for b in layer.bias_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..*sizes.last().unwrap())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = |n: &Mlp| loss_mse(&n.forward(&x).unwrap(), &t).unwrap();
        let out = net.forward(&x).unwrap();
        let m = out.len() as f64;
        let grad_out: Vec<f64> = out.iter().zip(&t).map(|(o, y)| 2.0 * (o - y) / m).collect();
        let analytic: Vec<f64> = net.backward(&x, &grad_out).unwrap().values().copied().collect();
        let h = 1e-5;
        let mut idx = 0;
        for l in 0..net.layers().len() {
            let count = net.layers()[l].weights().len() + net.layers()[l].bias().len();
            for p in 0..count {
                let perturb = |delta: f64| {
                    let mut n = net.clone();
                    let layer = &mut n.layers_mut()[l];
                    let nw = layer.weights().len();
                    if p < nw {
                        layer.weights_mut()[p] += delta;
                    } else {
                        layer.bias_mut()[p - nw] += delta;
                    }
                    loss(&n)
                };
                let numeric = (perturb(h) - perturb(-h)) / (2.0 * h);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "trial {trial} layer {l} param {p}: {a} vs {numeric}");
                idx += 1;
            }
        }
    }
}

#[test]
fn batched_forward_equals_itemwise() {
    let net = Mlp::init_random(&[3, 8, 2], 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let forward: Vec<Vec<f64>> = batch.iter().map(|x| net.forward(x).unwrap()).collect();
    let mut reversed: Vec<Vec<f64>> = batch.iter().rev().map(|x| net.forward(x).unwrap()).collect();
    reversed.reverse();
    assert_eq!(forward, reversed);
}

#[test]
fn affine_image_matches_dense_grid() {
    let layer = Layer::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.0]], vec![0.0, 1.0]).unwrap();
    let out = propagate_affine(&layer, &bx(&[(0.0, 1.0), (0.0, 1.0)])).unwrap();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..=100 {
        for j in 0..=100 {
            let (a, b) = (i as f64 / 100.0, j as f64 / 100.0);
            let y = [a - b, 2.0 * a + 1.0];
            for d in 0..2 {
                lo[d] = lo[d].min(y[d]);
                hi[d] = hi[d].max(y[d]);
            }
        }
    }
    for d in 0..2 {
        assert!((out.lo()[d] - lo[d]).abs() < 1e-9 && (out.hi()[d] - hi[d]).abs() < 1e-9);
    }
    assert_eq!(out, bx(&[(-1.0, 1.0), (1.0, 3.0)]));
}

#[test]
fn abs_network_true_image_by_sampling() {
    let net = Mlp::from_layers(vec![
        Layer::from_rows(&[vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap(),
        Layer::from_rows(&[vec![1.0, 1.0]], vec![0.0]).unwrap(),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let y = net.forward(&[rng.random_range(-1.0..=1.0)]).unwrap()[0];
        lo = lo.min(y);
        hi = hi.max(y);
    }
    assert!((0.0..1e-3).contains(&lo) && hi <= 1.0 && hi > 0.999);
    let input = bx(&[(-1.0, 1.0)]);
    assert_eq!(reach_box(&net, &input, 0).unwrap(), bx(&[(0.0, 2.0)]));
    assert_eq!(reach_box(&net, &input, 1).unwrap(), bx(&[(0.0, 1.0)]));
}

fn shifted_reach(b: &IntervalBox) -> gara_core::Result<IntervalBox> {
    IntervalBox::new(
        b.lo().iter().map(|v| v + 0.3).collect(),
        b.hi().iter().map(|v| v + 0.3).collect(),
    )
}

#[test]
fn refined_threshold_approaches_the_true_boundary() {
    for min_width in [0.05, 0.02, 0.01, 0.005, 0.001] {
        let mut gs = GoalSpace::halves(bx(&[(0.0, 1.0)]), 0, 0.5).unwrap();
        let params = RefineParams {
            min_width: vec![min_width],
            max_depth: 64,
        };
        let before = gs.snapshot().regions.len();
        let report = gs.refine(0, 1, shifted_reach, &params).unwrap();
        assert!(report.committed);
        let reached_lo = report
            .leaves
            .iter()
            .filter(|l| l.verdict == ReachVerdict::Reached)
            .map(|l| l.bbox.lo()[0])
            .fold(f64::INFINITY, f64::min);
        // midpoint bisection stops once a child would be narrower than
        // min_width, so the ambiguous leaf holding 0.2 is narrower than 2 * min_width
        assert!(
            (reached_lo - 0.2).abs() < 2.0 * min_width,
            "min_width {min_width}: {reached_lo}"
        );
        if min_width == 0.05 {
            assert!((reached_lo - 0.2).abs() <= min_width);
        }
        gs.invariant_check().unwrap();
        assert_eq!(gs.snapshot().regions.len(), before + report.leaves.len() - 1);
    }
}

#[test]
fn locate_is_total_after_refinements() {
    let mut gs = GoalSpace::halves(bx(&[(0.0, 1.0), (0.0, 1.0)]), 0, 0.5).unwrap();
    let params = RefineParams {
        min_width: vec![0.05, 0.05],
        max_depth: 8,
    };
    let shift = |b: &IntervalBox| {
        IntervalBox::new(
            vec![(b.lo()[0] + 0.3).min(1.0), b.lo()[1]],
            vec![(b.hi()[0] + 0.3).min(1.0), b.hi()[1]],
        )
    };
    assert!(gs.refine(0, 1, shift, &params).unwrap().committed);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let s = [rng.random::<f64>(), rng.random::<f64>()];
        let id = gs.locate(&s);
        assert!(gs.region(id).unwrap().bbox.contains_point(&s));
        let first = gs.regions().iter().find(|r| r.bbox.contains_point(&s)).unwrap();
        assert_eq!(first.id, id);
    }
}

#[test]
fn forward_model_learns_a_constant_shift() {
    let domain = bx(&[(0.0, 2.0), (0.0, 2.0)]);
    let cfg = ForwardModelConfig {
        hidden: vec![32],
        learning_rate: 3e-3,
        ..ForwardModelConfig::default()
    };
    let mut fm = ForwardModel::new(domain, 5, cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let goals = [vec![0.5, 0.5, 0.5, 0.5], vec![1.5, 1.5, 0.5, 0.5]];
    for i in 0..1000 {
        let s: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let end = s.iter().map(|v| v + 0.1).collect();
        let g = i % 2;
        let rec = TransitionRecord {
            start_state: s,
            target_encoding: goals[g].clone(),
            end_state: end,
        };
        fm.record(rec, g as u32, 1 - g as u32).unwrap();
    }
    fm.train_batches(3000, 64, &mut rng).unwrap();
    for (src, tgt) in [(0, 1), (1, 0)] {
        let mse = fm.held_out_mse(src, tgt).unwrap();
        assert!(mse < 1e-3, "pair {src}->{tgt}: {mse}");
    }
}

#[test]
fn random_goals_are_uniform_over_candidates() {
    let agent = HighLevelAgent::new(0.1, 0.99, 1.0);
    let regions = [0, 1, 2, 3, 4, 5];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = [0u64; 6];
    for _ in 0..10_000 {
        counts[agent.select_goal(2, &regions, &mut rng) as usize] += 1;
    }
    assert_eq!(counts[2], 0);
    let others: Vec<u64> = counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 2)
        .map(|(_, &c)| c)
        .collect();
    // 4 degrees of freedom, p = 0.001
    assert!(chi_square(&others) < 18.47, "{others:?}");
}

#[test]
fn random_actions_are_uniform() {
    let mut agent: LowLevelAgent = DqnAgent::new(4, DqnConfig::default(), 0).unwrap();
    agent.epsilon = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0u64; 4];
    for _ in 0..10_000 {
        counts[agent.select_action(&[0.1, 0.2, 0.3, 0.4], &mut rng).index()] += 1;
    }
    // 3 degrees of freedom, p = 0.001
    assert!(chi_square(&counts) < 16.27, "{counts:?}");
}

fn check_state(cfg: &MazeConfig, s: &MazeState) {
    assert!((0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y), "{s:?}");
    assert!(s.vx.abs() <= cfg.v_max && s.vy.abs() <= cfg.v_max, "{s:?}");
    assert!(!cfg.in_wall(s.x, s.y), "{s:?}");
    assert!(cfg.state_domain().contains_point(&s.to_array()));
}

#[test]
fn resets_satisfy_state_invariants() {
    let cfg = MazeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let s = cfg.reset(&mut rng);
        check_state(&cfg, &s);
        assert!(cfg.start.contains(s.x, s.y) && s.vx == 0.0 && s.vy == 0.0);
    }
}

#[test]
fn random_rollouts_stay_in_domain_and_out_of_walls() {
    let cfg = MazeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = cfg.reset(&mut rng);
    for _ in 0..100_000 {
        let out = cfg.step(&s, Action::ALL[rng.random_range(0..4)]);
        check_state(&cfg, &out.state);
        s = if out.done { cfg.reset(&mut rng) } else { out.state };
    }
}

#[test]
fn scripted_route_reaches_the_exit() {
    let cfg = MazeConfig::default();
    let route = [(Action::AccelDown, 30), (Action::AccelRight, 25), (Action::AccelUp, 25)];
    for start in [(0.05, 0.85), (0.15, 0.95), (0.1, 0.9), (0.05, 0.95), (0.15, 0.85)] {
        let mut s = MazeState {
            x: start.0,
            y: start.1,
            vx: 0.0,
            vy: 0.0,
            t: 0,
        };
        let mut reached = false;
        'route: for &(a, n) in &route {
            for _ in 0..n {
                let out = cfg.step(&s, a);
                s = out.state;
                if out.done {
                    reached = out.at_exit;
                    break 'route;
                }
            }
        }
        assert!(reached, "from {start:?} ended at {s:?}");
        assert!(s.t <= cfg.max_episode_steps);
    }
}

#[test]
fn identical_actions_give_identical_trajectories() {
    let cfg = MazeConfig::default();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = cfg.reset(&mut rng);
        let mut path = Vec::new();
        for _ in 0..300 {
            s = cfg.step(&s, Action::ALL[rng.random_range(0..4)]).state;
            path.push(s);
        }
        path
    };
    assert_eq!(run(), run());
}

use gara_core::agents::HighLevelAgent;
use gara_core::encoding::{encode_goal, Normalizer};
use gara_core::interval::{propagate_affine, reach_box, IntervalBox};
use gara_core::maze::{Action, MazeConfig};
use gara_core::mlp::{Layer, Mlp};
use gara_core::partition::{classify, GoalSpace, RefineParams, RefinementLeaf, RefinementReport, RegionId};
use gara_core::ReachVerdict;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, inputs: usize) -> Mlp {
    let hidden = rng.random_range(0..=3);
    let mut sizes = vec![inputs];
    sizes.extend((0..hidden).map(|_| rng.random_range(1..=16)));
    sizes.push(rng.random_range(1..=3));
    let mut net = Mlp::init_random(&sizes, rng.random()).unwrap();
    for layer in net.layers_mut() {
        for b in layer.bias_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn random_box(rng: &mut ChaCha8Rng, dim: usize) -> IntervalBox {
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..dim)
        .map(|_| {
            let a = rng.random_range(-2.0..2.0);
            (a, a + rng.random_range(0.0..1.5))
        })
        .unzip();
    IntervalBox::new(lo, hi).unwrap()
}

fn sample_in(rng: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
    b.lo()
        .iter()
        .zip(b.hi())
        .map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l })
        .collect()
}

fn inside(b: &IntervalBox, y: &[f64], slack: f64) -> bool {
    y.iter()
        .zip(b.lo().iter().zip(b.hi()))
        .all(|(v, (l, h))| l - slack <= *v && *v <= h + slack)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reach_box_is_sound(seed in any::<u64>(), depth in 0u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = rng.random_range(1..=4);
        let net = random_net(&mut rng, inputs);
        let b = random_box(&mut rng, inputs);
        let out = reach_box(&net, &b, depth).unwrap();
        for _ in 0..500 {
            let y = net.forward(&sample_in(&mut rng, &b)).unwrap();
            prop_assert!(inside(&out, &y, 1e-12));
        }
    }

    #[test]
    fn deeper_splits_only_tighten(seed in any::<u64>(), depth in 0u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = rng.random_range(1..=4);
        let net = random_net(&mut rng, inputs);
        let b = random_box(&mut rng, inputs);
        let coarse = reach_box(&net, &b, depth).unwrap();
        let fine = reach_box(&net, &b, depth + 1).unwrap();
        prop_assert!(coarse.contains(&fine).unwrap());
    }

    #[test]
    fn depth_zero_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = rng.random_range(1..=4);
        let net = random_net(&mut rng, inputs);
        let outer = random_box(&mut rng, inputs);
        let a = sample_in(&mut rng, &outer);
        let c = sample_in(&mut rng, &outer);
        let inner = IntervalBox::new(
            a.iter().zip(&c).map(|(x, y)| x.min(*y)).collect(),
            a.iter().zip(&c).map(|(x, y)| x.max(*y)).collect(),
        ).unwrap();
        let big = reach_box(&net, &outer, 0).unwrap();
        let small = reach_box(&net, &inner, 0).unwrap();
        prop_assert!(big.contains(&small).unwrap());
    }

    #[test]
    fn point_boxes_map_to_the_forward_value(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Layer::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), vec![0.1, -0.2, 0.3]).unwrap();
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let out = propagate_affine(&layer, &IntervalBox::point(&x).unwrap()).unwrap();
        let y = Mlp::from_layers(vec![layer]).unwrap().forward(&x).unwrap();
        for (i, v) in y.iter().enumerate() {
            prop_assert!((out.lo()[i] - v).abs() < 1e-12 && (out.hi()[i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn bisection_children_tile_the_parent(seed in any::<u64>(), t in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_box(&mut rng, 3);
        let dim = rng.random_range(0..3);
        let point = b.lo()[dim] + t * b.width(dim);
        prop_assume!(point > b.lo()[dim] && point < b.hi()[dim]);
        let (l, u) = b.bisect(dim, point).unwrap();
        prop_assert_eq!(l.hull(&u).unwrap(), b.clone());
        prop_assert!((l.width(dim) + u.width(dim) - b.width(dim)).abs() < 1e-12);
        prop_assert!(b.contains(&l).unwrap() && b.contains(&u).unwrap());
    }

    #[test]
    fn classify_is_exclusive_and_total(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reach = random_box(&mut rng, 2);
        let target = random_box(&mut rng, 2);
        let v = classify(&reach, &target).unwrap();
        let contained = target.contains(&reach).unwrap();
        let disjoint = !target.intersects(&reach).unwrap();
        match v {
            ReachVerdict::Reached => prop_assert!(contained),
            ReachVerdict::NotReached => prop_assert!(disjoint && !contained),
            ReachVerdict::Ambiguous => prop_assert!(!contained && !disjoint),
        }
    }

    #[test]
    fn random_refinements_keep_the_partition_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = IntervalBox::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mut gs = GoalSpace::halves(domain.clone(), 0, 0.5).unwrap();
        let params = RefineParams::relative(&domain, 32.0, 6);
        for _ in 0..20 {
            let ids = gs.ids();
            let src = ids[rng.random_range(0..ids.len())];
            let tgt = ids[rng.random_range(0..ids.len())];
            if src == tgt {
                continue;
            }
            let layer = Layer::new(
                2,
                2,
                (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..2).map(|_| rng.random_range(-0.5..0.5)).collect(),
            ).unwrap();
            let before = gs.region(src).unwrap().bbox.clone();
            let report = gs
                .refine(src, tgt, |b| propagate_affine(&layer, b)?.clamp_to(&domain), &params)
                .unwrap();
            if report.committed {
                prop_assert!(gs.invariant_check().is_ok(), "{:?}", gs.invariant_check());
                prop_assert!(gs.min_width_violations(&params.min_width).is_empty());
                let hull = report.leaves.iter().skip(1).fold(report.leaves[0].bbox.clone(), |h, l| h.hull(&l.bbox).unwrap());
                prop_assert_eq!(&hull, &before);
                let vol: f64 = report.leaves.iter().map(|l| l.bbox.volume()).sum();
                prop_assert!((vol - before.volume()).abs() < 1e-12);
            } else {
                prop_assert!(gs.contains_id(src));
            }
        }
        for _ in 0..200 {
            let s = [rng.random::<f64>(), rng.random::<f64>()];
            let id = gs.locate(&s);
            prop_assert!(gs.region(id).unwrap().bbox.contains_point(&s));
        }
    }

    #[test]
    fn inheritance_preserves_unrelated_argmax(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: RegionId = rng.random_range(3..8);
        let ids: Vec<RegionId> = (0..n).collect();
        let mut agent = HighLevelAgent::new(0.1, 0.99, 0.0);
        for &s in &ids {
            for &t in &ids {
                if s != t {
                    agent.set_q(s, t, rng.random_range(-1.0..1.0));
                }
            }
        }
        let parent = rng.random_range(0..n);
        let children: Vec<RegionId> = (n..n + rng.random_range(2..5)).collect();
        let before: Vec<(RegionId, RegionId)> = ids
            .iter()
            .filter(|&&s| s != parent)
            .map(|&s| (s, agent.argmax(s, &HighLevelAgent::candidates(s, &ids))))
            .collect();
        let report = RefinementReport {
            source: parent,
            target: (parent + 1) % n,
            leaves: children
                .iter()
                .map(|&c| RefinementLeaf {
                    bbox: IntervalBox::point(&[0.0]).unwrap(),
                    verdict: ReachVerdict::Ambiguous,
                    id: Some(c),
                })
                .collect(),
            committed: true,
        };
        agent.on_partition_refined(&report).unwrap();
        let new_ids: Vec<RegionId> = ids.iter().copied().filter(|&i| i != parent).chain(children.iter().copied()).collect();
        for (s, old) in before {
            let new = agent.argmax(s, &HighLevelAgent::candidates(s, &new_ids));
            if old == parent {
                prop_assert!(children.contains(&new));
            } else {
                prop_assert_eq!(new, old);
            }
        }
    }

    #[test]
    fn maze_states_stay_valid(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 1..400)) {
        let cfg = MazeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = cfg.reset(&mut rng);
        for a in actions {
            let out = cfg.step(&s, Action::from_index(a).unwrap());
            let n = out.state;
            prop_assert!(cfg.state_domain().contains_point(&n.to_array()));
            prop_assert!(!cfg.in_wall(n.x, n.y));
            prop_assert_eq!(out.reward.0 == 1.0, out.at_exit);
            if out.done {
                break;
            }
            s = n;
        }
    }

    #[test]
    fn distinct_boxes_encode_distinctly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_box(&mut rng, 3);
        let b = random_box(&mut rng, 3);
        prop_assert_eq!(a == b, encode_goal(&a) == encode_goal(&b));
    }

    #[test]
    fn normalizer_round_trips_boxes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = IntervalBox::from_bounds(&[(0.0, 1.0), (0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)]).unwrap();
        let n = Normalizer::new(&domain);
        let b = IntervalBox::new(sample_in(&mut rng, &domain), domain.hi().to_vec()).unwrap();
        let back = n.denormalize_box(&n.normalize_box(&b).unwrap()).unwrap();
        for i in 0..4 {
            prop_assert!((back.lo()[i] - b.lo()[i]).abs() < 1e-12 && (back.hi()[i] - b.hi()[i]).abs() < 1e-12);
        }
    }
}

use std::collections::HashSet;

use bscnets::graph::Graph;
use bscnets::model::{Model, ModelConfig};
use bscnets::training::{
    mean_std, roc_auc, run_once, sample_negatives, split_edges, t_test_one_sided, train, EdgeSplit, TrainConfig,
};
use proptest::prelude::*;

/// Exhaustive pair counting, ties worth one half.
fn auc_by_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for p in pos {
        for q in neg {
            twice += match p.partial_cmp(q).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

#[test]
fn auc_worked_examples() {
    assert_eq!(roc_auc(&[0.9, 0.8], &[0.7, 0.85]).unwrap(), 0.75);
    assert_eq!(roc_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.2, 0.5, 0.5], &[0.5, 0.2, 0.5]).unwrap(), 0.5);
    assert!(roc_auc(&[], &[1.0]).is_err());
    assert!(roc_auc(&[f64::NAN], &[1.0]).is_err());
}

#[test]
fn auc_matches_pair_counting_on_1000_score_sets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let np = rng.random_range(1..40);
        let nn = rng.random_range(1..40);
        // Coarse grid so ties are common.
        let levels = rng.random_range(2..12);
        let mut draw = |k: usize| {
            (0..k)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect::<Vec<_>>()
        };
        let pos = draw(np);
        let neg = draw(nn);
        assert_eq!(roc_auc(&pos, &neg).unwrap(), auc_by_pairs(&pos, &neg));
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_under_increasing_maps(
        pos in proptest::collection::vec(-5.0f64..5.0, 1..30),
        neg in proptest::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let base = roc_auc(&pos, &neg).unwrap();
        let f = |x: &f64| (x * 0.7).exp() * 3.0 + 1.0;
        let mapped = roc_auc(&pos.iter().map(f).collect::<Vec<_>>(), &neg.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(base, mapped);
        prop_assert_eq!(base, auc_by_pairs(&pos, &neg));
        let swapped = roc_auc(&neg, &pos).unwrap();
        prop_assert!((base + swapped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_edges_and_negatives_are_non_edges(
        n in 10usize..30,
        bits in proptest::collection::vec(0.0f64..1.0, 435),
        density in 0.15f64..0.6,
        seed in any::<u64>(),
    ) {
        let mut edges = Vec::new();
        let mut k = 0;
        for u in 0..n {
            for v in u + 1..n {
                if bits[k] < density {
                    edges.push((u, v));
                }
                k += 1;
            }
        }
        prop_assume!(edges.len() >= 20);
        let g = Graph::new(n, edges).unwrap();
        prop_assume!(g.non_edge_count() >= 2 * (g.m() / 10 + g.m() / 20) + 2);
        let split = split_edges(&g, seed).unwrap();
        check_split(&g, &split);
        prop_assert_eq!(&split, &split_edges(&g, seed).unwrap());
    }
}

fn check_split(g: &Graph, split: &EdgeSplit) {
    let m = g.m();
    assert_eq!(split.val_pos.len(), m / 20);
    assert_eq!(split.test_pos.len(), m / 10);
    assert_eq!(split.train_pos.len(), m - m / 20 - m / 10);
    let mut all: Vec<_> = split
        .train_pos
        .iter()
        .chain(&split.val_pos)
        .chain(&split.test_pos)
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, g.edges());
    let val_neg: HashSet<_> = split.val_neg.iter().copied().collect();
    let test_neg: HashSet<_> = split.test_neg.iter().copied().collect();
    assert_eq!(val_neg.len(), split.val_pos.len());
    assert_eq!(test_neg.len(), split.test_pos.len());
    assert!(val_neg.is_disjoint(&test_neg));
    for &(u, v) in val_neg.iter().chain(&test_neg) {
        assert!(u < v && !g.has_edge(u, v));
    }
}

#[test]
fn split_proportions_for_100_edges() {
    let n = 30;
    let edges: Vec<_> = (0..n)
        .flat_map(|u| (1..=3).map(move |k| (u, (u + k) % n)))
        .chain((0..10).map(|u| (u, u + 15)))
        .collect();
    let g = Graph::new(n, edges).unwrap();
    assert_eq!(g.m(), 100);
    let split = split_edges(&g, 3).unwrap();
    assert_eq!(
        (split.train_pos.len(), split.val_pos.len(), split.test_pos.len()),
        (85, 5, 10)
    );
    check_split(&g, &split);
}

#[test]
fn small_graphs_are_rejected() {
    let g = Graph::new(20, (0..19).map(|u| (u, u + 1))).unwrap();
    assert!(split_edges(&g, 0).is_err());
}

#[test]
fn negative_sampling_contracts() {
    let k3 = Graph::new(3, [(0, 1), (0, 2), (1, 2)]).unwrap();
    assert!(sample_negatives(&k3, 1, &HashSet::new(), 0).is_err());
    let p3 = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
    assert_eq!(sample_negatives(&p3, 1, &HashSet::new(), 9).unwrap(), vec![(0, 2)]);
    let g = Graph::new(40, (0..39).map(|u| (u, u + 1))).unwrap();
    for count in [1, 50, 500, 741] {
        let s = sample_negatives(&g, count, &HashSet::new(), count as u64).unwrap();
        let set: HashSet<_> = s.iter().copied().collect();
        assert_eq!(set.len(), count);
        assert!(s.iter().all(|&(u, v)| u < v && !g.has_edge(u, v)));
    }
    let exclude: HashSet<_> = [(5, 0), (0, 2)].into_iter().collect();
    let s = sample_negatives(&g, 739, &exclude, 1).unwrap();
    assert!(!s.contains(&(0, 5)) && !s.contains(&(0, 2)));
    assert!(sample_negatives(&g, 740, &exclude, 1).is_err());
}

#[test]
#[allow(clippy::approx_constant)]
fn welch_p_values_match_reference() {
    // Reference values from an independent statistics package.
    #[rustfmt::skip]
    let cases: [(&[f64], &[f64], f64); 20] = [
    (&[-0.8504, 0.0374, 1.1955, 1.3073, 0.9419], &[2.4031, 0.2564, -0.987, 0.0433, -0.0386, 1.5975, -2.2237, 0.2992, 3.0508, -0.7777, -0.5386, 0.4574, -1.5127, 0.3904, 0.5587, 0.575, -0.8785], 0.24811623037653663),
    (&[1.595, 1.7427, -1.0968, -0.031, 1.7424, 1.5218], &[1.002, 4.4118, 0.3648, 1.9114], 0.8168462906895579),
    (&[0.5671, 0.7173, 0.6368, 0.5825, 0.8087, 1.0414, 0.8187, 0.6868, 0.453], &[-0.2923, 0.9111, 1.4856, -1.0986, 0.6925, 0.8985, 0.6846, 1.5078], 0.3779207628759381),
    (&[0.8807, -0.0534, 0.6288, 2.9628, 3.8084, 1.9134, -2.768, -2.6036, -0.8104, 0.4329, -2.053, -1.2639, -0.4042, -0.4566, 0.7029, 0.5002, 0.3057, -0.7058, -1.0809, -2.9651], &[1.4478, -1.2797, 1.9466, 0.8498, 2.2305], 0.9255504750270165),
    (&[0.4678, 0.2689, 0.1279, 0.9173, 4.7537, 0.6475, 1.6759], &[0.605, 0.4034, 1.4277, -1.3336, 0.8035, -0.8828, 1.8465, 1.0714], 0.15520049965000848),
    (&[-0.2266, 0.6784, 0.3169, -0.3515, -0.5774, 0.1651, -0.6888, -1.9661, -0.5361, -1.4057, 0.3437], &[2.125, 0.4688, 0.4905], 0.9474669719789588),
    (&[0.0917, 0.2709, 0.4772, 0.1557, 0.1367, 0.5029, 0.9024, 0.6752, -0.3336, 0.2079], &[-0.1772, 0.1628, -1.0694, -1.2535, -0.8714, 0.568, -0.4307, -0.1707, -0.777, -0.3594, -1.6743, -0.6348, -0.1071, -1.4157, -0.3406, -0.444, 0.2165, -2.0982, -0.4342], 2.9015927640371296e-05),
    (&[-2.105, 1.9576, 0.8814, 0.0235, 1.1594, -0.9484], &[0.716, 0.4171, -0.5348, -0.5229, 0.2283, -0.0774, 0.4818], 0.46387334590868934),
    (&[-0.1566, -0.9928, -1.4155, 0.3851, 0.1002, -1.8274, -0.6736, 0.8807, -0.2082, -1.352], &[-1.041, 0.4378, -2.2405, -0.4249, 0.6058, -0.4292, 0.0436, -2.4407, -1.2056], 0.3195844891941395),
    (&[-0.4085, -0.3454, -0.4506, -0.3922, -0.4375, -0.3647, -0.3478, -0.3983, -0.4443, -0.5334, -0.3587, -0.4858, -0.3252, -0.3782], &[0.1954, 1.7683, 2.4043, 1.476, 1.7577, 1.5578, -0.2605, -0.3054, 0.8374, 0.9188, 3.1269, -1.1212, -0.9827, 2.2164, 0.7121, 2.4075, 1.1783], 0.9999188037878739),
    (&[1.0606, 0.7718, 0.9913, 1.0266, 0.8391, 1.148, 0.8292, 0.6951, 0.9212, 0.8976, 0.9874, 0.6393, 0.8356], &[-0.8544, 0.8514, -0.5363, -0.3006, 0.1428, 0.7692, -0.9648, 0.057, 0.2351, -0.2106, -0.7227, -1.0122, 0.2613, -0.7532, -1.2371, -1.3878, 0.2112], 5.963593655846642e-07),
    (&[0.2843, -0.1778, 0.6123, 0.6906, 0.977], &[1.7105, -1.7116, -3.6466, -1.2814, 0.9638, 0.4027, -1.3903, 0.6335, -0.7867, -2.3934, -1.0317, -0.7145, 1.1525, 0.5274, 0.3258], 0.018958113795916658),
    (&[2.9426, 2.0773, 1.6256, 3.1169, -0.5757, 0.3666, 1.0507, 0.8684, 1.2634, 1.4607], &[0.0147, 0.9366, -0.2523, 0.2358], 0.009572759071386668),
    (&[-1.3743, 2.6769, -0.6623, 1.0068, -0.6064, 0.4506, -0.8499, -0.6211, 1.0329, -0.6732, -1.3654, 0.8646, 0.1144, -0.503, -2.8839], &[-1.7567, -0.1509, 0.3876, -0.112, -0.6813, 0.3772, -0.5918, 0.3189, -0.3513, -0.1071], 0.459697562470875),
    (&[0.3067, 0.1676, 0.3635, 0.2352, 0.2746, 0.2507, 0.0904, 0.2812, 0.3865, 0.3679, 0.4441, 0.3023, 0.2507, 0.4404, 0.2772, 0.2038, 0.3186], &[-0.6858, -1.7452, 0.0145, -0.6867, 1.4585, 1.3116, -0.7006, 0.5718, -0.881, 0.9589, 0.6957, 0.4843, 0.6721, -1.1956, -0.3853, -1.9999, -1.9282, 0.3369, 1.3561, 1.138], 0.08916858992350367),
    (&[-0.7275, 0.9172, 1.5134, 1.9338, -1.2541], &[1.3179, 0.2732, 0.4875, -0.54, 0.5396, -0.9198, -2.5058, -1.5641, -0.5037, -1.0839, -1.1584, 0.8226, 0.7232, -0.2411, 0.334, -1.8426, -1.7366], 0.11371319304727248),
    (&[-0.1566, 0.384, -0.2616, -2.6268, -0.85, -1.5053, 0.2414, -0.5977, -0.442, -3.0, -2.5037, -1.3905, 0.0549], &[0.5506, 0.6606, 0.1799, 0.665, 0.3313, 0.6903, 1.5831, 1.9203, 0.2155, 1.5261, -0.0087, -0.0505, 1.6634], 0.999929778401597),
    (&[0.8344, 0.8393, 0.6289, 0.3953, -0.7295, 1.5736, 1.5965, 0.9818, 0.7395, -1.2881, -0.0322, -0.1682, 1.3399, 1.074, 0.8756, 0.6118], &[1.7494, 0.916, 0.5744, 1.3977, -1.3407, -0.9237, -1.1473, -0.7344, 0.1082, -1.1725, 0.5557, 0.2634, -0.3975, 1.055, 1.505, 1.74, 0.5578, 2.7363, 1.6507, 0.4332], 0.3763685460636224),
    (&[0.7216, 0.7118, 1.5425, 0.2736, 0.2168, 1.5345, 0.4239, 0.8692, -0.7041, -0.7958, 0.2003, 0.1731], &[-0.168, -0.0612, -0.3761, -0.5464, 0.9852, 0.3546, 0.7148, 0.1012, 0.9835, 0.3354, 0.2373, -0.3385, 0.1146], 0.1643778906664266),
    (&[-1.1239, -0.586, -1.0849, 0.246, -0.0581, -0.6122, -0.5759, -0.8029, -1.823, -1.2868, -0.5251, -1.8496, -1.0397, -0.5522, -1.4036, -0.823, -0.6608, -0.2149, -1.2677, -1.7291], &[-1.2695, -0.1807, -0.9654, -0.3701, -0.9957, -0.9017, -1.3085, -1.2372, -0.9712, -1.269], 0.3723391637830744),
    ];
    for (a, b, expected) in cases {
        let p = t_test_one_sided(a, b).unwrap();
        assert!((p - expected).abs() <= 1e-9 * expected.max(1e-3), "{p} vs {expected}");
    }
}

#[test]
fn welch_edge_cases() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((t_test_one_sided(&a, &a).unwrap() - 0.5).abs() < 1e-12);
    let hi = [10.0, 10.0 + 1e-9, 10.0 - 1e-9];
    let lo = [0.0, 1e-9, -1e-9];
    assert!(t_test_one_sided(&hi, &lo).unwrap() < 1e-3);
    assert_eq!(t_test_one_sided(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(t_test_one_sided(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(t_test_one_sided(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.5);
    assert!(t_test_one_sided(&[1.0], &[1.0, 2.0]).is_err());
    let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(m, 5.0);
    assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
}

/// Eight nodes and 22 edges: K8 minus six edges.
fn toy_graph() -> Graph {
    let missing = [(0, 7), (1, 6), (2, 5), (3, 4), (0, 4), (2, 6)];
    let edges: Vec<_> = (0..8)
        .flat_map(|u| (u + 1..8).map(move |v| (u, v)))
        .filter(|e| !missing.contains(e))
        .collect();
    let g = Graph::new(8, edges).unwrap();
    let x = bscnets::features::standardize_columns(&bscnets::features::centrality_features(&g));
    g.with_features(x).unwrap()
}

fn toy_model(g: &Graph, split: &EdgeSplit, config: ModelConfig) -> Model {
    Model::build(&split.train_graph(g).unwrap(), g.features().unwrap().clone(), config, 0).unwrap()
}

#[test]
fn training_is_deterministic() {
    let g = toy_graph();
    let split = split_edges(&g, 1).unwrap();
    let tc = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let (a, _, oa) = run_once(&g, &split, &ModelConfig::default(), &tc, 0, 11).unwrap();
    let (b, _, ob) = run_once(&g, &split, &ModelConfig::default(), &tc, 0, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(oa.history, ob.history);
    assert_eq!(oa.params, ob.params);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let g = toy_graph();
    let split = split_edges(&g, 2).unwrap();
    let model = toy_model(&g, &split, ModelConfig::default());
    let init = model.init_parameters(4);
    let tc = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(&model, &g, &split, &tc, init.clone(), 5).unwrap();
    assert_eq!(out.params, init);
    let first = out.history.val_loss[0];
    assert!(out.history.val_loss.iter().all(|&v| v == first));
}

#[test]
fn toy_training_loss_decreases() {
    let g = toy_graph();
    let split = split_edges(&g, 3).unwrap();
    // Without dropout the per-epoch loss is not perturbed by masks.
    let config = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = toy_model(&g, &split, config);
    let tc = TrainConfig {
        learning_rate: 0.005,
        max_epochs: 50,
        patience: 1000,
        ..TrainConfig::default()
    };
    let out = train(&model, &g, &split, &tc, model.init_parameters(6), 7).unwrap();
    let windows: Vec<f64> = out
        .history
        .train_loss
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    assert_eq!(windows.len(), 5);
    for pair in windows.windows(2) {
        assert!(pair[1] < pair[0], "{windows:?}");
    }
}

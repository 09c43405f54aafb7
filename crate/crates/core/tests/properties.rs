mod common;

use std::f64::consts::LN_2;

use calibgnn::featurize::{featurize, FeatureSchema};
use calibgnn::metrics::{
    auroc, bin_predictions, ece_from_bins, entropy, histogram, positive_fraction_ece, screening_curve, PredictionRecord,
};
use calibgnn::model::{ModelConfig, NodeEmbedding, Readout};
use calibgnn::optim::{AdamW, LrSchedule, OptimizerState};
use calibgnn::selftest::random_graph;
use calibgnn::smiles::parse_smiles;
use calibgnn::{GnnModel, MolecularGraph};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn records() -> impl Strategy<Value = Vec<PredictionRecord<f64>>> {
    prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..300)
        .prop_map(|v| v.into_iter().map(|(p, y)| PredictionRecord::new(p, y, 0.5)).collect())
}

fn small_model(embedding: NodeEmbedding, readout: Readout, dropout_rate: f64, seed: u64) -> GnnModel {
    let config = ModelConfig {
        num_layers: 2,
        hidden_dim: 8,
        graph_dim: 8,
        input_dim: 10,
        dropout_rate,
        ..ModelConfig::new(embedding, readout)
    };
    GnnModel::new(config, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parser_degree_sum_is_twice_bond_count(seed: u64, atoms in 1usize..40) {
        let s = common::random_smiles(&mut ChaCha8Rng::seed_from_u64(seed), atoms);
        let m = parse_smiles(&s).unwrap();
        let degrees: usize = m.atoms.iter().map(|a| a.degree as usize).sum();
        prop_assert_eq!(degrees, 2 * m.bonds.len());
        for b in &m.bonds {
            prop_assert_ne!(b.endpoints.0, b.endpoints.1);
        }
        let neighbors = m.neighbors();
        for (i, a) in m.atoms.iter().enumerate() {
            prop_assert_eq!(neighbors[i].len(), a.degree as usize);
        }
    }

    #[test]
    fn parser_is_deterministic(seed: u64, atoms in 1usize..40) {
        let s = common::random_smiles(&mut ChaCha8Rng::seed_from_u64(seed), atoms);
        prop_assert_eq!(parse_smiles(&s).unwrap(), parse_smiles(&s).unwrap());
    }

    #[test]
    fn ring_closure_digits_are_interchangeable(size in 3usize..9, label in 1u32..10) {
        let body = "C".repeat(size - 1);
        let a = parse_smiles(&format!("C1{body}1")).unwrap();
        let b = parse_smiles(&format!("C{label}{body}{label}")).unwrap();
        let c = parse_smiles(&format!("C%{:02}{body}%{:02}", label + 10, label + 10)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        prop_assert!(a.ring_membership().iter().all(|&r| r));
    }

    #[test]
    fn featurized_graphs_are_well_formed(seed: u64, atoms in 1usize..40) {
        let s = common::random_smiles(&mut ChaCha8Rng::seed_from_u64(seed), atoms);
        let schema = FeatureSchema::default();
        let g: MolecularGraph = featurize(&parse_smiles(&s).unwrap(), &schema).unwrap();
        let n = g.num_nodes;
        prop_assert_eq!(g.node_features.dim(), (n, schema.width()));
        for i in 0..n {
            for group in schema.one_hot_groups() {
                let sum: f64 = group.map(|j| g.node_features[[i, j]]).sum();
                prop_assert_eq!(sum, 1.0);
            }
            prop_assert_eq!(g.adjacency[[i, i]], 1.0);
            for j in 0..n {
                prop_assert_eq!(g.adjacency[[i, j]], g.adjacency[[j, i]]);
            }
        }
    }

    #[test]
    fn entropy_is_symmetric_and_bounded(p in 0.0..=1.0f64) {
        let h = entropy(p);
        prop_assert!((h - entropy(1.0 - p)).abs() <= 1e-15);
        prop_assert!((0.0..=LN_2 + 1e-15).contains(&h));
    }

    #[test]
    fn auroc_depends_only_on_ranking(records in records()) {
        if let Ok(a) = auroc(&records) {
            let halved: Vec<_> = records
                .iter()
                .map(|r| PredictionRecord { probability: 0.5 * r.probability, ..*r })
                .collect();
            prop_assert_eq!(auroc(&halved).unwrap(), a);
            let flipped: Vec<_> = records
                .iter()
                .map(|r| PredictionRecord { probability: 1.0 - r.probability, ..*r })
                .collect();
            let distinct = |rs: &[PredictionRecord<f64>]| {
                let mut v: Vec<u64> = rs.iter().map(|r| r.probability.to_bits()).collect();
                v.sort_unstable();
                v.dedup();
                v.len()
            };
            // 1 - p can round two values together; the complement is exact otherwise
            if distinct(&flipped) == distinct(&records) {
                let b = auroc(&flipped).unwrap();
                prop_assert!((a + b - 1.0).abs() <= 1e-12, "{} + {}", a, b);
            }
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn bins_histograms_and_ece_are_consistent(records in records(), m in 1usize..30) {
        let bins = bin_predictions(&records, m);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), records.len());
        for b in &bins {
            for v in [b.accuracy, b.confidence, b.positive_fraction].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(c) = b.confidence {
                prop_assert!(c >= b.lower && c <= b.upper);
            }
        }
        let e = ece_from_bins(&bins);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((0.0..=1.0).contains(&positive_fraction_ece(&bins)));
        let h = histogram(records.iter().map(|r| r.probability), 1.0, m);
        prop_assert_eq!(h.iter().sum::<usize>(), records.len());
        let hv = histogram(records.iter().map(|r| entropy(r.probability)), LN_2, m);
        prop_assert_eq!(hv.iter().sum::<usize>(), records.len());
    }

    #[test]
    fn full_screen_recovers_prevalence(records in records()) {
        let curve = screening_curve(&records, &[100.0]);
        let prevalence = records.iter().filter(|r| r.label).count() as f64 / records.len() as f64;
        prop_assert_eq!(curve[0].screened, records.len());
        prop_assert_eq!(curve[0].success_rate, prevalence);
    }

    #[test]
    fn learning_rate_never_increases(
        lr in 1e-6..1.0f64,
        factor in 0.01..=1.0f64,
        mut epochs in prop::collection::btree_set(1usize..300, 0..5),
    ) {
        let schedule = LrSchedule {
            initial_lr: lr,
            decay_factor: factor,
            decay_epochs: std::mem::take(&mut epochs).into_iter().collect(),
        };
        prop_assert!(schedule.validate().is_ok());
        for e in 0..320 {
            prop_assert!(schedule.lr_at(e + 1) <= schedule.lr_at(e));
        }
        prop_assert_eq!(schedule.lr_at(0), lr);
    }

    #[test]
    fn weight_decay_leaves_moments_untouched(seed: u64, lambda in 0.0..0.1f64, steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [(3, 4), (1, 5)];
        let init: Vec<Array2<f64>> = shapes
            .iter()
            .map(|&s| Array2::from_shape_simple_fn(s, || rng.random_range(-1.0..1.0)))
            .collect();
        let grads: Vec<Vec<Array2<f64>>> = (0..steps)
            .map(|_| shapes.iter().map(|&s| Array2::from_shape_simple_fn(s, || rng.random_range(-1.0..1.0))).collect())
            .collect();
        let run = |weight_decay: f64| {
            let mut state = OptimizerState::new(AdamW::with_weight_decay(weight_decay), shapes);
            let mut params = init.clone();
            for g in &grads {
                let mut refs: Vec<&mut Array2<f64>> = params.iter_mut().collect();
                state.update(&mut refs, g, &[true, false], 1e-3).unwrap();
            }
            (state, params)
        };
        let (plain, p0) = run(0.0);
        let (decayed, p1) = run(lambda);
        prop_assert_eq!(plain.first_moments(), decayed.first_moments());
        prop_assert_eq!(plain.second_moments(), decayed.second_moments());
        // the array excluded from decay follows the same path
        prop_assert_eq!(&p0[1], &p1[1]);
    }

    #[test]
    fn prediction_ignores_node_order(seed: u64, nodes in 1usize..15, arch in 0usize..4) {
        let (embedding, readout) = calibgnn::selftest::ARCHITECTURES[arch];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(embedding, readout, 0.0, rng.random());
        let graph = random_graph(&mut rng, nodes, 10);
        let mut order: Vec<usize> = (0..nodes).collect();
        order.shuffle(&mut rng);
        let p = model.predict_deterministic(&graph).unwrap();
        let q = model.predict_deterministic(&graph.permuted(&order)).unwrap();
        prop_assert!((p - q).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn mc_dropout_mean_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = small_model(NodeEmbedding::Gcn, Readout::Attn, 0.2, 4);
    for g in 0..3 {
        let graph = random_graph(&mut rng, 6 + g, 10);
        let a = model
            .predict_mc_dropout(&graph, 1000, &mut ChaCha8Rng::seed_from_u64(100 + g as u64))
            .unwrap();
        let b = model
            .predict_mc_dropout(&graph, 1000, &mut ChaCha8Rng::seed_from_u64(200 + g as u64))
            .unwrap();
        assert!((a.mean - b.mean).abs() < 0.01, "graph {g}: {} vs {}", a.mean, b.mean);
        assert!(
            a.samples.iter().any(|&s| s != a.samples[0]),
            "dropout should vary samples"
        );
    }
}

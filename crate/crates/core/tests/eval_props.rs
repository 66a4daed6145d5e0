use std::collections::HashSet;

use ckgr_core::dataset::{Dataset, DatasetOptions};
use ckgr_core::eval::*;
use ckgr_core::graph::{AlignmentMap, InteractionRecord};
use ckgr_core::ingest::{synth_generate, SynthConfig};
use ckgr_core::model::{Hyperparams, Representations};
use ckgr_core::numeric::{Matrix, Rng};
use proptest::prelude::*;

fn grid(users: usize, items: usize) -> Vec<InteractionRecord> {
    (0..users)
        .flat_map(|u| (0..items).map(move |i| InteractionRecord::new(format!("u{u}"), format!("i{i}"), ["rated"])))
        .collect()
}

#[test]
fn train_fraction_concentrates() {
    let recs = grid(100, 100);
    for seed in 0..5 {
        let s = split_dataset(&recs, [0.8, 0.1, 0.1], seed).unwrap();
        let frac = s.train.len() as f64 / recs.len() as f64;
        assert!((frac - 0.8).abs() <= 0.02, "seed {seed}: {frac}");
    }
}

proptest! {
    #[test]
    fn split_partitions_the_input(seed in 0u64..1000, users in 1usize..15, items in 1usize..15) {
        let recs = grid(users, items);
        let s = split_dataset(&recs, [0.7, 0.2, 0.1], seed).unwrap();
        let key = |r: &InteractionRecord| (r.user.clone(), r.item.clone());
        let parts: Vec<HashSet<_>> = [&s.train, &s.validation, &s.test]
            .iter()
            .map(|p| p.iter().map(key).collect())
            .collect();
        prop_assert_eq!(parts.iter().map(HashSet::len).sum::<usize>(), recs.len());
        prop_assert!(parts[0].is_disjoint(&parts[1]) && parts[0].is_disjoint(&parts[2]) && parts[1].is_disjoint(&parts[2]));
        for u in 0..users {
            let name = format!("u{u}");
            prop_assert!(s.train.iter().any(|r| r.user == name));
        }
    }

    #[test]
    fn topk_skips_excluded_items(scores in prop::collection::vec(-5.0f64..5.0, 1..40), k in 1usize..50, mask in any::<u64>()) {
        let exclude: Vec<usize> = (0..scores.len()).filter(|i| mask >> (i % 64) & 1 == 1).collect();
        let top = topk(&scores, k, &exclude);
        prop_assert_eq!(top.len(), k.min(scores.len() - exclude.len()));
        prop_assert!(top.iter().all(|i| !exclude.contains(i)));
        for w in top.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn hits_identity(rec in prop::collection::btree_set(0usize..30, 0..10), truth in prop::collection::btree_set(0usize..30, 1..10)) {
        let rec: Vec<usize> = rec.into_iter().collect();
        let truth: Vec<usize> = truth.into_iter().collect();
        let k = 10;
        let (p, r) = precision_recall_at_k(&rec, &truth, k).unwrap();
        let hits = count_hits(&rec, &truth, k).unwrap();
        prop_assert_eq!((p * k as f64).round() as usize, hits);
        prop_assert_eq!((r * truth.len() as f64).round() as usize, hits);
        prop_assert!((p * k as f64 - hits as f64).abs() < 1e-9 && (r * truth.len() as f64 - hits as f64).abs() < 1e-9);
    }
}

#[test]
fn hand_set_five_item_ranking() {
    let user = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let item = Matrix::from_rows(&[
        vec![0.5, 0.5],  // 1.5
        vec![2.0, 0.0],  // 2.0
        vec![0.0, 1.0],  // 2.0
        vec![-1.0, 3.0], // 5.0
        vec![1.0, -1.0], // -1.0
    ])
    .unwrap();
    let ranker = ModelRanker::new(Representations { user, item });
    assert_eq!(topk(&ranker.scores(0), 5, &[]), vec![3, 1, 2, 0, 4]);
    assert_eq!(topk(&ranker.scores(0), 3, &[3]), vec![1, 2, 0]);
}

#[test]
fn metrics_ignore_user_order() {
    let mut rng = Rng::seed_from(5);
    let (n_users, n_items) = (30, 25);
    let mut user = Matrix::zeros(n_users, 4);
    let mut item = Matrix::zeros(n_items, 4);
    user.as_mut_slice().iter_mut().for_each(|v| *v = rng.standard_normal());
    item.as_mut_slice().iter_mut().for_each(|v| *v = rng.standard_normal());
    let truth: Vec<Vec<usize>> = (0..n_users).map(|_| { let mut t: Vec<usize> = (0..3).map(|_| rng.below(n_items)).collect(); t.sort(); t.dedup(); t }).collect();
    let exclude: Vec<Vec<usize>> = (0..n_users).map(|u| vec![u % n_items]).collect();
    let base = evaluate(&ModelRanker::new(Representations { user: user.clone(), item: item.clone() }), &exclude, &truth, 5).unwrap();

    let mut perm: Vec<usize> = (0..n_users).collect();
    rng.shuffle(&mut perm);
    let mut user_p = Matrix::zeros(n_users, 4);
    let mut truth_p = vec![Vec::new(); n_users];
    let mut exclude_p = vec![Vec::new(); n_users];
    for u in 0..n_users {
        user_p.row_mut(perm[u]).copy_from_slice(user.row(u));
        truth_p[perm[u]] = truth[u].clone();
        exclude_p[perm[u]] = exclude[u].clone();
    }
    let moved = evaluate(&ModelRanker::new(Representations { user: user_p, item }), &exclude_p, &truth_p, 5).unwrap();
    assert_eq!(base.users, moved.users);
    assert!((base.precision - moved.precision).abs() < 1e-12);
    assert!((base.recall - moved.recall).abs() < 1e-12);
}

#[test]
fn oracle_ranker_reaches_full_recall() {
    let truth = vec![vec![1, 4], vec![], vec![0, 2, 3]];
    let oracle = OracleRanker::new(truth.clone(), 6);
    let m = evaluate(&oracle, &[vec![5], vec![], vec![]], &truth, 3).unwrap();
    assert_eq!(m.recall, 1.0);
    assert_eq!(m.users, 2);
}

#[test]
fn popularity_beats_random_on_skewed_data() {
    let mut rng = Rng::seed_from(12);
    let n_items = 200;
    let weights: Vec<f64> = (0..n_items).map(|i| 1.0 / (i + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut recs = Vec::new();
    for u in 0..300 {
        let mut seen = HashSet::new();
        while seen.len() < 15 {
            let mut x = rng.uniform() * total;
            let mut pick = n_items - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            if seen.insert(pick) {
                recs.push(InteractionRecord::new(format!("u{u}"), format!("i{pick}"), ["rated"]));
            }
        }
    }
    let ds = Dataset::prepare(&recs, &[], &[], &AlignmentMap::empty(), DatasetOptions::default()).unwrap();
    let pop = evaluate(&baseline_popularity(&ds.train_items, ds.item_count()), &ds.train_items, &ds.test, 10).unwrap();
    let rnd = evaluate(&baseline_random(1, ds.item_count()), &ds.train_items, &ds.test, 10).unwrap();
    assert!(pop.recall > rnd.recall, "{pop:?} vs {rnd:?}");
}

fn sweep_data() -> Dataset {
    let d = synth_generate(&SynthConfig { n_users: 40, n_items: 30, latent_dim: 3, interactions_per_user: 6, seed: 9, ..SynthConfig::default() }).unwrap();
    Dataset::prepare(&d.interactions, &d.user_attrs, &d.item_attrs, &AlignmentMap::empty(), DatasetOptions::default()).unwrap()
}

fn sweep_hyper() -> Hyperparams {
    Hyperparams { entity_dim: 8, relation_dim: 8, layer_dims: vec![8, 4], epochs: 3, lr: 0.01, kg_batch_size: 256, cf_batch_size: 256, ..Hyperparams::default() }
}

#[test]
fn sweep_produces_labelled_reproducible_rows() {
    let ds = sweep_data();
    let one = sweep_layers(&ds, &[1], &sweep_hyper()).unwrap();
    assert_eq!(one.rows.len(), 1);
    let a = sweep_layers(&ds, &[1, 2, 3, 4], &sweep_hyper()).unwrap();
    let b = sweep_layers(&ds, &[1, 2, 3, 4], &sweep_hyper()).unwrap();
    let labels: Vec<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["L=1", "L=2", "L=3", "L=4"]);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!((0.0..=1.0).contains(&x.precision) && (0.0..=1.0).contains(&x.recall));
        assert_eq!((x.precision, x.recall), (y.precision, y.recall));
    }
    assert_eq!(a.rows[0].precision, one.rows[0].precision);
}

//! Toy models and independent reference implementations shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use ckgr_core::graph::{
    AlignmentMap, AttributeTriple, BipartiteGraph, CollaborativeKG, EntityId, EntityKey, IdOrder,
    InteractionRecord, RelationKind, RelationRegistry, Triple,
};
use ckgr_core::model::{
    bpr_loss, total_loss, total_loss_and_grad, BprTriplet, DualGraph, Hyperparams, ModelState,
};
use ckgr_core::numeric::{finite_diff_check, GradCheckConfig, GradCheckReport, Rng};
use ckgr_core::propagation::{AttentionForm, LayerStack};
use ckgr_core::transr::{kg_loss, sample_batch, EmbeddingTable, TripleBatch};

/// Two users, two items and one attribute per graph: 5 entities and 2
/// relations on each side.
pub fn toy_graphs() -> DualGraph {
    let records = vec![
        InteractionRecord::new("u1", "i1", ["view"]),
        InteractionRecord::new("u1", "i2", ["view"]),
        InteractionRecord::new("u2", "i2", ["view"]),
    ];
    let graphs = DualGraph::build(
        BipartiteGraph::build(&records).unwrap(),
        &[AttributeTriple::new("u2", "age", "a30")],
        &[AttributeTriple::new("i1", "genre", "drama")],
        &AlignmentMap::empty(),
        IdOrder::FirstSeen,
    )
    .unwrap();
    for kg in [&graphs.user_kg, &graphs.item_kg] {
        assert_eq!((kg.entity_count(), kg.relation_count()), (5, 2));
    }
    graphs
}

pub fn toy_hyper(shared: bool, attention: AttentionForm) -> Hyperparams {
    let (d, dims) = match attention {
        AttentionForm::Relation => (4, vec![3, 2]),
        AttentionForm::Tail => (3, vec![3, 2]),
    };
    Hyperparams {
        entity_dim: d,
        relation_dim: 3,
        layer_dims: dims,
        init_std: 0.5,
        shared_weights: shared,
        attention,
        lambda: 1e-3,
        seed: 11,
        ..Hyperparams::default()
    }
}

pub fn toy_state(hyper: &Hyperparams) -> (DualGraph, ModelState) {
    let graphs = toy_graphs();
    let state = ModelState::init(&graphs, hyper).unwrap();
    (graphs, state)
}

pub fn toy_bpr_batch() -> Vec<BprTriplet> {
    vec![
        BprTriplet { user: 0, positive: 0, negative: 1 },
        BprTriplet { user: 1, positive: 1, negative: 0 },
        BprTriplet { user: 0, positive: 1, negative: 0 },
    ]
}

pub fn toy_kg_batch(kg: &CollaborativeKG, seed: u64) -> TripleBatch {
    let (batch, dropped) = sample_batch(kg.triples(), kg, false, &mut Rng::seed_from(seed)).unwrap();
    assert_eq!(dropped, 0);
    batch
}

fn flat(table: &EmbeddingTable) -> Vec<f64> {
    table.blocks().concat()
}

fn assign(table: &mut EmbeddingTable, values: &[f64]) {
    let mut pos = 0;
    for b in table.blocks_mut() {
        b.copy_from_slice(&values[pos..pos + b.len()]);
        pos += b.len();
    }
}

/// TransR loss gradient on a 5-entity / 2-relation table.
pub fn check_kg_loss(seed: u64) -> GradCheckReport {
    let graphs = toy_graphs();
    let kg = &graphs.user_kg;
    let mut rng = Rng::seed_from(seed);
    let table = EmbeddingTable::gaussian(5, 2, 4, 3, 0.5, &mut rng).unwrap();
    let batch = toy_kg_batch(kg, seed);
    let (_, grad) = kg_loss(&batch, &table).unwrap();
    let mut scratch = table.clone();
    finite_diff_check(
        |theta| {
            assign(&mut scratch, theta);
            kg_loss(&batch, &scratch).unwrap().0
        },
        &flat(&table),
        &flat(&grad),
        GradCheckConfig::default(),
    )
    .unwrap()
}

pub fn check_bpr_loss(hyper: &Hyperparams) -> GradCheckReport {
    let (graphs, state) = toy_state(hyper);
    let batch = toy_bpr_batch();
    let (_, grad) = bpr_loss(&batch, &state, &graphs).unwrap();
    let mut scratch = state.clone();
    finite_diff_check(
        |theta| {
            scratch.assign_flat(theta).unwrap();
            bpr_loss(&batch, &scratch, &graphs).unwrap().0
        },
        &state.to_flat(),
        &grad.to_flat(),
        GradCheckConfig::default(),
    )
    .unwrap()
}

pub fn check_total_loss(hyper: &Hyperparams) -> GradCheckReport {
    let (graphs, state) = toy_state(hyper);
    let kg_u = toy_kg_batch(&graphs.user_kg, 3);
    let kg_i = toy_kg_batch(&graphs.item_kg, 4);
    let batch = toy_bpr_batch();
    let (_, grad) = total_loss_and_grad(&state, &graphs, &kg_u, &kg_i, &batch).unwrap();
    let mut scratch = state.clone();
    finite_diff_check(
        |theta| {
            scratch.assign_flat(theta).unwrap();
            total_loss(&scratch, &graphs, &kg_u, &kg_i, &batch).unwrap().total
        },
        &state.to_flat(),
        &grad.to_flat(),
        GradCheckConfig::default(),
    )
    .unwrap()
}

/// Every configuration the gradient checks cover, labelled.
pub fn gradient_reports() -> Vec<(String, GradCheckReport)> {
    let mut out = vec![("kg_loss".to_string(), check_kg_loss(5))];
    for (shared, attention) in [
        (true, AttentionForm::Relation),
        (false, AttentionForm::Relation),
        (true, AttentionForm::Tail),
    ] {
        let h = toy_hyper(shared, attention);
        let tag = format!("shared={shared} attention={attention:?}");
        out.push((format!("bpr_loss {tag}"), check_bpr_loss(&h)));
        out.push((format!("total_loss {tag}"), check_total_loss(&h)));
    }
    out
}

// ---- brute-force propagation -------------------------------------------------

fn ref_matvec_cols(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    // uses only the first x.len() columns of m
    m.iter()
        .map(|row| {
            let mut s = 0.0;
            for c in 0..x.len() {
                s += row[c] * x[c];
            }
            s
        })
        .collect()
}

fn rows_of(m: &ckgr_core::numeric::Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn lrelu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Layer-by-layer representations `[layer][entity][dim]`, computed from the
/// raw triple list with plain loops.
pub fn reference_propagate(
    triples: &[(usize, usize, usize)],
    table: &EmbeddingTable,
    stack: &LayerStack,
) -> Vec<Vec<Vec<f64>>> {
    let n = table.entity_count();
    let proj: Vec<Vec<Vec<f64>>> = table.projection.iter().map(rows_of).collect();
    let rel = rows_of(&table.relation);
    let mut layers = vec![rows_of(&table.entity)];
    for l in 0..stack.layers() {
        let x = &layers[l];
        let w1 = rows_of(&stack.w1[l]);
        let w2 = rows_of(stack.product_weights(l));
        let mut next = Vec::with_capacity(n);
        for h in 0..n {
            let mine: Vec<(usize, usize)> = triples
                .iter()
                .filter(|t| t.0 == h)
                .map(|t| (t.1, t.2))
                .collect();
            let logits: Vec<f64> = mine
                .iter()
                .map(|&(r, t)| {
                    let ph = ref_matvec_cols(&proj[r], &x[h]);
                    let pt = ref_matvec_cols(&proj[r], &x[t]);
                    (0..ph.len())
                        .map(|i| {
                            let inner = match stack.attention {
                                AttentionForm::Relation => ph[i] + rel[r][i],
                                AttentionForm::Tail => ph[i] + x[t][i],
                            };
                            pt[i] * inner.tanh()
                        })
                        .sum()
                })
                .collect();
            let mut m = vec![0.0; x[h].len()];
            if !logits.is_empty() {
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (&(_, t), e) in mine.iter().zip(&exps) {
                    for i in 0..m.len() {
                        m[i] += e / z * x[t][i];
                    }
                }
            }
            let s: Vec<f64> = (0..m.len()).map(|i| x[h][i] + m[i]).collect();
            let p: Vec<f64> = (0..m.len()).map(|i| x[h][i] * m[i]).collect();
            let a = ref_matvec_cols(&w1, &s);
            let b = ref_matvec_cols(&w2, &p);
            next.push((0..a.len()).map(|i| lrelu(a[i], stack.slope) + lrelu(b[i], stack.slope)).collect());
        }
        layers.push(next);
    }
    layers
}

/// Five entities, two relations, six edges (one isolated head, one
/// repeated tail, mixed relations).
pub const FIVE_NODE_EDGES: [(usize, usize, usize); 6] =
    [(0, 0, 1), (0, 1, 2), (1, 0, 2), (2, 1, 3), (3, 0, 0), (0, 0, 3)];

pub fn kg_from_edges(n: usize, relations: usize, edges: &[(usize, usize, usize)]) -> CollaborativeKG {
    let entities = (0..n).map(|e| EntityKey::Attribute(format!("e{e}"))).collect();
    let mut registry = RelationRegistry::new();
    for r in 0..relations {
        registry.attribute_relation(RelationKind::ItemAttribute, &format!("r{r}"));
    }
    let triples = edges
        .iter()
        .map(|&(h, r, t)| Triple::new(h as u32, r as u32, t as u32))
        .collect();
    CollaborativeKG::from_triples(entities, registry, triples).unwrap()
}

pub fn five_node_graph() -> CollaborativeKG {
    kg_from_edges(5, 2, &FIVE_NODE_EDGES)
}

/// Largest absolute difference between `propagate` and the reference on
/// the five-node graph, over all layers, for the given settings.
pub fn five_node_max_diff(shared: bool, attention: AttentionForm, seed: u64) -> f64 {
    let kg = five_node_graph();
    let mut rng = Rng::seed_from(seed);
    let (d, k) = match attention {
        AttentionForm::Relation => (4, 3),
        AttentionForm::Tail => (3, 3),
    };
    let table = EmbeddingTable::gaussian(5, 2, d, k, 0.7, &mut rng).unwrap();
    let stack = LayerStack::gaussian(vec![d, 3, 2], shared, 0.2, attention, 0.7, &mut rng).unwrap();
    let got = ckgr_core::propagation::propagate(&kg, &table, &stack).unwrap();
    let want = reference_propagate(&FIVE_NODE_EDGES, &table, &stack);
    let mut worst: f64 = 0.0;
    for (l, layer) in want.iter().enumerate() {
        for (e, row) in layer.iter().enumerate() {
            for (a, b) in got.layer(l).row(e).iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

// ---- random instances --------------------------------------------------------

pub struct RandomInstance {
    pub records: Vec<InteractionRecord>,
    pub user_attrs: Vec<AttributeTriple>,
    pub item_attrs: Vec<AttributeTriple>,
}

const TYPES: [&str; 3] = ["view", "like", "share"];

/// Random interactions (with repeated pairs and mixed type sets) plus
/// distinct attribute triples on existing users and items.
pub fn random_instance(rng: &mut Rng) -> RandomInstance {
    let n_users = 1 + rng.below(12);
    let n_items = 1 + rng.below(12);
    let n_records = 1 + rng.below(40);
    let records: Vec<InteractionRecord> = (0..n_records)
        .map(|_| {
            let types: Vec<&str> = TYPES.iter().copied().filter(|_| rng.uniform() < 0.5).collect();
            let types = if types.is_empty() { vec!["view"] } else { types };
            InteractionRecord::new(format!("u{}", rng.below(n_users)), format!("i{}", rng.below(n_items)), types)
        })
        .collect();
    let users: Vec<String> = {
        let mut v: Vec<String> = records.iter().map(|r| r.user.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let items: Vec<String> = {
        let mut v: Vec<String> = records.iter().map(|r| r.item.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let mut attrs = |heads: &[String], relations: &[&str]| {
        let mut out: Vec<AttributeTriple> = Vec::new();
        for _ in 0..rng.below(20) {
            let t = AttributeTriple::new(
                heads[rng.below(heads.len())].clone(),
                relations[rng.below(relations.len())],
                format!("a{}", rng.below(6)),
            );
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    };
    let user_attrs = attrs(&users, &["age", "city"]);
    let item_attrs = attrs(&items, &["genre", "brand"]);
    RandomInstance {
        records,
        user_attrs,
        item_attrs,
    }
}

pub fn entity(kg: &CollaborativeKG, key: &EntityKey) -> EntityId {
    EntityId(kg.entities().iter().position(|k| k == key).unwrap() as u32)
}

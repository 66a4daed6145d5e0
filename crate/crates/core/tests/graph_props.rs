mod common;

use std::collections::BTreeSet;

use ckgr_core::graph::{build_ckg, AlignmentMap, BipartiteGraph, EntityId, IdOrder, InteractionRecord, Side, Triple};
use ckgr_core::numeric::Rng;
use proptest::prelude::*;

#[test]
fn triple_counts_on_100_random_instances() {
    let mut rng = Rng::seed_from(2024);
    for _ in 0..100 {
        let inst = common::random_instance(&mut rng);
        let bg = BipartiteGraph::build(&inst.records).unwrap();
        let gu = build_ckg(&bg, &inst.item_attrs, &AlignmentMap::empty(), Side::User, IdOrder::FirstSeen).unwrap();
        let gi = build_ckg(&bg, &inst.user_attrs, &AlignmentMap::empty(), Side::Item, IdOrder::FirstSeen).unwrap();
        assert_eq!(gu.triples().len(), bg.edges().len() + inst.item_attrs.len());
        assert_eq!(gi.triples().len(), bg.edges().len() + inst.user_attrs.len());
    }
}

proptest! {
    #[test]
    fn neighbor_lists_flatten_to_the_triple_set(seed in 0u64..10_000) {
        let inst = common::random_instance(&mut Rng::seed_from(seed));
        let bg = BipartiteGraph::build(&inst.records).unwrap();
        let kg = build_ckg(&bg, &inst.item_attrs, &AlignmentMap::empty(), Side::User, IdOrder::FirstSeen).unwrap();
        let mut flat = Vec::new();
        for h in 0..kg.entity_count() {
            for &(r, t) in kg.neighbors(EntityId(h as u32)).unwrap() {
                flat.push(Triple { head: EntityId(h as u32), relation: r, tail: t });
            }
        }
        prop_assert_eq!(flat.len(), kg.triples().len());
        let a: BTreeSet<_> = flat.iter().map(|t| (t.head, t.relation, t.tail)).collect();
        let b: BTreeSet<_> = kg.triples().iter().map(|t| (t.head, t.relation, t.tail)).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rebuilds_are_identical(seed in 0u64..10_000, sorted in any::<bool>()) {
        let order = if sorted { IdOrder::Sorted } else { IdOrder::FirstSeen };
        let inst = common::random_instance(&mut Rng::seed_from(seed));
        let build = || {
            let bg = BipartiteGraph::build_ordered(&inst.records, order).unwrap();
            build_ckg(&bg, &inst.user_attrs, &AlignmentMap::empty(), Side::Item, order).unwrap().dump()
        };
        prop_assert_eq!(build(), build());
    }

    #[test]
    fn sorted_ids_ignore_record_order(seed in 0u64..10_000) {
        let inst = common::random_instance(&mut Rng::seed_from(seed));
        let mut shuffled = inst.records.clone();
        Rng::seed_from(seed + 1).shuffle(&mut shuffled);
        let dump = |recs: &[InteractionRecord]| {
            let bg = BipartiteGraph::build_ordered(recs, IdOrder::Sorted).unwrap();
            let kg = build_ckg(&bg, &inst.item_attrs, &AlignmentMap::empty(), Side::User, IdOrder::Sorted).unwrap();
            // relation ids follow first appearance, so compare relations by name
            let named: BTreeSet<(u32, String, u32)> = kg
                .triples()
                .iter()
                .map(|t| (t.head.0, kg.relations().entry(t.relation).unwrap().name.clone(), t.tail.0))
                .collect();
            (kg.entities().to_vec(), named)
        };
        prop_assert_eq!(dump(&inst.records), dump(&shuffled));
    }
}

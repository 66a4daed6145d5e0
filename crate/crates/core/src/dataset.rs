//! A split dataset with its training graphs and per-user item lists.

use crate::error::Result;
use crate::eval::{split_dataset, Split};
use crate::graph::{AlignmentMap, AttributeTriple, BipartiteGraph, IdOrder, InteractionRecord};
use crate::model::DualGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub id_order: IdOrder,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            ratios: [0.8, 0.1, 0.1],
            seed: 42,
            id_order: IdOrder::FirstSeen,
        }
    }
}

/// User and item ids come from every record; the graphs hold train edges
/// only. Per-user lists are sorted catalog item ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub graphs: DualGraph,
    pub train_items: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn prepare(
        records: &[InteractionRecord],
        user_attrs: &[AttributeTriple],
        item_attrs: &[AttributeTriple],
        align: &AlignmentMap,
        opts: DatasetOptions,
    ) -> Result<Self> {
        let catalog = BipartiteGraph::build_ordered(records, opts.id_order)?;
        let split = split_dataset(records, opts.ratios, opts.seed)?;
        let train_bg =
            BipartiteGraph::build_with_vocabulary(&split.train, catalog.users().clone(), catalog.items().clone())?;
        let graphs = DualGraph::build(train_bg, user_attrs, item_attrs, align, opts.id_order)?;
        let train_items = graphs.items_by_user();
        let validation = per_user(&split.validation, &catalog);
        let test = per_user(&split.test, &catalog);
        Ok(Dataset {
            split,
            graphs,
            train_items,
            validation,
            test,
        })
    }

    pub fn user_count(&self) -> usize {
        self.graphs.user_count()
    }

    pub fn item_count(&self) -> usize {
        self.graphs.item_count()
    }
}

fn per_user(records: &[InteractionRecord], catalog: &BipartiteGraph) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); catalog.user_count()];
    for r in records {
        // both ids exist: the catalog was built from a superset
        let u = catalog.users().id(&r.user).expect("user in catalog") as usize;
        let i = catalog.items().id(&r.item).expect("item in catalog") as usize;
        out[u].push(i);
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

//! Joint model over both collaborative graphs: stitched user/item vectors,
//! inner-product scoring, BPR and total losses, and the training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{self, ModelRanker};
use crate::graph::{
    build_ckg, AlignmentMap, AttributeTriple, BipartiteGraph, CollaborativeKG, EntityId, IdOrder,
    Side, Triple,
};
use crate::numeric::{self, dot, sigmoid, softplus, Matrix, Rng};
use crate::propagation::{propagate, AttentionForm, LayerStack, Propagation};
use crate::transr::{kg_loss_into, sample_batch, EmbeddingTable, TripleBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub entity_dim: usize,
    pub relation_dim: usize,
    /// Output dims of layers `1..=L`.
    pub layer_dims: Vec<usize>,
    pub init_std: f64,
    pub leaky_slope: f64,
    pub shared_weights: bool,
    pub attention: AttentionForm,
    pub corrupt_heads: bool,
    pub lr: f64,
    pub lambda: f64,
    pub kg_batch_size: usize,
    pub cf_batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            entity_dim: 64,
            relation_dim: 64,
            layer_dims: vec![32, 16],
            init_std: 0.1,
            leaky_slope: 0.2,
            shared_weights: true,
            attention: AttentionForm::Relation,
            corrupt_heads: false,
            lr: 0.001,
            lambda: 1e-5,
            kg_batch_size: 1024,
            cf_batch_size: 1024,
            epochs: 100,
            patience: 10,
            top_k: 10,
            seed: 42,
        }
    }
}

/// Repeats the last entry (or truncates) so that `dims` has `layers` entries.
pub fn resize_layer_dims(dims: &[usize], layers: usize) -> Vec<usize> {
    let fill = dims.last().copied().unwrap_or(1);
    (0..layers).map(|l| dims.get(l).copied().unwrap_or(fill)).collect()
}

impl Hyperparams {
    pub fn layers(&self) -> usize {
        self.layer_dims.len()
    }

    /// `d₀..d_L`.
    pub fn stack_dims(&self) -> Vec<usize> {
        std::iter::once(self.entity_dim)
            .chain(self.layer_dims.iter().copied())
            .collect()
    }

    pub fn with_layers(&self, layers: usize) -> Hyperparams {
        Hyperparams {
            layer_dims: resize_layer_dims(&self.layer_dims, layers),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.entity_dim == 0 || self.relation_dim == 0 {
            return fail("entity_dim and relation_dim must be positive".into());
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return fail(format!("need at least one positive layer dim, got {:?}", self.layer_dims));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std must be positive, got {}", self.init_std));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.kg_batch_size == 0 || self.cf_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if self.top_k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.attention == AttentionForm::Tail {
            let dims = self.stack_dims();
            if dims[..dims.len() - 1].iter().any(|&d| d != self.relation_dim) {
                return fail("attention.form = tail needs entity_dim, relation_dim and all inner layer dims equal".into());
            }
        }
        Ok(())
    }

    /// `key = value` pairs, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let dims = self
            .layer_dims
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("entity_dim", self.entity_dim.to_string()),
            ("relation_dim", self.relation_dim.to_string()),
            ("layers", self.layers().to_string()),
            ("layer_dims", dims),
            ("init_std", self.init_std.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("aggregator.shared_weights", self.shared_weights.to_string()),
            (
                "attention.form",
                match self.attention {
                    AttentionForm::Relation => "relation",
                    AttentionForm::Tail => "tail",
                }
                .to_string(),
            ),
            ("corrupt_heads", self.corrupt_heads.to_string()),
            ("lr", self.lr.to_string()),
            ("lambda", self.lambda.to_string()),
            ("kg_batch_size", self.kg_batch_size.to_string()),
            ("cf_batch_size", self.cf_batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("k", self.top_k.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys this
    /// struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
        }
        match key {
            "entity_dim" => self.entity_dim = parse(key, value)?,
            "relation_dim" => self.relation_dim = parse(key, value)?,
            "layers" => {
                let l: usize = parse(key, value)?;
                if l == 0 {
                    return Err(Error::Config("layers must be at least 1".into()));
                }
                self.layer_dims = resize_layer_dims(&self.layer_dims, l);
            }
            "layer_dims" => {
                let dims = value
                    .split(',')
                    .map(|v| parse::<usize>(key, v))
                    .collect::<Result<Vec<_>>>()?;
                if dims.is_empty() {
                    return Err(Error::Config("layer_dims must not be empty".into()));
                }
                self.layer_dims = dims;
            }
            "init_std" => self.init_std = parse(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "aggregator.shared_weights" => self.shared_weights = parse(key, value)?,
            "attention.form" => {
                self.attention = match value.trim() {
                    "relation" => AttentionForm::Relation,
                    "tail" => AttentionForm::Tail,
                    other => {
                        return Err(Error::Config(format!(
                            "attention.form must be 'relation' or 'tail', got '{other}'"
                        )))
                    }
                }
            }
            "corrupt_heads" => self.corrupt_heads = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "kg_batch_size" => self.kg_batch_size = parse(key, value)?,
            "cf_batch_size" => self.cf_batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "k" => self.top_k = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// The bipartite training graph with its two collaborative KGs.
#[derive(Debug, Clone)]
pub struct DualGraph {
    pub bipartite: BipartiteGraph,
    pub user_kg: CollaborativeKG,
    pub item_kg: CollaborativeKG,
}

impl DualGraph {
    pub fn build(
        bipartite: BipartiteGraph,
        user_attrs: &[AttributeTriple],
        item_attrs: &[AttributeTriple],
        align: &AlignmentMap,
        order: IdOrder,
    ) -> Result<Self> {
        let user_kg = build_ckg(&bipartite, item_attrs, align, Side::User, order)?;
        let item_kg = build_ckg(&bipartite, user_attrs, align, Side::Item, order)?;
        Ok(DualGraph {
            bipartite,
            user_kg,
            item_kg,
        })
    }

    pub fn user_count(&self) -> usize {
        self.bipartite.user_count()
    }

    pub fn item_count(&self) -> usize {
        self.bipartite.item_count()
    }

    /// Items each user interacted with in the graph, sorted.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count()];
        for e in self.bipartite.edges() {
            out[e.user as usize].push(e.item as usize);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    fn node_entities(&self, node: Node) -> (Option<EntityId>, Option<EntityId>) {
        match node {
            Node::User(u) => (self.user_kg.user_entity(u), self.item_kg.user_entity(u)),
            Node::Item(i) => (self.user_kg.item_entity(i), self.item_kg.item_entity(i)),
        }
    }

    fn is_warm(&self, node: Node) -> bool {
        let (a, b) = self.node_entities(node);
        a.is_some() && b.is_some()
    }
}

/// A user or item by bipartite index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    User(usize),
    Item(usize),
}

/// Parameters for one graph: TransR table plus propagation stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    pub table: EmbeddingTable,
    pub stack: LayerStack,
}

impl SideModel {
    pub fn init(kg: &CollaborativeKG, hyper: &Hyperparams, rng: &mut Rng) -> Result<Self> {
        let table = EmbeddingTable::gaussian(
            kg.entity_count(),
            kg.relation_count(),
            hyper.entity_dim,
            hyper.relation_dim,
            hyper.init_std,
            rng,
        )?;
        let stack = LayerStack::gaussian(
            hyper.stack_dims(),
            hyper.shared_weights,
            hyper.leaky_slope,
            hyper.attention,
            hyper.init_std,
            rng,
        )?;
        stack.validate_for(&table)?;
        Ok(SideModel { table, stack })
    }

    pub fn zeros_like(&self) -> Self {
        SideModel {
            table: self.table.zeros_like(),
            stack: self.stack.zeros_like(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.table.blocks();
        b.extend(self.stack.blocks());
        b
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.table.blocks_mut();
        b.extend(self.stack.blocks_mut());
        b
    }
}

/// Complete trainable state plus the settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub user_side: SideModel,
    pub item_side: SideModel,
    pub hyper: Hyperparams,
    /// Epochs trained so far.
    pub epoch: usize,
    /// Free-form metadata echoed into checkpoints.
    pub extra: BTreeMap<String, String>,
}

impl ModelState {
    pub fn init(graphs: &DualGraph, hyper: &Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let mut rng = Rng::stream(hyper.seed, 0);
        let user_side = SideModel::init(&graphs.user_kg, hyper, &mut rng)?;
        let item_side = SideModel::init(&graphs.item_kg, hyper, &mut rng)?;
        Ok(ModelState {
            user_side,
            item_side,
            hyper: hyper.clone(),
            epoch: 0,
            extra: BTreeMap::new(),
        })
    }

    /// All parameter blocks: user side (table, stack), then item side.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.user_side.blocks();
        b.extend(self.item_side.blocks());
        b
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.user_side.blocks_mut();
        b.extend(self.item_side.blocks_mut());
        b
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.blocks().iter().map(|b| b.len()).sum();
        if total != flat.len() {
            return Err(Error::Shape(format!("{} values for {total} parameters", flat.len())));
        }
        let mut pos = 0;
        for b in self.blocks_mut() {
            b.copy_from_slice(&flat[pos..pos + b.len()]);
            pos += b.len();
        }
        Ok(())
    }

    /// `‖Θ‖²` over every trainable parameter.
    pub fn squared_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for side in [&self.user_side, &self.item_side] {
            side.table.ensure_finite()?;
            side.stack.ensure_finite()?;
        }
        Ok(())
    }

    /// Checks that the parameter shapes fit `graphs`.
    pub fn check_compatible(&self, graphs: &DualGraph) -> Result<()> {
        for (name, side, kg) in [
            ("user-side", &self.user_side, &graphs.user_kg),
            ("item-side", &self.item_side, &graphs.item_kg),
        ] {
            if side.table.entity_count() != kg.entity_count()
                || side.table.relation_count() != kg.relation_count()
            {
                return Err(Error::DimensionConflict(format!(
                    "{name} parameters cover {} entities / {} relations but the graph has {} / {}",
                    side.table.entity_count(),
                    side.table.relation_count(),
                    kg.entity_count(),
                    kg.relation_count()
                )));
            }
        }
        Ok(())
    }

    pub fn stitched_len(&self) -> usize {
        self.user_side.stack.stitched_len() + self.item_side.stack.stitched_len()
    }
}

/// Gradient with the same layout as [`ModelState`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub user_side: SideModel,
    pub item_side: SideModel,
}

impl Gradients {
    pub fn zeros_like(state: &ModelState) -> Self {
        Gradients {
            user_side: state.user_side.zeros_like(),
            item_side: state.item_side.zeros_like(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.user_side.blocks();
        b.extend(self.item_side.blocks());
        b
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }
}

/// Forward passes of both graphs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub user_graph: Propagation,
    pub item_graph: Propagation,
}

impl Forward {
    pub fn run(state: &ModelState, graphs: &DualGraph) -> Result<Self> {
        Ok(Forward {
            user_graph: propagate(&graphs.user_kg, &state.user_side.table, &state.user_side.stack)?,
            item_graph: propagate(&graphs.item_kg, &state.item_side.table, &state.item_side.stack)?,
        })
    }
}

/// `[repr from the user-side graph ; repr from the item-side graph]`.
///
/// Fails with [`Error::ColdEntity`] when `node` is missing from either graph.
pub fn final_representation(node: Node, graphs: &DualGraph, forward: &Forward) -> Result<Vec<f64>> {
    let (a, b) = graphs.node_entities(node);
    let (Some(a), Some(b)) = (a, b) else {
        return Err(Error::ColdEntity(format!(
            "{node:?} is missing from {} graph",
            if a.is_none() { "the user-side" } else { "the item-side" }
        )));
    };
    let mut out = Vec::with_capacity(forward.user_graph.stitched_len() + forward.item_graph.stitched_len());
    forward.user_graph.stitched_into(a, &mut out);
    forward.item_graph.stitched_into(b, &mut out);
    Ok(out)
}

/// Like [`final_representation`] but zero-fills a missing side.
fn lenient_representation(node: Node, graphs: &DualGraph, forward: &Forward) -> Vec<f64> {
    let (a, b) = graphs.node_entities(node);
    let mut out = Vec::with_capacity(forward.user_graph.stitched_len() + forward.item_graph.stitched_len());
    for (e, prop) in [(a, &forward.user_graph), (b, &forward.item_graph)] {
        match e {
            Some(e) => prop.stitched_into(e, &mut out),
            None => out.resize(out.len() + prop.stitched_len(), 0.0),
        }
    }
    out
}

/// Final vectors of every user and item; cold sides are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub user: Matrix,
    pub item: Matrix,
}

impl Representations {
    pub fn compute(state: &ModelState, graphs: &DualGraph) -> Result<Self> {
        let forward = Forward::run(state, graphs)?;
        Ok(Self::from_forward(graphs, &forward))
    }

    pub fn from_forward(graphs: &DualGraph, forward: &Forward) -> Self {
        let width = forward.user_graph.stitched_len() + forward.item_graph.stitched_len();
        let mut user = Matrix::zeros(graphs.user_count(), width);
        for u in 0..graphs.user_count() {
            user.row_mut(u)
                .copy_from_slice(&lenient_representation(Node::User(u), graphs, forward));
        }
        let mut item = Matrix::zeros(graphs.item_count(), width);
        for i in 0..graphs.item_count() {
            item.row_mut(i)
                .copy_from_slice(&lenient_representation(Node::Item(i), graphs, forward));
        }
        Representations { user, item }
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        predict_score(self.user.row(user), self.item.row(item))
    }
}

/// `ŷ(u, i)`: inner product of the final user and item vectors.
pub fn predict_score(user: &[f64], item: &[f64]) -> f64 {
    dot(user, item)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriplet {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

fn scatter_final_grad(
    node: Node,
    grad: &[f64],
    graphs: &DualGraph,
    user_upstream: &mut Matrix,
    item_upstream: &mut Matrix,
) {
    let (a, b) = graphs.node_entities(node);
    let split = user_upstream.cols();
    if let Some(a) = a {
        numeric::axpy(1.0, &grad[..split], user_upstream.row_mut(a.index()));
    }
    if let Some(b) = b {
        numeric::axpy(1.0, &grad[split..], item_upstream.row_mut(b.index()));
    }
}

/// `Σ −ln σ(ŷ(u,i) − ŷ(u,j))` over `batch`, accumulating its gradient.
pub fn bpr_loss_into(
    batch: &[BprTriplet],
    state: &ModelState,
    graphs: &DualGraph,
    grad: &mut Gradients,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let forward = Forward::run(state, graphs)?;
    let mut user_up = Matrix::zeros(graphs.user_kg.entity_count(), forward.user_graph.stitched_len());
    let mut item_up = Matrix::zeros(graphs.item_kg.entity_count(), forward.item_graph.stitched_len());
    let mut total = 0.0;
    for (n, t) in batch.iter().enumerate() {
        let fu = final_representation(Node::User(t.user), graphs, &forward)?;
        let fi = final_representation(Node::Item(t.positive), graphs, &forward)?;
        let fj = final_representation(Node::Item(t.negative), graphs, &forward)?;
        let margin = predict_score(&fu, &fi) - predict_score(&fu, &fj);
        let loss = softplus(-margin);
        if !loss.is_finite() {
            return Err(Error::NumericFault(format!("BPR loss is {loss} at batch index {n}")));
        }
        total += loss;
        // d/d margin of softplus(−margin)
        let c = -sigmoid(-margin);
        let d_user: Vec<f64> = fi.iter().zip(&fj).map(|(a, b)| c * (a - b)).collect();
        let d_pos: Vec<f64> = fu.iter().map(|v| c * v).collect();
        let d_neg: Vec<f64> = fu.iter().map(|v| -c * v).collect();
        scatter_final_grad(Node::User(t.user), &d_user, graphs, &mut user_up, &mut item_up);
        scatter_final_grad(Node::Item(t.positive), &d_pos, graphs, &mut user_up, &mut item_up);
        scatter_final_grad(Node::Item(t.negative), &d_neg, graphs, &mut user_up, &mut item_up);
    }
    forward.user_graph.backward(
        &graphs.user_kg,
        &state.user_side.table,
        &state.user_side.stack,
        &user_up,
        &mut grad.user_side.table,
        &mut grad.user_side.stack,
    )?;
    forward.item_graph.backward(
        &graphs.item_kg,
        &state.item_side.table,
        &state.item_side.stack,
        &item_up,
        &mut grad.item_side.table,
        &mut grad.item_side.stack,
    )?;
    Ok(total)
}

pub fn bpr_loss(batch: &[BprTriplet], state: &ModelState, graphs: &DualGraph) -> Result<(f64, Gradients)> {
    let mut grad = Gradients::zeros_like(state);
    let loss = bpr_loss_into(batch, state, graphs, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub kg_user: f64,
    pub kg_item: f64,
    pub cf: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(kg_user: f64, kg_item: f64, cf: f64, reg: f64) -> Self {
        LossTerms {
            kg_user,
            kg_item,
            cf,
            reg,
            total: kg_user + kg_item + cf + reg,
        }
    }
}

/// `L_KG(user side) + L_KG(item side) + L_CF + λ‖Θ‖²` with its gradient.
pub fn total_loss_and_grad(
    state: &ModelState,
    graphs: &DualGraph,
    user_kg_batch: &TripleBatch,
    item_kg_batch: &TripleBatch,
    cf_batch: &[BprTriplet],
) -> Result<(LossTerms, Gradients)> {
    let mut grad = Gradients::zeros_like(state);
    let kg_user = kg_loss_into(user_kg_batch, &state.user_side.table, &mut grad.user_side.table)?;
    let kg_item = kg_loss_into(item_kg_batch, &state.item_side.table, &mut grad.item_side.table)?;
    let cf = bpr_loss_into(cf_batch, state, graphs, &mut grad)?;
    let lambda = state.hyper.lambda;
    let reg = lambda * state.squared_norm();
    add_l2_grad(state, &mut grad, lambda);
    Ok((LossTerms::new(kg_user, kg_item, cf, reg), grad))
}

pub fn total_loss(
    state: &ModelState,
    graphs: &DualGraph,
    user_kg_batch: &TripleBatch,
    item_kg_batch: &TripleBatch,
    cf_batch: &[BprTriplet],
) -> Result<LossTerms> {
    total_loss_and_grad(state, graphs, user_kg_batch, item_kg_batch, cf_batch).map(|(l, _)| l)
}

fn add_l2_grad(state: &ModelState, grad: &mut Gradients, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let params = state.blocks();
    let mut grads = grad.user_side.blocks_mut();
    grads.extend(grad.item_side.blocks_mut());
    for (g, p) in grads.into_iter().zip(params) {
        numeric::axpy(2.0 * lambda, p, g);
    }
}

/// Adam with per-block step counts, so blocks untouched by a phase keep
/// their moments and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<i32>,
}

impl Adam {
    pub fn new(lr: f64, block_sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: vec![0; block_sizes.len()],
        }
    }

    /// Updates blocks `first..first + params.len()`.
    pub fn step(&mut self, first: usize, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let idx = first + b;
            self.t[idx] += 1;
            let t = self.t[idx];
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch loss sums, with `total` the sum of the other four terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossTerms,
    pub validation_recall: Option<f64>,
    pub dropped_kg_triples: usize,
    pub skipped_cf_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// CSV with header `epoch,kg_user,kg_item,cf,reg,total,val_recall`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,kg_user,kg_item,cf,reg,total,val_recall\n");
        for r in &self.history {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                l.kg_user,
                l.kg_item,
                l.cf,
                l.reg,
                l.total,
                r.validation_recall.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        out
    }
}

fn kg_epoch(
    kg: &CollaborativeKG,
    side: &mut SideModel,
    adam: &mut Adam,
    first_block: usize,
    hyper: &Hyperparams,
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let mut order: Vec<Triple> = kg.triples().to_vec();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    let mut dropped = 0;
    for chunk in order.chunks(hyper.kg_batch_size) {
        let (batch, d) = sample_batch(chunk, kg, hyper.corrupt_heads, rng)?;
        dropped += d;
        if batch.is_empty() {
            continue;
        }
        let mut grad = side.table.zeros_like();
        total += kg_loss_into(&batch, &side.table, &mut grad)?;
        adam.step(first_block, side.table.blocks_mut(), grad.blocks());
    }
    Ok((total, dropped))
}

fn sample_negative_item(
    user_items: &[usize],
    graphs: &DualGraph,
    rng: &mut Rng,
) -> Option<usize> {
    let n = graphs.item_count();
    let valid = |j: usize| user_items.binary_search(&j).is_err() && graphs.is_warm(Node::Item(j));
    for _ in 0..4 * n {
        let j = rng.below(n);
        if valid(j) {
            return Some(j);
        }
    }
    let candidates: Vec<usize> = (0..n).filter(|&j| valid(j)).collect();
    (!candidates.is_empty()).then(|| candidates[rng.below(candidates.len())])
}

fn cf_epoch(
    state: &mut ModelState,
    graphs: &DualGraph,
    items_by_user: &[Vec<usize>],
    pairs: &mut [(usize, usize)],
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    rng.shuffle(pairs);
    let mut total = 0.0;
    let mut skipped = 0;
    for chunk in pairs.chunks(state.hyper.cf_batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &(u, i) in chunk {
            match sample_negative_item(&items_by_user[u], graphs, rng) {
                Some(j) => batch.push(BprTriplet {
                    user: u,
                    positive: i,
                    negative: j,
                }),
                None => skipped += 1,
            }
        }
        if batch.is_empty() {
            continue;
        }
        let mut grad = Gradients::zeros_like(state);
        total += bpr_loss_into(&batch, state, graphs, &mut grad)?;
        add_l2_grad(state, &mut grad, state.hyper.lambda);
        adam.step(0, state.blocks_mut(), grad.blocks());
    }
    Ok((total, skipped))
}

/// Trains `state` in place.
///
/// Each epoch runs one pass of TransR batches over the user-side graph, one
/// over the item-side graph, then one pass of BPR batches. With a
/// validation set, Recall@K is tracked after every epoch, training stops
/// after `patience` epochs without improvement, and the best state is kept.
/// On divergence `state` is reset to the last finite epoch and
/// [`Error::Diverged`] is returned.
pub fn train(
    state: &mut ModelState,
    graphs: &DualGraph,
    validation: Option<&[Vec<usize>]>,
) -> Result<TrainOutcome> {
    state.hyper.validate()?;
    state.check_compatible(graphs)?;
    let hyper = state.hyper.clone();
    let mut outcome = TrainOutcome {
        history: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    if hyper.epochs == 0 {
        return Ok(outcome);
    }

    let block_sizes: Vec<usize> = state.blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(hyper.lr, &block_sizes);
    let item_side_first = state.user_side.blocks().len();
    let items_by_user = graphs.items_by_user();
    let mut pairs: Vec<(usize, usize)> = graphs
        .bipartite
        .edges()
        .iter()
        .map(|e| (e.user as usize, e.item as usize))
        .filter(|&(u, i)| graphs.is_warm(Node::User(u)) && graphs.is_warm(Node::Item(i)))
        .collect();
    let mut rng = Rng::stream(hyper.seed, 1);

    let mut last_good = state.clone();
    let mut best: Option<(f64, ModelState)> = None;
    let mut bad_epochs = 0;
    for epoch in 1..=hyper.epochs {
        let step = (|| -> Result<EpochRecord> {
            let (kg_user, d1) = kg_epoch(&graphs.user_kg, &mut state.user_side, &mut adam, 0, &hyper, &mut rng)?;
            let (kg_item, d2) =
                kg_epoch(&graphs.item_kg, &mut state.item_side, &mut adam, item_side_first, &hyper, &mut rng)?;
            let (cf, skipped) = cf_epoch(state, graphs, &items_by_user, &mut pairs, &mut adam, &mut rng)?;
            state.ensure_finite()?;
            let reg = hyper.lambda * state.squared_norm();
            let losses = LossTerms::new(kg_user, kg_item, cf, reg);
            if !losses.total.is_finite() {
                return Err(Error::NumericFault(format!("total loss {}", losses.total)));
            }
            Ok(EpochRecord {
                epoch,
                losses,
                validation_recall: None,
                dropped_kg_triples: d1 + d2,
                skipped_cf_pairs: skipped,
            })
        })();
        let mut record = match step {
            Ok(r) => r,
            Err(Error::NumericFault(msg)) => {
                *state = last_good;
                return Err(Error::Diverged { epoch, message: msg });
            }
            Err(e) => return Err(e),
        };
        state.epoch += 1;

        if let Some(truth) = validation {
            let reps = Representations::compute(state, graphs)?;
            let ranker = ModelRanker::new(reps);
            let metrics = eval::evaluate(&ranker, &items_by_user, truth, hyper.top_k)?;
            record.validation_recall = Some(metrics.recall);
            if best.as_ref().is_none_or(|(r, _)| metrics.recall > *r) {
                best = Some((metrics.recall, state.clone()));
                outcome.best_epoch = Some(epoch);
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
            }
        }
        outcome.history.push(record);
        last_good = state.clone();
        if validation.is_some() && bad_epochs >= hyper.patience.max(1) {
            outcome.stopped_early = epoch < hyper.epochs;
            break;
        }
    }
    if let Some((_, best_state)) = best {
        *state = best_state;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InteractionRecord;

    fn toy_graphs() -> DualGraph {
        let records = vec![
            InteractionRecord::new("u1", "i1", ["view"]),
            InteractionRecord::new("u1", "i2", ["view", "like"]),
            InteractionRecord::new("u2", "i2", ["view"]),
            InteractionRecord::new("u2", "i3", ["view"]),
        ];
        let bg = BipartiteGraph::build(&records).unwrap();
        DualGraph::build(
            bg,
            &[AttributeTriple::new("u1", "age", "young")],
            &[AttributeTriple::new("i1", "genre", "g1"), AttributeTriple::new("i3", "genre", "g1")],
            &AlignmentMap::empty(),
            IdOrder::FirstSeen,
        )
        .unwrap()
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            entity_dim: 4,
            relation_dim: 3,
            layer_dims: vec![3, 2],
            init_std: 0.3,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn resize_dims() {
        assert_eq!(resize_layer_dims(&[32, 16], 1), vec![32]);
        assert_eq!(resize_layer_dims(&[32, 16], 4), vec![32, 16, 16, 16]);
    }

    #[test]
    fn default_stitched_length_is_112_per_graph() {
        let h = Hyperparams::default();
        assert_eq!(h.stack_dims().iter().sum::<usize>(), 112);
    }

    #[test]
    fn final_representation_concatenates_both_graphs() {
        let graphs = toy_graphs();
        let state = ModelState::init(&graphs, &small_hyper()).unwrap();
        let fwd = Forward::run(&state, &graphs).unwrap();
        let f = final_representation(Node::User(0), &graphs, &fwd).unwrap();
        assert_eq!(f.len(), 2 * 9);
        let mut expected = fwd.user_graph.stitched(graphs.user_kg.user_entity(0).unwrap());
        expected.extend(fwd.item_graph.stitched(graphs.item_kg.user_entity(0).unwrap()));
        assert_eq!(f, expected);
    }

    #[test]
    fn zero_representations_give_zero_vector() {
        let graphs = toy_graphs();
        let mut state = ModelState::init(&graphs, &small_hyper()).unwrap();
        for b in state.blocks_mut() {
            b.fill(0.0);
        }
        let fwd = Forward::run(&state, &graphs).unwrap();
        let f = final_representation(Node::Item(1), &graphs, &fwd).unwrap();
        assert_eq!(f, vec![0.0; 18]);
    }

    #[test]
    fn cold_item_is_an_error_strictly_and_zero_leniently() {
        let records = vec![InteractionRecord::new("u1", "i1", ["view"]), InteractionRecord::new("u1", "i2", ["view"])];
        let full = BipartiteGraph::build(&records).unwrap();
        let train = BipartiteGraph::build_with_vocabulary(&records[..1], full.users().clone(), full.items().clone()).unwrap();
        let graphs = DualGraph::build(train, &[], &[], &AlignmentMap::empty(), IdOrder::FirstSeen).unwrap();
        let state = ModelState::init(&graphs, &small_hyper()).unwrap();
        let fwd = Forward::run(&state, &graphs).unwrap();
        assert!(matches!(
            final_representation(Node::Item(1), &graphs, &fwd),
            Err(Error::ColdEntity(_))
        ));
        let reps = Representations::from_forward(&graphs, &fwd);
        assert!(reps.item.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_score_cases() {
        assert_eq!(predict_score(&[1.0, 2.0], &[0.0, 0.0]), 0.0);
        assert_eq!(predict_score(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn bpr_equal_scores_is_ln2() {
        let graphs = toy_graphs();
        let state = ModelState::init(&graphs, &small_hyper()).unwrap();
        let batch = vec![
            BprTriplet { user: 0, positive: 1, negative: 1 },
            BprTriplet { user: 1, positive: 2, negative: 2 },
        ];
        let (loss, _) = bpr_loss(&batch, &state, &graphs).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let graphs = toy_graphs();
        let mut state = ModelState::init(&graphs, &small_hyper()).unwrap();
        let before = state.clone();
        let sizes: Vec<usize> = state.blocks().iter().map(|b| b.len()).collect();
        let mut adam = Adam::new(0.0, &sizes);
        let batch = vec![BprTriplet { user: 0, positive: 0, negative: 2 }];
        let (_, grad) = bpr_loss(&batch, &state, &graphs).unwrap();
        adam.step(0, state.blocks_mut(), grad.blocks());
        let a: Vec<u64> = before.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = state.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_leave_state_unchanged() {
        let graphs = toy_graphs();
        let hyper = Hyperparams { epochs: 0, ..small_hyper() };
        let mut state = ModelState::init(&graphs, &hyper).unwrap();
        let before = state.clone();
        let out = train(&mut state, &graphs, None).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(state, before);
    }

    #[test]
    fn hyperparams_set_round_trip() {
        let mut h = Hyperparams::default();
        h.lr = 0.01;
        h.layer_dims = vec![8, 4, 4];
        h.attention = AttentionForm::Tail;
        let mut back = Hyperparams::default();
        for (k, v) in h.to_pairs() {
            assert!(back.set(k, &v).unwrap(), "{k}");
        }
        assert_eq!(back, h);
        assert!(!back.set("nope", "1").unwrap());
        assert!(back.set("lr", "abc").is_err());
    }

    #[test]
    fn validate_rejects_bad_values() {
        let bad = [
            Hyperparams { lr: -1.0, ..Hyperparams::default() },
            Hyperparams { lambda: -1.0, ..Hyperparams::default() },
            Hyperparams { top_k: 0, ..Hyperparams::default() },
            Hyperparams { leaky_slope: 1.5, ..Hyperparams::default() },
            Hyperparams { attention: AttentionForm::Tail, ..Hyperparams::default() },
        ];
        for h in bad {
            assert!(h.validate().is_err(), "{h:?}");
        }
    }
}

//! Attentive multi-layer propagation over one collaborative knowledge graph.
//!
//! Layer `l` maps every entity's layer-`l−1` vector `x_h` to
//!
//! ```text
//! π'(h,r,t) = (W_r x_t)ᵀ tanh(W_r x_h + e_r)
//! π(h,·,·)  = softmax over h's out-neighbors
//! m_h       = Σ π(h,r,t) x_t                      (0 when h has no neighbors)
//! y_h       = LeakyReLU(W₁(x_h + m_h)) + LeakyReLU(W₂(x_h ⊙ m_h))
//! ```
//!
//! with `W₂ = W₁` unless the stack carries separate product weights. All
//! layers read the previous layer only, so updates are synchronous. When a
//! layer's input is narrower than the entity space, `W_r` acts through its
//! leading columns. An entity's final representation is the concatenation
//! of its vectors from every layer, starting with the TransR embedding.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{CollaborativeKG, EntityId, RelationId};
use crate::numeric::{
    self, dot, gaussian_init, leaky_relu, leaky_relu_grad, softmax_in_place, Matrix, Rng,
};
use crate::transr::EmbeddingTable;

/// Which vector is added inside the attention `tanh`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AttentionForm {
    /// `tanh(W_r x_h + e_r)`.
    #[default]
    Relation,
    /// `tanh(W_r x_h + x_t)`; only defined when every layer input has the
    /// relation dimension.
    Tail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    dims: Vec<usize>,
    pub w1: Vec<Matrix>,
    pub w2: Option<Vec<Matrix>>,
    pub slope: f64,
    pub attention: AttentionForm,
}

impl LayerStack {
    /// `dims` holds `d₀..d_L`; `d₀` must equal the entity dimension.
    pub fn zeros(dims: Vec<usize>, shared_weights: bool, slope: f64, attention: AttentionForm) -> Result<Self> {
        check_dims(&dims, slope)?;
        let w1: Vec<Matrix> = dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let w2 = (!shared_weights).then(|| w1.clone());
        Ok(LayerStack {
            dims,
            w1,
            w2,
            slope,
            attention,
        })
    }

    pub fn gaussian(
        dims: Vec<usize>,
        shared_weights: bool,
        slope: f64,
        attention: AttentionForm,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_dims(&dims, slope)?;
        let mut w1 = Vec::with_capacity(dims.len() - 1);
        let mut w2 = Vec::new();
        for w in dims.windows(2) {
            w1.push(gaussian_init(w[1], w[0], std, rng)?);
            if !shared_weights {
                w2.push(gaussian_init(w[1], w[0], std, rng)?);
            }
        }
        Ok(LayerStack {
            dims,
            w1,
            w2: (!shared_weights).then_some(w2),
            slope,
            attention,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn shared_weights(&self) -> bool {
        self.w2.is_none()
    }

    pub fn stitched_len(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Product-term weights of layer `l` (0-based).
    pub fn product_weights(&self, l: usize) -> &Matrix {
        match &self.w2 {
            Some(w2) => &w2[l],
            None => &self.w1[l],
        }
    }

    /// Per layer: `W₁`, then `W₂` when present.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in 0..self.w1.len() {
            out.push(self.w1[l].as_slice());
            if let Some(w2) = &self.w2 {
                out.push(w2[l].as_slice());
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        match &mut self.w2 {
            Some(w2) => {
                for (a, b) in self.w1.iter_mut().zip(w2.iter_mut()) {
                    out.push(a.as_mut_slice());
                    out.push(b.as_mut_slice());
                }
            }
            None => out.extend(self.w1.iter_mut().map(Matrix::as_mut_slice)),
        }
        out
    }

    /// Checks that the stack fits `table`.
    pub fn validate_for(&self, table: &EmbeddingTable) -> Result<()> {
        if self.dims[0] != table.entity_dim() {
            return Err(Error::Shape(format!(
                "layer input dim {} differs from entity dim {}",
                self.dims[0],
                table.entity_dim()
            )));
        }
        if self.attention == AttentionForm::Tail {
            let k = table.relation_dim();
            if let Some(&bad) = self.dims[..self.dims.len() - 1].iter().find(|&&d| d != k) {
                return Err(Error::Config(format!(
                    "tail-form attention needs every layer input to have the relation dim {k}, found {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (l, w) in self.w1.iter().enumerate() {
            w.ensure_finite(&format!("W1 of layer {}", l + 1))?;
        }
        if let Some(w2) = &self.w2 {
            for (l, w) in w2.iter().enumerate() {
                w.ensure_finite(&format!("W2 of layer {}", l + 1))?;
            }
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize], slope: f64) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config("a layer stack needs at least one layer".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("layer dims must be positive: {dims:?}")));
    }
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Config(format!("LeakyReLU slope must lie in (0, 1), got {slope}")));
    }
    Ok(())
}

/// Attention logit of one triple on the TransR embeddings.
pub fn attention_logit(h: EntityId, r: RelationId, t: EntityId, table: &EmbeddingTable) -> f64 {
    let w = &table.projection[r.index()];
    let d = table.entity_dim();
    let k = table.relation_dim();
    let mut wh = vec![0.0; k];
    let mut wt = vec![0.0; k];
    numeric::matvec_prefix(w.as_slice(), d, table.entity.row(h.index()), &mut wh);
    numeric::matvec_prefix(w.as_slice(), d, table.entity.row(t.index()), &mut wt);
    wh.iter()
        .zip(table.relation.row(r.index()))
        .zip(&wt)
        .map(|((a, b), c)| c * (a + b).tanh())
        .sum()
}

/// Softmax of the attention logits over `h`'s neighbors, in neighbor order.
pub fn attention_weights(h: EntityId, kg: &CollaborativeKG, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut logits: Vec<f64> = kg
        .neighbors(h)?
        .iter()
        .map(|&(r, t)| attention_logit(h, r, t, table))
        .collect();
    if !logits.is_empty() {
        softmax_in_place(&mut logits);
    }
    Ok(logits)
}

/// Attention-weighted sum of `h`'s neighbor embeddings; zero when isolated.
pub fn neighborhood_message(h: EntityId, kg: &CollaborativeKG, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let weights = attention_weights(h, kg, table)?;
    let mut m = vec![0.0; table.entity_dim()];
    for (&(_, t), &w) in kg.neighbors(h)?.iter().zip(&weights) {
        numeric::axpy(w, table.entity.row(t.index()), &mut m);
    }
    Ok(m)
}

/// `LeakyReLU(W₁(e_h + e_N)) + LeakyReLU(W₂(e_h ⊙ e_N))`, `W₂ = W₁` when not given.
pub fn bi_interaction_aggregate(
    e_h: &[f64],
    e_n: &[f64],
    w1: &Matrix,
    w2: Option<&Matrix>,
    slope: f64,
) -> Result<Vec<f64>> {
    if e_h.len() != e_n.len() {
        return Err(Error::Shape(format!(
            "entity vector of length {} with message of length {}",
            e_h.len(),
            e_n.len()
        )));
    }
    let w2 = w2.unwrap_or(w1);
    if w2.shape() != w1.shape() {
        return Err(Error::Shape("aggregator weight shapes differ".into()));
    }
    let sum: Vec<f64> = e_h.iter().zip(e_n).map(|(a, b)| a + b).collect();
    let prod: Vec<f64> = e_h.iter().zip(e_n).map(|(a, b)| a * b).collect();
    let u = w1.matvec(&sum)?;
    let v = w2.matvec(&prod)?;
    Ok(u.iter()
        .zip(&v)
        .map(|(&a, &b)| leaky_relu(a, slope) + leaky_relu(b, slope))
        .collect())
}

/// Unique `(entity, relation)` pairs whose projections a layer needs.
#[derive(Debug, Clone)]
struct ProjectionPlan {
    head_slots: Vec<(EntityId, RelationId)>,
    tail_slots: Vec<(EntityId, RelationId)>,
    /// Per adjacency position.
    head_slot: Vec<u32>,
    tail_slot: Vec<u32>,
}

impl ProjectionPlan {
    fn new(kg: &CollaborativeKG) -> Self {
        let mut head_index: HashMap<(EntityId, RelationId), u32> = HashMap::new();
        let mut tail_index: HashMap<(EntityId, RelationId), u32> = HashMap::new();
        let mut plan = ProjectionPlan {
            head_slots: Vec::new(),
            tail_slots: Vec::new(),
            head_slot: Vec::with_capacity(kg.adjacency().len()),
            tail_slot: Vec::with_capacity(kg.adjacency().len()),
        };
        for h in 0..kg.entity_count() {
            let head = EntityId(h as u32);
            for &(r, t) in kg.neighbors_unchecked(h) {
                let hs = *head_index.entry((head, r)).or_insert_with(|| {
                    plan.head_slots.push((head, r));
                    plan.head_slots.len() as u32 - 1
                });
                let ts = *tail_index.entry((t, r)).or_insert_with(|| {
                    plan.tail_slots.push((t, r));
                    plan.tail_slots.len() as u32 - 1
                });
                plan.head_slot.push(hs);
                plan.tail_slot.push(ts);
            }
        }
        plan
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// `W_r x_t` per tail slot, `k` values each.
    tail_proj: Vec<f64>,
    /// `tanh(z)` per head slot (relation form) or adjacency position (tail form).
    z_tanh: Vec<f64>,
    /// Attention per adjacency position.
    attention: Vec<f64>,
    message: Matrix,
    pre_sum: Matrix,
    pre_prod: Matrix,
}

/// Forward pass of every layer with the intermediates needed for backward.
#[derive(Debug, Clone)]
pub struct Propagation {
    layers: Vec<Matrix>,
    caches: Vec<LayerCache>,
    plan: ProjectionPlan,
    offsets: Vec<usize>,
}

struct HeadOut {
    attention: Vec<f64>,
    message: Vec<f64>,
    pre_sum: Vec<f64>,
    pre_prod: Vec<f64>,
    out: Vec<f64>,
}

/// Runs all layers of `stack` over `kg` starting from the TransR embeddings.
pub fn propagate(kg: &CollaborativeKG, table: &EmbeddingTable, stack: &LayerStack) -> Result<Propagation> {
    if kg.entity_count() != table.entity_count() || kg.relation_count() != table.relation_count() {
        return Err(Error::Shape(format!(
            "graph has {} entities / {} relations, table {} / {}",
            kg.entity_count(),
            kg.relation_count(),
            table.entity_count(),
            table.relation_count()
        )));
    }
    stack.validate_for(table)?;
    let plan = ProjectionPlan::new(kg);
    let n = kg.entity_count();
    let offsets: Vec<usize> = (0..=n)
        .map(|h| if h < n { kg.neighbor_offset(h) } else { kg.adjacency().len() })
        .collect();
    let mut layers = vec![table.entity.clone()];
    let mut caches = Vec::with_capacity(stack.layers());
    for l in 0..stack.layers() {
        let (out, cache) = layer_forward(kg, table, stack, l, &layers[l], &plan, &offsets);
        layers.push(out);
        caches.push(cache);
    }
    Ok(Propagation {
        layers,
        caches,
        plan,
        offsets,
    })
}

fn project_slots(
    slots: &[(EntityId, RelationId)],
    table: &EmbeddingTable,
    x: &Matrix,
) -> Vec<f64> {
    let k = table.relation_dim();
    let d = table.entity_dim();
    let mut out = vec![0.0; slots.len() * k];
    if k == 0 {
        return out;
    }
    out.par_chunks_mut(k)
        .zip(slots.par_iter())
        .for_each(|(o, &(e, r))| {
            numeric::matvec_prefix(table.projection[r.index()].as_slice(), d, x.row(e.index()), o);
        });
    out
}

fn layer_forward(
    kg: &CollaborativeKG,
    table: &EmbeddingTable,
    stack: &LayerStack,
    l: usize,
    x: &Matrix,
    plan: &ProjectionPlan,
    offsets: &[usize],
) -> (Matrix, LayerCache) {
    let n = x.rows();
    let c = x.cols();
    let k = table.relation_dim();
    let d_out = stack.dims[l + 1];
    let w1 = &stack.w1[l];
    let w2 = stack.product_weights(l);
    let slope = stack.slope;
    let adjacency = kg.adjacency();

    let head_proj = project_slots(&plan.head_slots, table, x);
    let tail_proj = project_slots(&plan.tail_slots, table, x);
    let z_tanh: Vec<f64> = match stack.attention {
        AttentionForm::Relation => {
            let mut z = vec![0.0; plan.head_slots.len() * k];
            for (s, &(_, r)) in plan.head_slots.iter().enumerate() {
                let er = table.relation.row(r.index());
                for i in 0..k {
                    z[s * k + i] = (head_proj[s * k + i] + er[i]).tanh();
                }
            }
            z
        }
        AttentionForm::Tail => {
            let mut z = vec![0.0; adjacency.len() * k];
            for (j, &(_, t)) in adjacency.iter().enumerate() {
                let hs = plan.head_slot[j] as usize;
                let xt = x.row(t.index());
                for i in 0..k {
                    z[j * k + i] = (head_proj[hs * k + i] + xt[i]).tanh();
                }
            }
            z
        }
    };
    let z_index = |j: usize| -> usize {
        match stack.attention {
            AttentionForm::Relation => plan.head_slot[j] as usize,
            AttentionForm::Tail => j,
        }
    };

    let heads: Vec<HeadOut> = (0..n)
        .into_par_iter()
        .map(|h| {
            let range = offsets[h]..offsets[h + 1];
            let mut attention: Vec<f64> = range
                .clone()
                .map(|j| {
                    let ts = plan.tail_slot[j] as usize;
                    let zs = z_index(j);
                    dot(&tail_proj[ts * k..(ts + 1) * k], &z_tanh[zs * k..(zs + 1) * k])
                })
                .collect();
            let mut message = vec![0.0; c];
            if !attention.is_empty() {
                softmax_in_place(&mut attention);
                for (j, &a) in range.zip(&attention) {
                    numeric::axpy(a, x.row(adjacency[j].1.index()), &mut message);
                }
            }
            let xh = x.row(h);
            let sum: Vec<f64> = xh.iter().zip(&message).map(|(a, b)| a + b).collect();
            let prod: Vec<f64> = xh.iter().zip(&message).map(|(a, b)| a * b).collect();
            let mut pre_sum = vec![0.0; d_out];
            let mut pre_prod = vec![0.0; d_out];
            numeric::matvec_prefix(w1.as_slice(), c, &sum, &mut pre_sum);
            numeric::matvec_prefix(w2.as_slice(), c, &prod, &mut pre_prod);
            let out = pre_sum
                .iter()
                .zip(&pre_prod)
                .map(|(&a, &b)| leaky_relu(a, slope) + leaky_relu(b, slope))
                .collect();
            HeadOut {
                attention,
                message,
                pre_sum,
                pre_prod,
                out,
            }
        })
        .collect();

    let mut out = Matrix::zeros(n, d_out);
    let mut cache = LayerCache {
        tail_proj,
        z_tanh,
        attention: Vec::with_capacity(adjacency.len()),
        message: Matrix::zeros(n, c),
        pre_sum: Matrix::zeros(n, d_out),
        pre_prod: Matrix::zeros(n, d_out),
    };
    for (h, ho) in heads.into_iter().enumerate() {
        cache.attention.extend_from_slice(&ho.attention);
        cache.message.row_mut(h).copy_from_slice(&ho.message);
        cache.pre_sum.row_mut(h).copy_from_slice(&ho.pre_sum);
        cache.pre_prod.row_mut(h).copy_from_slice(&ho.pre_prod);
        out.row_mut(h).copy_from_slice(&ho.out);
    }
    (out, cache)
}

impl Propagation {
    pub fn layer_count(&self) -> usize {
        self.caches.len()
    }

    /// Entity vectors after layer `l` (`l = 0` is the TransR embedding).
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn entity_count(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn stitched_len(&self) -> usize {
        self.layers.iter().map(Matrix::cols).sum()
    }

    /// Concatenation of `e`'s vectors from every layer.
    pub fn stitched(&self, e: EntityId) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stitched_len());
        self.stitched_into(e, &mut out);
        out
    }

    pub(crate) fn stitched_into(&self, e: EntityId, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.row(e.index()));
        }
    }

    /// Attention weights used by layer `l` (1-based) for `h`'s neighbors.
    pub fn attention(&self, l: usize, h: EntityId) -> &[f64] {
        let range = self.offsets[h.index()]..self.offsets[h.index() + 1];
        &self.caches[l - 1].attention[range]
    }

    /// Back-propagates `upstream` (one row of stitched gradient per entity)
    /// and accumulates parameter gradients into `grad_table` / `grad_stack`.
    pub fn backward(
        &self,
        kg: &CollaborativeKG,
        table: &EmbeddingTable,
        stack: &LayerStack,
        upstream: &Matrix,
        grad_table: &mut EmbeddingTable,
        grad_stack: &mut LayerStack,
    ) -> Result<()> {
        let n = self.entity_count();
        if upstream.shape() != (n, self.stitched_len()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} for {n} entities with stitched length {}",
                upstream.shape(),
                self.stitched_len()
            )));
        }
        let block_starts: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, m| {
                let s = *acc;
                *acc += m.cols();
                Some(s)
            })
            .collect();
        let slice_block = |l: usize| -> Matrix {
            let width = self.layers[l].cols();
            let mut m = Matrix::zeros(n, width);
            for e in 0..n {
                let row = &upstream.row(e)[block_starts[l]..block_starts[l] + width];
                m.row_mut(e).copy_from_slice(row);
            }
            m
        };

        let mut d_out = slice_block(self.layer_count());
        for l in (0..self.layer_count()).rev() {
            let mut d_in = slice_block(l);
            self.layer_backward(kg, table, stack, l, &d_out, &mut d_in, grad_table, grad_stack);
            d_out = d_in;
        }
        for (g, d) in grad_table
            .entity
            .as_mut_slice()
            .iter_mut()
            .zip(d_out.as_slice())
        {
            *g += d;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        kg: &CollaborativeKG,
        table: &EmbeddingTable,
        stack: &LayerStack,
        l: usize,
        d_y: &Matrix,
        d_x: &mut Matrix,
        grad_table: &mut EmbeddingTable,
        grad_stack: &mut LayerStack,
    ) {
        let x = &self.layers[l];
        let cache = &self.caches[l];
        let plan = &self.plan;
        let adjacency = kg.adjacency();
        let c = x.cols();
        let k = table.relation_dim();
        let d = table.entity_dim();
        let d_out = d_y.cols();
        let slope = stack.slope;
        let w1 = &stack.w1[l];
        let w2 = stack.product_weights(l);
        let tail_form = stack.attention == AttentionForm::Tail;

        let mut d_head_proj = vec![0.0; plan.head_slots.len() * k];
        let mut d_tail_proj = vec![0.0; plan.tail_slots.len() * k];
        let mut d_z = vec![0.0; cache.z_tanh.len()];
        let mut du = vec![0.0; d_out];
        let mut dv = vec![0.0; d_out];
        let mut ds = vec![0.0; c];
        let mut dp = vec![0.0; c];
        let mut dm = vec![0.0; c];
        let mut sum = vec![0.0; c];
        let mut prod = vec![0.0; c];

        for h in 0..x.rows() {
            let dy = d_y.row(h);
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            let xh = x.row(h);
            let mh = cache.message.row(h);
            for i in 0..d_out {
                du[i] = dy[i] * leaky_relu_grad(cache.pre_sum.get(h, i), slope);
                dv[i] = dy[i] * leaky_relu_grad(cache.pre_prod.get(h, i), slope);
            }
            for i in 0..c {
                sum[i] = xh[i] + mh[i];
                prod[i] = xh[i] * mh[i];
            }
            // Weight gradients; W₂ aliases W₁ when shared.
            numeric::add_outer_prefix(grad_stack.w1[l].as_mut_slice(), c, 1.0, &du, &sum);
            let gw2 = match &mut grad_stack.w2 {
                Some(w2) => &mut w2[l],
                None => &mut grad_stack.w1[l],
            };
            numeric::add_outer_prefix(gw2.as_mut_slice(), c, 1.0, &dv, &prod);

            ds.fill(0.0);
            dp.fill(0.0);
            numeric::matvec_t_prefix_acc(w1.as_slice(), c, &du, &mut ds);
            numeric::matvec_t_prefix_acc(w2.as_slice(), c, &dv, &mut dp);
            {
                let dxh = d_x.row_mut(h);
                for i in 0..c {
                    dxh[i] += ds[i] + dp[i] * mh[i];
                    dm[i] = ds[i] + dp[i] * xh[i];
                }
            }

            let range = self.offsets[h]..self.offsets[h + 1];
            if range.is_empty() {
                continue;
            }
            let attn = &cache.attention[range.clone()];
            let mut d_attn = Vec::with_capacity(attn.len());
            for (j, &a) in range.clone().zip(attn) {
                let t = adjacency[j].1.index();
                d_attn.push(dot(&dm, x.row(t)));
                numeric::axpy(a, &dm, d_x.row_mut(t));
            }
            let mean: f64 = attn.iter().zip(&d_attn).map(|(a, g)| a * g).sum();
            for ((j, &a), &g) in range.zip(attn).zip(&d_attn) {
                let d_logit = a * (g - mean);
                if d_logit == 0.0 {
                    continue;
                }
                let ts = plan.tail_slot[j] as usize;
                let zs = if tail_form { j } else { plan.head_slot[j] as usize };
                let zt = &cache.z_tanh[zs * k..(zs + 1) * k];
                let bt = &cache.tail_proj[ts * k..(ts + 1) * k];
                numeric::axpy(d_logit, zt, &mut d_tail_proj[ts * k..(ts + 1) * k]);
                let dzs = &mut d_z[zs * k..(zs + 1) * k];
                for i in 0..k {
                    dzs[i] += d_logit * bt[i] * (1.0 - zt[i] * zt[i]);
                }
            }
        }

        // Route dz to the head projection and to e_r (or x_t in tail form).
        if tail_form {
            for (j, &(_, t)) in adjacency.iter().enumerate() {
                let dz = &d_z[j * k..(j + 1) * k];
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let hs = plan.head_slot[j] as usize;
                numeric::axpy(1.0, dz, &mut d_head_proj[hs * k..(hs + 1) * k]);
                numeric::axpy(1.0, dz, &mut d_x.row_mut(t.index())[..k]);
            }
        } else {
            for (s, &(_, r)) in plan.head_slots.iter().enumerate() {
                let dz = &d_z[s * k..(s + 1) * k];
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                numeric::axpy(1.0, dz, &mut d_head_proj[s * k..(s + 1) * k]);
                numeric::axpy(1.0, dz, grad_table.relation.row_mut(r.index()));
            }
        }

        for (slots, d_proj) in [(&plan.head_slots, &d_head_proj), (&plan.tail_slots, &d_tail_proj)] {
            for (s, &(e, r)) in slots.iter().enumerate() {
                let g = &d_proj[s * k..(s + 1) * k];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let xe = x.row(e.index());
                numeric::add_outer_prefix(grad_table.projection[r.index()].as_mut_slice(), d, 1.0, g, xe);
                numeric::matvec_t_prefix_acc(
                    table.projection[r.index()].as_slice(),
                    d,
                    g,
                    d_x.row_mut(e.index()),
                );
            }
        }
    }
}

//! TransR encoding of one collaborative knowledge graph.
//!
//! Entities live in `R^d`, relations in `R^k`, and each relation owns a
//! `k×d` projection `W_r`. The energy of a triple is
//!
//! ```text
//! g(h, r, t) = ‖W_r e_h + e_r − W_r e_t‖²
//! ```
//!
//! and the encoding loss over pairs of a positive triple and a corrupted one
//! is `Σ −ln σ(g(neg) − g(pos))`.

use crate::error::{Error, Result};
use crate::graph::{CollaborativeKG, EntityId, RelationId, Triple};
use crate::numeric::{self, gaussian_init, sigmoid, softplus, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub entity: Matrix,
    pub relation: Matrix,
    pub projection: Vec<Matrix>,
}

impl EmbeddingTable {
    pub fn zeros(entities: usize, relations: usize, entity_dim: usize, relation_dim: usize) -> Self {
        EmbeddingTable {
            entity: Matrix::zeros(entities, entity_dim),
            relation: Matrix::zeros(relations, relation_dim),
            projection: (0..relations)
                .map(|_| Matrix::zeros(relation_dim, entity_dim))
                .collect(),
        }
    }

    pub fn gaussian(
        entities: usize,
        relations: usize,
        entity_dim: usize,
        relation_dim: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let entity = gaussian_init(entities, entity_dim, std, rng)?;
        let relation = gaussian_init(relations, relation_dim, std, rng)?;
        let projection = (0..relations)
            .map(|_| gaussian_init(relation_dim, entity_dim, std, rng))
            .collect::<Result<_>>()?;
        Ok(EmbeddingTable {
            entity,
            relation,
            projection,
        })
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingTable::zeros(
            self.entity_count(),
            self.relation_count(),
            self.entity_dim(),
            self.relation_dim(),
        )
    }

    pub fn entity_count(&self) -> usize {
        self.entity.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relation.rows()
    }

    pub fn entity_dim(&self) -> usize {
        self.entity.cols()
    }

    pub fn relation_dim(&self) -> usize {
        self.relation.cols()
    }

    /// Parameter blocks in checkpoint order: entities, relations, projections.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = vec![self.entity.as_slice(), self.relation.as_slice()];
        out.extend(self.projection.iter().map(Matrix::as_slice));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.entity.as_mut_slice(), self.relation.as_mut_slice()];
        out.extend(self.projection.iter_mut().map(Matrix::as_mut_slice));
        out
    }

    pub fn ensure_finite(&self) -> Result<()> {
        self.entity.ensure_finite("entity embeddings")?;
        self.relation.ensure_finite("relation embeddings")?;
        for (r, p) in self.projection.iter().enumerate() {
            p.ensure_finite(&format!("projection of relation {r}"))?;
        }
        Ok(())
    }
}

/// `W_r · e`, the entity vector seen from relation `r`'s space.
pub fn project(e: &[f64], r: RelationId, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let w = table.projection.get(r.index()).ok_or_else(|| {
        Error::Index(format!(
            "relation {} out of range for {} relations",
            r.0,
            table.relation_count()
        ))
    })?;
    w.matvec(e)
}

/// Residual `W_r (e_h − e_t) + e_r`.
fn residual(h: EntityId, r: RelationId, t: EntityId, table: &EmbeddingTable) -> (Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = table
        .entity
        .row(h.index())
        .iter()
        .zip(table.entity.row(t.index()))
        .map(|(a, b)| a - b)
        .collect();
    let w = &table.projection[r.index()];
    let mut delta = vec![0.0; table.relation_dim()];
    numeric::matvec_prefix(w.as_slice(), w.cols(), &diff, &mut delta);
    for (d, er) in delta.iter_mut().zip(table.relation.row(r.index())) {
        *d += er;
    }
    (delta, diff)
}

/// TransR energy; lower is more plausible.
pub fn triple_energy(h: EntityId, r: RelationId, t: EntityId, table: &EmbeddingTable) -> f64 {
    let (delta, _) = residual(h, r, t, table);
    delta.iter().map(|x| x * x).sum()
}

/// Positive triples paired with one corrupted triple each.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
}

impl TripleBatch {
    pub fn new(positives: Vec<Triple>, negatives: Vec<Triple>) -> Result<Self> {
        if positives.len() != negatives.len() {
            return Err(Error::Shape(format!(
                "{} positives but {} negatives",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(TripleBatch {
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Uniform draw among entities `t′ ≠ h` with `(h, r, t′)` absent from `kg`.
///
/// Rejection sampling for `4·N` draws, then an exact scan of the remaining
/// candidates; fails only when no valid tail exists.
pub fn sample_negative_tail(
    h: EntityId,
    r: RelationId,
    kg: &CollaborativeKG,
    rng: &mut Rng,
) -> Result<EntityId> {
    sample_excluding(kg.entity_count(), rng, |t| t != h && !kg.contains(h, r, t)).ok_or(
        Error::SamplingExhausted {
            head: h.0,
            relation: r.0,
            attempts: 4 * kg.entity_count(),
        },
    )
}

/// Head-corruption counterpart of [`sample_negative_tail`].
pub fn sample_negative_head(
    r: RelationId,
    t: EntityId,
    kg: &CollaborativeKG,
    rng: &mut Rng,
) -> Result<EntityId> {
    sample_excluding(kg.entity_count(), rng, |h| h != t && !kg.contains(h, r, t)).ok_or(
        Error::SamplingExhausted {
            head: t.0,
            relation: r.0,
            attempts: 4 * kg.entity_count(),
        },
    )
}

fn sample_excluding(n: usize, rng: &mut Rng, valid: impl Fn(EntityId) -> bool) -> Option<EntityId> {
    if n == 0 {
        return None;
    }
    for _ in 0..4 * n {
        let e = EntityId(rng.below(n) as u32);
        if valid(e) {
            return Some(e);
        }
    }
    let candidates: Vec<EntityId> = (0..n as u32).map(EntityId).filter(|&e| valid(e)).collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.below(candidates.len())])
    }
}

/// Builds a batch for `positives`, corrupting tails (or heads when
/// `corrupt_heads`). Positives with no valid corruption are dropped; the
/// number dropped is returned alongside the batch.
pub fn sample_batch(
    positives: &[Triple],
    kg: &CollaborativeKG,
    corrupt_heads: bool,
    rng: &mut Rng,
) -> Result<(TripleBatch, usize)> {
    let mut pos = Vec::with_capacity(positives.len());
    let mut neg = Vec::with_capacity(positives.len());
    let mut dropped = 0;
    for &t in positives {
        let sampled = if corrupt_heads {
            sample_negative_head(t.relation, t.tail, kg, rng).map(|h| Triple { head: h, ..t })
        } else {
            sample_negative_tail(t.head, t.relation, kg, rng).map(|tail| Triple { tail, ..t })
        };
        match sampled {
            Ok(n) => {
                pos.push(t);
                neg.push(n);
            }
            Err(Error::SamplingExhausted { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((TripleBatch::new(pos, neg)?, dropped))
}

/// Adds `scale · ∂g/∂θ` for one triple into `grad`.
fn accumulate_energy_grad(
    t: &Triple,
    scale: f64,
    table: &EmbeddingTable,
    grad: &mut EmbeddingTable,
) {
    let (delta, diff) = residual(t.head, t.relation, t.tail, table);
    let w = &table.projection[t.relation.index()];
    let d = table.entity_dim();
    let two_s = 2.0 * scale;
    // ∂g/∂e_r = 2δ
    numeric::axpy(two_s, &delta, grad.relation.row_mut(t.relation.index()));
    // ∂g/∂W_r = 2δ (e_h − e_t)ᵀ
    numeric::add_outer_prefix(
        grad.projection[t.relation.index()].as_mut_slice(),
        d,
        two_s,
        &delta,
        &diff,
    );
    // ∂g/∂e_h = 2W_rᵀδ = −∂g/∂e_t
    let mut back = vec![0.0; d];
    numeric::matvec_t_prefix_acc(w.as_slice(), d, &delta, &mut back);
    numeric::axpy(two_s, &back, grad.entity.row_mut(t.head.index()));
    numeric::axpy(-two_s, &back, grad.entity.row_mut(t.tail.index()));
}

/// Encoding loss of `batch`, accumulating its gradient into `grad`.
pub fn kg_loss_into(batch: &TripleBatch, table: &EmbeddingTable, grad: &mut EmbeddingTable) -> Result<f64> {
    let mut total = 0.0;
    for (i, (p, n)) in batch.positives.iter().zip(&batch.negatives).enumerate() {
        let gp = triple_energy(p.head, p.relation, p.tail, table);
        let gn = triple_energy(n.head, n.relation, n.tail, table);
        // −ln σ(gn − gp) = softplus(gp − gn)
        let loss = softplus(gp - gn);
        if !loss.is_finite() {
            return Err(Error::NumericFault(format!(
                "knowledge-graph loss is {loss} at batch index {i}"
            )));
        }
        total += loss;
        let w = sigmoid(gp - gn);
        accumulate_energy_grad(p, w, table, grad);
        accumulate_energy_grad(n, -w, table, grad);
    }
    Ok(total)
}

/// Encoding loss of `batch` with its gradient.
pub fn kg_loss(batch: &TripleBatch, table: &EmbeddingTable) -> Result<(f64, EmbeddingTable)> {
    let mut grad = table.zeros_like();
    let loss = kg_loss_into(batch, table, &mut grad)?;
    Ok((loss, grad))
}

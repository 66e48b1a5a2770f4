//! Parameter tables, the scoring forward pass and its hand-derived backward
//! pass.
//!
//! For a fact `(h, r, t, τ)` the model computes, coordinate by coordinate:
//!
//! ```text
//! u      = q_τ / |q_τ|                    unit rotation time
//! q_r(τ) = u ⊗ q_r ⊗ ū                    time-aware relation
//! q'_r(τ) = q_r(τ) + sin(q_τ')            time-sensitive relation
//! φ      = ⟨q_h ⊗ q'_r(τ), q_t⟩            score
//! ```
//!
//! The stored rotation-time embedding is unconstrained; normalization happens
//! on the fly and gradients flow through it. With `periodic_enabled = false`
//! the `sin(q_τ')` term is dropped.
//!
//! Gradients use the Hamilton-product adjoints `⟨x⊗y, g⟩ = ⟨x, g⊗ȳ⟩ =
//! ⟨y, x̄⊗g⟩`.

use std::collections::HashMap;

use ndarray::{linalg::general_mat_mul, s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Quadruple;
use crate::exec::Exec;
use crate::quat::{conj, dot, hamilton, norm, unit, Quat, QuaternionBatch};

/// Rows per work item in the entity-scoring matrix products.
pub(crate) const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Table {
    Entity,
    Relation,
    RotTime,
    PeriodicTime,
}

impl Table {
    pub const ALL: [Table; 4] = [
        Table::Entity,
        Table::Relation,
        Table::RotTime,
        Table::PeriodicTime,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|E| × d`
    pub entity: QuaternionBatch,
    /// `2|R| × d`; rows `|R|..2|R|` are the inverse relations.
    pub relation: QuaternionBatch,
    /// `|T| × d`, rotation time `q_τ`.
    pub rot_time: QuaternionBatch,
    /// `|T| × d`, periodic time `q_τ'`.
    pub periodic_time: QuaternionBatch,
    pub periodic_enabled: bool,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

fn uniform_table(rng: &mut impl Rng, rows: usize, dim: usize, bound: f64) -> QuaternionBatch {
    let mut q = QuaternionBatch::zeros(rows, dim);
    for m in q.components_mut() {
        m.mapv_inplace(|_| rng.random_range(-bound..=bound));
    }
    q
}

impl ModelParams {
    /// Uniform `[-1/√d, 1/√d]` initialization drawn from `rng`, table by table
    /// in declaration order.
    pub fn init_with_rng(
        num_entities: usize,
        num_relations: usize,
        num_timestamps: usize,
        dim: usize,
        periodic_enabled: bool,
        seed: u64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            entity: uniform_table(rng, num_entities, dim, bound),
            relation: uniform_table(rng, 2 * num_relations, dim, bound),
            rot_time: uniform_table(rng, num_timestamps, dim, bound),
            periodic_time: uniform_table(rng, num_timestamps, dim, bound),
            periodic_enabled,
            seed,
        }
    }

    pub fn init(
        num_entities: usize,
        num_relations: usize,
        num_timestamps: usize,
        dim: usize,
        periodic_enabled: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(
            num_entities,
            num_relations,
            num_timestamps,
            dim,
            periodic_enabled,
            seed,
            &mut rng,
        )
    }

    pub fn dim(&self) -> usize {
        self.entity.dim()
    }

    pub fn num_entities(&self) -> usize {
        self.entity.rows()
    }

    /// Base relation count `|R|`.
    pub fn num_relations(&self) -> usize {
        self.relation.rows() / 2
    }

    pub fn num_timestamps(&self) -> usize {
        self.rot_time.rows()
    }

    pub fn table(&self, t: Table) -> &QuaternionBatch {
        match t {
            Table::Entity => &self.entity,
            Table::Relation => &self.relation,
            Table::RotTime => &self.rot_time,
            Table::PeriodicTime => &self.periodic_time,
        }
    }

    pub fn table_mut(&mut self, t: Table) -> &mut QuaternionBatch {
        match t {
            Table::Entity => &mut self.entity,
            Table::Relation => &mut self.relation,
            Table::RotTime => &mut self.rot_time,
            Table::PeriodicTime => &mut self.periodic_time,
        }
    }

    pub fn is_finite(&self) -> bool {
        Table::ALL.iter().all(|&t| self.table(t).is_finite())
    }

    /// Real parameter count: `(|E| + 2|R| + 2|T|) · d · 4`.
    pub fn parameter_count(&self) -> usize {
        (self.num_entities() + self.relation.rows() + 2 * self.num_timestamps()) * self.dim() * 4
    }

    #[inline]
    fn relation_coord(&self, relation: u32, time: u32, k: usize) -> Quat {
        let rotated = rotate(self.rot_time.get(time as usize, k), self.relation.get(relation as usize, k));
        if self.periodic_enabled {
            let p = self.periodic_time.get(time as usize, k);
            [
                rotated[0] + p[0].sin(),
                rotated[1] + p[1].sin(),
                rotated[2] + p[2].sin(),
                rotated[3] + p[3].sin(),
            ]
        } else {
            rotated
        }
    }
}

pub fn parameter_count(params: &ModelParams) -> usize {
    params.parameter_count()
}

/// `unit(τ) ⊗ r ⊗ conj(unit(τ))`.
#[inline(always)]
fn rotate(tau: Quat, r: Quat) -> Quat {
    let u = unit(tau);
    hamilton(hamilton(u, r), conj(u))
}

/// Time-aware relation `q_r(τ)` for each `(relations[i], times[i])`.
pub fn time_aware_relation(params: &ModelParams, relations: &[u32], times: &[u32]) -> QuaternionBatch {
    assert_eq!(relations.len(), times.len());
    let dim = params.dim();
    let mut out = QuaternionBatch::zeros(relations.len(), dim);
    for (i, (&r, &tau)) in relations.iter().zip(times).enumerate() {
        for k in 0..dim {
            let q = rotate(params.rot_time.get(tau as usize, k), params.relation.get(r as usize, k));
            out.set(i, k, q);
        }
    }
    out
}

/// Time-sensitive relation `q'_r(τ)`, equal to [`time_aware_relation`] when
/// periodic time is disabled.
pub fn time_sensitive_relation(params: &ModelParams, relations: &[u32], times: &[u32]) -> QuaternionBatch {
    assert_eq!(relations.len(), times.len());
    let dim = params.dim();
    let mut out = QuaternionBatch::zeros(relations.len(), dim);
    for (i, (&r, &tau)) in relations.iter().zip(times).enumerate() {
        for k in 0..dim {
            out.set(i, k, params.relation_coord(r, tau, k));
        }
    }
    out
}

/// Scores plus the forward intermediates the backward pass reuses.
#[derive(Debug, Clone)]
pub struct ScoreBatch {
    pub scores: Array1<f64>,
    /// `q'_r(τ)` per quadruple.
    pub relation: QuaternionBatch,
    /// `q_h ⊗ q'_r(τ)` per quadruple.
    pub query: QuaternionBatch,
}

/// Query embeddings `q_h ⊗ q'_r(τ)` (and the relations) for a batch; the
/// tail of each quadruple is ignored.
pub(crate) fn query_forward(params: &ModelParams, batch: &[Quadruple]) -> (QuaternionBatch, QuaternionBatch) {
    let dim = params.dim();
    let mut relation = QuaternionBatch::zeros(batch.len(), dim);
    let mut query = QuaternionBatch::zeros(batch.len(), dim);
    for (i, q) in batch.iter().enumerate() {
        for k in 0..dim {
            let rel = params.relation_coord(q.relation, q.time, k);
            relation.set(i, k, rel);
            query.set(i, k, hamilton(params.entity.get(q.head as usize, k), rel));
        }
    }
    (relation, query)
}

pub fn score(params: &ModelParams, batch: &[Quadruple]) -> ScoreBatch {
    let (relation, query) = query_forward(params, batch);
    let dim = params.dim();
    let scores = Array1::from_shape_fn(batch.len(), |i| {
        let t = batch[i].tail as usize;
        (0..dim).fold(0.0, |acc, k| acc + dot(query.get(i, k), params.entity.get(t, k)))
    });
    ScoreBatch {
        scores,
        relation,
        query,
    }
}

/// `B × |E|` matrix of `⟨query_i, q_e⟩` for every entity `e`.
pub(crate) fn scores_against_entities(params: &ModelParams, query: &QuaternionBatch, exec: Exec) -> Array2<f64> {
    let mut out = Array2::zeros((query.rows(), params.num_entities()));
    exec.for_each_row_chunk(&mut out.view_mut(), ROW_CHUNK, |start, mut block| {
        let rows = start..start + block.nrows();
        for (qc, ec) in query.components().into_iter().zip(params.entity.components()) {
            general_mat_mul(1.0, &qc.slice(s![rows.clone(), ..]), &ec.t(), 1.0, &mut block);
        }
    });
    out
}

/// Scores of every candidate tail for each query `(head, relation, time)` in
/// `batch`. Head queries are expressed through the inverse relation.
pub fn score_queries(params: &ModelParams, batch: &[Quadruple], exec: Exec) -> Array2<f64> {
    let (_, query) = query_forward(params, batch);
    scores_against_entities(params, &query, exec)
}

/// φ(entity, relation, e, time) for every entity `e`.
pub fn score_all_entities(params: &ModelParams, entity: u32, relation: u32, time: u32) -> Array1<f64> {
    let q = Quadruple::new(entity, relation, 0, time);
    score_queries(params, &[q], Exec::Sequential).row(0).to_owned()
}

/// Gradient rows for one parameter table. Each row is `4d` reals laid out as
/// `[a_0..a_d, b_0..b_d, c_0..c_d, d_0..d_d]`; rows keep insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrads {
    dim: usize,
    slots: HashMap<u32, usize>,
    rows: Vec<u32>,
    values: Vec<f64>,
}

impl RowGrads {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn slot(&mut self, row: u32) -> usize {
        let width = 4 * self.dim;
        *self.slots.entry(row).or_insert_with(|| {
            self.rows.push(row);
            self.values.resize(self.values.len() + width, 0.0);
            self.rows.len() - 1
        })
    }

    #[inline]
    pub(crate) fn add_quat(&mut self, slot: usize, k: usize, q: Quat) {
        let base = slot * 4 * self.dim + k;
        for (c, v) in q.iter().enumerate() {
            self.values[base + c * self.dim] += v;
        }
    }

    /// Adds a dense gradient covering rows `0..g.rows()`.
    pub(crate) fn add_dense(&mut self, g: &QuaternionBatch) {
        for row in 0..g.rows() {
            let slot = self.slot(row as u32);
            let base = slot * 4 * self.dim;
            for (c, m) in g.components().into_iter().enumerate() {
                let dst = &mut self.values[base + c * self.dim..base + (c + 1) * self.dim];
                for (d, s) in dst.iter_mut().zip(m.row(row)) {
                    *d += s;
                }
            }
        }
    }

    pub fn row(&self, row: u32) -> Option<&[f64]> {
        let width = 4 * self.dim;
        self.slots
            .get(&row)
            .map(|&s| &self.values[s * width..(s + 1) * width])
    }

    /// Gradient entry for `(row, component, k)`, zero if the row is absent.
    pub fn get(&self, row: u32, component: usize, k: usize) -> f64 {
        self.row(row).map_or(0.0, |r| r[component * self.dim + k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        let width = 4 * self.dim;
        self.rows
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r, &self.values[s * width..(s + 1) * width]))
    }

    pub fn merge(&mut self, other: &RowGrads) {
        for (row, vals) in other.iter() {
            let slot = self.slot(row);
            let base = slot * 4 * self.dim;
            for (d, s) in self.values[base..base + vals.len()].iter_mut().zip(vals) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Sparse gradients for all four tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub entity: RowGrads,
    pub relation: RowGrads,
    pub rot_time: RowGrads,
    pub periodic_time: RowGrads,
}

impl Gradients {
    pub fn new(dim: usize) -> Self {
        Self {
            entity: RowGrads::new(dim),
            relation: RowGrads::new(dim),
            rot_time: RowGrads::new(dim),
            periodic_time: RowGrads::new(dim),
        }
    }

    pub fn table(&self, t: Table) -> &RowGrads {
        match t {
            Table::Entity => &self.entity,
            Table::Relation => &self.relation,
            Table::RotTime => &self.rot_time,
            Table::PeriodicTime => &self.periodic_time,
        }
    }

    pub fn table_mut(&mut self, t: Table) -> &mut RowGrads {
        match t {
            Table::Entity => &mut self.entity,
            Table::Relation => &mut self.relation,
            Table::RotTime => &mut self.rot_time,
            Table::PeriodicTime => &mut self.periodic_time,
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for t in Table::ALL {
            self.table_mut(t).merge(other.table(t));
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in Table::ALL {
            self.table_mut(t).scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        Table::ALL.iter().all(|&t| self.table(t).is_finite())
    }
}

#[inline(always)]
fn add4(x: Quat, y: Quat) -> Quat {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]]
}

/// Pushes `g` (gradient w.r.t. `q'_r(τ)` at coordinate `k`) back into the
/// relation, rotation-time and periodic-time rows.
#[inline]
fn relation_backward(params: &ModelParams, q: &Quadruple, k: usize, g: Quat, slots: (usize, usize, usize), grads: &mut Gradients) {
    let (rel_slot, rot_slot, per_slot) = slots;
    if params.periodic_enabled {
        let p = params.periodic_time.get(q.time as usize, k);
        grads.periodic_time.add_quat(
            per_slot,
            k,
            [g[0] * p[0].cos(), g[1] * p[1].cos(), g[2] * p[2].cos(), g[3] * p[3].cos()],
        );
    }
    let raw = params.rot_time.get(q.time as usize, k);
    let r = params.relation.get(q.relation as usize, k);
    let u = unit(raw);
    let m = hamilton(u, r);
    // rotated = m ⊗ ū
    let gm = hamilton(g, u);
    let g_ubar = hamilton(conj(m), g);
    let gu = add4(conj(g_ubar), hamilton(gm, conj(r)));
    grads.relation.add_quat(rel_slot, k, hamilton(conj(u), gm));
    let n = norm(raw);
    if n > 0.0 {
        let proj = dot(u, gu);
        grads.rot_time.add_quat(
            rot_slot,
            k,
            [
                (gu[0] - u[0] * proj) / n,
                (gu[1] - u[1] * proj) / n,
                (gu[2] - u[2] * proj) / n,
                (gu[3] - u[3] * proj) / n,
            ],
        );
    }
}

/// Backward pass from `g_query` (gradient w.r.t. `q_h ⊗ q'_r(τ)`) and an
/// optional extra gradient w.r.t. `q'_r(τ)` into head, relation and time
/// rows. Accumulates in batch order.
pub(crate) fn query_backward(
    params: &ModelParams,
    batch: &[Quadruple],
    relation: &QuaternionBatch,
    g_query: &QuaternionBatch,
    g_relation: Option<&QuaternionBatch>,
    grads: &mut Gradients,
) {
    let dim = params.dim();
    for (i, q) in batch.iter().enumerate() {
        let h_slot = grads.entity.slot(q.head);
        let slots = (
            grads.relation.slot(q.relation),
            grads.rot_time.slot(q.time),
            if params.periodic_enabled {
                grads.periodic_time.slot(q.time)
            } else {
                0
            },
        );
        for k in 0..dim {
            let gq = g_query.get(i, k);
            let rel = relation.get(i, k);
            let h = params.entity.get(q.head as usize, k);
            grads.entity.add_quat(h_slot, k, hamilton(gq, conj(rel)));
            let mut g_rel = hamilton(conj(h), gq);
            if let Some(extra) = g_relation {
                g_rel = add4(g_rel, extra.get(i, k));
            }
            relation_backward(params, q, k, g_rel, slots, grads);
        }
    }
}

/// Gradients of `Σ_i upstream[i] · φ_i` with respect to every touched row.
pub fn score_gradients(params: &ModelParams, batch: &[Quadruple], upstream: &[f64]) -> Gradients {
    assert_eq!(batch.len(), upstream.len());
    let fwd = score(params, batch);
    score_gradients_from(params, batch, &fwd, upstream)
}

/// As [`score_gradients`], reusing a cached forward pass.
pub fn score_gradients_from(params: &ModelParams, batch: &[Quadruple], fwd: &ScoreBatch, upstream: &[f64]) -> Gradients {
    let dim = params.dim();
    let mut grads = Gradients::new(dim);
    let mut g_query = QuaternionBatch::zeros(batch.len(), dim);
    for (i, (q, &up)) in batch.iter().zip(upstream).enumerate() {
        let t_slot = grads.entity.slot(q.tail);
        for k in 0..dim {
            let qq = fwd.query.get(i, k);
            grads.entity.add_quat(t_slot, k, [qq[0] * up, qq[1] * up, qq[2] * up, qq[3] * up]);
            let t = params.entity.get(q.tail as usize, k);
            g_query.set(i, k, [t[0] * up, t[1] * up, t[2] * up, t[3] * up]);
        }
    }
    query_backward(params, batch, &fwd.relation, &g_query, None, &mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat;

    /// Independent scalar evaluation: plain f64 arithmetic, no batch kernels.
    fn scalar_score(p: &ModelParams, q: Quadruple) -> f64 {
        let mut total = 0.0;
        for k in 0..p.dim() {
            let (h, r, t) = (
                p.entity.get(q.head as usize, k),
                p.relation.get(q.relation as usize, k),
                p.entity.get(q.tail as usize, k),
            );
            let raw = p.rot_time.get(q.time as usize, k);
            let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]).sqrt();
            let (w, x, y, z) = (raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n);
            // rotation matrix form of u r ū acting on the imaginary part
            let rv = [r[1], r[2], r[3]];
            let rot = [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ];
            let mut rel = [r[0], 0.0, 0.0, 0.0];
            for i in 0..3 {
                rel[i + 1] = (0..3).map(|j| rot[i][j] * rv[j]).sum();
            }
            if p.periodic_enabled {
                let pt = p.periodic_time.get(q.time as usize, k);
                for c in 0..4 {
                    rel[c] += pt[c].sin();
                }
            }
            let (a1, b1, c1, d1) = (h[0], h[1], h[2], h[3]);
            let (a2, b2, c2, d2) = (rel[0], rel[1], rel[2], rel[3]);
            total += (a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2) * t[0]
                + (a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2) * t[1]
                + (a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2) * t[2]
                + (a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2) * t[3];
        }
        total
    }

    fn tiny(dim: usize, seed: u64) -> ModelParams {
        ModelParams::init(4, 2, 3, dim, true, seed)
    }

    #[test]
    fn identity_time_leaves_relation_unchanged() {
        let mut p = tiny(3, 1);
        p.rot_time = QuaternionBatch::identity(3, 3);
        let rel = time_aware_relation(&p, &[1, 3], &[0, 2]);
        assert_eq!(rel, p.relation.select_rows(&[1, 3]));
    }

    #[test]
    fn rotation_preserves_norm() {
        let p = tiny(5, 2);
        let rel = time_aware_relation(&p, &[0, 1, 2, 3], &[0, 1, 2, 0]);
        for (i, r) in [0usize, 1, 2, 3].iter().enumerate() {
            for k in 0..5 {
                let before = norm(p.relation.get(*r, k));
                let after = norm(rel.get(i, k));
                assert!((before - after).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rotation_matches_two_hamilton_products() {
        let p = tiny(2, 3);
        let rels = [0u32, 3];
        let times = [1u32, 2];
        let got = time_aware_relation(&p, &rels, &times);
        let u = quat::normalize(&p.rot_time.select_rows(&[1, 2]));
        let r = p.relation.select_rows(&[0, 3]);
        let expected = quat::hamilton_product(&quat::hamilton_product(&u, &r).unwrap(), &quat::conjugate(&u)).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                for c in 0..4 {
                    assert!((got.get(i, k)[c] - expected.get(i, k)[c]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn periodic_term_adds_sine() {
        let mut p = tiny(3, 4);
        let aware = time_aware_relation(&p, &[1, 2], &[0, 1]);
        let sens = time_sensitive_relation(&p, &[1, 2], &[0, 1]);
        let expected = quat::add(&aware, &quat::elementwise_sine(&p.periodic_time.select_rows(&[0, 1]))).unwrap();
        assert_eq!(sens, expected);

        p.periodic_enabled = false;
        assert_eq!(time_sensitive_relation(&p, &[1, 2], &[0, 1]), aware);

        p.periodic_enabled = true;
        p.periodic_time = QuaternionBatch::zeros(3, 3);
        assert_eq!(time_sensitive_relation(&p, &[1, 2], &[0, 1]), aware);
    }

    #[test]
    fn all_identity_scores_one() {
        let mut p = ModelParams::init(1, 1, 1, 1, true, 0);
        p.entity = QuaternionBatch::identity(1, 1);
        p.relation = QuaternionBatch::identity(2, 1);
        p.rot_time = QuaternionBatch::identity(1, 1);
        p.periodic_time = QuaternionBatch::zeros(1, 1);
        assert_eq!(score(&p, &[Quadruple::new(0, 0, 0, 0)]).scores[0], 1.0);
    }

    #[test]
    fn real_relation_is_symmetric() {
        let mut p = tiny(6, 5);
        p.relation.b.fill(0.0);
        p.relation.c.fill(0.0);
        p.relation.d.fill(0.0);
        p.periodic_time = QuaternionBatch::zeros(3, 6);
        let s = score(&p, &[Quadruple::new(0, 1, 2, 1), Quadruple::new(2, 1, 0, 1)]).scores;
        assert!((s[0] - s[1]).abs() < 1e-12);
    }

    #[test]
    fn score_matches_scalar_oracle() {
        for seed in 0..5 {
            let p = tiny(2, seed);
            let batch: Vec<Quadruple> = (0..8)
                .map(|i| Quadruple::new(i % 4, (i * 3) % 4, (i + 1) % 4, i % 3))
                .collect();
            let s = score(&p, &batch).scores;
            for (q, v) in batch.iter().zip(s.iter()) {
                assert!((v - scalar_score(&p, *q)).abs() < 1e-12, "{v} vs {}", scalar_score(&p, *q));
            }
        }
    }

    #[test]
    fn all_entities_consistent_with_pointwise() {
        let p = tiny(4, 6);
        let all = score_all_entities(&p, 1, 2, 2);
        for e in 0..4 {
            let single = scalar_score(&p, Quadruple::new(1, 2, e, 2));
            assert!((all[e as usize] - single).abs() < 1e-12);
        }
        let mut doubled = p.clone();
        for m in doubled.entity.components_mut() {
            let mut row = m.row_mut(3);
            row.mapv_inplace(|v| 2.0 * v);
        }
        let s2 = score_all_entities(&doubled, 1, 2, 2);
        assert!((s2[3] - 2.0 * all[3]).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_sequential_scores_identical() {
        let p = ModelParams::init(300, 3, 4, 7, true, 9);
        let batch: Vec<Quadruple> = (0..150).map(|i| Quadruple::new(i % 300, i % 6, 0, i % 4)).collect();
        assert_eq!(
            score_queries(&p, &batch, Exec::Sequential),
            score_queries(&p, &batch, Exec::Parallel)
        );
    }

    #[test]
    fn parameter_counts() {
        let p = ModelParams::init(2, 1, 1, 3, true, 0);
        assert_eq!(parameter_count(&p), 72);
        let p2 = ModelParams::init(2, 1, 1, 6, true, 0);
        assert_eq!(parameter_count(&p2), 144);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let p = tiny(3, 7);
        let batch = [Quadruple::new(0, 1, 2, 0), Quadruple::new(3, 2, 1, 2)];
        let g = score_gradients(&p, &batch, &[0.0, 0.0]);
        for t in Table::ALL {
            assert!(g.table(t).iter().all(|(_, r)| r.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn tail_gradient_is_query() {
        let p = tiny(3, 8);
        let batch = [Quadruple::new(0, 1, 2, 0)];
        let fwd = score(&p, &batch);
        let g = score_gradients(&p, &batch, &[1.0]);
        for k in 0..3 {
            let q = fwd.query.get(0, k);
            for c in 0..4 {
                assert_eq!(g.entity.get(2, c, k), q[c]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-5;
        for seed in 0..10 {
            let p = tiny(4, 100 + seed);
            let batch = [
                Quadruple::new(0, 1, 2, 0),
                Quadruple::new(3, 2, 1, 2),
                Quadruple::new(0, 1, 3, 0),
            ];
            let up = [0.7, -1.3, 0.4];
            let f = |p: &ModelParams| -> f64 {
                batch.iter().zip(up).map(|(q, u)| u * scalar_score(p, *q)).sum()
            };
            let g = score_gradients(&p, &batch, &up);
            for t in Table::ALL {
                for row in 0..p.table(t).rows() {
                    for c in 0..4 {
                        for k in 0..4 {
                            let mut plus = p.clone();
                            plus.table_mut(t).components_mut()[c][[row, k]] += eps;
                            let mut minus = p.clone();
                            minus.table_mut(t).components_mut()[c][[row, k]] -= eps;
                            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
                            let an = g.table(t).get(row as u32, c, k);
                            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                            assert!(err < 1e-4, "{t:?}[{row}] c{c} k{k}: fd {fd} vs {an}");
                        }
                    }
                }
            }
        }
    }
}

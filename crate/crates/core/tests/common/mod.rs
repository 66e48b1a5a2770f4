//! Reference implementations used by the integration and acceptance tests.
//!
//! Everything here is written from scratch in plain scalar loops: rotations
//! use the 3×3 rotation matrix of a unit quaternion, products use the 4×4
//! left-multiplication matrix. Nothing calls into the library's kernels.
#![allow(dead_code, clippy::too_many_arguments, clippy::manual_div_ceil)]

use rand::Rng;
use tquate::data::{Quadruple, QuadrupleDataset};
use tquate::model::{Gradients, ModelParams, Table};
use tquate::quat::QuaternionBatch;

pub type Q = [f64; 4];

/// Left-multiplication matrix `L(h)` with `h ⊗ r = L(h) r`.
pub fn left_matrix(h: Q) -> [[f64; 4]; 4] {
    let [a, b, c, d] = h;
    [[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]]
}

pub fn mat_vec(m: &[[f64; 4]; 4], v: Q) -> Q {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(&v).map(|(x, y)| x * y).sum();
    }
    out
}

pub fn mul(x: Q, y: Q) -> Q {
    mat_vec(&left_matrix(x), y)
}

/// `u r ū` for unit `u`: real part kept, vector part rotated.
pub fn rotate(u: Q, r: Q) -> Q {
    let [w, x, y, z] = u;
    let m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let v = [r[1], r[2], r[3]];
    let mut out = [r[0], 0.0, 0.0, 0.0];
    for i in 0..3 {
        out[i + 1] = (0..3).map(|j| m[i][j] * v[j]).sum();
    }
    out
}

fn get(t: &QuaternionBatch, row: usize, k: usize) -> Q {
    [t.a[[row, k]], t.b[[row, k]], t.c[[row, k]], t.d[[row, k]]]
}

/// Composite relation of `(r, τ)` at coordinate `k`.
pub fn relation_at(p: &ModelParams, r: u32, time: u32, k: usize) -> Q {
    let q = get(&p.rot_time, time as usize, k);
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u = if n == 0.0 { [1.0, 0.0, 0.0, 0.0] } else { q.map(|x| x / n) };
    let mut out = rotate(u, get(&p.relation, r as usize, k));
    if p.periodic_enabled {
        let s = get(&p.periodic_time, time as usize, k);
        for c in 0..4 {
            out[c] += s[c].sin();
        }
    }
    out
}

pub fn score(p: &ModelParams, h: u32, r: u32, t: u32, time: u32) -> f64 {
    (0..p.dim())
        .map(|k| {
            let hr = mul(get(&p.entity, h as usize, k), relation_at(p, r, time, k));
            let tq = get(&p.entity, t as usize, k);
            (0..4).map(|c| hr[c] * tq[c]).sum::<f64>()
        })
        .sum()
}

fn abs_pow(x: f64, p: f64) -> f64 {
    x.abs().powf(p)
}

/// `L_c + λ_e·Ω + λ_τ·Λ` written out directly.
pub fn total_loss(params: &ModelParams, batch: &[Quadruple], lambda_e: f64, lambda_t: f64, p: f64) -> f64 {
    let n_e = params.num_entities() as u32;
    let b = batch.len() as f64;
    let mut lc = 0.0;
    let mut omega = 0.0;
    for q in batch {
        let scores: Vec<f64> = (0..n_e).map(|e| score(params, q.head, q.relation, e, q.time)).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        lc += lse - scores[q.tail as usize];
        for k in 0..params.dim() {
            let r = relation_at(params, q.relation, q.time, k);
            let h = get(&params.entity, q.head as usize, k);
            let t = get(&params.entity, q.tail as usize, k);
            omega += h.iter().chain(&r).chain(&t).map(|&x| abs_pow(x, p)).sum::<f64>();
        }
    }
    let n_t = params.num_timestamps();
    let mut lambda = 0.0;
    if n_t > 1 {
        for i in 0..n_t - 1 {
            for k in 0..params.dim() {
                let (r0, r1) = (get(&params.rot_time, i, k), get(&params.rot_time, i + 1, k));
                let (p0, p1) = (get(&params.periodic_time, i, k), get(&params.periodic_time, i + 1, k));
                for c in 0..4 {
                    let mut diff = r1[c] - r0[c];
                    if params.periodic_enabled {
                        diff += p1[c] - p0[c];
                    }
                    lambda += abs_pow(diff, p);
                }
            }
        }
        lambda /= (n_t - 1) as f64;
    }
    lc / b + lambda_e * omega / b + lambda_t * lambda
}

fn table_entry(t: &mut QuaternionBatch, comp: usize, row: usize, k: usize) -> &mut f64 {
    match comp {
        0 => &mut t.a[[row, k]],
        1 => &mut t.b[[row, k]],
        2 => &mut t.c[[row, k]],
        _ => &mut t.d[[row, k]],
    }
}

/// Largest relative error between `grads` and fourth-order central
/// differences of [`total_loss`], over every parameter of every table. The relative error
/// is `|a − n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(
    params: &ModelParams,
    batch: &[Quadruple],
    grads: &Gradients,
    lambda_e: f64,
    lambda_t: f64,
    p: f64,
    step: f64,
    floor: f64,
) -> f64 {
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for table in Table::ALL {
        let (rows, dim) = params.table(table).a.dim();
        for row in 0..rows {
            for comp in 0..4 {
                for k in 0..dim {
                    let orig = *table_entry(work.table_mut(table), comp, row, k);
                    let mut at = |x: f64| {
                        *table_entry(work.table_mut(table), comp, row, k) = x;
                        total_loss(&work, batch, lambda_e, lambda_t, p)
                    };
                    let numeric = (8.0 * (at(orig + step) - at(orig - step)) - (at(orig + 2.0 * step) - at(orig - 2.0 * step)))
                        / (12.0 * step);
                    at(orig);
                    let analytic = grads.table(table).get(row as u32, comp, k);
                    let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                    worst = worst.max(err);
                }
            }
        }
    }
    worst
}

pub fn uniform_table(rng: &mut impl Rng, rows: usize, dim: usize, scale: f64) -> QuaternionBatch {
    let mut q = QuaternionBatch::zeros(rows, dim);
    for m in [&mut q.a, &mut q.b, &mut q.c, &mut q.d] {
        m.mapv_inplace(|_| rng.random_range(-scale..scale));
    }
    q
}

pub fn random_params(rng: &mut impl Rng, ne: usize, nr: usize, nt: usize, dim: usize, periodic: bool) -> ModelParams {
    ModelParams {
        entity: uniform_table(rng, ne, dim, 1.0),
        relation: uniform_table(rng, 2 * nr, dim, 1.0),
        rot_time: uniform_table(rng, nt, dim, 1.0),
        periodic_time: uniform_table(rng, nt, dim, 1.0),
        periodic_enabled: periodic,
        seed: 0,
    }
}

/// Parameters with small integer entries and axis-aligned time rotations,
/// so that many scores tie exactly.
pub fn tie_heavy_params(rng: &mut impl Rng, ne: usize, nr: usize, nt: usize, dim: usize) -> ModelParams {
    let mut p = random_params(rng, ne, nr, nt, dim, true);
    for t in [&mut p.entity, &mut p.relation] {
        for m in [&mut t.a, &mut t.b, &mut t.c, &mut t.d] {
            m.mapv_inplace(|_| rng.random_range(-1i32..=1) as f64);
        }
    }
    let mut rot = QuaternionBatch::zeros(nt, dim);
    for i in 0..nt {
        for k in 0..dim {
            let axis = rng.random_range(0..4);
            let v = [1.0, -1.0, 2.0][rng.random_range(0..3)];
            *table_entry(&mut rot, axis, i, k) = v;
        }
    }
    p.rot_time = rot;
    p.periodic_time = QuaternionBatch::zeros(nt, dim);
    p
}

pub fn random_facts(rng: &mut impl Rng, n: usize, ne: usize, nr: usize, nt: usize) -> Vec<Quadruple> {
    (0..n)
        .map(|_| {
            Quadruple::new(
                rng.random_range(0..ne as u32),
                rng.random_range(0..nr as u32),
                rng.random_range(0..ne as u32),
                rng.random_range(0..nt as u32),
            )
        })
        .collect()
}

/// Random dataset with `|E| ≤ 10` and at most 40 facts, every split nonempty.
pub fn random_dataset(rng: &mut impl Rng) -> QuadrupleDataset {
    let ne = rng.random_range(2..=10);
    let nr = rng.random_range(1..=3);
    let nt = rng.random_range(1..=4);
    let n = rng.random_range(3..=40);
    let facts = random_facts(rng, n, ne, nr, nt);
    let n_valid = rng.random_range(1..=(n / 3).max(1));
    let n_test = rng.random_range(1..=(n / 3).max(1));
    let train = facts[n_valid + n_test..].to_vec();
    let valid = facts[..n_valid].to_vec();
    let test = facts[n_valid..n_valid + n_test].to_vec();
    QuadrupleDataset::new(ne, nr, nt, train, valid, test).unwrap()
}

#[derive(Debug, PartialEq)]
pub struct BruteRanking {
    pub ranks: Vec<u64>,
    pub mrr: f64,
    pub hits: [f64; 3],
}

/// Ranks every tail and head query of `facts` by scoring all entities and
/// scanning all known facts for filtering.
pub fn brute_force_rank(params: &ModelParams, ds: &QuadrupleDataset, facts: &[Quadruple]) -> BruteRanking {
    let known: Vec<Quadruple> = ds.train.iter().chain(&ds.valid).chain(&ds.test).copied().collect();
    let nr = ds.num_relations as u32;
    let mut ranks = Vec::new();
    for f in facts {
        for tail_query in [true, false] {
            let (anchor, gold, rel) = if tail_query {
                (f.head, f.tail, f.relation)
            } else {
                (f.tail, f.head, f.relation + nr)
            };
            let is_true = |e: u32| {
                known.iter().any(|k| {
                    k.time == f.time
                        && k.relation == f.relation
                        && if tail_query {
                            k.head == anchor && k.tail == e
                        } else {
                            k.tail == anchor && k.head == e
                        }
                })
            };
            let target = score(params, anchor, rel, gold, f.time);
            let (mut greater, mut ties) = (0u64, 0u64);
            for e in 0..ds.num_entities as u32 {
                if e == gold || is_true(e) {
                    continue;
                }
                let s = score(params, anchor, rel, e, f.time);
                if s > target {
                    greater += 1;
                } else if s == target {
                    ties += 1;
                }
            }
            ranks.push(1 + greater + (ties + 1) / 2);
        }
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = [1u64, 3, 10].map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n);
    BruteRanking { ranks, mrr, hits }
}

/// 20 distinct non-reflexive facts over 12 entities, 3 relations and 4
/// timestamps; valid and test repeat the first four.
pub fn twenty_facts() -> QuadrupleDataset {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut facts = Vec::new();
    while facts.len() < 20 {
        let f = random_facts(&mut rng, 1, 12, 3, 4)[0];
        if f.head != f.tail && !facts.contains(&f) {
            facts.push(f);
        }
    }
    QuadrupleDataset::new(12, 3, 4, facts.clone(), facts[..4].to_vec(), facts[..4].to_vec()).unwrap()
}

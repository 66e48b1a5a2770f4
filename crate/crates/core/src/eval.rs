//! Time-wise filtered link-prediction evaluation (MRR, Hits@1/3/10).
//!
//! Every fact `(h, r, t, τ)` yields a tail query `(h, r, τ) → t` and a head
//! query `(t, r⁻¹, τ) → h`. Candidates that form a known true fact with the
//! same query at the same timestamp are removed, except the gold answer.
//! Ties count half, rounded toward the worse rank:
//! `rank = 1 + #greater + ⌈#ties / 2⌉`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayView1;

use crate::data::{FilterIndex, Quadruple};
use crate::exec::Exec;
use crate::model::{score_all_entities, score_queries, ModelParams};

/// Queries scored per matrix product.
const QUERY_CHUNK: usize = 256;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub mrr: f64,
    /// Hits@1, Hits@3, Hits@10.
    pub hits: [f64; 3],
    pub n_queries: usize,
    /// Per-query ranks: tail then head query for each fact, in split order.
    pub ranks: Vec<u64>,
}

impl RankingResult {
    pub fn from_ranks(ranks: Vec<u64>) -> Self {
        let n = ranks.len();
        if n == 0 {
            return Self {
                mrr: 0.0,
                hits: [0.0; 3],
                n_queries: 0,
                ranks,
            };
        }
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
        let hits = HITS_AT.map(|k| ranks.iter().filter(|&&r| r as usize <= k).count() as f64 / n as f64);
        Self {
            mrr,
            hits,
            n_queries: n,
            ranks,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        HITS_AT.iter().position(|&x| x == k).map(|i| self.hits[i])
    }

    /// Aligned text table with the MRR and Hits@k columns.
    pub fn table(&self, label: &str) -> String {
        let w = label.len().max(5);
        format!(
            "{:<w$}  {:>6}  {:>7}  {:>7}  {:>8}  {:>9}\n{:<w$}  {:>6.4}  {:>7.4}  {:>7.4}  {:>8.4}  {:>9}\n",
            "",
            "MRR",
            "Hits@1",
            "Hits@3",
            "Hits@10",
            "queries",
            label,
            self.mrr,
            self.hits[0],
            self.hits[1],
            self.hits[2],
            self.n_queries,
        )
    }

    /// `key = value` lines; values printed with full round-trip precision.
    pub fn to_kv(&self) -> String {
        format!(
            "mrr = {}\nhits@1 = {}\nhits@3 = {}\nhits@10 = {}\nn_queries = {}\n",
            self.mrr, self.hits[0], self.hits[1], self.hits[2], self.n_queries
        )
    }

    /// Tab-separated `query_id  gold  rank` lines for the given split.
    pub fn write_rank_dump(&self, path: &Path, facts: &[Quadruple]) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# query\tgold\trank")?;
        for (i, &rank) in self.ranks.iter().enumerate() {
            let fact = facts[i / 2];
            let gold = if i % 2 == 0 { fact.tail } else { fact.head };
            writeln!(out, "{i}\t{gold}\t{rank}")?;
        }
        out.flush()
    }
}

impl fmt::Display for RankingResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MRR {:.4}  Hits@1 {:.4}  Hits@3 {:.4}  Hits@10 {:.4}  ({} queries)",
            self.mrr, self.hits[0], self.hits[1], self.hits[2], self.n_queries
        )
    }
}

/// Filtered rank of `gold` among `scores`. `filtered` is the sorted list of
/// true answers to remove (it may contain `gold`, which is kept).
pub fn rank_from_scores(scores: ArrayView1<'_, f64>, gold: u32, filtered: &[u32]) -> u64 {
    let target = scores[gold as usize];
    let (mut greater, mut ties) = (0u64, 0u64);
    let mut skip = filtered.iter().peekable();
    for (e, &s) in scores.iter().enumerate() {
        let e = e as u32;
        while skip.next_if(|&&f| f < e).is_some() {}
        if skip.next_if_eq(&&e).is_some() || e == gold {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1 + greater + ties.div_ceil(2)
}

/// Rank of `gold` for the query `(entity, relation, time)`.
pub fn rank_query(params: &ModelParams, entity: u32, relation: u32, time: u32, gold: u32, filter: &FilterIndex) -> u64 {
    let scores = score_all_entities(params, entity, relation, time);
    rank_from_scores(scores.view(), gold, filter.answers(entity, relation, time))
}

/// Evaluates both query directions for every fact in `facts`.
pub fn evaluate(params: &ModelParams, facts: &[Quadruple], filter: &FilterIndex, exec: Exec) -> RankingResult {
    let r = params.num_relations() as u32;
    let queries: Vec<Quadruple> = facts.iter().flat_map(|q| [*q, q.reciprocal(r)]).collect();
    let mut ranks = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(QUERY_CHUNK) {
        let scores = score_queries(params, chunk, exec);
        let idx: Vec<usize> = (0..chunk.len()).collect();
        ranks.extend(exec.map(&idx, |&i| {
            let q = chunk[i];
            rank_from_scores(scores.row(i), q.tail, filter.answers(q.head, q.relation, q.time))
        }));
    }
    RankingResult::from_ranks(ranks)
}

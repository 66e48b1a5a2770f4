//! Quadruple datasets: text loading, vocabularies, reciprocal augmentation,
//! the time-wise filter index, shuffled batching and a binary cache.
//!
//! A dataset directory holds three tab-separated files `train`, `valid` and
//! `test` (a `.txt` suffix is also accepted), one fact per line:
//! `head<TAB>relation<TAB>tail<TAB>timestamp`. Timestamps are ISO dates
//! (`2014-03-14`) or plain integers; ids are assigned in chronological order.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One fact `(head, relation, tail, time)` with dense integer ids.
///
/// Relation ids `>= |R|` denote the materialized inverse relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
    pub time: u32,
}

impl Quadruple {
    pub const fn new(head: u32, relation: u32, tail: u32, time: u32) -> Self {
        Self {
            head,
            relation,
            tail,
            time,
        }
    }

    /// `(h, r, t, τ) -> (t, r⁻¹, h, τ)`; applying it twice is the identity.
    pub fn reciprocal(self, num_relations: u32) -> Self {
        let relation = if self.relation >= num_relations {
            self.relation - num_relations
        } else {
            self.relation + num_relations
        };
        Self::new(self.tail, relation, self.head, self.time)
    }
}

/// Bidirectional label/id maps for one kind of symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Labels {
    fn from_labels(labels: Vec<String>) -> Self {
        let ids = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        Self { labels, ids }
    }

    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub entities: Labels,
    pub relations: Labels,
    /// Sorted chronologically: id order is calendar order.
    pub timestamps: Labels,
}

impl Vocabulary {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    /// Labels of a (non-inverse) quadruple as `[head, relation, tail, time]`.
    pub fn decode(&self, q: Quadruple) -> Option<[&str; 4]> {
        Some([
            self.entities.label(q.head)?,
            self.relations.label(q.relation)?,
            self.entities.label(q.tail)?,
            self.timestamps.label(q.time)?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupleDataset {
    pub num_entities: usize,
    /// Number of base relations `|R|`; the model holds `2|R|` relation rows.
    pub num_relations: usize,
    pub num_timestamps: usize,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    /// `train` followed by one reciprocal per training fact.
    pub augmented_train: Vec<Quadruple>,
}

impl QuadrupleDataset {
    /// Builds a dataset from id-encoded splits; ids are checked against the
    /// given counts.
    pub fn new(
        num_entities: usize,
        num_relations: usize,
        num_timestamps: usize,
        train: Vec<Quadruple>,
        valid: Vec<Quadruple>,
        test: Vec<Quadruple>,
    ) -> Result<Self> {
        for (name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
            if let Some(q) = split.iter().find(|q| {
                q.head as usize >= num_entities
                    || q.tail as usize >= num_entities
                    || q.relation as usize >= num_relations
                    || q.time as usize >= num_timestamps
            }) {
                return Err(Error::Config(format!("{name} fact {q:?} is out of vocabulary bounds")));
            }
        }
        let r = num_relations as u32;
        let augmented_train = train
            .iter()
            .copied()
            .chain(train.iter().map(|q| q.reciprocal(r)))
            .collect();
        Ok(Self {
            num_entities,
            num_relations,
            num_timestamps,
            train,
            valid,
            test,
            augmented_train,
        })
    }

    pub fn split(&self, split: Split) -> &[Quadruple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_facts(&self) -> impl Iterator<Item = &Quadruple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Chronological sort key for a timestamp label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimeKey {
    Date(i64),
    Index(i64),
}

fn parse_time(label: &str) -> Option<TimeKey> {
    if let Ok(date) = NaiveDate::parse_from_str(label, "%Y-%m-%d") {
        return Some(TimeKey::Date(date.num_days_from_ce() as i64));
    }
    label.trim().parse::<i64>().ok().map(TimeKey::Index)
}

fn split_path(dir: &Path, name: &str) -> Result<PathBuf> {
    for candidate in [dir.join(name), dir.join(format!("{name}.txt"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Load {
        path: dir.join(name),
        message: "missing split file".into(),
    })
}

struct RawFact {
    labels: [String; 4],
}

fn read_split(path: &Path) -> Result<Vec<RawFact>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut facts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        if parse_time(fields[3]).is_none() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                message: format!("unparseable timestamp {:?}", fields[3]),
            });
        }
        facts.push(RawFact {
            labels: [
                fields[0].to_owned(),
                fields[1].to_owned(),
                fields[2].to_owned(),
                fields[3].to_owned(),
            ],
        });
    }
    if facts.is_empty() {
        return Err(Error::Load {
            path: path.to_owned(),
            message: "split is empty".into(),
        });
    }
    Ok(facts)
}

/// Loads `train`, `valid` and `test` from a dataset directory.
///
/// Entity and relation ids follow first appearance over train, valid, test;
/// timestamp ids follow calendar order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vocabulary, QuadrupleDataset)> {
    let dir = dir.as_ref();
    let mut raw = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = split_path(dir, split.name())?;
        raw.push(read_split(&path)?);
    }

    let mut keys: Vec<(TimeKey, &str)> = raw
        .iter()
        .flatten()
        .map(|f| (parse_time(&f.labels[3]).expect("checked while reading"), f.labels[3].as_str()))
        .collect();
    keys.sort();
    keys.dedup_by(|a, b| a.1 == b.1);
    if keys.windows(2).any(|w| std::mem::discriminant(&w[0].0) != std::mem::discriminant(&w[1].0)) {
        return Err(Error::Load {
            path: dir.to_owned(),
            message: "timestamps mix dates and integer indices".into(),
        });
    }
    if let Some(w) = keys.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Load {
            path: dir.to_owned(),
            message: format!("timestamps {:?} and {:?} denote the same time", w[0].1, w[1].1),
        });
    }
    let timestamps = Labels::from_labels(keys.iter().map(|(_, l)| (*l).to_owned()).collect());

    let mut entities = Labels::default();
    let mut relations = Labels::default();
    let mut splits: Vec<Vec<Quadruple>> = Vec::with_capacity(3);
    for facts in &raw {
        let encoded = facts
            .iter()
            .map(|f| {
                let [h, r, t, tau] = &f.labels;
                let head = entities.intern(h);
                let relation = relations.intern(r);
                let tail = entities.intern(t);
                let time = timestamps.id(tau).expect("all timestamps interned");
                Quadruple::new(head, relation, tail, time)
            })
            .collect();
        splits.push(encoded);
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();

    let vocab = Vocabulary {
        entities,
        relations,
        timestamps,
    };
    let ds = QuadrupleDataset::new(
        vocab.num_entities(),
        vocab.num_relations(),
        vocab.num_timestamps(),
        train,
        valid,
        test,
    )?;
    Ok((vocab, ds))
}

/// Known true answers per query `(entity, relation, time)` over all splits.
///
/// Tail queries `(h, r, τ)` and head queries, expressed as `(t, r⁻¹, τ)`,
/// share one map. Only facts with the same timestamp are filtered.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    answers: HashMap<(u32, u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build(ds: &QuadrupleDataset) -> Self {
        let r = ds.num_relations as u32;
        let mut answers: HashMap<(u32, u32, u32), Vec<u32>> = HashMap::new();
        for q in ds.all_facts() {
            answers
                .entry((q.head, q.relation, q.time))
                .or_default()
                .push(q.tail);
            let inv = q.reciprocal(r);
            answers
                .entry((inv.head, inv.relation, inv.time))
                .or_default()
                .push(inv.tail);
        }
        for v in answers.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { answers }
    }

    /// Sorted true answers for the query, empty if none are known.
    pub fn answers(&self, entity: u32, relation: u32, time: u32) -> &[u32] {
        self.answers
            .get(&(entity, relation, time))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, entity: u32, relation: u32, time: u32, answer: u32) -> bool {
        self.answers(entity, relation, time).binary_search(&answer).is_ok()
    }

    pub fn num_queries(&self) -> usize {
        self.answers.len()
    }
}

pub fn build_filter_index(ds: &QuadrupleDataset) -> FilterIndex {
    FilterIndex::build(ds)
}

/// One epoch over `augmented_train` in a seeded random order.
pub fn batch_iterator(
    ds: &QuadrupleDataset,
    batch_size: usize,
    seed: u64,
) -> impl Iterator<Item = Vec<Quadruple>> + '_ {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order: Vec<usize> = (0..ds.augmented_train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| ds.augmented_train[i]).collect())
}

const CACHE_MAGIC: &[u8; 8] = b"TQDSET\0\0";
const CACHE_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes vocabulary and splits into the binary cache format:
/// magic, version, then three label tables (`u32` count, then `u32` byte
/// length + UTF-8 per label) and three splits (`u32` count, then `4 × u32`
/// per fact), all little-endian.
pub fn write_cache(path: impl AsRef<Path>, vocab: &Vocabulary, ds: &QuadrupleDataset) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    put_u32(&mut out, CACHE_VERSION);
    for labels in [&vocab.entities, &vocab.relations, &vocab.timestamps] {
        put_u32(&mut out, labels.len() as u32);
        for l in labels.as_slice() {
            put_u32(&mut out, l.len() as u32);
            out.extend_from_slice(l.as_bytes());
        }
    }
    for split in [&ds.train, &ds.valid, &ds.test] {
        put_u32(&mut out, split.len() as u32);
        for q in split {
            for v in [q.head, q.relation, q.tail, q.time] {
                put_u32(&mut out, v);
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Cache("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<(Vocabulary, QuadrupleDataset)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let mut tables = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = cur.u32()? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = cur.u32()? as usize;
            let s = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| Error::Cache(format!("label is not UTF-8: {e}")))?;
            labels.push(s.to_owned());
        }
        tables.push(Labels::from_labels(labels));
    }
    let mut splits = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = cur.u32()? as usize;
        let mut facts = Vec::with_capacity(n);
        for _ in 0..n {
            facts.push(Quadruple::new(cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?));
        }
        splits.push(facts);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Cache("trailing bytes".into()));
    }
    let timestamps = tables.pop().unwrap();
    let relations = tables.pop().unwrap();
    let entities = tables.pop().unwrap();
    let vocab = Vocabulary {
        entities,
        relations,
        timestamps,
    };
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let ds = QuadrupleDataset::new(
        vocab.num_entities(),
        vocab.num_relations(),
        vocab.num_timestamps(),
        train,
        valid,
        test,
    )
    .map_err(|e| Error::Cache(e.to_string()))?;
    Ok((vocab, ds))
}

/// Loads either a dataset directory or a binary cache file.
pub fn load_any(path: impl AsRef<Path>) -> Result<(Vocabulary, QuadrupleDataset)> {
    let path = path.as_ref();
    if path.is_dir() {
        load_dataset(path)
    } else {
        read_cache(path)
    }
}

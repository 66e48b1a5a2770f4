//! Versioned binary checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic        8 bytes  "TQCKPT\0\0"
//! version      u32
//! |E|, |R|, |T|, d      u32 each   (|R| counts base relations)
//! periodic     u8       0 or 1
//! seed         u64
//! tables       f64      entity, relation, rot_time, periodic_time;
//!                       each as components a, b, c, d, row-major
//! accumulators f64      Adagrad state, same order and shapes
//! ```

use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Table};
use crate::quat::QuaternionBatch;
use crate::train::AdagradState;

pub const MAGIC: &[u8; 8] = b"TQCKPT\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 * 4 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub num_entities: u32,
    pub num_relations: u32,
    pub num_timestamps: u32,
    pub dim: u32,
    pub periodic_enabled: bool,
    pub seed: u64,
}

impl CheckpointHeader {
    pub fn parameter_count(&self) -> u64 {
        (self.num_entities as u64 + 2 * self.num_relations as u64 + 2 * self.num_timestamps as u64)
            * self.dim as u64
            * 4
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for v in [self.num_entities, self.num_relations, self.num_timestamps, self.dim] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.periodic_enabled as u8);
        out.extend_from_slice(&self.seed.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint("file shorter than header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let periodic_enabled = match bytes[28] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad periodic flag {b}"))),
        };
        Ok(Self {
            version,
            num_entities: u32_at(12),
            num_relations: u32_at(16),
            num_timestamps: u32_at(20),
            dim: u32_at(24),
            periodic_enabled,
            seed: u64::from_le_bytes(bytes[29..37].try_into().unwrap()),
        })
    }

    fn table_shapes(&self) -> [(usize, usize); 4] {
        let d = self.dim as usize;
        [
            (self.num_entities as usize, d),
            (2 * self.num_relations as usize, d),
            (self.num_timestamps as usize, d),
            (self.num_timestamps as usize, d),
        ]
    }
}

impl fmt::Display for CheckpointHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "version           {}", self.version)?;
        writeln!(f, "entities          {}", self.num_entities)?;
        writeln!(f, "relations         {}", self.num_relations)?;
        writeln!(f, "timestamps        {}", self.num_timestamps)?;
        writeln!(f, "dim               {}", self.dim)?;
        writeln!(f, "periodic_enabled  {}", self.periodic_enabled)?;
        writeln!(f, "seed              {}", self.seed)?;
        write!(f, "parameters        {}", self.parameter_count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adagrad: AdagradState,
}

fn put_table(out: &mut Vec<u8>, q: &QuaternionBatch) {
    for m in q.components() {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn take_table(bytes: &[u8], pos: &mut usize, (rows, dim): (usize, usize)) -> Result<QuaternionBatch> {
    let mut q = QuaternionBatch::zeros(rows, dim);
    let n = rows * dim * 8;
    for m in q.components_mut() {
        let chunk = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::Checkpoint("truncated table data".into()))?;
        for (dst, src) in m.iter_mut().zip(chunk.chunks_exact(8)) {
            *dst = f64::from_le_bytes(src.try_into().unwrap());
        }
        *pos += n;
    }
    Ok(q)
}

impl Checkpoint {
    pub fn new(params: ModelParams, adagrad: AdagradState) -> Self {
        Self { params, adagrad }
    }

    pub fn header(&self) -> CheckpointHeader {
        let p = &self.params;
        CheckpointHeader {
            version: VERSION,
            num_entities: p.num_entities() as u32,
            num_relations: p.num_relations() as u32,
            num_timestamps: p.num_timestamps() as u32,
            dim: p.dim() as u32,
            periodic_enabled: p.periodic_enabled,
            seed: p.seed,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.header().encode(&mut out);
        for t in Table::ALL {
            put_table(&mut out, self.params.table(t));
        }
        for t in Table::ALL {
            put_table(&mut out, self.adagrad.table(t));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CheckpointHeader::decode(bytes)?;
        let shapes = header.table_shapes();
        let mut pos = HEADER_LEN;
        let mut tables = Vec::with_capacity(8);
        for shape in shapes.iter().chain(shapes.iter()) {
            tables.push(take_table(bytes, &mut pos, *shape)?);
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let mut it = tables.into_iter();
        let mut next = || it.next().unwrap();
        let params = ModelParams {
            entity: next(),
            relation: next(),
            rot_time: next(),
            periodic_time: next(),
            periodic_enabled: header.periodic_enabled,
            seed: header.seed,
        };
        let adagrad = AdagradState {
            entity: next(),
            relation: next(),
            rot_time: next(),
            periodic_time: next(),
            epsilon: crate::train::ADAGRAD_EPS,
        };
        Ok(Self { params, adagrad })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the header of a checkpoint file.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let mut buf = [0u8; HEADER_LEN];
    let mut f = fs::File::open(path)?;
    f.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("file shorter than header".into()))?;
    CheckpointHeader::decode(&buf)
}

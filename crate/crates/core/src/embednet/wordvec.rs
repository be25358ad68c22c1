//! Fixed word-vector table with deterministic out-of-vocabulary vectors.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const WORD_DIM: usize = 50;
pub const DEFAULT_OOV_SEED: u64 = 0x5EED_0F0D;

#[derive(Debug, Error)]
pub enum WordVecError {
    #[error("cannot read word vectors: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug)]
pub struct WordVectorTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    oov_seed: u64,
    /// Per-dimension standard deviation of the table, used to scale OOV vectors.
    std: Vec<f64>,
}

static BUILTIN: OnceLock<WordVectorTable> = OnceLock::new();

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl WordVectorTable {
    pub fn builtin() -> &'static WordVectorTable {
        BUILTIN.get_or_init(|| {
            WordVectorTable::parse(include_str!("../../data/wordvecs.txt"), DEFAULT_OOV_SEED)
                .expect("bundled word vectors are valid")
        })
    }

    pub fn load(path: &Path, oov_seed: u64) -> Result<Self, WordVecError> {
        WordVectorTable::parse(&std::fs::read_to_string(path)?, oov_seed)
    }

    /// Parses `token v1 … vD` lines; every line must have the same width.
    pub fn parse(text: &str, oov_seed: u64) -> Result<Self, WordVecError> {
        let mut entries = HashMap::new();
        // Statistics are accumulated in file order; map order is not stable.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut dim = 0;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| WordVecError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if dim == 0 {
                dim = v.len();
            }
            if v.len() != dim || dim == 0 {
                return Err(WordVecError::Parse {
                    line: i + 1,
                    msg: format!("expected {dim} components, got {}", v.len()),
                });
            }
            if let Some(old) = entries.insert(token.to_string(), v.clone()) {
                let k = rows
                    .iter()
                    .position(|r| *r == old)
                    .expect("row of a stored entry");
                rows.remove(k);
            }
            rows.push(v);
        }
        if entries.is_empty() {
            return Err(WordVecError::Parse {
                line: 0,
                msg: "empty table".into(),
            });
        }
        let n = entries.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in &rows {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for v in &rows {
            for ((s, x), m) in std.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
        Ok(WordVectorTable {
            dim,
            entries,
            oov_seed,
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// The stored vector, or a fixed pseudo-random one for unknown tokens.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.entries.get(token) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.oov_seed);
        self.std
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * s
            })
            .collect()
    }
}

/// Sinusoidal position encoding for position `pos`.
pub fn position_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Word vector plus position encoding for each token, truncated to `max_len`.
pub fn encode_tokens(
    tokens: &[String],
    table: &WordVectorTable,
    max_len: Option<usize>,
) -> Vec<Vec<f64>> {
    let n = max_len.map_or(tokens.len(), |m| tokens.len().min(m));
    tokens[..n]
        .iter()
        .enumerate()
        .map(|(pos, tok)| {
            let mut v = table.vector(tok);
            for (x, p) in v.iter_mut().zip(position_encoding(pos, table.dim())) {
                *x += p;
            }
            v
        })
        .collect()
}

//! The exemplar store: embedded training utterances with their lifted
//! programs, an index over the embeddings, and the retrieval threshold τ.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ann::AnnIndex;
use super::calibrate::{calibrate_threshold, Calibration, ValidationQuery};
use super::{preprocess_lifted, ParserConfig};
use crate::embednet::{PairModel, WordVectorTable};
use crate::entity::LiftedUtterance;
use crate::par;
use crate::program::LiftedProgram;

const EMB_MAGIC: &[u8; 8] = b"DCMPEMB\0";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("store file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub utterance: LiftedUtterance,
    /// `utterance` after stop-word removal; what actually gets embedded.
    pub tokens: Vec<String>,
    pub program: LiftedProgram,
}

/// One retrieved lifted program and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub program: LiftedProgram,
    /// Store entries within τ that carry this program, nearest first.
    pub sources: Vec<usize>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarStore {
    entries: Vec<Exemplar>,
    embeddings: Vec<Vec<f64>>,
    index: AnnIndex,
    tau: f64,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u64,
    tau: f64,
    index: AnnIndex,
}

/// Embeds every utterance with `model` and builds a fresh index. τ starts at
/// `config.beta`; call [`ExemplarStore::calibrate`] to set it properly.
pub fn rebuild_index(
    dataset: &[(LiftedUtterance, LiftedProgram)],
    model: &PairModel,
    table: &WordVectorTable,
    config: &ParserConfig,
    version: u64,
) -> ExemplarStore {
    let entries: Vec<Exemplar> = dataset
        .iter()
        .map(|(f, q)| Exemplar {
            utterance: f.clone(),
            tokens: preprocess_lifted(f, config),
            program: q.clone(),
        })
        .collect();
    let embeddings = par::map(par::Exec::Parallel, &entries, |e| {
        model.embed(&e.tokens, table)
    });
    let index = AnnIndex::build(&embeddings, config.ann);
    ExemplarStore {
        entries,
        embeddings,
        index,
        tau: config.beta,
        version,
    }
}

impl ExemplarStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Exemplar] {
        &self.entries
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn index(&self) -> &AnnIndex {
        &self.index
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Same store with a different threshold, still clamped to `beta`.
    pub fn with_tau(mut self, tau: f64, beta: f64) -> Self {
        self.tau = tau.max(beta);
        self
    }

    /// Entries strictly within `radius` of `query`, nearest first.
    pub fn neighbours(&self, query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        self.index.range(&self.embeddings, query, radius)
    }

    /// The deduplicated lifted programs of every entry within τ of `query`,
    /// ordered by their nearest source. Empty means "not sure".
    pub fn parse_lifted(&self, query: &[f64]) -> Result<Vec<Retrieved>, StoreError> {
        if self.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let mut out: Vec<Retrieved> = Vec::new();
        for (id, d) in self.neighbours(query, self.tau) {
            let q = &self.entries[id].program;
            match out.iter_mut().find(|r| &r.program == q) {
                Some(r) => r.sources.push(id),
                None => out.push(Retrieved {
                    program: q.clone(),
                    sources: vec![id],
                    distance: d,
                }),
            }
        }
        Ok(out)
    }

    /// Sets τ by leave-one-out: each entry in `validation` is queried
    /// against the rest of the store.
    pub fn calibrate(
        &mut self,
        validation: impl IntoIterator<Item = usize>,
        config: &ParserConfig,
    ) -> Calibration {
        let programs: Vec<LiftedProgram> = self.entries.iter().map(|e| e.program.clone()).collect();
        let validation: Vec<ValidationQuery<'_>> = validation
            .into_iter()
            .map(|i| ValidationQuery {
                embedding: &self.embeddings[i],
                program: &programs[i],
                exclude: Some(i),
            })
            .collect();
        let cal = calibrate_threshold(
            &self.embeddings,
            &programs,
            &validation,
            config.target_precision,
            config.beta,
        );
        self.tau = cal.tau;
        cal
    }

    fn paths(dir: &Path, version: u64) -> [PathBuf; 3] {
        let stem = format!("store-v{version}");
        [
            dir.join(format!("{stem}.jsonl")),
            dir.join(format!("{stem}.emb")),
            dir.join(format!("{stem}.idx.json")),
        ]
    }

    /// Writes `store-v{k}.jsonl`, `store-v{k}.emb` and `store-v{k}.idx.json`.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let [jsonl, emb, idx] = Self::paths(dir, self.version);
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let mut lines = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut lines, e).expect("exemplar serializes");
            lines.push(b'\n');
        }
        fs::write(&jsonl, lines).map_err(io_err(&jsonl))?;

        let dim = self.embeddings.first().map_or(0, Vec::len);
        let mut bytes = Vec::with_capacity(16 + 8 * dim * self.len());
        bytes.extend_from_slice(EMB_MAGIC);
        bytes.extend_from_slice(&(self.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in self.embeddings.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&emb, bytes).map_err(io_err(&emb))?;

        let file = fs::File::create(&idx).map_err(io_err(&idx))?;
        let mut w = io::BufWriter::new(file);
        let header = IndexFile {
            version: self.version,
            tau: self.tau,
            index: self.index.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| StoreError::Io {
            path: idx.clone(),
            source: e.into(),
        })?;
        w.flush().map_err(io_err(&idx))
    }

    pub fn load(dir: &Path, version: u64) -> Result<Self, StoreError> {
        let [jsonl, emb, idx] = Self::paths(dir, version);
        let format = |path: &Path, message: String| StoreError::Format {
            path: path.to_path_buf(),
            message,
        };
        let read = |path: &Path| {
            fs::read(path).map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        };

        let mut entries = Vec::new();
        for line in read(&jsonl)?.lines() {
            let line = line.map_err(|source| StoreError::Io {
                path: jsonl.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str::<Exemplar>(&line)
                    .map_err(|e| format(&jsonl, e.to_string()))?,
            );
        }

        let bytes = read(&emb)?;
        if bytes.len() < 16 || &bytes[..8] != EMB_MAGIC {
            return Err(format(&emb, "bad header".into()));
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        if rows != entries.len() || bytes.len() != 16 + 8 * rows * cols {
            return Err(format(
                &emb,
                format!(
                    "{rows}x{cols} matrix does not match {} entries",
                    entries.len()
                ),
            ));
        }
        let flat: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let embeddings: Vec<Vec<f64>> = if cols == 0 {
            vec![Vec::new(); rows]
        } else {
            flat.chunks(cols).map(<[f64]>::to_vec).collect()
        };

        let header: IndexFile =
            serde_json::from_slice(&read(&idx)?).map_err(|e| format(&idx, e.to_string()))?;
        if header.version != version || header.index.len() != rows {
            return Err(format(&idx, "index does not match store".into()));
        }
        Ok(ExemplarStore {
            entries,
            embeddings,
            index: header.index,
            tau: header.tau,
            version,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{exact_range, seed_examples};

    fn store() -> ExemplarStore {
        let model = PairModel::init(3);
        rebuild_index(
            &seed_examples(),
            &model,
            WordVectorTable::builtin(),
            &ParserConfig::default(),
            1,
        )
    }

    #[test]
    fn seeds_build_a_44_entry_store_that_self_retrieves() {
        let s = store();
        assert_eq!(s.len(), 44);
        assert_eq!(s.tau(), 0.15);
        for (i, e) in s.entries().iter().enumerate() {
            let got = s.parse_lifted(&s.embeddings()[i]).unwrap();
            assert!(got
                .iter()
                .any(|r| r.program == e.program && r.sources.contains(&i)));
            assert_eq!(got[0].distance, 0.0);
        }
    }

    #[test]
    fn parse_lifted_deduplicates_and_matches_brute_force() {
        let s = store().with_tau(0.9, 0.15);
        let q = &s.embeddings()[0];
        let got = s.parse_lifted(q).unwrap();
        let exact = exact_range(s.embeddings(), q, 0.9);
        let n: usize = got.iter().map(|r| r.sources.len()).sum();
        assert_eq!(n, exact.len());
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                assert_ne!(a.program, b.program);
            }
        }
    }

    #[test]
    fn rebuilding_is_deterministic() {
        assert_eq!(store(), store());
    }

    #[test]
    fn empty_store_is_an_error() {
        let s = rebuild_index(
            &[],
            &PairModel::init(1),
            WordVectorTable::builtin(),
            &ParserConfig::default(),
            0,
        );
        assert!(matches!(
            s.parse_lifted(&[0.0; 32]),
            Err(StoreError::EmptyStore)
        ));
    }

    #[test]
    fn tau_never_drops_below_beta() {
        assert_eq!(store().with_tau(0.01, 0.15).tau(), 0.15);
        let mut s = store();
        let cal = s.calibrate(0..44, &ParserConfig::default());
        assert!(s.tau() >= 0.15 && cal.tau == s.tau());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store();
        s.calibrate(0..44, &ParserConfig::default());
        s.save(dir.path()).unwrap();
        for f in ["store-v1.jsonl", "store-v1.emb", "store-v1.idx.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(ExemplarStore::load(dir.path(), 1).unwrap(), s);
        assert!(ExemplarStore::load(dir.path(), 2).is_err());
    }
}

//! Exemplar-based lifted parsing: preprocessing, "and"-splitting, the
//! nearest-neighbour exemplar store and threshold calibration.

pub mod ann;
mod calibrate;
mod store;

use serde::Deserialize;

pub use ann::{exact_range, AnnConfig, AnnIndex};
pub use calibrate::{calibrate_threshold, precision_at, Calibration, ValidationQuery};
pub use store::{rebuild_index, Exemplar, ExemplarStore, Retrieved, StoreError};

use crate::entity::{tokenize, LiftedUtterance};
use crate::program::LiftedProgram;

/// Stop words removed before embedding.
pub const STOP_WORDS: [&str; 21] = [
    "the", "up", "down", "on", "off", "of", "in", "to", "then", "a", "an", "back", "front", "out",
    "from", "with", "inside", "outside", "below", "above", "top",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ParserConfig {
    /// Lower bound on τ.
    pub beta: f64,
    pub target_precision: f64,
    pub stop_words: Vec<String>,
    pub ann: AnnConfig,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            beta: 0.15,
            target_precision: 0.9,
            stop_words: STOP_WORDS.iter().map(|s| s.to_string()).collect(),
            ann: AnnConfig::default(),
        }
    }
}

/// Lowercase, split on whitespace/punctuation, drop stop words. `<obj>` survives.
pub fn preprocess(text: &str, config: &ParserConfig) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !config.stop_words.iter().any(|s| s == t))
        .collect()
}

pub fn preprocess_lifted(f: &LiftedUtterance, config: &ParserConfig) -> Vec<String> {
    f.tokens()
        .iter()
        .filter(|t| !config.stop_words.iter().any(|s| s == *t))
        .cloned()
        .collect()
}

/// Splits on the standalone word "and"; trims and drops empty pieces.
pub fn split_compositional(utterance: &str) -> Vec<String> {
    let mut parts = vec![Vec::new()];
    for word in utterance.split_whitespace() {
        let bare = word.trim_matches(|c: char| !c.is_alphanumeric());
        if bare.eq_ignore_ascii_case("and") {
            parts.push(Vec::new());
        } else {
            parts.last_mut().expect("non-empty").push(word);
        }
    }
    parts
        .into_iter()
        .map(|p| p.join(" ").trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

#[derive(Deserialize)]
struct SeedFile {
    version: u32,
    examples: Vec<SeedRow>,
}

#[derive(Deserialize)]
struct SeedRow {
    utterance: String,
    program: String,
}

/// The 44 lifted seed examples: paraphrases of the six primitive actions.
pub fn seed_examples() -> Vec<(LiftedUtterance, LiftedProgram)> {
    let file: SeedFile =
        serde_json::from_str(include_str!("../../data/seeds.json")).expect("bundled seeds parse");
    assert_eq!(file.version, 1, "seed file version");
    file.examples
        .into_iter()
        .map(|row| {
            let q = LiftedProgram::parse(&row.program).expect("bundled seed program parses");
            (LiftedUtterance::from_text(&row.utterance), q)
        })
        .collect()
}

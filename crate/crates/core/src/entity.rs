//! Entity abstraction and resolution.
//!
//! `abstract_utterance` replaces every object mention with `<obj>` using a
//! left-to-right longest match over the typical-name lexicon; `resolve` maps
//! the mentions back to object types, disambiguating shared names ("table")
//! by the physically closest instance.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{LiftedProgram, ObjType, Program, ProgramError};
use crate::world::{nearest_instance, Catalog, WorldState};

pub const SLOT_TOKEN: &str = "<obj>";
/// Refers to the held object, or else to the previous mention.
pub const PRONOUN: &str = "it";

/// Lowercases and splits on anything that is not a letter, digit or part of
/// the `<obj>` marker.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '<' || c == '>'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LiftedUtterance {
    tokens: Vec<String>,
}

impl LiftedUtterance {
    pub fn from_text(text: &str) -> Self {
        LiftedUtterance {
            tokens: tokenize(text),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn slot_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == SLOT_TOKEN).count()
    }
}

impl fmt::Display for LiftedUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectReference {
    pub surface: String,
    /// Slot index in the lifted utterance.
    pub position: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntityError {
    #[error("`{0}` is not a known object name")]
    UnknownReference(String),
    #[error("cannot lift a NOT_SURE program")]
    NotSure,
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// Typical name → object types, in catalog order.
#[derive(Clone, Debug)]
pub struct Lexicon {
    names: HashMap<Vec<String>, Vec<ObjType>>,
    max_words: usize,
}

impl Lexicon {
    pub fn from_catalog(catalog: &Catalog) -> Self {
        let mut names: HashMap<Vec<String>, Vec<ObjType>> = HashMap::new();
        for spec in &catalog.object_types {
            for name in &spec.typical_names {
                let key = tokenize(name);
                let types = names.entry(key).or_default();
                if !types.contains(&spec.name) {
                    types.push(spec.name.clone());
                }
            }
        }
        let max_words = names.keys().map(Vec::len).max().unwrap_or(1);
        Lexicon { names, max_words }
    }

    pub fn types_for(&self, surface: &str) -> Option<&[ObjType]> {
        self.names.get(&tokenize(surface)).map(Vec::as_slice)
    }

    fn matches(&self, words: &[String]) -> bool {
        words == [PRONOUN] || self.names.contains_key(words)
    }
}

/// Replaces object mentions with `<obj>`; references come back in textual order.
pub fn abstract_utterance(
    utterance: &str,
    lexicon: &Lexicon,
) -> (LiftedUtterance, Vec<ObjectReference>) {
    let words = tokenize(utterance);
    let mut tokens = Vec::with_capacity(words.len());
    let mut refs = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let longest = (1..=lexicon.max_words.min(words.len() - i))
            .rev()
            .find(|&n| lexicon.matches(&words[i..i + n]));
        match longest {
            Some(n) => {
                refs.push(ObjectReference {
                    surface: words[i..i + n].join(" "),
                    position: refs.len(),
                });
                tokens.push(SLOT_TOKEN.to_string());
                i += n;
            }
            None => {
                tokens.push(words[i].clone());
                i += 1;
            }
        }
    }
    (LiftedUtterance { tokens }, refs)
}

/// Grounds references to types. `antecedent` is the last type mentioned
/// before these references (e.g. in an earlier "and"-clause). "it" takes the
/// most recent mention, falling back to the held object.
pub fn resolve(
    refs: &[ObjectReference],
    state: &WorldState,
    lexicon: &Lexicon,
    antecedent: Option<&ObjType>,
) -> Result<Vec<ObjType>, EntityError> {
    let mut out: Vec<ObjType> = Vec::with_capacity(refs.len());
    for r in refs {
        let ty = if r.surface == PRONOUN {
            out.last()
                .or(antecedent)
                .cloned()
                .or_else(|| state.held_object().map(|o| o.object_type.clone()))
                .ok_or_else(|| EntityError::UnknownReference(r.surface.clone()))?
        } else {
            let types = lexicon
                .types_for(&r.surface)
                .ok_or_else(|| EntityError::UnknownReference(r.surface.clone()))?;
            if types.len() == 1 {
                types[0].clone()
            } else {
                let present: Vec<ObjType> = types
                    .iter()
                    .filter(|t| state.contains_type(t))
                    .cloned()
                    .collect();
                match nearest_instance(state, &present) {
                    Ok(inst) => inst.object_type.clone(),
                    Err(_) => types[0].clone(),
                }
            }
        };
        out.push(ty);
    }
    Ok(out)
}

/// Lifts a taught example: types mentioned in the utterance become slots,
/// all other program arguments stay concrete.
pub fn lift_example(
    utterance: &str,
    program: &Program,
    state: &WorldState,
    lexicon: &Lexicon,
) -> Result<(LiftedUtterance, LiftedProgram, Vec<ObjType>), EntityError> {
    if program.is_not_sure() {
        return Err(EntityError::NotSure);
    }
    let (lifted, refs) = abstract_utterance(utterance, lexicon);
    let grounding = resolve(&refs, state, lexicon, None)?;
    let q = LiftedProgram::lift(program.actions(), &grounding)?;
    Ok((lifted, q, grounding))
}

//! Utterance + state → one executable program, or NOT_SURE.
//!
//! split on "and" → per clause: abstract, resolve, preprocess, retrieve →
//! cross-product of clause programs → combine → executability filter →
//! reranker.

use serde::{Deserialize, Serialize};

use crate::embednet::{state_features, PairModel, Reranker, WordVectorTable, STATE_FEATURES};
use crate::entity::{abstract_utterance, resolve, Lexicon};
use crate::parser::{preprocess_lifted, split_compositional, ExemplarStore, ParserConfig};
use crate::program::{LiftedProgram, ObjType, Program};
use crate::world::{Catalog, WorldState};

/// Upper bound on the cross-product size; larger products are truncated.
pub const MAX_CANDIDATES: usize = 512;

/// Static inputs shared by every interpretation: catalog, lexicon, word
/// vectors and parser settings.
#[derive(Clone, Debug)]
pub struct Resources {
    pub catalog: Catalog,
    pub lexicon: Lexicon,
    pub table: WordVectorTable,
    pub parser: ParserConfig,
}

impl Resources {
    pub fn new(catalog: Catalog, table: WordVectorTable, parser: ParserConfig) -> Self {
        let lexicon = Lexicon::from_catalog(&catalog);
        Resources {
            catalog,
            lexicon,
            table,
            parser,
        }
    }

    pub fn builtin() -> Self {
        Resources::new(
            Catalog::builtin().clone(),
            WordVectorTable::builtin().clone(),
            ParserConfig::default(),
        )
    }
}

/// The learned half of a user's model: embedder, exemplar store, reranker.
#[derive(Clone, Debug, PartialEq)]
pub struct Parser {
    pub embedder: PairModel,
    pub store: ExemplarStore,
    pub reranker: Reranker,
}

/// Where a candidate came from: one lifted program and its source exemplars
/// per clause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub lifted: Vec<LiftedProgram>,
    pub sources: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub program: Program,
    /// Every derivation that produced this program.
    pub provenance: Vec<Provenance>,
}

/// Deduplicated grounded candidates; never contains NOT_SURE.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn programs(&self) -> Vec<Program> {
        self.candidates.iter().map(|c| c.program.clone()).collect()
    }

    /// Adds a derivation, merging with an existing equal program.
    pub fn insert(&mut self, program: Program, provenance: Provenance) {
        if program.is_not_sure() {
            return;
        }
        match self.candidates.iter_mut().find(|c| c.program == program) {
            Some(c) => {
                if !c.provenance.contains(&provenance) {
                    c.provenance.push(provenance)
                }
            }
            None => self.candidates.push(Candidate {
                program,
                provenance: vec![provenance],
            }),
        }
    }
}

/// Keeps the candidates whose whole action sequence runs from `state`.
pub fn executability_filter(candidates: &CandidateSet, state: &WorldState) -> CandidateSet {
    CandidateSet {
        candidates: candidates
            .candidates
            .iter()
            .filter(|c| state.can_execute(c.program.actions()))
            .cloned()
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NotSureReason {
    EmptyUtterance,
    UnresolvedReference { clause: usize, message: String },
    NoExemplar { clause: usize },
    ArityMismatch { clause: usize },
    NothingExecutable,
}

/// What the parser saw for one "and"-clause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseParse {
    pub text: String,
    pub lifted: String,
    pub tokens: Vec<String>,
    pub grounding: Vec<ObjType>,
    /// Nearest exemplar distance (even when beyond τ), for diagnostics.
    pub nearest: Option<f64>,
    pub retrieved: Vec<LiftedProgram>,
}

/// Result of [`Parser::interpret`], with everything a log or a reranker
/// training tuple needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub program: Program,
    pub not_sure: Option<NotSureReason>,
    pub clauses: Vec<ClauseParse>,
    /// Combined candidates before the executability filter.
    pub combined: CandidateSet,
    /// The executable candidates the reranker chose from.
    pub executable: CandidateSet,
    /// Preprocessed lifted tokens of the whole utterance (reranker input).
    pub rerank_tokens: Vec<String>,
    pub state_features: Vec<f64>,
}

impl Interpretation {
    fn refuse(reason: NotSureReason, clauses: Vec<ClauseParse>) -> Self {
        Interpretation {
            program: Program::NotSure,
            not_sure: Some(reason),
            clauses,
            combined: CandidateSet::default(),
            executable: CandidateSet::default(),
            rerank_tokens: Vec::new(),
            state_features: Vec::new(),
        }
    }

    pub fn features(&self) -> [f64; STATE_FEATURES] {
        let mut f = [0.0; STATE_FEATURES];
        for (a, b) in f.iter_mut().zip(&self.state_features) {
            *a = *b;
        }
        f
    }
}

/// Grounded options for one clause: each combinable lifted program with
/// its store sources.
type ClauseOptions = Vec<(Program, LiftedProgram, Vec<usize>)>;

impl Parser {
    pub fn interpret(
        &self,
        utterance: &str,
        state: &WorldState,
        res: &Resources,
    ) -> Interpretation {
        let pieces = split_compositional(utterance);
        if pieces.is_empty() {
            return Interpretation::refuse(NotSureReason::EmptyUtterance, Vec::new());
        }

        let mut clauses = Vec::with_capacity(pieces.len());
        let mut options: Vec<ClauseOptions> = Vec::with_capacity(pieces.len());
        let mut antecedent: Option<ObjType> = None;
        let mut all_tokens = Vec::new();
        let mut all_grounding = Vec::new();
        for (k, text) in pieces.iter().enumerate() {
            let (lifted, refs) = abstract_utterance(text, &res.lexicon);
            let tokens = preprocess_lifted(&lifted, &res.parser);
            let mut clause = ClauseParse {
                text: text.clone(),
                lifted: lifted.to_string(),
                tokens: tokens.clone(),
                grounding: Vec::new(),
                nearest: None,
                retrieved: Vec::new(),
            };
            let grounding = match resolve(&refs, state, &res.lexicon, antecedent.as_ref()) {
                Ok(g) => g,
                Err(e) => {
                    clauses.push(clause);
                    return Interpretation::refuse(
                        NotSureReason::UnresolvedReference {
                            clause: k,
                            message: e.to_string(),
                        },
                        clauses,
                    );
                }
            };
            if let Some(last) = grounding.last() {
                antecedent = Some(last.clone());
            }
            clause.grounding = grounding.clone();

            let query = self.embedder.embed(&tokens, &res.table);
            clause.nearest = self
                .store
                .neighbours(&query, f64::INFINITY)
                .first()
                .map(|n| n.1);
            let retrieved = self.store.parse_lifted(&query).unwrap_or_default();
            clause.retrieved = retrieved.iter().map(|r| r.program.clone()).collect();
            if retrieved.is_empty() {
                clauses.push(clause);
                return Interpretation::refuse(NotSureReason::NoExemplar { clause: k }, clauses);
            }
            let opts: ClauseOptions = retrieved
                .into_iter()
                .filter_map(|r| {
                    let p = r.program.combine(&grounding).ok()?;
                    Some((p, r.program, r.sources))
                })
                .collect();
            clauses.push(clause);
            if opts.is_empty() {
                return Interpretation::refuse(NotSureReason::ArityMismatch { clause: k }, clauses);
            }
            options.push(opts);
            all_tokens.extend(tokens);
            all_grounding.extend(grounding);
        }

        let combined = cross_product(&options);
        let executable = executability_filter(&combined, state);
        let features = state_features(state, &all_grounding);
        let programs = executable.programs();
        let chosen = self
            .reranker
            .choose(&all_tokens, &features, &programs, &res.table);
        let (program, not_sure) = match chosen {
            Some(i) => (programs[i].clone(), None),
            None => (Program::NotSure, Some(NotSureReason::NothingExecutable)),
        };
        Interpretation {
            program,
            not_sure,
            clauses,
            combined,
            executable,
            rerank_tokens: all_tokens,
            state_features: features.to_vec(),
        }
    }
}

/// Concatenates one option per clause, in clause order, for every choice.
fn cross_product(options: &[ClauseOptions]) -> CandidateSet {
    let mut partial: Vec<Vec<usize>> = vec![Vec::new()];
    for opts in options {
        let mut next = Vec::with_capacity(partial.len() * opts.len());
        'outer: for choice in &partial {
            for j in 0..opts.len() {
                if next.len() >= MAX_CANDIDATES {
                    log::warn!("candidate cross-product truncated at {MAX_CANDIDATES}");
                    break 'outer;
                }
                let mut c = choice.clone();
                c.push(j);
                next.push(c);
            }
        }
        partial = next;
    }
    let mut set = CandidateSet::default();
    for choice in partial {
        let mut actions = Vec::new();
        let mut provenance = Provenance {
            lifted: Vec::new(),
            sources: Vec::new(),
        };
        for (k, &j) in choice.iter().enumerate() {
            let (p, q, src) = &options[k][j];
            actions.extend_from_slice(p.actions());
            provenance.lifted.push(q.clone());
            provenance.sources.push(src.clone());
        }
        if let Ok(program) = Program::from_actions(actions) {
            set.insert(program, provenance);
        }
    }
    set
}

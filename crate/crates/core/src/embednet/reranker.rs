//! State-aware reranker: scores each grounded candidate program from
//! separate embeddings of the utterance, the world state and the program.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    encode_tokens, glorot, ModelError, TrainConfig, TrainError, TrainReport, WordVectorTable,
    WORD_DIM,
};
use crate::nn::{NodeId, Params, Slot, Tape};
use crate::par;
use crate::program::{ObjType, Program};
use crate::world::{nearest_instance, WorldState};

const FEATURES_PER_OBJECT: usize = 9;
const STATE_OBJECTS: usize = 2;
pub const STATE_FEATURES: usize = FEATURES_PER_OBJECT * STATE_OBJECTS;
const STATE_DIM: usize = 16;
const HEAD_HIDDEN: usize = 64;
const HEAD_IN: usize = WORD_DIM * 2 + STATE_DIM;

/// Feature bag for the first two grounded types (nearest instance of each):
/// visible, toggled, open, pickable, receptacle, held, dirty, hot, cold.
/// Missing objects are zero-padded.
pub fn state_features(state: &WorldState, grounding: &[ObjType]) -> [f64; STATE_FEATURES] {
    let mut out = [0.0; STATE_FEATURES];
    for (k, ty) in grounding.iter().take(STATE_OBJECTS).enumerate() {
        let Ok(obj) = nearest_instance(state, std::slice::from_ref(ty)) else {
            continue;
        };
        let f = &obj.features;
        let bits = [
            f.visible,
            f.toggled,
            f.open,
            obj.affordances.pickable,
            obj.affordances.receptacle,
            f.is_held,
            f.dirty,
            f.hot,
            f.cold,
        ];
        for (i, b) in bits.into_iter().enumerate() {
            out[k * FEATURES_PER_OBJECT + i] = if b { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Lowercased template keywords and argument type names.
pub fn program_tokens(program: &Program) -> Vec<String> {
    program
        .actions()
        .iter()
        .flat_map(|a| {
            std::iter::once(a.template().keyword().to_lowercase())
                .chain(a.args().into_iter().map(|t| t.as_str().to_lowercase()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Slots {
    utt_w: Slot,
    utt_b: Slot,
    prog_w: Slot,
    prog_b: Slot,
    state_w: Slot,
    state_b: Slot,
    head_w: Slot,
    head_b: Slot,
    out_w: Slot,
    out_b: Slot,
}

impl Slots {
    fn find(p: &Params) -> Option<Slots> {
        let s = |n: &str| p.slot(n);
        let slots = Slots {
            utt_w: s("rerank.utt_w")?,
            utt_b: s("rerank.utt_b")?,
            prog_w: s("rerank.prog_w")?,
            prog_b: s("rerank.prog_b")?,
            state_w: s("rerank.state_w")?,
            state_b: s("rerank.state_b")?,
            head_w: s("rerank.head_w")?,
            head_b: s("rerank.head_b")?,
            out_w: s("rerank.out_w")?,
            out_b: s("rerank.out_b")?,
        };
        let ok = slots.utt_w.cols == WORD_DIM
            && slots.utt_w.rows == WORD_DIM
            && slots.prog_w.cols == WORD_DIM
            && slots.prog_w.rows == WORD_DIM
            && slots.state_w.cols == STATE_FEATURES
            && slots.state_w.rows == STATE_DIM
            && slots.head_w.cols == HEAD_IN
            && slots.head_w.rows == HEAD_HIDDEN
            && slots.out_w.cols == HEAD_HIDDEN
            && slots.out_w.rows == 1;
        ok.then_some(slots)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reranker {
    pub params: Params,
    slots: Slots,
}

/// One training tuple: the gold program must be among the candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct RerankExample {
    /// Preprocessed utterance tokens.
    pub utterance: Vec<String>,
    pub state: [f64; STATE_FEATURES],
    pub candidates: Vec<Program>,
    pub gold: Program,
}

struct Encoded {
    utterance: Vec<Vec<f64>>,
    state: Vec<f64>,
    candidates: Vec<Vec<Vec<f64>>>,
    gold: usize,
}

impl Reranker {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.push(
            "rerank.utt_w",
            WORD_DIM,
            WORD_DIM,
            glorot(&mut rng, WORD_DIM),
        );
        p.push("rerank.utt_b", WORD_DIM, 1, || 0.0);
        p.push(
            "rerank.prog_w",
            WORD_DIM,
            WORD_DIM,
            glorot(&mut rng, WORD_DIM),
        );
        p.push("rerank.prog_b", WORD_DIM, 1, || 0.0);
        p.push(
            "rerank.state_w",
            STATE_DIM,
            STATE_FEATURES,
            glorot(&mut rng, STATE_FEATURES),
        );
        p.push("rerank.state_b", STATE_DIM, 1, || 0.0);
        p.push(
            "rerank.head_w",
            HEAD_HIDDEN,
            HEAD_IN,
            glorot(&mut rng, HEAD_IN),
        );
        p.push("rerank.head_b", HEAD_HIDDEN, 1, || 0.0);
        p.push(
            "rerank.out_w",
            1,
            HEAD_HIDDEN,
            glorot(&mut rng, HEAD_HIDDEN),
        );
        p.push("rerank.out_b", 1, 1, || 0.0);
        Reranker::from_params(p).expect("fresh layout")
    }

    pub fn from_params(params: Params) -> Result<Self, ModelError> {
        let slots = Slots::find(&params).ok_or(ModelError::Layout)?;
        Ok(Reranker { params, slots })
    }

    fn encode_seq(&self, tape: &mut Tape<'_>, inputs: &[Vec<f64>], w: Slot, b: Slot) -> NodeId {
        if inputs.is_empty() {
            return tape.input(vec![0.0; WORD_DIM]);
        }
        let hs: Vec<NodeId> = inputs
            .iter()
            .map(|x| {
                let x = tape.input(x.clone());
                let h = tape.affine(x, w, b);
                tape.tanh(h)
            })
            .collect();
        tape.add(&hs)
    }

    fn score_nodes(
        &self,
        tape: &mut Tape<'_>,
        utterance: &[Vec<f64>],
        state: &[f64],
        candidates: &[Vec<Vec<f64>>],
    ) -> Vec<NodeId> {
        let s = &self.slots;
        let u = self.encode_seq(tape, utterance, s.utt_w, s.utt_b);
        let st = tape.input(state.to_vec());
        let st = tape.affine(st, s.state_w, s.state_b);
        candidates
            .iter()
            .map(|c| {
                let p = self.encode_seq(tape, c, s.prog_w, s.prog_b);
                let x = tape.concat(&[u, p, st]);
                let h = tape.affine(x, s.head_w, s.head_b);
                let h = tape.tanh(h);
                tape.affine(h, s.out_w, s.out_b)
            })
            .collect()
    }

    /// One score per candidate.
    pub fn score(
        &self,
        utterance: &[String],
        state: &[f64; STATE_FEATURES],
        candidates: &[Program],
        table: &WordVectorTable,
    ) -> Vec<f64> {
        let u = encode_tokens(utterance, table, None);
        let c: Vec<_> = candidates
            .iter()
            .map(|p| encode_tokens(&program_tokens(p), table, None))
            .collect();
        let mut tape = Tape::new(&self.params);
        let nodes = self.score_nodes(&mut tape, &u, state, &c);
        nodes.iter().map(|&n| tape.scalar(n)).collect()
    }

    /// Index of the best-scoring candidate (first on ties).
    pub fn choose(
        &self,
        utterance: &[String],
        state: &[f64; STATE_FEATURES],
        candidates: &[Program],
        table: &WordVectorTable,
    ) -> Option<usize> {
        match candidates.len() {
            0 => None,
            1 => Some(0),
            _ => {
                let scores = self.score(utterance, state, candidates, table);
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                Some(best)
            }
        }
    }
}

fn encode_example(ex: &RerankExample, table: &WordVectorTable) -> Result<Encoded, TrainError> {
    let gold = ex
        .candidates
        .iter()
        .position(|c| *c == ex.gold)
        .ok_or_else(|| TrainError::GoldNotInCandidates(ex.utterance.join(" ")))?;
    Ok(Encoded {
        utterance: encode_tokens(&ex.utterance, table, None),
        state: ex.state.to_vec(),
        candidates: ex
            .candidates
            .iter()
            .map(|p| encode_tokens(&program_tokens(p), table, None))
            .collect(),
        gold,
    })
}

fn tuple_loss(model: &Reranker, ex: &Encoded, seed: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut tape = Tape::new(&model.params);
    let scores = model.score_nodes(&mut tape, &ex.utterance, &ex.state, &ex.candidates);
    let loss = tape.softmax_xent(&scores, ex.gold);
    if let Some(g) = grad {
        tape.backward(loss, &[seed], g);
    }
    tape.scalar(loss)
}

fn batch_loss(model: &Reranker, batch: &[&Encoded], exec: par::Exec) -> (f64, Vec<f64>) {
    let inv = 1.0 / batch.len() as f64;
    let parts = par::map(exec, batch, |ex| {
        let mut g = vec![0.0; model.params.len()];
        let l = tuple_loss(model, ex, inv, Some(&mut g));
        (l, g)
    });
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l * inv;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// Mean cross-entropy over `dataset` and its gradient.
pub fn rerank_loss(
    model: &Reranker,
    dataset: &[RerankExample],
    table: &WordVectorTable,
    exec: par::Exec,
) -> Result<(f64, Vec<f64>), TrainError> {
    let enc = dataset
        .iter()
        .map(|e| encode_example(e, table))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Encoded> = enc.iter().collect();
    if refs.is_empty() {
        return Ok((0.0, vec![0.0; model.params.len()]));
    }
    Ok(batch_loss(model, &refs, exec))
}

/// Softmax cross-entropy training from a fresh initialisation. An empty
/// dataset returns the initial parameters.
pub fn train_reranker(
    dataset: &[RerankExample],
    table: &WordVectorTable,
    config: &TrainConfig,
) -> Result<(Reranker, TrainReport), TrainError> {
    let enc = dataset
        .iter()
        .map(|e| encode_example(e, table))
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = Reranker::init(config.rng_seed);
    let mut report = TrainReport::default();
    if enc.is_empty() {
        return Ok((model, report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5EAC);
    let mut order: Vec<&Encoded> = enc.iter().collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let (_, grad) = batch_loss(&model, batch, config.exec);
            model.params.sgd_step(&grad, config.learning_rate);
        }
        if !model.params.is_finite() {
            return Err(TrainError::Diverged);
        }
        let all: Vec<&Encoded> = enc.iter().collect();
        let losses = par::map(config.exec, &all, |ex| tuple_loss(&model, ex, 1.0, None));
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        report.loss_history.push(loss);
        report.epochs_run += 1;
        if loss <= config.early_stop_loss {
            break;
        }
    }
    Ok((model, report))
}

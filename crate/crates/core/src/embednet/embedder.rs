//! Utterance embedder φ and the pair classifier σ(a·cos(φ(f), φ(f′)) + b).
//!
//! φ: each token's word vector plus position encoding goes through a shared
//! tanh affine map; the results are summed and passed through a two-layer
//! MLP whose output is L2-normalised.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    encode_tokens, glorot, ModelError, TrainConfig, TrainError, TrainReport, WordVectorTable,
    WORD_DIM,
};
use crate::nn::{sigmoid, softplus, NodeId, Params, Slot, Tape};
use crate::par;
use crate::program::LiftedProgram;

pub const HIDDEN_DIM: usize = 64;
pub const EMBED_DIM: usize = 32;
pub const MAX_LEN: usize = 32;
pub const INIT_A: f64 = 5.0;
pub const INIT_B: f64 = -2.5;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Slots {
    w_in: Slot,
    b_in: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
    a: Slot,
    b: Slot,
}

impl Slots {
    fn find(p: &Params) -> Option<Slots> {
        let s = |n: &str| p.slot(n);
        let slots = Slots {
            w_in: s("embed.w_in")?,
            b_in: s("embed.b_in")?,
            w1: s("embed.w1")?,
            b1: s("embed.b1")?,
            w2: s("embed.w2")?,
            b2: s("embed.b2")?,
            a: s("pair.a")?,
            b: s("pair.b")?,
        };
        let shapes_ok = slots.w_in.rows == WORD_DIM
            && slots.w_in.cols == WORD_DIM
            && slots.w1.rows == HIDDEN_DIM
            && slots.w1.cols == WORD_DIM
            && slots.w2.rows == EMBED_DIM
            && slots.w2.cols == HIDDEN_DIM
            && slots.b_in.len() == WORD_DIM
            && slots.b1.len() == HIDDEN_DIM
            && slots.b2.len() == EMBED_DIM
            && slots.a.len() == 1
            && slots.b.len() == 1;
        shapes_ok.then_some(slots)
    }
}

/// Embedder and pair-classifier parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PairModel {
    pub params: Params,
    slots: Slots,
}

impl PairModel {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.push("embed.w_in", WORD_DIM, WORD_DIM, glorot(&mut rng, WORD_DIM));
        p.push("embed.b_in", WORD_DIM, 1, || 0.0);
        p.push("embed.w1", HIDDEN_DIM, WORD_DIM, glorot(&mut rng, WORD_DIM));
        p.push("embed.b1", HIDDEN_DIM, 1, || 0.0);
        p.push(
            "embed.w2",
            EMBED_DIM,
            HIDDEN_DIM,
            glorot(&mut rng, HIDDEN_DIM),
        );
        p.push("embed.b2", EMBED_DIM, 1, || 0.0);
        p.push("pair.a", 1, 1, || INIT_A);
        p.push("pair.b", 1, 1, || INIT_B);
        PairModel::from_params(p).expect("fresh layout")
    }

    pub fn from_params(params: Params) -> Result<Self, ModelError> {
        let slots = Slots::find(&params).ok_or(ModelError::Layout)?;
        Ok(PairModel { params, slots })
    }

    pub fn a(&self) -> f64 {
        self.params.data[self.slots.a.offset]
    }

    pub fn b(&self) -> f64 {
        self.params.data[self.slots.b.offset]
    }

    /// Records φ on `tape` for pre-encoded token inputs.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &[Vec<f64>]) -> NodeId {
        let s = &self.slots;
        let summed = if inputs.is_empty() {
            tape.input(vec![0.0; WORD_DIM])
        } else {
            let hs: Vec<NodeId> = inputs
                .iter()
                .map(|x| {
                    let x = tape.input(x.clone());
                    let h = tape.affine(x, s.w_in, s.b_in);
                    tape.tanh(h)
                })
                .collect();
            tape.add(&hs)
        };
        let h = tape.affine(summed, s.w1, s.b1);
        let h = tape.tanh(h);
        let o = tape.affine(h, s.w2, s.b2);
        tape.normalize(o)
    }

    pub fn embed_inputs(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, inputs);
        tape.value(out).to_vec()
    }

    /// φ(f) for a preprocessed token sequence (truncated to `MAX_LEN`).
    pub fn embed(&self, tokens: &[String], table: &WordVectorTable) -> Vec<f64> {
        self.embed_inputs(&encode_tokens(tokens, table, Some(MAX_LEN)))
    }

    pub fn probability_from_cos(&self, cos: f64) -> f64 {
        sigmoid(self.a() * cos + self.b())
    }

    pub fn pair_probability(&self, f: &[String], g: &[String], table: &WordVectorTable) -> f64 {
        let ef = self.embed(f, table);
        let eg = self.embed(g, table);
        self.probability_from_cos(dot(&ef, &eg))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One training pair: indices into the unique-utterance input list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub left: usize,
    pub right: usize,
    pub same: bool,
}

/// Mean BCE over `batch` and its gradient. Each distinct utterance gets its
/// own tape; their backward passes run independently and are summed in a
/// fixed order, so the result does not depend on `exec`.
pub fn pair_batch_loss(
    model: &PairModel,
    inputs: &[Vec<Vec<f64>>],
    batch: &[PairSample],
    exec: par::Exec,
) -> (f64, Vec<f64>) {
    let mut uids: Vec<usize> = batch.iter().flat_map(|p| [p.left, p.right]).collect();
    uids.sort_unstable();
    uids.dedup();
    let tapes: Vec<(Tape<'_>, NodeId)> = par::map(exec, &uids, |&u| {
        let mut t = Tape::new(&model.params);
        let out = model.forward(&mut t, &inputs[u]);
        (t, out)
    });
    let at = |u: usize| uids.binary_search(&u).expect("uid in batch");
    let (a, b) = (model.a(), model.b());
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut seeds = vec![vec![0.0; EMBED_DIM]; uids.len()];
    let mut loss = 0.0;
    for p in batch {
        let (i, j) = (at(p.left), at(p.right));
        let (ei, ej) = (tapes[i].0.value(tapes[i].1), tapes[j].0.value(tapes[j].1));
        let y = if p.same { 1.0 } else { 0.0 };
        let c = dot(ei, ej);
        let z = a * c + b;
        loss += softplus(z) - y * z;
        let dz = (sigmoid(z) - y) * inv;
        grad[model.slots.a.offset] += dz * c;
        grad[model.slots.b.offset] += dz;
        let (ei, ej) = (ei.to_vec(), ej.to_vec());
        for (s, e) in seeds[i].iter_mut().zip(&ej) {
            *s += dz * a * e;
        }
        for (s, e) in seeds[j].iter_mut().zip(&ei) {
            *s += dz * a * e;
        }
    }
    let parts = par::map_range(exec, uids.len(), |k| {
        let mut g = vec![0.0; model.params.len()];
        tapes[k].0.backward(tapes[k].1, &seeds[k], &mut g);
        g
    });
    for part in parts {
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    (loss * inv, grad)
}

/// Same loss and gradient computed on a single tape; used to cross-check
/// the split computation.
pub fn pair_batch_loss_single_tape(
    model: &PairModel,
    inputs: &[Vec<Vec<f64>>],
    batch: &[PairSample],
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new(&model.params);
    let mut emb: HashMap<usize, NodeId> = HashMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    for p in batch {
        for u in [p.left, p.right] {
            if let std::collections::hash_map::Entry::Vacant(slot) = emb.entry(u) {
                slot.insert(model.forward(&mut tape, &inputs[u]));
            }
        }
        let c = tape.dot(emb[&p.left], emb[&p.right]);
        let z = tape.scale_shift(c, model.slots.a, model.slots.b);
        losses.push(tape.bce_logits(z, if p.same { 1.0 } else { 0.0 }));
    }
    let loss = tape.mean(&losses);
    let mut grad = vec![0.0; model.params.len()];
    tape.backward(loss, &[1.0], &mut grad);
    (tape.scalar(loss), grad)
}

/// Class-balanced BCE over all pairs: the expected loss of a balanced batch.
pub fn balanced_bce(
    model: &PairModel,
    inputs: &[Vec<Vec<f64>>],
    pos: &[PairSample],
    neg: &[PairSample],
    exec: par::Exec,
) -> f64 {
    let emb = par::map(exec, inputs, |x| model.embed_inputs(x));
    let mean = |pairs: &[PairSample]| {
        if pairs.is_empty() {
            return 0.0;
        }
        pairs
            .iter()
            .map(|p| {
                let z = model.a() * dot(&emb[p.left], &emb[p.right]) + model.b();
                softplus(z) - if p.same { z } else { 0.0 }
            })
            .sum::<f64>()
            / pairs.len() as f64
    };
    0.5 * mean(pos) + 0.5 * mean(neg)
}

struct PairData {
    inputs: Vec<Vec<Vec<f64>>>,
    pos: Vec<PairSample>,
    neg: Vec<PairSample>,
}

fn build_pairs(dataset: &[(Vec<String>, LiftedProgram)], table: &WordVectorTable) -> PairData {
    let mut examples: Vec<&(Vec<String>, LiftedProgram)> = Vec::new();
    for ex in dataset {
        if !examples.contains(&ex) {
            examples.push(ex);
        }
    }
    let mut uid_of: HashMap<&[String], usize> = HashMap::new();
    let mut inputs = Vec::new();
    let uids: Vec<usize> = examples
        .iter()
        .map(|(tokens, _)| {
            *uid_of.entry(tokens.as_slice()).or_insert_with(|| {
                inputs.push(encode_tokens(tokens, table, Some(MAX_LEN)));
                inputs.len() - 1
            })
        })
        .collect();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..examples.len() {
        for j in i..examples.len() {
            let same = examples[i].1 == examples[j].1;
            let sample = PairSample {
                left: uids[i],
                right: uids[j],
                same,
            };
            if same {
                pos.push(sample)
            } else {
                neg.push(sample)
            }
        }
    }
    PairData { inputs, pos, neg }
}

/// Trains φ, a and b from scratch on all pairs of `dataset` (tokens are
/// preprocessed lifted utterances). Batches hold equal numbers of positive
/// and negative pairs; the minority class is cycled to fill them.
pub fn train_pair_classifier(
    dataset: &[(Vec<String>, LiftedProgram)],
    table: &WordVectorTable,
    config: &TrainConfig,
) -> Result<(PairModel, TrainReport), TrainError> {
    let data = build_pairs(dataset, table);
    if data.pos.is_empty() {
        return Err(TrainError::DegenerateDataset("positive"));
    }
    if data.neg.is_empty() {
        return Err(TrainError::DegenerateDataset("negative"));
    }
    let mut model = PairModel::init(config.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0xA11CE);
    let (mut pos, mut neg) = (data.pos.clone(), data.neg.clone());
    let half = (config.batch_size / 2).max(1);
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let batches = pos.len().max(neg.len()).div_ceil(half);
        for k in 0..batches {
            let batch: Vec<PairSample> = (0..half)
                .flat_map(|t| {
                    [
                        pos[(k * half + t) % pos.len()],
                        neg[(k * half + t) % neg.len()],
                    ]
                })
                .collect();
            let (_, grad) = pair_batch_loss(&model, &data.inputs, &batch, config.exec);
            model.params.sgd_step(&grad, config.learning_rate);
        }
        if !model.params.is_finite() {
            return Err(TrainError::Diverged);
        }
        let loss = balanced_bce(&model, &data.inputs, &data.pos, &data.neg, config.exec);
        report.loss_history.push(loss);
        report.epochs_run += 1;
        if loss <= config.early_stop_loss {
            break;
        }
    }
    log::debug!(
        "pair classifier: {} epochs, loss {:?}, a={:.3} b={:.3}",
        report.epochs_run,
        report.final_loss(),
        model.a(),
        model.b()
    );
    Ok((model, report))
}

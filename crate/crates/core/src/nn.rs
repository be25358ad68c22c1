//! A tiny reverse-mode differentiation tape over f64 vectors.
//!
//! Parameters live in one flat `Vec<f64>` described by named tensor slots.
//! A [`Tape`] records a forward computation that reads parameters by slot;
//! [`Tape::backward`] accumulates the gradient of one output node into a
//! flat gradient buffer of the same layout. `backward` takes an explicit
//! seed so a computation can be split across tapes (one per utterance) and
//! the pieces differentiated independently.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Handle to a contiguous tensor in a [`Params`] buffer (row-major).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    specs: Vec<TensorSpec>,
    pub data: Vec<f64>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows × cols` tensor initialised by `init`.
    pub fn push(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> Slot {
        let offset = self.data.len();
        self.data.extend((0..rows * cols).map(|_| init()));
        self.specs.push(TensorSpec {
            name: name.to_string(),
            shape: [rows, cols],
        });
        Slot { offset, rows, cols }
    }

    pub fn slot(&self, name: &str) -> Option<Slot> {
        let mut offset = 0;
        for spec in &self.specs {
            let [rows, cols] = spec.shape;
            if spec.name == name {
                return Some(Slot { offset, rows, cols });
            }
            offset += rows * cols;
        }
        None
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn get(&self, slot: Slot) -> &[f64] {
        &self.data[slot.range()]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.data.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            dtype: "f64le".into(),
            tensors: self.specs.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Params, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        if header.version != CHECKPOINT_VERSION || header.dtype != "f64le" {
            return Err(CheckpointError::Format(format!(
                "unsupported checkpoint v{} {}",
                header.version, header.dtype
            )));
        }
        let n: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Params {
            specs: header.tensors,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Params, CheckpointError> {
        Params::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Same tensor names and shapes.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.specs == other.specs
    }
}

const MAGIC: &[u8; 8] = b"DCMPPRM\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Input,
    /// `W·x + b` with `W` a `rows × cols` slot.
    Affine {
        x: NodeId,
        w: Slot,
        b: Slot,
    },
    Add(Vec<NodeId>),
    Tanh(NodeId),
    Normalize(NodeId),
    Dot(NodeId, NodeId),
    Concat(Vec<NodeId>),
    /// `a·x + b` on a scalar, with `a`, `b` scalar slots.
    ScaleShift {
        x: NodeId,
        a: Slot,
        b: Slot,
    },
    BceLogits {
        z: NodeId,
        target: f64,
    },
    SoftmaxXent {
        logits: Vec<NodeId>,
        gold: usize,
    },
    Mean(Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params: &params.data,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Input, v)
    }

    pub fn affine(&mut self, x: NodeId, w: Slot, b: Slot) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.len(), w.cols, "affine input width");
        assert_eq!(b.len(), w.rows, "affine bias width");
        let wv = &self.params[w.range()];
        let bv = &self.params[b.range()];
        let out = (0..w.rows)
            .map(|r| {
                let row = &wv[r * w.cols..(r + 1) * w.cols];
                bv[r] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(Op::Affine { x, w, b }, out)
    }

    pub fn add(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "add of nothing");
        let mut out = self.nodes[xs[0]].value.clone();
        for &x in &xs[1..] {
            for (o, v) in out.iter_mut().zip(&self.nodes[x].value) {
                *o += v;
            }
        }
        self.push(Op::Add(xs.to_vec()), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh(x), out)
    }

    /// Unit-norm rescaling. The zero vector maps to the first basis vector
    /// (with zero gradient) so the output is always unit length.
    pub fn normalize(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let out = if n > 0.0 {
            v.iter().map(|a| a / n).collect()
        } else {
            let mut e = vec![0.0; v.len()];
            if let Some(first) = e.first_mut() {
                *first = 1.0;
            }
            e
        };
        self.push(Op::Normalize(x), out)
    }

    pub fn dot(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let d = self.nodes[x]
            .value
            .iter()
            .zip(&self.nodes[y].value)
            .map(|(a, b)| a * b)
            .sum();
        self.push(Op::Dot(x, y), vec![d])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let out = xs
            .iter()
            .flat_map(|&x| self.nodes[x].value.iter().copied())
            .collect();
        self.push(Op::Concat(xs.to_vec()), out)
    }

    pub fn scale_shift(&mut self, x: NodeId, a: Slot, b: Slot) -> NodeId {
        let v = self.params[a.offset] * self.scalar(x) + self.params[b.offset];
        self.push(Op::ScaleShift { x, a, b }, vec![v])
    }

    /// Binary cross-entropy of `σ(z)` against `target ∈ [0, 1]`.
    pub fn bce_logits(&mut self, z: NodeId, target: f64) -> NodeId {
        let zv = self.scalar(z);
        self.push(
            Op::BceLogits { z, target },
            vec![softplus(zv) - target * zv],
        )
    }

    /// `−log softmax(logits)[gold]` over scalar logit nodes.
    pub fn softmax_xent(&mut self, logits: &[NodeId], gold: usize) -> NodeId {
        assert!(gold < logits.len(), "gold index out of range");
        let z: Vec<f64> = logits.iter().map(|&l| self.scalar(l)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        self.push(
            Op::SoftmaxXent {
                logits: logits.to_vec(),
                gold,
            },
            vec![lse - z[gold]],
        )
    }

    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "mean of nothing");
        let v = xs.iter().map(|&x| self.scalar(x)).sum::<f64>() / xs.len() as f64;
        self.push(Op::Mean(xs.to_vec()), vec![v])
    }

    /// Accumulates `seedᵀ · ∂out/∂θ` into `grad`.
    pub fn backward(&self, out: NodeId, seed: &[f64], grad: &mut [f64]) {
        assert_eq!(seed.len(), self.nodes[out].value.len(), "seed width");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer width");
        let mut g: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        g[out] = Some(seed.to_vec());
        fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }
        for id in (0..=out).rev() {
            let Some(gy) = g[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Affine { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.params[w.range()];
                    for (r, gr) in gy.iter().enumerate() {
                        grad[b.offset + r] += gr;
                        let wrow = w.offset + r * w.cols;
                        for (c, xc) in xv.iter().enumerate() {
                            grad[wrow + c] += gr * xc;
                        }
                    }
                    let gx = acc(&mut g[*x], w.cols);
                    for (r, gr) in gy.iter().enumerate() {
                        let row = &wv[r * w.cols..(r + 1) * w.cols];
                        for (gxc, wrc) in gx.iter_mut().zip(row) {
                            *gxc += gr * wrc;
                        }
                    }
                }
                Op::Add(xs) => {
                    for &x in xs {
                        let gx = acc(&mut g[x], gy.len());
                        for (a, b) in gx.iter_mut().zip(&gy) {
                            *a += b;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut g[*x], gy.len());
                    for ((a, y), b) in gx.iter_mut().zip(&node.value).zip(&gy) {
                        *a += b * (1.0 - y * y);
                    }
                }
                Op::Normalize(x) => {
                    let xv = &self.nodes[*x].value;
                    let n = xv.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let gx = acc(&mut g[*x], gy.len());
                    if n > 0.0 {
                        let yg: f64 = node.value.iter().zip(&gy).map(|(a, b)| a * b).sum();
                        for ((a, y), b) in gx.iter_mut().zip(&node.value).zip(&gy) {
                            *a += (b - y * yg) / n;
                        }
                    }
                }
                Op::Dot(x, y) => {
                    let s = gy[0];
                    let xv = self.nodes[*x].value.clone();
                    let yv = &self.nodes[*y].value;
                    let gx = acc(&mut g[*x], yv.len());
                    for (a, b) in gx.iter_mut().zip(yv) {
                        *a += s * b;
                    }
                    let gyy = acc(&mut g[*y], xv.len());
                    for (a, b) in gyy.iter_mut().zip(&xv) {
                        *a += s * b;
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.nodes[x].value.len();
                        let gx = acc(&mut g[x], n);
                        for (a, b) in gx.iter_mut().zip(&gy[off..off + n]) {
                            *a += b;
                        }
                        off += n;
                    }
                }
                Op::ScaleShift { x, a, b } => {
                    let s = gy[0];
                    grad[a.offset] += s * self.scalar(*x);
                    grad[b.offset] += s;
                    acc(&mut g[*x], 1)[0] += s * self.params[a.offset];
                }
                Op::BceLogits { z, target } => {
                    let zv = self.scalar(*z);
                    acc(&mut g[*z], 1)[0] += gy[0] * (sigmoid(zv) - target);
                }
                Op::SoftmaxXent { logits, gold } => {
                    let z: Vec<f64> = logits.iter().map(|&l| self.scalar(l)).collect();
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let total: f64 = e.iter().sum();
                    for (k, &l) in logits.iter().enumerate() {
                        let p = e[k] / total - if k == *gold { 1.0 } else { 0.0 };
                        acc(&mut g[l], 1)[0] += gy[0] * p;
                    }
                }
                Op::Mean(xs) => {
                    let s = gy[0] / xs.len() as f64;
                    for &x in xs {
                        acc(&mut g[x], 1)[0] += s;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Denominator floor for the relative error, so coordinates whose gradient
/// is numerically zero are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Compares an analytic gradient against central differences on up to
/// `coords` randomly chosen coordinates (all of them if there are fewer).
pub fn gradient_check(
    loss: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    theta: &[f64],
    epsilon: f64,
    coords: usize,
    seed: u64,
) -> GradCheck {
    assert!(epsilon > 0.0 && epsilon <= 1e-2, "epsilon out of range");
    assert_eq!(analytic.len(), theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = (0..theta.len()).choose_multiple(&mut rng, coords.min(theta.len()));
    let mut work = theta.to_vec();
    let mut max_rel: f64 = 0.0;
    for &i in &picked {
        work[i] = theta[i] + epsilon;
        let up = loss(&work);
        work[i] = theta[i] - epsilon;
        let down = loss(&work);
        work[i] = theta[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        max_rel = max_rel.max(rel);
    }
    GradCheck {
        max_rel_error: max_rel,
        coords_checked: picked.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_params(seed: u64) -> (Params, Slot, Slot, Slot, Slot, Slot, Slot) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.5).unwrap();
        let mut p = Params::new();
        let w1 = p.push("w1", 6, 4, || n.sample(&mut rng));
        let b1 = p.push("b1", 6, 1, || n.sample(&mut rng));
        let w2 = p.push("w2", 3, 6, || n.sample(&mut rng));
        let b2 = p.push("b2", 3, 1, || n.sample(&mut rng));
        let a = p.push("a", 1, 1, || 5.0);
        let b = p.push("b", 1, 1, || -2.5);
        (p, w1, b1, w2, b2, a, b)
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let theta: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 37.0).collect();
        let loss = |t: &[f64]| 0.5 * t.iter().map(|x| x * x).sum::<f64>();
        let check = gradient_check(loss, &theta, &theta, 1e-3, 150, 1);
        assert_eq!(check.coords_checked, 150);
        assert!(check.max_rel_error < 1e-9, "{check:?}");
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let (p, w1, b1, w2, b2, a, b) = random_params(7);
        let build = |params: &Params| {
            let mut t = Tape::new(params);
            let x = t.input(vec![0.3, -1.2, 0.5, 2.0]);
            let y = t.input(vec![-0.7, 0.1, 0.9, -0.4]);
            let enc = |t: &mut Tape, v| {
                let h = t.affine(v, w1, b1);
                let h = t.tanh(h);
                let o = t.affine(h, w2, b2);
                t.normalize(o)
            };
            let ex = enc(&mut t, x);
            let ey = enc(&mut t, y);
            let cos = t.dot(ex, ey);
            let z = t.scale_shift(cos, a, b);
            let l1 = t.bce_logits(z, 1.0);
            let s1 = t.affine(
                ex,
                Slot {
                    offset: w2.offset,
                    rows: 1,
                    cols: 3,
                },
                Slot {
                    offset: b.offset,
                    rows: 1,
                    cols: 1,
                },
            );
            let s2 = t.dot(ex, ey);
            let cat = t.concat(&[ex, ey]);
            let summed = t.add(&[cat, cat]);
            let s3 = t.dot(summed, summed);
            let l2 = t.softmax_xent(&[s1, s2, s3], 1);
            let loss = t.mean(&[l1, l2]);
            let mut grad = vec![0.0; params.len()];
            t.backward(loss, &[1.0], &mut grad);
            (t.scalar(loss), grad)
        };
        let (_, grad) = build(&p);
        let loss = |theta: &[f64]| {
            let mut q = p.clone();
            q.data.copy_from_slice(theta);
            build(&q).0
        };
        let check = gradient_check(loss, &grad, &p.data, 1e-5, 100, 3);
        assert!(check.max_rel_error <= 1e-6, "{check:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, ..) = random_params(11);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = Params::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.slot("w2").unwrap().offset, 30);
        buf[0] = b'X';
        assert!(Params::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let p = Params::new();
        let mut t = Tape::new(&p);
        let z = t.input(vec![800.0]);
        let l = t.bce_logits(z, 1.0);
        assert!(t.scalar(l).abs() < 1e-12);
        let z = t.input(vec![-800.0]);
        let l = t.bce_logits(z, 1.0);
        assert!((t.scalar(l) - 800.0).abs() < 1e-9);
    }
}

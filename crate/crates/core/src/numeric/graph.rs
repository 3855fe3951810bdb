//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every op in execution order, so the tape is already
//! topologically sorted; [`Graph::backward`] walks it once in reverse.
//! Parameters are read in place from the borrowed [`ParamStore`] rather than
//! copied onto the tape.

use rand::Rng;

use super::functional::{self, sum_order_free, KL_FLOOR};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: f64,
        /// One row-major [m × n] map per head.
        maps: Vec<Vec<f64>>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Vec<bool>,
    },
    MeanSquaredError {
        x: Var,
        target: Vec<f64>,
    },
    TopKSoftmax {
        x: Var,
        support: Vec<Vec<usize>>,
    },
    KlRows {
        pred: Var,
        target: Vec<f64>,
        valid: Vec<bool>,
    },
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Dropout applied by [`Graph::dropout`]; absent means identity.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn rand::RngCore,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<DropoutCtx<'p>>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of a recorded value; `None` if the value does not reach the loss
    /// or was not marked as requiring a gradient.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &[(ParamId, Vec<f64>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    /// Adds parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.params {
            store.get_mut(*id).accumulate_grad(g);
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
fn matmul_t_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
fn matmul_tn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            dropout: None,
        }
    }

    pub fn with_dropout(mut self, dropout: DropoutCtx<'p>) -> Self {
        self.dropout = Some(dropout);
        self
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        match &self.nodes[var.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.value(var).data()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a constant or, when `tensor.requires_grad()`, a differentiable leaf.
    pub fn input(&mut self, tensor: Tensor) -> Result<Var> {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Input, needs, "input")
    }

    /// Leaf for a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let needs = self.store.get(id).requires_grad();
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: needs,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(var);
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 || self.value(b).shape().len() != 2 {
            return Err(Error::shape("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.data(a), self.data(b), m, k, n, &mut out);
        let needs = self.needs(&[a, b]);
        self.push(
            Tensor::raw(vec![m, n], out),
            Op::MatMul(a, b),
            needs,
            "matmul",
        )
    }

    /// a · bᵀ for a [m×k], b [n×k].
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (n, k2) = dims(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("[{m}×{k}] · [{n}×{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_t_into(self.data(a), self.data(b), m, k, n, &mut out);
        let needs = self.needs(&[a, b]);
        self.push(
            Tensor::raw(vec![m, n], out),
            Op::MatMulT(a, b),
            needs,
            "matmul_t",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::raw(ta.shape().to_vec(), data);
        let needs = self.needs(&[a, b]);
        self.push(t, Op::Add(a, b), needs, "add")
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("{} columns vs bias {}", c, tb.len()),
            ));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let t = Tensor::raw(tx.shape().to_vec(), data);
        let needs = self.needs(&[x, bias]);
        self.push(t, Op::AddBias(x, bias), needs, "add_bias")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::raw(ta.shape().to_vec(), data);
        let needs = self.needs(&[a, b]);
        self.push(t, Op::Mul(a, b), needs, "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::raw(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v * factor).collect(),
        );
        let needs = self.needs(&[x]);
        self.push(t, Op::Scale(x, factor), needs, "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::raw(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| v.max(0.0)).collect(),
        );
        let needs = self.needs(&[x]);
        self.push(t, Op::Relu(x), needs, "relu")
    }

    /// Inverted dropout with the graph's [`DropoutCtx`]; identity when none is set.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let Some(ctx) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if ctx.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - ctx.rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if ctx.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.input(Tensor::new(shape, mask)?)?;
        self.mul(x, m)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, c) = dims(tx);
        let (g, b) = (self.data(gain), self.data(bias));
        if g.len() != c || b.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("{c} columns vs gain {} / bias {}", g.len(), b.len()),
            ));
        }
        let mut normalized = vec![0.0; m * c];
        let mut rstd = Vec::with_capacity(m);
        for (row, out) in tx.data().chunks(c).zip(normalized.chunks_mut(c)) {
            rstd.push(functional::normalize_row(row, out));
        }
        let data = normalized
            .chunks(c)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((v, g), b)| v * g + b))
            .collect();
        let t = Tensor::raw(tx.shape().to_vec(), data);
        let needs = self.needs(&[x, gain, bias]);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            },
            needs,
            "layer_norm",
        )
    }

    /// Multi-head scaled dot-product attention over already-projected q, k, v.
    ///
    /// `q` is [m×d], `k` and `v` are [n×d]; heads split the d columns evenly and
    /// use scale 1/sqrt(d/heads). `key_mask[j] == false` removes key j. Sums
    /// over the key axis are order-free, so permuting keys permutes the maps
    /// and leaves the output bit-identical.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (m, d) = dims(self.value(q));
        let (n, dk) = dims(self.value(k));
        let (nv, dv) = dims(self.value(v));
        if dk != d || dv != d || nv != n {
            return Err(Error::shape(
                "attention",
                format!("q [{m}×{d}], k [{n}×{dk}], v [{nv}×{dv}]"),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("{d} columns not divisible into {heads} heads"),
            ));
        }
        if key_mask.len() != n {
            return Err(Error::shape(
                "attention",
                format!("mask {} vs {n} keys", key_mask.len()),
            ));
        }
        if !key_mask.iter().any(|&b| b) {
            return Err(Error::invalid("attention", "every key is masked"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![0.0; m * d];
        let mut maps = Vec::with_capacity(heads);
        let mut scores = vec![0.0; n];
        let mut scratch = Vec::with_capacity(n);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut alpha = vec![0.0; m * n];
            for i in 0..m {
                let qi = &qd[i * d + cols.start..i * d + cols.end];
                for j in 0..n {
                    let kj = &kd[j * d + cols.start..j * d + cols.end];
                    scores[j] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let row = &mut alpha[i * n..(i + 1) * n];
                functional::softmax_into(&scores, Some(key_mask), row, &mut scratch)?;
                for c in cols.clone() {
                    scratch.clear();
                    scratch.extend(
                        (0..n)
                            .filter(|&j| key_mask[j])
                            .map(|j| row[j] * vd[j * d + c]),
                    );
                    out[i * d + c] = sum_order_free(&mut scratch);
                }
            }
            maps.push(alpha);
        }
        let needs = self.needs(&[q, k, v]);
        self.push(
            Tensor::raw(vec![m, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                maps,
            },
            needs,
            "attention",
        )
    }

    /// Per-head attention maps of an [`Graph::attention`] output.
    pub fn attention_maps(&self, var: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[var.0].op {
            Op::Attention { maps, .. } => Some(maps),
            _ => None,
        }
    }

    /// Selects rows by index (embedding lookup when `x` is a table).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = dims(tx);
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let data = indices
            .iter()
            .flat_map(|&i| tx.row(i).iter().copied())
            .collect();
        let t = Tensor::raw(vec![indices.len(), c], data);
        let needs = self.needs(&[x]);
        self.push(t, Op::GatherRows(x, indices.to_vec()), needs, "gather_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat_cols", "no inputs"));
        };
        let m = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != m) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let t = Tensor::raw(vec![m, total], data);
        let needs = self.needs(parts);
        self.push(t, Op::ConcatCols(parts.to_vec()), needs, "concat_cols")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::raw(vec![1], vec![s]), Op::Sum(x), needs, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let needs = self.needs(&[x]);
        self.push(Tensor::raw(vec![1], vec![s]), Op::Mean(x), needs, "mean")
    }

    /// Mean cross-entropy of logit rows against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, c) = dims(tl);
        if labels.len() != m {
            return Err(Error::shape(
                "cross_entropy",
                format!("{m} rows vs {} labels", labels.len()),
            ));
        }
        let mut probs = vec![0.0; m * c];
        let mut scratch = Vec::new();
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            total += functional::cross_entropy(tl.row(i), label)?;
            functional::softmax_into(
                tl.row(i),
                None,
                &mut probs[i * c..(i + 1) * c],
                &mut scratch,
            )?;
        }
        let needs = self.needs(&[logits]);
        self.push(
            Tensor::raw(vec![1], vec![total / m as f64]),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
            "cross_entropy",
        )
    }

    /// Mean binary cross-entropy of single-logit rows.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &[bool]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.len() != targets.len() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{} logits vs {} targets", tl.len(), targets.len()),
            ));
        }
        let total: f64 = tl
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| functional::binary_cross_entropy_with_logit(z, t))
            .sum();
        let needs = self.needs(&[logits]);
        self.push(
            Tensor::raw(vec![1], vec![total / targets.len() as f64]),
            Op::BinaryCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            needs,
            "binary_cross_entropy",
        )
    }

    /// Mean over all entries of (x − target)².
    pub fn mse(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != target.len() {
            return Err(Error::shape(
                "mse",
                format!("{} vs {}", tx.len(), target.len()),
            ));
        }
        let s: f64 = tx
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let needs = self.needs(&[x]);
        self.push(
            Tensor::raw(vec![1], vec![s / target.len() as f64]),
            Op::MeanSquaredError {
                x,
                target: target.to_vec(),
            },
            needs,
            "mse",
        )
    }

    /// Per row: softmax over the `k` largest entries, zeros elsewhere. Ties at
    /// the k-th score keep the lowest column index; `k` is clamped to the row
    /// width. Discarded entries carry no gradient.
    pub fn top_k_softmax(&mut self, x: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::invalid("top_k_softmax", "k must be at least 1"));
        }
        let tx = self.value(x);
        let (m, n) = dims(tx);
        let k = k.min(n);
        let mut out = vec![0.0; m * n];
        let mut support = Vec::with_capacity(m);
        let mut scratch = Vec::new();
        for i in 0..m {
            let row = tx.row(i);
            let keep = functional::top_k_indices(row, k);
            let mut mask = vec![false; n];
            keep.iter().for_each(|&j| mask[j] = true);
            functional::softmax_into(row, Some(&mask), &mut out[i * n..(i + 1) * n], &mut scratch)?;
            support.push(keep);
        }
        let t = Tensor::raw(tx.shape().to_vec(), out);
        let needs = self.needs(&[x]);
        self.push(t, Op::TopKSoftmax { x, support }, needs, "top_k_softmax")
    }

    /// Support (kept column indices) of each row of a [`Graph::top_k_softmax`] output.
    pub fn top_k_support(&self, var: Var) -> Option<&[Vec<usize>]> {
        match &self.nodes[var.0].op {
            Op::TopKSoftmax { support, .. } => Some(support),
            _ => None,
        }
    }

    /// Mean over `valid` rows of KL(target_i ‖ pred_i), predictions floored at
    /// 1e-8 and renormalized. Errors when no row is valid.
    pub fn kl_rows(&mut self, target: &Tensor, pred: Var, valid: &[bool]) -> Result<Var> {
        let tp = self.value(pred);
        if target.shape() != tp.shape() {
            return Err(Error::shape(
                "kl_rows",
                format!("target {:?} vs pred {:?}", target.shape(), tp.shape()),
            ));
        }
        let (m, _) = dims(tp);
        if valid.len() != m {
            return Err(Error::shape(
                "kl_rows",
                format!("{m} rows vs mask {}", valid.len()),
            ));
        }
        let count = valid.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::invalid("kl_rows", "no valid rows"));
        }
        let mut total = 0.0;
        for i in (0..m).filter(|&i| valid[i]) {
            total += functional::kl_divergence(target.row(i), tp.row(i))?;
        }
        let needs = self.needs(&[pred]);
        self.push(
            Tensor::raw(vec![1], vec![total / count as f64]),
            Op::KlRows {
                pred,
                target: target.data().to_vec(),
                valid: valid.to_vec(),
            },
            needs,
            "kl_rows",
        )
    }

    /// Σ wᵢ·xᵢ over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum", "terms must be scalars"));
            }
            let scaled = if w == 1.0 { v } else { self.scale(v, w)? };
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::invalid("weighted_sum", "no terms"))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match node.op {
                Op::Param(id) => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient {
                            param: self.store.name(id).to_string(),
                        });
                    }
                    params.push((id, g));
                }
                Op::Input => grads[idx] = Some(g),
                _ => self.backward_node(idx, &g, &mut grads),
            }
        }
        // Parameters bound on the tape but unreachable from the loss get zeros.
        for (i, slot) in self.param_vars.iter().enumerate() {
            let id = ParamId(i);
            if slot.is_some()
                && self.store.get(id).requires_grad()
                && !params.iter().any(|(p, _)| *p == id)
            {
                params.push((id, vec![0.0; self.store.get(id).len()]));
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[var.0].needs_grad {
            return None;
        }
        let n = self.value(var).len();
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(_) => return,
        };
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).cols();
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    matmul_t_into(g, bd, m, n, k, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = Aᵀ · dC
                    matmul_tn_into(ad, g, m, k, n, gb);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = self.value(*b).rows();
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    matmul_into(g, bd, m, n, k, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    matmul_tn_into(g, ad, m, n, k, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                let c = out.cols();
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, gi), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *x += gi * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, gi), av) in gb.iter_mut().zip(g).zip(ad) {
                        *x += gi * av;
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * f);
                }
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, b), v) in gx.iter_mut().zip(g).zip(xd) {
                        if *v > 0.0 {
                            *a += b;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            } => {
                let c = out.cols();
                let gd = self.data(*gain);
                if let Some(gg) = self.slot(grads, *gain) {
                    for (grow, nrow) in g.chunks(c).zip(normalized.chunks(c)) {
                        for ((a, b), n) in gg.iter_mut().zip(grow).zip(nrow) {
                            *a += b * n;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for grow in g.chunks(c) {
                        gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let cf = c as f64;
                    let mut dn = vec![0.0; c];
                    for (r, (grow, nrow)) in g.chunks(c).zip(normalized.chunks(c)).enumerate() {
                        for ((d, gi), gv) in dn.iter_mut().zip(grow).zip(gd) {
                            *d = gi * gv;
                        }
                        let mean_dn = dn.iter().sum::<f64>() / cf;
                        let mean_dn_n = dn.iter().zip(nrow).map(|(a, b)| a * b).sum::<f64>() / cf;
                        let dst = &mut gx[r * c..(r + 1) * c];
                        for ((o, d), n) in dst.iter_mut().zip(&dn).zip(nrow) {
                            *o += rstd[r] * (d - mean_dn - n * mean_dn_n);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                maps,
            } => {
                let (m, d) = dims(self.value(*q));
                let n = self.value(*k).rows();
                let dh = d / heads;
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut dq = vec![0.0; m * d];
                let mut dk = vec![0.0; n * d];
                let mut dv = vec![0.0; n * d];
                let mut dalpha = vec![0.0; n];
                for (h, alpha) in maps.iter().enumerate() {
                    let c0 = h * dh;
                    for i in 0..m {
                        let gi = &g[i * d + c0..i * d + c0 + dh];
                        let arow = &alpha[i * n..(i + 1) * n];
                        for j in 0..n {
                            let vj = &vd[j * d + c0..j * d + c0 + dh];
                            dalpha[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            if arow[j] != 0.0 {
                                for (o, gv) in dv[j * d + c0..j * d + c0 + dh].iter_mut().zip(gi) {
                                    *o += arow[j] * gv;
                                }
                            }
                        }
                        let dot: f64 = arow.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            let ds = arow[j] * (dalpha[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for c in 0..dh {
                                dq[i * d + c0 + c] += ds * kd[j * d + c0 + c];
                                dk[j * d + c0 + c] += ds * qd[i * d + c0 + c];
                            }
                        }
                    }
                }
                for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
                    if let Some(gv) = self.slot(grads, *var) {
                        gv.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::GatherRows(x, indices) => {
                let c = out.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (row, &i) in g.chunks(c).zip(indices) {
                        gx[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if let Some(gp) = self.slot(grads, *p) {
                        for (i, row) in g.chunks(total).enumerate() {
                            gp[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(&row[offset..offset + c])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += c;
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let s = g[0] / labels.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::BinaryCrossEntropy { logits, targets } => {
                let ld = self.data(*logits);
                let s = g[0] / targets.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for ((a, &z), &t) in gl.iter_mut().zip(ld).zip(targets) {
                        *a += s * (functional::sigmoid(z) - if t { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::MeanSquaredError { x, target } => {
                let xd = self.data(*x);
                let s = 2.0 * g[0] / target.len() as f64;
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, v), t) in gx.iter_mut().zip(xd).zip(target) {
                        *a += s * (v - t);
                    }
                }
            }
            Op::TopKSoftmax { x, support, .. } => {
                let n = out.cols();
                let y = out.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, keep) in support.iter().enumerate() {
                        let dot: f64 = keep.iter().map(|&j| y[i * n + j] * g[i * n + j]).sum();
                        for &j in keep {
                            gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
            }
            Op::KlRows {
                pred,
                target,
                valid,
            } => {
                let tp = self.value(*pred);
                let n = tp.cols();
                let count = valid.iter().filter(|&&b| b).count() as f64;
                let s = g[0] / count;
                let pd = tp.data();
                if let Some(gp) = self.slot(grads, *pred) {
                    let mut floored = Vec::with_capacity(n);
                    for i in (0..valid.len()).filter(|&i| valid[i]) {
                        let p = &target[i * n..(i + 1) * n];
                        let q = &pd[i * n..(i + 1) * n];
                        let z = functional::floor_and_normalizer(q, &mut floored);
                        let mass: f64 = p.iter().sum();
                        for j in 0..n {
                            if q[j] > KL_FLOOR {
                                gp[i * n + j] += s * (mass / z - p[j] / floored[j]);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g
            .input(
                Tensor::vector(vec![1.0, -2.0, 3.0])
                    .unwrap()
                    .with_requires_grad(true),
            )
            .unwrap();
        let loss = g.sum(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_gradient_is_twice_x() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g
            .input(
                Tensor::vector(vec![1.0, 2.0])
                    .unwrap()
                    .with_requires_grad(true),
            )
            .unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut s = store();
        let used = s
            .add("used", Tensor::vector(vec![1.0, 2.0]).unwrap())
            .unwrap();
        let unused = s.add("unused", Tensor::vector(vec![5.0]).unwrap()).unwrap();
        let mut g = Graph::new(&s);
        let u = g.param(used);
        let _ = g.param(unused);
        let loss = g.sum(u).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(used).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.param(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn reuse_accumulates_additively() {
        let mut s = store();
        let w = s.add("w", Tensor::vector(vec![3.0]).unwrap()).unwrap();
        let mut g = Graph::new(&s);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let sum = g.add(a, b).unwrap();
        let tripled = g.add(sum, a).unwrap();
        let loss = g.sum(tripled).unwrap();
        assert_eq!(g.backward(loss).unwrap().param(w).unwrap(), &[3.0]);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![1e300]).unwrap()).unwrap();
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn attention_single_key_returns_value() {
        let s = store();
        let mut g = Graph::new(&s);
        let q = g
            .input(Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap())
            .unwrap();
        let k = g
            .input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let v = g
            .input(Tensor::matrix(1, 2, vec![4.0, 5.0]).unwrap())
            .unwrap();
        let out = g.attention(q, k, v, 2, &[true]).unwrap();
        assert_eq!(g.data(out), &[4.0, 5.0]);
        assert_eq!(g.attention_maps(out).unwrap()[0], vec![1.0]);
    }

    #[test]
    fn attention_all_masked_is_error() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g
            .input(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap())
            .unwrap();
        assert!(g.attention(x, x, x, 1, &[false, false]).is_err());
    }

    #[test]
    fn top_k_softmax_rows() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g
            .input(Tensor::matrix(2, 4, vec![1.0, 4.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let y = g.top_k_softmax(x, 3).unwrap();
        let row0 = g.value(y).row(0).to_vec();
        assert_eq!(row0[0], 0.0);
        let expected = functional::softmax(&[4.0, 2.0, 3.0]).unwrap();
        assert!((row0[1] - expected[0]).abs() < 1e-15);
        let row1 = g.value(y).row(1);
        assert_eq!(row1, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(g.top_k_support(y).unwrap()[1], vec![0, 1, 2]);
    }
}

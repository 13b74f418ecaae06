//! Reverse-mode tape: forward ops append nodes in topological order, and
//! `backward` walks them once in reverse.
//!
//! Every op validates shapes and rejects non-finite outputs. Max/min record
//! their arg indices at forward time (lowest index on ties), so repeated
//! backward passes over one tape give identical gradients. Gradients at
//! clamp/relu boundaries use the subgradient 0.

use crate::error::{Error, Result};

use super::tensor::{self, Tensor};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    /// `value = aᵀ @ b`
    MatMulTn { a: usize, b: usize },
    Add { a: usize, b: usize, bcast: Bcast },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize, bcast: Bcast },
    /// `value = scale·x + offset`
    Affine { x: usize, scale: f64 },
    Relu { x: usize },
    Exp { x: usize },
    Square { x: usize },
    Sqrt { x: usize },
    SumOverRows { x: usize },
    SumOverCols { x: usize },
    MeanOverRows { x: usize },
    MeanOverCols { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    /// 1×C of column maxima; `arg[c]` is the winning row.
    MaxOverRows { x: usize, arg: Vec<usize> },
    /// R×1 of row minima; `arg[r]` is the winning column.
    MinOverCols { x: usize, arg: Vec<usize> },
    MinOverRows { x: usize, arg: Vec<usize> },
    MaxOverCols { x: usize, arg: Vec<usize> },
    /// Per-group max over consecutive row blocks; `arg[g·C+c]` is the
    /// absolute winning row.
    GroupMax { x: usize, arg: Vec<usize> },
    SoftmaxCrossEntropy { logits: usize, targets: Vec<usize>, probs: Tensor },
    ConcatCols { a: usize, b: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    ClampScalar { x: usize, lo: f64, hi: f64 },
    ClampBox { x: usize, lo: Tensor, hi: Tensor },
    PairwiseSqdist { a: usize, b: usize },
    ColSoftmax { x: usize },
    /// Row softmax restricted to unmasked entries; masked outputs are 0.
    MaskedRowSoftmax { x: usize, mask: Vec<bool> },
}

struct Node {
    op: Op,
    value: Tensor,
    needs: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Backward output: one gradient slot per tape node.
pub struct Gradients {
    g: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v` if any path reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.g[v.0].as_ref()
    }

    /// Gradient for `v`, densified to zeros when unreached.
    pub fn wrt_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.g[v.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

fn acc<'a>(slot: &'a mut Option<Tensor>, rows: usize, cols: usize) -> &'a mut Tensor {
    slot.get_or_insert_with(|| Tensor::zeros(rows, cols))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it is trainable when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad;
        self.push_unchecked(Op::Leaf, t, needs)
    }

    /// Inserts a non-trainable leaf regardless of the tensor's flag.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, t, false)
    }

    /// Value produced at `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs: bool) -> Var {
        self.nodes.push(Node { op, value, needs });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor, needs: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, value, needs))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs
    }

    fn bcast_of(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) == (br, bc) {
            Ok(Bcast::Same)
        } else if br == 1 && bc == ac {
            Ok(Bcast::Row)
        } else if bc == 1 && br == ar {
            Ok(Bcast::Col)
        } else {
            Err(Error::ShapeMismatch {
                op,
                detail: format!("{ar}x{ac} vs {br}x{bc}"),
            })
        }
    }

    /// `a @ b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", Op::MatMul { a: a.0, b: b.0 }, v, needs)
    }

    /// `aᵀ @ b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_tn(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul_tn", Op::MatMulTn { a: a.0, b: b.0 }, v, needs)
    }

    /// Elementwise `a + b`; `b` may be a broadcast row (1×C) or column (R×1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_of("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (rows, cols) = av.shape();
        let mut data = av.data().to_vec();
        match bcast {
            Bcast::Same => {
                for (d, s) in data.iter_mut().zip(bv.data()) {
                    *d += s;
                }
            }
            Bcast::Row => {
                for r in 0..rows {
                    for c in 0..cols {
                        data[r * cols + c] += bv.data()[c];
                    }
                }
            }
            Bcast::Col => {
                for r in 0..rows {
                    for c in 0..cols {
                        data[r * cols + c] += bv.data()[r];
                    }
                }
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("add", Op::Add { a: a.0, b: b.0, bcast }, v, needs)
    }

    /// Elementwise `a − b` (same shapes).
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let (rows, cols) = self.value(a).shape();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("sub", Op::Sub { a: a.0, b: b.0 }, v, needs)
    }

    /// Elementwise `a ∘ b`; `b` may be a broadcast row (1×C) or column (R×1).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_of("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (rows, cols) = av.shape();
        let mut data = av.data().to_vec();
        match bcast {
            Bcast::Same => {
                for (d, s) in data.iter_mut().zip(bv.data()) {
                    *d *= s;
                }
            }
            Bcast::Row => {
                for r in 0..rows {
                    for c in 0..cols {
                        data[r * cols + c] *= bv.data()[c];
                    }
                }
            }
            Bcast::Col => {
                for r in 0..rows {
                    for c in 0..cols {
                        data[r * cols + c] *= bv.data()[r];
                    }
                }
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("mul", Op::Mul { a: a.0, b: b.0, bcast }, v, needs)
    }

    fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| scale * v + offset).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("affine", Op::Affine { x: x.0, scale }, v, needs)
    }

    /// `a·x` for a scalar `a`.
    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var> {
        self.affine(x, a, 0.0)
    }

    /// `x + b` for a scalar `b`.
    pub fn add_scalar(&mut self, x: Var, b: f64) -> Result<Var> {
        self.affine(x, 1.0, b)
    }

    /// `−x`.
    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    /// `max(x, 0)` elementwise.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("relu", Op::Relu { x: x.0 }, v, needs)
    }

    /// `exp(x)` elementwise.
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| v.exp()).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("exp", Op::Exp { x: x.0 }, v, needs)
    }

    /// `x²` elementwise.
    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| v * v).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("square", Op::Square { x: x.0 }, v, needs)
    }

    /// `√x` elementwise; negative input trips the non-finite check.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| v.sqrt()).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("sqrt", Op::Sqrt { x: x.0 }, v, needs)
    }

    fn reduce_linear(
        &mut self,
        name: &'static str,
        x: Var,
        over_rows: bool,
        mean: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let v = if over_rows {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c] += xv.at(r, c);
                }
            }
            if mean {
                for o in &mut out {
                    *o /= rows as f64;
                }
            }
            Tensor::new(1, cols, out)?
        } else {
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                for c in 0..cols {
                    out[r] += xv.at(r, c);
                }
            }
            if mean {
                for o in &mut out {
                    *o /= cols as f64;
                }
            }
            Tensor::new(rows, 1, out)?
        };
        let needs = self.needs(x);
        let op = match (over_rows, mean) {
            (true, false) => Op::SumOverRows { x: x.0 },
            (true, true) => Op::MeanOverRows { x: x.0 },
            (false, false) => Op::SumOverCols { x: x.0 },
            (false, true) => Op::MeanOverCols { x: x.0 },
        };
        self.push(name, op, v, needs)
    }

    /// Column sums: R×C → 1×C.
    pub fn sum_over_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_linear("sum_over_rows", x, true, false)
    }

    /// Row sums: R×C → R×1.
    pub fn sum_over_cols(&mut self, x: Var) -> Result<Var> {
        self.reduce_linear("sum_over_cols", x, false, false)
    }

    /// Column means: R×C → 1×C.
    pub fn mean_over_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_linear("mean_over_rows", x, true, true)
    }

    /// Row means: R×C → R×1.
    pub fn mean_over_cols(&mut self, x: Var) -> Result<Var> {
        self.reduce_linear("mean_over_cols", x, false, true)
    }

    /// Sum of all entries → 1×1.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push("sum_all", Op::SumAll { x: x.0 }, Tensor::scalar(s), needs)
    }

    /// Mean of all entries → 1×1.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let needs = self.needs(x);
        self.push("mean_all", Op::MeanAll { x: x.0 }, Tensor::scalar(s), needs)
    }

    fn reduce_extreme(
        &mut self,
        name: &'static str,
        x: Var,
        over_rows: bool,
        max: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let better = |cand: f64, best: f64| if max { cand > best } else { cand < best };
        let (value, arg) = if over_rows {
            let mut out = vec![0.0; cols];
            let mut arg = vec![0usize; cols];
            for c in 0..cols {
                let mut best = xv.at(0, c);
                let mut bi = 0;
                for r in 1..rows {
                    let cand = xv.at(r, c);
                    if better(cand, best) {
                        best = cand;
                        bi = r;
                    }
                }
                out[c] = best;
                arg[c] = bi;
            }
            (Tensor::new(1, cols, out)?, arg)
        } else {
            let mut out = vec![0.0; rows];
            let mut arg = vec![0usize; rows];
            for r in 0..rows {
                let mut best = xv.at(r, 0);
                let mut bi = 0;
                for c in 1..cols {
                    let cand = xv.at(r, c);
                    if better(cand, best) {
                        best = cand;
                        bi = c;
                    }
                }
                out[r] = best;
                arg[r] = bi;
            }
            (Tensor::new(rows, 1, out)?, arg)
        };
        let needs = self.needs(x);
        let op = match (over_rows, max) {
            (true, true) => Op::MaxOverRows { x: x.0, arg },
            (true, false) => Op::MinOverRows { x: x.0, arg },
            (false, true) => Op::MaxOverCols { x: x.0, arg },
            (false, false) => Op::MinOverCols { x: x.0, arg },
        };
        self.push(name, op, value, needs)
    }

    /// Column maxima with argmax recorded: R×C → 1×C (global max pool).
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_extreme("max_over_rows", x, true, true)
    }

    /// Row minima with argmin recorded: R×C → R×1.
    pub fn min_over_cols(&mut self, x: Var) -> Result<Var> {
        self.reduce_extreme("min_over_cols", x, false, false)
    }

    /// Column minima with argmin recorded: R×C → 1×C.
    pub fn min_over_rows(&mut self, x: Var) -> Result<Var> {
        self.reduce_extreme("min_over_rows", x, true, false)
    }

    /// Row maxima with argmax recorded: R×C → R×1.
    pub fn max_over_cols(&mut self, x: Var) -> Result<Var> {
        self.reduce_extreme("max_over_cols", x, false, true)
    }

    /// Max over consecutive row blocks of size `group`: (G·g)×C → G×C.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if group == 0 || rows % group != 0 {
            return Err(Error::ShapeMismatch {
                op: "group_max",
                detail: format!("{rows} rows not divisible into groups of {group}"),
            });
        }
        let groups = rows / group;
        let mut out = vec![0.0; groups * cols];
        let mut arg = vec![0usize; groups * cols];
        for g in 0..groups {
            for c in 0..cols {
                let mut best = xv.at(g * group, c);
                let mut bi = g * group;
                for r in (g * group + 1)..((g + 1) * group) {
                    let cand = xv.at(r, c);
                    if cand > best {
                        best = cand;
                        bi = r;
                    }
                }
                out[g * cols + c] = best;
                arg[g * cols + c] = bi;
            }
        }
        let v = Tensor::new(groups, cols, out)?;
        let needs = self.needs(x);
        self.push("group_max", Op::GroupMax { x: x.0, arg }, v, needs)
    }

    /// Fused stable softmax + cross-entropy, averaged over rows → 1×1.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let xv = self.value(logits);
        let (rows, cols) = xv.shape();
        if targets.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("{rows} logit rows vs {} targets", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: target {bad} out of range for {cols} classes"
            )));
        }
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for c in 0..cols {
                let e = (row[c] - m).exp();
                probs[r * cols + c] = e;
                denom += e;
            }
            for c in 0..cols {
                probs[r * cols + c] /= denom;
            }
            loss += denom.ln() + m - row[targets[r]];
        }
        loss /= rows as f64;
        let needs = self.needs(logits);
        self.push(
            "softmax_cross_entropy",
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs: Tensor::new(rows, cols, probs)?,
            },
            Tensor::scalar(loss),
            needs,
        )
    }

    /// Horizontal concatenation: R×C₁ ⧺ R×C₂ → R×(C₁+C₂).
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{} vs {} rows", av.rows(), bv.rows()),
            });
        }
        let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let v = Tensor::new(rows, ca + cb, data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("concat_cols", Op::ConcatCols { a: a.0, b: b.0 }, v, needs)
    }

    /// Row gather: out[i] = x[idx[i]].
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        let v = Tensor::new(idx.len(), cols, data)?;
        let needs = self.needs(x);
        self.push(
            "gather_rows",
            Op::GatherRows { x: x.0, idx: idx.to_vec() },
            v,
            needs,
        )
    }

    /// Coordinatewise clamp to `[lo, hi]`; zero gradient outside the open
    /// interval.
    pub fn clamp_scalar(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "clamp_scalar: lo {lo} > hi {hi}"
            )));
        }
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data = xv.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push(
            "clamp_scalar",
            Op::ClampScalar { x: x.0, lo, hi },
            v,
            needs,
        )
    }

    /// Coordinatewise clamp against constant bound tensors shaped like `x`.
    pub fn clamp_box(&mut self, x: Var, lo: &Tensor, hi: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if lo.shape() != xv.shape() || hi.shape() != xv.shape() {
            return Err(Error::ShapeMismatch {
                op: "clamp_box",
                detail: format!(
                    "x {:?}, lo {:?}, hi {:?}",
                    xv.shape(),
                    lo.shape(),
                    hi.shape()
                ),
            });
        }
        let (rows, cols) = xv.shape();
        let data = xv
            .data()
            .iter()
            .zip(lo.data().iter().zip(hi.data()))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect();
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push(
            "clamp_box",
            Op::ClampBox {
                x: x.0,
                lo: lo.clone(),
                hi: hi.clone(),
            },
            v,
            needs,
        )
    }

    /// Pairwise squared distances between point sets: N×D, M×D → N×M.
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::pairwise_sqdist(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(
            "pairwise_sqdist",
            Op::PairwiseSqdist { a: a.0, b: b.0 },
            v,
            needs,
        )
    }

    /// Stable softmax over each column (columns sum to 1).
    pub fn col_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut data = vec![0.0; rows * cols];
        for c in 0..cols {
            let mut m = f64::NEG_INFINITY;
            for r in 0..rows {
                m = m.max(xv.at(r, c));
            }
            let mut denom = 0.0;
            for r in 0..rows {
                let e = (xv.at(r, c) - m).exp();
                data[r * cols + c] = e;
                denom += e;
            }
            for r in 0..rows {
                data[r * cols + c] /= denom;
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push("col_softmax", Op::ColSoftmax { x: x.0 }, v, needs)
    }

    /// Stable softmax over the unmasked entries of each row; masked outputs
    /// are exactly 0. Every row needs at least one unmasked entry.
    pub fn masked_row_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if mask.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "masked_row_softmax",
                detail: format!("mask length {} vs {}x{}", mask.len(), rows, cols),
            });
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let mut m = f64::NEG_INFINITY;
            for c in 0..cols {
                if mask[r * cols + c] {
                    m = m.max(xv.at(r, c));
                }
            }
            if m == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "masked_row_softmax: row {r} fully masked"
                )));
            }
            let mut denom = 0.0;
            for c in 0..cols {
                if mask[r * cols + c] {
                    let e = (xv.at(r, c) - m).exp();
                    data[r * cols + c] = e;
                    denom += e;
                }
            }
            for c in 0..cols {
                data[r * cols + c] /= denom;
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        let needs = self.needs(x);
        self.push(
            "masked_row_softmax",
            Op::MaskedRowSoftmax {
                x: x.0,
                mask: mask.to_vec(),
            },
            v,
            needs,
        )
    }

    /// Reverse pass from a scalar loss. Returns a gradient per node;
    /// trainable leaves unreached by any path simply stay `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            });
        }
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if g[i].is_none() || !self.nodes[i].needs {
                continue;
            }
            let gi = g[i].take().unwrap();
            self.accumulate(i, &gi, &mut g);
            g[i] = Some(gi);
        }
        Ok(Gradients { g })
    }

    fn accumulate(&self, i: usize, gi: &Tensor, g: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let needs = |j: usize| self.nodes[j].needs;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let da = acc(&mut g[*a], av.rows(), av.cols());
                    // dA += g @ Bᵀ
                    tensor::dgemm_acc(
                        av.rows(), bv.cols(), av.cols(), 1.0,
                        gi.data(), gi.cols() as isize, 1,
                        bv.data(), 1, bv.cols() as isize,
                        da.data_mut(), av.cols() as isize,
                    );
                }
                if needs(*b) {
                    let db = acc(&mut g[*b], bv.rows(), bv.cols());
                    // dB += Aᵀ @ g
                    tensor::dgemm_acc(
                        bv.rows(), av.rows(), bv.cols(), 1.0,
                        av.data(), 1, av.cols() as isize,
                        gi.data(), gi.cols() as isize, 1,
                        db.data_mut(), bv.cols() as isize,
                    );
                }
            }
            Op::MatMulTn { a, b } => {
                // value = aᵀ b with a: p×q, b: p×r, value: q×r
                let (av, bv) = (val(*a), val(*b));
                if needs(*a) {
                    let da = acc(&mut g[*a], av.rows(), av.cols());
                    // dA += B @ gᵀ
                    tensor::dgemm_acc(
                        av.rows(), bv.cols(), av.cols(), 1.0,
                        bv.data(), bv.cols() as isize, 1,
                        gi.data(), 1, gi.cols() as isize,
                        da.data_mut(), av.cols() as isize,
                    );
                }
                if needs(*b) {
                    let db = acc(&mut g[*b], bv.rows(), bv.cols());
                    // dB += A @ g
                    tensor::dgemm_acc(
                        bv.rows(), av.cols(), bv.cols(), 1.0,
                        av.data(), av.cols() as isize, 1,
                        gi.data(), gi.cols() as isize, 1,
                        db.data_mut(), bv.cols() as isize,
                    );
                }
            }
            Op::Add { a, b, bcast } => {
                let (rows, cols) = val(*a).shape();
                if needs(*a) {
                    let da = acc(&mut g[*a], rows, cols);
                    for (d, s) in da.data_mut().iter_mut().zip(gi.data()) {
                        *d += s;
                    }
                }
                if needs(*b) {
                    let (br, bc) = val(*b).shape();
                    let db = acc(&mut g[*b], br, bc);
                    match bcast {
                        Bcast::Same => {
                            for (d, s) in db.data_mut().iter_mut().zip(gi.data()) {
                                *d += s;
                            }
                        }
                        Bcast::Row => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db.data_mut()[c] += gi.at(r, c);
                                }
                            }
                        }
                        Bcast::Col => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db.data_mut()[r] += gi.at(r, c);
                                }
                            }
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                let (rows, cols) = val(*a).shape();
                if needs(*a) {
                    let da = acc(&mut g[*a], rows, cols);
                    for (d, s) in da.data_mut().iter_mut().zip(gi.data()) {
                        *d += s;
                    }
                }
                if needs(*b) {
                    let db = acc(&mut g[*b], rows, cols);
                    for (d, s) in db.data_mut().iter_mut().zip(gi.data()) {
                        *d -= s;
                    }
                }
            }
            Op::Mul { a, b, bcast } => {
                let (av, bv) = (val(*a), val(*b));
                let (rows, cols) = av.shape();
                if needs(*a) {
                    let da = acc(&mut g[*a], rows, cols);
                    match bcast {
                        Bcast::Same => {
                            for ((d, s), f) in
                                da.data_mut().iter_mut().zip(gi.data()).zip(bv.data())
                            {
                                *d += s * f;
                            }
                        }
                        Bcast::Row => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    da.data_mut()[r * cols + c] += gi.at(r, c) * bv.data()[c];
                                }
                            }
                        }
                        Bcast::Col => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    da.data_mut()[r * cols + c] += gi.at(r, c) * bv.data()[r];
                                }
                            }
                        }
                    }
                }
                if needs(*b) {
                    let (br, bc) = bv.shape();
                    let db = acc(&mut g[*b], br, bc);
                    match bcast {
                        Bcast::Same => {
                            for ((d, s), f) in
                                db.data_mut().iter_mut().zip(gi.data()).zip(av.data())
                            {
                                *d += s * f;
                            }
                        }
                        Bcast::Row => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db.data_mut()[c] += gi.at(r, c) * av.at(r, c);
                                }
                            }
                        }
                        Bcast::Col => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db.data_mut()[r] += gi.at(r, c) * av.at(r, c);
                                }
                            }
                        }
                    }
                }
            }
            Op::Affine { x, scale } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for (d, s) in dx.data_mut().iter_mut().zip(gi.data()) {
                        *d += scale * s;
                    }
                }
            }
            Op::Relu { x } => {
                if needs(*x) {
                    let xv = val(*x);
                    let (rows, cols) = xv.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for ((d, s), v) in dx.data_mut().iter_mut().zip(gi.data()).zip(xv.data()) {
                        if *v > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Exp { x } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for ((d, s), y) in dx.data_mut().iter_mut().zip(gi.data()).zip(node.value.data())
                    {
                        *d += s * y;
                    }
                }
            }
            Op::Square { x } => {
                if needs(*x) {
                    let xv = val(*x);
                    let (rows, cols) = xv.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for ((d, s), v) in dx.data_mut().iter_mut().zip(gi.data()).zip(xv.data()) {
                        *d += 2.0 * v * s;
                    }
                }
            }
            Op::Sqrt { x } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    // subgradient 0 at the origin, where 1/(2√x) blows up
                    for ((d, s), y) in dx.data_mut().iter_mut().zip(gi.data()).zip(node.value.data())
                    {
                        if *y > 1e-12 {
                            *d += s * 0.5 / y;
                        }
                    }
                }
            }
            Op::SumOverRows { x } | Op::MeanOverRows { x } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let scale = if matches!(node.op, Op::MeanOverRows { .. }) {
                        1.0 / rows as f64
                    } else {
                        1.0
                    };
                    let dx = acc(&mut g[*x], rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx.data_mut()[r * cols + c] += gi.data()[c] * scale;
                        }
                    }
                }
            }
            Op::SumOverCols { x } | Op::MeanOverCols { x } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let scale = if matches!(node.op, Op::MeanOverCols { .. }) {
                        1.0 / cols as f64
                    } else {
                        1.0
                    };
                    let dx = acc(&mut g[*x], rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dx.data_mut()[r * cols + c] += gi.data()[r] * scale;
                        }
                    }
                }
            }
            Op::SumAll { x } | Op::MeanAll { x } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let scale = if matches!(node.op, Op::MeanAll { .. }) {
                        1.0 / (rows * cols) as f64
                    } else {
                        1.0
                    };
                    let s = gi.data()[0] * scale;
                    let dx = acc(&mut g[*x], rows, cols);
                    for d in dx.data_mut() {
                        *d += s;
                    }
                }
            }
            Op::MaxOverRows { x, arg } | Op::MinOverRows { x, arg } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for c in 0..cols {
                        dx.data_mut()[arg[c] * cols + c] += gi.data()[c];
                    }
                }
            }
            Op::MaxOverCols { x, arg } | Op::MinOverCols { x, arg } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for r in 0..rows {
                        dx.data_mut()[r * cols + arg[r]] += gi.data()[r];
                    }
                }
            }
            Op::GroupMax { x, arg } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for (slot, &src_row) in arg.iter().enumerate() {
                        let c = slot % cols;
                        dx.data_mut()[src_row * cols + c] += gi.data()[slot];
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if needs(*logits) {
                    let (rows, cols) = probs.shape();
                    let s = gi.data()[0] / rows as f64;
                    let dx = acc(&mut g[*logits], rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let indicator = if targets[r] == c { 1.0 } else { 0.0 };
                            dx.data_mut()[r * cols + c] += s * (probs.at(r, c) - indicator);
                        }
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (rows, ca) = val(*a).shape();
                let cb = val(*b).cols();
                if needs(*a) {
                    let da = acc(&mut g[*a], rows, ca);
                    for r in 0..rows {
                        for c in 0..ca {
                            da.data_mut()[r * ca + c] += gi.at(r, c);
                        }
                    }
                }
                if needs(*b) {
                    let db = acc(&mut g[*b], rows, cb);
                    for r in 0..rows {
                        for c in 0..cb {
                            db.data_mut()[r * cb + c] += gi.at(r, ca + c);
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if needs(*x) {
                    let (rows, cols) = val(*x).shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for (out_r, &src_r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            dx.data_mut()[src_r * cols + c] += gi.at(out_r, c);
                        }
                    }
                }
            }
            Op::ClampScalar { x, lo, hi } => {
                if needs(*x) {
                    let xv = val(*x);
                    let (rows, cols) = xv.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for ((d, s), v) in dx.data_mut().iter_mut().zip(gi.data()).zip(xv.data()) {
                        if *v > *lo && *v < *hi {
                            *d += s;
                        }
                    }
                }
            }
            Op::ClampBox { x, lo, hi } => {
                if needs(*x) {
                    let xv = val(*x);
                    let (rows, cols) = xv.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for i in 0..rows * cols {
                        let v = xv.data()[i];
                        if v > lo.data()[i] && v < hi.data()[i] {
                            dx.data_mut()[i] += gi.data()[i];
                        }
                    }
                }
            }
            Op::PairwiseSqdist { a, b } => {
                // D_ij = Σ_d (a_id − b_jd)²
                // dA = 2(rowsum(g)∘a − g@b); dB = 2(colsum(g)∘b − gᵀ@a)
                let (av, bv) = (val(*a), val(*b));
                let (n, d) = av.shape();
                let m = bv.rows();
                if needs(*a) {
                    let da = acc(&mut g[*a], n, d);
                    tensor::dgemm_acc(
                        n, m, d, -2.0,
                        gi.data(), m as isize, 1,
                        bv.data(), d as isize, 1,
                        da.data_mut(), d as isize,
                    );
                    for i in 0..n {
                        let row_sum: f64 = gi.data()[i * m..(i + 1) * m].iter().sum();
                        for t in 0..d {
                            da.data_mut()[i * d + t] += 2.0 * row_sum * av.at(i, t);
                        }
                    }
                }
                if needs(*b) {
                    let db = acc(&mut g[*b], m, d);
                    tensor::dgemm_acc(
                        m, n, d, -2.0,
                        gi.data(), 1, m as isize,
                        av.data(), d as isize, 1,
                        db.data_mut(), d as isize,
                    );
                    let mut col_sum = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            col_sum[j] += gi.at(i, j);
                        }
                    }
                    for j in 0..m {
                        for t in 0..d {
                            db.data_mut()[j * d + t] += 2.0 * col_sum[j] * bv.at(j, t);
                        }
                    }
                }
            }
            Op::ColSoftmax { x } => {
                if needs(*x) {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for r in 0..rows {
                            dot += gi.at(r, c) * y.at(r, c);
                        }
                        for r in 0..rows {
                            dx.data_mut()[r * cols + c] += y.at(r, c) * (gi.at(r, c) - dot);
                        }
                    }
                }
            }
            Op::MaskedRowSoftmax { x, mask } => {
                if needs(*x) {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let dx = acc(&mut g[*x], rows, cols);
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += gi.at(r, c) * y.at(r, c);
                        }
                        for c in 0..cols {
                            if mask[r * cols + c] {
                                dx.data_mut()[r * cols + c] += y.at(r, c) * (gi.at(r, c) - dot);
                            }
                        }
                    }
                }
            }
        }
    }
}

//! Differentiable loss builders. Each appends nodes to a caller-owned tape
//! and returns the scalar loss `Var`; values agree with the plain-`f64`
//! metrics in [`crate::metrics`] on the same inputs.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Squared-distance Chamfer between point sets `a` (N×3) and `b` (M×3):
/// mean over `a` of the nearest squared distance into `b`, plus the reverse.
pub fn chamfer_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d2 = tape.pairwise_sqdist(a, b)?;
    let a_to_b = tape.min_over_cols(d2)?;
    let a_term = tape.mean_all(a_to_b)?;
    let b_to_a = tape.min_over_rows(d2)?;
    let b_term = tape.mean_all(b_to_a)?;
    tape.add(a_term, b_term)
}

/// Repulsion penalty over each point's `k` nearest neighbors (self excluded,
/// selected from current values): mean of max(0, h − d)·exp(−d²/h²).
pub fn repulsion_var(tape: &mut Tape, p: Var, k: usize, h: f64) -> Result<Var> {
    let pv = tape.value(p);
    let n = pv.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "repulsion: k {k} out of range for {n} points"
        )));
    }
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("repulsion: h {h} not positive")));
    }
    let pts = pv.to_points()?;
    let mut anchor_idx = Vec::with_capacity(n * k);
    let mut neigh_idx = Vec::with_capacity(n * k);
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        let a = pts[i];
        for (j, b) in pts.iter().enumerate() {
            if j != i {
                let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                row.push((d2, j));
            }
        }
        row.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        row[..k].sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, j) in row[..k].iter() {
            anchor_idx.push(i);
            neigh_idx.push(j);
        }
    }
    let pi = tape.gather_rows(p, &anchor_idx)?;
    let pj = tape.gather_rows(p, &neigh_idx)?;
    let diff = tape.sub(pi, pj)?;
    let sq = tape.square(diff)?;
    let d2 = tape.sum_over_cols(sq)?;
    let d = tape.sqrt(d2)?;
    let neg_d = tape.neg(d)?;
    let gap = tape.add_scalar(neg_d, h)?;
    let hinge = tape.relu(gap)?;
    let scaled = tape.scale(d2, -1.0 / (h * h))?;
    let falloff = tape.exp(scaled)?;
    let terms = tape.mul(hinge, falloff)?;
    tape.mean_all(terms)
}

/// Misclassification loss selector for attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// −CE(logits, y): minimizing drives probability mass off the true class.
    NegCrossEntropy,
    /// max(0, z_y − max_{j≠y} z_j): zero once the cloud is misclassified.
    LogitMargin,
}

/// Negative cross-entropy (mean over rows) for untargeted attacks.
pub fn neg_cross_entropy_var(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let ce = tape.softmax_cross_entropy(logits, targets)?;
    tape.neg(ce)
}

/// Hinged logit margin for one cloud: logits must be 1×Z.
pub fn logit_margin_var(tape: &mut Tape, logits: Var, y: usize) -> Result<Var> {
    let (rows, z) = tape.value(logits).shape();
    if rows != 1 {
        return Err(Error::ShapeMismatch {
            op: "logit_margin",
            detail: format!("expected 1 logit row, got {rows}"),
        });
    }
    if z < 2 || y >= z {
        return Err(Error::InvalidArgument(format!(
            "logit_margin: class {y} invalid for {z} logits"
        )));
    }
    // constant selectors: e_y picks z_y, S drops column y
    let mut ey = Tensor::zeros(z, 1);
    ey.data_mut()[y] = 1.0;
    let mut s = Tensor::zeros(z, z - 1);
    let mut col = 0;
    for j in 0..z {
        if j != y {
            s.data_mut()[j * (z - 1) + col] = 1.0;
            col += 1;
        }
    }
    let ey = tape.constant(ey);
    let s = tape.constant(s);
    let zy = tape.matmul(logits, ey)?;
    let others = tape.matmul(logits, s)?;
    let best_other = tape.max_over_cols(others)?;
    let margin = tape.sub(zy, best_other)?;
    tape.relu(margin)
}

/// Applies the selected misclassification loss to single-cloud logits.
pub fn misclassification_var(
    tape: &mut Tape,
    variant: LossVariant,
    logits: Var,
    y: usize,
) -> Result<Var> {
    match variant {
        LossVariant::NegCrossEntropy => neg_cross_entropy_var(tape, logits, &[y]),
        LossVariant::LogitMargin => logit_margin_var(tape, logits, y),
    }
}

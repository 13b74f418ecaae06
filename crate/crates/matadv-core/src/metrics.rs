//! Scalar geometric and attack-quality measures: Chamfer, Hausdorff, kNN
//! distance, repulsion loss, and attack success rate.
//!
//! These are the plain (non-differentiated) evaluators; the training and
//! attack objectives rebuild the same formulas on the tape in [`crate::losses`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Imperceptibility measures reported per attack row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub hausdorff: f64,
    pub knn_mean: f64,
}

fn sqdist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn min_sqdist_to(p: &[f64; 3], cloud: &PointCloud) -> f64 {
    cloud
        .points
        .iter()
        .map(|q| sqdist(p, q))
        .fold(f64::INFINITY, f64::min)
}

/// Squared, bidirectional, mean-reduced Chamfer distance:
/// `mean_p min_q ‖p−q‖² + mean_q min_p ‖q−p‖²`.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let fwd: f64 =
        p.points.iter().map(|x| min_sqdist_to(x, q)).sum::<f64>() / p.len() as f64;
    let back: f64 =
        q.points.iter().map(|x| min_sqdist_to(x, p)).sum::<f64>() / q.len() as f64;
    Ok(fwd + back)
}

/// Unsquared two-sided Hausdorff distance.
pub fn hausdorff(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let one_sided = |a: &PointCloud, b: &PointCloud| {
        a.points
            .iter()
            .map(|x| min_sqdist_to(x, b))
            .fold(0.0_f64, f64::max)
            .sqrt()
    };
    Ok(one_sided(p, q).max(one_sided(q, p)))
}

/// Mean over points of the mean Euclidean distance to their `k` nearest
/// neighbors, self excluded.
pub fn knn_distance(p: &PointCloud, k: usize) -> Result<f64> {
    let n = p.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "knn_distance: k = {k} out of range for {n} points"
        )));
    }
    let mut total = 0.0;
    let mut d = vec![0.0_f64; n];
    for (i, a) in p.points.iter().enumerate() {
        for (j, b) in p.points.iter().enumerate() {
            d[j] = if i == j { f64::INFINITY } else { sqdist(a, b) };
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
        let mean_k: f64 = order[..k].iter().map(|&j| d[j].sqrt()).sum::<f64>() / k as f64;
        total += mean_k;
    }
    Ok(total / n as f64)
}

/// Hinge-times-Gaussian repulsion penalty over each point's `k` nearest
/// neighbors (self excluded):
/// `(1/(N·k)) Σ_i Σ_{j∈kNN(i)} max(0, h − d_ij)·exp(−d_ij²/h²)`.
pub fn repulsion_loss(p: &PointCloud, k: usize, h: f64) -> Result<f64> {
    let n = p.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "repulsion_loss: k = {k} out of range for {n} points"
        )));
    }
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "repulsion_loss: bandwidth h = {h} must be positive"
        )));
    }
    let mut total = 0.0;
    let mut d = vec![0.0_f64; n];
    for (i, a) in p.points.iter().enumerate() {
        for (j, b) in p.points.iter().enumerate() {
            d[j] = if i == j { f64::INFINITY } else { sqdist(a, b) };
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
        for &j in &order[..k] {
            let dist = d[j].sqrt();
            let hinge = (h - dist).max(0.0);
            total += hinge * (-dist * dist / (h * h)).exp();
        }
    }
    Ok(total / (n * k) as f64)
}

/// Percentage of adversarial examples misclassified, counted only over the
/// clean inputs the model classified correctly. `None` when no clean input
/// was correct (undefined rate).
pub fn attack_success_rate(
    clean_pred: &[usize],
    adv_pred: &[usize],
    labels: &[usize],
) -> Result<Option<f64>> {
    if clean_pred.len() != adv_pred.len() || clean_pred.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "attack_success_rate: length mismatch ({}, {}, {})",
            clean_pred.len(),
            adv_pred.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "attack_success_rate: empty prediction lists".into(),
        ));
    }
    let mut denom = 0usize;
    let mut num = 0usize;
    for i in 0..labels.len() {
        if clean_pred[i] == labels[i] {
            denom += 1;
            if adv_pred[i] != labels[i] {
                num += 1;
            }
        }
    }
    if denom == 0 {
        return Ok(None);
    }
    Ok(Some(100.0 * num as f64 / denom as f64))
}

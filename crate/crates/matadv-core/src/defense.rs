//! Input-purification defenses (random subsampling and statistical outlier
//! removal) plus adversarial training against the PGD baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_baseline, AttackConfig, AttackResult};
use crate::autodiff::{Adam, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geom::{self, PointCloud};
use crate::seeds;
use crate::victims::{argmax, TrainConfig, TrainHistory, VictimNet};

/// Defense selector stored inside experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Srs,
    Sor,
}

impl DefenseKind {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Srs => "srs",
            DefenseKind::Sor => "sor",
        }
    }
}

/// Purification settings; only the fields of the selected kind matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseSpec {
    pub kind: DefenseKind,
    /// Points removed by SRS.
    pub srs_drop: usize,
    /// Neighborhood size for SOR statistics.
    pub sor_k: usize,
    /// SOR removal threshold in standard deviations above the mean.
    pub sor_alpha: f64,
    pub seed: u64,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        DefenseSpec {
            kind: DefenseKind::None,
            srs_drop: 0,
            sor_k: 2,
            sor_alpha: 1.1,
            seed: 0,
        }
    }
}

impl DefenseSpec {
    pub fn none() -> Self {
        DefenseSpec::default()
    }

    pub fn srs(drop: usize, seed: u64) -> Self {
        DefenseSpec {
            kind: DefenseKind::Srs,
            srs_drop: drop,
            seed,
            ..DefenseSpec::default()
        }
    }

    pub fn sor(k: usize, alpha: f64) -> Self {
        DefenseSpec {
            kind: DefenseKind::Sor,
            sor_k: k,
            sor_alpha: alpha,
            ..DefenseSpec::default()
        }
    }

    /// Validates against the cloud size the defense will see.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self.kind {
            DefenseKind::None => Ok(()),
            DefenseKind::Srs => {
                if self.srs_drop >= n {
                    Err(Error::InvalidArgument(format!(
                        "srs: drop {} leaves nothing of {} points",
                        self.srs_drop, n
                    )))
                } else {
                    Ok(())
                }
            }
            DefenseKind::Sor => {
                if self.sor_k == 0 || self.sor_k >= n {
                    Err(Error::InvalidArgument(format!(
                        "sor: k {} out of range for {} points",
                        self.sor_k, n
                    )))
                } else if !(self.sor_alpha > 0.0) {
                    Err(Error::InvalidArgument(format!(
                        "sor: alpha {} not positive",
                        self.sor_alpha
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Scales the reference drop count (500 of 1024) to other cloud sizes.
pub fn scaled_srs_drop(n: usize) -> usize {
    ((500.0 * n as f64) / 1024.0).round() as usize
}

/// Simple random sampling: keeps a uniformly chosen subset of N − drop
/// points in their original order.
pub fn srs(cloud: &PointCloud, drop: usize, seed: u64) -> Result<PointCloud> {
    let n = cloud.points.len();
    if drop >= n {
        return Err(Error::InvalidArgument(format!(
            "srs: drop {drop} leaves nothing of {n} points"
        )));
    }
    if drop == 0 {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let (survivors, _) = idx.partial_shuffle(&mut rng, n - drop);
    let mut keep = survivors.to_vec();
    keep.sort_unstable();
    PointCloud::new(keep.iter().map(|&i| cloud.points[i]).collect(), cloud.label)
}

/// Per-point mean Euclidean distance to the k nearest other points.
fn mean_knn_distances(pts: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = pts.len();
    let mut row: Vec<f64> = Vec::with_capacity(n - 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        let a = pts[i];
        for (j, b) in pts.iter().enumerate() {
            if j != i {
                row.push(
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2),
                );
            }
        }
        row.select_nth_unstable_by(k - 1, f64::total_cmp);
        out.push(row[..k].iter().map(|d2| d2.sqrt()).sum::<f64>() / k as f64);
    }
    out
}

/// Statistical outlier removal: drops points whose mean k-NN distance
/// exceeds μ + α·σ (population σ) of those means; survivor order preserved.
pub fn sor(cloud: &PointCloud, k: usize, alpha: f64) -> Result<PointCloud> {
    let n = cloud.points.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "sor: k {k} out of range for {n} points"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("sor: alpha {alpha} not positive")));
    }
    let dbar = mean_knn_distances(&cloud.points, k);
    let mu = dbar.iter().sum::<f64>() / n as f64;
    let var = dbar.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    let threshold = mu + alpha * var.sqrt();
    let survivors: Vec<[f64; 3]> = cloud
        .points
        .iter()
        .zip(&dbar)
        .filter(|(_, &d)| d <= threshold)
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(survivors, cloud.label)
}

/// Runs the selected purification; `none` is the identity.
pub fn apply_defense(spec: &DefenseSpec, cloud: &PointCloud) -> Result<PointCloud> {
    match spec.kind {
        DefenseKind::None => Ok(cloud.clone()),
        DefenseKind::Srs => srs(cloud, spec.srs_drop, spec.seed),
        DefenseKind::Sor => sor(cloud, spec.sor_k, spec.sor_alpha),
    }
}

/// Classifies the defended cloud.
pub fn defend_then_predict(
    model: &VictimNet,
    spec: &DefenseSpec,
    cloud: &PointCloud,
) -> Result<usize> {
    model.predict(&apply_defense(spec, cloud)?)
}

/// ASR of stored attack rows re-scored through a defense, as a percentage.
/// The denominator stays "clean-correct on the source model"; each row gets
/// its own defense seed stream. NaN when no row is eligible.
pub fn asr_under_defense(
    model: &VictimNet,
    spec: &DefenseSpec,
    results: &[AttackResult],
    labels: &[usize],
) -> Result<f64> {
    if results.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "defended asr: {} results for {} labels",
            results.len(),
            labels.len()
        )));
    }
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for (i, (r, &y)) in results.iter().zip(labels).enumerate() {
        if r.clean_pred != y {
            continue;
        }
        eligible += 1;
        let mut per = spec.clone();
        per.seed = seeds::stream_seed("defense", spec.seed, i as u64);
        if defend_then_predict(model, &per, &r.adv_cloud)? != y {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Ok(f64::NAN);
    }
    Ok(100.0 * hits as f64 / eligible as f64)
}

/// Cross-entropy training where round(mix_ratio·batch) samples of every batch
/// are replaced by PGD adversarial versions regenerated against the current
/// model. Every sample is first rotated per epoch exactly as in plain
/// training, so a fraction that rounds to zero reduces to plain training.
pub fn adversarial_training(
    model: &mut VictimNet,
    train_set: &[PointCloud],
    attack_cfg: &AttackConfig,
    mix_ratio: f64,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if !(mix_ratio > 0.0 && mix_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "adversarial training: mix ratio {mix_ratio} outside (0, 1]"
        )));
    }
    attack_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("adversarial training: empty dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument(
            "adversarial training: batch must be positive".into(),
        ));
    }
    let num_classes = model.num_classes();
    let mut labels = Vec::with_capacity(train_set.len());
    for cloud in train_set {
        let y = cloud
            .label
            .ok_or_else(|| Error::InvalidArgument("adversarial training: unlabeled cloud".into()))?;
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "adversarial training: label {y} out of range for {num_classes} classes"
            )));
        }
        labels.push(y);
    }
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let n_adv = (mix_ratio * chunk.len() as f64).round() as usize;
            // Rotations drawn in chunk order keep the rng stream identical to
            // plain training when the adversarial fraction rounds to zero.
            let views: Vec<PointCloud> = chunk
                .iter()
                .map(|&i| {
                    let rot = geom::random_rotation(&mut rng);
                    let pts = train_set[i]
                        .points
                        .iter()
                        .map(|&p| geom::mat_vec(&rot, p))
                        .collect();
                    PointCloud::new(pts, train_set[i].label)
                })
                .collect::<Result<_>>()?;
            let adv_clouds: Vec<Option<PointCloud>> = views
                .iter()
                .enumerate()
                .map(|(j, view)| {
                    if j < n_adv {
                        let r = pgd_baseline(
                            model,
                            view,
                            labels[chunk[j]],
                            attack_cfg.epsilon,
                            attack_cfg.iterations,
                            attack_cfg.step_size,
                        )?;
                        Ok(Some(r.adv_cloud))
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            let mut grad_acc: Vec<Tensor> = model
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for (j, &i) in chunk.iter().enumerate() {
                let cloud = adv_clouds[j].as_ref().unwrap_or(&views[j]);
                let mut tape = Tape::new();
                let pts = tape.constant(Tensor::from_points(&cloud.points));
                let (logits, vars) = model.build(&mut tape, pts, true)?;
                let loss = tape.softmax_cross_entropy(logits, &labels[i..i + 1])?;
                epoch_loss += tape.value(loss).item()?;
                if argmax(tape.value(logits).data()) == labels[i] {
                    epoch_correct += 1;
                }
                let grads = tape.backward(loss)?;
                for (acc, &v) in grad_acc.iter_mut().zip(&vars) {
                    if let Some(g) = grads.wrt(v) {
                        for (a, s) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += s;
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for acc in &mut grad_acc {
                for a in acc.data_mut() {
                    *a *= inv;
                }
            }
            let grad_refs: Vec<&Tensor> = grad_acc.iter().collect();
            let mut params = model.tensors_mut();
            opt.step(&mut params, &grad_refs)?;
        }
        let train_acc = 100.0 * epoch_correct as f64 / train_set.len() as f64;
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        history.train_acc.push(train_acc);
        history.test_acc.push(f64::NAN);
        if cfg.early_stop_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(history)
}

//! Victim classifiers: a pointwise-MLP network with global max pooling
//! (attack surrogate) and an edge-convolution network over local
//! neighborhoods (transfer target), plus shared training and evaluation.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{self, PointCloud};
use crate::nn::Mlp;
use crate::weights::ParamSet;

/// Lowest index wins ties, so prediction is deterministic.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Pointwise shared MLP 3→64→128→256, global max pool, head 256→128→Z.
#[derive(Debug, Clone)]
pub struct PointNetLite {
    pub backbone: Mlp,
    pub head: Mlp,
    pub num_classes: usize,
}

impl PointNetLite {
    pub fn new(num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointNetLite {
            backbone: Mlp::new("pointnet.backbone", &[3, 64, 128, 256], &mut rng),
            head: Mlp::new("pointnet.head", &[256, 128, num_classes], &mut rng),
            num_classes,
        }
    }

    fn build(&self, tape: &mut Tape, points: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let bb = self.backbone.bind(tape, trainable);
        let hd = self.head.bind(tape, trainable);
        let mut vars = bb.vars();
        vars.extend(hd.vars());
        let h = bb.apply(tape, points)?;
        let h = tape.relu(h)?;
        let pooled = tape.max_over_rows(h)?;
        let logits = hd.apply(tape, pooled)?;
        Ok((logits, vars))
    }
}

/// Neighbor pair lists (anchor row, neighbor row) defining the edge set.
pub type EdgeIndex = (Vec<usize>, Vec<usize>);

/// Edge MLP 6→64→128 on [xᵢ; xⱼ−xᵢ] over each point's k_e nearest neighbors
/// (self-inclusive), global max pool over all edges, linear head 128→Z.
#[derive(Debug, Clone)]
pub struct EdgeConvLite {
    pub k_e: usize,
    pub edge_mlp: Mlp,
    pub head: Mlp,
    pub num_classes: usize,
}

impl EdgeConvLite {
    pub fn new(num_classes: usize, k_e: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EdgeConvLite {
            k_e,
            edge_mlp: Mlp::new("edgeconv.edge", &[6, 64, 128], &mut rng),
            head: Mlp::new("edgeconv.head", &[128, num_classes], &mut rng),
            num_classes,
        }
    }

    /// Neighborhood graph from concrete coordinates; the k_e nearest include
    /// the point itself at distance zero.
    pub fn edge_index(&self, points: &[[f64; 3]]) -> Result<EdgeIndex> {
        if points.len() < self.k_e {
            return Err(Error::InvalidArgument(format!(
                "edgeconv: {} points < k_e {}",
                points.len(),
                self.k_e
            )));
        }
        let cloud = PointCloud::new(points.to_vec(), None)?;
        let nbrs = geom::knn(&cloud, &cloud, self.k_e)?;
        let mut anchors = Vec::with_capacity(points.len() * self.k_e);
        let mut neighbors = Vec::with_capacity(points.len() * self.k_e);
        for (i, row) in nbrs.iter().enumerate() {
            for &j in row {
                anchors.push(i);
                neighbors.push(j);
            }
        }
        Ok((anchors, neighbors))
    }

    fn build_with_edges(
        &self,
        tape: &mut Tape,
        points: Var,
        edges: &EdgeIndex,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let em = self.edge_mlp.bind(tape, trainable);
        let hd = self.head.bind(tape, trainable);
        let mut vars = em.vars();
        vars.extend(hd.vars());
        let xi = tape.gather_rows(points, &edges.0)?;
        let xj = tape.gather_rows(points, &edges.1)?;
        let rel = tape.sub(xj, xi)?;
        let edge_feat = tape.concat_cols(xi, rel)?;
        let h = em.apply(tape, edge_feat)?;
        let h = tape.relu(h)?;
        let pooled = tape.max_over_rows(h)?;
        let logits = hd.apply(tape, pooled)?;
        Ok((logits, vars))
    }
}

/// Either victim behind one interface; weight files stay arch-specific
/// through distinct parameter names.
#[derive(Debug, Clone)]
pub enum VictimNet {
    PointNet(PointNetLite),
    EdgeConv(EdgeConvLite),
}

impl VictimNet {
    pub fn kind(&self) -> &'static str {
        match self {
            VictimNet::PointNet(_) => "pointnet-lite",
            VictimNet::EdgeConv(_) => "edgeconv-lite",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            VictimNet::PointNet(m) => m.num_classes,
            VictimNet::EdgeConv(m) => m.num_classes,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            VictimNet::PointNet(m) => {
                let mut t = m.backbone.tensors();
                t.extend(m.head.tensors());
                t
            }
            VictimNet::EdgeConv(m) => {
                let mut t = m.edge_mlp.tensors();
                t.extend(m.head.tensors());
                t
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            VictimNet::PointNet(m) => {
                let mut t = m.backbone.tensors_mut();
                t.extend(m.head.tensors_mut());
                t
            }
            VictimNet::EdgeConv(m) => {
                let mut t = m.edge_mlp.tensors_mut();
                t.extend(m.head.tensors_mut());
                t
            }
        }
    }

    /// Logits for a point Var already on `tape`; gradients flow to the input
    /// (and to the weights when `trainable`). Edge graphs come from the
    /// Var's current values.
    pub fn build(&self, tape: &mut Tape, points: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        match self {
            VictimNet::PointNet(m) => m.build(tape, points, trainable),
            VictimNet::EdgeConv(m) => {
                let pts = tape.value(points).to_points()?;
                let edges = m.edge_index(&pts)?;
                m.build_with_edges(tape, points, &edges, trainable)
            }
        }
    }

    /// Like [`VictimNet::build`] but reusing a precomputed edge graph
    /// (ignored for the pointwise net); training caches graphs per cloud.
    pub fn build_cached(
        &self,
        tape: &mut Tape,
        points: Var,
        edges: Option<&EdgeIndex>,
        trainable: bool,
    ) -> Result<(Var, Vec<Var>)> {
        match (self, edges) {
            (VictimNet::EdgeConv(m), Some(e)) => m.build_with_edges(tape, points, e, trainable),
            _ => self.build(tape, points, trainable),
        }
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pts = tape.constant(Tensor::from_points(&cloud.points));
        let (logits, _) = self.build(&mut tape, pts, false)?;
        Ok(tape.value(logits).data().to_vec())
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        Ok(argmax(&self.forward(cloud)?))
    }

    /// Percentage of argmax-correct predictions.
    pub fn evaluate(&self, data: &[PointCloud]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("evaluate: empty dataset".into()));
        }
        let mut correct = 0usize;
        for cloud in data {
            let label = cloud
                .label
                .ok_or_else(|| Error::InvalidArgument("evaluate: unlabeled cloud".into()))?;
            if self.predict(cloud)? == label {
                correct += 1;
            }
        }
        Ok(100.0 * correct as f64 / data.len() as f64)
    }
}

impl ParamSet for VictimNet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            VictimNet::PointNet(m) => {
                let mut t = m.backbone.named_tensors();
                t.extend(m.head.named_tensors());
                t
            }
            VictimNet::EdgeConv(m) => {
                let mut t = m.edge_mlp.named_tensors();
                t.extend(m.head.named_tensors());
                t
            }
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            VictimNet::PointNet(m) => {
                let mut t = m.backbone.named_tensors_mut();
                t.extend(m.head.named_tensors_mut());
                t
            }
            VictimNet::EdgeConv(m) => {
                let mut t = m.edge_mlp.named_tensors_mut();
                t.extend(m.head.named_tensors_mut());
                t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Stop once the running train accuracy (percent) reaches this value.
    pub early_stop_acc: Option<f64>,
    /// Gaussian jitter sigma applied per coordinate after rotation.
    pub jitter_sigma: f64,
    /// Count-resampling factor range: every view is drawn with replacement
    /// to round(N·f) points, f uniform in [count_lo, count_hi].
    pub count_lo: f64,
    pub count_hi: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-3,
            batch: 16,
            seed: 0,
            early_stop_acc: None,
            jitter_sigma: 0.02,
            count_lo: 0.5,
            count_hi: 4.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("train: batch must be positive".into()));
        }
        if !(self.count_lo > 0.0 && self.count_hi >= self.count_lo) {
            return Err(Error::InvalidArgument(format!(
                "train: count factor range [{}, {}] invalid",
                self.count_lo, self.count_hi
            )));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "train: jitter sigma {} negative",
                self.jitter_sigma
            )));
        }
        Ok(())
    }
}

/// One training view of a cloud: count resample with replacement, one shared
/// random rotation, then independent per-point jitter. The rng draw order is
/// fixed (count factor, indices, rotation, jitter) so runs are replayable.
pub fn augment_view(
    points: &[[f64; 3]],
    cfg: &TrainConfig,
    min_points: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let n = points.len();
    let f = cfg.count_lo + (cfg.count_hi - cfg.count_lo) * rng.random::<f64>();
    let m = ((n as f64 * f).round() as usize).max(min_points).max(1);
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    let rot = geom::random_rotation(rng);
    let mut out = Vec::with_capacity(m);
    for j in idx {
        let p = geom::mat_vec(&rot, points[j]);
        if cfg.jitter_sigma > 0.0 {
            let g = geom::gaussian3(rng);
            out.push([
                p[0] + cfg.jitter_sigma * g[0],
                p[1] + cfg.jitter_sigma * g[1],
                p[2] + cfg.jitter_sigma * g[2],
            ]);
        } else {
            out.push(p);
        }
    }
    out
}

/// Fewest points a view may shrink to: EdgeConv needs k_e points for its
/// self-inclusive neighbor graph.
pub fn min_view_points(model: &VictimNet) -> usize {
    match model {
        VictimNet::PointNet(_) => 1,
        VictimNet::EdgeConv(m) => m.k_e,
    }
}

/// Per-epoch record; lengths equal the number of epochs actually run.
/// Train accuracy is the running accuracy over the epoch's own forward
/// passes; test accuracy is NaN when no test split is supplied.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
}

/// Cross-entropy training with per-batch averaged gradients; deterministic
/// for a fixed seed. Each sample is rotated by a fresh random rotation every
/// epoch so the learned features generalize across poses.
pub fn train(
    model: &mut VictimNet,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("train: empty dataset".into()));
    }
    cfg.validate()?;
    let num_classes = model.num_classes();
    let mut labels = Vec::with_capacity(train_set.len());
    for cloud in train_set {
        let y = cloud
            .label
            .ok_or_else(|| Error::InvalidArgument("train: unlabeled cloud".into()))?;
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "train: label {y} out of range for {num_classes} classes"
            )));
        }
        labels.push(y);
    }
    // Rotations are isometries, so the kNN graph of a rotated cloud matches
    // the graph of the original coordinates and the cache stays valid.
    let edge_cache: Option<Vec<EdgeIndex>> = match model {
        VictimNet::EdgeConv(m) => Some(
            train_set
                .iter()
                .map(|c| m.edge_index(&c.points))
                .collect::<Result<_>>()?,
        ),
        VictimNet::PointNet(_) => None,
    };
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut grad_acc: Vec<Tensor> = model
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for &i in chunk {
                let rot = geom::random_rotation(&mut rng);
                let rotated: Vec<[f64; 3]> = train_set[i]
                    .points
                    .iter()
                    .map(|&p| geom::mat_vec(&rot, p))
                    .collect();
                let mut tape = Tape::new();
                let pts = tape.constant(Tensor::from_points(&rotated));
                let (logits, vars) = model.build_cached(
                    &mut tape,
                    pts,
                    edge_cache.as_ref().map(|c| &c[i]),
                    true,
                )?;
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
        history.test_acc.push(if test_set.is_empty() {
            f64::NAN
        } else {
            model.evaluate(test_set)?
        });
        if cfg.early_stop_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_multi;
    use crate::losses;

    fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                ]
            })
            .collect()
    }

    fn both_models() -> Vec<VictimNet> {
        vec![
            VictimNet::PointNet(PointNetLite::new(4, 11)),
            VictimNet::EdgeConv(EdgeConvLite::new(4, 5, 12)),
        ]
    }

    #[test]
    fn argmax_tie_rule() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn permuting_rows_leaves_logits_bitwise_equal() {
        let pts = random_cloud(24, 1);
        let mut shuffled = pts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        shuffled.shuffle(&mut rng);
        for model in both_models() {
            let a = model.forward(&PointCloud::new(pts.clone(), None).unwrap()).unwrap();
            let b = model.forward(&PointCloud::new(shuffled.clone(), None).unwrap()).unwrap();
            assert_eq!(a, b, "{}", model.kind());
        }
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let pts = PointCloud::new(random_cloud(16, 3), None).unwrap();
        let mut pn = PointNetLite::new(4, 4);
        pn.head = Mlp::zeros("pointnet.head", &[256, 128, 4]);
        let logits = VictimNet::PointNet(pn).forward(&pts).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let mut ec = EdgeConvLite::new(4, 5, 5);
        ec.head = Mlp::zeros("edgeconv.head", &[128, 4]);
        let logits = VictimNet::EdgeConv(ec).forward(&pts).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        for model in both_models() {
            let x0 = Tensor::from_points(&random_cloud(14, 6));
            let rep = grad_check_multi(&[x0], 1e-5, |xs| {
                let mut tape = Tape::new();
                let pts = tape.leaf(xs[0].clone().with_grad());
                let (logits, _) = model.build(&mut tape, pts, false)?;
                let loss = losses::logit_margin_var(&mut tape, logits, 1)?;
                let g = tape.backward(loss)?;
                Ok((tape.value(loss).item()?, vec![g.wrt_or_zeros(&tape, pts)]))
            })
            .unwrap();
            assert!(
                rep.passes(1e-3),
                "{}: max rel err {}",
                model.kind(),
                rep.max_rel_err
            );
        }
    }

    #[test]
    fn edgeconv_rejects_too_few_points() {
        let model = VictimNet::EdgeConv(EdgeConvLite::new(4, 16, 7));
        let pts = PointCloud::new(random_cloud(8, 8), None).unwrap();
        assert!(model.forward(&pts).is_err());
    }

    #[test]
    fn noncritical_point_does_not_move_pointnet_logits() {
        let model = VictimNet::PointNet(PointNetLite::new(4, 9));
        let pts = random_cloud(400, 10);
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::from_points(&pts).with_grad());
        let (logits, _) = model.build(&mut tape, v, false).unwrap();
        let s = tape.sum_all(logits).unwrap();
        let g = tape.backward(s).unwrap();
        let gx = g.wrt(v).unwrap();
        let quiet = (0..pts.len())
            .find(|&r| (0..3).all(|c| gx.at(r, c) == 0.0))
            .expect("some row should sit below every channel max");
        let base = model.forward(&PointCloud::new(pts.clone(), None).unwrap()).unwrap();
        let mut moved = pts.clone();
        moved[quiet][0] += 1e-6;
        moved[quiet][2] -= 1e-6;
        let after = model.forward(&PointCloud::new(moved, None).unwrap()).unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn moving_a_point_changes_edgeconv_logits() {
        let model = VictimNet::EdgeConv(EdgeConvLite::new(4, 5, 13));
        let pts = random_cloud(20, 14);
        let base = model.forward(&PointCloud::new(pts.clone(), None).unwrap()).unwrap();
        let mut moved = pts;
        moved[3] = [5.0, -4.0, 6.0];
        let after = model.forward(&PointCloud::new(moved, None).unwrap()).unwrap();
        assert_ne!(base, after);
    }

    fn toy_two_class(per_class: usize, n: usize, seed: u64) -> Vec<PointCloud> {
        // class 0 hugs the origin, class 1 sits shifted well apart
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for label in 0..2usize {
            let shift = label as f64 * 2.0;
            for _ in 0..per_class {
                let pts: Vec<[f64; 3]> = (0..n)
                    .map(|_| {
                        [
                            shift + rng.random::<f64>() * 0.5,
                            shift + rng.random::<f64>() * 0.5,
                            rng.random::<f64>() * 0.5,
                        ]
                    })
                    .collect();
                out.push(PointCloud::new(pts, Some(label)).unwrap());
            }
        }
        out
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let data = toy_two_class(3, 12, 20);
        let mut model = VictimNet::PointNet(PointNetLite::new(2, 21));
        let before: Vec<Vec<f64>> = model.tensors().iter().map(|t| t.data().to_vec()).collect();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let hist = train(&mut model, &data, &[], &cfg).unwrap();
        assert!(hist.train_loss.is_empty());
        for (t, b) in model.tensors().iter().zip(&before) {
            assert_eq!(t.data(), &b[..]);
        }
    }

    #[test]
    fn separable_toy_set_trains_to_high_accuracy() {
        let data = toy_two_class(20, 16, 22);
        let mut model = VictimNet::PointNet(PointNetLite::new(2, 23));
        let cfg = TrainConfig {
            epochs: 50,
            early_stop_acc: Some(99.0),
            ..TrainConfig::default()
        };
        let hist = train(&mut model, &data, &[], &cfg).unwrap();
        assert!(
            hist.train_acc.last().unwrap() >= &99.0,
            "final train acc {:?}",
            hist.train_acc.last()
        );
        assert!(hist.train_loss.len() <= 50);
        assert!(model.evaluate(&data).unwrap() >= 99.0);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let data = toy_two_class(4, 10, 24);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let mut m1 = VictimNet::EdgeConv(EdgeConvLite::new(2, 4, 25));
        let h1 = train(&mut m1, &data, &data, &cfg).unwrap();
        let mut m2 = VictimNet::EdgeConv(EdgeConvLite::new(2, 4, 25));
        let h2 = train(&mut m2, &data, &data, &cfg).unwrap();
        assert_eq!(h1.train_loss, h2.train_loss);
        assert_eq!(h1.test_acc, h2.test_acc);
        for (a, b) in m1.tensors().iter().zip(m2.tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn evaluate_scores_and_errors() {
        let model = VictimNet::PointNet(PointNetLite::new(2, 26));
        let pts = random_cloud(10, 27);
        let predicted = model
            .predict(&PointCloud::new(pts.clone(), None).unwrap())
            .unwrap();
        let right = PointCloud::new(pts.clone(), Some(predicted)).unwrap();
        assert_eq!(model.evaluate(std::slice::from_ref(&right)).unwrap(), 100.0);
        let wrong = PointCloud::new(pts.clone(), Some(1 - predicted)).unwrap();
        assert_eq!(model.evaluate(std::slice::from_ref(&wrong)).unwrap(), 0.0);
        assert!(model.evaluate(&[]).is_err());
        let unlabeled = PointCloud::new(pts, None).unwrap();
        assert!(model.evaluate(std::slice::from_ref(&unlabeled)).is_err());
    }

    #[test]
    fn predict_matches_forward_argmax() {
        let model = VictimNet::EdgeConv(EdgeConvLite::new(4, 5, 28));
        let cloud = PointCloud::new(random_cloud(12, 29), None).unwrap();
        let logits = model.forward(&cloud).unwrap();
        assert_eq!(model.predict(&cloud).unwrap(), argmax(&logits));
    }
}

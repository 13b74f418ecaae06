//! Representation-space adversarial attack with sphere-level perturbation
//! dropout, component ablation switches, and a coordinate-space PGD baseline.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::losses::{chamfer_var, misclassification_var, LossVariant};
use crate::mat::{DecoderModel, EncoderModel, MATRep};
use crate::victims::{argmax, VictimNet};

/// Which blocks of Θ the attack may perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Centers,
    Radii,
    Features,
}

impl Component {
    pub fn short(&self) -> &'static str {
        match self {
            Component::Centers => "C",
            Component::Radii => "R",
            Component::Features => "Z",
        }
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "centers" => Ok(Component::Centers),
            "r" | "radii" => Ok(Component::Radii),
            "z" | "features" => Ok(Component::Features),
            other => Err(Error::InvalidArgument(format!(
                "unknown component {other:?} (expected C, R, or Z)"
            ))),
        }
    }
}

/// Parses a comma-separated component list such as "C,R,Z".
pub fn parse_components(s: &str) -> Result<Vec<Component>> {
    s.split(',').map(Component::from_str).collect()
}

/// Canonical "C+R+Z"-style label for report rows.
pub fn components_label(components: &[Component]) -> String {
    let mut sorted = components.to_vec();
    sorted.sort();
    sorted
        .iter()
        .map(|c| c.short())
        .collect::<Vec<_>>()
        .join("+")
}

/// ΔΘ: additive perturbation blocks mirroring a MATRep's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub centers: Tensor,
    pub radii: Tensor,
    pub features: Tensor,
}

impl Perturbation {
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        Perturbation {
            centers: Tensor::zeros(n, 3),
            radii: Tensor::zeros(n, 1),
            features: Tensor::zeros(n, feature_dim),
        }
    }

    pub fn n(&self) -> usize {
        self.centers.rows()
    }
}

/// Copy of Δ with the rows where `mask` is false zeroed in every block; the
/// input is untouched.
pub fn apply_mask(delta: &Perturbation, mask: &[bool]) -> Result<Perturbation> {
    let n = delta.n();
    if mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "apply_mask: mask length {} for {} spheres",
            mask.len(),
            n
        )));
    }
    let mut out = delta.clone();
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            continue;
        }
        for t in [&mut out.centers, &mut out.radii, &mut out.features] {
            let cols = t.cols();
            t.data_mut()[i * cols..(i + 1) * cols].fill(0.0);
        }
    }
    Ok(out)
}

/// Fresh sphere-dropout draw: exactly round(rho·n) false entries at uniformly
/// chosen positions, the rest true.
pub fn dropout_mask(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "dropout: rho {rho} outside [0, 1]"
        )));
    }
    let drop = ((rho * n as f64).round() as usize).min(n);
    let mut mask = vec![true; n];
    let mut idx: Vec<usize> = (0..n).collect();
    let (dropped, _) = idx.partial_shuffle(rng, drop);
    for &i in dropped.iter() {
        mask[i] = false;
    }
    Ok(mask)
}

/// Attack hyperparameters; `components` selects which Θ blocks move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// l∞ budget around the unperturbed reconstruction, in unit-sphere units.
    pub epsilon: f64,
    /// Weight on the chamfer imperceptibility term.
    pub lambda1: f64,
    /// Weight on the squared-Frobenius Δ penalty.
    pub lambda2: f64,
    /// Proportion of spheres whose perturbation is dropped each iteration.
    pub rho: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub components: Vec<Component>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.45,
            lambda1: 1.0,
            lambda2: 0.01,
            rho: 0.5,
            iterations: 200,
            step_size: 0.01,
            seed: 0,
            loss_variant: LossVariant::NegCrossEntropy,
            components: vec![Component::Centers, Component::Radii, Component::Features],
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "attack: epsilon {} not positive",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!(
                "attack: rho {} outside [0, 1]",
                self.rho
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "attack: step size {} not positive",
                self.step_size
            )));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::InvalidArgument("attack: non-finite lambda".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidArgument(
                "attack: components must be nonempty".into(),
            ));
        }
        let mut sorted = self.components.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.components.len() {
            return Err(Error::InvalidArgument(
                "attack: duplicate components".into(),
            ));
        }
        Ok(())
    }

    fn selects(&self, c: Component) -> bool {
        self.components.contains(&c)
    }
}

/// One attacked cloud. `clean_pred != label` marks a skip-clean-miss row that
/// ASR denominators must exclude. `final_chamfer` and `final_reg` are the raw
/// (unweighted) chamfer and squared-Frobenius values of the final result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub adv_cloud: PointCloud,
    pub success: bool,
    pub iterations_used: usize,
    pub final_mis_loss: f64,
    pub final_chamfer: f64,
    pub final_reg: f64,
    pub clean_pred: usize,
    pub adv_pred: usize,
    /// Max coordinatewise deviation from the attack's reference cloud.
    pub max_dev: f64,
}

/// Vars of one attack forward pass.
struct StepVars {
    loss: Var,
    mis: Var,
    cham: Var,
    reg: Var,
    adv: Var,
    logits: Var,
    dc: Var,
    dr: Var,
    dz: Var,
}

/// Lays one masked forward pass on `tape`: decode(Θ + Δ_m) clamped into the
/// ε-box around the baseline reconstruction, then the full loss. `mask: None`
/// is the unmasked final pass. Unselected components never enter the graph,
/// so their gradients stay absent and their Δ blocks never move.
#[allow(clippy::too_many_arguments)]
fn attack_graph(
    tape: &mut Tape,
    victim: &VictimNet,
    dec: &DecoderModel,
    rep: &MATRep,
    delta: &Perturbation,
    mask: Option<&[bool]>,
    lo: &Tensor,
    hi: &Tensor,
    p_orig: &Tensor,
    y: usize,
    cfg: &AttackConfig,
) -> Result<StepVars> {
    let n = rep.n();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::InvalidArgument(format!(
                "attack: mask length {} for {} spheres",
                m.len(),
                n
            )));
        }
    }
    let dc = tape.leaf(delta.centers.clone().with_grad());
    let dr = tape.leaf(delta.radii.clone().with_grad());
    let dz = tape.leaf(delta.features.clone().with_grad());
    let c0 = tape.constant(rep.centers.clone());
    let r0 = tape.constant(rep.radii.clone());
    let z0 = tape.constant(rep.features.clone());
    let mask_col = match mask {
        Some(m) => {
            let col: Vec<f64> = m.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            Some(tape.constant(Tensor::new(n, 1, col)?))
        }
        None => None,
    };

    let mut reg_terms: Vec<Var> = Vec::new();
    let mut perturbed = [c0, r0, z0];
    for (slot, (d, comp)) in [
        (dc, Component::Centers),
        (dr, Component::Radii),
        (dz, Component::Features),
    ]
    .into_iter()
    .enumerate()
    {
        if !cfg.selects(comp) {
            continue;
        }
        let dm = match mask_col {
            Some(mc) => tape.mul(d, mc)?,
            None => d,
        };
        let sq = tape.square(dm)?;
        reg_terms.push(tape.sum_all(sq)?);
        perturbed[slot] = tape.add(perturbed[slot], dm)?;
    }
    let mut reg = reg_terms[0];
    for &t in &reg_terms[1..] {
        reg = tape.add(reg, t)?;
    }

    let (dv, _) = dec.build_decode(
        tape,
        perturbed[0],
        perturbed[1],
        perturbed[2],
        dec.cfg.pts_per_sphere,
        false,
    )?;
    let adv = tape.clamp_box(dv.out, lo, hi)?;
    let (logits, _) = victim.build(tape, adv, false)?;
    let mis = misclassification_var(tape, cfg.loss_variant, logits, y)?;
    let p = tape.constant(p_orig.clone());
    let cham = chamfer_var(tape, p, adv)?;
    let cham_w = tape.scale(cham, cfg.lambda1)?;
    let reg_w = tape.scale(reg, cfg.lambda2)?;
    let partial = tape.add(mis, cham_w)?;
    let loss = tape.add(partial, reg_w)?;
    Ok(StepVars {
        loss,
        mis,
        cham,
        reg,
        adv,
        logits,
        dc,
        dr,
        dz,
    })
}

/// Optimizes Δ over Θ = encode(P) so the decoded cloud fools `victim`, and
/// returns the final Δ alongside the result. Every iteration draws a fresh
/// dropout mask; the final cloud uses the full Δ through the same clamp.
/// Clouds the victim already misclassifies skip straight to the final pass.
pub fn mat_adv_attack_detail(
    victim: &VictimNet,
    enc: &EncoderModel,
    dec: &DecoderModel,
    cloud: &PointCloud,
    y: usize,
    cfg: &AttackConfig,
) -> Result<(AttackResult, Perturbation)> {
    cfg.validate()?;
    if y >= victim.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "attack: label {y} out of range for {} classes",
            victim.num_classes()
        )));
    }
    let clean_pred = victim.predict(cloud)?;
    let rep = enc.encode(cloud)?;
    let n = rep.n();
    let baseline = dec.decode(&rep)?;
    let p0 = Tensor::from_points(&baseline.points);
    let mut lo = p0.clone();
    let mut hi = p0.clone();
    for v in lo.data_mut() {
        *v -= cfg.epsilon;
    }
    for v in hi.data_mut() {
        *v += cfg.epsilon;
    }
    let p_orig = Tensor::from_points(&cloud.points);

    let mut delta = Perturbation::zeros(n, rep.feature_dim());
    let mut iterations_used = 0;
    if clean_pred == y {
        let mut opt = Adam::new(cfg.step_size);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.iterations {
            let mask = dropout_mask(n, cfg.rho, &mut rng)?;
            let mut tape = Tape::new();
            let sv = attack_graph(
                &mut tape,
                victim,
                dec,
                &rep,
                &delta,
                Some(&mask),
                &lo,
                &hi,
                &p_orig,
                y,
                cfg,
            )?;
            let grads = tape.backward(sv.loss)?;
            let gc = grads.wrt_or_zeros(&tape, sv.dc);
            let gr = grads.wrt_or_zeros(&tape, sv.dr);
            let gz = grads.wrt_or_zeros(&tape, sv.dz);
            opt.step(
                &mut [&mut delta.centers, &mut delta.radii, &mut delta.features],
                &[&gc, &gr, &gz],
            )?;
            iterations_used += 1;
        }
    }

    let mut tape = Tape::new();
    let sv = attack_graph(
        &mut tape, victim, dec, &rep, &delta, None, &lo, &hi, &p_orig, y, cfg,
    )?;
    let adv_pts = tape.value(sv.adv).to_points()?;
    let max_dev = tape
        .value(sv.adv)
        .data()
        .iter()
        .zip(p0.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let adv_pred = argmax(tape.value(sv.logits).data());
    let result = AttackResult {
        adv_cloud: PointCloud::new(adv_pts, cloud.label)?,
        success: adv_pred != y,
        iterations_used,
        final_mis_loss: tape.value(sv.mis).item()?,
        final_chamfer: tape.value(sv.cham).item()?,
        final_reg: tape.value(sv.reg).item()?,
        clean_pred,
        adv_pred,
        max_dev,
    };
    Ok((result, delta))
}

pub fn mat_adv_attack(
    victim: &VictimNet,
    enc: &EncoderModel,
    dec: &DecoderModel,
    cloud: &PointCloud,
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    Ok(mat_adv_attack_detail(victim, enc, dec, cloud, y, cfg)?.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Coordinate-space l∞ baseline: iterative sign-gradient ascent on the
/// cross-entropy, projected to the ε-ball around P after every step. Stops at
/// the first misclassification, so `iterations_used` counts the steps it
/// actually needed. ε = 0 returns P itself.
pub fn pgd_baseline(
    victim: &VictimNet,
    cloud: &PointCloud,
    y: usize,
    epsilon: f64,
    iterations: usize,
    step_size: f64,
) -> Result<AttackResult> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "pgd: epsilon {epsilon} negative or non-finite"
        )));
    }
    if !(step_size > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pgd: step size {step_size} not positive"
        )));
    }
    if y >= victim.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "pgd: label {y} out of range for {} classes",
            victim.num_classes()
        )));
    }
    let clean_pred = victim.predict(cloud)?;
    let p = Tensor::from_points(&cloud.points);
    let mut delta = Tensor::zeros(p.rows(), 3);
    let mut iterations_used = 0;
    for _ in 0..iterations {
        let mut tape = Tape::new();
        let d = tape.leaf(delta.clone().with_grad());
        let pc = tape.constant(p.clone());
        let adv = tape.add(pc, d)?;
        let (logits, _) = victim.build(&mut tape, adv, false)?;
        if argmax(tape.value(logits).data()) != y {
            break;
        }
        let ce = tape.softmax_cross_entropy(logits, &[y])?;
        let grads = tape.backward(ce)?;
        let g = grads.wrt_or_zeros(&tape, d);
        for (dv, gv) in delta.data_mut().iter_mut().zip(g.data()) {
            *dv = (*dv + step_size * sign(*gv)).clamp(-epsilon, epsilon);
        }
        iterations_used += 1;
    }

    let mut adv = p.clone();
    for (a, d) in adv.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
    let max_dev = delta.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let adv_cloud = PointCloud::new(adv.to_points()?, cloud.label)?;
    let adv_pred = victim.predict(&adv_cloud)?;
    let mut tape = Tape::new();
    let pts = tape.constant(adv.clone());
    let (logits, _) = victim.build(&mut tape, pts, false)?;
    let mis = misclassification_var(&mut tape, LossVariant::NegCrossEntropy, logits, y)?;
    let final_mis_loss = tape.value(mis).item()?;
    let pc = tape.constant(p.clone());
    let cham = chamfer_var(&mut tape, pc, pts)?;
    let final_chamfer = tape.value(cham).item()?;
    let final_reg = delta.data().iter().map(|v| v * v).sum();
    Ok(AttackResult {
        adv_cloud,
        success: adv_pred != y,
        iterations_used,
        final_mis_loss,
        final_chamfer,
        final_reg,
        clean_pred,
        adv_pred,
        max_dev,
    })
}

/// Reproducible per-cloud seed stream for batch attacks.
pub fn per_cloud_seed(base: u64, index: usize) -> u64 {
    crate::seeds::stream_seed("attack", base, index as u64)
}

fn cloud_label(cloud: &PointCloud) -> Result<usize> {
    cloud
        .label
        .ok_or_else(|| Error::InvalidArgument("attack: unlabeled cloud".into()))
}

/// Attacks every cloud with an independent seed stream; results keep dataset
/// order. Clouds run in parallel against read-only models.
pub fn run_mat_attacks(
    victim: &VictimNet,
    enc: &EncoderModel,
    dec: &DecoderModel,
    dataset: &[PointCloud],
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let y = cloud_label(cloud)?;
            let mut per = cfg.clone();
            per.seed = per_cloud_seed(cfg.seed, i);
            mat_adv_attack(victim, enc, dec, cloud, y, &per)
        })
        .collect()
}

/// PGD over a whole dataset, in dataset order.
pub fn run_pgd_attacks(
    victim: &VictimNet,
    dataset: &[PointCloud],
    epsilon: f64,
    iterations: usize,
    step_size: f64,
) -> Result<Vec<AttackResult>> {
    dataset
        .par_iter()
        .map(|cloud| {
            let y = cloud_label(cloud)?;
            pgd_baseline(victim, cloud, y, epsilon, iterations, step_size)
        })
        .collect()
}

/// Share of clean-correct clouds whose attack row succeeds on `predict`,
/// as a percentage; NaN when no cloud is clean-correct.
pub fn attack_success_rate<F>(results: &[AttackResult], labels: &[usize], predict: F) -> Result<f64>
where
    F: Fn(&AttackResult) -> Result<bool>,
{
    if results.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "asr: {} results for {} labels",
            results.len(),
            labels.len()
        )));
    }
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for (r, &y) in results.iter().zip(labels) {
        if r.clean_pred != y {
            continue;
        }
        eligible += 1;
        if predict(r)? {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Ok(f64::NAN);
    }
    Ok(100.0 * hits as f64 / eligible as f64)
}

/// White-box ASR: the stored success flags over clean-correct clouds.
pub fn white_box_asr(results: &[AttackResult], labels: &[usize]) -> Result<f64> {
    attack_success_rate(results, labels, |r| Ok(r.success))
}

/// Transfer ASR: adversarial clouds crafted elsewhere re-scored on `target`.
/// The denominator stays "clean-correct on the source model".
pub fn transfer_asr(
    results: &[AttackResult],
    labels: &[usize],
    target: &VictimNet,
) -> Result<f64> {
    attack_success_rate(results, labels, |r| {
        let y = cloud_label(&r.adv_cloud)?;
        Ok(target.predict(&r.adv_cloud)? != y)
    })
}

/// One component-subset row of the ablation table; rates are percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub components: Vec<Component>,
    pub label: String,
    pub white_box_asr: f64,
    pub transfer_asr: f64,
    /// Clean-correct clouds on the surrogate (the ASR denominator).
    pub n_eval: usize,
}

/// Reruns the attack once per component subset and scores each run both
/// white-box (surrogate) and transferred (target).
pub fn component_ablation(
    surrogate: &VictimNet,
    target: &VictimNet,
    enc: &EncoderModel,
    dec: &DecoderModel,
    dataset: &[PointCloud],
    cfg: &AttackConfig,
    subsets: &[Vec<Component>],
) -> Result<Vec<AblationRow>> {
    if subsets.is_empty() {
        return Err(Error::InvalidArgument("ablation: no subsets".into()));
    }
    let labels: Vec<usize> = dataset
        .iter()
        .map(cloud_label)
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let mut sub_cfg = cfg.clone();
        sub_cfg.components = subset.clone();
        sub_cfg.validate()?;
        let results = run_mat_attacks(surrogate, enc, dec, dataset, &sub_cfg)?;
        let n_eval = results
            .iter()
            .zip(&labels)
            .filter(|(r, &y)| r.clean_pred == y)
            .count();
        rows.push(AblationRow {
            components: subset.clone(),
            label: components_label(subset),
            white_box_asr: white_box_asr(&results, &labels)?,
            transfer_asr: transfer_asr(&results, &labels, target)?,
            n_eval,
        });
    }
    Ok(rows)
}

/// One JSON object per line.
pub fn write_attack_results(path: &Path, results: &[AttackResult]) -> Result<()> {
    let mut out = Vec::new();
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_attack_results(path: &Path) -> Result<Vec<AttackResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::MatConfig;
    use crate::victims::PointNetLite;
    use rand::Rng;

    fn tiny_cfg() -> MatConfig {
        MatConfig {
            n_spheres: 4,
            feature_dim: 8,
            n_sampled: 12,
            k_b: 4,
            pts_per_sphere: 3,
            k_i: 2,
        }
    }

    fn tiny_attack_cfg() -> AttackConfig {
        AttackConfig {
            epsilon: 0.3,
            iterations: 8,
            step_size: 0.02,
            seed: 5,
            ..AttackConfig::default()
        }
    }

    fn random_cloud(n: usize, seed: u64, label: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ]
            })
            .collect();
        PointCloud::new(pts, Some(label)).unwrap()
    }

    fn fixture() -> (VictimNet, EncoderModel, DecoderModel, PointCloud) {
        let victim = VictimNet::PointNet(PointNetLite::new(3, 41));
        let enc = EncoderModel::new(tiny_cfg(), 42).unwrap();
        let dec = DecoderModel::new(tiny_cfg(), 43).unwrap();
        let cloud = random_cloud(12, 44, 0);
        (victim, enc, dec, cloud)
    }

    /// Label the fixture cloud with whatever the victim already predicts so
    /// the optimization loop actually runs.
    fn fixture_clean_correct() -> (VictimNet, EncoderModel, DecoderModel, PointCloud, usize) {
        let (victim, enc, dec, mut cloud) = fixture();
        let y = victim.predict(&cloud).unwrap();
        cloud.label = Some(y);
        (victim, enc, dec, cloud, y)
    }

    #[test]
    fn dropout_mask_counts_and_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask(16, 0.0, &mut rng).unwrap().iter().all(|&k| k));
        assert!(dropout_mask(16, 1.0, &mut rng).unwrap().iter().all(|&k| !k));
        let zeros = dropout_mask(128, 0.5, &mut rng)
            .unwrap()
            .iter()
            .filter(|&&k| !k)
            .count();
        assert_eq!(zeros, 64);
        let mut last = 0;
        for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let drop = dropout_mask(9, rho, &mut rng)
                .unwrap()
                .iter()
                .filter(|&&k| !k)
                .count();
            assert!(drop >= last, "drop count decreased at rho {rho}");
            last = drop;
        }
        assert!(dropout_mask(4, -0.1, &mut rng).is_err());
        assert!(dropout_mask(4, 1.1, &mut rng).is_err());
        assert!(dropout_mask(4, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn apply_mask_zeroes_rows_and_keeps_input() {
        let mut delta = Perturbation::zeros(3, 2);
        for (i, v) in delta.centers.data_mut().iter_mut().enumerate() {
            *v = i as f64 + 1.0;
        }
        for (i, v) in delta.radii.data_mut().iter_mut().enumerate() {
            *v = 10.0 + i as f64;
        }
        for (i, v) in delta.features.data_mut().iter_mut().enumerate() {
            *v = 20.0 + i as f64;
        }
        let id = apply_mask(&delta, &[true, true, true]).unwrap();
        assert_eq!(id, delta);
        let none = apply_mask(&delta, &[false, false, false]).unwrap();
        assert!(none.centers.data().iter().all(|&v| v == 0.0));
        assert!(none.radii.data().iter().all(|&v| v == 0.0));
        assert!(none.features.data().iter().all(|&v| v == 0.0));
        let row1 = apply_mask(&delta, &[true, false, true]).unwrap();
        assert_eq!(&row1.centers.data()[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(row1.radii.data()[1], 0.0);
        assert_eq!(&row1.features.data()[2..4], &[0.0, 0.0]);
        assert_eq!(&row1.centers.data()[..3], &delta.centers.data()[..3]);
        assert_eq!(&row1.centers.data()[6..], &delta.centers.data()[6..]);
        assert!(delta.centers.data()[3] != 0.0, "input mutated");
        assert!(apply_mask(&delta, &[true, true]).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = AttackConfig::default();
        ok.validate().unwrap();
        for bad in [
            AttackConfig { epsilon: 0.0, ..ok.clone() },
            AttackConfig { epsilon: -1.0, ..ok.clone() },
            AttackConfig { epsilon: f64::INFINITY, ..ok.clone() },
            AttackConfig { rho: 1.5, ..ok.clone() },
            AttackConfig { step_size: 0.0, ..ok.clone() },
            AttackConfig { components: vec![], ..ok.clone() },
            AttackConfig {
                components: vec![Component::Centers, Component::Centers],
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn component_parsing_round_trips() {
        assert_eq!(
            parse_components("C,R,Z").unwrap(),
            vec![Component::Centers, Component::Radii, Component::Features]
        );
        assert_eq!(
            parse_components("centers,features").unwrap(),
            vec![Component::Centers, Component::Features]
        );
        assert!(parse_components("C,Q").is_err());
        assert_eq!(
            components_label(&[Component::Features, Component::Centers]),
            "C+Z"
        );
        let json = serde_json::to_string(&Component::Radii).unwrap();
        assert_eq!(json, "\"radii\"");
    }

    #[test]
    fn masked_rows_get_exactly_zero_gradients() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let rep = enc.encode(&cloud).unwrap();
        let baseline = dec.decode(&rep).unwrap();
        let p0 = Tensor::from_points(&baseline.points);
        let mut lo = p0.clone();
        let mut hi = p0.clone();
        for v in lo.data_mut() {
            *v -= 0.3;
        }
        for v in hi.data_mut() {
            *v += 0.3;
        }
        let mut delta = Perturbation::zeros(rep.n(), rep.feature_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [&mut delta.centers, &mut delta.radii, &mut delta.features] {
            for v in t.data_mut() {
                *v = 0.05 * (rng.random::<f64>() - 0.5);
            }
        }
        let mask = [true, false, true, false];
        let cfg = tiny_attack_cfg();
        let mut tape = Tape::new();
        let sv = attack_graph(
            &mut tape,
            &victim,
            &dec,
            &rep,
            &delta,
            Some(&mask),
            &lo,
            &hi,
            &Tensor::from_points(&cloud.points),
            y,
            &cfg,
        )
        .unwrap();
        let grads = tape.backward(sv.loss).unwrap();
        let mut saw_nonzero = false;
        for v in [sv.dc, sv.dr, sv.dz] {
            let g = grads.wrt_or_zeros(&tape, v);
            let cols = g.cols();
            for (i, &keep) in mask.iter().enumerate() {
                let row = &g.data()[i * cols..(i + 1) * cols];
                if keep {
                    saw_nonzero |= row.iter().any(|&x| x != 0.0);
                } else {
                    assert!(
                        row.iter().all(|&x| x == 0.0),
                        "masked row {i} leaked gradient: {row:?}"
                    );
                }
            }
        }
        assert!(saw_nonzero, "no unmasked gradient at all");
    }

    #[test]
    fn budget_invariant_holds() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = tiny_attack_cfg();
        let result = mat_adv_attack(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        let baseline = dec.decode(&enc.encode(&cloud).unwrap()).unwrap();
        assert_eq!(result.adv_cloud.points.len(), 4 * 3);
        let mut max_dev = 0.0f64;
        for (a, b) in result.adv_cloud.points.iter().zip(&baseline.points) {
            for d in 0..3 {
                max_dev = max_dev.max((a[d] - b[d]).abs());
            }
        }
        assert!(max_dev <= cfg.epsilon + 1e-9, "budget violated: {max_dev}");
        assert!((result.max_dev - max_dev).abs() < 1e-15);
        assert_eq!(result.iterations_used, cfg.iterations);
    }

    #[test]
    fn component_restriction_keeps_other_blocks_zero() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = AttackConfig {
            components: vec![Component::Centers],
            iterations: 5,
            ..tiny_attack_cfg()
        };
        let (_, delta) = mat_adv_attack_detail(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        assert!(delta.centers.data().iter().any(|&v| v != 0.0));
        assert!(delta.radii.data().iter().all(|&v| v == 0.0));
        assert!(delta.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_iterations_returns_clamped_baseline() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = AttackConfig {
            iterations: 0,
            ..tiny_attack_cfg()
        };
        let result = mat_adv_attack(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        let baseline = dec.decode(&enc.encode(&cloud).unwrap()).unwrap();
        assert_eq!(result.adv_cloud.points, baseline.points);
        assert_eq!(result.iterations_used, 0);
        assert_eq!(
            result.success,
            victim.predict(&baseline).unwrap() != y
        );
    }

    #[test]
    fn full_dropout_keeps_delta_zero() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = AttackConfig {
            rho: 1.0,
            iterations: 5,
            ..tiny_attack_cfg()
        };
        let (result, delta) =
            mat_adv_attack_detail(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        assert!(delta.centers.data().iter().all(|&v| v == 0.0));
        assert!(delta.radii.data().iter().all(|&v| v == 0.0));
        assert!(delta.features.data().iter().all(|&v| v == 0.0));
        let baseline = dec.decode(&enc.encode(&cloud).unwrap()).unwrap();
        assert_eq!(result.adv_cloud.points, baseline.points);
    }

    #[test]
    fn attack_is_deterministic() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = tiny_attack_cfg();
        let a = mat_adv_attack_detail(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        let b = mat_adv_attack_detail(&victim, &enc, &dec, &cloud, y, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    /// The λ1 ∞-limit pairing only separates once the autoencoder is trained
    /// (chamfer is minimized at Δ ≈ 0); the acceptance run covers it. Here the
    /// direct Δ penalty is the sharp probe.
    #[test]
    fn heavier_delta_penalty_shrinks_the_perturbation() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let run = |l2: f64| {
            let cfg = AttackConfig {
                lambda2: l2,
                iterations: 15,
                ..tiny_attack_cfg()
            };
            mat_adv_attack(&victim, &enc, &dec, &cloud, y, &cfg).unwrap()
        };
        let lax = run(0.1);
        let strict = run(100.0);
        assert!(
            strict.final_reg <= lax.final_reg,
            "reg {} vs {}",
            strict.final_reg,
            lax.final_reg
        );
    }

    #[test]
    fn pgd_stays_in_ball_and_eps_zero_is_identity() {
        let (victim, _, _, cloud, y) = fixture_clean_correct();
        let result = pgd_baseline(&victim, &cloud, y, 0.1, 10, 0.02).unwrap();
        for (a, b) in result.adv_cloud.points.iter().zip(&cloud.points) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() <= 0.1 + 1e-12);
            }
        }
        let frozen = pgd_baseline(&victim, &cloud, y, 0.0, 10, 0.02).unwrap();
        assert_eq!(frozen.adv_cloud.points, cloud.points);
        assert_eq!(frozen.max_dev, 0.0);
        assert!(pgd_baseline(&victim, &cloud, y, -0.1, 5, 0.02).is_err());
        assert!(pgd_baseline(&victim, &cloud, y, 0.1, 5, 0.0).is_err());
    }

    #[test]
    fn pgd_early_stops_on_misclassified_input() {
        let (victim, _, _, cloud, y) = fixture_clean_correct();
        let wrong = (y + 1) % victim.num_classes();
        let result = pgd_baseline(&victim, &cloud, wrong, 0.1, 10, 0.02).unwrap();
        assert_eq!(result.iterations_used, 0);
        assert_eq!(result.adv_cloud.points, cloud.points);
        assert!(result.success);
        assert!(result.clean_pred != wrong);
    }

    #[test]
    fn results_round_trip_through_jsonl() {
        let (victim, enc, dec, cloud, y) = fixture_clean_correct();
        let cfg = AttackConfig {
            iterations: 2,
            ..tiny_attack_cfg()
        };
        let results = vec![
            mat_adv_attack(&victim, &enc, &dec, &cloud, y, &cfg).unwrap(),
            pgd_baseline(&victim, &cloud, y, 0.1, 3, 0.02).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        write_attack_results(&path, &results).unwrap();
        let back = read_attack_results(&path).unwrap();
        assert_eq!(back, results);
    }

    #[test]
    fn batch_attacks_use_per_cloud_seeds() {
        let (victim, enc, dec, _, _) = fixture_clean_correct();
        let clouds: Vec<PointCloud> = (0..3)
            .map(|i| {
                let mut c = random_cloud(12, 100 + i, 0);
                c.label = Some(victim.predict(&c).unwrap());
                c
            })
            .collect();
        let cfg = AttackConfig {
            iterations: 2,
            ..tiny_attack_cfg()
        };
        let batch = run_mat_attacks(&victim, &enc, &dec, &clouds, &cfg).unwrap();
        assert_eq!(batch.len(), 3);
        for (i, r) in batch.iter().enumerate() {
            let mut per = cfg.clone();
            per.seed = per_cloud_seed(cfg.seed, i);
            let single = mat_adv_attack(
                &victim,
                &enc,
                &dec,
                &clouds[i],
                clouds[i].label.unwrap(),
                &per,
            )
            .unwrap();
            assert_eq!(*r, single);
        }
        assert!(per_cloud_seed(5, 0) != per_cloud_seed(5, 1));
        assert!(per_cloud_seed(5, 0) != per_cloud_seed(6, 0));
    }

    #[test]
    fn skip_clean_miss_rows_short_circuit_and_are_excluded_from_asr() {
        let (victim, enc, dec, mut cloud, y) = fixture_clean_correct();
        let wrong = (y + 1) % victim.num_classes();
        cloud.label = Some(wrong);
        let cfg = tiny_attack_cfg();
        let result = mat_adv_attack(&victim, &enc, &dec, &cloud, wrong, &cfg).unwrap();
        assert_eq!(result.iterations_used, 0);
        assert!(result.clean_pred != wrong);

        let labels = vec![wrong];
        let asr = white_box_asr(&[result], &labels).unwrap();
        assert!(asr.is_nan(), "clean-missed cloud entered the denominator");
    }

    #[test]
    fn ablation_rows_cover_each_subset() {
        let (victim, enc, dec, _, _) = fixture_clean_correct();
        let target = VictimNet::PointNet(PointNetLite::new(3, 77));
        let clouds: Vec<PointCloud> = (0..2)
            .map(|i| {
                let mut c = random_cloud(12, 200 + i, 0);
                c.label = Some(victim.predict(&c).unwrap());
                c
            })
            .collect();
        let cfg = AttackConfig {
            iterations: 2,
            ..tiny_attack_cfg()
        };
        let subsets = vec![
            vec![Component::Centers],
            vec![Component::Centers, Component::Radii, Component::Features],
        ];
        let rows =
            component_ablation(&victim, &target, &enc, &dec, &clouds, &cfg, &subsets).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "C");
        assert_eq!(rows[1].label, "C+R+Z");
        assert_eq!(rows[0].n_eval, 2);
        assert!(component_ablation(&victim, &target, &enc, &dec, &clouds, &cfg, &[]).is_err());
        let empty_subset = vec![vec![]];
        assert!(component_ablation(
            &victim, &target, &enc, &dec, &clouds, &cfg, &empty_subset
        )
        .is_err());
    }
}

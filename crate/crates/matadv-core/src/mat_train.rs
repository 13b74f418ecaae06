//! Three-phase autoencoder training: encoder pretraining on raw sphere
//! coverage, decoder training against frozen encodings, and joint finetuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::losses::{chamfer_var, repulsion_var};
use crate::mat::{
    rotated_lattice_tile, sphere_samples_tile_var, DecoderModel, EncoderModel, MATRep,
    MatAutoencoder,
};
use crate::seeds;
use crate::weights::ParamSet;

/// Hyperparameters shared by all three phases. `gamma` only affects
/// pretraining; the reconstruction weights only affect the decoder and joint
/// phases.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MatTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Radius-maximization bonus in the pretraining loss.
    pub gamma: f64,
    /// Coverage weight on the reconstruction chamfer term.
    pub chamfer_weight: f64,
    /// Spread weight on the reconstruction repulsion term.
    pub repulsion_weight: f64,
    pub repulsion_k: usize,
    pub repulsion_h: f64,
}

impl Default for MatTrainConfig {
    fn default() -> Self {
        MatTrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch: 16,
            seed: 0,
            gamma: 0.01,
            chamfer_weight: 100.0,
            repulsion_weight: 1.0,
            repulsion_k: 8,
            repulsion_h: 0.03,
        }
    }
}

impl MatTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument(
                "mat train: batch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mat train: lr {} not positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Seeded-shuffle mini-batch Adam over `model`'s parameters. `build` lays one
/// sample's loss on a fresh tape and returns the bound parameter Vars in
/// `named_params` order; gradients are averaged over each batch. Returns the
/// per-epoch mean sample loss.
fn optimize<M, F>(model: &mut M, n_samples: usize, cfg: &MatTrainConfig, mut build: F) -> Result<Vec<f64>>
where
    M: ParamSet,
    F: FnMut(&M, &mut Tape, usize) -> Result<(Var, Vec<Var>)>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("mat train: empty dataset".into()));
    }
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut grad_acc: Vec<Tensor> = model
                .named_params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for &i in chunk {
                let mut tape = Tape::new();
                let (loss, vars) = build(&*model, &mut tape, i)?;
                if vars.len() != grad_acc.len() {
                    return Err(Error::InvalidArgument(format!(
                        "mat train: {} bound vars for {} parameters",
                        vars.len(),
                        grad_acc.len()
                    )));
                }
                epoch_loss += tape.value(loss).item()?;
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
            let mut named = model.named_params_mut();
            let mut params: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
            opt.step(&mut params, &grad_refs)?;
        }
        losses.push(epoch_loss / n_samples as f64);
    }
    Ok(losses)
}

/// Weighted chamfer + repulsion reconstruction loss; the repulsion term is
/// skipped entirely when its weight is zero.
fn recon_loss(tape: &mut Tape, out: Var, target: Var, cfg: &MatTrainConfig) -> Result<Var> {
    let cham = chamfer_var(tape, out, target)?;
    let weighted = tape.scale(cham, cfg.chamfer_weight)?;
    if cfg.repulsion_weight == 0.0 {
        return Ok(weighted);
    }
    let rep = repulsion_var(tape, out, cfg.repulsion_k, cfg.repulsion_h)?;
    let rep_w = tape.scale(rep, cfg.repulsion_weight)?;
    tape.add(weighted, rep_w)
}

/// Trains the encoder alone so raw sphere-surface samples cover each cloud:
/// chamfer(samples(Θ), P) − γ·mean(R). The radius bonus rewards maximal
/// inscribed spheres over surface-hugging ones. Sample directions are drawn
/// from per-sphere rotated lattices so coverage is scored isotropically.
pub fn pretrain_encoder(
    enc: &mut EncoderModel,
    dataset: &[PointCloud],
    cfg: &MatTrainConfig,
) -> Result<Vec<f64>> {
    let gamma = cfg.gamma;
    let mut dirs = ChaCha8Rng::seed_from_u64(seeds::stage_seed("mat-dirs", cfg.seed));
    optimize(enc, dataset.len(), cfg, |enc, tape, i| {
        let tile = rotated_lattice_tile(enc.cfg.n_spheres, enc.cfg.pts_per_sphere, &mut dirs);
        let pts = tape.constant(Tensor::from_points(&dataset[i].points));
        let (ev, params) = enc.build_encode(tape, pts, true)?;
        let q = sphere_samples_tile_var(tape, ev.c, ev.r, &tile)?;
        let cham = chamfer_var(tape, q, pts)?;
        let loss = if gamma == 0.0 {
            cham
        } else {
            let mean_r = tape.mean_all(ev.r)?;
            let bonus = tape.scale(mean_r, -gamma)?;
            tape.add(cham, bonus)?
        };
        Ok((loss, params))
    })
}

/// Trains the decoder against encodings of a frozen encoder. Θ is computed
/// once per cloud up front; only decoder parameters move. Each step decodes
/// along per-sphere rotated lattice directions so the refinement MLPs learn
/// displacements for arbitrary directions, not the s fixed lattice points.
pub fn train_decoder(
    enc: &EncoderModel,
    dec: &mut DecoderModel,
    dataset: &[PointCloud],
    cfg: &MatTrainConfig,
) -> Result<Vec<f64>> {
    let reps: Vec<MATRep> = dataset.iter().map(|c| enc.encode(c)).collect::<Result<_>>()?;
    let mut dirs = ChaCha8Rng::seed_from_u64(seeds::stage_seed("mat-dirs", cfg.seed));
    optimize(dec, dataset.len(), cfg, |dec, tape, i| {
        let tile = rotated_lattice_tile(dec.cfg.n_spheres, dec.cfg.pts_per_sphere, &mut dirs);
        let c = tape.constant(reps[i].centers.clone());
        let r = tape.constant(reps[i].radii.clone());
        let z = tape.constant(reps[i].features.clone());
        let (dv, params) = dec.build_decode_tile(tape, c, r, z, &tile, true)?;
        let target = tape.constant(Tensor::from_points(&dataset[i].points));
        let loss = recon_loss(tape, dv.out, target, cfg)?;
        Ok((loss, params))
    })
}

/// Finetunes encoder and decoder together on the reconstruction loss, with
/// gradients flowing through the encoding. Decode directions are per-sphere
/// rotated lattices, as in decoder training.
pub fn finetune_joint(
    ae: &mut MatAutoencoder,
    dataset: &[PointCloud],
    cfg: &MatTrainConfig,
) -> Result<Vec<f64>> {
    let mut dirs = ChaCha8Rng::seed_from_u64(seeds::stage_seed("mat-dirs", cfg.seed));
    optimize(ae, dataset.len(), cfg, |ae, tape, i| {
        let tile =
            rotated_lattice_tile(ae.dec.cfg.n_spheres, ae.dec.cfg.pts_per_sphere, &mut dirs);
        let pts = tape.constant(Tensor::from_points(&dataset[i].points));
        let (ev, mut params) = ae.enc.build_encode(tape, pts, true)?;
        let (dv, dec_params) = ae.dec.build_decode_tile(tape, ev.c, ev.r, ev.z, &tile, true)?;
        params.extend(dec_params);
        let loss = recon_loss(tape, dv.out, pts, cfg)?;
        Ok((loss, params))
    })
}

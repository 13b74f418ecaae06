//! End-to-end acceptance suite. One test walks eleven numbered criteria in
//! order, sharing one desk-scale run directory (dataset, victims,
//! autoencoder) across them, and prints one PASS/FAIL line per criterion plus
//! its wall time. Run with `cargo test --test acceptance -- --nocapture` to
//! watch progress; delete `target/tmp/acceptance-run` to retrain from
//! scratch. Training plus the attack batches take on the order of an hour on
//! one core.
//!
//!  1. analytic gradients of every tape primitive and of three deep
//!     composites match central differences
//!  2. encoder outputs are convex: unit-sum nonneg weight columns, nonneg
//!     radii, centers inside the sampled subset's hull
//!  3. decoding is bit-reproducible, a single sphere decodes to its closed
//!     form exactly, and s=8 yields n*s points
//!  4. both victims reach 95% test accuracy within 60 epochs
//!  5. classifying through the autoencoder resample costs at most 3 points
//!     of accuracy at s=8 and 6 at s=4
//!  6. both attacks reach 90% white-box success at epsilon 0.45
//!  7. the dropout attack transfers better than the coordinate baseline
//!  8. dropout (rho 0.5) transfers at least as well as no dropout
//!  9. under SOR and SRS the dropout attack stays at least as successful as
//!     the baseline
//! 10. every attack respects the epsilon box, masked rows never move,
//!     dropout counts are exact
//! 11. two runs of the same experiment produce byte-identical reports

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use matadv_core::attack::{
    dropout_mask, mat_adv_attack, mat_adv_attack_detail, run_mat_attacks, run_pgd_attacks,
    transfer_asr, white_box_asr, AttackResult,
};
use matadv_core::autodiff::{grad_check_multi, Tape, Tensor, Var};
use matadv_core::defense::{asr_under_defense, scaled_srs_drop, DefenseSpec};
use matadv_core::error::Result as CoreResult;
use matadv_core::geom::{fibonacci_directions, PointCloud};
use matadv_core::harness::config::{ExperimentConfig, MatSection, VictimSection};
use matadv_core::harness::runner::{
    ensure_attacks, ensure_autoencoder, ensure_dataset, ensure_victims, run_experiment, RunPaths,
    VictimSummary,
};
use matadv_core::harness::synth::{Dataset, DatasetSpec, ShapeClass, ShapeSpec};
use matadv_core::losses::{chamfer_var, misclassification_var, LossVariant};
use matadv_core::mat::{
    resample_from_mat, DecoderModel, EncoderModel, MATRep, MatAutoencoder, MatConfig,
};
use matadv_core::seeds::stage_seed;
use matadv_core::victims::{PointNetLite, VictimNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const EPSILON: f64 = 0.45;

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn check(n: u32, out: &mut Vec<(u32, bool)>, f: impl FnOnce() -> Result<String, String>) {
    let t = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f));
    let dt = t.elapsed().as_secs_f64();
    match verdict {
        Ok(Ok(info)) => {
            println!("criterion {n:02} PASS ({dt:.1}s) {info}");
            out.push((n, true));
        }
        Ok(Err(msg)) => {
            println!("criterion {n:02} FAIL ({dt:.1}s) {msg}");
            out.push((n, false));
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string()))
                .unwrap_or_else(|| "opaque panic".into());
            println!("criterion {n:02} FAIL ({dt:.1}s) panic: {msg}");
            out.push((n, false));
        }
    }
}

fn blocked(n: u32, out: &mut Vec<(u32, bool)>, why: &str) {
    println!("criterion {n:02} FAIL (0.0s) blocked: {why}");
    out.push((n, false));
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn pts_bits_eq(a: &[[f64; 3]], b: &[[f64; 3]]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(p, q)| (0..3).all(|d| p[d].to_bits() == q[d].to_bits()))
}

// ---------------------------------------------------------------- fixtures

struct Fixtures {
    cfg: ExperimentConfig,
    ds: Dataset,
    surrogate: VictimNet,
    target: VictimNet,
    summary: VictimSummary,
    ae: MatAutoencoder,
    victim_secs: f64,
}

fn build_fixtures() -> Result<Fixtures, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
    let cfg = cfg.resolved().map_err(s)?;

    let t = Instant::now();
    let ds = ensure_dataset(&cfg).map_err(s)?;
    println!(
        "fixture: dataset {} train / {} test ({:.1}s)",
        ds.train.len(),
        ds.test.len(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let (surrogate, target, summary) = ensure_victims(&cfg).map_err(s)?;
    let victim_secs = t.elapsed().as_secs_f64();
    println!(
        "fixture: victims {} {:.2}% / {} {:.2}% ({victim_secs:.1}s)",
        summary.surrogate.kind,
        summary.surrogate.test_acc,
        summary.target.kind,
        summary.target.test_acc
    );

    let t = Instant::now();
    let ae = ensure_autoencoder(&cfg).map_err(s)?;
    println!("fixture: autoencoder ready ({:.1}s)", t.elapsed().as_secs_f64());

    Ok(Fixtures {
        cfg,
        ds,
        surrogate,
        target,
        summary,
        ae,
        victim_secs,
    })
}

/// Attack batches shared by the transfer, dropout, and defense criteria:
/// three seeds of the dropout attack at rho 0.5 and rho 0, plus the
/// deterministic baseline, all on the same 100-cloud test prefix.
struct TransferRuns {
    labels: Vec<usize>,
    mat_half: Vec<Vec<AttackResult>>,
    mat_zero: Vec<Vec<AttackResult>>,
    pgd: Vec<AttackResult>,
}

fn build_transfer_runs(fx: &Fixtures) -> Result<TransferRuns, String> {
    let subset = &fx.ds.test[..100.min(fx.ds.test.len())];
    let labels = Dataset::labels(subset).map_err(s)?;
    let mut mat_half = Vec::new();
    let mut mat_zero = Vec::new();
    for seed in 0..3u64 {
        let mut a = fx.cfg.attack.clone();
        a.seed = seed;
        a.rho = 0.5;
        mat_half.push(
            run_mat_attacks(&fx.surrogate, &fx.ae.enc, &fx.ae.dec, subset, &a).map_err(s)?,
        );
        a.rho = 0.0;
        mat_zero.push(
            run_mat_attacks(&fx.surrogate, &fx.ae.enc, &fx.ae.dec, subset, &a).map_err(s)?,
        );
    }
    let pgd = run_pgd_attacks(
        &fx.surrogate,
        subset,
        fx.cfg.attack.epsilon,
        fx.cfg.pgd.iterations,
        fx.cfg.pgd.step_size,
    )
    .map_err(s)?;
    Ok(TransferRuns {
        labels,
        mat_half,
        mat_zero,
        pgd,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ------------------------------------------------------------- criterion 1

type BuildFn = Box<dyn Fn(&mut Tape, &[Var]) -> CoreResult<Var>>;

/// Runs the finite-difference check for one graph over ten random draws and
/// returns (worst relative error, coordinates compared, coordinates flagged).
fn fd_case(
    shapes: &[(usize, usize)],
    lo: f64,
    hi: f64,
    build: &BuildFn,
) -> Result<(f64, usize, usize), String> {
    let mut worst = 0.0f64;
    let (mut compared, mut flagged) = (0usize, 0usize);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|&(r, c)| rand_tensor(&mut rng, r, c, lo, hi))
            .collect();
        let rep = grad_check_multi(&inputs, 1e-5, |xs| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs
                .iter()
                .map(|t| tape.leaf(t.clone().with_grad()))
                .collect();
            let out = build(&mut tape, &vars)?;
            let grads = tape.backward(out)?;
            let gs = vars
                .iter()
                .map(|&v| grads.wrt_or_zeros(&tape, v))
                .collect();
            Ok((tape.value(out).item()?, gs))
        })
        .map_err(s)?;
        worst = worst.max(rep.max_rel_err);
        compared += rep.compared;
        flagged += rep.flagged.len();
    }
    Ok((worst, compared, flagged))
}

fn primitive_cases() -> Vec<(&'static str, Vec<(usize, usize)>, f64, f64, BuildFn)> {
    vec![
        (
            "matmul",
            vec![(2, 3), (3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let p = t.matmul(v[0], v[1])?;
                t.mean_all(p)
            }),
        ),
        (
            "matmul_tn",
            vec![(3, 2), (3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let p = t.matmul_tn(v[0], v[1])?;
                t.mean_all(p)
            }),
        ),
        (
            "add",
            vec![(3, 4), (3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.add(v[0], v[1])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "sub",
            vec![(3, 4), (3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.sub(v[0], v[1])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "mul",
            vec![(3, 4), (3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.mul(v[0], v[1])?;
                t.mean_all(x)
            }),
        ),
        (
            "mul_bcast_col",
            vec![(4, 3), (4, 1)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.mul(v[0], v[1])?;
                t.mean_all(x)
            }),
        ),
        (
            "scale",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.scale(v[0], 1.7)?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "add_scalar",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.add_scalar(v[0], 0.3)?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "neg",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.neg(v[0])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "relu",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.relu(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "exp",
            vec![(2, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.exp(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "square",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.square(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "sqrt",
            vec![(3, 4)],
            0.5,
            2.0,
            Box::new(|t, v| {
                let x = t.sqrt(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "sum_over_rows",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.sum_over_rows(v[0])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "sum_over_cols",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.sum_over_cols(v[0])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "mean_over_rows",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.mean_over_rows(v[0])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "mean_over_cols",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.mean_over_cols(v[0])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "sum_all",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.square(v[0])?;
                t.sum_all(x)
            }),
        ),
        (
            "mean_all",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.square(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "max_over_rows",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.max_over_rows(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "min_over_rows",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.min_over_rows(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "max_over_cols",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.max_over_cols(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "min_over_cols",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.min_over_cols(v[0])?;
                t.mean_all(x)
            }),
        ),
        (
            "group_max",
            vec![(6, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.group_max(v[0], 2)?;
                t.mean_all(x)
            }),
        ),
        (
            "softmax_cross_entropy",
            vec![(3, 5)],
            -1.0,
            1.0,
            Box::new(|t, v| t.softmax_cross_entropy(v[0], &[1, 0, 3])),
        ),
        (
            "concat_cols",
            vec![(3, 2), (3, 3)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.concat_cols(v[0], v[1])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "gather_rows",
            vec![(5, 3)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.gather_rows(v[0], &[0, 2, 2, 4])?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "clamp_scalar",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.clamp_scalar(v[0], -0.5, 0.5)?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "clamp_box",
            vec![(3, 3)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let lo = Tensor::new(3, 3, vec![-0.6; 9])?;
                let hi = Tensor::new(3, 3, vec![0.6; 9])?;
                let x = t.clamp_box(v[0], &lo, &hi)?;
                let x = t.square(x)?;
                t.mean_all(x)
            }),
        ),
        (
            "pairwise_sqdist",
            vec![(4, 3), (3, 3)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let x = t.pairwise_sqdist(v[0], v[1])?;
                t.mean_all(x)
            }),
        ),
        (
            "col_softmax",
            vec![(4, 3)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let sm = t.col_softmax(v[0])?;
                let w: Vec<f64> = (0..12).map(|k| (0.37 * k as f64).sin()).collect();
                let wc = t.constant(Tensor::new(4, 3, w)?);
                let x = t.mul(sm, wc)?;
                t.sum_all(x)
            }),
        ),
        (
            "masked_row_softmax",
            vec![(3, 4)],
            -1.0,
            1.0,
            Box::new(|t, v| {
                let mask = [
                    true, false, true, true, true, true, false, true, false, true, true, true,
                ];
                let sm = t.masked_row_softmax(v[0], &mask)?;
                let w: Vec<f64> = (0..12).map(|k| (0.53 * k as f64).cos()).collect();
                let wc = t.constant(Tensor::new(3, 4, w)?);
                let x = t.mul(sm, wc)?;
                t.sum_all(x)
            }),
        ),
    ]
}

fn tiny_decoder_cfg() -> MatConfig {
    MatConfig {
        n_spheres: 4,
        feature_dim: 5,
        n_sampled: 8,
        k_b: 2,
        pts_per_sphere: 2,
        k_i: 2,
    }
}

/// Cross-entropy through a whole victim, gradient taken at the input cloud.
fn fd_ce_model() -> Result<(f64, usize), String> {
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..10u64 {
        let victim = VictimNet::PointNet(PointNetLite::new(3, 1000 + seed));
        let y = (seed % 3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let pts = rand_tensor(&mut rng, 12, 3, -1.0, 1.0);
        let rep = grad_check_multi(std::slice::from_ref(&pts), 1e-5, |xs| {
            let mut tape = Tape::new();
            let v = tape.leaf(xs[0].clone().with_grad());
            let (logits, _) = victim.build(&mut tape, v, false)?;
            let loss = tape.softmax_cross_entropy(logits, &[y])?;
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).item()?, vec![grads.wrt_or_zeros(&tape, v)]))
        })
        .map_err(s)?;
        worst = worst.max(rep.max_rel_err);
        compared += rep.compared;
    }
    Ok((worst, compared))
}

/// Chamfer distance through the decoder, gradients at the representation.
fn fd_chamfer_decode() -> Result<(f64, usize), String> {
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..10u64 {
        let dec = DecoderModel::new(tiny_decoder_cfg(), 2000 + seed).map_err(s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(70 + seed);
        let c = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
        let r = rand_tensor(&mut rng, 4, 1, 0.3, 0.9);
        let z = rand_tensor(&mut rng, 4, 5, -1.0, 1.0);
        let target = rand_tensor(&mut rng, 8, 3, -1.0, 1.0);
        let rep = grad_check_multi(&[c, r, z], 1e-5, |xs| {
            let mut tape = Tape::new();
            let vc = tape.leaf(xs[0].clone().with_grad());
            let vr = tape.leaf(xs[1].clone().with_grad());
            let vz = tape.leaf(xs[2].clone().with_grad());
            let (dv, _) = dec.build_decode(&mut tape, vc, vr, vz, 2, false)?;
            let tgt = tape.constant(target.clone());
            let loss = chamfer_var(&mut tape, tgt, dv.out)?;
            let grads = tape.backward(loss)?;
            Ok((
                tape.value(loss).item()?,
                vec![
                    grads.wrt_or_zeros(&tape, vc),
                    grads.wrt_or_zeros(&tape, vr),
                    grads.wrt_or_zeros(&tape, vz),
                ],
            ))
        })
        .map_err(s)?;
        worst = worst.max(rep.max_rel_err);
        compared += rep.compared;
    }
    Ok((worst, compared))
}

/// Full attack objective (misclassification + weighted chamfer + weighted
/// norm) with gradients at the perturbation blocks.
fn fd_total_loss() -> Result<(f64, usize), String> {
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for seed in 0..10u64 {
        let victim = VictimNet::PointNet(PointNetLite::new(3, 3000 + seed));
        let dec = DecoderModel::new(tiny_decoder_cfg(), 4000 + seed).map_err(s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(90 + seed);
        let rep0 = MATRep::new(
            rand_tensor(&mut rng, 4, 3, -1.0, 1.0),
            rand_tensor(&mut rng, 4, 1, 0.3, 0.9),
            rand_tensor(&mut rng, 4, 5, -1.0, 1.0),
        )
        .map_err(s)?;
        let baseline = dec.decode(&rep0).map_err(s)?;
        let p0 = Tensor::from_points(&baseline.points);
        let (rows, cols) = p0.shape();
        let lo = Tensor::new(rows, cols, p0.data().iter().map(|v| v - EPSILON).collect())
            .map_err(s)?;
        let hi = Tensor::new(rows, cols, p0.data().iter().map(|v| v + EPSILON).collect())
            .map_err(s)?;
        let p_orig = rand_tensor(&mut rng, 10, 3, -1.0, 1.0);
        let y = (seed % 3) as usize;
        let dc = rand_tensor(&mut rng, 4, 3, -0.2, 0.2);
        let dr = rand_tensor(&mut rng, 4, 1, -0.1, 0.1);
        let dz = rand_tensor(&mut rng, 4, 5, -0.2, 0.2);
        let rep = grad_check_multi(&[dc, dr, dz], 1e-5, |xs| {
            let mut tape = Tape::new();
            let vdc = tape.leaf(xs[0].clone().with_grad());
            let vdr = tape.leaf(xs[1].clone().with_grad());
            let vdz = tape.leaf(xs[2].clone().with_grad());
            let c0 = tape.constant(rep0.centers.clone());
            let r0 = tape.constant(rep0.radii.clone());
            let z0 = tape.constant(rep0.features.clone());
            let mut reg_terms = Vec::new();
            for &d in &[vdc, vdr, vdz] {
                let sq = tape.square(d)?;
                reg_terms.push(tape.sum_all(sq)?);
            }
            let mut reg = reg_terms[0];
            for &t in &reg_terms[1..] {
                reg = tape.add(reg, t)?;
            }
            let c = tape.add(c0, vdc)?;
            let r = tape.add(r0, vdr)?;
            let z = tape.add(z0, vdz)?;
            let (dv, _) = dec.build_decode(&mut tape, c, r, z, 2, false)?;
            let adv = tape.clamp_box(dv.out, &lo, &hi)?;
            let (logits, _) = victim.build(&mut tape, adv, false)?;
            let mis = misclassification_var(&mut tape, LossVariant::NegCrossEntropy, logits, y)?;
            let po = tape.constant(p_orig.clone());
            let cham = chamfer_var(&mut tape, po, adv)?;
            let cham_w = tape.scale(cham, 1.0)?;
            let reg_w = tape.scale(reg, 0.01)?;
            let partial = tape.add(mis, cham_w)?;
            let loss = tape.add(partial, reg_w)?;
            let grads = tape.backward(loss)?;
            Ok((
                tape.value(loss).item()?,
                vec![
                    grads.wrt_or_zeros(&tape, vdc),
                    grads.wrt_or_zeros(&tape, vdr),
                    grads.wrt_or_zeros(&tape, vdz),
                ],
            ))
        })
        .map_err(s)?;
        worst = worst.max(rep.max_rel_err);
        compared += rep.compared;
    }
    Ok((worst, compared))
}

fn criterion_01() -> Result<String, String> {
    let mut worst_prim = 0.0f64;
    let mut worst_name = "";
    for (name, shapes, lo, hi, build) in primitive_cases() {
        let (w, compared, _) = fd_case(&shapes, lo, hi, &build)?;
        if compared == 0 {
            return Err(format!("{name}: every coordinate flagged as non-smooth"));
        }
        if w > worst_prim {
            worst_prim = w;
            worst_name = name;
        }
        if w >= 1e-4 {
            return Err(format!("{name}: rel err {w:.3e} >= 1e-4"));
        }
    }
    let (ce, ce_n) = fd_ce_model()?;
    let (cd, cd_n) = fd_chamfer_decode()?;
    let (tl, tl_n) = fd_total_loss()?;
    for (name, w, n) in [
        ("ce-model", ce, ce_n),
        ("chamfer-decode", cd, cd_n),
        ("total-loss", tl, tl_n),
    ] {
        if n == 0 {
            return Err(format!("{name}: every coordinate flagged as non-smooth"));
        }
        if w >= 1e-3 {
            return Err(format!("{name}: rel err {w:.3e} >= 1e-3"));
        }
    }
    Ok(format!(
        "primitives worst {worst_prim:.1e} ({worst_name}); composites ce {ce:.1e}, chamfer-decode {cd:.1e}, total-loss {tl:.1e}"
    ))
}

// ------------------------------------------------------------- criterion 2

fn criterion_02() -> Result<String, String> {
    let enc = EncoderModel::new(MatConfig::default(), stage_seed("acceptance-enc", 0)).map_err(s)?;
    let mut worst_col = 0.0f64;
    let mut worst_center = 0.0f64;
    for i in 0..100usize {
        let class = ShapeClass::ALL[i % ShapeClass::ALL.len()];
        let spec = ShapeSpec {
            class,
            size_jitter: 0.2,
            noise_sigma: 0.01,
            points: 256,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i as u64);
        let cloud = spec.sample_cloud(i % 8, &mut rng).map_err(s)?;
        let (rep, w, ps) = enc.encode_detail(&cloud).map_err(s)?;
        let (rows, cols) = w.shape();

        for j in 0..cols {
            let mut sum = 0.0;
            for i in 0..rows {
                let wij = w.at(i, j);
                if wij < 0.0 {
                    return Err(format!("cloud {i}: negative weight {wij}"));
                }
                sum += wij;
            }
            worst_col = worst_col.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > 1e-6 {
                return Err(format!("cloud {i}: column {j} sums to {sum}"));
            }
        }
        if rep.radii.data().iter().any(|&r| r < 0.0) {
            return Err(format!("cloud {i}: negative radius"));
        }
        // Convexity puts each center inside the sampled subset's hull; verify
        // the combination reproduces the center and respects the bounding box.
        let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 3];
        for p in &ps {
            for d in 0..3 {
                bounds[d].0 = bounds[d].0.min(p[d]);
                bounds[d].1 = bounds[d].1.max(p[d]);
            }
        }
        for j in 0..cols {
            let mut cj = [0.0f64; 3];
            for (i, p) in ps.iter().enumerate() {
                for d in 0..3 {
                    cj[d] += w.at(i, j) * p[d];
                }
            }
            for d in 0..3 {
                let dev = (cj[d] - rep.centers.at(j, d)).abs();
                worst_center = worst_center.max(dev);
                if dev > 1e-6 {
                    return Err(format!("cloud {i}: center {j} off its combination by {dev}"));
                }
                if rep.centers.at(j, d) < bounds[d].0 - 1e-6
                    || rep.centers.at(j, d) > bounds[d].1 + 1e-6
                {
                    return Err(format!("cloud {i}: center {j} outside the hull box"));
                }
            }
        }
    }
    Ok(format!(
        "100 clouds: col-sum dev max {worst_col:.1e}, center dev max {worst_center:.1e}"
    ))
}

// ------------------------------------------------------------- criterion 3

fn criterion_03() -> Result<String, String> {
    let cfg = MatConfig::default();
    let seed = stage_seed("acceptance-ae", 0);
    let ae = MatAutoencoder::new(cfg.clone(), seed).map_err(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = ShapeSpec {
        class: ShapeClass::Torus,
        size_jitter: 0.2,
        noise_sigma: 0.01,
        points: 256,
    };
    let cloud = spec.sample_cloud(0, &mut rng).map_err(s)?;
    let rep = ae.enc.encode(&cloud).map_err(s)?;

    let a = ae.dec.decode_with(&rep, 8, true).map_err(s)?;
    let b = ae.dec.decode_with(&rep, 8, true).map_err(s)?;
    if !pts_bits_eq(&a.points, &b.points) {
        return Err("repeated decode differs".into());
    }
    let ae2 = MatAutoencoder::new(cfg.clone(), seed).map_err(s)?;
    let c = ae2.dec.decode_with(&rep, 8, true).map_err(s)?;
    if !pts_bits_eq(&a.points, &c.points) {
        return Err("decode differs across identically seeded decoders".into());
    }
    if a.len() != cfg.n_spheres * 8 {
        return Err(format!(
            "decode count {} != {}",
            a.len(),
            cfg.n_spheres * 8
        ));
    }

    let one = MatConfig {
        n_spheres: 1,
        feature_dim: 4,
        n_sampled: 8,
        k_b: 2,
        pts_per_sphere: 6,
        k_i: 1,
    };
    let dec1 = DecoderModel::new(one, 7).map_err(s)?;
    let center = [0.2, -0.1, 0.4];
    let radius = 0.37;
    let rep1 = MATRep::new(
        Tensor::new(1, 3, center.to_vec()).map_err(s)?,
        Tensor::new(1, 1, vec![radius]).map_err(s)?,
        Tensor::new(1, 4, vec![0.05, -0.3, 0.6, 0.11]).map_err(s)?,
    )
    .map_err(s)?;
    let coarse = dec1.decode_coarse(&rep1).map_err(s)?;
    let lattice = fibonacci_directions(6);
    if coarse.len() != 6 {
        return Err(format!("single-sphere decode count {}", coarse.len()));
    }
    for (t, u) in lattice.iter().enumerate() {
        for d in 0..3 {
            let expect = u[d] * radius + center[d];
            if coarse.points[t][d].to_bits() != expect.to_bits() {
                return Err(format!(
                    "single-sphere sample {t} coord {d}: {} vs {expect}",
                    coarse.points[t][d]
                ));
            }
        }
    }
    Ok(format!(
        "decode of {} spheres x 8 samples = {} points, bit-stable; single sphere exact",
        cfg.n_spheres,
        a.len()
    ))
}

// --------------------------------------------------------- criteria 4 to 9

fn criterion_04(fx: &Fixtures) -> Result<String, String> {
    for role in [&fx.summary.surrogate, &fx.summary.target] {
        if role.epochs_run > 60 {
            return Err(format!("{} ran {} epochs", role.kind, role.epochs_run));
        }
        if !(role.test_acc >= 95.0) {
            return Err(format!(
                "{} test accuracy {:.2}% < 95%",
                role.kind, role.test_acc
            ));
        }
    }
    Ok(format!(
        "{} {:.2}% ({} ep), {} {:.2}% ({} ep); training {:.1}s",
        fx.summary.surrogate.kind,
        fx.summary.surrogate.test_acc,
        fx.summary.surrogate.epochs_run,
        fx.summary.target.kind,
        fx.summary.target.test_acc,
        fx.summary.target.epochs_run,
        fx.victim_secs
    ))
}

fn criterion_05(fx: &Fixtures) -> Result<String, String> {
    let mut parts = Vec::new();
    for (sc, bound) in [(8usize, 3.0f64), (4usize, 6.0f64)] {
        let mut resampled = Vec::with_capacity(fx.ds.test.len());
        for c in &fx.ds.test {
            let mut r = resample_from_mat(&fx.ae.enc, &fx.ae.dec, c, sc, true).map_err(s)?;
            r.label = c.label;
            resampled.push(r);
        }
        let acc_s = fx.surrogate.evaluate(&resampled).map_err(s)?;
        let acc_t = fx.target.evaluate(&resampled).map_err(s)?;
        let orig = fx.summary.surrogate.test_acc;
        if !(acc_s >= orig - bound) {
            return Err(format!(
                "s={sc}: surrogate {acc_s:.2}% dropped more than {bound} points from {orig:.2}%"
            ));
        }
        parts.push(format!(
            "s={sc}: surrogate {acc_s:.2}% (clean {orig:.2}%), target {acc_t:.2}%"
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_06(
    fx: &Fixtures,
    stash: &mut Option<(Vec<AttackResult>, Vec<AttackResult>)>,
) -> Result<String, String> {
    let (mat, pgd) = ensure_attacks(&fx.cfg).map_err(s)?;
    let labels = Dataset::labels(&fx.ds.test).map_err(s)?;
    if mat.len() != labels.len() {
        return Err(format!("{} results for {} clouds", mat.len(), labels.len()));
    }
    let wb_mat = white_box_asr(&mat, &labels).map_err(s)?;
    let wb_pgd = white_box_asr(&pgd, &labels).map_err(s)?;
    *stash = Some((mat, pgd));
    if !(wb_mat >= 90.0) {
        return Err(format!("mat-adv white-box {wb_mat:.2}% < 90%"));
    }
    if !(wb_pgd >= 90.0) {
        return Err(format!("pgd white-box {wb_pgd:.2}% < 90%"));
    }
    Ok(format!(
        "epsilon {EPSILON}: mat-adv {wb_mat:.2}%, pgd {wb_pgd:.2}% over {} clouds",
        labels.len()
    ))
}

fn criterion_07(fx: &Fixtures, runs: &TransferRuns) -> Result<String, String> {
    let mut mat_t = Vec::new();
    for r in &runs.mat_half {
        mat_t.push(transfer_asr(r, &runs.labels, &fx.target).map_err(s)?);
    }
    let pgd_t = transfer_asr(&runs.pgd, &runs.labels, &fx.target).map_err(s)?;
    let m = mean(&mat_t);
    if !(m > pgd_t) {
        return Err(format!(
            "mat-adv transfer mean {m:.2}% (seeds {mat_t:.2?}) not above pgd {pgd_t:.2}%"
        ));
    }
    Ok(format!(
        "transfer to {}: mat-adv mean {m:.2}% (seeds {mat_t:.2?}) > pgd {pgd_t:.2}%",
        fx.target.kind()
    ))
}

fn criterion_08(fx: &Fixtures, runs: &TransferRuns) -> Result<String, String> {
    let mut half = Vec::new();
    let mut zero = Vec::new();
    for (h, z) in runs.mat_half.iter().zip(&runs.mat_zero) {
        half.push(transfer_asr(h, &runs.labels, &fx.target).map_err(s)?);
        zero.push(transfer_asr(z, &runs.labels, &fx.target).map_err(s)?);
    }
    let (mh, mz) = (mean(&half), mean(&zero));
    if !(mh >= mz) {
        return Err(format!(
            "rho 0.5 transfer mean {mh:.2}% below rho 0 mean {mz:.2}%"
        ));
    }
    Ok(format!(
        "transfer mean rho 0.5: {mh:.2}% vs rho 0: {mz:.2}%"
    ))
}

fn criterion_09(fx: &Fixtures, runs: &TransferRuns) -> Result<String, String> {
    let n_adv = fx.cfg.min_defended_points();
    let specs = [
        ("sor", DefenseSpec::sor(2, 1.1)),
        (
            "srs",
            DefenseSpec::srs(scaled_srs_drop(n_adv), stage_seed("defense-srs", 0)),
        ),
    ];
    let mut parts = Vec::new();
    for (name, spec) in specs {
        let mut mat_vals = Vec::new();
        for r in &runs.mat_half {
            mat_vals.push(asr_under_defense(&fx.surrogate, &spec, r, &runs.labels).map_err(s)?);
        }
        let mat_mean = mean(&mat_vals);
        let pgd_val =
            asr_under_defense(&fx.surrogate, &spec, &runs.pgd, &runs.labels).map_err(s)?;
        if !(mat_mean >= pgd_val) {
            return Err(format!(
                "{name}: mat-adv {mat_mean:.2}% below pgd {pgd_val:.2}%"
            ));
        }
        parts.push(format!("{name}: mat-adv {mat_mean:.2}% >= pgd {pgd_val:.2}%"));
    }
    Ok(parts.join("; "))
}

// ------------------------------------------------------------ criterion 10

fn criterion_10(
    fx: &Fixtures,
    full: &Option<(Vec<AttackResult>, Vec<AttackResult>)>,
    runs: &Option<TransferRuns>,
) -> Result<String, String> {
    // Budget: every stored attack stays inside the epsilon box around its
    // baseline (reconstruction for mat-adv, original cloud for pgd).
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut audit = |results: &[AttackResult]| -> Result<(), String> {
        for r in results {
            checked += 1;
            worst = worst.max(r.max_dev);
            if r.max_dev > EPSILON + 1e-9 {
                return Err(format!("max deviation {} beyond {EPSILON}", r.max_dev));
            }
        }
        Ok(())
    };
    let (mat_full, pgd_full) = full.as_ref().ok_or("full attack batch unavailable")?;
    audit(mat_full)?;
    audit(pgd_full)?;
    let tr = runs.as_ref().ok_or("transfer runs unavailable")?;
    for batch in tr.mat_half.iter().chain(&tr.mat_zero) {
        audit(batch)?;
    }
    audit(&tr.pgd)?;

    // Masked rows must never move. At rho 1 every row is masked on every
    // iteration, so the perturbation stays at its zero start and the attack
    // returns the plain reconstruction.
    let labels = Dataset::labels(&fx.ds.test).map_err(s)?;
    let (cloud, y) = fx
        .ds
        .test
        .iter()
        .zip(&labels)
        .find(|(c, y)| fx.surrogate.predict(c).ok() == Some(**y))
        .map(|(c, &y)| (c, y))
        .ok_or("no clean-correct cloud to instrument")?;
    let mut all_masked = fx.cfg.attack.clone();
    all_masked.rho = 1.0;
    all_masked.iterations = 25;
    let (res, delta) =
        mat_adv_attack_detail(&fx.surrogate, &fx.ae.enc, &fx.ae.dec, cloud, y, &all_masked)
            .map_err(s)?;
    let frozen = delta
        .centers
        .data()
        .iter()
        .chain(delta.radii.data())
        .chain(delta.features.data())
        .all(|&v| v == 0.0);
    if !frozen {
        return Err("rho 1: some fully masked row moved".into());
    }
    if res.max_dev != 0.0 {
        return Err(format!("rho 1: adv cloud deviates by {}", res.max_dev));
    }
    let baseline = fx
        .ae
        .dec
        .decode(&fx.ae.enc.encode(cloud).map_err(s)?)
        .map_err(s)?;
    if !pts_bits_eq(&res.adv_cloud.points, &baseline.points) {
        return Err("rho 1: adv cloud is not the plain reconstruction".into());
    }

    // One instrumented step at rho 0.5: replaying the mask stream shows which
    // rows were dropped; exactly those rows of the returned perturbation must
    // still be zero after the Adam step.
    let mut one_step = fx.cfg.attack.clone();
    one_step.rho = 0.5;
    one_step.iterations = 1;
    one_step.seed = 123;
    let n = fx.cfg.mat.config.n_spheres;
    let mask = {
        let mut rng = ChaCha8Rng::seed_from_u64(one_step.seed);
        dropout_mask(n, one_step.rho, &mut rng).map_err(s)?
    };
    let (_, d1) = mat_adv_attack_detail(&fx.surrogate, &fx.ae.enc, &fx.ae.dec, cloud, y, &one_step)
        .map_err(s)?;
    let mut moved_unmasked = false;
    for (i, &keep) in mask.iter().enumerate() {
        let row_max = (0..3)
            .map(|d| d1.centers.at(i, d).abs())
            .chain(std::iter::once(d1.radii.at(i, 0).abs()))
            .chain((0..d1.features.cols()).map(|d| d1.features.at(i, d).abs()))
            .fold(0.0f64, f64::max);
        if !keep && row_max != 0.0 {
            return Err(format!("masked sphere {i} moved by {row_max:.2e}"));
        }
        if keep && row_max > 0.0 {
            moved_unmasked = true;
        }
    }
    if !moved_unmasked {
        return Err("no unmasked row moved in the instrumented step".into());
    }

    // Dropout counts are exact for every rate.
    for (k, rho) in [0.0f64, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let expect = (rho * 128.0).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + k as u64);
        for _ in 0..1000 {
            let m = dropout_mask(128, rho, &mut rng).map_err(s)?;
            let dropped = m.iter().filter(|&&keep| !keep).count();
            if dropped != expect {
                return Err(format!("rho {rho}: dropped {dropped}, expected {expect}"));
            }
        }
    }

    // Weighting the chamfer term harder should tighten the reconstruction;
    // reported for inspection, not asserted.
    let probe: Vec<&PointCloud> = fx
        .ds
        .test
        .iter()
        .zip(&labels)
        .filter(|(c, y)| fx.surrogate.predict(c).ok() == Some(**y))
        .take(3)
        .map(|(c, _)| c)
        .collect();
    let chamfer_at = |l1: f64| -> Result<f64, String> {
        let mut acc = 0.0;
        for c in &probe {
            let mut a = fx.cfg.attack.clone();
            a.lambda1 = l1;
            a.iterations = 40;
            let r = mat_adv_attack(&fx.surrogate, &fx.ae.enc, &fx.ae.dec, c, c.label.unwrap(), &a)
                .map_err(s)?;
            acc += r.final_chamfer;
        }
        Ok(acc / probe.len() as f64)
    };
    let c_low = chamfer_at(10.0)?;
    let c_high = chamfer_at(1000.0)?;
    println!(
        "info: mean final chamfer at lambda1=10: {c_low:.5}, at lambda1=1000: {c_high:.5} ({} clouds)",
        probe.len()
    );

    Ok(format!(
        "{checked} attacks within epsilon (worst dev {worst:.6}); masked rows frozen; 5000 exact dropout draws"
    ))
}

// ------------------------------------------------------------ criterion 11

fn micro_config(out_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.dataset = DatasetSpec {
        classes: vec![ShapeClass::Sphere, ShapeClass::Cube],
        train_per_class: 6,
        test_per_class: 3,
        points: 64,
        size_jitter: 0.2,
        noise_sigma: 0.01,
    };
    cfg.victims = VictimSection {
        epochs: 2,
        batch: 4,
        early_stop_acc: None,
        edgeconv_k: 4,
        ..VictimSection::default()
    };
    cfg.mat = MatSection {
        config: MatConfig {
            n_spheres: 32,
            feature_dim: 8,
            n_sampled: 32,
            k_b: 4,
            pts_per_sphere: 2,
            k_i: 4,
        },
        pretrain_epochs: 1,
        decoder_epochs: 1,
        joint_epochs: 1,
        batch: 4,
        repulsion_k: 3,
        ..MatSection::default()
    };
    cfg.attack.iterations = 3;
    cfg.pgd.iterations = 3;
    cfg.eval_count = Some(4);
    cfg
}

fn criterion_11() -> Result<String, String> {
    let d1 = TempDir::new().map_err(s)?;
    let d2 = TempDir::new().map_err(s)?;
    run_experiment(&micro_config(d1.path())).map_err(s)?;
    run_experiment(&micro_config(d2.path())).map_err(s)?;
    let p1 = RunPaths::new(&micro_config(d1.path()).out_dir);
    let p2 = RunPaths::new(&micro_config(d2.path()).out_dir);
    let mut sizes = Vec::new();
    for (a, b, name) in [
        (p1.report_csv(), p2.report_csv(), "report.csv"),
        (p1.report_json(), p2.report_json(), "report.json"),
        (p1.record(), p2.record(), "record.json"),
    ] {
        let ba = std::fs::read(&a).map_err(s)?;
        let bb = std::fs::read(&b).map_err(s)?;
        if ba.is_empty() {
            return Err(format!("{name} is empty"));
        }
        if ba != bb {
            return Err(format!("{name} differs between identical runs"));
        }
        sizes.push(format!("{name} {}B", ba.len()));
    }
    Ok(format!("byte-identical across two runs: {}", sizes.join(", ")))
}

// -------------------------------------------------------------------- main

#[test]
fn acceptance_criteria() {
    let suite_start = Instant::now();
    let mut out: Vec<(u32, bool)> = Vec::new();

    check(1, &mut out, criterion_01);
    check(2, &mut out, criterion_02);
    check(3, &mut out, criterion_03);

    let fixtures = build_fixtures();
    let mut full_attacks: Option<(Vec<AttackResult>, Vec<AttackResult>)> = None;
    let mut transfer: Option<TransferRuns> = None;
    match &fixtures {
        Ok(fx) => {
            check(4, &mut out, || criterion_04(fx));
            check(5, &mut out, || criterion_05(fx));
            check(6, &mut out, || criterion_06(fx, &mut full_attacks));

            let t = Instant::now();
            match build_transfer_runs(fx) {
                Ok(runs) => {
                    println!(
                        "fixture: transfer batches, 3 seeds x 2 rates x {} clouds ({:.1}s)",
                        runs.labels.len(),
                        t.elapsed().as_secs_f64()
                    );
                    transfer = Some(runs);
                }
                Err(e) => println!("fixture: transfer batches FAILED: {e}"),
            }
            match &transfer {
                Some(runs) => {
                    check(7, &mut out, || criterion_07(fx, runs));
                    check(8, &mut out, || criterion_08(fx, runs));
                    check(9, &mut out, || criterion_09(fx, runs));
                }
                None => {
                    for n in [7, 8, 9] {
                        blocked(n, &mut out, "transfer batches unavailable");
                    }
                }
            }
            check(10, &mut out, || criterion_10(fx, &full_attacks, &transfer));
        }
        Err(e) => {
            println!("fixture build FAILED: {e}");
            for n in 4..=10 {
                blocked(n, &mut out, "shared fixtures unavailable");
            }
        }
    }

    check(11, &mut out, criterion_11);

    let failed: Vec<u32> = out.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed (total {:.1}s)",
        out.len() - failed.len(),
        out.len(),
        suite_start.elapsed().as_secs_f64()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

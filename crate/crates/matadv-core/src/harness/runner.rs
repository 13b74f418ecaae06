//! Staged experiment pipeline. Every stage reads its inputs from the run
//! directory and persists its outputs there, so completed work survives a
//! failure in a later stage and a rerun reproduces the same bytes. Trained
//! models are always saved and reloaded before use: the weights on disk are
//! the weights every downstream number is computed from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{
    self, component_ablation, run_mat_attacks, run_pgd_attacks, transfer_asr, white_box_asr,
    AttackResult,
};
use crate::defense::asr_under_defense;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{
    write_ablation_table, write_report_csv, write_report_json, write_rho_table,
    AblationReportRow, ReportRow, ResultsRecord, RhoRow,
};
use crate::harness::synth::{load_dataset, save_dataset, synth_dataset, Dataset};
use crate::mat::MatAutoencoder;
use crate::mat_train::{finetune_joint, pretrain_encoder, train_decoder};
use crate::metrics;
use crate::victims::{train, EdgeConvLite, PointNetLite, VictimNet};
use crate::weights::{load_weights, save_weights};

/// File layout inside one run directory.
pub struct RunPaths {
    out: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            out: out_dir.to_path_buf(),
        }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.out.join("config.json")
    }
    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn weights(&self, name: &str) -> PathBuf {
        self.out.join("weights").join(format!("{name}.w1"))
    }
    pub fn victim_summary(&self) -> PathBuf {
        self.out.join("victim_summary.json")
    }
    pub fn mat_summary(&self) -> PathBuf {
        self.out.join("mat_summary.json")
    }
    pub fn attacks(&self, name: &str) -> PathBuf {
        self.out.join("attacks").join(format!("{name}.jsonl"))
    }
    pub fn record(&self) -> PathBuf {
        self.out.join("record.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.out.join("report.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.out.join("report.json")
    }
    pub fn rho_csv(&self) -> PathBuf {
        self.out.join("rho_sweep.csv")
    }
    pub fn rho_json(&self) -> PathBuf {
        self.out.join("rho_sweep.json")
    }
    pub fn ablation_csv(&self) -> PathBuf {
        self.out.join("ablation.csv")
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.out.join("ablation.json")
    }
}

/// Accuracy of one trained victim, measured on the reloaded weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub kind: String,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimSummary {
    pub surrogate: RoleSummary,
    pub target: RoleSummary,
}

/// Per-epoch mean losses of the three autoencoder phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatSummary {
    pub pretrain_loss: Vec<f64>,
    pub decoder_loss: Vec<f64>,
    pub joint_loss: Vec<f64>,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::stage(stage, other),
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn build_victim(kind: &str, classes: usize, edgeconv_k: usize, seed: u64) -> Result<VictimNet> {
    match kind {
        "pointnet-lite" => Ok(VictimNet::PointNet(PointNetLite::new(classes, seed))),
        "edgeconv-lite" => Ok(VictimNet::EdgeConv(EdgeConvLite::new(classes, edgeconv_k, seed))),
        other => Err(Error::Config(format!("unknown victim kind {other:?}"))),
    }
}

/// Test-split prefix the attack and evaluation stages operate on.
fn eval_slice<'a>(cfg: &ExperimentConfig, test: &'a [PointCloud]) -> &'a [PointCloud] {
    match cfg.eval_count {
        Some(n) => &test[..n.min(test.len())],
        None => &test[..],
    }
}

/// Generates (or reloads) the dataset and pins the resolved config next to it.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    staged("gen-data", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            cfg.save(&paths.resolved_config())?;
            let dir = paths.data_dir();
            if dir.join("train").is_dir() && dir.join("test").is_dir() {
                return load_dataset(&dir);
            }
            let ds = synth_dataset(&cfg.dataset, cfg.dataset_seed())?;
            save_dataset(&ds, &dir)?;
            Ok(ds)
        })()
    })
}

/// Trains (or reloads) both victims; returned models always come from the
/// persisted weight files, and the summary holds their reloaded accuracy.
pub fn ensure_victims(cfg: &ExperimentConfig) -> Result<(VictimNet, VictimNet, VictimSummary)> {
    let ds = ensure_dataset(cfg)?;
    staged("train-victim", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let classes = cfg.dataset.num_classes();
            let roles = [
                ("surrogate", cfg.victims.surrogate.clone()),
                ("target", cfg.victims.target.clone()),
            ];
            let have_all = roles.iter().all(|(role, _)| paths.weights(role).is_file())
                && paths.victim_summary().is_file();
            let mut models = Vec::new();
            if have_all {
                for (role, kind) in &roles {
                    let mut model = build_victim(
                        kind,
                        classes,
                        cfg.victims.edgeconv_k,
                        cfg.victim_init_seed(role),
                    )?;
                    load_weights(&paths.weights(role), &mut model)?;
                    models.push(model);
                }
                let summary: VictimSummary = read_json(&paths.victim_summary())?;
                let target = models.pop().unwrap();
                let surrogate = models.pop().unwrap();
                return Ok((surrogate, target, summary));
            }
            let mut summaries = Vec::new();
            for (role, kind) in &roles {
                let mut model = build_victim(
                    kind,
                    classes,
                    cfg.victims.edgeconv_k,
                    cfg.victim_init_seed(role),
                )?;
                let train_cfg = cfg.victims.train_config(cfg.victim_train_seed(role));
                let history = train(&mut model, &ds.train, &[], &train_cfg)?;
                ensure_parent(&paths.weights(role))?;
                save_weights(&paths.weights(role), &model)?;
                // Downstream work must match the file, so evaluate a reload.
                let mut reloaded = build_victim(
                    kind,
                    classes,
                    cfg.victims.edgeconv_k,
                    cfg.victim_init_seed(role),
                )?;
                load_weights(&paths.weights(role), &mut reloaded)?;
                summaries.push(RoleSummary {
                    kind: kind.clone(),
                    epochs_run: history.train_loss.len(),
                    train_acc: reloaded.evaluate(&ds.train)?,
                    test_acc: reloaded.evaluate(&ds.test)?,
                });
                models.push(reloaded);
            }
            let summary = VictimSummary {
                target: summaries.pop().unwrap(),
                surrogate: summaries.pop().unwrap(),
            };
            write_json(&paths.victim_summary(), &summary)?;
            let target = models.pop().unwrap();
            let surrogate = models.pop().unwrap();
            Ok((surrogate, target, summary))
        })()
    })
}

/// Trains (or reloads) the autoencoder through its three phases; the returned
/// model is always the reloaded persisted one.
pub fn ensure_autoencoder(cfg: &ExperimentConfig) -> Result<MatAutoencoder> {
    let ds = ensure_dataset(cfg)?;
    staged("train-mat", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let enc_path = paths.weights("encoder");
            let dec_path = paths.weights("decoder");
            let mut reloaded = MatAutoencoder::new(cfg.mat.config.clone(), cfg.mat_init_seed())?;
            if enc_path.is_file() && dec_path.is_file() && paths.mat_summary().is_file() {
                load_weights(&enc_path, &mut reloaded.enc)?;
                load_weights(&dec_path, &mut reloaded.dec)?;
                return Ok(reloaded);
            }
            let mut ae = MatAutoencoder::new(cfg.mat.config.clone(), cfg.mat_init_seed())?;
            let pretrain_loss = pretrain_encoder(
                &mut ae.enc,
                &ds.train,
                &cfg.mat.phase(cfg.mat.pretrain_epochs, cfg.mat_phase_seed("pretrain")),
            )?;
            let decoder_loss = train_decoder(
                &ae.enc,
                &mut ae.dec,
                &ds.train,
                &cfg.mat.phase(cfg.mat.decoder_epochs, cfg.mat_phase_seed("decoder")),
            )?;
            let joint_loss = finetune_joint(
                &mut ae,
                &ds.train,
                &cfg.mat.phase(cfg.mat.joint_epochs, cfg.mat_phase_seed("joint")),
            )?;
            ensure_parent(&enc_path)?;
            save_weights(&enc_path, &ae.enc)?;
            save_weights(&dec_path, &ae.dec)?;
            write_json(
                &paths.mat_summary(),
                &MatSummary {
                    pretrain_loss,
                    decoder_loss,
                    joint_loss,
                },
            )?;
            load_weights(&enc_path, &mut reloaded.enc)?;
            load_weights(&dec_path, &mut reloaded.dec)?;
            Ok(reloaded)
        })()
    })
}

/// Runs (or reloads) both attack batches over the evaluation slice of the
/// test split, from the persisted surrogate and autoencoder.
pub fn ensure_attacks(cfg: &ExperimentConfig) -> Result<(Vec<AttackResult>, Vec<AttackResult>)> {
    let ds = ensure_dataset(cfg)?;
    let (surrogate, _, _) = ensure_victims(cfg)?;
    let ae = ensure_autoencoder(cfg)?;
    staged("attack", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let mat_path = paths.attacks("mat-adv");
            let pgd_path = paths.attacks("pgd");
            if mat_path.is_file() && pgd_path.is_file() {
                return Ok((
                    attack::read_attack_results(&mat_path)?,
                    attack::read_attack_results(&pgd_path)?,
                ));
            }
            let eval_set = eval_slice(&cfg, &ds.test);
            ensure_parent(&mat_path)?;
            let mat_results = run_mat_attacks(&surrogate, &ae.enc, &ae.dec, eval_set, &cfg.attack)?;
            attack::write_attack_results(&mat_path, &mat_results)?;
            let pgd_results = run_pgd_attacks(
                &surrogate,
                eval_set,
                cfg.attack.epsilon,
                cfg.pgd.iterations,
                cfg.pgd.step_size,
            )?;
            attack::write_attack_results(&pgd_path, &pgd_results)?;
            Ok((mat_results, pgd_results))
        })()
    })
}

/// Mean imperceptibility metrics over the clean-correct rows, measured
/// between each original cloud and its adversarial counterpart.
fn aggregate_metrics(
    originals: &[PointCloud],
    results: &[AttackResult],
    labels: &[usize],
) -> Result<(metrics::MetricReport, usize)> {
    let mut sums = [0.0_f64; 3];
    let mut n = 0usize;
    for ((orig, res), &y) in originals.iter().zip(results).zip(labels) {
        if res.clean_pred != y {
            continue;
        }
        sums[0] += metrics::chamfer(orig, &res.adv_cloud)?;
        sums[1] += metrics::hausdorff(orig, &res.adv_cloud)?;
        sums[2] += metrics::knn_distance(&res.adv_cloud, 8)?;
        n += 1;
    }
    let mean = |s: f64| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((
        metrics::MetricReport {
            chamfer: mean(sums[0]),
            hausdorff: mean(sums[1]),
            knn_mean: mean(sums[2]),
        },
        n,
    ))
}

/// Builds the evaluation matrix (attack × target model × defense) and writes
/// `record.json`.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ResultsRecord> {
    let ds = ensure_dataset(cfg)?;
    let (surrogate, target, _) = ensure_victims(cfg)?;
    let (mat_results, pgd_results) = ensure_attacks(cfg)?;
    staged("evaluate", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let eval_set = eval_slice(&cfg, &ds.test);
            let labels = Dataset::labels(eval_set)?;
            if mat_results.len() != labels.len() || pgd_results.len() != labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "evaluate: {} attack rows for {} eval clouds; stale artifacts?",
                    mat_results.len(),
                    labels.len()
                )));
            }
            let mut rows = Vec::new();
            for (attack_name, results) in [("mat-adv", &mat_results), ("pgd", &pgd_results)] {
                let (agg, n_eval) = aggregate_metrics(eval_set, results, &labels)?;
                for (model_kind, model) in [
                    (surrogate.kind(), &surrogate),
                    (target.kind(), &target),
                ] {
                    for spec in &cfg.defenses {
                        let asr = asr_under_defense(model, spec, results, &labels)?;
                        rows.push(ReportRow {
                            attack: attack_name.into(),
                            source: surrogate.kind().into(),
                            target: model_kind.into(),
                            defense: spec.kind.name().into(),
                            epsilon: cfg.attack.epsilon,
                            asr,
                            chamfer: agg.chamfer,
                            hausdorff: agg.hausdorff,
                            knn_mean: agg.knn_mean,
                            n_eval,
                        });
                    }
                }
            }
            let record = ResultsRecord { rows };
            record.save(&paths.record())?;
            Ok(record)
        })()
    })
}

/// Renders `record.json` into the CSV and JSON report files.
pub fn write_reports(cfg: &ExperimentConfig) -> Result<ResultsRecord> {
    staged("report", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let record = ResultsRecord::load(&paths.record())?;
            write_report_csv(&record, &paths.report_csv())?;
            write_report_json(&record, &paths.report_json())?;
            Ok(record)
        })()
    })
}

/// The whole pipeline: data → victims → autoencoder → attacks → evaluation →
/// report files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsRecord> {
    evaluate(cfg)?;
    write_reports(cfg)
}

/// One attack phase per ρ against the shared trained models; rows keep the
/// input order and each phase's raw results are persisted.
pub fn sweep_rho(cfg: &ExperimentConfig, rho_values: &[f64]) -> Result<Vec<RhoRow>> {
    let ds = ensure_dataset(cfg)?;
    let (surrogate, target, _) = ensure_victims(cfg)?;
    let ae = ensure_autoencoder(cfg)?;
    staged("sweep-rho", {
        (|| {
            if rho_values.is_empty() {
                return Err(Error::InvalidArgument("sweep: empty rho list".into()));
            }
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let eval_set = eval_slice(&cfg, &ds.test);
            let labels = Dataset::labels(eval_set)?;
            let mut rows = Vec::new();
            for &rho in rho_values {
                let mut per = cfg.attack.clone();
                per.rho = rho;
                per.validate()?;
                let results = run_mat_attacks(&surrogate, &ae.enc, &ae.dec, eval_set, &per)?;
                ensure_parent(&paths.attacks("sweep"))?;
                attack::write_attack_results(
                    &paths.attacks(&format!("mat-adv-rho-{rho:.2}")),
                    &results,
                )?;
                let eligible = results
                    .iter()
                    .zip(&labels)
                    .filter(|(r, &y)| r.clean_pred == y)
                    .count();
                rows.push(RhoRow {
                    rho,
                    white_box_asr: white_box_asr(&results, &labels)?,
                    transfer_asr: transfer_asr(&results, &labels, &target)?,
                    n_eval: eligible,
                });
            }
            write_rho_table(&rows, &paths.rho_csv(), &paths.rho_json())?;
            Ok(rows)
        })()
    })
}

/// Component-subset ablation over the shared trained models.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<AblationReportRow>> {
    let ds = ensure_dataset(cfg)?;
    let (surrogate, target, _) = ensure_victims(cfg)?;
    let ae = ensure_autoencoder(cfg)?;
    staged("ablate", {
        (|| {
            let cfg = cfg.resolved()?;
            let paths = RunPaths::new(&cfg.out_dir);
            let eval_set = eval_slice(&cfg, &ds.test);
            let raw = component_ablation(
                &surrogate,
                &target,
                &ae.enc,
                &ae.dec,
                eval_set,
                &cfg.attack,
                &cfg.ablation_subsets,
            )?;
            let rows: Vec<AblationReportRow> = raw
                .into_iter()
                .map(|r| AblationReportRow {
                    components: r.label,
                    white_box_asr: r.white_box_asr,
                    transfer_asr: r.transfer_asr,
                    n_eval: r.n_eval,
                })
                .collect();
            write_ablation_table(&rows, &paths.ablation_csv(), &paths.ablation_json())?;
            Ok(rows)
        })()
    })
}

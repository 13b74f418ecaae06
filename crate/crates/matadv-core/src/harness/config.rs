//! Experiment configuration: a single versioned JSON document drives every
//! pipeline stage. One master seed fans out to per-stage seeds through
//! labeled hashes, so overriding one stage's behavior never shifts another's
//! randomness. Seed fields inside sections are derived, never authored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, Component};
use crate::defense::{scaled_srs_drop, DefenseKind, DefenseSpec};
use crate::error::{Error, Result};
use crate::harness::synth::DatasetSpec;
use crate::mat::MatConfig;
use crate::mat_train::MatTrainConfig;
use crate::seeds::stage_seed;
use crate::victims::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

const KNOWN_VICTIMS: [&str; 2] = ["pointnet-lite", "edgeconv-lite"];

/// Victim architectures and their shared training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VictimSection {
    pub surrogate: String,
    pub target: String,
    /// Edge neighborhood for the EdgeConv victim.
    pub edgeconv_k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Stop training once running train accuracy (percent) reaches this.
    pub early_stop_acc: Option<f64>,
}

impl Default for VictimSection {
    fn default() -> Self {
        VictimSection {
            surrogate: "pointnet-lite".into(),
            target: "edgeconv-lite".into(),
            edgeconv_k: 8,
            epochs: 60,
            lr: 1e-3,
            batch: 16,
            early_stop_acc: Some(99.5),
        }
    }
}

impl VictimSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            seed,
            early_stop_acc: self.early_stop_acc,
        }
    }

    fn validate(&self, points: usize) -> Result<()> {
        for kind in [&self.surrogate, &self.target] {
            if !KNOWN_VICTIMS.contains(&kind.as_str()) {
                return Err(Error::Config(format!(
                    "unknown victim kind {kind:?}; expected one of {KNOWN_VICTIMS:?}"
                )));
            }
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("victim epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("victim lr {} not positive", self.lr)));
        }
        if self.edgeconv_k == 0 || self.edgeconv_k >= points {
            return Err(Error::Config(format!(
                "edgeconv_k {} out of range for {points}-point clouds",
                self.edgeconv_k
            )));
        }
        Ok(())
    }
}

/// Autoencoder architecture plus the three-phase training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatSection {
    pub config: MatConfig,
    pub pretrain_epochs: usize,
    pub decoder_epochs: usize,
    pub joint_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub gamma: f64,
    pub chamfer_weight: f64,
    pub repulsion_weight: f64,
    pub repulsion_k: usize,
    pub repulsion_h: f64,
}

impl Default for MatSection {
    fn default() -> Self {
        let t = MatTrainConfig::default();
        MatSection {
            config: MatConfig::default(),
            pretrain_epochs: 12,
            decoder_epochs: 30,
            joint_epochs: 8,
            lr: t.lr,
            batch: t.batch,
            gamma: t.gamma,
            chamfer_weight: t.chamfer_weight,
            repulsion_weight: t.repulsion_weight,
            repulsion_k: t.repulsion_k,
            repulsion_h: t.repulsion_h,
        }
    }
}

impl MatSection {
    /// Training settings for one phase; epochs and seed are per phase.
    pub fn phase(&self, epochs: usize, seed: u64) -> MatTrainConfig {
        MatTrainConfig {
            epochs,
            lr: self.lr,
            batch: self.batch,
            seed,
            gamma: self.gamma,
            chamfer_weight: self.chamfer_weight,
            repulsion_weight: self.repulsion_weight,
            repulsion_k: self.repulsion_k,
            repulsion_h: self.repulsion_h,
        }
    }

    fn validate(&self, points: usize) -> Result<()> {
        self.config.validate()?;
        if self.config.n_sampled > points {
            return Err(Error::Config(format!(
                "mat n_sampled {} exceeds cloud size {points}",
                self.config.n_sampled
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("mat batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("mat lr {} not positive", self.lr)));
        }
        let out = self.config.n_spheres * self.config.pts_per_sphere;
        if self.repulsion_weight != 0.0 && (self.repulsion_k == 0 || self.repulsion_k >= out) {
            return Err(Error::Config(format!(
                "mat repulsion_k {} out of range for {out} decoded points",
                self.repulsion_k
            )));
        }
        if !(self.repulsion_h > 0.0) {
            return Err(Error::Config(format!(
                "mat repulsion_h {} not positive",
                self.repulsion_h
            )));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("chamfer_weight", self.chamfer_weight),
            ("repulsion_weight", self.repulsion_weight),
        ] {
            if !v.is_finite() || (name != "gamma" && v < 0.0) {
                return Err(Error::Config(format!("mat {name} {v} invalid")));
            }
        }
        Ok(())
    }
}

/// Sign-ascent baseline settings; the budget is shared with the main attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdSection {
    pub iterations: usize,
    pub step_size: f64,
}

impl Default for PgdSection {
    fn default() -> Self {
        PgdSection {
            iterations: 120,
            step_size: 0.02,
        }
    }
}

/// Everything one experiment needs; JSON with a `version` gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub victims: VictimSection,
    pub mat: MatSection,
    pub attack: AttackConfig,
    pub pgd: PgdSection,
    pub defenses: Vec<DefenseSpec>,
    pub rho_grid: Vec<f64>,
    pub ablation_subsets: Vec<Vec<Component>>,
    /// Cap on how many test clouds the attack and evaluation stages use;
    /// `null` means the full test split.
    pub eval_count: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use Component::*;
        ExperimentConfig {
            version: CONFIG_VERSION,
            master_seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            victims: VictimSection::default(),
            mat: MatSection::default(),
            attack: AttackConfig {
                iterations: 120,
                step_size: 0.02,
                ..AttackConfig::default()
            },
            pgd: PgdSection::default(),
            defenses: vec![
                DefenseSpec::none(),
                DefenseSpec::srs(0, 0),
                DefenseSpec::sor(2, 1.1),
            ],
            rho_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ablation_subsets: vec![
                vec![Centers],
                vec![Radii],
                vec![Features],
                vec![Centers, Radii],
                vec![Centers, Features],
                vec![Radii, Features],
                vec![Centers, Radii, Features],
            ],
            eval_count: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// CLI overrides; `None` leaves the configured value alone.
    pub fn apply_overrides(
        &mut self,
        epsilon: Option<f64>,
        rho: Option<f64>,
        seed: Option<u64>,
    ) -> Result<()> {
        if let Some(e) = epsilon {
            self.attack.epsilon = e;
        }
        if let Some(r) = rho {
            self.attack.rho = r;
        }
        if let Some(s) = seed {
            self.master_seed = s;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.dataset.validate()?;
        self.victims.validate(self.dataset.points)?;
        self.mat.validate(self.dataset.points)?;
        self.attack.validate()?;
        if self.pgd.iterations == 0 || !(self.pgd.step_size > 0.0) {
            return Err(Error::Config(format!(
                "pgd needs positive iterations and step size (got {}, {})",
                self.pgd.iterations, self.pgd.step_size
            )));
        }
        if self.defenses.is_empty() {
            return Err(Error::Config("defense list is empty".into()));
        }
        for d in &self.defenses {
            // Defenses see both original-size and decoded (n·s) clouds.
            d.validate(self.min_defended_points())?;
        }
        if self.rho_grid.is_empty() {
            return Err(Error::Config("rho grid is empty".into()));
        }
        for &r in &self.rho_grid {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("rho {r} outside [0, 1]")));
            }
        }
        if self.ablation_subsets.is_empty() {
            return Err(Error::Config("ablation subset list is empty".into()));
        }
        for subset in &self.ablation_subsets {
            if subset.is_empty() {
                return Err(Error::Config("empty ablation subset".into()));
            }
            for (i, c) in subset.iter().enumerate() {
                if subset[..i].contains(c) {
                    return Err(Error::Config(format!("duplicate component in subset: {c:?}")));
                }
            }
        }
        if self.eval_count == Some(0) {
            return Err(Error::Config("eval_count must be positive when set".into()));
        }
        Ok(())
    }

    /// Copy with every derived field filled in: stage seeds from the master
    /// seed and the scaled SRS drop count. Idempotent.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        self.validate()?;
        let mut cfg = self.clone();
        cfg.attack.seed = cfg.attack_seed();
        let defended = cfg.min_defended_points();
        for d in &mut cfg.defenses {
            d.seed = stage_seed(&format!("defense-{}", d.kind.name()), cfg.master_seed);
            if d.kind == DefenseKind::Srs && d.srs_drop == 0 {
                d.srs_drop = scaled_srs_drop(defended);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Smallest cloud a defense can encounter: original clouds have
    /// `dataset.points` points, decoded adversarial clouds have n·s.
    pub fn min_defended_points(&self) -> usize {
        self.dataset
            .points
            .min(self.mat.config.n_spheres * self.mat.config.pts_per_sphere)
    }

    pub fn dataset_seed(&self) -> u64 {
        stage_seed("gen-data", self.master_seed)
    }

    pub fn victim_init_seed(&self, kind: &str) -> u64 {
        stage_seed(&format!("init-{kind}"), self.master_seed)
    }

    pub fn victim_train_seed(&self, kind: &str) -> u64 {
        stage_seed(&format!("train-victim-{kind}"), self.master_seed)
    }

    pub fn mat_init_seed(&self) -> u64 {
        stage_seed("init-mat", self.master_seed)
    }

    pub fn mat_phase_seed(&self, phase: &str) -> u64 {
        stage_seed(&format!("mat-{phase}"), self.master_seed)
    }

    pub fn attack_seed(&self) -> u64 {
        stage_seed("attack", self.master_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn default_config_validates_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn sparse_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"version": 1, "master_seed": 5}"#).unwrap();
        assert_eq!(cfg.master_seed, 5);
        assert_eq!(cfg.dataset, DatasetSpec::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_and_bad_versions_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"version": 1, "typo": 3}"#).is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"version": 2}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn validation_covers_each_section() {
        let base = ExperimentConfig::default();
        let mut c = base.clone();
        c.victims.surrogate = "resnet".into();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.mat.config.n_sampled = c.dataset.points + 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.rho_grid = vec![0.5, 1.5];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.ablation_subsets[0].clear();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.defenses.clear();
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.eval_count = Some(0);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.pgd.step_size = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn resolve_fills_seeds_and_srs_drop() {
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 7;
        let r = cfg.resolved().unwrap();
        assert_eq!(r.attack.seed, stage_seed("attack", 7));
        let srs = r
            .defenses
            .iter()
            .find(|d| d.kind == DefenseKind::Srs)
            .unwrap();
        assert_eq!(srs.srs_drop, scaled_srs_drop(256));
        assert_eq!(srs.seed, stage_seed("defense-srs", 7));
        assert_eq!(r.resolved().unwrap(), r);
        // Different stages get different seeds from one master.
        assert_ne!(cfg.dataset_seed(), cfg.attack_seed());
        assert_ne!(
            cfg.victim_train_seed("pointnet-lite"),
            cfg.victim_train_seed("edgeconv-lite")
        );
    }

    #[test]
    fn overrides_apply_and_are_validated() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(Some(0.3), Some(0.75), Some(42)).unwrap();
        assert_eq!(cfg.attack.epsilon, 0.3);
        assert_eq!(cfg.attack.rho, 0.75);
        assert_eq!(cfg.master_seed, 42);
        assert!(cfg.apply_overrides(None, Some(1.5), None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut cfg = ExperimentConfig::default();
        cfg.master_seed = 11;
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
        assert!(ExperimentConfig::load(&dir.path().join("nope.json")).is_err());
    }
}

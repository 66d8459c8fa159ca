//! Experiment configuration: TOML sections with defaults, strict unknown-key
//! rejection, range validation, and dotted-path overrides.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use unlearn_core::data::{FileFormat, ForgetKind};
use unlearn_core::eval::SvmFeature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Retrain,
    Ft,
    Ga,
    Ff,
    Iu,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Retrain => "retrain",
            Method::Ft => "ft",
            Method::Ga => "ga",
            Method::Ff => "ff",
            Method::Iu => "iu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Train-pool file for csv/binary datasets.
    pub path: Option<PathBuf>,
    /// Eval-pool file for csv/binary datasets.
    pub eval_path: Option<PathBuf>,
    /// Standardize features per dimension at load time (file datasets).
    pub normalize: bool,
    pub classes: usize,
    pub per_class: usize,
    pub eval_per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Synthetic,
            path: None,
            eval_path: None,
            normalize: true,
            classes: 5,
            per_class: 200,
            eval_per_class: 100,
            dim: 16,
            spread: 0.5,
        }
    }
}

impl DatasetSpec {
    pub fn file_format(&self) -> Option<FileFormat> {
        match self.kind {
            DatasetKind::Csv => Some(FileFormat::Csv),
            DatasetKind::Binary => Some(FileFormat::Binary),
            DatasetKind::Synthetic => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: ForgetKind,
    pub forget_fraction: f64,
    pub forget_class: usize,
}

impl Default for SchemeSpec {
    fn default() -> Self {
        SchemeSpec { kind: ForgetKind::RandomFraction, forget_fraction: 0.10, forget_class: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenderSpec {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for DefenderSpec {
    fn default() -> Self {
        DefenderSpec { hidden: vec![128], feature_dim: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerSpec {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub sens_n: usize,
    pub sens_sigma: f64,
    pub sens_scalar_norm: bool,
    pub pretrain_iters: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
}

impl Default for AttackerSpec {
    fn default() -> Self {
        AttackerSpec {
            layers: 3,
            heads: 4,
            model_dim: 64,
            sens_n: 10,
            sens_sigma: 1.0,
            sens_scalar_norm: false,
            pretrain_iters: 1000,
            pretrain_batch: 16,
            pretrain_lr: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Load the base model from a checkpoint instead of training it.
    pub load_checkpoint: Option<PathBuf>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { epochs: 30, lr: 0.1, momentum: 0.9, batch_size: 32, load_checkpoint: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSpec {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Defender unlearning rate; absent means the scheme/sparsity default
    /// (0.01 dense random, 0.03 sparse random, 0.02 class-wise).
    pub unlearn_lr: Option<f64>,
    pub attacker_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub non_saturating: bool,
    /// Iteration after which α drops to 0; absent means the scheme default
    /// (30 for class-wise, none for random).
    pub alpha_cutoff: Option<u64>,
    pub early_stop: bool,
    pub save_checkpoints: bool,
}

impl Default for UnlearnSpec {
    fn default() -> Self {
        UnlearnSpec {
            alpha: 0.9,
            beta: 0.001,
            lambda: 5e-3,
            unlearn_lr: None,
            attacker_lr: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            non_saturating: false,
            alpha_cutoff: None,
            early_stop: true,
            save_checkpoints: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub ff_scale: f64,
    pub ff_damping: f64,
    pub iu_damping: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            epochs: 5,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            ff_scale: 0.1,
            ff_damping: 1e-8,
            iu_damping: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub svm_reg: f64,
    pub svm_passes: usize,
    pub svm_feature: SvmFeature,
    pub metric_attacks: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            svm_reg: 1e-4,
            svm_passes: 50,
            svm_feature: SvmFeature::Confidence,
            metric_attacks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub sparsity: f64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub scheme: SchemeSpec,
    pub defender: DefenderSpec,
    pub attacker: AttackerSpec,
    pub train: TrainSpec,
    pub unlearn: UnlearnSpec,
    pub baseline: BaselineSpec,
    pub eval: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Ours,
            seeds: vec![0],
            sparsity: 0.0,
            output_dir: PathBuf::from("outputs"),
            dataset: DatasetSpec::default(),
            scheme: SchemeSpec::default(),
            defender: DefenderSpec::default(),
            attacker: AttackerSpec::default(),
            train: TrainSpec::default(),
            unlearn: UnlearnSpec::default(),
            baseline: BaselineSpec::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        fn nonneg(name: &str, v: f64) -> Result<()> {
            if v < 0.0 || !v.is_finite() {
                bail!("{name}: must be nonnegative (got {v})");
            }
            Ok(())
        }
        fn positive(name: &str, v: f64) -> Result<()> {
            if v <= 0.0 || !v.is_finite() {
                bail!("{name}: must be positive (got {v})");
            }
            Ok(())
        }
        nonneg("alpha", self.unlearn.alpha)?;
        nonneg("beta", self.unlearn.beta)?;
        nonneg("lambda", self.unlearn.lambda)?;
        positive("attacker_lr", self.unlearn.attacker_lr)?;
        if let Some(lr) = self.unlearn.unlearn_lr {
            positive("unlearn_lr", lr)?;
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            bail!("sparsity: must lie in [0, 1) (got {})", self.sparsity);
        }
        if self.scheme.kind == ForgetKind::RandomFraction
            && !(0.0..1.0).contains(&self.scheme.forget_fraction)
        {
            bail!("forget_fraction: must lie in (0, 1) (got {})", self.scheme.forget_fraction);
        }
        if self.seeds.is_empty() {
            bail!("seeds: need at least one seed");
        }
        if self.unlearn.batch_size == 0 || self.train.batch_size == 0 {
            bail!("batch_size: must be positive");
        }
        if self.attacker.model_dim % self.attacker.heads != 0 {
            bail!(
                "attacker.model_dim: {} not divisible by heads {}",
                self.attacker.model_dim,
                self.attacker.heads
            );
        }
        if self.attacker.sens_n == 0 {
            bail!("sens_n: must be at least 1");
        }
        if self.dataset.kind != DatasetKind::Synthetic {
            if self.dataset.path.is_none() {
                bail!("dataset.path: required for file datasets");
            }
            if self.dataset.eval_path.is_none() {
                bail!("dataset.eval_path: required for file datasets");
            }
        }
        if self.dataset.kind == DatasetKind::Synthetic
            && (self.dataset.classes < 2 || self.dataset.dim < 2)
        {
            bail!("dataset: synthetic data needs at least 2 classes and 2 dimensions");
        }
        Ok(())
    }

    /// Directory label for this run; a β=0 "ours" run is the ablation arm.
    pub fn label(&self) -> String {
        match self.method {
            Method::Ours if self.unlearn.beta == 0.0 => "ours-no-ssreg".to_string(),
            m => m.name().to_string(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }
}

/// Parse a TOML config; unknown keys are rejected and ranges validated.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("config parse: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse with `key.path=value` overrides applied before validation.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| anyhow!("config parse: {e}"))?;
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{ov}' must look like key.path=value"))?;
        apply_override(&mut value, path.trim(), raw.trim())
            .with_context(|| format!("applying override '{ov}'"))?;
    }
    let cfg: ExperimentConfig =
        value.try_into().map_err(|e| anyhow!("config parse after overrides: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("'{}' is not a table", parts[..i].join(".")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_materializes_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.unlearn.alpha, 0.9);
        assert_eq!(cfg.unlearn.beta, 0.001);
        assert_eq!(cfg.unlearn.lambda, 5e-3);
        assert_eq!(cfg.attacker.sens_n, 10);
        assert_eq!(cfg.attacker.pretrain_iters, 1000);
        assert_eq!(cfg.sparsity, 0.0);
    }

    #[test]
    fn minimal_dataset_path_config_parses() {
        let cfg = parse_config(
            "[dataset]\nkind = \"csv\"\npath = \"train.csv\"\neval_path = \"eval.csv\"\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.kind, DatasetKind::Csv);
        assert_eq!(cfg.unlearn.alpha, 0.9);
    }

    #[test]
    fn out_of_range_alpha_names_the_key() {
        let err = parse_config("[unlearn]\nalpha = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_config("[unlearn]\nalfa = 0.5\n").is_err());
        assert!(parse_config("nonsense = 1\n").is_err());
    }

    #[test]
    fn serialization_roundtrip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seeds = vec![3, 5, 8];
        cfg.unlearn.beta = 0.0;
        cfg.scheme.kind = ForgetKind::ClassWise;
        let text = cfg.to_toml().unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = parse_config_with_overrides(
            "",
            &[
                "unlearn.alpha=0.5".to_string(),
                "seeds=[1, 2]".to_string(),
                "scheme.kind=\"class_wise\"".to_string(),
                "method=\"ft\"".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.unlearn.alpha, 0.5);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.scheme.kind, ForgetKind::ClassWise);
        assert_eq!(cfg.method, Method::Ft);
    }

    #[test]
    fn ablation_arm_is_labeled() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.label(), "ours");
        cfg.unlearn.beta = 0.0;
        assert_eq!(cfg.label(), "ours-no-ssreg");
        cfg.method = Method::Retrain;
        assert_eq!(cfg.label(), "retrain");
    }
}

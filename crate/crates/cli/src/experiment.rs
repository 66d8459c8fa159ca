//! Seeded end-to-end runs: data → base training → optional pruning →
//! unlearning method → evaluation → persisted artifacts, aggregated over
//! seeds in `a±b` form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use unlearn_core::attacker::{AttackerConfig, AttackerModel, PretrainCfg, SensitivityCfg};
use unlearn_core::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use unlearn_core::data::{
    gen_synthetic_pair, load_dataset, make_splits, ForgetKind, ForgetScheme, LabeledDataset,
    SplitSet,
};
use unlearn_core::defender::{train_classifier, DefenderConfig, DefenderModel, TrainConfig};
use unlearn_core::engine::{run_unlearning, RunHistory, UnlearnConfig};
use unlearn_core::eval::{evaluate, EvalConfig, MetricsReport, SvmConfig};
use unlearn_core::nn::{load_checkpoint, save_checkpoint, AttentionConfig};
use unlearn_core::pruning::{apply_mask, omp_mask, SparsityMask};
use unlearn_core::rng::derive_seed;

use crate::config::{DatasetKind, ExperimentConfig, Method};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn formatted(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

/// Mean and sample standard deviation (denominator n−1; 0 when n = 1).
pub fn mean_std(xs: &[f64]) -> MeanStd {
    assert!(!xs.is_empty(), "mean_std over an empty list");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() == 1 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub n_seeds: usize,
    /// Per-metric mean/std over seeds, keyed ua/mia_efficacy/ra/ta.
    pub metrics: BTreeMap<String, MeanStd>,
    pub runtime_minutes: MeanStd,
}

impl AggregateReport {
    pub fn metric(&self, name: &str) -> Option<&MeanStd> {
        self.metrics.get(name)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StageRecord {
    name: String,
    wrote: Vec<String>,
    completed_unix_ms: u128,
}

#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: MetricsReport,
    pub base_report: MetricsReport,
    pub runtime_minutes: f64,
    pub history: Option<RunHistory>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub label: String,
    pub per_seed: Vec<SeedOutcome>,
    pub failures: Vec<(u64, String)>,
    pub aggregate: Option<AggregateReport>,
    pub output_dir: PathBuf,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn build_pools(cfg: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    match cfg.dataset.kind {
        DatasetKind::Synthetic => {
            let d = &cfg.dataset;
            // one draw, shared class centers, disjoint samples
            let (train, eval_pool) = gen_synthetic_pair(
                d.classes,
                d.per_class,
                d.eval_per_class,
                d.dim,
                d.spread,
                derive_seed(seed, "data", 0),
            )?;
            Ok((train, eval_pool))
        }
        _ => {
            let format = cfg.dataset.file_format().expect("file kind");
            let path = cfg.dataset.path.as_ref().expect("validated");
            let eval_path = cfg.dataset.eval_path.as_ref().expect("validated");
            let train = load_dataset(path, format, cfg.dataset.normalize)?;
            let eval_pool = load_dataset(eval_path, format, cfg.dataset.normalize)?;
            Ok((train, eval_pool))
        }
    }
}

fn scheme_for(cfg: &ExperimentConfig, seed: u64) -> ForgetScheme {
    ForgetScheme {
        kind: cfg.scheme.kind,
        fraction: cfg.scheme.forget_fraction,
        class_id: cfg.scheme.forget_class,
        seed: derive_seed(seed, "splits", 0),
    }
}

/// Scheme- and sparsity-dependent default unlearning rate.
fn default_unlearn_lr(kind: ForgetKind, sparsity: f64) -> f64 {
    match (kind, sparsity > 0.0) {
        (ForgetKind::RandomFraction, false) => 0.01,
        (ForgetKind::RandomFraction, true) => 0.03,
        (ForgetKind::ClassWise, _) => 0.02,
    }
}

pub fn unlearn_config_for(cfg: &ExperimentConfig, seed_dir: Option<&Path>) -> UnlearnConfig {
    let mut uc = UnlearnConfig::for_scheme(cfg.scheme.kind);
    uc.alpha = cfg.unlearn.alpha;
    uc.beta = cfg.unlearn.beta;
    uc.lambda = cfg.unlearn.lambda;
    uc.eta_defender = cfg
        .unlearn
        .unlearn_lr
        .unwrap_or_else(|| default_unlearn_lr(cfg.scheme.kind, cfg.sparsity));
    uc.eta_attacker = cfg.unlearn.attacker_lr;
    uc.momentum = cfg.unlearn.momentum;
    uc.batch_size = cfg.unlearn.batch_size;
    uc.epochs = cfg.unlearn.epochs;
    uc.non_saturating = cfg.unlearn.non_saturating;
    if let Some(cut) = cfg.unlearn.alpha_cutoff {
        uc.alpha_cutoff_iters = Some(cut);
    }
    uc.pretrain = PretrainCfg {
        iters: cfg.attacker.pretrain_iters,
        batch_size: cfg.attacker.pretrain_batch,
        lr: cfg.attacker.pretrain_lr,
    };
    uc.sens = SensitivityCfg {
        n: cfg.attacker.sens_n,
        sigma: cfg.attacker.sens_sigma,
        seed: 0,
        scalar_norm: cfg.attacker.sens_scalar_norm,
    };
    uc.early_stop = cfg.unlearn.early_stop;
    if cfg.unlearn.save_checkpoints {
        uc.checkpoint_dir = seed_dir.map(|d| d.join("checkpoints"));
    }
    uc
}

fn eval_config_for(cfg: &ExperimentConfig) -> EvalConfig {
    EvalConfig {
        svm: SvmConfig {
            regularization: cfg.eval.svm_reg,
            passes: cfg.eval.svm_passes,
            feature: cfg.eval.svm_feature,
        },
        metric_attacks: cfg.eval.metric_attacks,
    }
}

struct StageLog {
    records: Vec<StageRecord>,
}

impl StageLog {
    fn new() -> Self {
        StageLog { records: Vec::new() }
    }

    fn complete(&mut self, name: &str, wrote: Vec<String>) {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        self.records.push(StageRecord { name: name.to_string(), wrote, completed_unix_ms: ms });
    }
}

/// The full pipeline for one seed. Returns the unlearned model's report,
/// the base model's report, the method wall-clock, and any run history.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, seed_dir: &Path) -> Result<SeedOutcome> {
    std::fs::create_dir_all(seed_dir)?;
    let mut stages = StageLog::new();

    let (train_pool, eval_pool) = build_pools(cfg, seed)?;
    let splits = make_splits(&train_pool, &eval_pool, &scheme_for(cfg, seed))?;
    stages.complete("data", vec![]);

    let model_seed = derive_seed(seed, "model", 0);
    let dcfg = DefenderConfig {
        input_dim: train_pool.dim(),
        hidden: cfg.defender.hidden.clone(),
        feature_dim: cfg.defender.feature_dim,
        num_classes: train_pool.num_classes(),
    };
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        momentum: cfg.train.momentum,
        batch_size: cfg.train.batch_size,
    };
    let mut defender = match &cfg.train.load_checkpoint {
        Some(path) => DefenderModel::from_store(dcfg.clone(), load_checkpoint(path)?)?,
        None => {
            let mut m = DefenderModel::init(dcfg.clone(), model_seed)?;
            let all: Vec<usize> = (0..train_pool.len()).collect();
            train_classifier(&mut m, &train_pool, &all, &train_cfg, None, model_seed)?;
            m
        }
    };
    let theta0_path = seed_dir.join("theta_0.ckpt");
    save_checkpoint(&defender.store, &theta0_path)?;
    stages.complete("train_base", vec!["theta_0.ckpt".into()]);

    let mask: Option<SparsityMask> = if cfg.sparsity > 0.0 {
        let m = omp_mask(&defender.store, cfg.sparsity)?;
        apply_mask(&mut defender.store, &m)?;
        Some(m)
    } else {
        None
    };
    stages.complete("prune", vec![]);

    let eval_cfg = eval_config_for(cfg);
    let base_report = evaluate(
        &defender,
        &train_pool,
        &eval_pool,
        &splits,
        &eval_cfg,
        derive_seed(seed, "eval_base", 0),
    )?;

    let started = Instant::now();
    let history = run_method(cfg, seed, seed_dir, &train_pool, &eval_pool, &splits, &mut defender, mask.as_ref())?;
    let runtime_minutes = started.elapsed().as_secs_f64() / 60.0;
    stages.complete("method", vec!["theta_u.ckpt".into()]);
    save_checkpoint(&defender.store, &seed_dir.join("theta_u.ckpt"))?;

    let mut report = evaluate(
        &defender,
        &train_pool,
        &eval_pool,
        &splits,
        &eval_cfg,
        derive_seed(seed, "eval_final", 0),
    )?;
    report.runtime_minutes = runtime_minutes;
    stages.complete("evaluate", vec![]);

    let mut wrote = vec!["metrics.json".into(), "metrics_base.json".into(), "stages.json".into()];
    write_atomic(
        &seed_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    write_atomic(
        &seed_dir.join("metrics_base.json"),
        serde_json::to_string_pretty(&base_report)?.as_bytes(),
    )?;
    if let Some(h) = &history {
        let mut csv = Vec::new();
        h.write_csv(&mut csv)?;
        write_atomic(&seed_dir.join("history.csv"), &csv)?;
        wrote.push("history.csv".into());
    }
    stages.complete("persist", wrote);
    write_atomic(
        &seed_dir.join("stages.json"),
        serde_json::to_string_pretty(&stages.records)?.as_bytes(),
    )?;

    Ok(SeedOutcome { seed, report, base_report, runtime_minutes, history })
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    cfg: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    splits: &SplitSet,
    defender: &mut DefenderModel,
    mask: Option<&SparsityMask>,
) -> Result<Option<RunHistory>> {
    match cfg.method {
        Method::Ours => {
            let attention =
                AttentionConfig::new(cfg.attacker.layers, cfg.attacker.heads, cfg.attacker.model_dim)
                    .map_err(|e| anyhow!("{e}"))?;
            let mut attacker = AttackerModel::init(
                AttackerConfig { num_classes: train_pool.num_classes(), attention },
                derive_seed(seed, "attacker", 0),
            )?;
            let uc = unlearn_config_for(cfg, Some(seed_dir));
            let history = run_unlearning(
                defender,
                &mut attacker,
                train_pool,
                eval_pool,
                splits,
                &uc,
                mask,
                derive_seed(seed, "unlearn", 0),
            )?;
            Ok(Some(history))
        }
        method => {
            let b = &cfg.baseline;
            let bc = BaselineConfig {
                method: match method {
                    Method::Retrain => BaselineMethod::Retrain,
                    Method::Ft => BaselineMethod::Ft,
                    Method::Ga => BaselineMethod::Ga,
                    Method::Ff => BaselineMethod::Ff,
                    Method::Iu => BaselineMethod::Iu,
                    Method::Ours => unreachable!(),
                },
                epochs: b.epochs,
                lr: b.lr,
                momentum: b.momentum,
                batch_size: b.batch_size,
                ff_scale: b.ff_scale,
                ff_damping: b.ff_damping,
                iu_damping: b.iu_damping,
                retrain: TrainConfig {
                    epochs: cfg.train.epochs,
                    lr: cfg.train.lr,
                    momentum: cfg.train.momentum,
                    batch_size: cfg.train.batch_size,
                },
            };
            // retrain re-derives the base model's seed so an empty forget
            // set reproduces it exactly
            run_baseline(defender, train_pool, splits, &bc, mask, derive_seed(seed, "model", 0))?;
            Ok(None)
        }
    }
}

fn aggregate(label: &str, outcomes: &[SeedOutcome]) -> Option<AggregateReport> {
    if outcomes.is_empty() {
        return None;
    }
    let pull = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.report)).collect()
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("ua".to_string(), mean_std(&pull(|r| r.ua)));
    metrics.insert("mia_efficacy".to_string(), mean_std(&pull(|r| r.mia_efficacy)));
    metrics.insert("ra".to_string(), mean_std(&pull(|r| r.ra)));
    metrics.insert("ta".to_string(), mean_std(&pull(|r| r.ta)));
    let runtimes: Vec<f64> = outcomes.iter().map(|o| o.runtime_minutes).collect();
    Some(AggregateReport {
        label: label.to_string(),
        n_seeds: outcomes.len(),
        metrics,
        runtime_minutes: mean_std(&runtimes),
    })
}

/// Run every configured seed, persist artifacts under
/// `output_dir/<label>/seed_<s>/`, and aggregate over the seeds that
/// succeeded. Failed seeds are recorded, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let label = cfg.label();
    let run_dir = cfg.output_dir.join(&label);
    std::fs::create_dir_all(&run_dir)?;
    write_atomic(&run_dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = run_dir.join(format!("seed_{seed}"));
        match run_seed(cfg, seed, &seed_dir) {
            Ok(outcome) => per_seed.push(outcome),
            Err(e) => {
                log::warn!("seed {seed} failed: {e:#}");
                failures.push((seed, format!("{e:#}")));
            }
        }
    }

    let aggregate = aggregate(&label, &per_seed);
    if let Some(agg) = &aggregate {
        write_atomic(&run_dir.join("aggregate.json"), serde_json::to_string_pretty(agg)?.as_bytes())?;
        let mut csv = String::from("label,n_seeds,ua,mia_efficacy,ra,ta,runtime_min\n");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            agg.label,
            agg.n_seeds,
            agg.metrics["ua"].formatted(),
            agg.metrics["mia_efficacy"].formatted(),
            agg.metrics["ra"].formatted(),
            agg.metrics["ta"].formatted(),
            agg.runtime_minutes.formatted(),
        ));
        write_atomic(&run_dir.join("aggregate.csv"), csv.as_bytes())?;
    }
    let mut timings = String::from("seed,runtime_minutes\n");
    for o in &per_seed {
        timings.push_str(&format!("{},{}\n", o.seed, o.runtime_minutes));
    }
    write_atomic(&run_dir.join("timings.csv"), timings.as_bytes())?;

    Ok(ExperimentOutcome { label, per_seed, failures, aggregate, output_dir: run_dir })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_known_list() {
        let ms = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(ms.formatted(), "2.00±1.00");
    }

    #[test]
    fn mean_std_single_value() {
        let ms = mean_std(&[4.2]);
        assert_eq!(ms.mean, 4.2);
        assert_eq!(ms.std, 0.0);
    }

    #[test]
    fn formatted_rounds_to_two_places() {
        let ms = MeanStd { mean: 2.304, std: 0.119 };
        assert_eq!(ms.formatted(), "2.30±0.12");
    }

    #[test]
    fn default_rates_follow_scheme_and_sparsity() {
        assert_eq!(default_unlearn_lr(ForgetKind::RandomFraction, 0.0), 0.01);
        assert_eq!(default_unlearn_lr(ForgetKind::RandomFraction, 0.95), 0.03);
        assert_eq!(default_unlearn_lr(ForgetKind::ClassWise, 0.0), 0.02);
        assert_eq!(default_unlearn_lr(ForgetKind::ClassWise, 0.95), 0.02);
    }
}

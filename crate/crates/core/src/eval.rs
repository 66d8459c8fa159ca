//! Post-hoc evaluation: accuracy metrics, a confidence-SVM membership
//! attack, four metric-based attacks with class-dependent thresholds, and
//! average disparity against a gold-standard report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_order, LabeledDataset};
use crate::defender::DefenderModel;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

const LOG_CLAMP: f64 = 1e-12;

/// Per-attack outcome: balanced accuracy on held-out member/non-member
/// scoring data, and the true-negative rate on the forget set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub accuracy: f64,
    pub efficacy: f64,
}

/// The full metric bundle for one unlearned model. All values are
/// percentages in [0, 100].
///
/// `runtime_minutes` is measured wall clock and deliberately excluded from
/// serialization so that reports for the same seed are byte-identical
/// across runs; timings are persisted separately by the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ua: f64,
    pub mia_efficacy: f64,
    pub ra: f64,
    pub ta: f64,
    pub metric_attacks: BTreeMap<String, AttackScore>,
    #[serde(skip)]
    pub runtime_minutes: f64,
}

impl MetricsReport {
    pub fn core_metrics(&self) -> [f64; 4] {
        [self.ua, self.mia_efficacy, self.ra, self.ta]
    }
}

/// Mean absolute gap across {UA, MIA-efficacy, RA, TA} against a gold
/// (retrain) report.
pub fn avg_disparity(report: &MetricsReport, gold: &MetricsReport) -> Result<f64> {
    let a = report.core_metrics();
    let b = gold.core_metrics();
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Eval("disparity over incomplete reports".into()));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0)
}

fn scoring_threads() -> usize {
    std::env::var("UNLEARN_SCORING_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

/// Map `f` over index chunks, optionally across threads, preserving order.
/// Chunk boundaries never change values: every per-sample computation is
/// row-independent.
fn chunked_scores<F>(idx: &[usize], f: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let threads = scoring_threads().min(idx.len().max(1));
    if threads <= 1 {
        return f(idx);
    }
    let chunk = idx.len().div_ceil(threads);
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = idx.chunks(chunk).map(|c| scope.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(idx.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Argmax accuracy (percent) of the model on a dataset subset.
pub fn accuracy(model: &DefenderModel, data: &LabeledDataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Eval("accuracy over an empty subset".into()));
    }
    let hits = chunked_scores(idx, |chunk| {
        let (x, y) = data.batch(chunk);
        let preds = model.predict(&x)?;
        Ok(preds.iter().zip(&y).map(|(p, t)| if p == t { 1.0 } else { 0.0 }).collect())
    })?;
    Ok(hits.iter().sum::<f64>() / idx.len() as f64 * 100.0)
}

/// Max-softmax confidence per sample.
pub fn confidences(model: &DefenderModel, data: &LabeledDataset, idx: &[usize]) -> Result<Vec<f64>> {
    chunked_scores(idx, |chunk| {
        let (x, _) = data.batch(chunk);
        let probs = model.forward(&x)?;
        Ok((0..probs.rows())
            .map(|i| probs.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    })
}

/// Shannon entropy of a probability vector, log-domain clamped.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.max(LOG_CLAMP).ln()).sum::<f64>()
}

/// Label-aware entropy variant: confidently-correct predictions score zero,
/// confidently-wrong ones score high.
pub fn modified_entropy(p: &[f64], label: usize) -> f64 {
    let py = p[label];
    let mut s = -(1.0 - py) * py.max(LOG_CLAMP).ln();
    for (i, &pi) in p.iter().enumerate() {
        if i != label {
            s -= pi * (1.0 - pi).max(LOG_CLAMP).ln();
        }
    }
    s
}

/// Rank-based AUC (midranks for ties) of positive vs negative scores.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    assert!(!pos.is_empty() && !neg.is_empty(), "auc needs both classes");
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Which per-sample feature the membership SVM consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmFeature {
    /// Scalar max-softmax confidence.
    Confidence,
    /// The full probability vector.
    FullProbs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvmConfig {
    pub regularization: f64,
    pub passes: usize,
    pub feature: SvmFeature,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { regularization: 1e-4, passes: 50, feature: SvmFeature::Confidence }
    }
}

/// Linear SVM fit by Pegasos-style hinge subgradient descent.
#[derive(Clone, Debug)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvm {
    /// Fit on features with ±1 labels (`true` = member/positive).
    pub fn fit(features: &[Vec<f64>], members: &[bool], cfg: &SvmConfig, seed: u64) -> Result<Self> {
        if features.is_empty() || features.len() != members.len() {
            return Err(Error::Eval("SVM needs matched nonempty features/labels".into()));
        }
        let dim = features[0].len();
        let lambda = cfg.regularization;
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut t = 0u64;
        for pass in 0..cfg.passes {
            let order = shuffled_order(features.len(), derive_seed(seed, "svm_pass", pass as u64));
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = if members[i] { 1.0 } else { -1.0 };
                let margin =
                    y * (features[i].iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() + b);
                for wi in w.iter_mut() {
                    *wi *= 1.0 - eta * lambda;
                }
                if margin < 1.0 {
                    for (wi, &x) in w.iter_mut().zip(&features[i]) {
                        *wi += eta * y * x;
                    }
                    b += eta * y;
                }
            }
        }
        let mut svm = LinearSvm { w, b };

        // Degenerate fit (single-class predictions): fall back to the
        // midpoint of the class means along the mean-difference direction.
        let preds: Vec<bool> = features.iter().map(|f| svm.predict(f)).collect();
        if preds.iter().all(|&p| p) || preds.iter().all(|&p| !p) {
            log::warn!("degenerate SVM fit; falling back to class-mean midpoint threshold");
            let mean_of = |flag: bool| -> Option<Vec<f64>> {
                let rows: Vec<&Vec<f64>> = features
                    .iter()
                    .zip(members)
                    .filter(|(_, &m)| m == flag)
                    .map(|(f, _)| f)
                    .collect();
                if rows.is_empty() {
                    return None;
                }
                let mut mean = vec![0.0; dim];
                for r in &rows {
                    for (m, &x) in mean.iter_mut().zip(r.iter()) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
                Some(mean)
            };
            if let (Some(mp), Some(mn)) = (mean_of(true), mean_of(false)) {
                let dir: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
                let mid: f64 =
                    dir.iter().zip(mp.iter().zip(&mn)).map(|(d, (a, b))| d * (a + b) / 2.0).sum();
                svm = LinearSvm { w: dir, b: -mid };
            }
        }
        Ok(svm)
    }

    pub fn decision(&self, feature: &[f64]) -> f64 {
        feature.iter().zip(&self.w).map(|(x, w)| x * w).sum::<f64>() + self.b
    }

    pub fn predict(&self, feature: &[f64]) -> bool {
        self.decision(feature) >= 0.0
    }
}

fn svm_features(
    model: &DefenderModel,
    data: &LabeledDataset,
    idx: &[usize],
    feature: SvmFeature,
) -> Result<Vec<Vec<f64>>> {
    match feature {
        SvmFeature::Confidence => {
            Ok(confidences(model, data, idx)?.into_iter().map(|c| vec![c]).collect())
        }
        SvmFeature::FullProbs => {
            let (x, _) = data.batch(idx);
            let probs = model.forward(&x)?;
            Ok((0..probs.rows()).map(|i| probs.row(i).to_vec()).collect())
        }
    }
}

/// Confidence-SVM membership attack: fit members (train pool) against
/// non-members (test split), then report the fraction of forget-set samples
/// predicted non-member, as a percentage.
pub fn mia_efficacy(
    model: &DefenderModel,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    test_idx: &[usize],
    forget_idx: &[usize],
    cfg: &SvmConfig,
    seed: u64,
) -> Result<f64> {
    if forget_idx.is_empty() {
        return Err(Error::Eval("MIA efficacy over an empty forget set".into()));
    }
    let all_train: Vec<usize> = (0..train_pool.len()).collect();
    let mut features = svm_features(model, train_pool, &all_train, cfg.feature)?;
    let mut labels = vec![true; features.len()];
    let non = svm_features(model, eval_pool, test_idx, cfg.feature)?;
    labels.extend(std::iter::repeat(false).take(non.len()));
    features.extend(non);
    let svm = LinearSvm::fit(&features, &labels, cfg, derive_seed(seed, "mia_svm", 0))?;

    let forget_feats = svm_features(model, train_pool, forget_idx, cfg.feature)?;
    let tn = forget_feats.iter().filter(|f| !svm.predict(f)).count();
    Ok(tn as f64 / forget_idx.len() as f64 * 100.0)
}

/// Train a fresh SVM to separate two score populations and report held-out
/// balanced accuracy in [0,1]. Used for the post-unlearning forget-vs-
/// validation distinguishability probe.
pub fn svm_distinguishability(
    model: &DefenderModel,
    pool_a: &LabeledDataset,
    idx_a: &[usize],
    pool_b: &LabeledDataset,
    idx_b: &[usize],
    cfg: &SvmConfig,
    seed: u64,
) -> Result<f64> {
    let n = idx_a.len().min(idx_b.len());
    if n < 4 {
        return Err(Error::Eval("too few samples for a distinguishability probe".into()));
    }
    let sub_a = crate::data::subsample(idx_a, n, derive_seed(seed, "dist_a", 0));
    let sub_b = crate::data::subsample(idx_b, n, derive_seed(seed, "dist_b", 0));
    let half = n / 2;
    let fa = svm_features(model, pool_a, &sub_a, cfg.feature)?;
    let fb = svm_features(model, pool_b, &sub_b, cfg.feature)?;

    let mut train_feats: Vec<Vec<f64>> = fa[..half].to_vec();
    let mut train_labels = vec![true; half];
    train_feats.extend(fb[..half].to_vec());
    train_labels.extend(vec![false; half]);
    let svm = LinearSvm::fit(&train_feats, &train_labels, cfg, derive_seed(seed, "dist_svm", 0))?;

    let tp = fa[half..].iter().filter(|f| svm.predict(f)).count() as f64;
    let tn = fb[half..].iter().filter(|f| !svm.predict(f)).count() as f64;
    let na = (fa.len() - half) as f64;
    let nb = (fb.len() - half) as f64;
    Ok(0.5 * (tp / na + tn / nb))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Correctness,
    Confidence,
    Entropy,
    ModifiedEntropy,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Correctness,
        AttackKind::Confidence,
        AttackKind::Entropy,
        AttackKind::ModifiedEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Correctness => "correctness",
            AttackKind::Confidence => "confidence",
            AttackKind::Entropy => "entropy",
            AttackKind::ModifiedEntropy => "modified_entropy",
        }
    }

    /// Whether larger scores indicate membership.
    fn member_if_high(&self) -> bool {
        matches!(self, AttackKind::Confidence)
    }
}

/// Calibrated metric attack: a score function plus per-class thresholds
/// (unused for the correctness rule).
#[derive(Clone, Debug)]
pub struct ThresholdAttack {
    pub kind: AttackKind,
    pub thresholds: Vec<f64>,
}

struct Scored {
    score: f64,
    label: usize,
    correct: bool,
}

fn score_samples(
    model: &DefenderModel,
    data: &LabeledDataset,
    idx: &[usize],
    kind: AttackKind,
) -> Result<Vec<Scored>> {
    let (x, y) = data.batch(idx);
    let probs = model.forward(&x)?;
    Ok((0..probs.rows())
        .map(|i| {
            let p = probs.row(i);
            let pred = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            let score = match kind {
                AttackKind::Correctness => 0.0,
                AttackKind::Confidence => p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                AttackKind::Entropy => entropy(p),
                AttackKind::ModifiedEntropy => modified_entropy(p, y[i]),
            };
            Scored { score, label: y[i], correct: pred == y[i] }
        })
        .collect())
}

impl ThresholdAttack {
    /// Calibrate per-class thresholds to maximize balanced member/non-member
    /// accuracy on calibration scores; ties resolve to the lower threshold.
    fn calibrate(
        kind: AttackKind,
        members: &[Scored],
        nonmembers: &[Scored],
        num_classes: usize,
    ) -> Self {
        if kind == AttackKind::Correctness {
            return ThresholdAttack { kind, thresholds: vec![0.0; num_classes] };
        }
        let mut thresholds = vec![0.0; num_classes];
        for (c, out) in thresholds.iter_mut().enumerate() {
            let ms: Vec<f64> =
                members.iter().filter(|s| s.label == c).map(|s| s.score).collect();
            let ns: Vec<f64> =
                nonmembers.iter().filter(|s| s.label == c).map(|s| s.score).collect();
            let mut candidates: Vec<f64> = Vec::new();
            let mut all: Vec<f64> = ms.iter().chain(ns.iter()).cloned().collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.dedup();
            if all.is_empty() {
                *out = 0.0;
                continue;
            }
            candidates.push(all[0] - 1.0);
            for w in all.windows(2) {
                candidates.push((w[0] + w[1]) / 2.0);
            }
            candidates.push(all[all.len() - 1] + 1.0);

            let mut best = (f64::NEG_INFINITY, f64::INFINITY);
            for &tau in &candidates {
                let bal = balanced_accuracy_at(kind, tau, &ms, &ns);
                if bal > best.0 + 1e-15 || (bal > best.0 - 1e-15 && tau < best.1) {
                    best = (bal, tau);
                }
            }
            *out = best.1;
        }
        ThresholdAttack { kind, thresholds }
    }

    /// Member decision for one score (class-threshold or correctness rule).
    fn is_member(&self, s: &Scored) -> bool {
        match self.kind {
            AttackKind::Correctness => s.correct,
            _ => {
                let tau = self.thresholds[s.label];
                if self.kind.member_if_high() {
                    s.score >= tau
                } else {
                    s.score <= tau
                }
            }
        }
    }
}

fn balanced_accuracy_at(kind: AttackKind, tau: f64, members: &[f64], nonmembers: &[f64]) -> f64 {
    let member_hit = |s: f64| if kind.member_if_high() { s >= tau } else { s <= tau };
    let tpr = if members.is_empty() {
        0.5
    } else {
        members.iter().filter(|&&s| member_hit(s)).count() as f64 / members.len() as f64
    };
    let tnr = if nonmembers.is_empty() {
        0.5
    } else {
        nonmembers.iter().filter(|&&s| !member_hit(s)).count() as f64 / nonmembers.len() as f64
    };
    0.5 * (tpr + tnr)
}

/// Run one calibrated metric attack. Thresholds come from calibration
/// halves of (train pool, test split); accuracy is balanced accuracy on the
/// held-out halves; efficacy is the true-negative rate on the forget set.
/// The forget set never participates in calibration.
pub fn metric_attack(
    kind: AttackKind,
    model: &DefenderModel,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    test_idx: &[usize],
    forget_idx: &[usize],
    seed: u64,
) -> Result<AttackScore> {
    if forget_idx.is_empty() {
        return Err(Error::Eval("metric attack over an empty forget set".into()));
    }
    let all_train: Vec<usize> = (0..train_pool.len()).collect();
    let member_scored = score_samples(model, train_pool, &all_train, kind)?;
    let nonmember_scored = score_samples(model, eval_pool, test_idx, kind)?;

    let split = |n: usize, tag: &str| -> (Vec<usize>, Vec<usize>) {
        let order = shuffled_order(n, derive_seed(seed, tag, 0));
        let half = n / 2;
        (order[..half].to_vec(), order[half..].to_vec())
    };
    let (m_cal, m_score) = split(member_scored.len(), "attack_cal_members");
    let (n_cal, n_score) = split(nonmember_scored.len(), "attack_cal_nonmembers");

    let cal_m: Vec<Scored> = m_cal.iter().map(|&i| Scored { ..copy(&member_scored[i]) }).collect();
    let cal_n: Vec<Scored> =
        n_cal.iter().map(|&i| Scored { ..copy(&nonmember_scored[i]) }).collect();
    let attack =
        ThresholdAttack::calibrate(kind, &cal_m, &cal_n, train_pool.num_classes());

    let tpr = rate(&m_score, &member_scored, |s| attack.is_member(s));
    let tnr = rate(&n_score, &nonmember_scored, |s| !attack.is_member(s));
    let accuracy = 0.5 * (tpr + tnr) * 100.0;

    let forget_scored = score_samples(model, train_pool, forget_idx, kind)?;
    let tn = forget_scored.iter().filter(|s| !attack.is_member(s)).count();
    let efficacy = tn as f64 / forget_scored.len() as f64 * 100.0;
    Ok(AttackScore { accuracy, efficacy })
}

fn copy(s: &Scored) -> Scored {
    Scored { score: s.score, label: s.label, correct: s.correct }
}

fn rate(idx: &[usize], pool: &[Scored], pred: impl Fn(&Scored) -> bool) -> f64 {
    if idx.is_empty() {
        return 0.5;
    }
    idx.iter().filter(|&&i| pred(&pool[i])).count() as f64 / idx.len() as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub svm: SvmConfig,
    /// Also run the four metric-based attacks.
    pub metric_attacks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { svm: SvmConfig::default(), metric_attacks: true }
    }
}

/// Full evaluation of an unlearned model against its splits.
pub fn evaluate(
    model: &DefenderModel,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    splits: &crate::data::SplitSet,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let ua = 100.0 - accuracy(model, train_pool, &splits.forget)?;
    let ra = accuracy(model, train_pool, &splits.retain)?;
    let ta = accuracy(model, eval_pool, &splits.test)?;
    let mia = mia_efficacy(
        model,
        train_pool,
        eval_pool,
        &splits.test,
        &splits.forget,
        &cfg.svm,
        derive_seed(seed, "mia_eval", 0),
    )?;
    let mut attacks = BTreeMap::new();
    if cfg.metric_attacks {
        for kind in AttackKind::ALL {
            let score = metric_attack(
                kind,
                model,
                train_pool,
                eval_pool,
                &splits.test,
                &splits.forget,
                derive_seed(seed, "metric_attack", kind as u64),
            )?;
            attacks.insert(kind.name().to_string(), score);
        }
    }
    Ok(MetricsReport {
        ua,
        mia_efficacy: mia,
        ra,
        ta,
        metric_attacks: attacks,
        runtime_minutes: 0.0,
    })
}

//! The iterative min-max unlearning loop: attacker ascent, then defender
//! descent on `CE + α·(adversarial term) + β·(redundancy loss)`, with the
//! α cutoff schedule and per-epoch bookkeeping.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacker::{
    attacker_ascent_step, attacker_loss_on_tape, mia_batch, mia_inputs, mia_inputs_on_tape,
    AttackerModel, BatchCycle, PretrainCfg, SensitivityCfg,
};
use crate::data::{shuffled_order, ForgetKind, LabeledDataset, SplitSet};
use crate::defender::DefenderModel;
use crate::error::{Error, Result};
use crate::eval::{accuracy, auc};
use crate::nn::{save_checkpoint, Adam, SgdMomentum, Tape, ValueId};
use crate::pruning::SparsityMask;
use crate::rng::derive_seed;
use crate::ssreg::ss_loss_on_tape;

/// Early-stop window: attacker AUC near chance for this many consecutive
/// epochs while retain accuracy has recovered.
const EARLY_STOP_AUC: (f64, f64) = (0.48, 0.52);
const EARLY_STOP_EPOCHS: usize = 3;
const EARLY_STOP_RA_SLACK: f64 = 2.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnlearnConfig {
    /// Weight of the adversarial term in the defender objective.
    pub alpha: f64,
    /// Weight of the redundancy-reduction regularizer.
    pub beta: f64,
    /// Off-diagonal weight inside the regularizer.
    pub lambda: f64,
    pub eta_defender: f64,
    pub eta_attacker: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheme: ForgetKind,
    /// Use the label-flipped adversarial term for the defender.
    pub non_saturating: bool,
    /// Force α to zero from this defender iteration on.
    pub alpha_cutoff_iters: Option<u64>,
    /// Attacker ascent steps per defender step.
    pub attacker_steps: usize,
    pub pretrain: PretrainCfg,
    pub sens: SensitivityCfg,
    pub early_stop: bool,
    pub checkpoint_dir: Option<PathBuf>,
    /// Collect a per-iteration event trace (tests and debugging).
    pub trace: bool,
}

impl UnlearnConfig {
    /// Scheme-dependent defaults: class-wise forgetting cuts α off after 30
    /// iterations and unlearns at 0.02; random forgetting keeps α all the
    /// way and unlearns at 0.01.
    pub fn for_scheme(scheme: ForgetKind) -> Self {
        let (eta_defender, alpha_cutoff_iters) = match scheme {
            ForgetKind::RandomFraction => (0.01, None),
            ForgetKind::ClassWise => (0.02, Some(30)),
        };
        UnlearnConfig {
            alpha: 0.9,
            beta: 0.001,
            lambda: 5e-3,
            eta_defender,
            eta_attacker: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            scheme,
            non_saturating: false,
            alpha_cutoff_iters,
            attacker_steps: 1,
            pretrain: PretrainCfg::default(),
            sens: SensitivityCfg::default(),
            early_stop: false,
            checkpoint_dir: None,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("alpha, beta, lambda must be nonnegative".into()));
        }
        if self.eta_defender <= 0.0 || self.eta_attacker <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.attacker_steps == 0 {
            return Err(Error::Config("attacker_steps must be positive".into()));
        }
        Ok(())
    }
}

/// α as a function of the defender iteration counter.
pub fn alpha_schedule(iter: u64, cfg: &UnlearnConfig) -> f64 {
    match cfg.alpha_cutoff_iters {
        Some(cutoff) if iter >= cutoff => 0.0,
        _ => cfg.alpha,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub retain_ce: f64,
    pub attacker_loss: f64,
    pub ss_loss: f64,
    pub attacker_auc: f64,
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Iteration events when tracing is enabled.
    pub trace: Vec<String>,
}

impl RunHistory {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,retain_ce,attacker_loss,ss_loss,attacker_auc,ua,ra,ta")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.retain_ce,
                r.attacker_loss,
                r.ss_loss,
                r.attacker_auc,
                r.ua,
                r.ra,
                r.ta
            )?;
        }
        Ok(())
    }
}

/// Optimizer and counter state threaded through epochs.
pub struct EngineState {
    pub defender_opt: SgdMomentum,
    pub attacker_opt: Adam,
    pub iter: u64,
    pub trace: Vec<String>,
}

impl EngineState {
    pub fn new(defender: &DefenderModel, attacker: &AttackerModel, cfg: &UnlearnConfig) -> Self {
        EngineState {
            defender_opt: SgdMomentum::new(&defender.store, cfg.eta_defender, cfg.momentum),
            attacker_opt: Adam::new(&attacker.store, cfg.eta_attacker),
            iter: 0,
            trace: Vec::new(),
        }
    }
}

/// Retain-set batches for one epoch: seeded shuffle, fixed chunking. The
/// fine-tuning baseline iterates exactly this sequence.
pub(crate) fn retain_batches(
    retain: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let order = shuffled_order(retain.len(), derive_seed(seed, "retain_order", epoch as u64));
    order.chunks(batch_size).map(|c| c.iter().map(|&p| retain[p]).collect()).collect()
}

pub(crate) struct StepValues {
    pub ce: f64,
    pub adv: f64,
    pub ss: f64,
    pub total: f64,
}

/// Adversarial term for the defender as a tape node over attacker outputs.
/// Saturating: `α·mean(log a_f + log(1 − a_v))` (the attacker objective,
/// descended). Non-saturating: the label-flipped form
/// `α·mean(log a_v + log(1 − a_f))`, which carries stronger gradients when
/// the attacker is confident.
pub fn defender_adversarial_term(
    tape: &mut Tape,
    a_f: ValueId,
    a_v: ValueId,
    alpha: f64,
    non_saturating: bool,
) -> ValueId {
    let base = if non_saturating {
        attacker_loss_on_tape(tape, a_v, a_f)
    } else {
        attacker_loss_on_tape(tape, a_f, a_v)
    };
    tape.scale(base, alpha)
}

/// Value-level adversarial term for paired attacker outputs.
pub fn defender_adversarial_value(
    a_f: &[f64],
    a_v: &[f64],
    alpha: f64,
    non_saturating: bool,
) -> f64 {
    let n = a_f.len().min(a_v.len()) as f64;
    let mean_ln = |xs: &[f64]| xs.iter().map(|&x| x.max(1e-12).ln()).sum::<f64>() / n;
    let mean_ln_1m = |xs: &[f64]| xs.iter().map(|&x| (1.0 - x).max(1e-12).ln()).sum::<f64>() / n;
    if non_saturating {
        alpha * (mean_ln(a_v) + mean_ln_1m(a_f))
    } else {
        alpha * (mean_ln(a_f) + mean_ln_1m(a_v))
    }
}

/// One defender update: build the composite objective on a fresh tape,
/// backpropagate, and take a (possibly masked) SGD step. Subgraphs with a
/// zero coefficient are skipped entirely, so an `α=β=0` step is the exact
/// fine-tuning step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn defender_step(
    defender: &mut DefenderModel,
    attacker: Option<&AttackerModel>,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    retain_batch: &[usize],
    pair: Option<(&[usize], &[usize])>,
    alpha: f64,
    beta: f64,
    lambda: f64,
    non_saturating: bool,
    sens: &SensitivityCfg,
    noise_seed_f: &dyn Fn(usize) -> u64,
    noise_seed_v: &dyn Fn(usize) -> u64,
    opt: &mut SgdMomentum,
    mask: Option<&[bool]>,
) -> Result<StepValues> {
    let mut tape = Tape::new();
    let dbind = defender.store.bind(&mut tape);

    let (x_r, y_r) = train_pool.batch(retain_batch);
    let x_r = tape.leaf(x_r);
    let (probs_r, _) = defender.forward_on_tape(&mut tape, x_r, &dbind);
    let ce = defender.ce_loss_on_tape(&mut tape, probs_r, &y_r);

    let mut total = ce;
    let mut adv_value = 0.0;
    let mut ss_value = 0.0;
    if alpha != 0.0 || beta != 0.0 {
        let (forget_batch, val_batch) =
            pair.ok_or_else(|| Error::Config("paired batches required when α or β is active".into()))?;
        let need_attacker = alpha != 0.0;
        let (mia_f, feats_f) = mia_inputs_on_tape(
            &mut tape,
            defender,
            &dbind,
            train_pool,
            forget_batch,
            sens,
            noise_seed_f,
        )?;
        let (mia_v, feats_v) = mia_inputs_on_tape(
            &mut tape,
            defender,
            &dbind,
            eval_pool,
            val_batch,
            sens,
            noise_seed_v,
        )?;
        if need_attacker {
            let att = attacker
                .ok_or_else(|| Error::Config("attacker required when α is active".into()))?;
            // attacker parameters ride the defender tape as constants
            let abind = att.store.bind(&mut tape);
            let a_f = att.forward_on_tape(&mut tape, mia_f, &abind)?;
            let a_v = att.forward_on_tape(&mut tape, mia_v, &abind)?;
            let term = defender_adversarial_term(&mut tape, a_f, a_v, alpha, non_saturating);
            adv_value = tape.value(term).get(0, 0) / alpha;
            total = tape.add(total, term);
        }
        if beta != 0.0 {
            let ss = ss_loss_on_tape(&mut tape, feats_f, feats_v, lambda);
            ss_value = tape.value(ss).get(0, 0);
            let weighted = tape.scale(ss, beta);
            total = tape.add(total, weighted);
        }
    }

    let values = StepValues {
        ce: tape.value(ce).get(0, 0),
        adv: adv_value,
        ss: ss_value,
        total: tape.value(total).get(0, 0),
    };
    if !values.ce.is_finite() {
        return Err(Error::Numeric("retain cross-entropy is non-finite".into()));
    }
    if !values.adv.is_finite() {
        return Err(Error::Numeric("adversarial term is non-finite".into()));
    }
    if !values.ss.is_finite() {
        return Err(Error::Numeric("redundancy regularizer is non-finite".into()));
    }

    tape.backward(total);
    defender.store.zero_grads();
    dbind.harvest(&tape, &mut defender.store);
    opt.step(&mut defender.store, mask)?;
    Ok(values)
}

/// Plain cross-entropy epoch over the retain set; the α=β=0 reduction of
/// the unlearning epoch and the whole of the fine-tuning baseline.
pub(crate) fn ce_epoch(
    defender: &mut DefenderModel,
    train_pool: &LabeledDataset,
    retain: &[usize],
    batch_size: usize,
    opt: &mut SgdMomentum,
    mask: Option<&[bool]>,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let sens = SensitivityCfg::default();
    for batch in retain_batches(retain, batch_size, seed, epoch) {
        let eval_dummy = train_pool; // unused: α=β=0 never touches pairs
        defender_step(
            defender,
            None,
            train_pool,
            eval_dummy,
            &batch,
            None,
            0.0,
            0.0,
            0.0,
            false,
            &sens,
            &|_| 0,
            &|_| 0,
            opt,
            mask,
        )?;
    }
    Ok(())
}

fn ce_value(defender: &DefenderModel, data: &LabeledDataset, idx: &[usize]) -> Result<f64> {
    let (x, y) = data.batch(idx);
    let mut tape = Tape::new();
    let binding = defender.store.bind(&mut tape);
    let xid = tape.leaf(x);
    let (probs, _) = defender.forward_on_tape(&mut tape, xid, &binding);
    let loss = defender.ce_loss_on_tape(&mut tape, probs, &y);
    Ok(tape.value(loss).get(0, 0))
}

/// One full epoch of Algorithm-style alternating updates: per retain batch,
/// pair fresh forget/validation batches, ascend the attacker on its
/// log-likelihood, then descend the defender on the composite objective
/// with freshly recomputed attacker outputs. Ends with frozen-model
/// bookkeeping (losses, attacker AUC, accuracy snapshots).
#[allow(clippy::too_many_arguments)]
pub fn unlearn_epoch(
    defender: &mut DefenderModel,
    attacker: &mut AttackerModel,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    splits: &SplitSet,
    cfg: &UnlearnConfig,
    mask: Option<&SparsityMask>,
    state: &mut EngineState,
    seed: u64,
    epoch: usize,
) -> Result<EpochRecord> {
    cfg.validate()?;
    if splits.forget.is_empty() || splits.validation.is_empty() {
        return Err(Error::Config("forget and validation splits must be nonempty".into()));
    }
    let epoch_noise = derive_seed(seed, "sens_epoch", epoch as u64);
    let noise_f = move |i: usize| derive_seed(epoch_noise, "f", i as u64);
    let noise_v = move |i: usize| derive_seed(epoch_noise, "v", i as u64);
    let mask_bits = mask.map(|m| m.bits());

    let mut f_cycle = BatchCycle::new(splits.forget.len(), derive_seed(seed, "pair_f", epoch as u64));
    let mut v_cycle =
        BatchCycle::new(splits.validation.len(), derive_seed(seed, "pair_v", epoch as u64));

    for batch in retain_batches(&splits.retain, cfg.batch_size, seed, epoch) {
        let alpha_t = alpha_schedule(state.iter, cfg);
        let forget_batch: Vec<usize> =
            f_cycle.take(cfg.batch_size).into_iter().map(|p| splits.forget[p]).collect();
        let val_batch: Vec<usize> =
            v_cycle.take(cfg.batch_size).into_iter().map(|p| splits.validation[p]).collect();

        // attacker ascent on the current (pre-update) defender
        if cfg.trace {
            state.trace.push(format!(
                "iter={} attacker_step defender_checksum={:016x}",
                state.iter,
                defender.store.checksum()
            ));
        }
        let members = mia_inputs(defender, train_pool, &forget_batch, &cfg.sens, noise_f)?;
        let nonmembers = mia_inputs(defender, eval_pool, &val_batch, &cfg.sens, noise_v)?;
        let mb = mia_batch(&members)?;
        let nb = mia_batch(&nonmembers)?;
        for _ in 0..cfg.attacker_steps {
            let la = attacker_ascent_step(attacker, &mut state.attacker_opt, &mb, &nb)?;
            if !la.is_finite() {
                return Err(Error::Numeric(format!(
                    "attacker log-likelihood non-finite at epoch {epoch} iter {}",
                    state.iter
                )));
            }
        }

        if cfg.trace {
            state.trace.push(format!(
                "iter={} defender_step pre_checksum={:016x} alpha={alpha_t}",
                state.iter,
                defender.store.checksum()
            ));
        }
        let values = defender_step(
            defender,
            Some(attacker),
            train_pool,
            eval_pool,
            &batch,
            Some((&forget_batch, &val_batch)),
            alpha_t,
            cfg.beta,
            cfg.lambda,
            cfg.non_saturating,
            &cfg.sens,
            &noise_f,
            &noise_v,
            &mut state.defender_opt,
            mask_bits,
        )
        .map_err(|e| match e {
            Error::Numeric(msg) => {
                Error::Numeric(format!("{msg} (epoch {epoch}, iter {})", state.iter))
            }
            other => other,
        })?;
        if cfg.trace {
            state.trace.push(format!(
                "iter={} objective ce={} adv={} ss={} total={}",
                state.iter, values.ce, values.adv, values.ss, values.total
            ));
        }
        state.iter += 1;
    }

    if defender.store.flat_values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("defender parameters non-finite after epoch {epoch}")));
    }

    // frozen-model bookkeeping
    let retain_ce = ce_value(defender, train_pool, &splits.retain)?;
    let eval_noise = derive_seed(seed, "sens_eval", epoch as u64);
    let inputs_f = mia_inputs(defender, train_pool, &splits.forget, &cfg.sens, |i| {
        derive_seed(eval_noise, "f", i as u64)
    })?;
    let inputs_v = mia_inputs(defender, eval_pool, &splits.validation, &cfg.sens, |i| {
        derive_seed(eval_noise, "v", i as u64)
    })?;
    let scores_f: Vec<f64> = {
        let batch = mia_batch(&inputs_f)?;
        attacker.forward(&batch)?.data().to_vec()
    };
    let scores_v: Vec<f64> = {
        let batch = mia_batch(&inputs_v)?;
        attacker.forward(&batch)?.data().to_vec()
    };
    let n_pair = inputs_f.len().min(inputs_v.len());
    let attacker_loss_value = defender_adversarial_value(
        &scores_f[..n_pair],
        &scores_v[..n_pair],
        1.0,
        false,
    );
    let ss_pairs = n_pair.min(256).max(2);
    let ss_value = {
        let zf = defender.features(&train_pool.batch(&splits.forget[..ss_pairs.min(splits.forget.len())]).0)?;
        let zv = defender.features(&eval_pool.batch(&splits.validation[..ss_pairs.min(splits.validation.len())]).0)?;
        let n = zf.rows().min(zv.rows());
        let zf = zf.gather_rows(&(0..n).collect::<Vec<_>>());
        let zv = zv.gather_rows(&(0..n).collect::<Vec<_>>());
        crate::ssreg::ss_loss_value(&crate::ssreg::cross_correlation(&zf, &zv)?, cfg.lambda)
    };
    let record = EpochRecord {
        epoch,
        retain_ce,
        attacker_loss: attacker_loss_value,
        ss_loss: ss_value,
        attacker_auc: auc(&scores_f, &scores_v),
        ua: 100.0 - accuracy(defender, train_pool, &splits.forget)?,
        ra: accuracy(defender, train_pool, &splits.retain)?,
        ta: accuracy(defender, eval_pool, &splits.test)?,
    };
    for (name, v) in [
        ("retain_ce", record.retain_ce),
        ("attacker_loss", record.attacker_loss),
        ("ss_loss", record.ss_loss),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch} record field {name} non-finite")));
        }
    }
    Ok(record)
}

/// Pretrain the attacker, then run the configured number of min-max epochs.
/// Checkpoints are written per epoch when a directory is configured; with
/// `early_stop`, the run ends once the attacker sits at chance for
/// [`EARLY_STOP_EPOCHS`] consecutive epochs with retain accuracy recovered.
#[allow(clippy::too_many_arguments)]
pub fn run_unlearning(
    defender: &mut DefenderModel,
    attacker: &mut AttackerModel,
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    splits: &SplitSet,
    cfg: &UnlearnConfig,
    mask: Option<&SparsityMask>,
    seed: u64,
) -> Result<RunHistory> {
    cfg.validate()?;
    let all_train: Vec<usize> = (0..train_pool.len()).collect();
    crate::attacker::pretrain_attacker(
        attacker,
        defender,
        train_pool,
        &all_train,
        eval_pool,
        &splits.validation,
        &cfg.sens,
        &cfg.pretrain,
        derive_seed(seed, "pretrain", 0),
    )?;

    let ra_initial = accuracy(defender, train_pool, &splits.retain)?;
    let mut state = EngineState::new(defender, attacker, cfg);
    let mut history = RunHistory::default();
    for epoch in 0..cfg.epochs {
        let record = unlearn_epoch(
            defender, attacker, train_pool, eval_pool, splits, cfg, mask, &mut state, seed, epoch,
        )?;
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&defender.store, &dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
        history.epochs.push(record);
        if cfg.early_stop && history.epochs.len() >= EARLY_STOP_EPOCHS {
            let tail = &history.epochs[history.epochs.len() - EARLY_STOP_EPOCHS..];
            let auc_settled = tail
                .iter()
                .all(|r| r.attacker_auc >= EARLY_STOP_AUC.0 && r.attacker_auc <= EARLY_STOP_AUC.1);
            let ra_ok = tail.last().unwrap().ra >= ra_initial - EARLY_STOP_RA_SLACK;
            if auc_settled && ra_ok {
                log::info!("early stop at epoch {epoch}: attacker at chance, RA recovered");
                break;
            }
        }
    }
    history.trace = std::mem::take(&mut state.trace);
    Ok(history)
}

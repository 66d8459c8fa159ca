//! Membership-inference attacker: informed inputs built from defender
//! behavior (probabilities, noise sensitivity, label), a transformer
//! scoring network, and log-likelihood training.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, shuffled_order, LabeledDataset};
use crate::defender::DefenderModel;
use crate::error::{Error, Result};
use crate::nn::{
    glorot_uniform, init_attention_params, mhsa_forward, Adam, AttentionConfig, Mat,
    ParamBinding, ParamStore, Tape, ValueId,
};
use crate::rng::{derive_seed, seeded};

/// Noise-probe configuration for the sensitivity term.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityCfg {
    /// Number of noise draws averaged per sample.
    pub n: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
    /// Collapse the per-class differences to a single L2 norm broadcast over
    /// the block. Off by default; the elementwise form keeps the block
    /// informative per class.
    pub scalar_norm: bool,
}

impl Default for SensitivityCfg {
    fn default() -> Self {
        SensitivityCfg { n: 10, sigma: 1.0, seed: 0, scalar_norm: false }
    }
}

/// Per-sample noise matrix: row i is draw i. Draws consume the stream in
/// draw-major order so batched and single-sample paths agree bit-for-bit.
fn noise_rows(n: usize, dim: usize, sigma: f64, seed: u64) -> Mat {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = seeded(seed);
    let mut m = Mat::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            m.set(i, j, sigma * normal.sample(&mut rng));
        }
    }
    m
}

/// Mean absolute change of the defender's output under Gaussian input
/// noise: per class k, `(1/n) Σ_i |p(x)_k − p(x+ε_i)_k|`.
pub fn sensitivity(model: &DefenderModel, x: &[f64], cfg: &SensitivityCfg) -> Result<Vec<f64>> {
    assert!(cfg.n >= 1, "sensitivity needs at least one draw");
    let k = model.cfg.num_classes;
    let x0 = Mat::row_vec(x.to_vec());
    let p0 = model.forward(&x0)?;
    let noise = noise_rows(cfg.n, x.len(), cfg.sigma, cfg.seed);
    let mut acc = vec![0.0; k];
    for i in 0..cfg.n {
        let xi = Mat::row_vec(x.iter().zip(noise.row(i)).map(|(a, e)| a + e).collect());
        let pi = model.forward(&xi)?;
        if cfg.scalar_norm {
            let norm: f64 = p0
                .row(0)
                .iter()
                .zip(pi.row(0))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            acc.iter_mut().for_each(|v| *v += norm);
        } else {
            for (v, (a, b)) in acc.iter_mut().zip(p0.row(0).iter().zip(pi.row(0))) {
                *v += (a - b).abs();
            }
        }
    }
    acc.iter_mut().for_each(|v| *v /= cfg.n as f64);
    Ok(acc)
}

/// Concatenated attacker input: `[probabilities | sensitivity | one-hot]`,
/// total length 3·K.
#[derive(Clone, Debug, PartialEq)]
pub struct MiaInput {
    values: Vec<f64>,
    num_classes: usize,
}

impl MiaInput {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.values[..self.num_classes]
    }

    pub fn delta(&self) -> &[f64] {
        &self.values[self.num_classes..2 * self.num_classes]
    }

    pub fn label_one_hot(&self) -> &[f64] {
        &self.values[2 * self.num_classes..]
    }
}

/// Assemble an attacker input in the fixed block order.
pub fn build_mia_input(
    probs: &[f64],
    delta: &[f64],
    label: usize,
    num_classes: usize,
) -> Result<MiaInput> {
    if probs.len() != num_classes || delta.len() != num_classes {
        return Err(Error::Shape(format!(
            "blocks must have length {num_classes}: probs {}, delta {}",
            probs.len(),
            delta.len()
        )));
    }
    if label >= num_classes {
        return Err(Error::Shape(format!("label {label} >= {num_classes}")));
    }
    let mut values = Vec::with_capacity(3 * num_classes);
    values.extend_from_slice(probs);
    values.extend_from_slice(delta);
    let mut hot = vec![0.0; num_classes];
    hot[label] = 1.0;
    values.extend_from_slice(&hot);
    Ok(MiaInput { values, num_classes })
}

/// Stack inputs into a B×3K batch matrix.
pub fn mia_batch(inputs: &[MiaInput]) -> Result<Mat> {
    if inputs.is_empty() {
        return Err(Error::Eval("empty MIA batch".into()));
    }
    let rows: Vec<Vec<f64>> = inputs.iter().map(|m| m.values.clone()).collect();
    Mat::from_rows(&rows)
}

/// Build attacker inputs for dataset samples against a frozen defender.
/// `noise_seed` maps a dataset index to that sample's noise stream.
pub fn mia_inputs(
    model: &DefenderModel,
    data: &LabeledDataset,
    idx: &[usize],
    cfg: &SensitivityCfg,
    noise_seed: impl Fn(usize) -> u64,
) -> Result<Vec<MiaInput>> {
    let (x, labels) = data.batch(idx);
    let probs = model.forward(&x)?;
    let mut out = Vec::with_capacity(idx.len());
    for (row, (&i, &label)) in idx.iter().zip(&labels).enumerate() {
        let sample_cfg = SensitivityCfg { seed: noise_seed(i), ..cfg.clone() };
        let delta = sensitivity(model, x.row(row), &sample_cfg)?;
        out.push(build_mia_input(probs.row(row), &delta, label, model.cfg.num_classes)?);
    }
    Ok(out)
}

/// Differentiable MIA-input construction for the defender's update: the
/// probability block, the sensitivity block (through all noisy forwards),
/// and the constant one-hot block, concatenated on the tape. Noise draws
/// reproduce `sensitivity` exactly for the same per-sample seeds.
///
/// Returns the B×3K input batch and the underlying B×D feature batch.
pub fn mia_inputs_on_tape(
    tape: &mut Tape,
    defender: &DefenderModel,
    dbind: &ParamBinding,
    data: &LabeledDataset,
    idx: &[usize],
    cfg: &SensitivityCfg,
    noise_seed: &dyn Fn(usize) -> u64,
) -> Result<(ValueId, ValueId)> {
    assert!(cfg.n >= 1, "sensitivity needs at least one draw");
    let (x, labels) = data.batch(idx);
    let k = defender.cfg.num_classes;
    let dim = x.cols();
    let x_id = tape.leaf(x.clone());
    let (p0, feats) = defender.forward_on_tape(tape, x_id, dbind);

    let per_sample: Vec<Mat> =
        idx.iter().map(|&i| noise_rows(cfg.n, dim, cfg.sigma, noise_seed(i))).collect();
    let mut acc: Option<ValueId> = None;
    for draw in 0..cfg.n {
        let mut noisy = x.clone();
        for (row, noise) in per_sample.iter().enumerate() {
            for (v, e) in noisy.row_mut(row).iter_mut().zip(noise.row(draw)) {
                *v += e;
            }
        }
        let xi = tape.leaf(noisy);
        let (pi, _) = defender.forward_on_tape(tape, xi, dbind);
        let diff = tape.sub(p0, pi);
        let term = if cfg.scalar_norm {
            let sq_sum = tape.row_dot(diff, diff);
            let norm = tape.sqrt(sq_sum);
            let ones = tape.leaf(Mat::filled(idx.len(), k, 1.0));
            tape.mul_col(ones, norm)
        } else {
            tape.abs(diff)
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    let delta = tape.scale(acc.expect("n >= 1"), 1.0 / cfg.n as f64);
    let hot = tape.leaf(one_hot(&labels, k));
    let mia = tape.concat_cols(&[p0, delta, hot]);
    Ok((mia, feats))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackerConfig {
    pub num_classes: usize,
    pub attention: AttentionConfig,
}

impl AttackerConfig {
    pub fn new(num_classes: usize) -> Self {
        AttackerConfig { num_classes, attention: AttentionConfig::default() }
    }

    pub fn input_len(&self) -> usize {
        3 * self.num_classes
    }
}

/// Encoder layer + self-attention stack + sigmoid binary head.
///
/// The 3K input embeds as three tokens (one per block) through row slices
/// of a single 3K×dim encoder weight, giving the attention stack a short
/// sequence whose ordering is fixed by construction.
#[derive(Clone, Debug)]
pub struct AttackerModel {
    pub cfg: AttackerConfig,
    pub store: ParamStore,
}

impl AttackerModel {
    pub fn init(cfg: AttackerConfig, seed: u64) -> Result<Self> {
        cfg.attention.validate()?;
        let k = cfg.num_classes;
        let d = cfg.attention.model_dim;
        let mut rng = seeded(derive_seed(seed, "attacker_init", 0));
        let mut store = ParamStore::new();
        let mut embed = Vec::with_capacity(3 * k * d);
        for _ in 0..3 {
            embed.extend(glorot_uniform(k, d, &mut rng));
        }
        store.add("embed.w", vec![3 * k, d], embed)?;
        store.add("embed.b", vec![d], vec![0.0; d])?;
        init_attention_params(&mut store, "att", &cfg.attention, &mut rng)?;
        store.add("head.w", vec![d, 1], glorot_uniform(d, 1, &mut rng))?;
        store.add("head.b", vec![1], vec![0.0])?;
        Ok(AttackerModel { cfg, store })
    }

    /// Membership probabilities (B×1) for a batch of 3K inputs.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        inputs: ValueId,
        b: &ParamBinding,
    ) -> Result<ValueId> {
        let k = self.cfg.num_classes;
        if tape.value(inputs).cols() != 3 * k {
            return Err(Error::Shape(format!(
                "attacker input width {} != {}",
                tape.value(inputs).cols(),
                3 * k
            )));
        }
        let embed_w = b.id("embed.w");
        let embed_b = b.id("embed.b");
        let mut tokens = Vec::with_capacity(3);
        for t in 0..3 {
            let block = tape.slice_cols(inputs, t * k, (t + 1) * k);
            let w = tape.slice_rows(embed_w, t * k, (t + 1) * k);
            let tok = tape.matmul(block, w);
            tokens.push(tape.add_row(tok, embed_b));
        }
        let stack = mhsa_forward(tape, &tokens, &self.cfg.attention, b, "att")?;
        // mean-pool tokens, then binary head
        let sum01 = tape.add(stack[0], stack[1]);
        let sum = tape.add(sum01, stack[2]);
        let pooled = tape.scale(sum, 1.0 / 3.0);
        let logit = tape.matmul(pooled, b.id("head.w"));
        let logit = tape.add_row(logit, b.id("head.b"));
        Ok(tape.sigmoid(logit))
    }

    pub fn forward(&self, inputs: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let id = tape.leaf(inputs.clone());
        let out = self.forward_on_tape(&mut tape, id, &binding)?;
        Ok(tape.value(out).clone())
    }

    /// Membership probability for one input.
    pub fn score(&self, input: &MiaInput) -> Result<f64> {
        let m = mia_batch(std::slice::from_ref(input))?;
        Ok(self.forward(&m)?.get(0, 0))
    }
}

/// Paired log-likelihood `mean(log a_f) + mean(log(1 − a_v))` as a tape
/// node; the attacker ascends this, the defender descends it.
pub fn attacker_loss_on_tape(tape: &mut Tape, a_f: ValueId, a_v: ValueId) -> ValueId {
    let lf = tape.ln_clamped(a_f, crate::defender::PROB_CLAMP);
    let lf = tape.mean_all(lf);
    let one_minus = tape.scale(a_v, -1.0);
    let one_minus = tape.add_const(one_minus, 1.0);
    let lv = tape.ln_clamped(one_minus, crate::defender::PROB_CLAMP);
    let lv = tape.mean_all(lv);
    tape.add(lf, lv)
}

/// Loss value over two input batches. Mismatched sizes truncate to the
/// smaller side with a warning.
pub fn attacker_loss(
    attacker: &AttackerModel,
    batch_f: &[MiaInput],
    batch_v: &[MiaInput],
) -> Result<f64> {
    if batch_f.is_empty() || batch_v.is_empty() {
        return Err(Error::Eval("attacker loss needs nonempty batches".into()));
    }
    let n = batch_f.len().min(batch_v.len());
    if batch_f.len() != batch_v.len() {
        log::warn!(
            "attacker batches differ in size ({} vs {}); truncating to {n}",
            batch_f.len(),
            batch_v.len()
        );
    }
    let mf = mia_batch(&batch_f[..n])?;
    let mv = mia_batch(&batch_v[..n])?;
    let mut tape = Tape::new();
    let binding = attacker.store.bind(&mut tape);
    let fid = tape.leaf(mf);
    let vid = tape.leaf(mv);
    let af = attacker.forward_on_tape(&mut tape, fid, &binding)?;
    let av = attacker.forward_on_tape(&mut tape, vid, &binding)?;
    let loss = attacker_loss_on_tape(&mut tape, af, av);
    Ok(tape.value(loss).get(0, 0))
}

/// One gradient-ascent step of the attacker on cached member/non-member
/// batches. Returns the loss value before the step.
pub fn attacker_ascent_step(
    attacker: &mut AttackerModel,
    opt: &mut Adam,
    member_batch: &Mat,
    nonmember_batch: &Mat,
) -> Result<f64> {
    let mut tape = Tape::new();
    let binding = attacker.store.bind(&mut tape);
    let fid = tape.leaf(member_batch.clone());
    let vid = tape.leaf(nonmember_batch.clone());
    let af = attacker.forward_on_tape(&mut tape, fid, &binding)?;
    let av = attacker.forward_on_tape(&mut tape, vid, &binding)?;
    let loss = attacker_loss_on_tape(&mut tape, af, av);
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite attacker loss".into()));
    }
    tape.backward(loss);
    attacker.store.zero_grads();
    binding.harvest(&tape, &mut attacker.store);
    // ascend: flip gradients, then take a descent step
    for e in attacker.store.entries_mut() {
        e.grad.iter_mut().for_each(|g| *g = -*g);
    }
    opt.step(&mut attacker.store, None)?;
    Ok(value)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainCfg {
    pub iters: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainCfg {
    fn default() -> Self {
        PretrainCfg { iters: 1000, batch_size: 16, lr: 1e-4 }
    }
}

/// Train the attacker to separate the frozen defender's behavior on member
/// samples from non-members. The defender is never modified; its inputs are
/// cached once since it does not change during pretraining.
pub fn pretrain_attacker(
    attacker: &mut AttackerModel,
    defender: &DefenderModel,
    member_data: &LabeledDataset,
    member_idx: &[usize],
    nonmember_data: &LabeledDataset,
    nonmember_idx: &[usize],
    sens: &SensitivityCfg,
    cfg: &PretrainCfg,
    seed: u64,
) -> Result<()> {
    if cfg.iters == 0 {
        return Ok(());
    }
    let members = mia_inputs(defender, member_data, member_idx, sens, |i| {
        derive_seed(seed, "pretrain_noise_member", i as u64)
    })?;
    let nonmembers = mia_inputs(defender, nonmember_data, nonmember_idx, sens, |i| {
        derive_seed(seed, "pretrain_noise_nonmember", i as u64)
    })?;
    let mut opt = Adam::new(&attacker.store, cfg.lr);
    let mut cycle_m = BatchCycle::new(members.len(), derive_seed(seed, "pretrain_order_m", 0));
    let mut cycle_n = BatchCycle::new(nonmembers.len(), derive_seed(seed, "pretrain_order_n", 0));
    for _ in 0..cfg.iters {
        let mi = cycle_m.take(cfg.batch_size);
        let ni = cycle_n.take(cfg.batch_size);
        let mb = mia_batch(&mi.iter().map(|&i| members[i].clone()).collect::<Vec<_>>())?;
        let nb = mia_batch(&ni.iter().map(|&i| nonmembers[i].clone()).collect::<Vec<_>>())?;
        attacker_ascent_step(attacker, &mut opt, &mb, &nb)?;
    }
    Ok(())
}

/// Endless shuffled-epoch cycle over `0..n`; the smaller of two paired sets
/// simply wraps more often.
pub struct BatchCycle {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchCycle {
    pub fn new(n: usize, seed: u64) -> Self {
        assert!(n > 0, "cannot cycle an empty set");
        let order = shuffled_order(n, derive_seed(seed, "cycle", 0));
        BatchCycle { n, seed, epoch: 0, order, pos: 0 }
    }

    pub fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.pos == self.n {
                self.epoch += 1;
                self.order = shuffled_order(self.n, derive_seed(self.seed, "cycle", self.epoch));
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

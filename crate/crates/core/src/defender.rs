//! The classifier under attack: dense+ReLU encoder, linear head, softmax
//! output, cross-entropy training.

use serde::{Deserialize, Serialize};

use crate::data::{one_hot, shuffled_order, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Mat, ParamBinding, ParamStore, SgdMomentum, Tape, ValueId};
use crate::rng::{derive_seed, seeded};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefenderConfig {
    pub input_dim: usize,
    /// Hidden widths before the feature layer.
    pub hidden: Vec<usize>,
    /// Output width of the encoder (the feature dimension).
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl DefenderConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        DefenderConfig { input_dim, hidden: vec![128], feature_dim: 64, num_classes }
    }

    /// Encoder layer widths including the feature layer.
    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = self.hidden.clone();
        w.push(self.feature_dim);
        w
    }
}

/// Encoder + classification head; forward output is a softmax probability
/// vector per sample.
#[derive(Clone, Debug)]
pub struct DefenderModel {
    pub cfg: DefenderConfig,
    pub store: ParamStore,
}

impl DefenderModel {
    pub fn init(cfg: DefenderConfig, seed: u64) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::Config("defender needs at least 2 classes".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = seeded(derive_seed(seed, "defender_init", 0));
        let mut in_dim = cfg.input_dim;
        for (l, &out_dim) in cfg.encoder_widths().iter().enumerate() {
            store.add(&format!("enc.l{l}.w"), vec![in_dim, out_dim], glorot_uniform(in_dim, out_dim, &mut rng))?;
            store.add(&format!("enc.l{l}.b"), vec![out_dim], vec![0.0; out_dim])?;
            in_dim = out_dim;
        }
        store.add("head.w", vec![cfg.feature_dim, cfg.num_classes], glorot_uniform(cfg.feature_dim, cfg.num_classes, &mut rng))?;
        store.add("head.b", vec![cfg.num_classes], vec![0.0; cfg.num_classes])?;
        Ok(DefenderModel { cfg, store })
    }

    /// Rebuild a model around a loaded checkpoint.
    pub fn from_store(cfg: DefenderConfig, store: ParamStore) -> Result<Self> {
        let expect = 2 * (cfg.encoder_widths().len() + 1);
        if store.num_entries() != expect {
            return Err(Error::Config(format!(
                "checkpoint has {} entries, config wants {expect}",
                store.num_entries()
            )));
        }
        Ok(DefenderModel { cfg, store })
    }

    fn num_encoder_layers(&self) -> usize {
        self.cfg.encoder_widths().len()
    }

    /// Encoder features on a tape (B × feature_dim), before the head.
    pub fn features_on_tape(&self, tape: &mut Tape, x: ValueId, b: &ParamBinding) -> ValueId {
        let mut h = x;
        for l in 0..self.num_encoder_layers() {
            let z = tape.matmul(h, b.id(&format!("enc.l{l}.w")));
            let z = tape.add_row(z, b.id(&format!("enc.l{l}.b")));
            h = tape.relu(z);
        }
        h
    }

    /// Softmax probabilities on a tape, plus the features they came from.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: ValueId,
        b: &ParamBinding,
    ) -> (ValueId, ValueId) {
        let feats = self.features_on_tape(tape, x, b);
        let logits = tape.matmul(feats, b.id("head.w"));
        let logits = tape.add_row(logits, b.id("head.b"));
        (tape.softmax_rows(logits), feats)
    }

    /// Softmax probabilities for a batch (no gradient bookkeeping).
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite defender input".into()));
        }
        if x.cols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "input dim {} != defender input {}",
                x.cols(),
                self.cfg.input_dim
            )));
        }
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let (probs, _) = self.forward_on_tape(&mut tape, xid, &binding);
        Ok(tape.value(probs).clone())
    }

    /// Encoder output for a batch, not centered.
    pub fn features(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "input dim {} != defender input {}",
                x.cols(),
                self.cfg.input_dim
            )));
        }
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let feats = self.features_on_tape(&mut tape, xid, &binding);
        Ok(tape.value(feats).clone())
    }

    /// Argmax class predictions for a batch.
    pub fn predict(&self, x: &Mat) -> Result<Vec<usize>> {
        let probs = self.forward(x)?;
        Ok((0..probs.rows())
            .map(|i| {
                probs
                    .row(i)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap()
            })
            .collect())
    }

    /// Mean cross-entropy of a labeled batch as a scalar tape node.
    pub fn ce_loss_on_tape(
        &self,
        tape: &mut Tape,
        probs: ValueId,
        labels: &[usize],
    ) -> ValueId {
        let targets = tape.leaf(one_hot(labels, self.cfg.num_classes));
        let logp = tape.ln_clamped(probs, PROB_CLAMP);
        let picked = tape.row_dot(targets, logp);
        let mean = tape.mean_all(picked);
        tape.scale(mean, -1.0)
    }

    /// Mean cross-entropy over a batch; gradients are accumulated into the
    /// store's buffers (zeroed first).
    pub fn ce_loss(&mut self, x: &Mat, labels: &[usize]) -> Result<f64> {
        if labels.iter().any(|&l| l >= self.cfg.num_classes) {
            return Err(Error::Config("label out of range".into()));
        }
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let (probs, _) = self.forward_on_tape(&mut tape, xid, &binding);
        let loss = self.ce_loss_on_tape(&mut tape, probs, labels);
        tape.backward(loss);
        self.store.zero_grads();
        binding.harvest(&tape, &mut self.store);
        Ok(tape.value(loss).get(0, 0))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 0.1, momentum: 0.9, batch_size: 32 }
    }
}

/// Supervised cross-entropy training on the given indices, seeded batch
/// order per epoch. Masked positions (if any) stay zero throughout.
pub fn train_classifier(
    model: &mut DefenderModel,
    data: &LabeledDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    mask: Option<&[bool]>,
    seed: u64,
) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Config("cannot train on an empty index set".into()));
    }
    let mut opt = SgdMomentum::new(&model.store, cfg.lr, cfg.momentum);
    for epoch in 0..cfg.epochs {
        let order = shuffled_order(indices.len(), derive_seed(seed, "train_order", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch_idx: Vec<usize> = chunk.iter().map(|&p| indices[p]).collect();
            let (x, y) = data.batch(&batch_idx);
            let loss = model.ce_loss(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
            }
            opt.step(&mut model.store, mask)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::nn::grad_check;

    fn tiny_cfg() -> DefenderConfig {
        DefenderConfig { input_dim: 2, hidden: vec![4], feature_dim: 3, num_classes: 2 }
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut model = DefenderModel::init(
            DefenderConfig { input_dim: 3, hidden: vec![4], feature_dim: 4, num_classes: 10 },
            1,
        )
        .unwrap();
        let hw = model.store.entry_mut("head.w");
        hw.data.iter_mut().for_each(|v| *v = 0.0);
        let x = Mat::row_vec(vec![0.4, -0.2, 1.0]);
        let p = model.forward(&x).unwrap();
        for &v in p.data() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = DefenderModel::init(tiny_cfg(), 2).unwrap();
        let x = Mat::from_rows(&[vec![0.5, -0.5], vec![2.0, 1.0], vec![-3.0, 0.1]]).unwrap();
        let p = model.forward(&x).unwrap();
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn hand_set_single_layer_matches_manual_softmax() {
        // encoder = identity on nonnegative input, head picks coordinates
        let cfg = DefenderConfig { input_dim: 2, hidden: vec![], feature_dim: 2, num_classes: 2 };
        let mut model = DefenderModel::init(cfg, 3).unwrap();
        model.store.entry_mut("enc.l0.w").data.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        model.store.entry_mut("enc.l0.b").data.copy_from_slice(&[0.0, 0.0]);
        model.store.entry_mut("head.w").data.copy_from_slice(&[2.0, -1.0, 0.5, 1.5]);
        model.store.entry_mut("head.b").data.copy_from_slice(&[0.1, -0.3]);
        let x = Mat::row_vec(vec![0.7, 0.2]);
        let p = model.forward(&x).unwrap();
        // logits: [0.7*2 + 0.2*0.5 + 0.1, 0.7*(-1) + 0.2*1.5 - 0.3]
        let l0: f64 = 0.7 * 2.0 + 0.2 * 0.5 + 0.1;
        let l1: f64 = 0.7 * (-1.0) + 0.2 * 1.5 - 0.3;
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let z = e0 + e1;
        assert!((p.get(0, 0) - e0 / z).abs() < 1e-12);
        assert!((p.get(0, 1) - e1 / z).abs() < 1e-12);
    }

    #[test]
    fn uniform_predictions_cost_ln_k() {
        let mut model = DefenderModel::init(
            DefenderConfig { input_dim: 2, hidden: vec![3], feature_dim: 3, num_classes: 10 },
            4,
        )
        .unwrap();
        model.store.entry_mut("head.w").data.iter_mut().for_each(|v| *v = 0.0);
        let x = Mat::from_rows(&[vec![0.1, 0.2], vec![-0.4, 1.0]]).unwrap();
        let loss = model.ce_loss(&x, &[3, 7]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let cfg = DefenderConfig { input_dim: 2, hidden: vec![], feature_dim: 2, num_classes: 2 };
        let mut model = DefenderModel::init(cfg, 5).unwrap();
        model.store.entry_mut("enc.l0.w").data.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        model.store.entry_mut("head.w").data.copy_from_slice(&[60.0, 0.0, 0.0, 60.0]);
        model.store.entry_mut("head.b").data.copy_from_slice(&[0.0, 0.0]);
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let loss = model.ce_loss(&x, &[0, 1]).unwrap();
        assert!(loss <= 1e-10, "loss {loss}");
    }

    #[test]
    fn identity_encoder_passes_features_through() {
        let cfg = DefenderConfig { input_dim: 3, hidden: vec![3], feature_dim: 3, num_classes: 2 };
        let mut model = DefenderModel::init(cfg, 6).unwrap();
        for l in 0..2 {
            let w = model.store.entry_mut(&format!("enc.l{l}.w"));
            w.data.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        let x = Mat::row_vec(vec![0.5, 2.0, 0.0]);
        let f = model.features(&x).unwrap();
        assert_eq!(f.data(), x.data());
    }

    #[test]
    fn feature_shape_contract() {
        let cfg = DefenderConfig { input_dim: 4, hidden: vec![8], feature_dim: 16, num_classes: 3 };
        let model = DefenderModel::init(cfg, 7).unwrap();
        let x = Mat::zeros(8, 4);
        assert_eq!(model.features(&x).unwrap().shape(), (8, 16));
    }

    #[test]
    fn head_of_features_equals_forward() {
        let model = DefenderModel::init(tiny_cfg(), 8).unwrap();
        let x = Mat::from_rows(&[vec![0.3, -0.8], vec![1.1, 0.4]]).unwrap();
        let feats = model.features(&x).unwrap();
        let probs = model.forward(&x).unwrap();
        // softmax(head(features)) recomputed through the same tape ops
        let mut tape = Tape::new();
        let binding = model.store.bind(&mut tape);
        let fid = tape.leaf(feats);
        let logits = tape.matmul(fid, binding.id("head.w"));
        let logits = tape.add_row(logits, binding.id("head.b"));
        let p2 = tape.softmax_rows(logits);
        assert_eq!(tape.value(p2).data(), probs.data());
    }

    #[test]
    fn ce_gradient_wrt_logits_is_p_minus_y() {
        // one linear layer straight to softmax: d loss / d b = mean(p - y)
        let cfg = DefenderConfig { input_dim: 2, hidden: vec![], feature_dim: 2, num_classes: 3 };
        let mut model = DefenderModel::init(cfg, 9).unwrap();
        // make encoder identity-ish irrelevant: zero it so features = relu(0) = 0,
        // logits = head.b exactly
        model.store.entry_mut("enc.l0.w").data.iter_mut().for_each(|v| *v = 0.0);
        model.store.entry_mut("head.b").data.copy_from_slice(&[0.2, -0.1, 0.4]);
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let labels = [2usize, 0];
        model.ce_loss(&x, &labels).unwrap();
        let probs = model.forward(&x).unwrap();
        let y = one_hot(&labels, 3);
        let grad_b = &model.store.entry("head.b").grad;
        for j in 0..3 {
            let expect: f64 =
                (0..2).map(|i| (probs.get(i, j) - y.get(i, j)) / 2.0).sum();
            assert!((grad_b[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_grad_check_on_random_batch() {
        let mut model = DefenderModel::init(
            DefenderConfig { input_dim: 3, hidden: vec![5], feature_dim: 4, num_classes: 3 },
            10,
        )
        .unwrap();
        let x = Mat::from_vec(4, 3, crate::data::uniform_draws(12, -1.0, 1.0, 77)).unwrap();
        let labels = vec![0usize, 2, 1, 1];
        model.ce_loss(&x, &labels).unwrap();
        let cfg = model.cfg.clone();
        let xc = x.clone();
        let lc = labels.clone();
        let err = grad_check(&mut model.store, 1e-5, |s| {
            let m = DefenderModel { cfg: cfg.clone(), store: s.clone() };
            let mut tape = Tape::new();
            let b = m.store.bind(&mut tape);
            let xid = tape.leaf(xc.clone());
            let (p, _) = m.forward_on_tape(&mut tape, xid, &b);
            let loss = m.ce_loss_on_tape(&mut tape, p, &lc);
            tape.value(loss).get(0, 0)
        })
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let model = DefenderModel::init(tiny_cfg(), 11).unwrap();
        let x = Mat::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(model.forward(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn training_fits_separable_blobs() {
        let data = gen_synthetic(3, 40, 4, 0.4, 20).unwrap();
        let mut model = DefenderModel::init(
            DefenderConfig { input_dim: 4, hidden: vec![16], feature_dim: 8, num_classes: 3 },
            21,
        )
        .unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let cfg = TrainConfig { epochs: 20, lr: 0.05, momentum: 0.9, batch_size: 16 };
        train_classifier(&mut model, &data, &idx, &cfg, None, 22).unwrap();
        let (x, y) = data.batch(&idx);
        let preds = model.predict(&x).unwrap();
        let correct = preds.iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / y.len() as f64 >= 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let data = gen_synthetic(2, 20, 3, 0.4, 30).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let cfg = TrainConfig { epochs: 3, lr: 0.05, momentum: 0.9, batch_size: 8 };
        let mut m1 = DefenderModel::init(DefenderConfig::new(3, 2), 31).unwrap();
        let mut m2 = DefenderModel::init(DefenderConfig::new(3, 2), 31).unwrap();
        train_classifier(&mut m1, &data, &idx, &cfg, None, 32).unwrap();
        train_classifier(&mut m2, &data, &idx, &cfg, None, 32).unwrap();
        assert!(m1.store.bits_equal(&m2.store));
    }
}

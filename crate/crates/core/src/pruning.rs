//! One-shot magnitude pruning: a fixed global mask over prunable weights,
//! enforced by the optimizers for the rest of a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// One bit per parameter in flat store order; `false` means pruned.
/// Bias entries are never pruned.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparsityMask {
    bits: Vec<bool>,
    pub sparsity: f64,
}

impl SparsityMask {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn num_zeroed(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }
}

/// Keep the `⌈(1−sparsity)·M⌉` largest-magnitude prunable weights globally;
/// ties break toward the lower flat index. Biases stay unmasked.
pub fn omp_mask(store: &ParamStore, sparsity: f64) -> Result<SparsityMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let total = store.total_len();
    let mut bits = vec![true; total];
    if sparsity == 0.0 {
        return Ok(SparsityMask { bits, sparsity });
    }

    // (magnitude, flat index) over prunable entries only
    let mut prunable: Vec<(f64, usize)> = Vec::new();
    let mut off = 0;
    for e in store.entries() {
        if e.is_prunable() {
            for (i, &v) in e.data.iter().enumerate() {
                prunable.push((v.abs(), off + i));
            }
        }
        off += e.data.len();
    }
    let m = prunable.len();
    // ⌈(1−s)·M⌉ with a nudge so representation noise (e.g. 1−0.95) cannot
    // bump an exact integer count up by one
    let keep = (((1.0 - sparsity) * m as f64) - 1e-9).ceil().max(0.0) as usize;
    prunable.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, flat) in &prunable[keep..] {
        bits[flat] = false;
    }
    Ok(SparsityMask { bits, sparsity })
}

/// Zero out masked weights. The mask must afterwards be handed to the
/// optimizer so training steps keep those positions at zero.
pub fn apply_mask(store: &mut ParamStore, mask: &SparsityMask) -> Result<()> {
    if mask.len() != store.total_len() {
        return Err(Error::Shape(format!(
            "mask length {} != parameter count {}",
            mask.len(),
            store.total_len()
        )));
    }
    let mut off = 0;
    for e in store.entries_mut() {
        for (i, v) in e.data.iter_mut().enumerate() {
            if !mask.bits[off + i] {
                *v = 0.0;
            }
        }
        off += e.data.len();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::uniform_draws;
    use crate::nn::SgdMomentum;

    fn store_with_weights(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("w", vec![1, n], values).unwrap();
        s.add("b", vec![2], vec![0.5, -0.5]).unwrap();
        s
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let s = store_with_weights(vec![0.1, -5.0, 3.0, 0.2]);
        let mask = omp_mask(&s, 0.0).unwrap();
        assert!(mask.bits().iter().all(|&b| b));
        assert_eq!(mask.num_zeroed(), 0);
    }

    #[test]
    fn half_sparsity_keeps_two_largest() {
        // weights [0.1, −5, 3, 0.2], sparsity 0.5 → keep |−5| and |3|
        let s = store_with_weights(vec![0.1, -5.0, 3.0, 0.2]);
        let mask = omp_mask(&s, 0.5).unwrap();
        assert_eq!(&mask.bits()[..4], &[false, true, true, false]);
        // biases untouched
        assert_eq!(&mask.bits()[4..], &[true, true]);
    }

    #[test]
    fn sparsity_95_on_10k_keeps_exactly_500() {
        let mut s = ParamStore::new();
        s.add("w", vec![100, 100], uniform_draws(10_000, -1.0, 1.0, 1)).unwrap();
        let mask = omp_mask(&s, 0.95).unwrap();
        let kept = mask.bits().iter().filter(|&&b| b).count();
        assert_eq!(kept, 500);
        assert_eq!(mask.num_zeroed(), 9_500);
    }

    #[test]
    fn kept_set_matches_independent_sort_oracle() {
        let weights = uniform_draws(600, -2.0, 2.0, 2);
        let mut s = ParamStore::new();
        s.add("w", vec![20, 30], weights.clone()).unwrap();
        let mask = omp_mask(&s, 0.8).unwrap();

        // oracle: sort (|w|, idx) descending, keep the top ceil(0.2*600)
        let mut ranked: Vec<(f64, usize)> =
            weights.iter().enumerate().map(|(i, &v)| (v.abs(), i)).collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let keep = (0.2f64 * 600.0).ceil() as usize;
        let mut expect = vec![false; 600];
        for &(_, i) in &ranked[..keep] {
            expect[i] = true;
        }
        assert_eq!(mask.bits(), expect.as_slice());
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let s = store_with_weights(vec![1.0, 1.0, 1.0, 1.0]);
        let mask = omp_mask(&s, 0.5).unwrap();
        assert_eq!(&mask.bits()[..4], &[true, true, false, false]);
    }

    #[test]
    fn apply_mask_zeroes_and_is_idempotent() {
        let mut s = store_with_weights(vec![0.1, -5.0, 3.0, 0.2]);
        let mask = omp_mask(&s, 0.5).unwrap();
        apply_mask(&mut s, &mask).unwrap();
        assert_eq!(s.entry("w").data, vec![0.0, -5.0, 3.0, 0.0]);
        assert_eq!(s.entry("b").data, vec![0.5, -0.5]);
        let snapshot = s.flat_values();
        apply_mask(&mut s, &mask).unwrap();
        assert_eq!(s.flat_values(), snapshot);
    }

    #[test]
    fn mask_shape_mismatch_rejected() {
        let mut s = store_with_weights(vec![1.0, 2.0]);
        let other = store_with_weights(vec![1.0, 2.0, 3.0, 4.0]);
        let mask = omp_mask(&other, 0.5).unwrap();
        assert!(matches!(apply_mask(&mut s, &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn zeros_survive_masked_training_steps() {
        let mut s = store_with_weights(uniform_draws(40, -1.0, 1.0, 3));
        let mask = omp_mask(&s, 0.6).unwrap();
        apply_mask(&mut s, &mask).unwrap();
        let mut opt = SgdMomentum::new(&s, 0.05, 0.9);
        for step in 0..100 {
            let grads = uniform_draws(s.total_len(), -1.0, 1.0, 100 + step);
            s.set_flat_grads(&grads).unwrap();
            opt.step(&mut s, Some(mask.bits())).unwrap();
        }
        let flat = s.flat_values();
        for (i, &bit) in mask.bits().iter().enumerate() {
            if !bit {
                assert_eq!(flat[i], 0.0, "position {i} drifted from zero");
            }
        }
    }
}

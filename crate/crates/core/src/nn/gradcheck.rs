//! Finite-difference gradient verification.

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Compare the gradients already stored in `store` against central finite
/// differences of `loss_fn`, returning the max relative error
/// `|analytic − fd| / max(1, |fd|)` over all parameters.
///
/// `loss_fn` must be deterministic; `eps` in [1e-7, 1e-3].
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut loss_fn: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!((1e-7..=1e-3).contains(&eps), "eps {eps} outside [1e-7, 1e-3]");
    let analytic = store.flat_grads();
    let mut flat = store.flat_values();
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + eps;
        store.set_flat_values(&flat)?;
        let up = loss_fn(store);
        flat[i] = orig - eps;
        store.set_flat_values(&flat)?;
        let down = loss_fn(store);
        flat[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            store.set_flat_values(&flat)?;
            return Err(Error::Numeric(format!("non-finite loss while probing parameter {i}")));
        }
        let fd = (up - down) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
    }
    store.set_flat_values(&flat)?;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use crate::nn::tensor::Mat;

    #[test]
    fn quadratic_matches_to_1e9() {
        // loss = Σθ², θ=[1,2] → analytic grad [2,4]
        let mut store = ParamStore::new();
        store.add("theta", vec![2], vec![1.0, 2.0]).unwrap();
        store.entry_mut("theta").grad.copy_from_slice(&[2.0, 4.0]);
        let err = grad_check(&mut store, 1e-5, |s| {
            s.entry("theta").data.iter().map(|v| v * v).sum()
        })
        .unwrap();
        assert!(err <= 1e-9, "rel err {err}");
    }

    #[test]
    fn tape_quadratic_via_backward() {
        let mut store = ParamStore::new();
        store.add("theta", vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let th = binding.id("theta");
        let sq = tape.mul(th, th);
        let loss = tape.sum_all(sq);
        tape.backward(loss);
        store.zero_grads();
        binding.harvest(&tape, &mut store);
        let err = grad_check(&mut store, 1e-5, |s| {
            s.entry("theta").data.iter().map(|v| v * v).sum()
        })
        .unwrap();
        assert!(err <= 1e-9, "rel err {err}");
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        // ln goes NaN on the negative side of the probe
        let mut store = ParamStore::new();
        store.add("theta", vec![1], vec![0.0]).unwrap();
        let r = grad_check(&mut store, 1e-5, |s| s.entry("theta").data[0].ln());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn probing_restores_values() {
        let mut store = ParamStore::new();
        store.add("theta", vec![2], vec![1.0, 2.0]).unwrap();
        let before = store.flat_values();
        let _ = grad_check(&mut store, 1e-4, |s| s.entry("theta").data.iter().sum());
        assert_eq!(store.flat_values(), before);
    }

    #[test]
    fn dense_net_cross_entropy_matches() {
        // 2-layer dense net, one sample, CE against class 1
        let mut store = ParamStore::new();
        let mut rng = crate::rng::seeded(11);
        use rand::Rng;
        let mut randv = |n: usize| (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect::<Vec<f64>>();
        store.add("w1", vec![3, 4], randv(12)).unwrap();
        store.add("b1", vec![4], randv(4)).unwrap();
        store.add("w2", vec![4, 2], randv(8)).unwrap();
        store.add("b2", vec![2], randv(2)).unwrap();
        let x = vec![0.3, -0.7, 1.1];

        let eval = |s: &ParamStore| -> f64 {
            let mut t = Tape::new();
            let b = s.bind(&mut t);
            let xin = t.leaf(Mat::row_vec(x.clone()));
            let h = t.matmul(xin, b.id("w1"));
            let h = t.add_row(h, b.id("b1"));
            let h = t.relu(h);
            let o = t.matmul(h, b.id("w2"));
            let o = t.add_row(o, b.id("b2"));
            let p = t.softmax_rows(o);
            let lp = t.ln_clamped(p, 1e-12);
            let y = t.leaf(Mat::row_vec(vec![0.0, 1.0]));
            let picked = t.row_dot(y, lp);
            let m = t.mean_all(picked);
            let loss = t.scale(m, -1.0);
            t.value(loss).get(0, 0)
        };

        // analytic grads through the same construction
        {
            let mut t = Tape::new();
            let b = store.bind(&mut t);
            let xin = t.leaf(Mat::row_vec(x.clone()));
            let h = t.matmul(xin, b.id("w1"));
            let h = t.add_row(h, b.id("b1"));
            let h = t.relu(h);
            let o = t.matmul(h, b.id("w2"));
            let o = t.add_row(o, b.id("b2"));
            let p = t.softmax_rows(o);
            let lp = t.ln_clamped(p, 1e-12);
            let y = t.leaf(Mat::row_vec(vec![0.0, 1.0]));
            let picked = t.row_dot(y, lp);
            let m = t.mean_all(picked);
            let loss = t.scale(m, -1.0);
            t.backward(loss);
            store.zero_grads();
            b.harvest(&t, &mut store);
        }
        let err = grad_check(&mut store, 1e-5, eval).unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }
}

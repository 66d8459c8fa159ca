//! Redundancy-reduction regularizer: mean-centered cross-correlation
//! between two feature batches, pushed toward the identity matrix.

use crate::error::{Error, Result};
use crate::nn::{Mat, Tape, ValueId};

pub const DENOM_GUARD: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 5e-3;

/// D×D cross-correlation between per-column-centered feature batches.
#[derive(Clone, Debug)]
pub struct CrossCorr {
    pub c: Mat,
    pub batch_size: usize,
}

fn center_columns(z: &Mat) -> Mat {
    let mut out = z.clone();
    let m = z.rows() as f64;
    for j in 0..z.cols() {
        let mean: f64 = (0..z.rows()).map(|i| z.get(i, j)).sum::<f64>() / m;
        for i in 0..z.rows() {
            out.set(i, j, z.get(i, j) - mean);
        }
    }
    out
}

/// `C_ij = Σ_b zf_{b,i}·zv_{b,j} / (‖zf_·i‖·‖zv_·j‖ + guard)` with both
/// batches column-centered first.
pub fn cross_correlation(z_f: &Mat, z_v: &Mat) -> Result<CrossCorr> {
    if z_f.shape() != z_v.shape() {
        return Err(Error::Shape(format!(
            "feature batches differ: {:?} vs {:?}",
            z_f.shape(),
            z_v.shape()
        )));
    }
    if z_f.rows() < 2 {
        return Err(Error::Config("cross-correlation needs batch size >= 2".into()));
    }
    let zf = center_columns(z_f);
    let zv = center_columns(z_v);
    let d = zf.cols();
    let col_norm = |z: &Mat, j: usize| -> f64 {
        (0..z.rows()).map(|i| z.get(i, j) * z.get(i, j)).sum::<f64>().sqrt()
    };
    let nf: Vec<f64> = (0..d).map(|j| col_norm(&zf, j)).collect();
    let nv: Vec<f64> = (0..d).map(|j| col_norm(&zv, j)).collect();
    if nf.iter().chain(&nv).any(|&v| v <= DENOM_GUARD) {
        log::warn!("zero-variance feature column in cross-correlation; entries guarded near 0");
    }
    let numer = zf.transpose().matmul(&zv);
    let mut c = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            c.set(i, j, numer.get(i, j) / (nf[i] * nv[j] + DENOM_GUARD));
        }
    }
    Ok(CrossCorr { c, batch_size: z_f.rows() })
}

/// `Σ_i (1 − C_ii)² + λ·Σ_{i≠j} C_ij²`.
pub fn ss_loss_value(corr: &CrossCorr, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let d = corr.c.rows();
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = corr.c.get(i, j);
            if i == j {
                invariance += (1.0 - v) * (1.0 - v);
            } else {
                redundancy += v * v;
            }
        }
    }
    invariance + lambda * redundancy
}

/// The loss as a scalar tape node starting from raw feature batches;
/// gradients flow through centering and normalization into both inputs.
pub fn ss_loss_on_tape(tape: &mut Tape, z_f: ValueId, z_v: ValueId, lambda: f64) -> ValueId {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let d = tape.value(z_f).cols();
    assert_eq!(tape.value(z_f).shape(), tape.value(z_v).shape(), "feature batch shapes differ");
    assert!(tape.value(z_f).rows() >= 2, "cross-correlation needs batch size >= 2");

    let center = |tape: &mut Tape, z: ValueId| -> ValueId {
        let mean = tape.mean_axis0(z);
        let neg_mean = tape.scale(mean, -1.0);
        tape.add_row(z, neg_mean)
    };
    let zf = center(tape, z_f);
    let zv = center(tape, z_v);

    let col_norms = |tape: &mut Tape, z: ValueId| -> ValueId {
        let sq = tape.mul(z, z);
        let sums = tape.sum_axis0(sq);
        tape.sqrt(sums)
    };
    let nf = col_norms(tape, zf);
    let nv = col_norms(tape, zv);

    let zf_t = tape.transpose(zf);
    let numer = tape.matmul(zf_t, zv);
    let nf_col = tape.transpose(nf);
    let denom = tape.matmul(nf_col, nv);
    let denom = tape.add_const(denom, DENOM_GUARD);
    let c = tape.div(numer, denom);

    let eye = tape.leaf(Mat::eye(d));
    let off_mask = tape.leaf({
        let mut m = Mat::filled(d, d, 1.0);
        for i in 0..d {
            m.set(i, i, 0.0);
        }
        m
    });
    let diag_err = tape.sub(eye, c);
    let diag_err = tape.mul(diag_err, eye);
    let diag_sq = tape.mul(diag_err, diag_err);
    let invariance = tape.sum_all(diag_sq);
    let off = tape.mul(c, off_mask);
    let off_sq = tape.mul(off, off);
    let redundancy = tape.sum_all(off_sq);
    let redundancy = tape.scale(redundancy, lambda);
    tape.add(invariance, redundancy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::uniform_draws;
    use crate::nn::{grad_check, ParamStore};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Mat {
        Mat::from_vec(rows, cols, uniform_draws(rows * cols, -1.0, 1.0, seed)).unwrap()
    }

    #[test]
    fn identical_batches_have_unit_diagonal() {
        let z = random_batch(6, 5, 1);
        let corr = cross_correlation(&z, &z).unwrap();
        for i in 0..5 {
            assert!((corr.c.get(i, i) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn two_sample_single_dim_hand_case() {
        // zf = [1, −1], zv = [2, −2] (already centered): C = 4/(√2·√8) = 1
        let zf = Mat::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let zv = Mat::from_vec(2, 1, vec![2.0, -2.0]).unwrap();
        let corr = cross_correlation(&zf, &zv).unwrap();
        assert!((corr.c.get(0, 0) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn negated_column_anticorrelates() {
        let z = random_batch(6, 4, 2);
        let neg = z.map(|v| -v);
        let corr = cross_correlation(&z, &neg).unwrap();
        for i in 0..4 {
            assert!((corr.c.get(i, i) + 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn identity_correlation_has_zero_loss() {
        let corr = CrossCorr { c: Mat::eye(7), batch_size: 4 };
        assert_eq!(ss_loss_value(&corr, DEFAULT_LAMBDA), 0.0);
    }

    #[test]
    fn loss_matches_direct_evaluation() {
        // C = [[0.5, 0.2], [0.1, 1.0]], λ = 5e-3 → 0.25 + 0.005·0.05 = 0.25025
        let c = Mat::from_vec(2, 2, vec![0.5, 0.2, 0.1, 1.0]).unwrap();
        let corr = CrossCorr { c, batch_size: 2 };
        let loss = ss_loss_value(&corr, 5e-3);
        assert!((loss - 0.25025).abs() < 1e-15, "loss {loss}");
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let zf = random_batch(8, 6, 3);
        let zv = random_batch(8, 6, 4);
        let direct = ss_loss_value(&cross_correlation(&zf, &zv).unwrap(), DEFAULT_LAMBDA);
        let mut tape = Tape::new();
        let f = tape.leaf(zf);
        let v = tape.leaf(zv);
        let loss = ss_loss_on_tape(&mut tape, f, v, DEFAULT_LAMBDA);
        assert!((tape.value(loss).get(0, 0) - direct).abs() < 1e-12);
    }

    #[test]
    fn end_to_end_grad_check_through_centering_and_normalization() {
        let mut store = ParamStore::new();
        store.add("zf", vec![8, 16], uniform_draws(128, -1.0, 1.0, 5)).unwrap();
        store.add("zv", vec![8, 16], uniform_draws(128, -1.0, 1.0, 6)).unwrap();
        {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let loss =
                ss_loss_on_tape(&mut tape, binding.id("zf"), binding.id("zv"), DEFAULT_LAMBDA);
            tape.backward(loss);
            store.zero_grads();
            binding.harvest(&tape, &mut store);
        }
        let err = grad_check(&mut store, 1e-5, |s| {
            let mut tape = Tape::new();
            let zf = tape.leaf(s.entry("zf").as_mat());
            let zv = tape.leaf(s.entry("zv").as_mat());
            let loss = ss_loss_on_tape(&mut tape, zf, zv, DEFAULT_LAMBDA);
            tape.value(loss).get(0, 0)
        })
        .unwrap();
        assert!(err <= 1e-5, "rel err {err}");
    }

    #[test]
    fn scale_invariance_per_column() {
        let zf = random_batch(6, 4, 7);
        let zv = random_batch(6, 4, 8);
        let base = ss_loss_value(&cross_correlation(&zf, &zv).unwrap(), DEFAULT_LAMBDA);
        // multiply column 2 of BOTH batches by the same positive constant
        let scale_col = |z: &Mat, col: usize, k: f64| -> Mat {
            let mut out = z.clone();
            for i in 0..z.rows() {
                out.set(i, col, z.get(i, col) * k);
            }
            out
        };
        let scaled = ss_loss_value(
            &cross_correlation(&scale_col(&zf, 2, 3.7), &scale_col(&zv, 2, 3.7)).unwrap(),
            DEFAULT_LAMBDA,
        );
        assert!((scaled - base).abs() <= 1e-9, "{scaled} vs {base}");
    }

    #[test]
    fn shift_invariance_per_column() {
        let zf = random_batch(6, 4, 9);
        let zv = random_batch(6, 4, 10);
        let base = ss_loss_value(&cross_correlation(&zf, &zv).unwrap(), DEFAULT_LAMBDA);
        let shift_col = |z: &Mat, col: usize, c: f64| -> Mat {
            let mut out = z.clone();
            for i in 0..z.rows() {
                out.set(i, col, z.get(i, col) + c);
            }
            out
        };
        let shifted = ss_loss_value(
            &cross_correlation(&shift_col(&zf, 1, 5.0), &zv).unwrap(),
            DEFAULT_LAMBDA,
        );
        assert!((shifted - base).abs() <= 1e-9, "{shifted} vs {base}");
    }

    #[test]
    fn zero_variance_column_is_guarded() {
        let mut zf = random_batch(4, 3, 11);
        for i in 0..4 {
            zf.set(i, 1, 0.25); // constant column: zero variance after centering
        }
        let zv = random_batch(4, 3, 12);
        let corr = cross_correlation(&zf, &zv).unwrap();
        for j in 0..3 {
            assert!(corr.c.get(1, j).abs() < 1e-9);
            assert!(corr.c.get(1, j).is_finite());
        }
    }

    #[test]
    fn loss_nonnegative_and_zero_only_at_identity() {
        for seed in 0..5 {
            let zf = random_batch(5, 3, 100 + seed);
            let zv = random_batch(5, 3, 200 + seed);
            let corr = cross_correlation(&zf, &zv).unwrap();
            let loss = ss_loss_value(&corr, DEFAULT_LAMBDA);
            assert!(loss >= 0.0);
            if loss == 0.0 {
                for i in 0..3 {
                    for j in 0..3 {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert_eq!(corr.c.get(i, j), expect);
                    }
                }
            }
        }
    }
}

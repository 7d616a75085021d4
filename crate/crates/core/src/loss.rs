//! Focal loss over softmax outputs, with its exact gradient with respect to
//! the logits.
//!
//! For one sample with true class `k`, predicted probability `p = P_k` and
//! class weight `w`:
//!
//! ```text
//! L     = -w · (1 - p)^γ · ln p
//! dL/dp = w · (γ (1 - p)^(γ-1) ln p - (1 - p)^γ / p)
//! dL/dz_j = (dL/dp · p) · (δ_kj - p_j)
//! ```
//!
//! The last line is the softmax Jacobian `dp/dz_j = p (δ_kj - p_j)` folded
//! in. With `γ = 0` it collapses to the familiar `p_j - δ_kj`. The batch
//! loss and gradient are means over rows.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to this floor before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// How far a probability row may drift from summing to one.
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FocalLossConfig {
    /// Focusing exponent on `(1 - P)`.
    pub gamma: f64,
    /// Per-class weights, one per class.
    pub class_weights: Vec<f64>,
}

impl FocalLossConfig {
    pub fn new(gamma: f64, classes: usize) -> Self {
        Self {
            gamma,
            class_weights: vec![1.0; classes],
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(
                "focal_loss",
                format!("gamma must be finite and >= 0, got {}", self.gamma),
            ));
        }
        if self.class_weights.len() != classes {
            return Err(Error::invalid(
                "focal_loss",
                format!(
                    "{} class weights for {classes} classes",
                    self.class_weights.len()
                ),
            ));
        }
        if let Some(w) = self.class_weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "focal_loss",
                format!("class weights must be positive, got {w}"),
            ));
        }
        Ok(())
    }
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self::new(2.0, 2)
    }
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros([labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(
                "one_hot",
                format!("label {l} out of range for {classes} classes"),
            ));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

/// Validates shapes and row contents; returns the true class of every row.
fn true_classes<T: Real>(probs: &Tensor<T>, one_hot: &Tensor<T>, op: &'static str) -> Result<Vec<usize>> {
    let (n, c) = probs.dims2(op)?;
    if one_hot.shape() != probs.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: probs.shape().to_vec(),
            right: one_hot.shape().to_vec(),
        });
    }
    if n == 0 || c == 0 {
        return Err(Error::invalid(op, "empty batch"));
    }
    let mut classes = Vec::with_capacity(n);
    for (row, (p, y)) in probs
        .data()
        .chunks_exact(c)
        .zip(one_hot.data().chunks_exact(c))
        .enumerate()
    {
        let sum: f64 = p.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || p.iter().any(|v| !(v.as_f64() >= 0.0)) {
            return Err(Error::invalid(
                op,
                format!("row {row} is not a probability vector (sum {sum})"),
            ));
        }
        let ones = y.iter().filter(|&&v| v == T::one()).count();
        let zeros = y.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::invalid(op, format!("row {row} is not one-hot")));
        }
        classes.push(y.iter().position(|&v| v == T::one()).unwrap());
    }
    Ok(classes)
}

/// Mean focal loss and its gradient with respect to the pre-softmax logits.
pub fn focal_loss<T: Real>(
    probs: &Tensor<T>,
    one_hot: &Tensor<T>,
    cfg: &FocalLossConfig,
) -> Result<(T, Tensor<T>)> {
    let classes = true_classes(probs, one_hot, "focal_loss")?;
    let (n, c) = probs.dims2("focal_loss")?;
    cfg.validate(c)?;

    let gamma = T::of(cfg.gamma);
    let inv_n = T::one() / T::of(n as f64);
    let floor = T::of(LOG_CLAMP);
    let mut total = T::zero();
    let mut grad = Tensor::zeros([n, c]);

    for ((p_row, g_row), &k) in probs
        .data()
        .chunks_exact(c)
        .zip(grad.data_mut().chunks_exact_mut(c))
        .zip(&classes)
    {
        let w = T::of(cfg.class_weights[k]);
        let p = p_row[k].max(floor);
        let q = T::one() - p;
        let ln_p = p.ln();
        let focus = if cfg.gamma == 0.0 { T::one() } else { q.powf(gamma) };
        total = total - w * focus * ln_p;

        // dL/dp · p, with the γ-term's limit at p → 1 taken as 0.
        let gamma_term = if cfg.gamma == 0.0 || q <= T::zero() {
            T::zero()
        } else {
            gamma * p * q.powf(gamma - T::one()) * ln_p
        };
        let scale = w * (gamma_term - focus) * inv_n;
        for (j, (g, &pj)) in g_row.iter_mut().zip(p_row).enumerate() {
            let delta = if j == k { T::one() } else { T::zero() };
            *g = scale * (delta - pj);
        }
    }
    Ok((total * inv_n, grad))
}

/// Mean categorical cross-entropy, `-mean(ln P_k)` with the same log clamp.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<T> {
    let classes = true_classes(probs, one_hot, "cross_entropy")?;
    let (n, c) = probs.dims2("cross_entropy")?;
    let floor = T::of(LOG_CLAMP);
    let sum = probs
        .data()
        .chunks_exact(c)
        .zip(&classes)
        .fold(T::zero(), |acc, (row, &k)| acc - row[k].max(floor).ln());
    Ok(sum / T::of(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax;
    use crate::rng::SeededRng;

    fn probs(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_f64([rows.len(), 2], &rows.concat()).unwrap()
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let p = probs(&[[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]]);
        let y = one_hot::<f64>(&[1, 0, 1], 2).unwrap();
        let (focal, _) = focal_loss(&p, &y, &FocalLossConfig::new(0.0, 2)).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        assert!((focal - ce).abs() < 1e-12);
    }

    #[test]
    fn certain_predictions_cost_nothing() {
        let p = probs(&[[1.0, 0.0], [0.0, 1.0]]);
        let y = one_hot::<f64>(&[0, 1], 2).unwrap();
        let (loss, grad) = focal_loss(&p, &y, &FocalLossConfig::new(2.0, 2)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_example() {
        let p = probs(&[[0.5, 0.5]]);
        let y = one_hot::<f64>(&[0], 2).unwrap();
        let (loss, _) = focal_loss(&p, &y, &FocalLossConfig::new(2.0, 2)).unwrap();
        let expected = 0.25 * 2f64.ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn class_weight_scales_loss() {
        let p = probs(&[[0.2, 0.8]]);
        let y = one_hot::<f64>(&[1], 2).unwrap();
        let base = focal_loss(&p, &y, &FocalLossConfig::new(2.0, 2)).unwrap().0;
        let cfg = FocalLossConfig {
            gamma: 2.0,
            class_weights: vec![1.0, 3.0],
        };
        let weighted = focal_loss(&p, &y, &cfg).unwrap().0;
        assert!((weighted - 3.0 * base).abs() < 1e-15);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let cfg = FocalLossConfig::new(2.0, 2);
        let y = one_hot::<f64>(&[0], 2).unwrap();
        assert!(focal_loss(&probs(&[[0.5, 0.6]]), &y, &cfg).is_err());
        let two_hot = Tensor::from_f64([1, 2], &[1.0, 1.0]).unwrap();
        assert!(focal_loss(&probs(&[[0.5, 0.5]]), &two_hot, &cfg).is_err());
        let not_hot = Tensor::from_f64([1, 2], &[0.5, 0.5]).unwrap();
        assert!(focal_loss(&probs(&[[0.5, 0.5]]), &not_hot, &cfg).is_err());
        assert!(focal_loss(&probs(&[[0.5, 0.5]]), &y, &FocalLossConfig::new(-1.0, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_through_softmax() {
        let mut rng = SeededRng::new(21);
        for gamma in [0.0, 0.5, 2.0, 10.0] {
            let cfg = FocalLossConfig::new(gamma, 2);
            for n in 1..=4 {
                let logits: Vec<f64> = (0..n * 2).map(|_| 2.0 * rng.standard_normal()).collect();
                let labels: Vec<usize> = (0..n).map(|_| rng.below(2) as usize).collect();
                let y = one_hot::<f64>(&labels, 2).unwrap();
                let z = Tensor::new([n, 2], logits.clone()).unwrap();
                let (_, grad) = focal_loss(&softmax(&z).unwrap(), &y, &cfg).unwrap();

                let loss_at = |v: &[f64]| {
                    let z = Tensor::new([n, 2], v.to_vec()).unwrap();
                    focal_loss(&softmax(&z).unwrap(), &y, &cfg).unwrap().0
                };
                for i in 0..n * 2 {
                    let h = 1e-5 * logits[i].abs().max(1.0);
                    let mut up = logits.clone();
                    up[i] += h;
                    let mut dn = logits.clone();
                    dn[i] -= h;
                    let numeric = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
                    let analytic = grad.data()[i];
                    let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(err < 1e-5, "gamma {gamma} n {n} i {i}: {analytic} vs {numeric}");
                }
            }
        }
    }
}

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LR: f64 = 0.001;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments mirroring the given parameter shapes.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: zeros.clone(),
            m: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }
}

/// One in-place Adam update. Nothing is modified if any gradient is
/// non-finite; the error names the offending parameter.
pub fn adam_step<T: Real>(
    params: &mut [(String, &mut Tensor<T>)],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((name, p), (g, m)) in params.iter().zip(grads.iter().zip(&state.m)) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient { param: name.clone() });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let beta1 = T::of(state.beta1);
    let beta2 = T::of(state.beta2);
    let one_m_b1 = T::one() - beta1;
    let one_m_b2 = T::one() - beta2;
    let bc1 = T::of(1.0 - state.beta1.powi(t));
    let bc2 = T::of(1.0 - state.beta2.powi(t));
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);

    for (((_, p), g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = beta1 * *mi + one_m_b1 * gi;
            *vi = beta2 * *vi + one_m_b2 * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(p0: f64, g: f64) -> f64 {
        let mut p = Tensor::scalar(p0);
        let mut state = AdamState::<f64>::new([p.shape()], DEFAULT_LR);
        adam_step(&mut [("p".into(), &mut p)], &[Tensor::scalar(g)], &mut state).unwrap();
        p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        assert_eq!(step_scalar(0.7, 0.0), 0.7);
    }

    #[test]
    fn single_step_by_hand() {
        // m = 0.1, v = 0.001; m̂ = 1, v̂ = 1.
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        let got = step_scalar(1.0, 1.0);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.999).abs() < 1e-6);
    }

    #[test]
    fn step_moves_against_gradient() {
        for g in [-3.0, -1e-3, 2e-5, 4.0] {
            let p = step_scalar(0.5, g);
            assert_eq!((0.5 - p).signum(), g.signum());
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(step_scalar(0.3, 0.2).to_bits(), step_scalar(0.3, 0.2).to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = Tensor::<f64>::from_f64([2], &[1.0, 2.0]).unwrap();
        let mut state = AdamState::<f64>::new([p.shape()], DEFAULT_LR);
        let g = Tensor::from_f64([2], &[0.1, f64::NAN]).unwrap();
        let err = adam_step(&mut [("dense3.weight".into(), &mut p)], &[g], &mut state).unwrap_err();
        assert!(err.to_string().contains("dense3.weight"));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn second_moment_nonnegative() {
        let mut p = Tensor::<f64>::from_f64([3], &[0.0; 3]).unwrap();
        let mut state = AdamState::<f64>::new([p.shape()], DEFAULT_LR);
        for g in [[-1.0, 2.0, 0.0], [3.0, -0.5, 1e-9]] {
            let g = Tensor::from_f64([3], &g).unwrap();
            adam_step(&mut [("p".into(), &mut p)], &[g], &mut state).unwrap();
        }
        assert!(state.second_moments()[0].data().iter().all(|&v| v >= 0.0));
        assert_eq!(state.t, 2);
    }
}

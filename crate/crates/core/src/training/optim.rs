use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// completed steps
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. `grads[i] == None` leaves tensor `i` and
/// its moments untouched (frozen).
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
    assert_eq!(params.len(), state.m.len(), "state built for these parameters");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(config.lr), T::lit(config.eps));
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        assert_eq!(g.shape(), params[i].shape(), "gradient shape");
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::vector(&[1.5f64, -2.0, 0.25]).unwrap()];
        let before = p.clone();
        let g = Tensor::zeros(vec![3]);
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            adam_step(&mut p, &[Some(&g)], &mut s, &AdamConfig::default());
        }
        assert!(p[0].bitwise_eq(&before[0]));
        assert_eq!(s.t, 100);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = vec![Tensor::vector(&[0.0f64, 0.0, 0.0]).unwrap()];
        let g = Tensor::vector(&[3.0, -0.02, 1e4]).unwrap();
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[Some(&g)], &mut s, &cfg);
        for (&x, &gj) in p[0].data().iter().zip(g.data()) {
            // |Δ| = lr·|g| / (|g| + eps)
            let want = cfg.lr * gj.abs() / (gj.abs() + cfg.eps);
            assert!((x.abs() - want).abs() < 1e-15, "{x} vs {want}");
            assert_eq!(x.signum(), -gj.signum());
        }
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = vec![Tensor::vector(&[0.0f64]).unwrap()];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let x = p[0].data()[0];
            let g = Tensor::vector(&[2.0 * (x - 3.0)]).unwrap();
            adam_step(&mut p, &[Some(&g)], &mut s, &cfg);
        }
        assert!((p[0].data()[0] - 3.0).abs() < 1e-3, "{}", p[0].data()[0]);
    }

    #[test]
    fn frozen_slot_untouched() {
        let mut p = vec![Tensor::vector(&[1.0f64]).unwrap(), Tensor::vector(&[1.0]).unwrap()];
        let g = Tensor::vector(&[1.0]).unwrap();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[None, Some(&g)], &mut s, &AdamConfig::default());
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(s.m[0].data()[0], 0.0);
        assert!(p[1].data()[0] < 1.0);
    }
}

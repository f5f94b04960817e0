use super::Network;

/// Scales every gradient by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(num_params: usize, beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// One update of `params` (in order) from `grads` of the same shapes.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
                k += 1;
            }
        }
    }

    /// Clips `grads` to `clip_norm` and applies one step to `net`.
    pub fn step_network(&mut self, net: &mut Network, grads: &mut Network, lr: f64, clip_norm: f64) -> f64 {
        let norm = clip_global_norm(&mut grads.tensors_mut(), clip_norm);
        self.step(&mut net.tensors_mut(), &grads.tensors(), lr);
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_gradients_leave_everything_unchanged() {
        let mut p = vec![0.3, -1.2];
        let mut adam = Adam::new(2, 0.9, 0.999);
        adam.step(&mut [&mut p[..]], &[&[0.0, 0.0]], 0.005);
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(adam.m, vec![0.0, 0.0]);
        assert_eq!(adam.v, vec![0.0, 0.0]);
    }

    #[test]
    fn clipped_first_step_moves_by_lr() {
        let mut p = vec![1.0];
        let mut g = vec![10.0];
        let norm = clip_global_norm(&mut [&mut g[..]], 1.0);
        assert_eq!(norm, 10.0);
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-15);
        let mut adam = Adam::new(1, 0.9, 0.999);
        adam.step(&mut [&mut p[..]], &[&g[..]], 0.005);
        assert_abs_diff_eq!(p[0], 1.0 - 0.005, epsilon = 1e-10);
    }

    #[test]
    fn three_scalar_steps_match_hand_recurrence() {
        let grads = [0.5, -0.2, 0.8];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        // Oracle: the recurrences written out directly.
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = vec![2.0];
        let mut adam = Adam::new(1, b1, b2);
        for g in grads {
            adam.step(&mut [&mut p[..]], &[&[g]], lr);
        }
        assert!((p[0] - x).abs() <= 1e-12, "{} vs {x}", p[0]);
    }

    proptest! {
        #[test]
        fn clipping_bounds_norm(v in proptest::collection::vec(-100.0f64..100.0, 1..20), max in 0.01f64..10.0) {
            let mut a = v.clone();
            let (x, y) = a.split_at_mut(v.len() / 2);
            clip_global_norm(&mut [x, y], max);
            let norm = a.iter().map(|z| z * z).sum::<f64>().sqrt();
            prop_assert!(norm <= max + 1e-12);
            let before = v.iter().map(|z| z * z).sum::<f64>().sqrt();
            if before <= max {
                prop_assert_eq!(a, v);
            }
        }
    }
}

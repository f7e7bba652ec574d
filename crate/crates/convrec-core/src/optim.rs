//! Adam optimizer over named parameter arrays.

use crate::tensor::Array;

/// Adam with bias correction. Moment buffers are keyed positionally, so
/// callers must pass parameters and gradients in a stable order (the
/// parameter visitors guarantee one).
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Array)], grads: &[Array]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (_, param)) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let p = param.as_mut_slice();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.1);
        let mut x = Array::row_vec(vec![5.0, -3.0]);
        for _ in 0..300 {
            let grad = x.scale(2.0);
            let mut entries = vec![("x".to_string(), &mut x)];
            adam.step(&mut entries, &[grad]);
        }
        assert!(x.max_abs() < 1e-2, "{x:?}");
    }
}

//! Adam optimizer with bias correction. Deterministic: state updates in
//! parameter order with fixed arithmetic.

use super::tape::ParamSet;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update from the gradients currently accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (pi, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", vec![1], vec![value]);
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = single_param(1.3);
        let mut adam = Adam::new(&ps);
        for _ in 0..5 {
            ps.zero_grad();
            adam.step(&mut ps, 0.1);
        }
        assert_eq!(ps.get(super::super::tape::ParamId(0)).data[0], 1.3);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // with constant gradient g the bias-corrected first step is
        // -lr * g / (|g| + eps)
        for g in [2.5f64, -0.3, 1e-3] {
            let mut ps = single_param(0.0);
            let mut adam = Adam::new(&ps);
            ps.get_mut(super::super::tape::ParamId(0)).grad[0] = g;
            let lr = 0.05;
            adam.step(&mut ps, lr);
            let expect = -lr * g / (g.abs() + 1e-8);
            let got = ps.get(super::super::tape::ParamId(0)).data[0];
            assert!((got - expect).abs() < 1e-12, "g={g}: {got} vs {expect}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, grad = 2w; 200 steps at lr 0.1 from w = 1
        let mut ps = single_param(1.0);
        let mut adam = Adam::new(&ps);
        for _ in 0..200 {
            ps.zero_grad();
            let w = ps.get(super::super::tape::ParamId(0)).data[0];
            ps.get_mut(super::super::tape::ParamId(0)).grad[0] = 2.0 * w;
            adam.step(&mut ps, 0.1);
        }
        let w = ps.get(super::super::tape::ParamId(0)).data[0];
        assert!(w.abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut ps = single_param(0.7);
            let mut adam = Adam::new(&ps);
            for k in 0..50 {
                ps.zero_grad();
                let w = ps.get(super::super::tape::ParamId(0)).data[0];
                ps.get_mut(super::super::tape::ParamId(0)).grad[0] = (k as f64).sin() + 2.0 * w;
                adam.step(&mut ps, 0.02);
            }
            ps.get(super::super::tape::ParamId(0)).data[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}

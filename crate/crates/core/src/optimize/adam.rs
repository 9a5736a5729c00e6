/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.03, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam { config, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One bias-corrected update of `x` along `-grad`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        assert_eq!(x.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), 2);
        let mut x = vec![1.0, -1.0];
        adam.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-8 && (x[1] + 0.9).abs() < 1e-8);
        adam.step(&mut x, &[0.0, 0.0]);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.05), 3);
        let target = [1.0, -2.0, 0.5];
        let mut x = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.step(&mut x, &g);
        }
        for (a, b) in x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut x = vec![0.25, 4.0];
        for _ in 0..5 {
            adam.step(&mut x, &[0.0, 0.0]);
        }
        assert_eq!(x, vec![0.25, 4.0]);
    }
}

use super::{ParamStore, Real};

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    /// One update of every parameter in `store` from its accumulated gradient.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) {
        if self.first.len() != store.len() {
            self.first = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad: Vec<f64> = store.grad(id).iter().map(|g| g.as_f64()).collect();
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            let values = store.value_mut(id).data_mut();
            for k in 0..values.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                let upd = self.lr * mhat / (vhat.sqrt() + self.eps);
                values[k] = T::of(values[k].as_f64() - upd);
            }
        }
    }
}

/// Halves the learning rate when an epoch-level loss stops improving.
#[derive(Debug, Clone)]
pub struct PlateauDecay {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauDecay {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Self { factor, patience, min_lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Records an epoch loss; returns the (possibly decayed) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - 1e-3) {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::autodiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::from_f64(vec![1], &[v])).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(1.5);
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.value(id).data(), &[1.5]);
    }

    #[test]
    fn single_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        s.grad_mut(id)[0] = 1.0;
        let mut adam = Adam::new(0.1);
        adam.step(&mut s);
        // m̂ = 1, v̂ = 1 after bias correction
        assert!((s.value(id).data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_descends() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = Adam::new(0.01);
        for _ in 0..100 {
            s.grad_mut(id)[0] = -2.0;
            adam.step(&mut s);
        }
        assert!(s.value(id).data()[0] > 0.5);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut p = PlateauDecay::new(0.5, 1, 1e-6);
        let mut lr = 1e-3;
        lr = p.observe(1.0, lr);
        lr = p.observe(1.0, lr);
        assert_eq!(lr, 1e-3);
        lr = p.observe(1.0, lr);
        assert_eq!(lr, 5e-4);
    }
}

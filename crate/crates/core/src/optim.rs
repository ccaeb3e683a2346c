//! Parameter update rules. Each parameter buffer is addressed by a stable slot
//! number so per-parameter state survives across steps.

use std::collections::BTreeMap;

use crate::tensor::Real;

pub trait StepRule<T: Real> {
    fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]);
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }
}

impl<T: Real> StepRule<T> for Sgd {
    fn step(&mut self, _slot: usize, param: &mut [T], grad: &[T]) {
        let lr = T::of(self.lr);
        for (p, &g) in param.iter_mut().zip(grad) {
            *p = *p - lr * g;
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

/// Adaptive-moment descent with bias correction. The step counter is kept per
/// slot, so a buffer that skips a batch does not advance.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<usize, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }
}

impl<T: Real> StepRule<T> for Adam {
    fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        let st = self.state.entry(slot).or_insert_with(|| Moments {
            first: vec![0.0; param.len()],
            second: vec![0.0; param.len()],
            steps: 0,
        });
        st.steps += 1;
        let c1 = 1.0 - self.beta1.powi(st.steps);
        let c2 = 1.0 - self.beta2.powi(st.steps);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(st.first.iter_mut())
            .zip(st.second.iter_mut())
        {
            let g = g.as_f64();
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = T::of(p.as_f64() - update);
        }
    }
}

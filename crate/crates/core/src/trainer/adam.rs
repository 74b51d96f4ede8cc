use std::collections::BTreeMap;

use tch::{nn, Tensor};

/// Adam with bias correction, keyed by variable name so the moment buffers
/// can be checkpointed and restored in a stable order.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn zero_grad(vs: &nn::VarStore) {
        for (_, mut t) in vs.trainable_variables_named() {
            t.zero_grad();
        }
    }

    /// One update of every trainable variable that has a gradient.
    pub fn step(&mut self, vs: &nn::VarStore) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        tch::no_grad(|| {
            for (name, mut p) in vs.trainable_variables_named() {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let m = self.m.entry(name.clone()).or_insert_with(|| p.zeros_like());
                *m = &*m * self.beta1 + &g * (1.0 - self.beta1);
                let v = self.v.entry(name).or_insert_with(|| p.zeros_like());
                *v = &*v * self.beta2 + g.square() * (1.0 - self.beta2);
                let update = (&*m / c1) / ((&*v / c2).sqrt() + self.eps) * self.lr;
                let _ = p.g_sub_(&update);
            }
        });
    }
}

/// Named trainable variables in name order.
pub(crate) trait NamedVars {
    fn trainable_variables_named(&self) -> Vec<(String, Tensor)>;
}

impl NamedVars for nn::VarStore {
    fn trainable_variables_named(&self) -> Vec<(String, Tensor)> {
        let mut vars: Vec<(String, Tensor)> = self.variables().into_iter().filter(|(_, t)| t.requires_grad()).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }
}

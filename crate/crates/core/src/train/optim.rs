use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::params::ParamStore;
use crate::train::config::OptimizerConfig;

/// Serializable optimizer state; `slots` holds per-parameter moment buffers
/// keyed `<slot>/<param name>`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub method: String,
    pub step: u64,
    #[serde(skip)]
    pub slots: BTreeMap<String, Tensor>,
}

pub trait Optimizer: Send + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Applies one update in place.
    fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()>;

    fn state(&self) -> OptimizerState;

    fn load_state(&mut self, state: OptimizerState) -> Result<()>;
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

fn grad_for<'a>(grads: &'a BTreeMap<String, Tensor>, name: &str) -> Option<&'a Tensor> {
    grads.get(name)
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    step: u64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, step: 0 }
    }
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in params.iter_mut() {
            if let Some(g) = grad_for(grads, name) {
                p.scaled_add(-self.lr, g);
            }
        }
        self.step += 1;
        Ok(())
    }

    fn state(&self) -> OptimizerState {
        OptimizerState { method: "sgd".into(), step: self.step, slots: BTreeMap::new() }
    }

    fn load_state(&mut self, state: OptimizerState) -> Result<()> {
        check_method(&state, "sgd")?;
        self.step = state.step;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (name, p) in params.iter_mut() {
            let Some(g) = grad_for(grads, name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.raw_dim()));
            ndarray::Zip::from(&mut *p).and(&mut *m).and(&mut *v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }

    fn state(&self) -> OptimizerState {
        let mut slots = BTreeMap::new();
        for (k, t) in &self.m {
            slots.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.v {
            slots.insert(format!("v/{k}"), t.clone());
        }
        OptimizerState { method: "adam".into(), step: self.step, slots }
    }

    fn load_state(&mut self, state: OptimizerState) -> Result<()> {
        check_method(&state, "adam")?;
        self.step = state.step;
        self.m.clear();
        self.v.clear();
        for (key, t) in state.slots {
            match key.split_once('/') {
                Some(("m", name)) => self.m.insert(name.to_string(), t),
                Some(("v", name)) => self.v.insert(name.to_string(), t),
                _ => return Err(Error::Checkpoint(format!("unexpected adam slot `{key}`"))),
            };
        }
        Ok(())
    }
}

fn check_method(state: &OptimizerState, expected: &str) -> Result<()> {
    if state.method != expected {
        return Err(Error::Checkpoint(format!("optimizer state is for `{}`, not `{expected}`", state.method)));
    }
    Ok(())
}

pub type OptimizerFactory = fn(&OptimizerConfig) -> Box<dyn Optimizer>;

/// Name → constructor table for optimizers.
#[derive(Clone)]
pub struct OptimizerRegistry {
    factories: BTreeMap<String, OptimizerFactory>,
}

impl fmt::Debug for OptimizerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl OptimizerRegistry {
    pub fn builtin() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("adam", |c| Box::new(Adam::new(c.learning_rate)));
        r.register("sgd", |c| Box::new(Sgd::new(c.learning_rate)));
        r
    }

    pub fn register(&mut self, name: &str, factory: OptimizerFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn check(&self, name: &str) -> Result<()> {
        if self.factories.contains_key(name) {
            Ok(())
        } else {
            let known: Vec<&str> = self.factories.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown optimizer `{name}` (known: {})", known.join(", "))))
        }
    }

    pub fn build(&self, cfg: &OptimizerConfig) -> Result<Box<dyn Optimizer>> {
        self.check(&cfg.method)?;
        Ok(self.factories[&cfg.method](cfg))
    }
}

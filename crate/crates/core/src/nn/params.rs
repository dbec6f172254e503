//! Named parameter storage, initialization, and SGD.

use std::collections::BTreeMap;

use super::graph::{LayerKind, NetworkSpec};
use super::layers::BN_MOMENTUM;
use super::Real;
use crate::error::{shape, Error, Result};
use crate::rng;

/// A named array with its logical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Param<T> {
    fn filled(shape: Vec<usize>, v: T) -> Self {
        let len = shape.iter().product();
        Param { shape, data: vec![v; len] }
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }
}

/// Gradients keyed by parameter name.
pub type Grads<T> = BTreeMap<String, Vec<T>>;

/// Trainable parameters plus batch-norm running statistics.
///
/// Parameters are named `"{node}.weight"`, `"{node}.bias"`, `"{node}.gamma"`
/// and `"{node}.beta"`; running statistics `"{node}.mean"` and `"{node}.var"`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Param<T>>,
    pub running: BTreeMap<String, Param<T>>,
}

fn missing(name: &str) -> Error {
    Error::Graph(format!("missing parameter {name}"))
}

impl<T: Real> ParamStore<T> {
    pub fn weight_name(node: usize) -> String {
        format!("{node}.weight")
    }
    pub fn bias_name(node: usize) -> String {
        format!("{node}.bias")
    }
    pub fn gamma_name(node: usize) -> String {
        format!("{node}.gamma")
    }
    pub fn beta_name(node: usize) -> String {
        format!("{node}.beta")
    }

    /// He-normal convolution weights, zero biases, unit `gamma`, zero `beta`,
    /// running mean 0 and variance 1. Values are drawn in `f64` so both
    /// precisions start from the same point.
    pub fn init(net: &NetworkSpec, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = BTreeMap::new();
        let mut running = BTreeMap::new();
        for (i, node) in net.parametrized() {
            match node.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = if node.kind == LayerKind::Conv3x3 { 3 } else { 1 };
                    let shape = vec![node.out_channels, node.in_channels, k, k];
                    let std = (2.0 / (node.in_channels * k * k) as f64).sqrt();
                    let len: usize = shape.iter().product();
                    let data = (0..len).map(|_| T::from_f64(std * rng::normal(&mut rng))).collect();
                    params.insert(Self::weight_name(i), Param { shape, data });
                    params.insert(Self::bias_name(i), Param::filled(vec![node.out_channels], T::zero()));
                }
                LayerKind::BatchNorm => {
                    let c = node.out_channels;
                    params.insert(Self::gamma_name(i), Param::filled(vec![c], T::one()));
                    params.insert(Self::beta_name(i), Param::filled(vec![c], T::zero()));
                    running.insert(format!("{i}.mean"), Param::filled(vec![c], T::zero()));
                    running.insert(format!("{i}.var"), Param::filled(vec![c], T::one()));
                }
                _ => {}
            }
        }
        ParamStore { params, running }
    }

    fn get(&self, name: String) -> Result<&[T]> {
        self.params.get(&name).map(|p| p.data.as_slice()).ok_or_else(|| missing(&name))
    }

    pub fn weight(&self, node: usize) -> Result<&[T]> {
        self.get(Self::weight_name(node))
    }
    pub fn bias(&self, node: usize) -> Result<&[T]> {
        self.get(Self::bias_name(node))
    }
    pub fn gamma(&self, node: usize) -> Result<&[T]> {
        self.get(Self::gamma_name(node))
    }
    pub fn beta(&self, node: usize) -> Result<&[T]> {
        self.get(Self::beta_name(node))
    }

    pub fn running(&self, node: usize) -> Result<(&[T], &[T])> {
        let m = format!("{node}.mean");
        let v = format!("{node}.var");
        let mean = self.running.get(&m).ok_or_else(|| missing(&m))?;
        let var = self.running.get(&v).ok_or_else(|| missing(&v))?;
        Ok((&mean.data, &var.data))
    }

    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, node: usize, mean: &[f64], var: &[f64]) -> Result<()> {
        for (key, batch) in [(format!("{node}.mean"), mean), (format!("{node}.var"), var)] {
            let stat = self.running.get_mut(&key).ok_or_else(|| missing(&key))?;
            if stat.data.len() != batch.len() {
                return Err(shape(format!("{key}: {} channels vs {}", stat.data.len(), batch.len())));
            }
            for (r, &b) in stat.data.iter_mut().zip(batch) {
                *r = T::from_f64(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * b);
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, p)| (k.clone(), p.cast())).collect(),
            running: self.running.iter().map(|(k, p)| (k.clone(), p.cast())).collect(),
        }
    }

    /// Check that every parameter the network needs is present with the
    /// right shape.
    pub fn check_against(&self, net: &NetworkSpec) -> Result<()> {
        let reference = ParamStore::<T>::init(net, 0);
        for (set, want) in [(&self.params, &reference.params), (&self.running, &reference.running)] {
            if set.len() != want.len() {
                return Err(Error::Graph(format!("{} stored arrays, network needs {}", set.len(), want.len())));
            }
            for (name, p) in want {
                let have = set.get(name).ok_or_else(|| missing(name))?;
                if have.shape != p.shape || have.data.len() != p.data.len() {
                    return Err(shape(format!("{name}: stored {:?}, network needs {:?}", have.shape, p.shape)));
                }
            }
        }
        Ok(())
    }
}

/// SGD momentum buffers, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T> {
    pub velocity: BTreeMap<String, Param<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        SgdState { velocity: params.params.iter().map(|(k, p)| (k.clone(), Param::filled(p.shape.clone(), T::zero()))).collect() }
    }
}

/// `v <- momentum v + g + weight_decay p;  p <- p - lr v` for one array.
pub fn sgd_update<T: Real>(p: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T, weight_decay: T) -> Result<()> {
    if p.len() != g.len() || p.len() != v.len() {
        return Err(shape(format!("sgd: param {} / grad {} / velocity {}", p.len(), g.len(), v.len())));
    }
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Apply [`sgd_update`] to every parameter. A parameter without a gradient
/// (unused by the forward pass) still decays and carries momentum.
pub fn sgd_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut SgdState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if let Some(name) = grads.keys().find(|k| !params.params.contains_key(*k)) {
        return Err(missing(name));
    }
    let (lr, m, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for (name, p) in params.params.iter_mut() {
        let v = state.velocity.get_mut(name).ok_or_else(|| Error::Graph(format!("no momentum buffer for {name}")))?;
        let zeros;
        let g = match grads.get(name) {
            Some(g) => g.as_slice(),
            None => {
                zeros = vec![T::zero(); p.data.len()];
                &zeros
            }
        };
        sgd_update(&mut p.data, g, &mut v.data, lr, m, wd)?;
    }
    Ok(())
}

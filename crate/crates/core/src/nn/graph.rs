//! Network description and the graph executor.

use serde::{Deserialize, Serialize};

use super::layers::{self, BnCache};
use super::params::{Grads, ParamStore};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Input,
    Conv3x3,
    Conv1x1,
    Relu,
    BatchNorm,
    MaxPool2,
    AvgUnpool2,
    Concat,
}

impl LayerKind {
    fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::BatchNorm)
    }
}

/// One node of the graph. `inputs` index earlier nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub inputs: Vec<usize>,
}

/// A validated feed-forward graph; node 0 is the input and the last node
/// is the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    nodes: Vec<LayerSpec>,
}

pub type NodeId = usize;

fn graph_err(msg: impl Into<String>) -> Error {
    Error::Graph(msg.into())
}

/// Check `node` against the nodes preceding it.
fn check_node(prev: &[LayerSpec], node: &LayerSpec) -> Result<()> {
    let i = prev.len();
    if node.kind == LayerKind::Input {
        return Err(graph_err(format!("node {i}: only node 0 may be an input")));
    }
    if let Some(&bad) = node.inputs.iter().find(|&&j| j >= i) {
        return Err(graph_err(format!("node {i} reads node {bad}, which is not earlier: cycle or forward edge")));
    }
    let arity = if node.kind == LayerKind::Concat { 2 } else { 1 };
    if node.inputs.len() != arity {
        return Err(graph_err(format!("node {i} ({:?}) needs {arity} inputs, has {}", node.kind, node.inputs.len())));
    }
    let in_c: usize = node.inputs.iter().map(|&j| prev[j].out_channels).sum();
    if in_c != node.in_channels {
        return Err(graph_err(format!("node {i}: declared {} input channels, edges carry {in_c}", node.in_channels)));
    }
    let keeps_channels = !matches!(node.kind, LayerKind::Conv3x3 | LayerKind::Conv1x1);
    if keeps_channels && node.out_channels != node.in_channels {
        return Err(graph_err(format!("node {i} ({:?}) cannot change the channel count", node.kind)));
    }
    if node.out_channels == 0 && !keeps_channels {
        return Err(graph_err(format!("node {i} has no output channels")));
    }
    Ok(())
}

impl NetworkSpec {
    pub fn new(in_channels: usize) -> Self {
        NetworkSpec { nodes: vec![LayerSpec { kind: LayerKind::Input, in_channels, out_channels: in_channels, inputs: vec![] }] }
    }

    /// Validate a node list: inputs must reference earlier nodes (so the
    /// graph is acyclic) and channel counts must agree along every edge.
    pub fn from_layers(nodes: Vec<LayerSpec>) -> Result<Self> {
        let first = nodes.first().ok_or_else(|| graph_err("empty network"))?;
        if first.kind != LayerKind::Input || !first.inputs.is_empty() || first.in_channels != first.out_channels {
            return Err(graph_err("node 0 must be a plain input node"));
        }
        for i in 1..nodes.len() {
            check_node(&nodes[..i], &nodes[i])?;
        }
        Ok(NetworkSpec { nodes })
    }

    pub fn nodes(&self) -> &[LayerSpec] {
        &self.nodes
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[0].out_channels
    }

    pub fn out_channels(&self) -> usize {
        self.nodes[self.nodes.len() - 1].out_channels
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// Number of max-pool stages on the longest path; input sides must be
    /// divisible by `2^pool_depth`.
    pub fn pool_depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let d = node.inputs.iter().map(|&j| depth[j]).max().unwrap_or(0);
            depth[i] = if node.kind == LayerKind::MaxPool2 { d + 1 } else { d };
        }
        depth.into_iter().max().unwrap_or(0)
    }

    fn push(&mut self, kind: LayerKind, inputs: Vec<NodeId>, out_channels: Option<usize>) -> Result<NodeId> {
        let in_channels = inputs
            .iter()
            .map(|&j| self.nodes.get(j).map(|n| n.out_channels).ok_or_else(|| graph_err(format!("unknown node {j}"))))
            .sum::<Result<usize>>()?;
        let node = LayerSpec { kind, in_channels, out_channels: out_channels.unwrap_or(in_channels), inputs };
        check_node(&self.nodes, &node)?;
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    pub fn conv3x3(&mut self, x: NodeId, out_channels: usize) -> Result<NodeId> {
        self.push(LayerKind::Conv3x3, vec![x], Some(out_channels))
    }

    pub fn conv1x1(&mut self, x: NodeId, out_channels: usize) -> Result<NodeId> {
        self.push(LayerKind::Conv1x1, vec![x], Some(out_channels))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(LayerKind::Relu, vec![x], None)
    }

    pub fn batchnorm(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(LayerKind::BatchNorm, vec![x], None)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(LayerKind::MaxPool2, vec![x], None)
    }

    pub fn avgunpool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(LayerKind::AvgUnpool2, vec![x], None)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(LayerKind::Concat, vec![a, b], None)
    }

    /// Node indices that own trainable parameters.
    pub fn parametrized(&self) -> impl Iterator<Item = (NodeId, &LayerSpec)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.kind.has_params())
    }

    /// Last node that reads each node's output (the node itself if unused).
    fn last_use(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            for &j in &node.inputs {
                last[j] = last[j].max(i);
            }
        }
        last
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels() {
            return Err(crate::error::shape(format!("network expects {} input channels, got {}", self.in_channels(), x.channels())));
        }
        let f = 1usize << self.pool_depth();
        if x.height() % f != 0 || x.width() % f != 0 {
            return Err(crate::error::invalid(format!(
                "input {}x{} is not divisible by 2^{} for the pooling stages",
                x.height(),
                x.width(),
                self.pool_depth()
            )));
        }
        Ok(())
    }
}

/// Activations and per-layer state saved by a training forward pass.
pub struct Cache<T> {
    acts: Vec<Tensor<T>>,
    bn: Vec<Option<BnCache<T>>>,
    argmax: Vec<Option<Vec<u32>>>,
}

impl<T: Real> Cache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("cache holds at least the input")
    }

    /// Which branch every ReLU and max-pool window took: one entry per ReLU
    /// output (active or not) and per pooled value (winning index).
    pub fn switch_pattern(&self, net: &NetworkSpec) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, node) in net.nodes.iter().enumerate() {
            match node.kind {
                LayerKind::Relu => out.extend(self.acts[i].data().iter().map(|v| u32::from(v.as_f64() > 0.0))),
                LayerKind::MaxPool2 => out.extend(self.argmax[i].iter().flatten().copied()),
                _ => {}
            }
        }
        out
    }
}

fn guard<T: Real>(t: Tensor<T>, node: usize) -> Tensor<T> {
    debug_assert!(t.is_finite(), "non-finite activation at node {node}");
    t
}

fn eval_node<T: Real>(spec: &LayerSpec, id: usize, params: &ParamStore<T>, ins: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let x = ins[0];
    Ok(match spec.kind {
        LayerKind::Input => x.clone(),
        LayerKind::Conv3x3 => layers::conv2d(x, params.weight(id)?, params.bias(id)?, spec.out_channels)?,
        LayerKind::Conv1x1 => layers::conv1x1(x, params.weight(id)?, params.bias(id)?, spec.out_channels)?,
        LayerKind::Relu => layers::relu(x),
        LayerKind::BatchNorm => {
            let (m, v) = params.running(id)?;
            layers::batchnorm_eval(x, params.gamma(id)?, params.beta(id)?, m, v)?
        }
        LayerKind::MaxPool2 => layers::maxpool2(x)?.0,
        LayerKind::AvgUnpool2 => layers::avgunpool2(x),
        LayerKind::Concat => layers::concat(x, ins[1])?,
    })
}

/// Inference pass using running batch-norm statistics. Intermediate
/// activations are dropped as soon as their last reader has run.
pub fn forward_eval<T: Real>(net: &NetworkSpec, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    net.check_input(x)?;
    let last = net.last_use();
    let mut acts: Vec<Option<Tensor<T>>> = vec![None; net.nodes.len()];
    acts[0] = Some(x.clone());
    for (i, spec) in net.nodes.iter().enumerate().skip(1) {
        let ins: Vec<&Tensor<T>> = spec.inputs.iter().map(|&j| acts[j].as_ref().expect("live activation")).collect();
        let y = guard(eval_node(spec, i, params, &ins)?, i);
        for &j in &spec.inputs {
            if last[j] == i {
                acts[j] = None;
            }
        }
        acts[i] = Some(y);
    }
    Ok(acts.pop().flatten().expect("output activation"))
}

/// Training pass: batch norm uses batch statistics and updates the running
/// statistics stored in `params`.
pub fn forward_train<T: Real>(net: &NetworkSpec, params: &mut ParamStore<T>, x: &Tensor<T>) -> Result<Cache<T>> {
    net.check_input(x)?;
    let n = net.nodes.len();
    let mut cache = Cache { acts: Vec::with_capacity(n), bn: vec![None; n], argmax: vec![None; n] };
    cache.acts.push(x.clone());
    for (i, spec) in net.nodes.iter().enumerate().skip(1) {
        let x = &cache.acts[spec.inputs[0]];
        let y = match spec.kind {
            LayerKind::BatchNorm => {
                let (y, bn, mean, var) = layers::batchnorm_train(x, params.gamma(i)?, params.beta(i)?)?;
                params.update_running(i, &mean, &var)?;
                cache.bn[i] = Some(bn);
                y
            }
            LayerKind::MaxPool2 => {
                let (y, arg) = layers::maxpool2(x)?;
                cache.argmax[i] = Some(arg);
                y
            }
            _ => {
                let ins: Vec<&Tensor<T>> = spec.inputs.iter().map(|&j| &cache.acts[j]).collect();
                eval_node(spec, i, params, &ins)?
            }
        };
        cache.acts.push(guard(y, i));
    }
    Ok(cache)
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Backpropagate `dy` (gradient of the loss w.r.t. the output) through a
/// cached training pass. Returns parameter gradients and, when requested,
/// the gradient w.r.t. the network input.
pub fn backward<T: Real>(
    net: &NetworkSpec,
    params: &ParamStore<T>,
    cache: Cache<T>,
    dy: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Grads<T>, Option<Tensor<T>>)> {
    let n = net.nodes.len();
    if cache.acts.len() != n {
        return Err(graph_err("cache does not belong to this network"));
    }
    if dy.shape() != cache.output().shape() {
        return Err(crate::error::shape(format!("output gradient {:?} vs output {:?}", dy.shape(), cache.output().shape())));
    }
    let Cache { acts, bn, argmax } = cache;
    let mut grads = Grads::new();
    let mut pending: Vec<Option<Tensor<T>>> = vec![None; n];
    pending[n - 1] = Some(dy.clone());
    for i in (1..n).rev() {
        let Some(g) = pending[i].take() else { continue };
        let spec = &net.nodes[i];
        let src = spec.inputs[0];
        let x = &acts[src];
        let want_dx = need_input_grad || src != 0;
        match spec.kind {
            LayerKind::Input => unreachable!("only node 0 is an input"),
            LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                let w = params.weight(i)?;
                let cg = if spec.kind == LayerKind::Conv3x3 {
                    layers::conv2d_backward(x, w, &g, want_dx)?
                } else {
                    layers::conv1x1_backward(x, w, &g, want_dx)?
                };
                grads.insert(ParamStore::<T>::weight_name(i), cg.dw);
                grads.insert(ParamStore::<T>::bias_name(i), cg.db);
                if let Some(dx) = cg.dx {
                    accumulate(&mut pending[src], dx)?;
                }
            }
            LayerKind::Relu => accumulate(&mut pending[src], layers::relu_backward(x, &g))?,
            LayerKind::BatchNorm => {
                let c = bn[i].as_ref().ok_or_else(|| graph_err(format!("node {i}: missing batch-norm cache")))?;
                let (dx, dgamma, dbeta) = layers::batchnorm_backward(c, params.gamma(i)?, &g);
                grads.insert(ParamStore::<T>::gamma_name(i), dgamma);
                grads.insert(ParamStore::<T>::beta_name(i), dbeta);
                accumulate(&mut pending[src], dx)?;
            }
            LayerKind::MaxPool2 => {
                let arg = argmax[i].as_ref().ok_or_else(|| graph_err(format!("node {i}: missing pooling record")))?;
                accumulate(&mut pending[src], layers::maxpool2_backward(&g, arg, x.shape()))?;
            }
            LayerKind::AvgUnpool2 => accumulate(&mut pending[src], layers::avgunpool2_backward(&g))?,
            LayerKind::Concat => {
                let (da, db) = layers::concat_backward(&g, acts[src].channels());
                accumulate(&mut pending[src], da)?;
                accumulate(&mut pending[spec.inputs[1]], db)?;
            }
        }
    }
    let dx = if need_input_grad { Some(pending[0].take().unwrap_or_else(|| Tensor::zeros(acts[0].shape()))) } else { None };
    Ok((grads, dx))
}

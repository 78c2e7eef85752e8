//! Static computation graphs over a shared [`ParameterStore`].
//!
//! Graphs are built append-only, so node order is a topological order and
//! forward evaluation is deterministic. Graphs compose by feeding the output
//! of one into another and chaining the input gradients returned by
//! [`ComputationGraph::backward`].

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{backward_op, forward_op, ConvSpec, Mode, Needs, OpCache, OpSpec, StatUpdate, LEAKY_SLOPE};
use crate::params::{GroupSet, OwnerGroup, ParamId, ParameterStore};
use crate::tensor::{Scalar, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
pub enum NodeKind {
    /// The `index`-th graph input; `item_shape` excludes the batch axis.
    Input { index: usize, item_shape: Vec<usize> },
    Op {
        spec: OpSpec,
        inputs: Vec<NodeId>,
        params: Vec<ParamId>,
        buffers: Vec<ParamId>,
    },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Per-item output shape (batch axis excluded).
    pub item_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ComputationGraph {
    id: u64,
    name: String,
    nodes: Vec<Node>,
    order: Vec<usize>,
    inputs: Vec<NodeId>,
    output: NodeId,
}

/// Which gradients a backward pass produces.
#[derive(Clone, Copy, Debug)]
pub struct Backprop {
    /// Parameter groups whose gradient buffers receive contributions.
    pub groups: GroupSet,
    /// Whether gradients with respect to graph inputs are returned.
    pub input_grads: bool,
}

impl Backprop {
    pub fn params(groups: GroupSet) -> Self {
        Backprop {
            groups,
            input_grads: false,
        }
    }

    pub fn inputs_only() -> Self {
        Backprop {
            groups: GroupSet::NONE,
            input_grads: true,
        }
    }

    pub fn all() -> Self {
        Backprop {
            groups: GroupSet::ALL,
            input_grads: true,
        }
    }
}

/// Cached values of one forward pass.
#[derive(Debug)]
pub struct Activations<T> {
    graph_id: u64,
    output: usize,
    mode: Mode,
    values: Vec<Option<Tensor<T>>>,
    caches: Vec<OpCache<T>>,
    stats: Vec<(ParamId, ParamId, StatUpdate<T>)>,
}

impl<T: Scalar> Activations<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values[self.output]
            .as_ref()
            .expect("forward pass produced the output")
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.values.get(node.0).and_then(|v| v.as_ref())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Applies the running-statistic updates proposed by training-mode batch norms.
    pub fn commit_stats(&self, store: &mut ParameterStore<T>) {
        for (m, v, upd) in &self.stats {
            store.apply_stat_update(*m, *v, upd);
        }
    }
}

impl ComputationGraph {
    /// Validates an arbitrary node list: every edge must point at an earlier
    /// node (which rules out cycles) and arities must match.
    pub fn from_nodes(name: &str, nodes: Vec<Node>, output: NodeId) -> Result<Self> {
        let mut order = Vec::with_capacity(nodes.len());
        let mut inputs = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Input { index, .. } => {
                    if *index != inputs.len() {
                        return Err(Error::Config(format!("graph `{name}`: inputs out of order")));
                    }
                    inputs.push(NodeId(i));
                }
                NodeKind::Op { spec, inputs: ins, .. } => {
                    if ins.len() != spec.arity() || ins.iter().any(|p| p.0 >= i) {
                        return Err(Error::Cycle(name.to_string()));
                    }
                }
            }
            order.push(i);
        }
        if output.0 >= nodes.len() {
            return Err(Error::Cycle(name.to_string()));
        }
        Ok(ComputationGraph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            name: name.to_string(),
            nodes,
            order,
            inputs,
            output,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_item_shape(&self, index: usize) -> &[usize] {
        &self.nodes[self.inputs[index].0].item_shape
    }

    pub fn output_item_shape(&self) -> &[usize] {
        &self.nodes[self.output.0].item_shape
    }

    /// Every parameter and buffer the graph references.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for n in &self.nodes {
            if let NodeKind::Op { params, buffers, .. } = &n.kind {
                ids.extend(params.iter().chain(buffers));
            }
        }
        ids
    }

    /// Number of ops of the given kind.
    pub fn count_ops(&self, kind: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(&n.kind, NodeKind::Op { spec, .. } if spec.kind_name() == kind))
            .count()
    }

    /// One line per node: name, kind and per-item output shape.
    pub fn summary(&self) -> String {
        let mut s = format!("graph {}\n", self.name);
        for n in &self.nodes {
            let kind = match &n.kind {
                NodeKind::Input { .. } => "input",
                NodeKind::Op { spec, .. } => spec.kind_name(),
            };
            let _ = writeln!(s, "  {:<40} {:<16} {:?}", n.name, kind, n.item_shape);
        }
        s
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inputs: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Activations<T>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::shape(
                self.name.clone(),
                format!("expected {} inputs, got {}", self.inputs.len(), inputs.len()),
            ));
        }
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut caches: Vec<OpCache<T>> = vec![OpCache::None; self.nodes.len()];
        let mut stats = Vec::new();
        for &i in &self.order {
            let node = &self.nodes[i];
            match &node.kind {
                NodeKind::Input { index, item_shape } => {
                    let x = inputs[*index];
                    if x.shape().get(1..) != Some(item_shape.as_slice()) {
                        return Err(Error::shape(
                            format!("{} input {index}", self.name),
                            format!("got {:?}, expected (N, {item_shape:?})", x.shape()),
                        ));
                    }
                    values[i] = Some(x.clone());
                }
                NodeKind::Op {
                    spec,
                    inputs: ins,
                    params,
                    buffers,
                } => {
                    for id in params.iter().chain(buffers) {
                        if !store.is_initialized(*id) {
                            return Err(Error::Uninitialized(store.info(*id).name.clone()));
                        }
                    }
                    let xs: Vec<&Tensor<T>> = ins
                        .iter()
                        .map(|p| values[p.0].as_ref().expect("topological order"))
                        .collect();
                    let ps: Vec<&Tensor<T>> = params.iter().map(|id| store.value(*id)).collect();
                    let bs: Vec<&Tensor<T>> = buffers.iter().map(|id| store.value(*id)).collect();
                    let fwd = forward_op(spec, &xs, &ps, &bs, mode).map_err(|e| annotate(e, &node.name))?;
                    if let Some(upd) = fwd.stats {
                        stats.push((buffers[0], buffers[1], upd));
                    }
                    caches[i] = fwd.cache;
                    values[i] = Some(fwd.output);
                }
            }
        }
        Ok(Activations {
            graph_id: self.id,
            output: self.output.0,
            mode,
            values,
            caches,
            stats,
        })
    }

    /// Back-propagates `upstream = dL/d(output)`, adding parameter gradients
    /// for `opts.groups` into the store. Returns per-input gradients when
    /// `opts.input_grads` is set.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        acts: &Activations<T>,
        upstream: &Tensor<T>,
        opts: Backprop,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        if acts.graph_id != self.id {
            return Err(Error::MissingCache(format!(
                "activations were not produced by graph `{}`",
                self.name
            )));
        }
        let out_value = acts
            .value(self.output)
            .ok_or_else(|| Error::MissingCache(format!("{}: output not cached", self.name)))?;
        if out_value.shape() != upstream.shape() {
            return Err(Error::shape(
                self.name.clone(),
                format!("upstream {:?} vs output {:?}", upstream.shape(), out_value.shape()),
            ));
        }

        let mut requires = vec![false; self.nodes.len()];
        for &i in &self.order {
            requires[i] = match &self.nodes[i].kind {
                NodeKind::Input { .. } => opts.input_grads,
                NodeKind::Op { inputs, params, .. } => {
                    inputs.iter().any(|p| requires[p.0])
                        || params.iter().any(|id| opts.groups.contains(store.info(*id).group))
                }
            };
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[self.output.0] = Some(upstream.clone());
        for &i in self.order.iter().rev() {
            let NodeKind::Op {
                spec,
                inputs: ins,
                params,
                buffers,
            } = &self.nodes[i].kind
            else {
                continue;
            };
            if !requires[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs = Needs {
                inputs: ins.iter().any(|p| requires[p.0]),
                params: params.iter().any(|id| opts.groups.contains(store.info(*id).group)),
            };
            let output = acts
                .values
                .get(i)
                .and_then(|v| v.as_ref())
                .ok_or_else(|| Error::MissingCache(self.nodes[i].name.clone()))?;
            let xs: Vec<&Tensor<T>> = ins
                .iter()
                .map(|p| acts.values[p.0].as_ref().expect("cached input"))
                .collect();
            let accumulate: Vec<bool> = params
                .iter()
                .map(|id| opts.groups.contains(store.info(*id).group))
                .collect();
            let (values, store_grads) = store.values_and_grads();
            let ps: Vec<&Tensor<T>> = params.iter().map(|id| &values[id.index()]).collect();
            let bs: Vec<&Tensor<T>> = buffers.iter().map(|id| &values[id.index()]).collect();
            let back = backward_op(spec, &xs, &ps, &bs, output, &acts.caches[i], &g, acts.mode, needs)
                .map_err(|e| annotate(e, &self.nodes[i].name))?;
            for ((id, pg), acc) in params.iter().zip(back.params).zip(accumulate) {
                if let (Some(pg), true) = (pg, acc) {
                    store_grads[id.index()].add_assign(&pg)?;
                }
            }
            for (p, ig) in ins.iter().zip(back.inputs) {
                if let (true, Some(ig)) = (requires[p.0], ig) {
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&ig)?,
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        let shapes = self.inputs.iter().map(|n| &acts.values[n.0]);
        Ok(self
            .inputs
            .iter()
            .zip(shapes)
            .map(|(n, v)| {
                if !opts.input_grads {
                    return None;
                }
                // An input that no path reaches still gets an explicit zero gradient.
                Some(grads[n.0].take().unwrap_or_else(|| {
                    Tensor::zeros(v.as_ref().expect("cached input").shape())
                }))
            })
            .collect())
    }
}

fn annotate(e: Error, node: &str) -> Error {
    match e {
        Error::Shape { op, detail } => Error::Shape {
            op: format!("{node} ({op})"),
            detail,
        },
        Error::NonFinite(s) => Error::NonFinite(format!("{node} ({s})")),
        other => other,
    }
}

/// Forward pass that also commits running statistics in training mode.
pub fn run_graph<T: Scalar>(
    graph: &ComputationGraph,
    store: &mut ParameterStore<T>,
    inputs: &[&Tensor<T>],
    mode: Mode,
) -> Result<Activations<T>> {
    let acts = graph.forward(store, inputs, mode)?;
    if mode == Mode::Train {
        acts.commit_stats(store);
    }
    Ok(acts)
}

/// Backward pass accumulating into every parameter group and returning input gradients.
pub fn run_graph_backward<T: Scalar>(
    graph: &ComputationGraph,
    store: &mut ParameterStore<T>,
    acts: &Activations<T>,
    upstream: &Tensor<T>,
) -> Result<Vec<Option<Tensor<T>>>> {
    graph.backward(store, acts, upstream, Backprop::all())
}

/// Append-only graph construction that registers parameters as it goes.
pub struct GraphBuilder<'s, T> {
    store: &'s mut ParameterStore<T>,
    name: String,
    group: OwnerGroup,
    nodes: Vec<Node>,
    n_inputs: usize,
}

impl<'s, T: Scalar> GraphBuilder<'s, T> {
    pub fn new(store: &'s mut ParameterStore<T>, name: &str, group: OwnerGroup) -> Self {
        GraphBuilder {
            store,
            name: name.to_string(),
            group,
            nodes: Vec::new(),
            n_inputs: 0,
        }
    }

    pub fn set_group(&mut self, group: OwnerGroup) {
        self.group = group;
    }

    pub fn input(&mut self, item_shape: &[usize]) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: format!("{}.input{}", self.name, self.n_inputs),
            kind: NodeKind::Input {
                index: self.n_inputs,
                item_shape: item_shape.to_vec(),
            },
            item_shape: item_shape.to_vec(),
        });
        self.n_inputs += 1;
        id
    }

    pub fn item_shape(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].item_shape
    }

    /// Appends `spec` applied to `inputs`; parameters are named `"{graph}.{name}.{suffix}"`.
    pub fn op(&mut self, name: &str, spec: OpSpec, inputs: &[NodeId]) -> Result<NodeId> {
        let full = format!("{}.{}", self.name, name);
        let shapes: Vec<Vec<usize>> = inputs
            .iter()
            .map(|n| {
                let mut s = vec![1];
                s.extend_from_slice(&self.nodes[n.0].item_shape);
                s
            })
            .collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        let out = spec.output_shape(&refs).map_err(|e| annotate(e, &full))?;
        let mut params = Vec::new();
        for (suffix, role, shape) in spec.param_specs() {
            params.push(self.store.register(&format!("{full}.{suffix}"), self.group, role, &shape)?);
        }
        let mut buffers = Vec::new();
        for (suffix, role, shape) in spec.buffer_specs() {
            buffers.push(self.store.register(&format!("{full}.{suffix}"), self.group, role, &shape)?);
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: full,
            kind: NodeKind::Op {
                spec,
                inputs: inputs.to_vec(),
                params,
                buffers,
            },
            item_shape: out[1..].to_vec(),
        });
        Ok(id)
    }

    pub fn dense(&mut self, name: &str, x: NodeId, out_features: usize) -> Result<NodeId> {
        self.dense_with(name, x, out_features, true)
    }

    pub fn dense_with(&mut self, name: &str, x: NodeId, out_features: usize, bias: bool) -> Result<NodeId> {
        let in_features = self.item_shape(x).iter().product();
        self.op(
            name,
            OpSpec::Dense {
                in_features,
                out_features,
                bias,
            },
            &[x],
        )
    }

    pub fn conv(&mut self, name: &str, x: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.op(name, OpSpec::Conv2d(spec), &[x])
    }

    pub fn deconv(&mut self, name: &str, x: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.op(name, OpSpec::Deconv2d(spec), &[x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let channels = self.item_shape(x)[0];
        self.op(name, OpSpec::BatchNorm { channels }, &[x])
    }

    pub fn instance_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.op(name, OpSpec::InstanceNorm, &[x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.op(name, OpSpec::Relu, &[x])
    }

    pub fn leaky_relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.op(name, OpSpec::LeakyRelu { slope: LEAKY_SLOPE }, &[x])
    }

    pub fn finish(self, output: NodeId) -> Result<ComputationGraph> {
        ComputationGraph::from_nodes(&self.name, self.nodes, output)
    }
}

//! Reference heterogeneous SAGE-style encoder, forward pass only.
//!
//! One layer computes, for every node v,
//!
//! ```text
//! h'_v = act( W_self h_v + sum_r W_r mean_{u in N_r(v)} h_u )
//! ```
//!
//! where `N_r(v)` are the in-neighbors of v under relation r (empty
//! neighborhoods contribute nothing). Weights are stored as `f32`; every
//! reduction accumulates in `f64`, and neighbors are always summed in
//! ascending source order so results do not depend on edge-list layout.
//! Only note-to-note relations take part; metrical edge types are skipped.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeMap, EdgeType, FeatureMatrix, ScoreGraph, NOTE_FEATURE_WIDTH};
use crate::sampler::{Batch, LayeredSubgraph};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub relations: Vec<EdgeType>,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            input: NOTE_FEATURE_WIDTH,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            relations: EdgeType::NOTE_RELATIONS.to_vec(),
        }
    }
}

/// Weights of one layer; every matrix is `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub relation_weights: BTreeMap<EdgeType, FeatureMatrix>,
    pub self_weight: FeatureMatrix,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.self_weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.self_weight.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
    pub activation: Activation,
}

impl EncoderParams {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn check(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, inp) = (layer.output_dim(), layer.input_dim());
            if prev.is_some_and(|p| p != inp) {
                return Err(Error::Shape(format!(
                    "layer {i} expects {inp} inputs, previous layer gives {}",
                    prev.unwrap()
                )));
            }
            for (ty, w) in &layer.relation_weights {
                if (w.rows, w.cols) != (out, inp) || w.data.len() != out * inp {
                    return Err(Error::Shape(format!(
                        "layer {i} {ty} weight is {}x{}, expected {out}x{inp}",
                        w.rows, w.cols
                    )));
                }
            }
            prev = Some(out);
        }
        Ok(())
    }
}

/// Uniform Glorot initialization, `U[-a, a]` with `a = sqrt(6 / (d_in + d_out))`.
pub fn init_params<R: Rng + ?Sized>(dims: &EncoderDims, rng: &mut R) -> Result<EncoderParams> {
    if dims.input == 0 || dims.hidden == 0 || dims.layers == 0 {
        return Err(Error::Config(format!(
            "encoder dimensions must be positive (input {}, hidden {}, layers {})",
            dims.input, dims.hidden, dims.layers
        )));
    }
    let mut uniform = |rows: usize, cols: usize| {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * a) as f32)
            .collect();
        FeatureMatrix { rows, cols, data }
    };
    let mut layers = Vec::with_capacity(dims.layers);
    for l in 0..dims.layers {
        let d_in = if l == 0 { dims.input } else { dims.hidden };
        let relation_weights = dims
            .relations
            .iter()
            .map(|&ty| (ty, uniform(dims.hidden, d_in)))
            .collect();
        let self_weight = uniform(dims.hidden, d_in);
        layers.push(LayerParams {
            relation_weights,
            self_weight,
        });
    }
    Ok(EncoderParams {
        layers,
        activation: Activation::Relu,
    })
}

/// `out += W x`, accumulating in f64.
#[inline]
fn matvec_add(w: &FeatureMatrix, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = 0f64;
        for (a, b) in row.iter().zip(x) {
            acc += f64::from(*a) * b;
        }
        *o += acc;
    }
}

/// In-neighbor lists per (relation, destination), ascending by source.
fn in_lists(edges: &EdgeMap, node_count: usize) -> Result<Vec<(EdgeType, Vec<Vec<usize>>)>> {
    let mut out = Vec::new();
    for (&ty, list) in edges.iter().filter(|(t, _)| t.is_note_relation()) {
        let mut lists = vec![Vec::new(); node_count];
        for &(u, v) in list {
            if u >= node_count || v >= node_count {
                return Err(Error::Shape(format!(
                    "{ty} edge ({u}, {v}) outside {node_count} feature rows"
                )));
            }
            lists[v].push(u);
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        out.push((ty, lists));
    }
    Ok(out)
}

fn layer_forward_masked(
    edges: &EdgeMap,
    h: &FeatureMatrix,
    layer: &LayerParams,
    activation: Activation,
    active: Option<&[bool]>,
) -> Result<FeatureMatrix> {
    let n = h.rows;
    if h.cols != layer.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} does not match layer input {}",
            h.cols,
            layer.input_dim()
        )));
    }
    let lists = in_lists(edges, n)?;
    let weights = lists
        .iter()
        .map(|(ty, _)| {
            layer
                .relation_weights
                .get(ty)
                .ok_or_else(|| Error::Shape(format!("no weights for relation {ty}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let d_in = h.cols;
    let d_out = layer.output_dim();
    let mut out = FeatureMatrix::zeros(n, d_out);
    let mut acc = vec![0f64; d_out];
    let mut mean = vec![0f64; d_in];
    let mut own = vec![0f64; d_in];
    for v in 0..n {
        if active.is_some_and(|m| !m[v]) {
            continue;
        }
        acc.fill(0.0);
        for (dst, &x) in own.iter_mut().zip(h.row(v)) {
            *dst = f64::from(x);
        }
        matvec_add(&layer.self_weight, &own, &mut acc);
        for ((_, per_node), w) in lists.iter().zip(&weights) {
            let sources = &per_node[v];
            if sources.is_empty() {
                continue;
            }
            mean.fill(0.0);
            for &u in sources {
                for (m, &x) in mean.iter_mut().zip(h.row(u)) {
                    *m += f64::from(x);
                }
            }
            let inv = 1.0 / sources.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            matvec_add(w, &mean, &mut acc);
        }
        for (o, a) in out.row_mut(v).iter_mut().zip(&acc) {
            *o = activation.apply(*a) as f32;
        }
    }
    Ok(out)
}

/// One message-passing layer over every node.
pub fn sage_layer_forward(
    edges: &EdgeMap,
    h: &FeatureMatrix,
    layer: &LayerParams,
    activation: Activation,
) -> Result<FeatureMatrix> {
    layer_forward_masked(edges, h, layer, activation, None)
}

/// All layers on a whole graph; returns embeddings for every node.
pub fn encoder_forward_full(
    edges: &EdgeMap,
    x: &FeatureMatrix,
    params: &EncoderParams,
) -> Result<FeatureMatrix> {
    params.check()?;
    let mut h = x.clone();
    for layer in &params.layers {
        h = sage_layer_forward(edges, &h, layer, params.activation)?;
    }
    Ok(h)
}

pub fn encoder_forward_graph(graph: &ScoreGraph, params: &EncoderParams) -> Result<FeatureMatrix> {
    encoder_forward_full(&graph.edges, &graph.note_features, params)
}

/// Layered evaluation over a sampled neighborhood in local ids.
///
/// `layers[i]` holds the edges into nodes at depth `i`, and `depth[v]` is the
/// hop at which v was reached. Conv step `j` (1-based) updates nodes of depth
/// `<= k - j` using the edges of layers `0..=k - j`; the outermost hop is
/// consumed first. Returns embeddings of the depth-0 nodes in ascending id order.
pub fn encoder_forward_layered(
    layers: &[EdgeMap],
    depth: &[usize],
    x: &FeatureMatrix,
    params: &EncoderParams,
) -> Result<FeatureMatrix> {
    params.check()?;
    let k = params.depth();
    if layers.len() != k {
        return Err(Error::Shape(format!(
            "sampled subgraph has {} layers, encoder has {k}",
            layers.len()
        )));
    }
    if depth.len() != x.rows {
        return Err(Error::Shape(format!(
            "{} depths for {} feature rows",
            depth.len(),
            x.rows
        )));
    }
    let mut h = x.clone();
    for (j, layer) in params.layers.iter().enumerate() {
        let reach = k - 1 - j;
        let mut edges = EdgeMap::new();
        for l in &layers[..=reach] {
            for (&ty, list) in l {
                edges.entry(ty).or_default().extend_from_slice(list);
            }
        }
        let active: Vec<bool> = depth.iter().map(|&d| d <= reach).collect();
        h = layer_forward_masked(&edges, &h, layer, params.activation, Some(&active))?;
    }
    let targets: Vec<usize> = (0..depth.len()).filter(|&v| depth[v] == 0).collect();
    Ok(h.gather(&targets))
}

/// Target embeddings for one sampled subgraph; `x` is indexed by graph note id.
pub fn encoder_forward_subgraph(
    sub: &LayeredSubgraph,
    x: &FeatureMatrix,
    params: &EncoderParams,
) -> Result<FeatureMatrix> {
    let local = |id: usize| {
        sub.node_set
            .binary_search(&id)
            .map_err(|_| Error::Internal(format!("edge endpoint {id} outside sampled node set")))
    };
    let mut layers = Vec::with_capacity(sub.layer_edges.len());
    for l in &sub.layer_edges {
        let mut m = EdgeMap::new();
        for (&ty, list) in l {
            let mapped = list
                .iter()
                .map(|&(u, v)| Ok((local(u)?, local(v)?)))
                .collect::<Result<Vec<_>>>()?;
            m.insert(ty, mapped);
        }
        layers.push(m);
    }
    let mut depth = vec![0usize; sub.node_set.len()];
    for (d, hop) in sub.hops.iter().enumerate() {
        for &n in hop {
            depth[local(n)?] = d;
        }
    }
    if sub.node_set.iter().any(|&n| n >= x.rows) {
        return Err(Error::Shape(
            "feature matrix smaller than the sampled node ids".into(),
        ));
    }
    encoder_forward_layered(&layers, &depth, &x.gather(&sub.node_set), params)
}

/// Target embeddings for a whole batch, in batch target order.
pub fn encoder_forward_batch(batch: &Batch, params: &EncoderParams) -> Result<FeatureMatrix> {
    encoder_forward_layered(
        &batch.layer_edges,
        &batch.note_depth,
        &batch.note_features,
        params,
    )
}

/// Replace each row by the mean over all rows sharing its onset.
pub fn onset_pool(embeddings: &FeatureMatrix, onsets: &[i64]) -> Result<FeatureMatrix> {
    if onsets.len() != embeddings.rows {
        return Err(Error::Shape(format!(
            "{} onsets for {} embedding rows",
            onsets.len(),
            embeddings.rows
        )));
    }
    let d = embeddings.cols;
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &o) in onsets.iter().enumerate() {
        groups.entry(o).or_default().push(i);
    }
    let mut out = FeatureMatrix::zeros(embeddings.rows, d);
    let mut sum = vec![0f64; d];
    for rows in groups.values() {
        sum.fill(0.0);
        for &r in rows {
            for (s, &x) in sum.iter_mut().zip(embeddings.row(r)) {
                *s += f64::from(x);
            }
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / rows.len() as f64) as f32).collect();
        for &r in rows {
            out.row_mut(r).copy_from_slice(&mean);
        }
    }
    Ok(out)
}

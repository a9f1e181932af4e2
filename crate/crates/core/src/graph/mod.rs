//! Heterogeneous attributed score graph.
//!
//! Node types are notes, beats and measures. Note ids follow the sorted score
//! order, so note `i` is the `i`-th note by (onset, pitch).

mod edges;
mod features;
mod metrical;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{validate_score, Score};

pub use edges::{add_inverse_edges, build_note_edges, build_note_edges_reference};
pub use features::{compute_note_features, NOTE_FEATURE_WIDTH};
pub use metrical::{
    aggregate_metrical_features, attach_metrical_nodes, build_metrical_grid, MetricalGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Note,
    Beat,
    Measure,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Note, NodeType::Beat, NodeType::Measure];

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Note => "note",
            NodeType::Beat => "beat",
            NodeType::Measure => "measure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Onset,
    During,
    Follow,
    Silence,
    DuringRev,
    FollowRev,
    SilenceRev,
    ConnectBeat,
    ConnectBeatRev,
    NextBeat,
    ConnectMeasure,
    ConnectMeasureRev,
    NextMeasure,
}

impl EdgeType {
    pub const ALL: [EdgeType; 13] = [
        EdgeType::Onset,
        EdgeType::During,
        EdgeType::Follow,
        EdgeType::Silence,
        EdgeType::DuringRev,
        EdgeType::FollowRev,
        EdgeType::SilenceRev,
        EdgeType::ConnectBeat,
        EdgeType::ConnectBeatRev,
        EdgeType::NextBeat,
        EdgeType::ConnectMeasure,
        EdgeType::ConnectMeasureRev,
        EdgeType::NextMeasure,
    ];

    pub const BASE: [EdgeType; 4] = [
        EdgeType::Onset,
        EdgeType::During,
        EdgeType::Follow,
        EdgeType::Silence,
    ];

    /// Note-to-note relations, base and inverse.
    pub const NOTE_RELATIONS: [EdgeType; 7] = [
        EdgeType::Onset,
        EdgeType::During,
        EdgeType::Follow,
        EdgeType::Silence,
        EdgeType::DuringRev,
        EdgeType::FollowRev,
        EdgeType::SilenceRev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Onset => "onset",
            EdgeType::During => "during",
            EdgeType::Follow => "follow",
            EdgeType::Silence => "silence",
            EdgeType::DuringRev => "during_rev",
            EdgeType::FollowRev => "follow_rev",
            EdgeType::SilenceRev => "silence_rev",
            EdgeType::ConnectBeat => "connect_beat",
            EdgeType::ConnectBeatRev => "connect_beat_rev",
            EdgeType::NextBeat => "next_beat",
            EdgeType::ConnectMeasure => "connect_measure",
            EdgeType::ConnectMeasureRev => "connect_measure_rev",
            EdgeType::NextMeasure => "next_measure",
        }
    }

    pub fn endpoints(self) -> (NodeType, NodeType) {
        use EdgeType::*;
        match self {
            Onset | During | Follow | Silence | DuringRev | FollowRev | SilenceRev => {
                (NodeType::Note, NodeType::Note)
            }
            ConnectBeat => (NodeType::Note, NodeType::Beat),
            ConnectBeatRev => (NodeType::Beat, NodeType::Note),
            NextBeat => (NodeType::Beat, NodeType::Beat),
            ConnectMeasure => (NodeType::Note, NodeType::Measure),
            ConnectMeasureRev => (NodeType::Measure, NodeType::Note),
            NextMeasure => (NodeType::Measure, NodeType::Measure),
        }
    }

    pub fn is_note_relation(self) -> bool {
        self.endpoints() == (NodeType::Note, NodeType::Note)
    }

    /// The inverse type created by [`add_inverse_edges`], if any.
    pub fn inverse(self) -> Option<EdgeType> {
        match self {
            EdgeType::During => Some(EdgeType::DuringRev),
            EdgeType::Follow => Some(EdgeType::FollowRev),
            EdgeType::Silence => Some(EdgeType::SilenceRev),
            EdgeType::ConnectBeat => Some(EdgeType::ConnectBeatRev),
            EdgeType::ConnectMeasure => Some(EdgeType::ConnectMeasureRev),
            _ => None,
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown edge type `{s}`")))
    }
}

pub type Edge = (usize, usize);

/// Typed edge lists. Every list is kept sorted and duplicate-free; types with
/// no edges may be absent.
pub type EdgeMap = BTreeMap<EdgeType, Vec<Edge>>;

pub fn edge_count(edges: &EdgeMap) -> usize {
    edges.values().map(Vec::len).sum()
}

pub(crate) fn normalize_edges(edges: &mut EdgeMap) {
    edges.retain(|_, list| {
        list.sort_unstable();
        list.dedup();
        !list.is_empty()
    });
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn gather(&self, ids: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: ids.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphOptions {
    pub inverse_edges: bool,
    pub metrical: bool,
}

/// Per-relation in-edge index (CSC by destination) over note relations.
#[derive(Debug, Clone, Default)]
pub struct InAdjacency {
    by_type: BTreeMap<EdgeType, Csc>,
}

#[derive(Debug, Clone, Default)]
struct Csc {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl InAdjacency {
    fn build(note_count: usize, edges: &EdgeMap) -> Self {
        let mut by_type = BTreeMap::new();
        for (&ty, list) in edges.iter().filter(|(t, _)| t.is_note_relation()) {
            let mut offsets = vec![0usize; note_count + 1];
            for &(_, dst) in list {
                offsets[dst + 1] += 1;
            }
            for i in 0..note_count {
                offsets[i + 1] += offsets[i];
            }
            let mut fill = offsets.clone();
            let mut sources = vec![0usize; list.len()];
            // `list` is sorted by (src, dst) so every bucket ends up src-ascending.
            for &(src, dst) in list {
                sources[fill[dst]] = src;
                fill[dst] += 1;
            }
            by_type.insert(ty, Csc { offsets, sources });
        }
        InAdjacency { by_type }
    }

    /// In-neighbors of `node` under `ty`, ascending.
    pub fn sources(&self, ty: EdgeType, node: usize) -> &[usize] {
        match self.by_type.get(&ty) {
            Some(csc) => &csc.sources[csc.offsets[node]..csc.offsets[node + 1]],
            None => &[],
        }
    }

    pub fn relations(&self) -> impl Iterator<Item = EdgeType> + '_ {
        self.by_type.keys().copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScoreGraph {
    pub note_count: usize,
    pub beat_count: usize,
    pub measure_count: usize,
    pub edges: EdgeMap,
    pub note_features: FeatureMatrix,
    pub beat_features: FeatureMatrix,
    pub measure_features: FeatureMatrix,
    pub note_onsets: Vec<i64>,
    pub note_pitches: Vec<i64>,
    pub beat_spans: Vec<(i64, i64)>,
    pub measure_spans: Vec<(i64, i64)>,
    pub divisions_per_quarter: i64,
    pub options: GraphOptions,
    pub source_name: String,
    pub(crate) in_adjacency: OnceLock<InAdjacency>,
}

impl PartialEq for ScoreGraph {
    fn eq(&self, other: &Self) -> bool {
        self.note_count == other.note_count
            && self.beat_count == other.beat_count
            && self.measure_count == other.measure_count
            && self.edges == other.edges
            && self.note_features == other.note_features
            && self.beat_features == other.beat_features
            && self.measure_features == other.measure_features
            && self.note_onsets == other.note_onsets
            && self.note_pitches == other.note_pitches
            && self.beat_spans == other.beat_spans
            && self.measure_spans == other.measure_spans
            && self.divisions_per_quarter == other.divisions_per_quarter
            && self.options == other.options
            && self.source_name == other.source_name
    }
}

impl ScoreGraph {
    pub fn node_count(&self, ty: NodeType) -> usize {
        match ty {
            NodeType::Note => self.note_count,
            NodeType::Beat => self.beat_count,
            NodeType::Measure => self.measure_count,
        }
    }

    pub fn features(&self, ty: NodeType) -> &FeatureMatrix {
        match ty {
            NodeType::Note => &self.note_features,
            NodeType::Beat => &self.beat_features,
            NodeType::Measure => &self.measure_features,
        }
    }

    pub fn edges_of(&self, ty: EdgeType) -> &[Edge] {
        self.edges.get(&ty).map_or(&[], Vec::as_slice)
    }

    pub fn edge_count(&self) -> usize {
        edge_count(&self.edges)
    }

    /// Lazily built in-edge index used by the sampler.
    pub fn in_adjacency(&self) -> &InAdjacency {
        self.in_adjacency
            .get_or_init(|| InAdjacency::build(self.note_count, &self.edges))
    }

    /// Replace note features with a user-supplied matrix and re-aggregate
    /// beat/measure features from it.
    pub fn with_note_features(mut self, features: FeatureMatrix) -> Result<Self> {
        if features.rows != self.note_count {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} notes",
                features.rows, self.note_count
            )));
        }
        self.note_features = features;
        if self.options.metrical {
            self = aggregate_metrical_features(self);
        } else {
            self.beat_features = FeatureMatrix::zeros(0, self.note_features.cols);
            self.measure_features = FeatureMatrix::zeros(0, self.note_features.cols);
        }
        Ok(self)
    }

    /// Structural invariants: endpoint ranges, sorted duplicate-free lists,
    /// matrix shapes and metrical tiling.
    pub fn check_invariants(&self) -> Result<()> {
        for (ty, list) in &self.edges {
            let (s, d) = ty.endpoints();
            let (ns, nd) = (self.node_count(s), self.node_count(d));
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Internal(format!("{ty} edges not sorted/unique")));
            }
            if let Some(e) = list.iter().find(|&&(u, v)| u >= ns || v >= nd) {
                return Err(Error::Internal(format!("{ty} edge {e:?} out of range")));
            }
        }
        for ty in NodeType::ALL {
            let m = self.features(ty);
            if m.rows != self.node_count(ty) || m.data.len() != m.rows * m.cols {
                return Err(Error::Internal(format!(
                    "{} feature shape mismatch",
                    ty.name()
                )));
            }
        }
        if self.note_onsets.len() != self.note_count || self.note_pitches.len() != self.note_count {
            return Err(Error::Internal("note attribute length mismatch".into()));
        }
        if self.options.metrical {
            for spans in [&self.beat_spans, &self.measure_spans] {
                if spans.first().is_some_and(|s| s.0 != 0)
                    || spans.windows(2).any(|w| w[0].1 != w[1].0)
                    || spans.iter().any(|s| s.0 >= s.1)
                {
                    return Err(Error::Internal("metrical spans do not tile".into()));
                }
            }
        }
        Ok(())
    }
}

/// Build the full graph for a sorted, valid score.
pub fn build_score_graph(score: &Score, options: GraphOptions) -> Result<ScoreGraph> {
    let violations = validate_score(score);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if !score.is_sorted() {
        return Err(Error::Config(
            "score must be sorted by (onset, pitch) with dense ids; call sort_score first".into(),
        ));
    }

    let mut edges = build_note_edges(score);
    if options.inverse_edges {
        edges = add_inverse_edges(edges);
    }
    let note_features = compute_note_features(score);
    let k = note_features.cols;
    let mut graph = ScoreGraph {
        note_count: score.len(),
        edges,
        beat_features: FeatureMatrix::zeros(0, k),
        measure_features: FeatureMatrix::zeros(0, k),
        note_features,
        note_onsets: score.notes.iter().map(|n| n.onset).collect(),
        note_pitches: score.notes.iter().map(|n| n.pitch).collect(),
        divisions_per_quarter: score.divisions_per_quarter,
        options,
        source_name: score.source_name.clone(),
        ..Default::default()
    };
    if options.metrical {
        let grid = build_metrical_grid(score)?;
        graph = attach_metrical_nodes(graph, &grid)?;
        graph = aggregate_metrical_features(graph);
    }
    Ok(graph)
}

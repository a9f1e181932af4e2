//! Musically informed mini-batch sampling.
//!
//! Per score: draw an anchor note, snap the window start back to the first
//! note of the anchor's onset group, extend right up to `S` notes and drop a
//! trailing onset group that the budget would split. Then expand the window
//! by per-relation k-hop neighbor sampling over the note graph, optionally
//! pull in the beats/measures of the target notes, and join `B` such
//! subgraphs into one batch with contiguous ids.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::{mpsc, Arc};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    edge_count, normalize_edges, EdgeMap, EdgeType, FeatureMatrix, NodeType, ScoreGraph,
};

/// Maximum in-edges drawn per node, per relation, per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FanoutRepr", into = "FanoutRepr")]
pub enum Fanout {
    Limited(usize),
    Unbounded,
}

impl Fanout {
    fn take(self, available: usize) -> usize {
        match self {
            Fanout::Limited(k) => k.min(available),
            Fanout::Unbounded => available,
        }
    }
}

impl fmt::Display for Fanout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fanout::Limited(k) => write!(f, "{k}"),
            Fanout::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl FromStr for Fanout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unbounded" | "all" | "-1" => Ok(Fanout::Unbounded),
            other => match other.parse::<usize>() {
                Ok(0) | Err(_) => Err(Error::Config(format!(
                    "fan-out must be a positive integer or `unbounded`, got `{other}`"
                ))),
                Ok(k) => Ok(Fanout::Limited(k)),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FanoutRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<FanoutRepr> for Fanout {
    type Error = Error;

    fn try_from(r: FanoutRepr) -> Result<Self> {
        match r {
            FanoutRepr::Count(k) => k.to_string().parse(),
            FanoutRepr::Word(w) => w.parse(),
        }
    }
}

impl From<Fanout> for FanoutRepr {
    fn from(f: Fanout) -> Self {
        match f {
            Fanout::Limited(k) => FanoutRepr::Count(k),
            Fanout::Unbounded => FanoutRepr::Word("unbounded".into()),
        }
    }
}

pub fn parse_fanouts(s: &str) -> Result<Vec<Fanout>> {
    s.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum target notes per score (S).
    pub target_size: usize,
    /// Scores per batch (B).
    pub batch_size: usize,
    /// One entry per layer / hop.
    pub fanouts: Vec<Fanout>,
    pub seed: u64,
    pub include_metrical: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::pitch_spelling()
    }
}

impl SamplerConfig {
    pub const DEFAULT_FANOUT: usize = 3;
    pub const DEFAULT_LAYERS: usize = 3;

    /// S = 300, B = 300, three layers with fan-out 3.
    pub fn pitch_spelling() -> Self {
        SamplerConfig {
            target_size: 300,
            batch_size: 300,
            fanouts: vec![Fanout::Limited(Self::DEFAULT_FANOUT); Self::DEFAULT_LAYERS],
            seed: 0,
            include_metrical: false,
        }
    }

    /// S = 500, B = 200.
    pub fn cadence() -> Self {
        SamplerConfig {
            target_size: 500,
            batch_size: 200,
            ..Self::pitch_spelling()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Config("target size S must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size B must be positive".into()));
        }
        if self.fanouts.is_empty() {
            return Err(Error::Config(
                "at least one sampling layer is required".into(),
            ));
        }
        if self.fanouts.contains(&Fanout::Limited(0)) {
            return Err(Error::Config("fan-outs must be positive".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.fanouts.len()
    }
}

/// RNG for batch number `counter` of a run seeded with `seed`. Each batch
/// gets its own ChaCha stream so batches can be drawn in any order or in
/// parallel and still come out identical.
pub fn batch_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    rng
}

/// Uniform index in `0..n` that does not depend on pointer width.
#[inline]
fn draw_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n as u64) as usize
}

/// Contiguous run of target notes `[lo, hi)` in (onset, pitch) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetWindow {
    pub score_index: usize,
    pub lo: usize,
    pub hi: usize,
    /// The window is a single onset group larger than `S`, cut at `S` notes.
    pub truncated_tail: bool,
}

impl TargetWindow {
    pub fn node_ids(&self) -> Range<usize> {
        self.lo..self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }
}

/// Window bounds for a given anchor over onset-sorted notes. A score that
/// fits in the budget is taken whole, whatever the anchor.
pub fn window_from_anchor(
    onsets: &[i64],
    anchor: usize,
    target_size: usize,
) -> (usize, usize, bool) {
    let n = onsets.len();
    if n <= target_size {
        return (0, n, false);
    }
    let first_of_group = |i: usize| onsets[..i].partition_point(|&o| o < onsets[i]);
    let lo = first_of_group(anchor);
    let raw_hi = (lo + target_size).min(n);
    if raw_hi == n || onsets[raw_hi - 1] != onsets[raw_hi] {
        return (lo, raw_hi, false);
    }
    // The budget splits the last onset group: drop it, unless it is the only group.
    let tail = first_of_group(raw_hi - 1);
    if tail > lo {
        (lo, tail, false)
    } else {
        (lo, raw_hi, true)
    }
}

pub fn sample_target_window<R: Rng + ?Sized>(
    graph: &ScoreGraph,
    score_index: usize,
    target_size: usize,
    rng: &mut R,
) -> Result<TargetWindow> {
    if graph.note_count == 0 {
        return Err(Error::Config(format!(
            "score {score_index} has no notes to sample"
        )));
    }
    let anchor = draw_index(rng, graph.note_count);
    let (lo, hi, truncated_tail) = window_from_anchor(&graph.note_onsets, anchor, target_size);
    Ok(TargetWindow {
        score_index,
        lo,
        hi,
        truncated_tail,
    })
}

/// Beats/measures attached to a sample's target notes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricalSample {
    pub beats: Vec<usize>,
    pub measures: Vec<usize>,
    pub edges: EdgeMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredSubgraph {
    pub targets: TargetWindow,
    /// `layer_edges[i]` holds edges drawn into nodes first reached at depth `i`.
    pub layer_edges: Vec<EdgeMap>,
    /// `hops[0]` are the targets; `hops[d]` the notes first reached at depth `d`.
    pub hops: Vec<Vec<usize>>,
    /// Every note touched, ascending.
    pub node_set: Vec<usize>,
    pub metrical: Option<MetricalSample>,
}

impl LayeredSubgraph {
    pub fn depth_of(&self, note: usize) -> Option<usize> {
        self.hops
            .iter()
            .position(|h| h.binary_search(&note).is_ok())
    }
}

/// Layered node-wise sampling over the note relations.
///
/// Every node is expanded once, in the layer after it is first reached; per
/// relation it keeps `min(fanout, in-degree)` distinct in-edges chosen
/// uniformly.
pub fn sample_khop<R: Rng + ?Sized>(
    graph: &ScoreGraph,
    targets: &TargetWindow,
    fanouts: &[Fanout],
    rng: &mut R,
) -> LayeredSubgraph {
    let adj = graph.in_adjacency();
    let relations: Vec<EdgeType> = adj.relations().collect();
    let mut visited = vec![false; graph.note_count];
    let mut frontier: Vec<usize> = targets.node_ids().collect();
    for &v in &frontier {
        visited[v] = true;
    }
    let mut hops = vec![frontier.clone()];
    let mut layer_edges = Vec::with_capacity(fanouts.len());
    let mut scratch = Vec::new();

    for &fanout in fanouts {
        let mut layer = EdgeMap::new();
        let mut next = Vec::new();
        for &v in &frontier {
            for &ty in &relations {
                let sources = adj.sources(ty, v);
                let k = fanout.take(sources.len());
                if k == 0 {
                    continue;
                }
                let picked: &[usize] = if k == sources.len() {
                    sources
                } else {
                    // Partial Fisher-Yates over the in-edge list.
                    scratch.clear();
                    scratch.extend_from_slice(sources);
                    for i in 0..k {
                        let j = i + draw_index(rng, scratch.len() - i);
                        scratch.swap(i, j);
                    }
                    &scratch[..k]
                };
                let out = layer.entry(ty).or_default();
                for &s in picked {
                    out.push((s, v));
                    if !visited[s] {
                        visited[s] = true;
                        next.push(s);
                    }
                }
            }
        }
        normalize_edges(&mut layer);
        next.sort_unstable();
        layer_edges.push(layer);
        hops.push(next.clone());
        frontier = next;
    }

    let mut node_set: Vec<usize> = hops.iter().flatten().copied().collect();
    node_set.sort_unstable();
    LayeredSubgraph {
        targets: *targets,
        layer_edges,
        hops,
        node_set,
        metrical: None,
    }
}

/// Attach the beats and measures of the target notes, their connect edges
/// (and reverses when the graph has them) and next edges between included
/// consecutive beats/measures.
pub fn extend_metrical(graph: &ScoreGraph, mut sub: LayeredSubgraph) -> Result<LayeredSubgraph> {
    if !graph.options.metrical {
        return Err(Error::Config(
            "metrical extension requested but the graph was built without beats/measures".into(),
        ));
    }
    let mut ext = MetricalSample::default();
    for (connect, next) in [
        (EdgeType::ConnectBeat, EdgeType::NextBeat),
        (EdgeType::ConnectMeasure, EdgeType::NextMeasure),
    ] {
        let all = graph.edges_of(connect);
        let start = all.partition_point(|e| e.0 < sub.targets.lo);
        let end = all.partition_point(|e| e.0 < sub.targets.hi);
        let conn = all[start..end].to_vec();
        let nodes: BTreeSet<usize> = conn.iter().map(|e| e.1).collect();
        let nodes: Vec<usize> = nodes.into_iter().collect();

        let next_edges: Vec<_> = graph
            .edges_of(next)
            .iter()
            .filter(|e| nodes.binary_search(&e.0).is_ok() && nodes.binary_search(&e.1).is_ok())
            .copied()
            .collect();
        let rev_ty = connect.inverse().expect("connect types have inverses");
        if !graph.edges_of(rev_ty).is_empty() {
            ext.edges
                .insert(rev_ty, conn.iter().map(|&(n, b)| (b, n)).collect());
        }
        ext.edges.insert(connect, conn);
        ext.edges.insert(next, next_edges);
        match connect {
            EdgeType::ConnectBeat => ext.beats = nodes,
            _ => ext.measures = nodes,
        }
    }
    normalize_edges(&mut ext.edges);
    sub.metrical = Some(ext);
    Ok(sub)
}

/// Where one score's nodes live inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub score_index: usize,
    /// Batch note id of the first target note.
    pub target_offset: usize,
    pub target_count: usize,
    pub note_offset: usize,
    pub note_count: usize,
    pub beat_offset: usize,
    pub beat_count: usize,
    pub measure_offset: usize,
    pub measure_count: usize,
    pub truncated_tail: bool,
}

/// Joined subgraphs of several scores with contiguous per-type ids.
///
/// Each score occupies one contiguous block per node type; inside a block the
/// source order is kept, so a score's targets are also contiguous.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub layer_edges: Vec<EdgeMap>,
    pub metrical_edges: EdgeMap,
    pub note_features: FeatureMatrix,
    pub beat_features: FeatureMatrix,
    pub measure_features: FeatureMatrix,
    pub note_onsets: Vec<i64>,
    /// Hop depth at which each batch note was first reached (0 = target).
    pub note_depth: Vec<usize>,
    pub note_source_ids: Vec<usize>,
    pub beat_source_ids: Vec<usize>,
    pub measure_source_ids: Vec<usize>,
    pub scores: Vec<ScoreRecord>,
}

impl Batch {
    pub fn total_targets(&self) -> usize {
        self.scores.iter().map(|r| r.target_count).sum()
    }

    pub fn node_count(&self, ty: NodeType) -> usize {
        match ty {
            NodeType::Note => self.note_source_ids.len(),
            NodeType::Beat => self.beat_source_ids.len(),
            NodeType::Measure => self.measure_source_ids.len(),
        }
    }

    /// Union of all layers plus metrical edges.
    pub fn edges(&self) -> EdgeMap {
        let mut out = self.metrical_edges.clone();
        for layer in &self.layer_edges {
            for (&ty, list) in layer {
                out.entry(ty).or_default().extend_from_slice(list);
            }
        }
        normalize_edges(&mut out);
        out
    }

    pub fn edge_count(&self) -> usize {
        self.layer_edges.iter().map(edge_count).sum::<usize>() + edge_count(&self.metrical_edges)
    }

    /// Batch ids of the target notes, score by score.
    pub fn target_ids(&self) -> Vec<usize> {
        self.scores
            .iter()
            .flat_map(|r| r.target_offset..r.target_offset + r.target_count)
            .collect()
    }
}

fn relabel(ids: &[usize], offset: usize, id: usize) -> Result<usize> {
    ids.binary_search(&id)
        .map(|p| offset + p)
        .map_err(|_| Error::Internal(format!("edge endpoint {id} missing from sampled node set")))
}

/// Join per-score samples into one batch.
pub fn assemble_batch(samples: &[LayeredSubgraph], corpus: &[ScoreGraph]) -> Result<Batch> {
    let mut seen = BTreeSet::new();
    for s in samples {
        let idx = s.targets.score_index;
        if idx >= corpus.len() {
            return Err(Error::Assembly(format!(
                "score index {idx} outside corpus of {}",
                corpus.len()
            )));
        }
        if !seen.insert(idx) {
            return Err(Error::Assembly(format!(
                "score {idx} appears twice in one batch"
            )));
        }
    }
    let layers = samples
        .iter()
        .map(|s| s.layer_edges.len())
        .max()
        .unwrap_or(0);
    if samples.iter().any(|s| s.layer_edges.len() != layers) {
        return Err(Error::Assembly("samples disagree on layer count".into()));
    }
    let k = corpus
        .iter()
        .map(|g| g.note_features.cols)
        .max()
        .unwrap_or(0);
    if samples
        .iter()
        .any(|s| corpus[s.targets.score_index].note_features.cols != k)
    {
        return Err(Error::Assembly(
            "feature widths differ across scores".into(),
        ));
    }

    let mut batch = Batch {
        layer_edges: vec![EdgeMap::new(); layers],
        note_features: FeatureMatrix::zeros(0, k),
        beat_features: FeatureMatrix::zeros(0, k),
        measure_features: FeatureMatrix::zeros(0, k),
        ..Default::default()
    };
    let empty = Vec::new();
    for s in samples {
        let g = &corpus[s.targets.score_index];
        let (beats, measures) = match &s.metrical {
            Some(m) => (&m.beats, &m.measures),
            None => (&empty, &empty),
        };
        let note_offset = batch.note_source_ids.len();
        let beat_offset = batch.beat_source_ids.len();
        let measure_offset = batch.measure_source_ids.len();
        let offset_and_ids = |t: NodeType| match t {
            NodeType::Note => (note_offset, &s.node_set),
            NodeType::Beat => (beat_offset, beats),
            NodeType::Measure => (measure_offset, measures),
        };
        let map_edges = |src: &EdgeMap, dst: &mut EdgeMap| -> Result<()> {
            for (&ty, list) in src {
                let (st, dt) = ty.endpoints();
                let (so, sids) = offset_and_ids(st);
                let (d_off, dids) = offset_and_ids(dt);
                let out = dst.entry(ty).or_default();
                for &(u, v) in list {
                    out.push((relabel(sids, so, u)?, relabel(dids, d_off, v)?));
                }
            }
            Ok(())
        };
        for (layer, joined) in s.layer_edges.iter().zip(batch.layer_edges.iter_mut()) {
            map_edges(layer, joined)?;
        }
        if let Some(m) = &s.metrical {
            map_edges(&m.edges, &mut batch.metrical_edges)?;
        }

        append_rows(&mut batch.note_features, &g.note_features, &s.node_set);
        append_rows(&mut batch.beat_features, &g.beat_features, beats);
        append_rows(&mut batch.measure_features, &g.measure_features, measures);
        batch
            .note_onsets
            .extend(s.node_set.iter().map(|&n| g.note_onsets[n]));
        let mut depth = vec![0usize; s.node_set.len()];
        for (d, hop) in s.hops.iter().enumerate() {
            for &n in hop {
                depth[relabel(&s.node_set, 0, n)?] = d;
            }
        }
        batch.note_depth.extend(depth);
        batch.note_source_ids.extend_from_slice(&s.node_set);
        batch.beat_source_ids.extend_from_slice(beats);
        batch.measure_source_ids.extend_from_slice(measures);

        let target_offset = if s.targets.is_empty() {
            note_offset
        } else {
            relabel(&s.node_set, note_offset, s.targets.lo)?
        };
        batch.scores.push(ScoreRecord {
            score_index: s.targets.score_index,
            target_offset,
            target_count: s.targets.len(),
            note_offset,
            note_count: s.node_set.len(),
            beat_offset,
            beat_count: beats.len(),
            measure_offset,
            measure_count: measures.len(),
            truncated_tail: s.targets.truncated_tail,
        });
    }
    for layer in &mut batch.layer_edges {
        normalize_edges(layer);
    }
    normalize_edges(&mut batch.metrical_edges);
    Ok(batch)
}

fn append_rows(dst: &mut FeatureMatrix, src: &FeatureMatrix, ids: &[usize]) {
    for &i in ids {
        dst.data.extend_from_slice(src.row(i));
    }
    dst.rows += ids.len();
}

/// Padded `(B, S, K)` view of the target features, one row per score.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceView {
    pub batch: usize,
    pub seq_len: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl SequenceView {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.seq_len, self.width)
    }

    pub fn at(&self, b: usize, s: usize) -> &[f32] {
        let start = (b * self.seq_len + s) * self.width;
        &self.data[start..start + self.width]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

pub fn unfold_targets(batch: &Batch, target_size: usize) -> Result<SequenceView> {
    let k = batch.note_features.cols;
    let b = batch.scores.len();
    let mut view = SequenceView {
        batch: b,
        seq_len: target_size,
        width: k,
        data: vec![0.0; b * target_size * k],
        mask: vec![false; b * target_size],
    };
    for (row, rec) in batch.scores.iter().enumerate() {
        if rec.target_count > target_size {
            return Err(Error::Internal(format!(
                "score {} has {} targets, more than S = {target_size}",
                rec.score_index, rec.target_count
            )));
        }
        for s in 0..rec.target_count {
            let start = (row * target_size + s) * k;
            view.data[start..start + k]
                .copy_from_slice(batch.note_features.row(rec.target_offset + s));
            view.mask[row * target_size + s] = true;
        }
    }
    Ok(view)
}

/// Window, k-hop expansion and optional metrical extension for one score.
pub fn sample_score<R: Rng + ?Sized>(
    graph: &ScoreGraph,
    score_index: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<LayeredSubgraph> {
    let window = sample_target_window(graph, score_index, cfg.target_size, rng)?;
    let sub = sample_khop(graph, &window, &cfg.fanouts, rng);
    if cfg.include_metrical {
        extend_metrical(graph, sub)
    } else {
        Ok(sub)
    }
}

/// Sample the given scores (in order) and assemble them.
pub fn sample_batch_from<R: Rng + ?Sized>(
    corpus: &[ScoreGraph],
    indices: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Batch> {
    let samples = indices
        .iter()
        .map(|&i| sample_score(&corpus[i], i, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let batch = assemble_batch(&samples, corpus)?;
    if batch.total_targets() > cfg.target_size * cfg.batch_size {
        return Err(Error::Internal(
            "batch exceeds the S x B target budget".into(),
        ));
    }
    Ok(batch)
}

/// Draw `min(B, |eligible|)` distinct non-empty scores uniformly and sample them.
pub fn sample_batch<R: Rng + ?Sized>(
    corpus: &[ScoreGraph],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Batch> {
    cfg.validate()?;
    let mut pool: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus[i].note_count > 0)
        .collect();
    if pool.is_empty() {
        return Err(Error::Config("corpus has no scores with notes".into()));
    }
    let take = cfg.batch_size.min(pool.len());
    for i in 0..take {
        let j = i + draw_index(rng, pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(take);
    sample_batch_from(corpus, &pool, cfg, rng)
}

/// Deterministic batch source: batch `i` depends only on (corpus, config, i).
pub struct BatchSampler<'a> {
    corpus: &'a [ScoreGraph],
    cfg: SamplerConfig,
}

impl<'a> BatchSampler<'a> {
    pub fn new(corpus: &'a [ScoreGraph], cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.iter().all(|g| g.note_count == 0) {
            return Err(Error::Config("corpus has no scores with notes".into()));
        }
        if cfg.include_metrical && corpus.iter().any(|g| !g.options.metrical) {
            return Err(Error::Config(
                "metrical sampling needs graphs built with beats/measures".into(),
            ));
        }
        Ok(BatchSampler { corpus, cfg })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn batch(&self, counter: u64) -> Result<Batch> {
        sample_batch(
            self.corpus,
            &self.cfg,
            &mut batch_rng(self.cfg.seed, counter),
        )
    }

    /// Batches `0..count`, produced by parallel workers and returned in order.
    pub fn batches(&self, count: u64) -> Result<Vec<Batch>> {
        (0..count).into_par_iter().map(|i| self.batch(i)).collect()
    }

    pub fn iter(&self, count: u64) -> impl Iterator<Item = Result<Batch>> + '_ {
        (0..count).map(move |i| self.batch(i))
    }

    /// One pass over the corpus: a seeded shuffle split into chunks of `B`,
    /// so every non-empty score appears in exactly one batch of the epoch.
    pub fn epoch(&self, epoch: u64) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.corpus.len())
            .filter(|&i| self.corpus[i].note_count > 0)
            .collect();
        let mut rng = batch_rng(self.cfg.seed ^ 0x6570_6f63_685f_7368, epoch);
        for i in (1..order.len()).rev() {
            order.swap(i, draw_index(&mut rng, i + 1));
        }
        order
            .chunks(self.cfg.batch_size)
            .enumerate()
            .map(|(i, chunk)| {
                let mut rng = batch_rng(self.cfg.seed, (epoch << 32) | i as u64);
                sample_batch_from(self.corpus, chunk, &self.cfg, &mut rng)
            })
            .collect()
    }
}

/// Batches `0..count` produced on a background thread and handed over in
/// order through a bounded queue, so at most `prefetch` finished batches wait
/// for the consumer. Each production round fills the rayon pool with
/// consecutive counters. Dropping the stream stops the producer.
pub struct BatchStream {
    rx: Option<mpsc::Receiver<Result<(u64, Batch)>>>,
    worker: Option<thread::JoinHandle<()>>,
}

impl BatchStream {
    pub fn spawn(
        corpus: Arc<Vec<ScoreGraph>>,
        cfg: SamplerConfig,
        count: u64,
        prefetch: usize,
    ) -> Result<Self> {
        BatchSampler::new(&corpus, cfg.clone())?;
        let (tx, rx) = mpsc::sync_channel(prefetch.max(1));
        let worker = thread::spawn(move || {
            let sampler = BatchSampler {
                corpus: &corpus,
                cfg,
            };
            let round = rayon::current_num_threads().max(1) as u64;
            let mut next = 0;
            while next < count {
                let end = (next + round).min(count);
                let produced: Vec<_> = (next..end)
                    .into_par_iter()
                    .map(|i| sampler.batch(i).map(|b| (i, b)))
                    .collect();
                for item in produced {
                    let failed = item.is_err();
                    if tx.send(item).is_err() || failed {
                        return;
                    }
                }
                next = end;
            }
        });
        Ok(BatchStream {
            rx: Some(rx),
            worker: Some(worker),
        })
    }
}

impl Iterator for BatchStream {
    type Item = Result<(u64, Batch)>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.rx.as_ref()?.recv().ok();
        if item.is_none() {
            self.rx = None;
            if let Some(h) = self.worker.take() {
                if h.join().is_err() {
                    return Some(Err(Error::Internal("batch producer panicked".into())));
                }
            }
        }
        item
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        self.rx = None;
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_score_graph, GraphOptions};
    use crate::score::{sort_score, Note, Score};

    fn graph_from(notes: &[(i64, i64, i64)], opts: GraphOptions) -> ScoreGraph {
        let notes = notes
            .iter()
            .enumerate()
            .map(|(i, &(o, d, p))| Note::new(i, o, d, p))
            .collect();
        build_score_graph(&sort_score(Score::new(notes, 4)).0, opts).unwrap()
    }

    #[test]
    fn window_snaps_left_and_drops_split_tail() {
        let onsets = [0, 0, 1, 2, 2, 2, 3, 4, 4, 5];
        // anchor 4 → lo 3; raw hi 8 splits {7, 8} → hi 7, targets 3..=6.
        assert_eq!(window_from_anchor(&onsets, 4, 5), (3, 7, false));
        assert_eq!(window_from_anchor(&onsets, 9, 5), (9, 10, false));
        for a in 0..onsets.len() {
            assert_eq!(window_from_anchor(&onsets, a, 20), (0, 10, false));
            assert_eq!(window_from_anchor(&onsets, a, 10), (0, 10, false));
        }
        assert_eq!(window_from_anchor(&onsets, 0, 10), (0, 10, false));
    }

    #[test]
    fn oversized_onset_group_is_truncated() {
        let onsets = [0, 1, 1, 1, 1, 2];
        assert_eq!(window_from_anchor(&onsets, 2, 3), (1, 4, true));
        assert_eq!(window_from_anchor(&onsets, 0, 3), (0, 1, false));
    }

    #[test]
    fn unbounded_single_layer_takes_every_in_edge() {
        let g = graph_from(
            &[(0, 2, 60), (0, 2, 64), (1, 2, 62), (2, 1, 60), (5, 1, 67)],
            GraphOptions::default(),
        );
        let w = TargetWindow {
            score_index: 0,
            lo: 2,
            hi: 4,
            truncated_tail: false,
        };
        let sub = sample_khop(&g, &w, &[Fanout::Unbounded], &mut batch_rng(1, 0));
        for ty in EdgeType::BASE {
            let expected: Vec<_> = g
                .edges_of(ty)
                .iter()
                .filter(|e| (2..4).contains(&e.1))
                .copied()
                .collect();
            assert_eq!(
                sub.layer_edges[0].get(&ty).cloned().unwrap_or_default(),
                expected,
                "{ty}"
            );
        }
    }

    #[test]
    fn isolated_target_has_empty_layers() {
        let g = graph_from(&[(0, 1, 60)], GraphOptions::default());
        let w = TargetWindow {
            score_index: 0,
            lo: 0,
            hi: 1,
            truncated_tail: false,
        };
        let sub = sample_khop(&g, &w, &[Fanout::Limited(3); 3], &mut batch_rng(1, 0));
        assert_eq!(sub.node_set, [0]);
        assert_eq!(sub.layer_edges.len(), 3);
        assert!(sub.layer_edges.iter().all(EdgeMap::is_empty));
    }

    #[test]
    fn fanout_one_picks_one_of_three() {
        // Notes 0, 1 and 2 all end at 1, where note 3 starts: three follow in-edges.
        let g = graph_from(
            &[(0, 1, 60), (0, 1, 62), (0, 1, 64), (1, 1, 70)],
            GraphOptions::default(),
        );
        assert_eq!(g.in_adjacency().sources(EdgeType::Follow, 3), &[0, 1, 2]);
        let w = TargetWindow {
            score_index: 0,
            lo: 3,
            hi: 4,
            truncated_tail: false,
        };
        for seed in 0..20 {
            let sub = sample_khop(&g, &w, &[Fanout::Limited(1)], &mut batch_rng(seed, 0));
            let follow = &sub.layer_edges[0][&EdgeType::Follow];
            assert_eq!(follow.len(), 1);
            assert!(g.edges_of(EdgeType::Follow).contains(&follow[0]));
        }
    }

    #[test]
    fn metrical_extension_counts() {
        // 4/4, 4 divisions per quarter: beats are 4 divisions, the measure 16.
        let opts = GraphOptions {
            inverse_edges: true,
            metrical: true,
        };
        let g = graph_from(&[(0, 4, 60), (4, 4, 62), (8, 4, 64), (16, 4, 65)], opts);
        let w = TargetWindow {
            score_index: 0,
            lo: 0,
            hi: 2,
            truncated_tail: false,
        };
        let sub = sample_khop(&g, &w, &[Fanout::Limited(3)], &mut batch_rng(0, 0));
        let m = extend_metrical(&g, sub).unwrap().metrical.unwrap();
        assert_eq!(m.beats, [0, 1]);
        assert_eq!(m.measures, [0]);
        assert_eq!(m.edges[&EdgeType::NextBeat], [(0, 1)]);
        assert!(!m.edges.contains_key(&EdgeType::NextMeasure));
        assert_eq!(m.edges[&EdgeType::ConnectBeatRev], [(0, 0), (1, 1)]);

        let w = TargetWindow {
            score_index: 0,
            lo: 0,
            hi: 1,
            truncated_tail: false,
        };
        let sub = sample_khop(&g, &w, &[Fanout::Limited(3)], &mut batch_rng(0, 0));
        let m = extend_metrical(&g, sub).unwrap().metrical.unwrap();
        assert_eq!(m.beats, [0]);
        assert!(!m.edges.contains_key(&EdgeType::NextBeat));

        let plain = graph_from(&[(0, 4, 60)], GraphOptions::default());
        let sub = sample_khop(&plain, &w, &[Fanout::Limited(3)], &mut batch_rng(0, 0));
        assert!(matches!(
            extend_metrical(&plain, sub),
            Err(Error::Config(_))
        ));
    }

    fn targets_only(score_index: usize, n: usize) -> LayeredSubgraph {
        LayeredSubgraph {
            targets: TargetWindow {
                score_index,
                lo: 0,
                hi: n,
                truncated_tail: false,
            },
            layer_edges: vec![EdgeMap::new()],
            hops: vec![(0..n).collect(), vec![]],
            node_set: (0..n).collect(),
            metrical: None,
        }
    }

    #[test]
    fn assembly_offsets() {
        let g4 = graph_from(
            &[(0, 1, 60), (1, 1, 60), (2, 1, 60), (3, 1, 60)],
            GraphOptions::default(),
        );
        let g6 = graph_from(
            &[
                (0, 1, 60),
                (1, 1, 60),
                (2, 1, 60),
                (3, 1, 60),
                (4, 1, 60),
                (5, 1, 60),
            ],
            GraphOptions::default(),
        );
        let corpus = [g4, g6];
        let b = assemble_batch(&[targets_only(0, 4), targets_only(1, 6)], &corpus).unwrap();
        let recs: Vec<_> = b
            .scores
            .iter()
            .map(|r| (r.score_index, r.target_offset, r.target_count))
            .collect();
        assert_eq!(recs, [(0, 0, 4), (1, 4, 6)]);
        assert_eq!(b.total_targets(), 10);

        let err = assemble_batch(&[targets_only(0, 4), targets_only(0, 4)], &corpus).unwrap_err();
        assert!(matches!(err, Error::Assembly(_)));
    }

    #[test]
    fn single_sample_relabel_preserves_order_and_edges() {
        let g = graph_from(
            &[
                (0, 2, 60),
                (0, 2, 64),
                (1, 2, 62),
                (2, 1, 60),
                (5, 1, 67),
                (6, 2, 50),
            ],
            GraphOptions {
                inverse_edges: true,
                metrical: false,
            },
        );
        let w = TargetWindow {
            score_index: 0,
            lo: 3,
            hi: 4,
            truncated_tail: false,
        };
        let sub = sample_khop(&g, &w, &[Fanout::Limited(2); 2], &mut batch_rng(5, 0));
        let b = assemble_batch(std::slice::from_ref(&sub), std::slice::from_ref(&g)).unwrap();
        assert!(b.note_source_ids.windows(2).all(|w| w[0] < w[1]));
        for (layer, joined) in sub.layer_edges.iter().zip(&b.layer_edges) {
            for (ty, list) in layer {
                for &(u, v) in list {
                    let mapped = (
                        b.note_source_ids.binary_search(&u).unwrap(),
                        b.note_source_ids.binary_search(&v).unwrap(),
                    );
                    assert!(joined[ty].contains(&mapped));
                }
            }
        }
    }

    #[test]
    fn unfold_pads_and_masks() {
        let g3 = graph_from(
            &[(0, 1, 60), (1, 1, 61), (2, 1, 62)],
            GraphOptions::default(),
        );
        let g5 = graph_from(
            &[(0, 1, 60), (1, 1, 61), (2, 1, 62), (3, 1, 63), (4, 1, 64)],
            GraphOptions::default(),
        );
        let corpus = [g3, g5];
        let b = assemble_batch(&[targets_only(0, 3), targets_only(1, 5)], &corpus).unwrap();
        let v = unfold_targets(&b, 5).unwrap();
        assert_eq!(v.shape(), (2, 5, 23));
        assert_eq!(v.mask_row(0), [true, true, true, false, false]);
        assert_eq!(v.mask_row(1), [true; 5]);
        assert_eq!(v.at(1, 4), corpus[1].note_features.row(4));
        assert!(v.at(0, 4).iter().all(|&x| x == 0.0));

        let swapped = assemble_batch(&[targets_only(1, 5), targets_only(0, 3)], &corpus).unwrap();
        let w = unfold_targets(&swapped, 5).unwrap();
        assert_eq!(w.at(0, 2), v.at(1, 2));
        assert_eq!(w.mask_row(1), v.mask_row(0));

        assert!(matches!(unfold_targets(&b, 4), Err(Error::Internal(_))));
    }

    #[test]
    fn batch_clamps_to_corpus_and_is_deterministic() {
        let corpus = vec![
            graph_from(&[(0, 1, 60), (1, 1, 61)], GraphOptions::default()),
            graph_from(
                &[(0, 1, 60), (0, 1, 64), (2, 1, 62)],
                GraphOptions::default(),
            ),
        ];
        let cfg = SamplerConfig {
            seed: 9,
            ..SamplerConfig::default()
        };
        let sampler = BatchSampler::new(&corpus, cfg).unwrap();
        let b = sampler.batch(0).unwrap();
        assert_eq!(b.scores.len(), 2);
        assert_eq!(b, sampler.batch(0).unwrap());
        assert_eq!(
            sampler.batches(4).unwrap(),
            sampler.iter(4).collect::<Result<Vec<_>>>().unwrap()
        );
        assert!(matches!(
            sample_batch(&[], &SamplerConfig::default(), &mut batch_rng(0, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn epoch_covers_every_score_once() {
        let corpus: Vec<_> = (0..7)
            .map(|i| graph_from(&[(0, 1, 60 + i), (1, 1, 61)], GraphOptions::default()))
            .collect();
        let cfg = SamplerConfig {
            batch_size: 3,
            ..SamplerConfig::default()
        };
        let batches = BatchSampler::new(&corpus, cfg).unwrap().epoch(0).unwrap();
        assert_eq!(batches.len(), 3);
        let mut seen: Vec<_> = batches
            .iter()
            .flat_map(|b| b.scores.iter().map(|r| r.score_index))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fanout_parsing() {
        assert_eq!(parse_fanouts("3,3,3").unwrap(), vec![Fanout::Limited(3); 3]);
        assert_eq!(
            parse_fanouts("unbounded,2").unwrap(),
            vec![Fanout::Unbounded, Fanout::Limited(2)]
        );
        assert!(parse_fanouts("0").is_err());
        assert!(parse_fanouts("x").is_err());
        let json = serde_json::to_string(&vec![Fanout::Limited(3), Fanout::Unbounded]).unwrap();
        assert_eq!(json, r#"[3,"unbounded"]"#);
        let back: Vec<Fanout> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Fanout::Limited(3), Fanout::Unbounded]);
        assert_eq!(SamplerConfig::cadence().target_size, 500);
        assert_eq!(SamplerConfig::cadence().batch_size, 200);
    }

    #[test]
    fn stream_matches_direct_batches() {
        let g = graph_from(
            &[
                (0, 2, 60),
                (0, 2, 64),
                (2, 2, 62),
                (4, 1, 60),
                (5, 1, 67),
                (6, 2, 65),
            ],
            GraphOptions::default(),
        );
        let corpus = Arc::new(vec![g.clone(), g]);
        let cfg = SamplerConfig {
            target_size: 3,
            batch_size: 2,
            seed: 9,
            ..Default::default()
        };
        let direct = BatchSampler::new(&corpus, cfg.clone())
            .unwrap()
            .batches(11)
            .unwrap();
        let streamed: Vec<_> = BatchStream::spawn(corpus.clone(), cfg.clone(), 11, 1)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(streamed.len(), 11);
        for (i, (idx, b)) in streamed.into_iter().enumerate() {
            assert_eq!(idx, i as u64);
            assert_eq!(b, direct[i]);
        }
        let mut early = BatchStream::spawn(corpus.clone(), cfg.clone(), 1000, 1).unwrap();
        assert!(early.next().is_some());
        drop(early);
        let bad = SamplerConfig {
            batch_size: 0,
            ..cfg
        };
        assert!(BatchStream::spawn(corpus, bad, 3, 1).is_err());
    }
}

//! Beat and measure nodes derived from the time-signature map.

use super::{normalize_edges, EdgeType, FeatureMatrix, NodeType, ScoreGraph};
use crate::error::{Error, Result};
use crate::score::{normalize_time_sigs, Score};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricalGrid {
    pub beats: Vec<(i64, i64)>,
    pub measures: Vec<(i64, i64)>,
}

/// Tile the score's time extent with measures and beats.
///
/// Measures restart at every time-signature change; a measure interrupted by
/// a change is cut short there (as is its last beat). The extent covers every
/// note end and every onset (so zero-length notes at the very end still land
/// in a span), rounded up to the next measure boundary.
pub fn build_metrical_grid(score: &Score) -> Result<MetricalGrid> {
    let sigs = normalize_time_sigs(score.time_sigs.clone());
    let dpq = score.divisions_per_quarter;
    let mut regions = Vec::with_capacity(sigs.len());
    for ts in &sigs {
        let unsupported = |reason| Error::UnsupportedMeter {
            at: ts.at,
            numerator: ts.numerator,
            denominator: ts.denominator,
            reason,
        };
        if ts.denominator <= 0 || ts.denominator & (ts.denominator - 1) != 0 {
            return Err(unsupported("denominator is not a power of two"));
        }
        if ts.numerator <= 0 {
            return Err(unsupported("numerator must be positive"));
        }
        if (dpq * 4) % ts.denominator != 0 || dpq * 4 < ts.denominator {
            return Err(unsupported(
                "beat length is not a whole number of divisions",
            ));
        }
        regions.push((ts.at, ts.numerator, dpq * 4 / ts.denominator));
    }

    let extent = score
        .notes
        .iter()
        .map(|n| n.end().max(n.onset + 1))
        .max()
        .unwrap_or(0);

    let mut grid = MetricalGrid::default();
    let mut cursor = 0i64;
    let mut r = 0usize;
    while cursor < extent {
        while r + 1 < regions.len() && regions[r + 1].0 <= cursor {
            r += 1;
        }
        let (_, beats_per_measure, beat_len) = regions[r];
        let boundary = regions.get(r + 1).map_or(i64::MAX, |reg| reg.0);
        let end = (cursor + beats_per_measure * beat_len).min(boundary);
        let mut b = cursor;
        while b < end {
            grid.beats.push((b, (b + beat_len).min(end)));
            b += beat_len;
        }
        grid.measures.push((cursor, end));
        cursor = end;
    }
    Ok(grid)
}

fn span_containing(spans: &[(i64, i64)], t: i64) -> Option<usize> {
    let i = spans.partition_point(|s| s.0 <= t).checked_sub(1)?;
    (t < spans[i].1).then_some(i)
}

/// Add beat/measure nodes, note→beat/measure connect edges (by onset,
/// half-open spans), optional reverse connect edges and forward next edges.
pub fn attach_metrical_nodes(mut graph: ScoreGraph, grid: &MetricalGrid) -> Result<ScoreGraph> {
    let levels = [
        (&grid.beats, EdgeType::ConnectBeat, EdgeType::NextBeat),
        (
            &grid.measures,
            EdgeType::ConnectMeasure,
            EdgeType::NextMeasure,
        ),
    ];
    for (spans, connect, next) in levels {
        let mut conn = Vec::with_capacity(graph.note_count);
        for (note, &onset) in graph.note_onsets.iter().enumerate() {
            let span = span_containing(spans, onset).ok_or_else(|| {
                Error::Internal(format!(
                    "note {note} onset {onset} not covered by the {} grid",
                    connect.endpoints().1.name()
                ))
            })?;
            conn.push((note, span));
        }
        if graph.options.inverse_edges {
            let rev = conn.iter().map(|&(n, s)| (s, n)).collect();
            graph
                .edges
                .insert(connect.inverse().expect("connect types have inverses"), rev);
        }
        graph.edges.insert(connect, conn);
        graph
            .edges
            .insert(next, (1..spans.len()).map(|i| (i - 1, i)).collect());
    }
    normalize_edges(&mut graph.edges);

    let k = graph.note_features.cols;
    graph.beat_count = grid.beats.len();
    graph.measure_count = grid.measures.len();
    graph.beat_spans = grid.beats.clone();
    graph.measure_spans = grid.measures.clone();
    graph.beat_features = FeatureMatrix::zeros(graph.beat_count, k);
    graph.measure_features = FeatureMatrix::zeros(graph.measure_count, k);
    Ok(graph)
}

/// Mean of note features over each beat's/measure's connect in-edges; empty
/// beats and measures get zero rows.
pub fn aggregate_metrical_features(mut graph: ScoreGraph) -> ScoreGraph {
    let k = graph.note_features.cols;
    for (ty, connect) in [
        (NodeType::Beat, EdgeType::ConnectBeat),
        (NodeType::Measure, EdgeType::ConnectMeasure),
    ] {
        let count = graph.node_count(ty);
        let mut sums = vec![0f64; count * k];
        let mut members = vec![0usize; count];
        for &(note, target) in graph.edges_of(connect) {
            members[target] += 1;
            let acc = &mut sums[target * k..(target + 1) * k];
            for (a, &x) in acc.iter_mut().zip(graph.note_features.row(note)) {
                *a += f64::from(x);
            }
        }
        let mut m = FeatureMatrix::zeros(count, k);
        for (i, &c) in members.iter().enumerate().filter(|(_, &c)| c > 0) {
            for (dst, &s) in m.row_mut(i).iter_mut().zip(&sums[i * k..(i + 1) * k]) {
                *dst = (s / c as f64) as f32;
            }
        }
        match ty {
            NodeType::Beat => graph.beat_features = m,
            _ => graph.measure_features = m,
        }
    }
    graph
}

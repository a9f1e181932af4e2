//! Note-to-note edge construction.
//!
//! For an ordered pair of distinct notes (u, v):
//!
//! * onset:   on(u) = on(v)
//! * during:  on(v) < on(u) <= on(v) + dur(v)
//! * follow:  on(u) + dur(u) = on(v)
//! * silence: on(u) + dur(u) < on(v) and no onset lies strictly between
//!   on(u) + dur(u) and on(v)
//!
//! Conditions are evaluated independently, so one pair can carry several
//! types (a note starting exactly when another ends gets both follow and
//! during). Silence only looks at onsets: a long note sounding across the gap
//! does not suppress the edge.

use super::{normalize_edges, EdgeMap, EdgeType};
use crate::score::Score;

/// Quadratic enumeration of every ordered pair. Kept as the oracle for
/// [`build_note_edges`].
pub fn build_note_edges_reference(score: &Score) -> EdgeMap {
    let notes = &score.notes;
    let mut all_onsets: Vec<i64> = notes.iter().map(|n| n.onset).collect();
    all_onsets.sort_unstable();
    // Any onset x with lo < x < hi?
    let onset_strictly_between = |lo: i64, hi: i64| {
        let i = all_onsets.partition_point(|&x| x <= lo);
        i < all_onsets.len() && all_onsets[i] < hi
    };

    let mut out = EdgeMap::new();
    for u in notes {
        for v in notes {
            if u.id == v.id {
                continue;
            }
            let pair = (u.id, v.id);
            if u.onset == v.onset {
                out.entry(EdgeType::Onset).or_default().push(pair);
            }
            if u.onset > v.onset && u.onset <= v.onset + v.duration {
                out.entry(EdgeType::During).or_default().push(pair);
            }
            if u.end() == v.onset {
                out.entry(EdgeType::Follow).or_default().push(pair);
            }
            if u.end() < v.onset && !onset_strictly_between(u.end(), v.onset) {
                out.entry(EdgeType::Silence).or_default().push(pair);
            }
        }
    }
    normalize_edges(&mut out);
    out
}

/// Windowed construction over the (onset, pitch)-sorted note order.
///
/// Notes are bucketed into onset groups; each relation then reduces to a
/// contiguous run of notes found by binary search, so the work is the output
/// size plus `O(n log n)`.
pub fn build_note_edges(score: &Score) -> EdgeMap {
    debug_assert!(score.is_sorted());
    let notes = &score.notes;
    let n = notes.len();
    let mut out = EdgeMap::new();
    if n < 2 {
        return out;
    }
    let onsets: Vec<i64> = notes.iter().map(|n| n.onset).collect();

    // group_start[g]..group_start[g + 1] is the g-th onset group.
    let mut group_onset = Vec::new();
    let mut group_start = Vec::new();
    for (i, &o) in onsets.iter().enumerate() {
        if group_onset.last() != Some(&o) {
            group_onset.push(o);
            group_start.push(i);
        }
    }
    group_start.push(n);
    let group = |g: usize| group_start[g]..group_start[g + 1];

    let mut onset = Vec::new();
    for g in 0..group_onset.len() {
        for u in group(g) {
            onset.extend(group(g).filter(|&v| v != u).map(|v| (u, v)));
        }
    }

    let mut during = Vec::new();
    let mut follow = Vec::new();
    let mut silence = Vec::new();
    for (i, note) in notes.iter().enumerate() {
        let end = note.end();

        // As the sounding note v = i: every u with on(i) < on(u) <= end(i).
        let lo = onsets.partition_point(|&x| x <= note.onset);
        let hi = onsets.partition_point(|&x| x <= end);
        during.extend((lo..hi).map(|u| (u, i)));

        // As u = i: the group starting exactly at end(i), and the first group after it.
        let g = group_onset.partition_point(|&x| x < end);
        if g < group_onset.len() && group_onset[g] == end {
            follow.extend(group(g).filter(|&v| v != i).map(|v| (i, v)));
        }
        let g = group_onset.partition_point(|&x| x <= end);
        if g < group_onset.len() {
            silence.extend(group(g).map(|v| (i, v)));
        }
    }

    out.insert(EdgeType::Onset, onset);
    out.insert(EdgeType::During, during);
    out.insert(EdgeType::Follow, follow);
    out.insert(EdgeType::Silence, silence);
    normalize_edges(&mut out);
    out
}

/// Add `(v, r_rev, u)` for every `(u, r, v)` with r in {during, follow, silence}.
pub fn add_inverse_edges(mut edges: EdgeMap) -> EdgeMap {
    for ty in [EdgeType::During, EdgeType::Follow, EdgeType::Silence] {
        let Some(rev) = ty.inverse() else { continue };
        let reversed: Vec<_> = edges
            .get(&ty)
            .map(|l| l.iter().map(|&(u, v)| (v, u)).collect())
            .unwrap_or_default();
        if !reversed.is_empty() {
            edges.entry(rev).or_default().extend(reversed);
        }
    }
    normalize_edges(&mut edges);
    edges
}

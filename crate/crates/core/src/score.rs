//! Canonical in-memory score: integer-timed notes plus a time-signature map.
//!
//! All times are integers in per-score divisions (MIDI ticks, or the
//! `divisions_per_quarter` declared by a note-list document). Graph
//! construction relies on exact integer comparisons of onsets and ends.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PITCH: i64 = 127;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub id: usize,
    pub onset: i64,
    pub duration: i64,
    pub pitch: i64,
    pub voice: Option<u32>,
    pub channel: Option<u32>,
}

impl Note {
    pub fn new(id: usize, onset: i64, duration: i64, pitch: i64) -> Self {
        Note {
            id,
            onset,
            duration,
            pitch,
            voice: None,
            channel: None,
        }
    }

    #[inline]
    pub fn end(&self) -> i64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSigEvent {
    pub at: i64,
    pub numerator: i64,
    pub denominator: i64,
}

impl TimeSigEvent {
    pub const COMMON_TIME: TimeSigEvent = TimeSigEvent {
        at: 0,
        numerator: 4,
        denominator: 4,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub notes: Vec<Note>,
    pub divisions_per_quarter: i64,
    pub time_sigs: Vec<TimeSigEvent>,
    pub source_name: String,
}

impl Score {
    pub fn new(notes: Vec<Note>, divisions_per_quarter: i64) -> Self {
        Score {
            notes,
            divisions_per_quarter,
            time_sigs: vec![TimeSigEvent::COMMON_TIME],
            source_name: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Latest note end, or 0 for an empty score.
    pub fn end_time(&self) -> i64 {
        self.notes.iter().map(Note::end).max().unwrap_or(0)
    }

    /// True when notes are in (onset, pitch) order with ids `0..n`.
    pub fn is_sorted(&self) -> bool {
        self.notes.iter().enumerate().all(|(i, n)| n.id == i)
            && self
                .notes
                .windows(2)
                .all(|w| (w[0].onset, w[0].pitch) <= (w[1].onset, w[1].pitch))
    }
}

/// A single broken invariant, naming the field and (when applicable) the note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub note_id: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.note_id {
            Some(id) => write!(f, "note {id}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Permutation produced by [`sort_score`]: `old_ids[new_id]` is the id the
/// note carried before sorting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdRemap {
    pub old_ids: Vec<usize>,
}

impl IdRemap {
    pub fn is_identity(&self) -> bool {
        self.old_ids.iter().enumerate().all(|(i, &o)| i == o)
    }
}

/// Stable sort by (onset, pitch, id) and reassign ids densely in that order.
pub fn sort_score(mut score: Score) -> (Score, IdRemap) {
    score.notes.sort_by_key(|n| (n.onset, n.pitch, n.id));
    let old_ids = score
        .notes
        .iter_mut()
        .enumerate()
        .map(|(new_id, n)| std::mem::replace(&mut n.id, new_id))
        .collect();
    (score, IdRemap { old_ids })
}

pub fn validate_score(score: &Score) -> Vec<Violation> {
    let mut out = Vec::new();
    if score.divisions_per_quarter <= 0 {
        out.push(Violation {
            note_id: None,
            field: "divisions_per_quarter",
            message: format!("must be positive, got {}", score.divisions_per_quarter),
        });
    }

    let n = score.notes.len();
    let mut seen: HashMap<usize, usize> = HashMap::with_capacity(n);
    for note in &score.notes {
        if note.onset < 0 {
            out.push(note_violation(
                note,
                "onset",
                format!("negative onset {}", note.onset),
            ));
        }
        if note.duration < 0 {
            out.push(note_violation(
                note,
                "duration",
                format!("negative duration {}", note.duration),
            ));
        }
        if !(0..=MAX_PITCH).contains(&note.pitch) {
            out.push(note_violation(
                note,
                "pitch",
                format!("pitch {} outside 0-127", note.pitch),
            ));
        }
        if note.id >= n {
            out.push(note_violation(
                note,
                "id",
                format!("id {} not in dense range 0..{n}", note.id),
            ));
        }
        if let Some(prev) = seen.insert(note.id, note.id) {
            out.push(note_violation(note, "id", format!("duplicate id {prev}")));
        }
    }

    for (i, ts) in score.time_sigs.iter().enumerate() {
        if ts.numerator <= 0 {
            out.push(ts_violation(
                "numerator",
                format!("event {i}: numerator must be positive"),
            ));
        }
        if ts.denominator <= 0 || (ts.denominator & (ts.denominator - 1)) != 0 {
            out.push(ts_violation(
                "denominator",
                format!(
                    "event {i}: denominator {} is not a power of two",
                    ts.denominator
                ),
            ));
        }
        if ts.at < 0 {
            out.push(ts_violation(
                "at",
                format!("event {i}: negative position {}", ts.at),
            ));
        }
    }
    if score.time_sigs.windows(2).any(|w| w[0].at > w[1].at) {
        out.push(ts_violation(
            "at",
            "time signatures not sorted by position".into(),
        ));
    }
    if score.time_sigs.first().is_none_or(|ts| ts.at != 0) {
        out.push(ts_violation(
            "at",
            "first time signature must be at division 0".into(),
        ));
    }
    out
}

fn note_violation(note: &Note, field: &'static str, message: String) -> Violation {
    Violation {
        note_id: Some(note.id),
        field,
        message,
    }
}

fn ts_violation(field: &'static str, message: String) -> Violation {
    Violation {
        note_id: None,
        field,
        message,
    }
}

/// Sort events by position, keep the last event at any repeated position and
/// make sure the map starts at division 0 (4/4 when nothing is declared there).
pub fn normalize_time_sigs(mut sigs: Vec<TimeSigEvent>) -> Vec<TimeSigEvent> {
    sigs.sort_by_key(|ts| ts.at);
    let mut out: Vec<TimeSigEvent> = Vec::with_capacity(sigs.len() + 1);
    for ts in sigs {
        match out.last_mut() {
            Some(last) if last.at == ts.at => *last = ts,
            _ => out.push(ts),
        }
    }
    if out.first().is_none_or(|ts| ts.at > 0) {
        out.insert(0, TimeSigEvent::COMMON_TIME);
    }
    out
}

/// Validate, normalize time signatures and sort. Shared by every parser.
pub(crate) fn finish_score(mut score: Score) -> Result<Score> {
    score.time_sigs = normalize_time_sigs(std::mem::take(&mut score.time_sigs));
    let violations = validate_score(&score);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(sort_score(score).0)
}

#[derive(Debug, Serialize, Deserialize)]
struct NoteListDoc {
    divisions_per_quarter: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_signatures: Option<Vec<TimeSigDoc>>,
    notes: Vec<NoteDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimeSigDoc {
    at: i64,
    num: i64,
    den: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoteDoc {
    onset: i64,
    duration: i64,
    pitch: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    voice: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel: Option<u32>,
}

/// Parse the canonical note-list JSON document.
///
/// Notes receive ids in document order before sorting, so validation errors
/// name notes by their position in the document.
pub fn parse_note_json(bytes: &[u8]) -> Result<Score> {
    let doc: NoteListDoc = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        context: e.to_string(),
    })?;
    let notes = doc
        .notes
        .into_iter()
        .enumerate()
        .map(|(id, n)| Note {
            id,
            onset: n.onset,
            duration: n.duration,
            pitch: n.pitch,
            voice: n.voice,
            channel: n.channel,
        })
        .collect();
    let time_sigs = doc
        .time_signatures
        .unwrap_or_default()
        .into_iter()
        .map(|ts| TimeSigEvent {
            at: ts.at,
            numerator: ts.num,
            denominator: ts.den,
        })
        .collect();
    finish_score(Score {
        notes,
        divisions_per_quarter: doc.divisions_per_quarter,
        time_sigs,
        source_name: String::new(),
    })
}

/// Serialize to the canonical note-list document (notes in their current order).
pub fn to_note_json(score: &Score) -> String {
    let doc = NoteListDoc {
        divisions_per_quarter: score.divisions_per_quarter,
        time_signatures: Some(
            score
                .time_sigs
                .iter()
                .map(|ts| TimeSigDoc {
                    at: ts.at,
                    num: ts.numerator,
                    den: ts.denominator,
                })
                .collect(),
        ),
        notes: score
            .notes
            .iter()
            .map(|n| NoteDoc {
                onset: n.onset,
                duration: n.duration,
                pitch: n.pitch,
                voice: n.voice,
                channel: n.channel,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("note list serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_note_document() {
        let s = parse_note_json(
            br#"{"divisions_per_quarter":4,"notes":[{"onset":0,"duration":4,"pitch":60}]}"#,
        )
        .unwrap();
        assert_eq!(s.notes.len(), 1);
        assert_eq!(s.notes[0].id, 0);
        assert_eq!(s.time_sigs, vec![TimeSigEvent::COMMON_TIME]);
    }

    #[test]
    fn equal_onsets_ordered_by_pitch() {
        let s = parse_note_json(
            br#"{"divisions_per_quarter":4,"notes":[
                {"onset":0,"duration":4,"pitch":64},
                {"onset":0,"duration":4,"pitch":60}]}"#,
        )
        .unwrap();
        let pitches: Vec<_> = s.notes.iter().map(|n| n.pitch).collect();
        assert_eq!(pitches, [60, 64]);
    }

    #[test]
    fn pitch_out_of_range_names_note() {
        let err = parse_note_json(
            br#"{"divisions_per_quarter":4,"notes":[
                {"onset":0,"duration":4,"pitch":60},
                {"onset":1,"duration":4,"pitch":128}]}"#,
        )
        .unwrap_err();
        match err {
            Error::Validation(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].note_id, Some(1));
                assert_eq!(v[0].field, "pitch");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_document_reports_position() {
        let err = parse_note_json(b"{\"divisions_per_quarter\":4,\n\"notes\":[{\"onset\":\"x\"}]}")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn sort_examples() {
        let notes = vec![
            Note::new(0, 4, 1, 60),
            Note::new(1, 0, 1, 64),
            Note::new(2, 0, 1, 60),
        ];
        let (s, remap) = sort_score(Score::new(notes, 4));
        let order: Vec<_> = s.notes.iter().map(|n| (n.onset, n.pitch)).collect();
        assert_eq!(order, [(0, 60), (0, 64), (4, 60)]);
        assert_eq!(remap.old_ids, [2, 1, 0]);

        let (again, remap) = sort_score(s.clone());
        assert_eq!(again, s);
        assert!(remap.is_identity());
    }

    #[test]
    fn sort_is_stable_for_identical_notes() {
        let notes = vec![Note::new(0, 0, 2, 60), Note::new(1, 0, 5, 60)];
        let (s, remap) = sort_score(Score::new(notes, 4));
        assert_eq!(remap.old_ids, [0, 1]);
        assert_eq!(s.notes[1].duration, 5);
    }

    #[test]
    fn validate_examples() {
        let ok = Score::new(vec![Note::new(0, 0, 1, 60)], 4);
        assert!(validate_score(&ok).is_empty());

        let neg = Score::new(vec![Note::new(0, 0, -1, 60)], 4);
        let v = validate_score(&neg);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].note_id, v[0].field), (Some(0), "duration"));

        let dup = Score::new(vec![Note::new(0, 0, 1, 60), Note::new(0, 1, 1, 60)], 4);
        let v = validate_score(&dup);
        let dups = v.iter().filter(|v| v.message.contains("duplicate")).count();
        assert_eq!(dups, 1);
    }

    #[test]
    fn time_sigs_are_normalized() {
        let ts = normalize_time_sigs(vec![
            TimeSigEvent {
                at: 960,
                numerator: 3,
                denominator: 4,
            },
            TimeSigEvent {
                at: 960,
                numerator: 6,
                denominator: 8,
            },
        ]);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0], TimeSigEvent::COMMON_TIME);
        assert_eq!(ts[1].numerator, 6);
    }

    fn arb_score() -> impl Strategy<Value = Score> {
        let note = (
            0i64..200,
            0i64..50,
            0i64..128,
            proptest::option::of(0u32..4),
        );
        (1i64..960, proptest::collection::vec(note, 0..60)).prop_map(|(dpq, notes)| {
            let notes = notes
                .into_iter()
                .enumerate()
                .map(|(id, (onset, duration, pitch, voice))| Note {
                    voice,
                    ..Note::new(id, onset, duration, pitch)
                })
                .collect();
            Score::new(notes, dpq)
        })
    }

    proptest! {
        #[test]
        fn json_round_trip_is_identity(score in arb_score()) {
            let parsed = parse_note_json(to_note_json(&score).as_bytes()).unwrap();
            let again = parse_note_json(to_note_json(&parsed).as_bytes()).unwrap();
            prop_assert_eq!(again, parsed);
        }

        #[test]
        fn sort_is_idempotent_permutation(score in arb_score()) {
            let (once, remap) = sort_score(score.clone());
            let (twice, remap2) = sort_score(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert!(remap2.is_identity());
            let mut ids = remap.old_ids.clone();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..score.len()).collect::<Vec<_>>());
            for (new_id, &old) in remap.old_ids.iter().enumerate() {
                let a = &once.notes[new_id];
                let b = &score.notes[old];
                prop_assert_eq!((a.onset, a.duration, a.pitch), (b.onset, b.duration, b.pitch));
            }
            prop_assert!(once.is_sorted());
        }
    }
}

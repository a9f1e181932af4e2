//! Synthetic scores: random onsets with chord clusters, grace notes and rests.
//! Used by `bench`, the property suites and the fixtures in tests.

use rand::Rng;

use crate::score::{sort_score, Note, Score, TimeSigEvent};

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub min_notes: usize,
    pub max_notes: usize,
    pub max_chord: usize,
    /// Onset advance between chords, in divisions.
    pub onset_steps: Vec<i64>,
    pub durations: Vec<i64>,
    pub grace_probability: f64,
    pub divisions_per_quarter: i64,
    pub meter_changes: bool,
}

impl SynthParams {
    /// Between 1 and `max_notes` notes with a wide mix of gaps, overlaps and
    /// zero-length notes.
    pub fn varied(max_notes: usize) -> Self {
        SynthParams {
            min_notes: 1,
            max_notes,
            max_chord: 5,
            onset_steps: vec![0, 1, 2, 2, 3, 4, 4, 6, 8, 16],
            durations: vec![1, 2, 3, 4, 4, 6, 8, 12, 16],
            grace_probability: 0.05,
            divisions_per_quarter: 4,
            meter_changes: true,
        }
    }

    /// Exactly `n` notes at constant density, so graph size grows linearly in `n`.
    pub fn fixed(n: usize) -> Self {
        SynthParams {
            min_notes: n,
            max_notes: n,
            max_chord: 4,
            onset_steps: vec![1, 2, 2, 4],
            durations: vec![1, 2, 4, 4, 8],
            grace_probability: 0.02,
            divisions_per_quarter: 4,
            meter_changes: false,
        }
    }
}

pub fn random_score<R: Rng + ?Sized>(rng: &mut R, params: &SynthParams) -> Score {
    let n = rng.random_range(params.min_notes..=params.max_notes);
    let mut notes = Vec::with_capacity(n);
    let mut t = 0i64;
    while notes.len() < n {
        let chord = rng.random_range(1..=params.max_chord).min(n - notes.len());
        for _ in 0..chord {
            let duration = if rng.random_bool(params.grace_probability) {
                0
            } else {
                params.durations[rng.random_range(0..params.durations.len())]
            };
            let pitch = rng.random_range(36..=84);
            notes.push(Note::new(notes.len(), t, duration, pitch));
        }
        t += params.onset_steps[rng.random_range(0..params.onset_steps.len())];
    }

    let mut score = Score::new(notes, params.divisions_per_quarter);
    if params.meter_changes {
        let bar = 4 * params.divisions_per_quarter;
        let mut at = 0;
        score.time_sigs.clear();
        while at <= t {
            let (num, den) = [(4, 4), (3, 4), (6, 8), (2, 2)][rng.random_range(0..4)];
            score.time_sigs.push(TimeSigEvent {
                at,
                numerator: num,
                denominator: den,
            });
            at += bar * rng.random_range(1..4);
        }
    }
    sort_score(score).0
}

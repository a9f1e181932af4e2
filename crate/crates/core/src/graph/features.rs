use super::FeatureMatrix;
use crate::score::Score;

const PITCH_CLASSES: usize = 12;
const OCTAVES: usize = 10;

/// 12 pitch-class one-hot + 10 octave one-hot + 1 duration feature.
pub const NOTE_FEATURE_WIDTH: usize = PITCH_CLASSES + OCTAVES + 1;

/// Default note features. The duration feature is the duration in whole
/// notes clamped to 4, scaled into [0, 1].
pub fn compute_note_features(score: &Score) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros(score.len(), NOTE_FEATURE_WIDTH);
    let whole = (4 * score.divisions_per_quarter) as f64;
    for (i, note) in score.notes.iter().enumerate() {
        let row = m.row_mut(i);
        let pitch = note.pitch.clamp(0, 127) as usize;
        row[pitch % PITCH_CLASSES] = 1.0;
        row[PITCH_CLASSES + (pitch / 12).min(OCTAVES - 1)] = 1.0;
        let wholes = note.duration.max(0) as f64 / whole;
        row[PITCH_CLASSES + OCTAVES] = (wholes.min(4.0) / 4.0) as f32;
    }
    m
}

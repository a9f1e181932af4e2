//! Symbolic scores to heterogeneous graphs, musically informed neighbor
//! sampling, batch assembly and a reference message-passing encoder.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod midi;
pub mod sampler;
pub mod score;
pub mod synth;

pub use encoder::{EncoderDims, EncoderParams};
pub use error::{Error, Result};
pub use graph::{
    build_score_graph, EdgeMap, EdgeType, FeatureMatrix, GraphOptions, NodeType, ScoreGraph,
};
pub use sampler::{Batch, BatchSampler, Fanout, SamplerConfig};
pub use score::{parse_note_json, sort_score, validate_score, Note, Score, TimeSigEvent};

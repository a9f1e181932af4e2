//! Container files for graphs, batches and encoder parameters.
//!
//! A record is
//!
//! ```text
//! b"MUSEGRF1" | manifest length (u64 LE) | manifest JSON | payload
//! ```
//!
//! The manifest lists every payload section with its dtype, shape, byte
//! offset (relative to the payload start), length and CRC32. Integers are
//! `i64` and reals `f32`, both little-endian; matrices are row-major.
//! Graph and parameter files hold one record, batch files append one record
//! per batch.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Activation, EncoderParams, LayerParams};
use crate::error::{Error, Result};
use crate::graph::{EdgeMap, EdgeType, FeatureMatrix, GraphOptions, NodeType, ScoreGraph};
use crate::sampler::{Batch, SamplerConfig, ScoreRecord};

pub const MAGIC: &[u8; 8] = b"MUSEGRF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Graph,
    Batch,
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    I64,
    F32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::I64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTypeEntry {
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default)]
    pub metrical: bool,
    pub count: u64,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: Kind,
    pub node_counts: BTreeMap<NodeType, u64>,
    pub feature_width: u64,
    pub edge_types: Vec<EdgeTypeEntry>,
    pub sections: Vec<Section>,
    pub payload_length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<GraphOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divisions_per_quarter: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl Manifest {
    fn new(kind: Kind) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            kind,
            node_counts: BTreeMap::new(),
            feature_width: 0,
            edge_types: Vec::new(),
            sections: Vec::new(),
            payload_length: 0,
            options: None,
            divisions_per_quarter: None,
            source_name: None,
            config: None,
            batch_index: None,
            layers: None,
            activation: None,
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

struct PayloadWriter {
    manifest: Manifest,
    payload: Vec<u8>,
}

impl PayloadWriter {
    fn new(kind: Kind) -> Self {
        PayloadWriter {
            manifest: Manifest::new(kind),
            payload: Vec::new(),
        }
    }

    fn push(&mut self, name: String, dtype: Dtype, shape: Vec<u64>, bytes: Vec<u8>) {
        self.manifest.sections.push(Section {
            name,
            dtype,
            shape,
            offset: self.payload.len() as u64,
            length: bytes.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
        self.payload.extend_from_slice(&bytes);
    }

    fn i64s(
        &mut self,
        name: impl Into<String>,
        shape: Vec<u64>,
        values: impl IntoIterator<Item = i64>,
    ) {
        let bytes = values.into_iter().flat_map(i64::to_le_bytes).collect();
        self.push(name.into(), Dtype::I64, shape, bytes);
    }

    fn f32s(&mut self, name: impl Into<String>, m: &FeatureMatrix) {
        let bytes = m.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(
            name.into(),
            Dtype::F32,
            vec![m.rows as u64, m.cols as u64],
            bytes,
        );
    }

    fn edges(&mut self, prefix: &str, edges: &EdgeMap, layer: Option<usize>, metrical: bool) {
        for ty in EdgeType::ALL {
            let Some(list) = edges.get(&ty).filter(|l| !l.is_empty()) else {
                continue;
            };
            self.manifest.edge_types.push(EdgeTypeEntry {
                edge_type: ty,
                layer,
                metrical,
                count: list.len() as u64,
                offset: self.payload.len() as u64,
            });
            self.i64s(
                format!("{prefix}edges.{ty}"),
                vec![list.len() as u64, 2],
                list.iter().flat_map(|&(u, v)| [u as i64, v as i64]),
            );
        }
    }

    fn finish(mut self) -> Vec<u8> {
        self.manifest.payload_length = self.payload.len() as u64;
        let json = serde_json::to_vec(&self.manifest).expect("manifest serialization cannot fail");
        let mut out = Vec::with_capacity(16 + json.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        out
    }
}

/// One decoded record: manifest plus verified payload.
#[derive(Debug, Clone)]
pub struct Record<'a> {
    pub manifest: Manifest,
    payload: &'a [u8],
}

impl<'a> Record<'a> {
    /// Little-endian bytes of one section, exactly as stored.
    pub fn section_bytes(&self, name: &str) -> Result<(&'a [u8], &Section)> {
        let s = self
            .manifest
            .section(name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))?;
        Ok((
            &self.payload[s.offset as usize..(s.offset + s.length) as usize],
            s,
        ))
    }

    fn raw(&self, name: &str, dtype: Dtype) -> Result<(&'a [u8], &Section)> {
        let (bytes, s) = self.section_bytes(name)?;
        if s.dtype != dtype {
            return Err(Error::Format(format!(
                "section `{name}` has dtype {:?}, expected {dtype:?}",
                s.dtype
            )));
        }
        Ok((bytes, s))
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.section(name).is_some()
    }

    pub fn i64s(&self, name: &str) -> Result<Vec<i64>> {
        let (bytes, _) = self.raw(name, Dtype::I64)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn ids(&self, name: &str) -> Result<Vec<usize>> {
        self.i64s(name)?
            .into_iter()
            .map(|x| {
                usize::try_from(x).map_err(|_| Error::Format(format!("negative id in `{name}`")))
            })
            .collect()
    }

    fn pairs(&self, name: &str) -> Result<Vec<(i64, i64)>> {
        Ok(self
            .i64s(name)?
            .chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .collect())
    }

    pub fn matrix(&self, name: &str) -> Result<FeatureMatrix> {
        let (bytes, s) = self.raw(name, Dtype::F32)?;
        let (rows, cols) = match s.shape[..] {
            [r, c] => (r as usize, c as usize),
            _ => return Err(Error::Format(format!("section `{name}` is not a matrix"))),
        };
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok(FeatureMatrix { rows, cols, data })
    }

    fn matrix_or_empty(&self, name: &str, cols: usize) -> Result<FeatureMatrix> {
        if self.has(name) {
            self.matrix(name)
        } else {
            Ok(FeatureMatrix::zeros(0, cols))
        }
    }

    fn edge_map(&self, prefix: &str) -> Result<EdgeMap> {
        let mut out = EdgeMap::new();
        for ty in EdgeType::ALL {
            let name = format!("{prefix}edges.{ty}");
            if self.has(&name) {
                let list = self
                    .pairs(&name)?
                    .into_iter()
                    .map(|(u, v)| match (usize::try_from(u), usize::try_from(v)) {
                        (Ok(u), Ok(v)) => Ok((u, v)),
                        _ => Err(Error::Format(format!("negative node id in `{name}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.insert(ty, list);
            }
        }
        Ok(out)
    }

    fn node_count(&self, ty: NodeType) -> usize {
        self.manifest.node_counts.get(&ty).copied().unwrap_or(0) as usize
    }
}

/// Decode every record in `bytes`, verifying layout and checksums.
pub fn read_records(bytes: &[u8]) -> Result<Vec<Record<'_>>> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let (record, used) = read_record(&bytes[pos..])?;
        out.push(record);
        pos += used;
    }
    Ok(out)
}

fn read_record(bytes: &[u8]) -> Result<(Record<'_>, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing container magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(mlen))
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let start = 16 + mlen;
    let plen = manifest.payload_length as usize;
    let payload = bytes
        .get(start..start.saturating_add(plen))
        .ok_or_else(|| Error::Format(format!("truncated payload: need {plen} bytes")))?;

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.sections.len());
    for s in &manifest.sections {
        let elems: u64 = s.shape.iter().product();
        if elems * s.dtype.size() as u64 != s.length {
            return Err(Error::Format(format!(
                "section `{}` length does not match its shape",
                s.name
            )));
        }
        if s.offset
            .checked_add(s.length)
            .is_none_or(|end| end > plen as u64)
        {
            return Err(Error::Format(format!(
                "section `{}` runs past the payload",
                s.name
            )));
        }
        let found = crc32fast::hash(&payload[s.offset as usize..(s.offset + s.length) as usize]);
        if found != s.crc32 {
            return Err(Error::Checksum {
                section: s.name.clone(),
                expected: s.crc32,
                found,
            });
        }
        spans.push((s.offset, s.offset + s.length, &s.name));
    }
    spans.sort_unstable();
    if let Some(w) = spans.windows(2).find(|w| w[0].1 > w[1].0) {
        return Err(Error::Format(format!(
            "sections `{}` and `{}` overlap",
            w[0].2, w[1].2
        )));
    }
    Ok((Record { manifest, payload }, start + plen))
}

fn expect_kind(r: &Record<'_>, kind: Kind) -> Result<()> {
    if r.manifest.kind != kind {
        return Err(Error::Format(format!(
            "expected a {kind:?} record, found {:?}",
            r.manifest.kind
        )));
    }
    Ok(())
}

pub fn encode_graph(g: &ScoreGraph) -> Vec<u8> {
    let mut w = PayloadWriter::new(Kind::Graph);
    for ty in NodeType::ALL {
        w.manifest.node_counts.insert(ty, g.node_count(ty) as u64);
    }
    w.manifest.feature_width = g.note_features.cols as u64;
    w.manifest.options = Some(g.options);
    w.manifest.divisions_per_quarter = Some(g.divisions_per_quarter);
    w.manifest.source_name = Some(g.source_name.clone());

    w.edges("", &g.edges, None, false);
    w.f32s("note_features", &g.note_features);
    w.i64s(
        "note_onsets",
        vec![g.note_count as u64],
        g.note_onsets.iter().copied(),
    );
    w.i64s(
        "note_pitches",
        vec![g.note_count as u64],
        g.note_pitches.iter().copied(),
    );
    if g.options.metrical {
        w.f32s("beat_features", &g.beat_features);
        w.f32s("measure_features", &g.measure_features);
        w.i64s(
            "beat_spans",
            vec![g.beat_count as u64, 2],
            g.beat_spans.iter().flat_map(|&(a, b)| [a, b]),
        );
        w.i64s(
            "measure_spans",
            vec![g.measure_count as u64, 2],
            g.measure_spans.iter().flat_map(|&(a, b)| [a, b]),
        );
    }
    w.finish()
}

pub fn decode_graph(bytes: &[u8]) -> Result<ScoreGraph> {
    let records = read_records(bytes)?;
    let [r] = records.as_slice() else {
        return Err(Error::Format(format!(
            "graph file holds {} records, expected 1",
            records.len()
        )));
    };
    expect_kind(r, Kind::Graph)?;
    let k = r.manifest.feature_width as usize;
    let g = ScoreGraph {
        note_count: r.node_count(NodeType::Note),
        beat_count: r.node_count(NodeType::Beat),
        measure_count: r.node_count(NodeType::Measure),
        edges: r.edge_map("")?,
        note_features: r.matrix("note_features")?,
        beat_features: r.matrix_or_empty("beat_features", k)?,
        measure_features: r.matrix_or_empty("measure_features", k)?,
        note_onsets: r.i64s("note_onsets")?,
        note_pitches: r.i64s("note_pitches")?,
        beat_spans: if r.has("beat_spans") {
            r.pairs("beat_spans")?
        } else {
            Vec::new()
        },
        measure_spans: if r.has("measure_spans") {
            r.pairs("measure_spans")?
        } else {
            Vec::new()
        },
        divisions_per_quarter: r.manifest.divisions_per_quarter.unwrap_or(0),
        options: r.manifest.options.unwrap_or_default(),
        source_name: r.manifest.source_name.clone().unwrap_or_default(),
        ..Default::default()
    };
    g.check_invariants()
        .map_err(|e| Error::Format(format!("inconsistent graph record: {e}")))?;
    Ok(g)
}

pub fn write_graph_file(g: &ScoreGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_graph(g)).map_err(|e| Error::io(path, e))
}

pub fn read_graph_file(path: impl AsRef<Path>) -> Result<ScoreGraph> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_graph(&bytes)
}

const SCORE_RECORD_FIELDS: u64 = 10;

pub fn encode_batch(b: &Batch, batch_index: u64, cfg: &SamplerConfig) -> Vec<u8> {
    let mut w = PayloadWriter::new(Kind::Batch);
    for ty in NodeType::ALL {
        w.manifest.node_counts.insert(ty, b.node_count(ty) as u64);
    }
    w.manifest.feature_width = b.note_features.cols as u64;
    w.manifest.config = Some(cfg.clone());
    w.manifest.batch_index = Some(batch_index);
    w.manifest.layers = Some(b.layer_edges.len());

    for (i, layer) in b.layer_edges.iter().enumerate() {
        w.edges(&format!("layer{i}."), layer, Some(i), false);
    }
    w.edges("metrical.", &b.metrical_edges, None, true);
    w.f32s("note_features", &b.note_features);
    w.f32s("beat_features", &b.beat_features);
    w.f32s("measure_features", &b.measure_features);
    let n = b.note_source_ids.len() as u64;
    let ids = |v: &[usize]| v.iter().map(|&x| x as i64).collect::<Vec<_>>();
    w.i64s("note_onsets", vec![n], b.note_onsets.iter().copied());
    w.i64s("note_depth", vec![n], ids(&b.note_depth));
    w.i64s("note_source_ids", vec![n], ids(&b.note_source_ids));
    w.i64s(
        "beat_source_ids",
        vec![b.beat_source_ids.len() as u64],
        ids(&b.beat_source_ids),
    );
    w.i64s(
        "measure_source_ids",
        vec![b.measure_source_ids.len() as u64],
        ids(&b.measure_source_ids),
    );
    w.i64s(
        "scores",
        vec![b.scores.len() as u64, SCORE_RECORD_FIELDS],
        b.scores.iter().flat_map(|r| {
            [
                r.score_index,
                r.target_offset,
                r.target_count,
                r.note_offset,
                r.note_count,
                r.beat_offset,
                r.beat_count,
                r.measure_offset,
                r.measure_count,
                usize::from(r.truncated_tail),
            ]
            .map(|x| x as i64)
        }),
    );
    w.finish()
}

fn decode_batch_record(r: &Record<'_>) -> Result<(u64, Batch)> {
    expect_kind(r, Kind::Batch)?;
    let layers = r.manifest.layers.unwrap_or(0);
    let layer_edges = (0..layers)
        .map(|i| r.edge_map(&format!("layer{i}.")))
        .collect::<Result<Vec<_>>>()?;
    let rows = r.ids("scores")?;
    let scores = rows
        .chunks_exact(SCORE_RECORD_FIELDS as usize)
        .map(|c| ScoreRecord {
            score_index: c[0],
            target_offset: c[1],
            target_count: c[2],
            note_offset: c[3],
            note_count: c[4],
            beat_offset: c[5],
            beat_count: c[6],
            measure_offset: c[7],
            measure_count: c[8],
            truncated_tail: c[9] != 0,
        })
        .collect();
    let batch = Batch {
        layer_edges,
        metrical_edges: r.edge_map("metrical.")?,
        note_features: r.matrix("note_features")?,
        beat_features: r.matrix("beat_features")?,
        measure_features: r.matrix("measure_features")?,
        note_onsets: r.i64s("note_onsets")?,
        note_depth: r.ids("note_depth")?,
        note_source_ids: r.ids("note_source_ids")?,
        beat_source_ids: r.ids("beat_source_ids")?,
        measure_source_ids: r.ids("measure_source_ids")?,
        scores,
    };
    Ok((r.manifest.batch_index.unwrap_or(0), batch))
}

pub fn decode_batches(bytes: &[u8]) -> Result<Vec<(u64, Batch)>> {
    read_records(bytes)?
        .iter()
        .map(decode_batch_record)
        .collect()
}

/// Appends batch records to any writer.
pub struct BatchWriter<W: Write> {
    inner: W,
    cfg: SamplerConfig,
    written: u64,
}

impl<W: Write> BatchWriter<W> {
    pub fn new(inner: W, cfg: SamplerConfig) -> Self {
        BatchWriter {
            inner,
            cfg,
            written: 0,
        }
    }

    pub fn write(&mut self, batch_index: u64, batch: &Batch) -> std::io::Result<()> {
        self.inner
            .write_all(&encode_batch(batch, batch_index, &self.cfg))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn read_batch_file(path: impl AsRef<Path>) -> Result<Vec<(u64, Batch)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_batches(&bytes)
}

pub fn encode_params(p: &EncoderParams) -> Vec<u8> {
    let mut w = PayloadWriter::new(Kind::Params);
    w.manifest.layers = Some(p.layers.len());
    w.manifest.activation = Some(p.activation);
    w.manifest.feature_width = p.layers.first().map_or(0, |l| l.input_dim() as u64);
    for (i, layer) in p.layers.iter().enumerate() {
        for (ty, m) in &layer.relation_weights {
            w.f32s(format!("layer{i}.{ty}"), m);
        }
        w.f32s(format!("layer{i}.self"), &layer.self_weight);
    }
    w.finish()
}

pub fn decode_params(bytes: &[u8]) -> Result<EncoderParams> {
    let records = read_records(bytes)?;
    let [r] = records.as_slice() else {
        return Err(Error::Format(
            "params file must hold exactly one record".into(),
        ));
    };
    expect_kind(r, Kind::Params)?;
    let mut layers = Vec::new();
    for i in 0..r.manifest.layers.unwrap_or(0) {
        let mut relation_weights = BTreeMap::new();
        for ty in EdgeType::ALL {
            let name = format!("layer{i}.{ty}");
            if r.has(&name) {
                relation_weights.insert(ty, r.matrix(&name)?);
            }
        }
        layers.push(LayerParams {
            relation_weights,
            self_weight: r.matrix(&format!("layer{i}.self"))?,
        });
    }
    let p = EncoderParams {
        layers,
        activation: r.manifest.activation.unwrap_or_default(),
    };
    p.check()?;
    Ok(p)
}

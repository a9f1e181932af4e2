//! Python bindings. Arrays cross the boundary as `(bytes, dtype, shape)`
//! triples taken verbatim from the container sections, so
//! `numpy.frombuffer(buf, dtype).reshape(shape)` recovers them and the
//! values are identical to what `musegraph build` / `musegraph sample` write.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyString, PyTuple};

use musegraph::io::{self, Dtype, Record};
use musegraph::midi::parse_midi;
use musegraph::sampler::{
    parse_fanouts, unfold_targets, Batch, BatchStream, Fanout, SamplerConfig,
};
use musegraph::{build_score_graph, parse_note_json, Error, GraphOptions, ScoreGraph};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dtype_name(d: Dtype) -> &'static str {
    match d {
        Dtype::I64 => "<i8",
        Dtype::F32 => "<f4",
    }
}

/// name -> (bytes, dtype, shape) for every section of an encoded record.
fn sections_dict<'py>(py: Python<'py>, encoded: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let records = io::read_records(encoded).map_err(to_py)?;
    let record: &Record<'_> = &records[0];
    let out = PyDict::new(py);
    for s in &record.manifest.sections {
        let (bytes, _) = record.section_bytes(&s.name).map_err(to_py)?;
        let shape = PyTuple::new(py, s.shape.iter().copied())?;
        out.set_item(
            &s.name,
            (PyBytes::new(py, bytes), dtype_name(s.dtype), shape),
        )?;
    }
    Ok(out)
}

/// A score graph; arrays match the sections of its `.graph` file.
#[pyclass(frozen, module = "pymusegraph")]
struct Graph {
    inner: ScoreGraph,
}

#[pymethods]
impl Graph {
    #[getter]
    fn note_count(&self) -> usize {
        self.inner.note_count
    }

    #[getter]
    fn beat_count(&self) -> usize {
        self.inner.beat_count
    }

    #[getter]
    fn measure_count(&self) -> usize {
        self.inner.measure_count
    }

    #[getter]
    fn source_name(&self) -> &str {
        &self.inner.source_name
    }

    fn edge_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (ty, list) in &self.inner.edges {
            d.set_item(ty.name(), list.len())?;
        }
        Ok(d)
    }

    fn arrays<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        sections_dict(py, &io::encode_graph(&self.inner))
    }

    /// The exact bytes of the `.graph` file for this graph.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &io::encode_graph(&self.inner))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_graph_file(&self.inner, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(notes={}, beats={}, measures={}, edges={})",
            self.inner.note_count,
            self.inner.beat_count,
            self.inner.measure_count,
            self.inner.edge_count()
        )
    }
}

type ScoreRow = (
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    usize,
    bool,
);

/// One sampled batch; arrays match the sections of its record in a batch file.
#[pyclass(frozen, module = "pymusegraph")]
struct BatchView {
    index: u64,
    batch: Batch,
    config: SamplerConfig,
}

#[pymethods]
impl BatchView {
    #[getter]
    fn index(&self) -> u64 {
        self.index
    }

    #[getter]
    fn total_targets(&self) -> usize {
        self.batch.total_targets()
    }

    /// Per-score records: (score_index, target_offset, target_count,
    /// note_offset, note_count, beat_offset, beat_count, measure_offset,
    /// measure_count, truncated_tail).
    #[getter]
    fn scores(&self) -> Vec<ScoreRow> {
        self.batch
            .scores
            .iter()
            .map(|r| {
                (
                    r.score_index,
                    r.target_offset,
                    r.target_count,
                    r.note_offset,
                    r.note_count,
                    r.beat_offset,
                    r.beat_count,
                    r.measure_offset,
                    r.measure_count,
                    r.truncated_tail,
                )
            })
            .collect()
    }

    fn arrays<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        sections_dict(py, &io::encode_batch(&self.batch, self.index, &self.config))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &io::encode_batch(&self.batch, self.index, &self.config))
    }

    /// Target features as a (B, S, K) float32 tensor plus a (B, S) uint8 mask.
    #[pyo3(signature = (target_size=None))]
    fn unfold<'py>(
        &self,
        py: Python<'py>,
        target_size: Option<usize>,
    ) -> PyResult<Bound<'py, PyTuple>> {
        let s = target_size.unwrap_or(self.config.target_size);
        let view = unfold_targets(&self.batch, s).map_err(to_py)?;
        let (b, s, k) = view.shape();
        let data: Vec<u8> = view.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        let mask: Vec<u8> = view.mask.iter().map(|&m| u8::from(m)).collect();
        PyTuple::new(
            py,
            [
                (PyBytes::new(py, &data), "<f4", PyTuple::new(py, [b, s, k])?)
                    .into_pyobject(py)?
                    .into_any(),
                (PyBytes::new(py, &mask), "u1", PyTuple::new(py, [b, s])?)
                    .into_pyobject(py)?
                    .into_any(),
            ],
        )
    }

    fn __repr__(&self) -> String {
        format!(
            "BatchView(index={}, scores={}, targets={})",
            self.index,
            self.batch.scores.len(),
            self.batch.total_targets()
        )
    }
}

/// Batches produced ahead on a background thread, in order.
#[pyclass(module = "pymusegraph")]
struct BatchIterator {
    stream: Mutex<Option<BatchStream>>,
    config: SamplerConfig,
}

#[pymethods]
impl BatchIterator {
    fn __iter__(slf: PyRef<'_, Self>) -> PyRef<'_, Self> {
        slf
    }

    fn __next__(&self, py: Python<'_>) -> PyResult<Option<BatchView>> {
        let next = py.detach(|| {
            let mut guard = self.stream.lock().expect("stream lock poisoned");
            let item = guard.as_mut().and_then(Iterator::next);
            if item.is_none() {
                *guard = None;
            }
            item
        });
        match next {
            None => Ok(None),
            Some(Ok((index, batch))) => Ok(Some(BatchView {
                index,
                batch,
                config: self.config.clone(),
            })),
            Some(Err(e)) => Err(to_py(e)),
        }
    }
}

fn document_bytes(document: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    if let Ok(s) = document.cast::<PyString>() {
        return Ok(s.to_str()?.as_bytes().to_vec());
    }
    if let Ok(b) = document.cast::<PyBytes>() {
        return Ok(b.as_bytes().to_vec());
    }
    Err(PyValueError::new_err("document must be str or bytes"))
}

/// Build a graph from a note-list JSON document (str/bytes) or MIDI bytes.
#[pyfunction]
#[pyo3(signature = (document, format="notes-json", metrical=false, inverse=false, source_name=None))]
fn build_graph(
    document: &Bound<'_, PyAny>,
    format: &str,
    metrical: bool,
    inverse: bool,
    source_name: Option<String>,
) -> PyResult<Graph> {
    let bytes = document_bytes(document)?;
    let mut score = match format {
        "notes-json" => parse_note_json(&bytes).map_err(to_py)?,
        "midi" => parse_midi(&bytes).map_err(to_py)?.score,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown format `{other}` (notes-json or midi)"
            )))
        }
    };
    if let Some(name) = source_name {
        score.source_name = name;
    }
    let inner = build_score_graph(
        &score,
        GraphOptions {
            inverse_edges: inverse,
            metrical,
        },
    )
    .map_err(to_py)?;
    Ok(Graph { inner })
}

#[pyfunction]
fn read_graph(path: PathBuf) -> PyResult<Graph> {
    Ok(Graph {
        inner: io::read_graph_file(path).map_err(to_py)?,
    })
}

#[pyfunction]
fn read_batches(path: PathBuf) -> PyResult<Vec<BatchView>> {
    let bytes =
        std::fs::read(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
    let records = io::read_records(&bytes).map_err(to_py)?;
    let batches = io::decode_batches(&bytes).map_err(to_py)?;
    Ok(records
        .iter()
        .zip(batches)
        .map(|(r, (index, batch))| BatchView {
            index,
            batch,
            config: r.manifest.config.clone().unwrap_or_default(),
        })
        .collect())
}

fn fanouts_arg(fanout: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<Fanout>> {
    let Some(f) = fanout else {
        return Ok(SamplerConfig::pitch_spelling().fanouts);
    };
    if let Ok(s) = f.cast::<PyString>() {
        return parse_fanouts(s.to_str()?).map_err(to_py);
    }
    let values: Vec<i64> = f.extract()?;
    values
        .into_iter()
        .map(|v| match v {
            v if v < 0 => Ok(Fanout::Unbounded),
            v => Ok(Fanout::Limited(v as usize)),
        })
        .collect()
}

/// Stream `num_batches` batches over the graph files in `paths` (in the given
/// order). Negative fan-outs or `"unbounded"` keep every neighbor.
#[pyfunction]
#[pyo3(signature = (paths, batch_size=300, target_size=300, fanout=None, seed=0, num_batches=1, metrical=false, prefetch=1))]
#[allow(clippy::too_many_arguments)]
fn sample_batches(
    py: Python<'_>,
    paths: Vec<PathBuf>,
    batch_size: usize,
    target_size: usize,
    fanout: Option<&Bound<'_, PyAny>>,
    seed: u64,
    num_batches: u64,
    metrical: bool,
    prefetch: usize,
) -> PyResult<BatchIterator> {
    let config = SamplerConfig {
        target_size,
        batch_size,
        fanouts: fanouts_arg(fanout)?,
        seed,
        include_metrical: metrical,
    };
    config.validate().map_err(to_py)?;
    let corpus = py
        .detach(|| {
            paths
                .iter()
                .map(io::read_graph_file)
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(to_py)?;
    let stream = BatchStream::spawn(Arc::new(corpus), config.clone(), num_batches, prefetch)
        .map_err(to_py)?;
    Ok(BatchIterator {
        stream: Mutex::new(Some(stream)),
        config,
    })
}

#[pymodule]
fn pymusegraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<BatchView>()?;
    m.add_class::<BatchIterator>()?;
    m.add_function(wrap_pyfunction!(build_graph, m)?)?;
    m.add_function(wrap_pyfunction!(read_graph, m)?)?;
    m.add_function(wrap_pyfunction!(read_batches, m)?)?;
    m.add_function(wrap_pyfunction!(sample_batches, m)?)?;
    m.add("FORMAT_VERSION", io::FORMAT_VERSION)?;
    Ok(())
}

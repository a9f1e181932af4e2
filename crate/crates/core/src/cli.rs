//! `musegraph` command line: build, sample, stats, bench.
//!
//! Every flag can also come from a JSON object passed with `--config`; flags
//! given on the command line win. The object may be flat or hold one
//! sub-object per command (`{"sample": {"seed": 7}}`).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{
    build_note_edges, build_note_edges_reference, build_score_graph, EdgeType, GraphOptions,
    ScoreGraph,
};
use crate::io::{read_graph_file, write_graph_file, BatchWriter};
use crate::midi::parse_midi;
use crate::sampler::{batch_rng, parse_fanouts, sample_batch, BatchStream, Fanout, SamplerConfig};
use crate::score::{parse_note_json, Score};
use crate::synth::{random_score, SynthParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USER: i32 = 2;

pub const GRAPH_EXTENSION: &str = "graph";

#[derive(Debug, Parser)]
#[command(
    name = "musegraph",
    version,
    about = "Score graphs and neighbor-sampled batches"
)]
pub struct Cli {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a directory of scores into graph files.
    Build(BuildArgs),
    /// Draw mini-batches from a directory of graph files.
    Sample(SampleArgs),
    /// Summarize a directory of graph files.
    Stats(StatsArgs),
    /// Time the graph builders and the sampler on synthetic scores.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum InputFormat {
    #[value(name = "notes-json")]
    #[serde(rename = "notes-json", alias = "notes_json")]
    NotesJson,
    #[serde(rename = "midi")]
    Midi,
}

impl InputFormat {
    fn matches(self, path: &Path) -> bool {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match self {
            InputFormat::NotesJson => ext.as_deref() == Some("json"),
            InputFormat::Midi => matches!(ext.as_deref(), Some("mid" | "midi")),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct BuildArgs {
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Add beat and measure nodes.
    #[arg(long)]
    pub metrical: bool,
    /// Add reverse edges for during/follow/silence.
    #[arg(long)]
    pub inverse: bool,
}

/// Comma-separated fan-outs, one per layer; `unbounded` keeps every neighbor.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum FanoutList {
    List(Vec<Fanout>),
    #[serde(deserialize_with = "fanouts_from_text")]
    Text(Vec<Fanout>),
}

fn fanouts_from_text<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Vec<Fanout>, D::Error> {
    let s = String::deserialize(d)?;
    parse_fanouts(&s).map_err(serde::de::Error::custom)
}

impl FanoutList {
    fn into_vec(self) -> Vec<Fanout> {
        match self {
            FanoutList::List(v) | FanoutList::Text(v) => v,
        }
    }
}

impl FromStr for FanoutList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_fanouts(s).map(FanoutList::Text)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SampleArgs {
    #[arg(long, value_name = "DIR")]
    pub graphs: Option<PathBuf>,
    /// Scores per batch (B).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Target notes per score (S).
    #[arg(long)]
    pub target_size: Option<usize>,
    #[arg(long, value_name = "A,B,C")]
    #[serde(alias = "fanouts")]
    pub fanout: Option<FanoutList>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_batches: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Attach beat/measure context to the targets.
    #[arg(long)]
    #[serde(alias = "include_metrical")]
    pub metrical: bool,
    /// Finished batches allowed to wait for the writer.
    #[arg(long)]
    pub prefetch: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct StatsArgs {
    #[arg(long, value_name = "DIR")]
    pub graphs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct BenchArgs {
    #[arg(long)]
    pub notes: Option<usize>,
    #[arg(long)]
    pub repeat: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl BuildArgs {
    fn merge(self, c: Self) -> Self {
        BuildArgs {
            input: self.input.or(c.input),
            format: self.format.or(c.format),
            out: self.out.or(c.out),
            metrical: self.metrical || c.metrical,
            inverse: self.inverse || c.inverse,
        }
    }
}

impl SampleArgs {
    fn merge(self, c: Self) -> Self {
        SampleArgs {
            graphs: self.graphs.or(c.graphs),
            batch_size: self.batch_size.or(c.batch_size),
            target_size: self.target_size.or(c.target_size),
            fanout: self.fanout.or(c.fanout),
            seed: self.seed.or(c.seed),
            num_batches: self.num_batches.or(c.num_batches),
            out: self.out.or(c.out),
            metrical: self.metrical || c.metrical,
            prefetch: self.prefetch.or(c.prefetch),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let base = SamplerConfig::pitch_spelling();
        SamplerConfig {
            target_size: self.target_size.unwrap_or(base.target_size),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            fanouts: self
                .fanout
                .clone()
                .map_or(base.fanouts, FanoutList::into_vec),
            seed: self.seed.unwrap_or(0),
            include_metrical: self.metrical,
        }
    }
}

impl StatsArgs {
    fn merge(self, c: Self) -> Self {
        StatsArgs {
            graphs: self.graphs.or(c.graphs),
        }
    }
}

impl BenchArgs {
    fn merge(self, c: Self) -> Self {
        BenchArgs {
            notes: self.notes.or(c.notes),
            repeat: self.repeat.or(c.repeat),
            seed: self.seed.or(c.seed),
        }
    }
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(
    path: Option<&Path>,
    section: &str,
) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_slice(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value = match value.get(section) {
        Some(v) if v.is_object() => v.clone(),
        _ => value,
    };
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required option --{flag}")))
}

fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        EXIT_USER
    } else {
        EXIT_INTERNAL
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Build(a) => cmd_build(&a.merge(load_config(cfg, "build")?)),
        Command::Sample(a) => cmd_sample(&a.merge(load_config(cfg, "sample")?)),
        Command::Stats(a) => cmd_stats(&a.merge(load_config(cfg, "stats")?)),
        Command::Bench(a) => cmd_bench(&a.merge(load_config(cfg, "bench")?)),
    }
}

fn list_dir(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_score(path: &Path, format: InputFormat) -> Result<Score> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut score = match format {
        InputFormat::NotesJson => parse_note_json(&bytes)?,
        InputFormat::Midi => {
            let parsed = parse_midi(&bytes)?;
            for w in &parsed.warnings {
                log::warn!("{}: {w}", path.display());
            }
            parsed.score
        }
    };
    score.source_name = stem(path);
    Ok(score)
}

/// Parse one score file and write its graph next to the others in `out`.
pub fn build_one(
    path: &Path,
    format: InputFormat,
    options: GraphOptions,
    out: &Path,
) -> Result<ScoreGraph> {
    let score = load_score(path, format)?;
    let graph = build_score_graph(&score, options)?;
    write_graph_file(
        &graph,
        out.join(format!("{}.{GRAPH_EXTENSION}", stem(path))),
    )?;
    Ok(graph)
}

pub fn cmd_build(a: &BuildArgs) -> Result<i32> {
    let input = required(a.input.clone(), "input")?;
    let format = required(a.format, "format")?;
    let out = required(a.out.clone(), "out")?;
    let options = GraphOptions {
        inverse_edges: a.inverse,
        metrical: a.metrical,
    };

    let files = list_dir(&input, |p| format.matches(p))?;
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no {format:?} files in {}",
            input.display()
        )));
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let results: Vec<_> = files
        .par_iter()
        .map(|p| build_one(p, format, options, &out))
        .collect();

    let (mut notes, mut edges, mut built, mut code) = (0, 0, 0, EXIT_OK);
    for (path, res) in files.iter().zip(&results) {
        match res {
            Ok(g) => {
                built += 1;
                notes += g.note_count;
                edges += g.edge_count();
                println!(
                    "built {} notes={} edges={}",
                    path.display(),
                    g.note_count,
                    g.edge_count()
                );
            }
            Err(e) => {
                eprintln!("failed {}: {e}", path.display());
                code = code.max(exit_code(e));
            }
        }
    }
    let failed = files.len() - built;
    println!("summary graphs={built} failed={failed} notes={notes} edges={edges}");
    // A user error anywhere outranks internal ones for the exit status.
    Ok(
        if failed > 0
            && results
                .iter()
                .any(|r| r.as_ref().is_err_and(Error::is_user_error))
        {
            EXIT_USER
        } else {
            code
        },
    )
}

/// Read every graph file in `dir`, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, ScoreGraph)>> {
    let files = list_dir(dir, |p| p.extension().is_some_and(|e| e == GRAPH_EXTENSION))?;
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .{GRAPH_EXTENSION} files in {}",
            dir.display()
        )));
    }
    files
        .into_par_iter()
        .map(|p| {
            let g = read_graph_file(&p).map_err(|e| match e {
                Error::Format(m) => Error::Format(format!("{}: {m}", p.display())),
                other => other,
            })?;
            Ok((p, g))
        })
        .collect()
}

pub fn cmd_sample(a: &SampleArgs) -> Result<i32> {
    let dir = required(a.graphs.clone(), "graphs")?;
    let out = required(a.out.clone(), "out")?;
    let cfg = a.sampler_config();
    cfg.validate()?;
    let count = a.num_batches.unwrap_or(1);
    let corpus: Vec<ScoreGraph> = load_corpus(&dir)?.into_iter().map(|(_, g)| g).collect();
    let scores = corpus.len();

    let stream = BatchStream::spawn(
        Arc::new(corpus),
        cfg.clone(),
        count,
        a.prefetch.unwrap_or(2),
    )?;
    let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    let mut writer = BatchWriter::new(BufWriter::new(file), cfg.clone());
    let (mut targets, mut edges) = (0usize, 0usize);
    for item in stream {
        let (index, batch) = item?;
        targets += batch.total_targets();
        edges += batch.edge_count();
        writer
            .write(index, &batch)
            .map_err(|e| Error::io(&out, e))?;
        log::debug!("batch {index}: {} targets", batch.total_targets());
    }
    let written = writer.written();
    writer
        .into_inner()
        .flush()
        .map_err(|e| Error::io(&out, e))?;
    println!(
        "summary batches={written} scores={scores} B={} S={} fanout={} seed={} targets={targets} edges={edges} out={}",
        cfg.batch_size,
        cfg.target_size,
        cfg.fanouts.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        cfg.seed,
        out.display()
    );
    Ok(EXIT_OK)
}

const DEGREE_BUCKETS: [(usize, usize); 8] = [
    (0, 0),
    (1, 1),
    (2, 2),
    (3, 3),
    (4, 7),
    (8, 15),
    (16, 31),
    (32, usize::MAX),
];
const GROUP_BUCKETS: [(usize, usize); 8] = [
    (1, 1),
    (2, 2),
    (3, 3),
    (4, 4),
    (5, 5),
    (6, 7),
    (8, 15),
    (16, usize::MAX),
];

fn bucket_label((lo, hi): (usize, usize)) -> String {
    match (lo, hi) {
        (l, h) if l == h => l.to_string(),
        (l, usize::MAX) => format!("{l}+"),
        (l, h) => format!("{l}-{h}"),
    }
}

fn bucket_of(buckets: &[(usize, usize)], x: usize) -> usize {
    buckets
        .iter()
        .position(|&(lo, hi)| (lo..=hi).contains(&x))
        .unwrap_or(buckets.len() - 1)
}

#[derive(Debug, Default, Clone)]
pub struct GraphStats {
    pub notes: usize,
    pub beats: usize,
    pub measures: usize,
    pub edges: BTreeMap<EdgeType, usize>,
    /// Note in-degree histogram per note relation.
    pub in_degree: BTreeMap<EdgeType, Vec<usize>>,
    pub onset_groups: Vec<usize>,
}

impl GraphStats {
    pub fn of(g: &ScoreGraph) -> Self {
        let mut s = GraphStats {
            notes: g.note_count,
            beats: g.beat_count,
            measures: g.measure_count,
            onset_groups: vec![0; GROUP_BUCKETS.len()],
            ..Default::default()
        };
        for (&ty, list) in &g.edges {
            s.edges.insert(ty, list.len());
            if ty.is_note_relation() {
                let mut deg = vec![0usize; g.note_count];
                for &(_, v) in list {
                    deg[v] += 1;
                }
                s.in_degree
                    .insert(ty, Self::histogram(&DEGREE_BUCKETS, &deg));
            }
        }
        for group in g.note_onsets.chunk_by(|a, b| a == b) {
            s.onset_groups[bucket_of(&GROUP_BUCKETS, group.len())] += 1;
        }
        s
    }

    fn histogram(buckets: &[(usize, usize)], xs: &[usize]) -> Vec<usize> {
        let mut h = vec![0; buckets.len()];
        for &x in xs {
            h[bucket_of(buckets, x)] += 1;
        }
        h
    }

    pub fn add(&mut self, o: &GraphStats) {
        self.notes += o.notes;
        self.beats += o.beats;
        self.measures += o.measures;
        for (ty, n) in &o.edges {
            *self.edges.entry(*ty).or_default() += n;
        }
        for (ty, h) in &o.in_degree {
            let mine = self
                .in_degree
                .entry(*ty)
                .or_insert_with(|| vec![0; h.len()]);
            mine.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        }
        self.onset_groups.resize(GROUP_BUCKETS.len(), 0);
        self.onset_groups
            .iter_mut()
            .zip(&o.onset_groups)
            .for_each(|(a, b)| *a += b);
    }

    fn row(&self, name: &str, types: &[EdgeType]) -> String {
        let mut line = format!(
            "{name:<24} notes={} beats={} measures={} edges={}",
            self.notes,
            self.beats,
            self.measures,
            self.edges.values().sum::<usize>()
        );
        for ty in types {
            line.push_str(&format!(
                " {ty}={}",
                self.edges.get(ty).copied().unwrap_or(0)
            ));
        }
        line
    }
}

pub fn cmd_stats(a: &StatsArgs) -> Result<i32> {
    let dir = required(a.graphs.clone(), "graphs")?;
    let corpus = load_corpus(&dir)?;
    let per_file: Vec<_> = corpus.iter().map(|(p, g)| (p, GraphStats::of(g))).collect();
    let mut total = GraphStats::default();
    for (_, s) in &per_file {
        total.add(s);
    }
    let types: Vec<EdgeType> = EdgeType::ALL
        .into_iter()
        .filter(|t| total.edges.contains_key(t))
        .collect();

    for (p, s) in &per_file {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        println!("{}", s.row(&name, &types));
    }
    println!(
        "{}",
        total.row(&format!("total({})", per_file.len()), &types)
    );

    let fmt_hist = |buckets: &[(usize, usize)], h: &[usize]| {
        buckets
            .iter()
            .zip(h)
            .map(|(b, n)| format!("{}:{n}", bucket_label(*b)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (ty, h) in &total.in_degree {
        println!("in-degree {ty:<16} {}", fmt_hist(&DEGREE_BUCKETS, h));
    }
    println!(
        "onset-group sizes         {}",
        fmt_hist(&GROUP_BUCKETS, &total.onset_groups)
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub edges: usize,
    pub reference_ms: f64,
    pub optimized_ms: f64,
    pub sample_ms: f64,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// One timing run on a fresh synthetic score of `notes` notes.
pub fn bench_once(notes: usize, seed: u64) -> Result<BenchRow> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let score = random_score(&mut rng, &SynthParams::fixed(notes));

    let t = Instant::now();
    let reference = build_note_edges_reference(&score);
    let reference_ms = millis(t);

    let t = Instant::now();
    let optimized = build_note_edges(&score);
    let optimized_ms = millis(t);
    if optimized != reference {
        return Err(Error::Internal(
            "optimized and reference builders disagree".into(),
        ));
    }

    let graph = build_score_graph(&score, GraphOptions::default())?;
    let corpus = [graph];
    let cfg = SamplerConfig {
        seed,
        ..SamplerConfig::default()
    };
    let t = Instant::now();
    sample_batch(&corpus, &cfg, &mut batch_rng(seed, 0))?;
    let sample_ms = millis(t);

    Ok(BenchRow {
        edges: crate::graph::edge_count(&optimized),
        reference_ms,
        optimized_ms,
        sample_ms,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let notes = required(a.notes, "notes")?;
    let repeat = a.repeat.unwrap_or(3);
    if notes == 0 {
        return Err(Error::Config("--notes must be at least 1".into()));
    }
    if repeat == 0 {
        return Err(Error::Config("--repeat must be at least 1".into()));
    }
    let seed = a.seed.unwrap_or(0);
    println!(
        "{:<8} {:>7} {:>9} {:>14} {:>14} {:>11}",
        "run", "notes", "edges", "reference_ms", "optimized_ms", "sample_ms"
    );
    let mut rows = Vec::with_capacity(repeat);
    for r in 0..repeat {
        let row = bench_once(notes, seed + r as u64)?;
        println!(
            "{:<8} {notes:>7} {:>9} {:>14.3} {:>14.3} {:>11.3}",
            r + 1,
            row.edges,
            row.reference_ms,
            row.optimized_ms,
            row.sample_ms
        );
        rows.push(row);
    }
    let med = |f: fn(&BenchRow) -> f64| median(rows.iter().map(f).collect());
    println!(
        "{:<8} {notes:>7} {:>9} {:>14.3} {:>14.3} {:>11.3}",
        "median",
        median(rows.iter().map(|r| r.edges as f64).collect()),
        med(|r| r.reference_ms),
        med(|r| r.optimized_ms),
        med(|r| r.sample_ms)
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_fills_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"sample": {"seed": 7, "batch_size": 200, "target_size": 500, "fanout": "2,unbounded"}}"#).unwrap();
        let loaded: SampleArgs = load_config(Some(&path), "sample").unwrap();
        let cli = SampleArgs {
            seed: Some(1),
            ..Default::default()
        };
        let cfg = cli.merge(loaded).sampler_config();
        assert_eq!(cfg.seed, 1);
        assert_eq!((cfg.batch_size, cfg.target_size), (200, 500));
        assert_eq!(cfg.fanouts, vec![Fanout::Limited(2), Fanout::Unbounded]);

        fs::write(&path, r#"{"fanouts": [4, 4], "metrical": true}"#).unwrap();
        let flat: SampleArgs = load_config(Some(&path), "sample").unwrap();
        let cfg = SampleArgs::default().merge(flat).sampler_config();
        assert_eq!(cfg.fanouts, vec![Fanout::Limited(4); 2]);
        assert!(cfg.include_metrical);
    }

    #[test]
    fn cadence_flags_give_cadence_preset() {
        let a = SampleArgs {
            batch_size: Some(200),
            target_size: Some(500),
            ..Default::default()
        };
        assert_eq!(a.sampler_config(), SamplerConfig::cadence());
        assert_eq!(
            SampleArgs::default().sampler_config(),
            SamplerConfig::pitch_spelling()
        );
    }

    #[test]
    fn histogram_buckets() {
        assert_eq!(bucket_of(&DEGREE_BUCKETS, 0), 0);
        assert_eq!(bucket_of(&DEGREE_BUCKETS, 5), 4);
        assert_eq!(bucket_of(&DEGREE_BUCKETS, 1000), 7);
        assert_eq!(bucket_label((32, usize::MAX)), "32+");
        assert_eq!(bucket_label((4, 7)), "4-7");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["musegraph", "bench", "--notes", "0"]), EXIT_USER);
        assert_eq!(run(["musegraph", "frobnicate"]), EXIT_USER);
        assert_eq!(run(["musegraph", "--help"]), EXIT_OK);
    }
}

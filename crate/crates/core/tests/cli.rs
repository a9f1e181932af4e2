use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use musegraph::io::{read_batch_file, read_graph_file, read_records};
use musegraph::midi::score_to_midi;
use musegraph::score::to_note_json;
use musegraph::synth::{random_score, SynthParams};
use musegraph::{Note, SamplerConfig, Score};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn musegraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musegraph"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn chorale() -> Score {
    // Four voices, 25 quarter-note chords.
    let notes = (0..100)
        .map(|i| {
            Note::new(
                i,
                (i / 4) as i64 * 4,
                4,
                [48, 55, 64, 72][i % 4] + (i / 4 % 5) as i64,
            )
        })
        .collect();
    Score::new(notes, 4)
}

fn write_scores(dir: &Path, n: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let score = random_score(&mut rng, &SynthParams::varied(120));
        fs::write(dir.join(format!("s{i}.json")), to_note_json(&score)).unwrap();
    }
}

#[test]
fn build_two_midi_files() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("midi");
    let out = tmp.path().join("graphs");
    fs::create_dir(&input).unwrap();
    fs::write(input.join("a.mid"), score_to_midi(&chorale())).unwrap();
    fs::write(
        input.join("b.midi"),
        score_to_midi(&Score::new(vec![Note::new(0, 480, 480, 60)], 480)),
    )
    .unwrap();

    let o = musegraph(&[
        "build",
        "--input",
        s(&input),
        "--format",
        "midi",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("summary graphs=2 failed=0"));
    let g = read_graph_file(out.join("a.graph")).unwrap();
    assert_eq!(g.note_count, 100);
    assert_eq!(g.source_name, "a");
    assert!(out.join("b.graph").exists());
}

#[test]
fn malformed_file_fails_build_but_others_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let out = tmp.path().join("out");
    write_scores(&input, 2, 1);
    fs::write(
        input.join("broken.json"),
        br#"{"divisions_per_quarter": 4, "notes": [{"onset": 0, "duration": 4, "pitch": 128}]}"#,
    )
    .unwrap();

    let o = musegraph(&[
        "build",
        "--input",
        s(&input),
        "--format",
        "notes-json",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.json"));
    let written: Vec<_> = fs::read_dir(&out).unwrap().collect();
    assert_eq!(written.len(), 2);
}

#[test]
fn metrical_flag_adds_sections() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_scores(&input, 1, 2);
    for (flag, expect) in [(None, false), (Some("--metrical"), true)] {
        let out = tmp.path().join(format!("out{expect}"));
        let mut args = vec![
            "build",
            "--input",
            s(&input),
            "--format",
            "notes-json",
            "--out",
            s(&out),
        ];
        args.extend(flag);
        assert_eq!(musegraph(&args).status.code(), Some(0));
        let bytes = fs::read(out.join("s0.graph")).unwrap();
        let m = &read_records(&bytes).unwrap()[0].manifest;
        assert_eq!(m.section("beat_features").is_some(), expect);
        assert_eq!(m.section("measure_spans").is_some(), expect);
    }
}

#[test]
fn sample_writes_requested_batches_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let graphs = tmp.path().join("graphs");
    write_scores(&input, 5, 3);
    assert_eq!(
        musegraph(&[
            "build",
            "--input",
            s(&input),
            "--format",
            "notes-json",
            "--out",
            s(&graphs)
        ])
        .status
        .code(),
        Some(0)
    );

    let out = tmp.path().join("batches.bin");
    let o = musegraph(&[
        "sample",
        "--graphs",
        s(&graphs),
        "--batch-size",
        "200",
        "--target-size",
        "500",
        "--seed",
        "7",
        "--num-batches",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let batches = read_batch_file(&out).unwrap();
    assert_eq!(batches.len(), 4);
    assert_eq!(
        batches.iter().map(|b| b.0).collect::<Vec<_>>(),
        vec![0, 1, 2, 3]
    );
    assert!(batches.iter().all(|(_, b)| b.scores.len() == 5));

    let bytes = fs::read(&out).unwrap();
    let cfg = read_records(&bytes).unwrap()[0]
        .manifest
        .config
        .clone()
        .unwrap();
    assert_eq!(
        cfg,
        SamplerConfig {
            seed: 7,
            ..SamplerConfig::cadence()
        }
    );
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let graphs = tmp.path().join("graphs");
    write_scores(&input, 3, 4);
    let out = tmp.path().join("b.bin");
    let cfg = tmp.path().join("run.json");
    let json = serde_json::json!({
        "build": {"input": input, "format": "notes-json", "out": graphs},
        "sample": {"graphs": graphs, "out": out, "seed": 9, "num_batches": 2, "fanout": "2,2"},
    });
    fs::write(&cfg, json.to_string()).unwrap();
    assert_eq!(
        musegraph(&["build", "--config", s(&cfg)]).status.code(),
        Some(0)
    );
    assert_eq!(
        musegraph(&["sample", "--config", s(&cfg), "--num-batches", "3"])
            .status
            .code(),
        Some(0)
    );
    let batches = read_batch_file(&out).unwrap();
    assert_eq!(batches.len(), 3);
    assert!(batches.iter().all(|(_, b)| b.layer_edges.len() == 2));
}

#[test]
fn sample_and_stats_reject_empty_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.bin");
    let o = musegraph(&["sample", "--graphs", s(tmp.path()), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no .graph files"));
    assert_eq!(
        musegraph(&["stats", "--graphs", s(tmp.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn stats_reports_per_file_and_total() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let graphs = tmp.path().join("graphs");
    fs::create_dir(&input).unwrap();
    fs::write(input.join("chorale.json"), to_note_json(&chorale())).unwrap();
    assert_eq!(
        musegraph(&[
            "build",
            "--input",
            s(&input),
            "--format",
            "notes-json",
            "--out",
            s(&graphs)
        ])
        .status
        .code(),
        Some(0)
    );

    let o = musegraph(&["stats", "--graphs", s(&graphs)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.lines()
            .any(|l| l.starts_with("chorale.graph") && l.contains("notes=100")),
        "{text}"
    );
    assert!(text.contains("onset=300"), "{text}");
    assert!(text.contains("onset-group sizes"));

    fs::write(input.join("second.json"), to_note_json(&chorale())).unwrap();
    musegraph(&[
        "build",
        "--input",
        s(&input),
        "--format",
        "notes-json",
        "--out",
        s(&graphs),
    ]);
    let text =
        String::from_utf8_lossy(&musegraph(&["stats", "--graphs", s(&graphs)]).stdout).into_owned();
    assert!(text.lines().any(|l| l.starts_with("second.graph")));
    assert!(
        text.lines()
            .any(|l| l.starts_with("total(2)") && l.contains("notes=200")),
        "{text}"
    );
}

#[test]
fn bench_rows_and_rejections() {
    let o = musegraph(&["bench", "--notes", "300", "--repeat", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    assert!(lines[4].starts_with("median"));

    let o = musegraph(&["bench", "--notes", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(musegraph(&["bench"]).status.code(), Some(2));
}

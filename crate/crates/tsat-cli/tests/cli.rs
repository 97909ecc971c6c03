//! End-to-end command tests: exit codes, determinism of emitted files, and
//! file-level contracts.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn tsat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsat"))
        .args(args)
        .current_dir(dir)
        .env_remove("TSAT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("missing {}: {}", rel, e))
}

fn snapshot(dir: &Path, rel_files: &[&str]) -> HashMap<String, Vec<u8>> {
    rel_files
        .iter()
        .map(|f| (f.to_string(), read(dir, f)))
        .collect()
}

/// Small but split-friendly synthetic dataset for command tests.
fn make_dataset(dir: &Path) -> String {
    let out = tsat(
        &[
            "synth",
            "--synth-series",
            "3",
            "--synth-steps",
            "420",
            "--synth-groups",
            "2",
            "--synth-noise-std",
            "0.05",
            "--seed",
            "11",
            "--out-dir",
            "data",
        ],
        dir,
    );
    assert_code(&out, 0);
    dir.join("data/synthetic.csv").display().to_string()
}

const FAST_TRAIN: &[&str] = &[
    "--backcast-len", "24",
    "--forecast-len", "6",
    "--stride", "8",
    "--num-imfs", "2",
    "--model-dim", "8",
    "--key-dim", "4",
    "--value-dim", "4",
    "--num-heads", "2",
    "--ffn-width", "16",
    "--max-epochs", "4",
    "--patience", "3",
    "--batch-size", "16",
    "--initial-lr", "1e-3",
];

#[test]
fn exit_codes_for_user_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Missing input file.
    let out = tsat(&["decompose", "--input", "nope.csv", "--out-dir", "o1"], dir);
    assert_code(&out, 2);

    // Empty file.
    std::fs::write(dir.join("empty.csv"), "").unwrap();
    let out = tsat(&["decompose", "--input", "empty.csv", "--out-dir", "o2"], dir);
    assert_code(&out, 2);

    // Non-numeric cell (strict parse) with its location reported.
    std::fs::write(dir.join("bad.csv"), "a,b\n1,2\n3,abc\n").unwrap();
    let out = tsat(&["decompose", "--input", "bad.csv", "--out-dir", "o3"], dir);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 3"), "stderr: {}", stderr);
    assert!(stderr.contains("column 2"), "stderr: {}", stderr);

    // Out-of-range threshold.
    let input = make_dataset(dir);
    let out = tsat(
        &["build-graph", "--input", &input, "--threshold", "1.5", "--out-dir", "o4"],
        dir,
    );
    assert_code(&out, 2);

    // Unknown flag is a clap usage error (also 2).
    let out = tsat(&["train", "--no-such-flag"], dir);
    assert_code(&out, 2);

    // Missing required input.
    let out = tsat(&["train", "--out-dir", "o5"], dir);
    assert_code(&out, 2);
}

#[test]
fn decompose_reconstruction_from_emitted_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);
    let out = tsat(
        &["decompose", "--input", &input, "--k-max", "3", "--out-dir", "dec"],
        dir,
    );
    assert_code(&out, 0);

    // Recover per-(series, t) sums of all components and compare to input.
    let imfs = String::from_utf8(read(dir, "dec/imfs.csv")).unwrap();
    let mut sums: HashMap<(String, usize), f64> = HashMap::new();
    for line in imfs.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let t: usize = cells[2].parse().unwrap();
        let v: f64 = cells[3].parse().unwrap();
        *sums.entry((cells[0].to_string(), t)).or_insert(0.0) += v;
    }
    let raw = String::from_utf8(read(dir, "data/synthetic.csv")).unwrap();
    let mut lines = raw.lines();
    let names: Vec<String> = lines.next().unwrap().split(',').map(|s| s.to_string()).collect();
    let mut max_err: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (t, line) in lines.enumerate() {
        for (i, cell) in line.split(',').enumerate() {
            let x: f64 = cell.parse().unwrap();
            let got = sums[&(names[i].clone(), t)];
            max_err = max_err.max((x - got).abs());
            max_abs = max_abs.max(x.abs());
        }
    }
    assert!(max_err / max_abs < 1e-10, "reconstruction error {}", max_err);
}

#[test]
fn build_graph_manifest_archive_and_identity_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);

    let out = tsat(
        &[
            "build-graph", "--input", &input,
            "--backcast-len", "32", "--forecast-len", "8",
            "--stride", "50", "--num-imfs", "2", "--out-dir", "bg",
        ],
        dir,
    );
    assert_code(&out, 0);
    let manifest = String::from_utf8(read(dir, "bg/windows.csv")).unwrap();
    // 420 steps, window 40, stride 50 -> floor((420-40)/50) + 1 = 8 windows.
    assert_eq!(manifest.lines().count() - 1, 8);
    let n_graphs = std::fs::read_dir(dir.join("bg/graphs")).unwrap().count();
    assert_eq!(n_graphs, 8);
    for entry in std::fs::read_dir(dir.join("bg/graphs")).unwrap() {
        tsat::graph_io::import_graph(entry.unwrap().path()).expect("re-import validates");
    }

    // Archive form contains the same graphs in order.
    let out = tsat(
        &[
            "build-graph", "--input", &input,
            "--backcast-len", "32", "--forecast-len", "8",
            "--stride", "50", "--num-imfs", "2", "--archive", "true", "--out-dir", "bga",
        ],
        dir,
    );
    assert_code(&out, 0);
    let archived = tsat::graph_io::import_archive(dir.join("bga/graphs.tsga")).unwrap();
    assert_eq!(archived.len(), 8);
    let first = tsat::graph_io::import_graph(dir.join("bg/graphs/graph_000000.tsg")).unwrap();
    assert_eq!(archived[0], first);

    // threshold 1.0 keeps only self-loops.
    let out = tsat(
        &[
            "build-graph", "--input", &input,
            "--backcast-len", "32", "--forecast-len", "8",
            "--stride", "100", "--num-imfs", "2", "--threshold", "1.0", "--out-dir", "bgid",
        ],
        dir,
    );
    assert_code(&out, 0);
    for entry in std::fs::read_dir(dir.join("bgid/graphs")).unwrap() {
        let g = tsat::graph_io::import_graph(entry.unwrap().path()).unwrap();
        for i in 0..g.num_series() {
            for j in 0..g.num_series() {
                assert_eq!(g.adjacency.at(i, j), u8::from(i == j));
            }
        }
    }
}

#[test]
fn train_outputs_are_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);

    let mut args = vec!["train", "--input", input.as_str(), "--seed", "5", "--out-dir", "tr"];
    args.extend_from_slice(FAST_TRAIN);
    let out = tsat(&args, dir);
    assert_code(&out, 0);

    let files = [
        "tr/checkpoint.tsc",
        "tr/loss_curve.csv",
        "tr/eval_report.csv",
        "tr/eval_report.txt",
        "tr/forecasts_denormalized.csv",
        "tr/normalized.csv",
        "tr/windows.csv",
        "tr/resolved_config.toml",
    ];
    let before = snapshot(dir, &files);
    let out = tsat(&args, dir);
    assert_code(&out, 0);
    for f in &files {
        assert_eq!(before[*f], read(dir, f), "file {} differs across reruns", f);
    }

    // Checkpoint round trip is exact.
    let (cfg, params) = tsat::checkpoint::load_checkpoint(dir.join("tr/checkpoint.tsc")).unwrap();
    let text = tsat::checkpoint::checkpoint_to_text(&params, &cfg);
    assert_eq!(text.as_bytes(), read(dir, "tr/checkpoint.tsc").as_slice());

    // The echoed config alone reproduces the run byte-for-byte.
    let out = tsat(
        &["train", "--config", "tr/resolved_config.toml", "--out-dir", "tr2"],
        dir,
    );
    assert_code(&out, 0);
    for f in &["loss_curve.csv", "eval_report.csv", "checkpoint.tsc"] {
        assert_eq!(
            read(dir, &format!("tr/{}", f)),
            read(dir, &format!("tr2/{}", f)),
            "{} differs when re-run from the echoed config",
            f
        );
    }
}

#[test]
fn evaluate_and_embed_consume_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);
    let mut args = vec!["train", "--input", input.as_str(), "--seed", "9", "--out-dir", "tr"];
    args.extend_from_slice(FAST_TRAIN);
    assert_code(&tsat(&args, dir), 0);

    let out = tsat(
        &[
            "evaluate", "--checkpoint", "tr/checkpoint.tsc", "--input", &input,
            "--stride", "8", "--out-dir", "ev",
        ],
        dir,
    );
    assert_code(&out, 0);
    let report = String::from_utf8(read(dir, "ev/eval_report.csv")).unwrap();
    assert!(report.lines().count() > 2);
    // Same checkpoint, same data: the metric columns must agree with the
    // test report train wrote (the training metadata columns differ).
    let trained = String::from_utf8(read(dir, "tr/eval_report.csv")).unwrap();
    let metrics = |text: &str| -> Vec<String> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(metrics(&report), metrics(&trained));

    let out = tsat(
        &[
            "embed", "--checkpoint", "tr/checkpoint.tsc", "--input", &input,
            "--stride", "40", "--out-dir", "em",
        ],
        dir,
    );
    assert_code(&out, 0);
    let nodes = String::from_utf8(read(dir, "em/node_embeddings.csv")).unwrap();
    let pooled = String::from_utf8(read(dir, "em/graph_embeddings.csv")).unwrap();
    // 420 steps, window 30, stride 40 -> 10 windows; 3 series each.
    assert_eq!(pooled.lines().count() - 1, 10);
    assert_eq!(nodes.lines().count() - 1, 10 * 3);

    // Mismatched data is rejected as user error.
    let out = tsat(
        &[
            "synth", "--synth-series", "4", "--synth-steps", "420", "--seed", "1",
            "--out-dir", "other",
        ],
        dir,
    );
    assert_code(&out, 0);
    let out = tsat(
        &[
            "evaluate", "--checkpoint", "tr/checkpoint.tsc",
            "--input", "other/synthetic.csv", "--out-dir", "ev2",
        ],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn ablate_emits_table_shaped_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);
    let mut args = vec!["ablate", "--input", input.as_str(), "--seed", "3", "--out-dir", "ab"];
    args.extend_from_slice(FAST_TRAIN);
    let out = tsat(&args, dir);
    assert_code(&out, 0);

    let table = String::from_utf8(read(dir, "ab/ablation.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Method"));
    assert!(lines[1].starts_with("TSAT w/o graph"));
    assert!(lines[2].starts_with("TSAT w/o edge"));
    assert!(lines[3].starts_with("TSAT w/o adj"));
    assert!(lines[4].starts_with("TSAT"));

    let csv = String::from_utf8(read(dir, "ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    // Byte-identical rerun.
    let before = snapshot(dir, &["ab/ablation.csv", "ab/ablation.txt"]);
    assert_code(&tsat(&args, dir), 0);
    assert_eq!(before["ab/ablation.csv"], read(dir, "ab/ablation.csv"));
    assert_eq!(before["ab/ablation.txt"], read(dir, "ab/ablation.txt"));
}

#[test]
fn train_can_dump_gradient_norms() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let input = make_dataset(dir);
    let mut args = vec![
        "train", "--input", input.as_str(), "--seed", "4", "--out-dir", "tg",
        "--dump-grad-norms", "true",
    ];
    args.extend_from_slice(FAST_TRAIN);
    assert_code(&tsat(&args, dir), 0);
    let dump = String::from_utf8(read(dir, "tg/grad_norms.txt")).unwrap();
    assert!(dump.contains("grad_l2"));
    assert!(dump.contains("param"));
}

#[test]
fn out_dir_env_var_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_tsat"))
        .args([
            "synth", "--synth-series", "2", "--synth-steps", "300", "--seed", "2",
        ])
        .current_dir(dir)
        .env("TSAT_OUT_DIR", "env-out")
        .output()
        .unwrap();
    assert_code(&out, 0);
    assert!(dir.join("env-out/synthetic.csv").exists());
}

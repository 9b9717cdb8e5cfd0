//! End-to-end runs of the `drasic` binary on the cached MNIST files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use drasic::data::{default_data_dir, load_mnist, DataSplit};
use image::GrayImage;
use tempfile::TempDir;

fn drasic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drasic"))
        .current_dir(dir)
        .env_remove("DRASIC_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("spawn drasic")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = drasic(dir, args);
    assert!(
        out.status.success(),
        "drasic {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    drasic(dir, args).status.code().expect("exit code")
}

/// A split plus one small distributed model, built once for the whole file.
struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        ok(
            &root,
            &[
                "split",
                "--strategy",
                "by_label",
                "--m",
                "3",
                "--out",
                "split",
            ],
        );
        ok(
            &root,
            &[
                "train",
                "--split",
                "split",
                "--desk",
                "--regime",
                "distributed",
                "--epochs",
                "1",
                "--limit",
                "40",
                "--iterations",
                "4",
                "--out",
                "run",
            ],
        );
        let test = load_mnist(&default_data_dir(), DataSplit::Test).unwrap();
        for i in 0..2 {
            let px: Vec<u8> = test.images.data()[i * 784..(i + 1) * 784]
                .iter()
                .map(|&v| (v * 255.0).round() as u8)
                .collect();
            GrayImage::from_raw(28, 28, px)
                .unwrap()
                .save(root.join(format!("digit{i}.pgm")))
                .unwrap();
        }
        Fixture { _tmp: tmp, root }
    })
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(
            dir.path(),
            &["split", "--strategy", "bogus", "--m", "2", "--out", "s"]
        ),
        2
    );
    assert_eq!(code(dir.path(), &["frobnicate"]), 2);
    assert_eq!(code(dir.path(), &["train", "--desk", "--epochs", "1"]), 2);
    assert!(
        !dir.path().join("runs").exists(),
        "nothing may be trained without a split"
    );
}

#[test]
fn split_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(
            dir.path(),
            &[
                "split",
                "--strategy",
                "random",
                "--m",
                "4",
                "--seed",
                "7",
                "--out",
                out,
            ],
        );
    }
    for f in [
        "train.csv",
        "test.csv",
        "correlation.csv",
        "correlation.svg",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = fs::read_to_string(dir.path().join("a/manifest.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    assert_eq!(record["command"], "split");
    assert_eq!(record["m"], 4);
    assert_eq!(record["dataset_sha256"].as_object().unwrap().len(), 4);
}

#[test]
fn print_config_shows_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["train", "--print-config"]);
    assert!(
        text.contains("epochs=200")
            && text.contains("batch_size=100")
            && text.contains("iterations=16")
    );
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "epochs=7\nbase_lr=0.01\n").unwrap();
    let text = ok(
        dir.path(),
        &[
            "train",
            "--print-config",
            "--config",
            "c.txt",
            "--epochs",
            "9",
            "--set",
            "decay_every=3",
        ],
    );
    assert!(
        text.contains("epochs=9")
            && text.contains("base_lr=0.01")
            && text.contains("decay_every=3")
    );
    assert_eq!(
        code(
            dir.path(),
            &["train", "--print-config", "--set", "nonsense=1"]
        ),
        2
    );
}

#[test]
fn split_and_config_m_must_agree() {
    let f = fixture();
    let args = [
        "train", "--split", "split", "--desk", "--set", "m=5", "--epochs", "1", "--out", "never",
    ];
    assert_eq!(code(&f.root, &args), 2);
    assert!(!f.root.join("never").exists());
}

#[test]
fn train_writes_artifacts() {
    let f = fixture();
    let run = f.root.join("run");
    for file in [
        "checkpoint.drck",
        "config.txt",
        "loss.csv",
        "manifest.jsonl",
    ] {
        assert!(run.join(file).exists(), "{file}");
    }
    let config = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(
        config.contains("m=3")
            && config.contains("iterations=4")
            && config.contains("regime=distributed")
    );
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,step,regime,loss,lr"));
    assert!(loss.lines().count() > 1);
}

#[test]
fn encode_decode_round_trip_and_prefix() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let enc = format!("{out}/enc");
    ok(
        &f.root,
        &[
            "encode",
            "--checkpoint",
            "run",
            "--source",
            "2",
            "--out",
            &enc,
            "digit0.pgm",
            "digit1.pgm",
        ],
    );
    let stream = format!("{enc}/digit0.drsc");
    // 4 blocks of 4x4x2 bits on a 32x32 canvas plus the header.
    let bytes = fs::read(&stream).unwrap();
    assert_eq!(bytes.len(), drasic::bitstream::HEADER_BYTES + 4 * 4);

    let full = format!("{out}/full");
    ok(
        &f.root,
        &["decode", "--checkpoint", "run", "--out", &full, &stream],
    );
    let img = image::open(format!("{full}/digit0.png"))
        .unwrap()
        .to_luma8();
    assert_eq!(img.dimensions(), (28, 28));

    // Decoding a prefix equals decoding a stream that only ever held it.
    let short_enc = format!("{out}/short");
    ok(
        &f.root,
        &[
            "encode",
            "--checkpoint",
            "run",
            "--source",
            "2",
            "--t",
            "2",
            "--out",
            &short_enc,
            "digit0.pgm",
        ],
    );
    let a = format!("{out}/a");
    let b = format!("{out}/b");
    ok(
        &f.root,
        &[
            "decode",
            "--checkpoint",
            "run",
            "--t",
            "2",
            "--format",
            "pgm",
            "--out",
            &a,
            &stream,
        ],
    );
    ok(
        &f.root,
        &[
            "decode",
            "--checkpoint",
            "run",
            "--format",
            "pgm",
            "--out",
            &b,
            &format!("{short_enc}/digit0.drsc"),
        ],
    );
    assert_eq!(
        fs::read(format!("{a}/digit0.pgm")).unwrap(),
        fs::read(format!("{b}/digit0.pgm")).unwrap()
    );

    assert_eq!(
        code(
            &f.root,
            &[
                "decode",
                "--checkpoint",
                "run",
                "--t",
                "5",
                "--out",
                &a,
                &stream
            ]
        ),
        2
    );
    assert_eq!(
        code(
            &f.root,
            &[
                "encode",
                "--checkpoint",
                "run",
                "--source",
                "3",
                "--out",
                &enc,
                "digit0.pgm"
            ]
        ),
        2
    );
}

#[test]
fn decoder_mismatch_is_refused() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(
        &f.root,
        &[
            "train",
            "--split",
            "split",
            "--desk",
            "--epochs",
            "1",
            "--limit",
            "10",
            "--iterations",
            "4",
            "--seed",
            "99",
            "--out",
            &format!("{out}/other"),
        ],
    );
    ok(
        &f.root,
        &[
            "encode",
            "--checkpoint",
            "run",
            "--out",
            &format!("{out}/enc"),
            "digit1.pgm",
        ],
    );
    let status = code(
        &f.root,
        &[
            "decode",
            "--checkpoint",
            &format!("{out}/other"),
            "--out",
            &format!("{out}/dec"),
            &format!("{out}/enc/digit1.drsc"),
        ],
    );
    assert_eq!(status, 3);
    assert!(!Path::new(&format!("{out}/dec/digit1.png")).exists());
}

#[test]
fn eval_and_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let full = format!("{out}/full");
    ok(
        &f.root,
        &[
            "eval",
            "--checkpoint",
            "run",
            "--split",
            "split",
            "--test-limit",
            "20",
            "--out",
            &full,
        ],
    );
    let csv = fs::read_to_string(format!("{full}/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert!(Path::new(&format!("{full}/rd.svg")).exists());

    let solo = format!("{out}/solo");
    ok(
        &f.root,
        &[
            "eval",
            "--checkpoint",
            "run",
            "--split",
            "split",
            "--test-limit",
            "20",
            "--active",
            "1",
            "--plot-format",
            "none",
            "--out",
            &solo,
        ],
    );
    assert!(!Path::new(&format!("{solo}/rd.svg")).exists());
    let solo_csv = fs::read_to_string(format!("{solo}/results.csv")).unwrap();
    let solo_rows: Vec<&str> = solo_csv.lines().skip(1).collect();
    assert_eq!(solo_rows.len(), 4);
    for row in &solo_rows {
        assert!(
            csv.lines().any(|l| l == *row),
            "robustness row {row} differs from full evaluation"
        );
    }

    let rep = format!("{out}/report");
    let summary = ok(&f.root, &["report", &full, &solo, "--out", &rep]);
    assert!(summary.contains("distributed"));
    assert!(Path::new(&format!("{rep}/rd_by_label_m3_seed0.svg")).exists());
    assert!(Path::new(&format!("{rep}/summary.md")).exists());
    assert_eq!(
        fs::read_to_string(format!("{rep}/results.csv")).unwrap(),
        csv
    );

    let random = format!("{out}/rsplit");
    ok(
        &f.root,
        &[
            "split",
            "--strategy",
            "random",
            "--m",
            "3",
            "--out",
            &random,
        ],
    );
    assert_eq!(
        code(
            &f.root,
            &[
                "eval",
                "--checkpoint",
                "run",
                "--split",
                &random,
                "--out",
                &format!("{out}/x")
            ]
        ),
        3
    );
}

#[test]
fn report_without_results_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(code(dir.path(), &["report", "empty", "--out", "r"]), 3);
    fs::write(
        dir.path().join("empty/results.csv"),
        drasic::evaluation::RESULTS_HEADER.join(",") + "\n",
    )
    .unwrap();
    assert_eq!(code(dir.path(), &["report", "empty", "--out", "r"]), 3);
}

#[test]
fn output_root_env_relocates_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_drasic"))
        .current_dir(dir.path())
        .env("DRASIC_OUTPUT_ROOT", &root)
        .args(["split", "--strategy", "by_label", "--m", "2", "--out", "s"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("s/train.csv").exists());
}

#[test]
fn missing_data_dir_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--data-dir",
        "nowhere",
        "split",
        "--strategy",
        "random",
        "--m",
        "2",
        "--out",
        "s",
    ];
    assert_eq!(code(dir.path(), &args), 3);
}

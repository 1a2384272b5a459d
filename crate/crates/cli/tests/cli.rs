use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MICRO: &str = "dim = 8\nepochs = 4\nbatch_size = 16\n";

fn hgtul(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgtul"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hgtul(args);
    assert!(
        out.status.success(),
        "hgtul {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
}

impl Fixture {
    /// Small synthetic corpus, preprocessed into `root/data`.
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        fs::write(
            root.join("synth.cfg"),
            "synth_users = 8\nsynth_pois = 16\nsynth_weeks = 6\n",
        )
        .unwrap();
        fs::write(root.join("micro.cfg"), MICRO).unwrap();
        ok(&[
            "synth",
            "--config",
            s(&root.join("synth.cfg")),
            "--seed",
            "3",
            "--out",
            s(&root.join("raw")),
        ]);
        ok(&[
            "preprocess",
            "--input",
            s(&root.join("raw/checkins.tsv")),
            "--out",
            s(&root.join("data")),
        ]);
        Self { _tmp: tmp, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn preprocess_statistics_match_generator_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("synth.cfg"), "synth_users = 8\nsynth_pois = 16\nsynth_weeks = 6\nsynth_concentration = inf\nsynth_imbalance = 0\n").unwrap();
    ok(&[
        "synth",
        "--config",
        s(&root.join("synth.cfg")),
        "--out",
        s(&root.join("raw")),
    ]);
    let stats = ok(&[
        "preprocess",
        "--input",
        s(&root.join("raw/checkins.tsv")),
        "--out",
        s(&root.join("data")),
    ]);
    let truth = fs::read_to_string(root.join("raw/truth.tsv")).unwrap();
    assert_eq!(truth.lines().count(), 8);
    // every user is active in all 6 weeks with equal activity
    assert!(stats.contains("users=8 "), "{stats}");
    assert!(stats.contains("trajectories=48 "), "{stats}");
    // 6 trajectories per user cut 6:2:2 → 4/1/1
    assert!(stats.contains("train=32 valid=8 test=8"), "{stats}");
    let manifest = fs::read_to_string(root.join("data/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 48);
    assert!(manifest.lines().all(|l| l.split('\t').count() == 5));
}

#[test]
fn preprocess_is_byte_identical_on_rerun() {
    let fx = Fixture::new();
    ok(&[
        "preprocess",
        "--input",
        s(&fx.p("raw/checkins.tsv")),
        "--out",
        s(&fx.p("data2")),
    ]);
    assert_eq!(
        read_dir_bytes(&fx.p("data")),
        read_dir_bytes(&fx.p("data2"))
    );
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hgtul(&[
        "preprocess",
        "--input",
        "/nonexistent/checkins.tsv",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "embedding_size = 128\n").unwrap();
    let out = hgtul(&["synth", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embedding_size"));
}

#[test]
fn train_then_evaluate_is_consistent() {
    let fx = Fixture::new();
    let cfg = fx.p("micro.cfg");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&fx.p("data")),
        "--out",
        s(&fx.p("run")),
    ]);
    let history = fs::read_to_string(fx.p("run/history.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = history.lines().map(|l| l.split('\t').collect()).collect();
    assert!(!rows.is_empty() && rows.len() <= 4);
    assert!(rows.iter().all(|r| r.len() == 4));

    let best = rows
        .iter()
        .map(|r| r[2])
        .fold(None::<&str>, |b, v| match b {
            Some(b) if b.parse::<f64>().unwrap() >= v.parse::<f64>().unwrap() => Some(b),
            _ => Some(v),
        })
        .unwrap();
    let table = ok(&[
        "evaluate",
        "--data",
        s(&fx.p("data")),
        "--checkpoint",
        s(&fx.p("run/checkpoint.bin")),
        "--part",
        "valid",
        "--out",
        s(&fx.p("eval")),
    ]);
    let report = fs::read_to_string(fx.p("eval/report.tsv")).unwrap();
    assert!(
        report.contains(&format!("acc@1\tall\t{best}\n")),
        "{report}\nbest {best}"
    );
    assert!(report.starts_with("variant\tall\tFULL\n"));
    // machine and human outputs carry the same numbers
    for line in report.lines().skip(1) {
        let value = line.rsplit('\t').next().unwrap();
        assert!(table.contains(value));
    }
    assert_eq!(fs::read_to_string(fx.p("eval/report.txt")).unwrap(), table);
}

#[test]
fn evaluate_variant_flag_tags_report() {
    let fx = Fixture::new();
    ok(&[
        "train",
        "--config",
        s(&fx.p("micro.cfg")),
        "--data",
        s(&fx.p("data")),
        "--out",
        s(&fx.p("run")),
    ]);
    ok(&[
        "evaluate",
        "--data",
        s(&fx.p("data")),
        "--checkpoint",
        s(&fx.p("run/checkpoint.bin")),
        "--variant",
        "h",
        "--out",
        s(&fx.p("eval")),
    ]);
    let report = fs::read_to_string(fx.p("eval/report.tsv")).unwrap();
    assert!(report.starts_with("variant\tall\tH\n"));
    let rejected = hgtul(&[
        "evaluate",
        "--data",
        s(&fx.p("data")),
        "--checkpoint",
        s(&fx.p("run/checkpoint.bin")),
        "--variant",
        "a,s",
        "--out",
        s(&fx.p("eval2")),
    ]);
    assert_eq!(rejected.status.code(), Some(13));
}

#[test]
fn repeat_writes_distinct_checkpoints_and_summary() {
    let fx = Fixture::new();
    ok(&[
        "train",
        "--config",
        s(&fx.p("micro.cfg")),
        "--data",
        s(&fx.p("data")),
        "--repeat",
        "3",
        "--out",
        s(&fx.p("run")),
    ]);
    let cks: Vec<Vec<u8>> = (1..=3)
        .map(|i| fs::read(fx.p(&format!("run/checkpoint_{i}.bin"))).unwrap())
        .collect();
    assert!(cks[0] != cks[1] && cks[1] != cks[2] && cks[0] != cks[2]);
    let summary = fs::read_to_string(fx.p("run/summary.tsv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("acc@1\tall\t")));
    assert!(summary.lines().all(|l| l.split('\t').count() == 4));
}

#[test]
fn early_stop_fires_after_patience() {
    let fx = Fixture::new();
    // a vanishing learning rate keeps validation accuracy flat after epoch 1
    fs::write(
        fx.p("flat.cfg"),
        "dim = 8\nepochs = 20\nlr_init = 1e-300\nlr_min = 1e-300\ndropout = 0\n",
    )
    .unwrap();
    ok(&[
        "train",
        "--config",
        s(&fx.p("flat.cfg")),
        "--data",
        s(&fx.p("data")),
        "--out",
        s(&fx.p("run")),
    ]);
    let history = fs::read_to_string(fx.p("run/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 6, "{history}");
}

#[test]
fn checkpoint_from_other_data_is_rejected() {
    let fx = Fixture::new();
    ok(&[
        "train",
        "--config",
        s(&fx.p("micro.cfg")),
        "--data",
        s(&fx.p("data")),
        "--out",
        s(&fx.p("run")),
    ]);
    fs::write(
        fx.p("other.cfg"),
        "synth_users = 9\nsynth_pois = 18\nsynth_weeks = 6\n",
    )
    .unwrap();
    ok(&[
        "synth",
        "--config",
        s(&fx.p("other.cfg")),
        "--out",
        s(&fx.p("raw2")),
    ]);
    ok(&[
        "preprocess",
        "--input",
        s(&fx.p("raw2/checkins.tsv")),
        "--out",
        s(&fx.p("data2")),
    ]);
    let out = hgtul(&[
        "evaluate",
        "--data",
        s(&fx.p("data2")),
        "--checkpoint",
        s(&fx.p("run/checkpoint.bin")),
        "--out",
        s(&fx.p("eval")),
    ]);
    assert_eq!(out.status.code(), Some(17));

    fs::write(fx.p("broken.bin"), b"").unwrap();
    let out = hgtul(&[
        "evaluate",
        "--data",
        s(&fx.p("data")),
        "--checkpoint",
        s(&fx.p("broken.bin")),
        "--out",
        s(&fx.p("eval")),
    ]);
    assert_eq!(out.status.code(), Some(15));
}

#[test]
fn ablate_reports_every_requested_variant() {
    let fx = Fixture::new();
    let out = ok(&[
        "ablate",
        "--config",
        s(&fx.p("micro.cfg")),
        "--data",
        s(&fx.p("data")),
        "--variant",
        "full,h,a+d",
        "--out",
        s(&fx.p("abl")),
    ]);
    let table = fs::read_to_string(fx.p("abl/ablation.tsv")).unwrap();
    for tag in ["FULL", "H", "A+D"] {
        assert!(
            table
                .lines()
                .any(|l| l.starts_with(&format!("{tag}\tmacro_f1\tall\t"))),
            "{table}"
        );
        assert!(out.contains(tag));
    }
}

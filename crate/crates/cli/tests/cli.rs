use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrdg::checkpoint::Checkpoint;
use mrdg::metrics::METRICS_HEADER;
use mrdg_cli::{load_config, run_ablation, Overrides, VARIANTS};

const TINY: &str = r#"
[substrate]
game = "prisoners-dilemma"
history = 2
episode_length = 5

[learner]
hidden = [8, 8]
batch_size = 8
warmup = 16
target_period = 5

[mrdg]
m = 2
embedding_width = 4
va_hidden = [8]
retrieval_hidden = [8]
retrieval_index_width = 4
hyper_hidden = [8]
reinit_period = 10

[dpp]
schemes = [{ partners = ["tit-for-tat"] }, { partners = ["learned"] }]

[eval]
partners = ["always:1", "tit-for-tat"]
episodes = 3
interval = 10

[run]
episodes = 30

[ablation]
seeds = [0, 1]
"#;

fn mrdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrdg"))
        .args(args)
        .env_remove("MRDG_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    let out = mrdg(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for f in ["config.toml", "metrics.csv", "summary.json", "checkpoints/initial.ckpt", "checkpoints/final.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let mut reader = csv::ReaderBuilder::new().quoting(false).from_path(run.join("metrics.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>().join(","), METRICS_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].to_string()).collect::<Vec<_>>(), ["10", "20", "30"]);
    assert_eq!(&rows[2][8], "2", "blends after episodes 10 and 20");

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let ckpt = Checkpoint::read(&run.join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap(), ckpt.config_hash);
    assert_eq!(ckpt.episode, 30);
    assert!(ckpt.get("hyper/params").is_some() && ckpt.get("learner/hype/l1").is_none());
    assert_eq!(load_config(&run.join("config.toml"), &Overrides::default()).unwrap().hash(), ckpt.config_hash);
}

#[test]
fn existing_run_directories_are_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    fs::create_dir(&run).unwrap();
    fs::write(run.join("marker"), "keep").unwrap();
    let out = mrdg(&["train", "--config", s(&cfg), "--out", s(&run), "--episodes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to overwrite"));
    assert_eq!(fs::read_dir(&run).unwrap().count(), 1);
}

#[test]
fn malformed_configs_fail_before_creating_anything() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.toml", "[learner]\nlearning_rat = 0.1\n", "learning_rat"),
        ("syntax.toml", "[run]\nseed = \n", "line 2"),
        ("range.toml", "[learner]\ngamma = 1.5\n", "gamma"),
        ("partner.toml", "[eval]\npartners = [\"always:7\"]\n", "always:7"),
    ];
    for (name, text, needle) in cases {
        let cfg = tmp.path().join(name);
        fs::write(&cfg, text).unwrap();
        let run = tmp.path().join(format!("run-{name}"));
        let out = mrdg(&["train", "--config", s(&cfg), "--out", s(&run)]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(!out.status.success(), "{name} accepted");
        assert!(err.contains(needle), "{name}: {err}");
        assert!(!run.exists(), "{name} created a run directory");
    }
}

#[test]
fn eval_reports_one_row_per_partner() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    assert!(mrdg(&["train", "--config", s(&cfg), "--out", s(&run), "--episodes", "10"]).status.success());
    let ckpt = run.join("checkpoints/final.ckpt");
    let report = tmp.path().join("eval.csv");
    let out = mrdg(&[
        "eval", "--checkpoint", s(&ckpt), "--partner", "always:0", "--partner", "random:0.5,0.5", "--partner", "grim-trigger",
        "--episodes", "4", "--out", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap().len(), 5);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(&r[1], "4");
        let mean: f64 = r[2].parse().unwrap();
        let per_step: f64 = r[4].parse().unwrap();
        assert!((mean / 5.0 - per_step).abs() < 1e-12);
    }

    // Repeating the evaluation reproduces it exactly.
    let again = mrdg(&["eval", "--checkpoint", s(&ckpt), "--partner", "always:0", "--partner", "random:0.5,0.5", "--partner", "grim-trigger", "--episodes", "4"]);
    assert_eq!(String::from_utf8_lossy(&again.stdout), text);

    assert!(!mrdg(&["eval", "--checkpoint", s(&ckpt)]).status.success(), "empty roster accepted");
    assert!(!mrdg(&["eval", "--checkpoint", s(&ckpt), "--partner", "always:9"]).status.success());
    fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let junk = mrdg(&["eval", "--checkpoint", s(&tmp.path().join("junk.ckpt")), "--partner", "always:0"]);
    assert!(String::from_utf8_lossy(&junk.stderr).contains("bad magic"));
}

#[test]
fn ablation_table_has_one_column_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(tmp.path());
    let cfg = load_config(&cfg_path, &Overrides { episodes: Some(10), ..Default::default() }).unwrap();
    let out = tmp.path().join("ablation");
    let res = run_ablation(&cfg, &out).unwrap();
    assert_eq!(res.returns.len(), VARIANTS.len());
    assert!(res.returns.iter().all(|r| r.len() == 2));

    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "MRDG,w/o(DPP),w/o(PE),w/o(HN),w/o(VA)");
    assert_eq!(lines[1].split(',').count(), 5);
    assert!(lines[1].split(',').all(|c| c.contains(" ± ")));

    let long = fs::read_to_string(out.join("returns.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 5 * 2);
    for (_, key) in VARIANTS {
        for seed in [0, 1] {
            assert!(out.join(key).join(format!("seed-{seed}/metrics.csv")).is_file());
        }
    }
    assert!(run_ablation(&cfg, &out).is_err(), "existing ablation directory overwritten");
}

#[test]
fn gradcheck_lists_the_four_paths() {
    let out = mrdg(&["gradcheck", "--trials", "5", "--seed", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["mlp", "va_loss", "retrieval_aux_loss", "hypernet_td"]);
    assert!(!mrdg(&["gradcheck", "--trials", "0"]).status.success());
}

#[test]
fn plot_renders_one_polyline_per_metrics_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (name, rows) in [("a", "10,100,1,2.5,0,0,0,0,0,0\n20,200,1,3.5,0,0,0,0,0,0\n"), ("b", "10,100,1,1,0,0,0,0,0,0\n")] {
        let dir = tmp.path().join(name);
        fs::create_dir(&dir).unwrap();
        let f = dir.join("metrics.csv");
        fs::write(&f, format!("{METRICS_HEADER}\n{rows}")).unwrap();
        files.push(f);
    }
    let svg = tmp.path().join("curve.svg");
    let out = mrdg(&["plot", s(&files[0]), s(&files[1]), "--out", s(&svg), "--title", "returns <desk>"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(text.contains("returns &lt;desk&gt;"));
    fs::write(tmp.path().join("bad.csv"), "x,y\n1,2\n").unwrap();
    assert!(!mrdg(&["plot", s(&tmp.path().join("bad.csv")), "--out", s(&svg)]).status.success());
}

#[test]
fn output_root_names_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_mrdg"))
        .args(["train", "--config", s(&cfg), "--episodes", "2", "--seed", "7"])
        .env("MRDG_OUTPUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("root/tiny-seed7/summary.json").is_file());
}

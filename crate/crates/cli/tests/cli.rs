use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[generate]
n_per_platform = 300

[train]
max_epochs = 1
fusion_hidden = 64

[protocol]
seeds = [0]
k_grid = [0, 20]
lambda_grid = [0.0, 0.5]
sections = ["unsupervised"]
"#;

fn adaptms(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptms"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_config(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), text).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = adaptms(dir.path(), &["print-default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[train]") && text.contains("lambda = 0.5"));
    fs::write(dir.path().join("run.toml"), &text).unwrap();
    let o = adaptms(dir.path(), &["--config", "run.toml", "--quiet", "generate", "--out", "g"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn generate_is_byte_identical() {
    let dir = with_config(SMALL);
    for out in ["a", "b"] {
        let o = adaptms(dir.path(), &["--config", "run.toml", "--out", out, "generate"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let table = String::from_utf8(o.stdout).unwrap();
        assert!(table.contains("missing"), "{table}");
    }
    let a = fs::read(dir.path().join("a/corpus.tsv")).unwrap();
    let b = fs::read(dir.path().join("b/corpus.tsv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn negative_lambda_exits_2_naming_the_field() {
    let dir = with_config("[train]\nlambda = -0.5\n");
    let o = adaptms(dir.path(), &["--config", "run.toml", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.lambda"), "{}", stderr(&o));
}

#[test]
fn unknown_field_exits_2() {
    let dir = with_config("[protocol]\ntargets = \"C\"\n");
    let o = adaptms(dir.path(), &["--config", "run.toml", "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("protocol"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = adaptms(dir.path(), &["--config", "absent.toml", "generate"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = with_config("[io]\ncorpus = \"absent.tsv\"\n");
    let o = adaptms(dir.path(), &["--config", "run.toml", "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_writes_fingerprinted_reports() {
    let dir = with_config(SMALL);
    let o = adaptms(dir.path(), &["--config", "run.toml", "--out", "r", "--quiet", "evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("r/report.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("# adaptms-report v1 config="), "{header}");
    let rows: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(rows, ["source_only", "pool_noadapt", "dann_only", "adaptms"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(json["config_fingerprint"], header.split("config=").nth(1).unwrap().split(' ').next().unwrap());
    assert!(dir.path().join("r/report_alignment.csv").exists());
}

#[test]
fn stages_refuse_mismatched_artifacts() {
    let dir = with_config(SMALL);
    for cmd in ["generate", "train"] {
        let o = adaptms(dir.path(), &["--config", "run.toml", "--out", "r", "--quiet", cmd]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    for f in ["model.snapshot", "calibration.tsv", "train_log.json", "embeddings.cache"] {
        assert!(dir.path().join("r").join(f).exists(), "{f}");
    }
    // Different training config: the snapshot no longer matches.
    fs::write(dir.path().join("other.toml"), SMALL.replace("max_epochs = 1", "max_epochs = 1\nlambda = 0.1")).unwrap();
    let o = adaptms(dir.path(), &["--config", "other.toml", "--out", "r", "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("trained under config"), "{}", stderr(&o));
    // Different generation config: the corpus no longer matches.
    fs::write(dir.path().join("gen.toml"), SMALL.replace("[generate]\n", "[generate]\nseed = 9\n")).unwrap();
    let o = adaptms(dir.path(), &["--config", "gen.toml", "--out", "r", "ablate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different configuration"), "{}", stderr(&o));
}

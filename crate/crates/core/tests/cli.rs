use std::path::Path;
use std::process::{Command, Output};

use g5::graph::synthetic::{generate, write_citation_files, SyntheticSpec};

fn write_graph(dir: &Path, id: &str, nodes: usize, classes: usize, seed: u64) {
    let g = generate(
        id,
        &SyntheticSpec {
            nodes,
            classes,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    write_citation_files(&g, &dir.join(format!("{id}.content")), &dir.join(format!("{id}.cites"))).unwrap();
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path(), "alpha", 50, 3, 1);
    write_graph(dir.path(), "beta", 40, 3, 2);
    let cfg = format!(
        r#"
mode = "isolated"
sources = ["alpha"]
universal_k = 3
rounds = 1
out_dir = "out"
{extra}

[split]
kind = "planetoid"
per_class = 4
num_val = 6
num_test = 12

[reason]
epochs = 5

[graphs.alpha]
content = "alpha.content"
cites = "alpha.cites"
k = 3
lr = 0.01
epochs = 2

[graphs.beta]
content = "beta.content"
cites = "beta.cites"
k = 3
lr = 0.01
epochs = 2
"#
    );
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    dir
}

fn g5(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g5"))
        .args(args)
        .current_dir(dir)
        .env_remove("G5_CACHE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn second_preprocess_skips_fresh_caches() {
    let dir = setup("");
    let first = g5(dir.path(), &["preprocess", "--config", "run.toml"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("alpha: cache built"));
    let second = g5(dir.path(), &["preprocess", "--config", "run.toml"]);
    assert!(stdout(&second).contains("alpha: cache fresh, skipped"));
    assert!(stdout(&second).contains("beta: cache fresh, skipped"));
}

#[test]
fn cache_location_follows_the_environment() {
    let dir = setup("");
    let cache = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_g5"))
        .args(["preprocess", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("G5_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
}

#[test]
fn config_problems_exit_with_code_two() {
    let dir = setup("");
    std::fs::remove_file(dir.path().join("beta.cites")).unwrap();
    let o = g5(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = setup("surprise = true");
    let o = g5(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("surprise"));
}

#[test]
fn dry_run_prints_schedule_and_computes_nothing() {
    let dir = setup("");
    let o = g5(dir.path(), &["train", "--config", "run.toml", "--dry-run"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("reconstruct x2 -> structure x2 -> classify x2"), "{s}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn isolated_training_is_reproducible_and_reportable() {
    let dir = setup("");
    for out in ["a", "b"] {
        let o = g5(dir.path(), &["train", "--config", "run.toml", "--out", out, "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(out).join("final-alpha.g5ck").is_file());
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.lines().any(|l| l.contains(",test,accuracy,")));

    let r = g5(dir.path(), &["report", "a/metrics.csv", "--out", "table.csv"]);
    assert!(r.status.success());
    let table = stdout(&r);
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(table.contains("alpha"));
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(csv.starts_with("source,target,k,ratio,strategy,runs,median,mean\n"));
}

#[test]
fn reasoning_writes_one_row_per_target_node() {
    let dir = setup("target = \"beta\"");
    let o = g5(dir.path(), &["train", "--config", "run.toml", "--mode", "apocalypse", "--strategy", "cccm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out/pretrained.g5ck").is_file());

    let o = g5(dir.path(), &["reason", "--config", "run.toml", "--strategy", "cdr"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("beta via cdr"), "{s}");
    assert!(s.contains("random baseline 0.333"), "{s}");
    let csv = std::fs::read_to_string(dir.path().join("out/reasoned-beta-cdr.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "node_id,predicted_class,max_prob,entropy");
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn report_rejects_files_without_the_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.csv"), "run,graph\nx,y\n").unwrap();
    let o = g5(dir.path(), &["report", "m.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: [&str; 6] = [
    "--set",
    "seeds=[1]",
    "--set",
    "schedules=6",
    "--set",
    "hyper.sgd.epochs=2",
];

fn apprentice(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apprentice"))
        .args(args)
        .env("APPRENTICE_OUTPUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("set.json");
    let o = apprentice(
        dir.path(),
        &["generate", "--domain", "lowdim", "--model", "pnn", "--seed", "3", "--out", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("50 schedules"));
    assert!(out.exists());
}

#[test]
fn train_eval_and_export_a_tree() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("pddt.json");
    let ckpt = ckpt.to_str().unwrap();
    let base = ["--domain", "lowdim", "--model", "pddt", "--set", "hyper.restarts=1"];
    let mut args = vec!["train", "--out", ckpt];
    args.extend(base);
    args.extend(TINY);
    let o = apprentice(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut args = vec!["eval", "--checkpoint", ckpt];
    args.extend(base);
    args.extend(TINY);
    let o = apprentice(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("accuracy "), "{text}");
    assert!(text.contains("crisp accuracy "), "{text}");

    let o = apprentice(dir.path(), &["export-tree", "--checkpoint", ckpt, "--format", "dot"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("digraph"));
    let o = apprentice(dir.path(), &["export-tree", "--checkpoint", ckpt]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("omega_0") || stdout(&o).contains("context_") || stdout(&o).contains("diff_"));
    let o = apprentice(dir.path(), &["crispify", "--checkpoint", ckpt]);
    assert!(o.status.success());
    let tree: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(tree.is_object());
}

#[test]
fn runs_are_reported_and_compared() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["dt", "em-dt"] {
        let mut args = vec!["run", "--domain", "lowdim", "--model", model];
        args.extend(TINY);
        let o = apprentice(dir.path(), &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("mean accuracy"));
    }
    let reports = json_files(&dir.path().join("lowdim"));
    assert_eq!(reports.len(), 2, "{reports:?}");
    let plot = dir.path().join("plot.csv");
    let o = apprentice(
        dir.path(),
        &[
            "compare",
            reports[0].to_str().unwrap(),
            reports[1].to_str().unwrap(),
            "--plot",
            plot.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("dt-standard"));
    assert!(std::fs::read_to_string(plot).unwrap().lines().count() > 1);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--domain", "lowdim", "--model", "pnn", "--set", "hyper.sgd.nope=1"][..],
        &["run", "--domain", "lowdim", "--model", "nonsense"],
        &["run", "--domain", "lowdim"],
        &["run", "--domain", "lowdim", "--model", "dt", "--set", "framing=\"pairwise\""],
    ] {
        let o = apprentice(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = apprentice(dir.path(), &["crispify", "--checkpoint", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(1));
}

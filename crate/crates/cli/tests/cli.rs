use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
name = "cli-smoke"
architecture = "mlp(2,16)"
forget_classes = [0]
methods = ["original", "pte"]
repeats = 2
output_dir = "run"

[dataset]
kind = "blobs"
classes = 3
n_per_class = 40
separation = 6.0

[train]
epochs = 5
learning_rate = 0.05
batch_size = 16

[probe]
epsilon = 2.0
steps = 5
step_size = 2.0
ascent = "sign"
fallback = "runner_up"

[pte]
epochs = 3
eta_push = 0.05
eta_pull = 1e-4
temperature = 4.0
record_epoch_models = true
"#;

fn pte(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pte"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run pte")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn subcommands_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), CONFIG).unwrap();

    let out = stdout(&pte(&["train", "--config", "exp.toml"], d));
    assert!(out.contains("test_accuracy = "));

    let out = stdout(&pte(
        &[
            "unlearn", "--config", "exp.toml", "--method", "pte", "--seed", "5",
        ],
        d,
    ));
    assert!(out.contains("method = pte") && out.contains("seed = 5"));
    assert!(d.join("run/reports/pte_seed5.txt").is_file());

    let model = d.join("run/models/pte_seed5.ckpt");
    let out = stdout(&pte(
        &[
            "evaluate",
            "--config",
            "exp.toml",
            "--seed",
            "5",
            "--model",
            model.to_str().unwrap(),
            "--label",
            "mine",
        ],
        d,
    ));
    assert!(out.contains("method = mine"));

    let out = stdout(&pte(
        &["bench", "--config", "exp.toml", "--out", "bench"],
        d,
    ));
    assert!(out.starts_with("Method,Acc_f,Acc_r,Acc_ft,Acc_rt,H-Mean,MIA\n"));
    assert_eq!(out.lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("bench/table.csv")).unwrap(), out);

    let plot = pte(&["plot", "--out", "bench"], d);
    assert!(plot.status.success());
}

#[test]
fn failures_exit_nonzero_with_a_stage_named_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = pte(&["bench", "--config", "nope.toml"], d);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("config"));

    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let bad = pte(
        &["bench", "--config", "exp.toml", "--forget-classes", "0,1,2"],
        d,
    );
    assert!(!bad.status.success());

    let no_flip = CONFIG
        .replace("epsilon = 2.0", "epsilon = 1e-9")
        .replace("fallback = \"runner_up\"", "fallback = \"drop\"");
    fs::write(d.join("weak.toml"), no_flip).unwrap();
    let failed = pte(&["unlearn", "--config", "weak.toml"], d);
    assert!(!failed.status.success());
    let err = String::from_utf8_lossy(&failed.stderr);
    assert!(err.contains("stage `unlearn`"), "{err}");
}

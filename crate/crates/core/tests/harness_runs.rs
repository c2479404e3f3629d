use std::fs;
use std::path::Path;

use pte_core::baselines::MethodKind;
use pte_core::harness::{
    compare_methods, emit_plots, run_experiment, ExperimentConfig, PlotOptions, RunManifest,
    AGGREGATE_FILE,
};
use pte_core::PteError;

const SMALL: &str = r#"
name = "small"
architecture = "mlp(2,32)"
forget_classes = [1]
methods = ["original", "retrain", "negative_gradient", "pte"]
repeats = 2
seed_base = 3
output_dir = "unused"

[dataset]
kind = "blobs"
classes = 4
n_per_class = 60
separation = 6.0

[train]
epochs = 10
learning_rate = 0.05
batch_size = 32

[baseline]
epochs = 5
learning_rate = 0.05
batch_size = 32

[probe]
epsilon = 2.0
steps = 10
step_size = 2.0
ascent = "sign"
fallback = "runner_up"

[pte]
epochs = 5
eta_push = 0.07
eta_pull = 2e-5
temperature = 10.0
record_epoch_models = true
"#;

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn repeats_produce_reports_an_aggregate_and_a_verifiable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let m = run_experiment(&cfg).unwrap();
    assert!(m.stage_errors.is_empty(), "{:?}", m.stage_errors);
    assert_eq!(m.seeds, vec![3, 4]);
    assert_eq!(m.reports().unwrap().len(), 8);
    for rec in m.repeats.iter().flat_map(|r| &r.methods) {
        assert!(rec.report.is_file() && rec.checkpoint.is_file());
        let audited = rec.method == MethodKind::Pte;
        assert_eq!(rec.retain_reads_during_unlearn.is_some(), audited);
        if audited {
            assert_eq!(rec.retain_reads_during_unlearn, Some(0));
            assert!(rec.trace.as_ref().unwrap().is_file());
        }
    }
    let aggregate = fs::read_to_string(dir.path().join(AGGREGATE_FILE)).unwrap();
    assert_eq!(aggregate.lines().count(), 5);

    let loaded = RunManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.config().unwrap().hash(), cfg.hash());
    assert_eq!(loaded.config_hash, cfg.hash());
}

#[test]
fn reruns_reproduce_the_aggregate_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&small(a.path())).unwrap();
    run_experiment(&small(b.path())).unwrap();
    let read = |d: &Path| fs::read(d.join(AGGREGATE_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    // and again in place, now loading the cached original models
    run_experiment(&small(a.path())).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn a_failing_method_is_recorded_and_the_rest_still_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.repeats = 1;
    cfg.methods = vec![MethodKind::Pte, MethodKind::Original];
    // a vanishing ball with no fallback cannot flip anything
    cfg.probe.epsilon = 1e-9;
    cfg.probe.step_size = 1e-9;
    cfg.probe.fallback = pte_core::probing::FlipFallback::Drop;
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.stage_errors.len(), 1);
    let e = &m.stage_errors[0];
    assert_eq!(
        (e.method, e.stage.as_str()),
        (Some(MethodKind::Pte), "unlearn")
    );
    assert_eq!(m.reports().unwrap().len(), 1);
}

#[test]
fn comparison_joins_matching_runs_and_rejects_mismatched_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut first = small(a.path());
    first.methods = vec![MethodKind::Original, MethodKind::Pte];
    let mut second = small(b.path());
    second.name = "other".into();
    second.methods = vec![MethodKind::Pte];
    second.pte.temperature = 4.0;
    let ra = run_experiment(&first).unwrap();
    let rb = run_experiment(&second).unwrap();
    let table = compare_methods(&[ra.clone(), rb]).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["original", "small/pte", "other/pte"]);
    assert!(table
        .rows
        .iter()
        .all(|r| r.repeats == 2 && r.cells.len() == 6));

    let mut third = small(c.path());
    third.forget_classes = vec![2];
    third.methods = vec![MethodKind::Original];
    let rc = run_experiment(&third).unwrap();
    assert!(matches!(
        compare_methods(&[ra, rc]),
        Err(PteError::Comparison(_))
    ));
}

#[test]
fn plots_cover_every_pte_trace() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&small(dir.path())).unwrap();
    let out = dir.path().join("plots");
    let files = emit_plots(&m, &out, &PlotOptions { projection: true }).unwrap();
    if files.is_empty() {
        // no usable font on this machine; plotting degrades to a warning
        return;
    }
    let names: Vec<String> = files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"boxplot.png".to_string()));
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("trajectory_"))
            .count(),
        2
    );
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("projection_"))
            .count(),
        4
    );
    assert!(files.iter().all(|f| fs::metadata(f).unwrap().len() > 0));
}

#![allow(dead_code)]

mod featurize_text {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/featurize_text.rs"
    ));
}

mod mc_dropout_uncertainty {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/mc_dropout_uncertainty.rs"
    ));
}

mod sample_selection {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/sample_selection.rs"
    ));
}

mod train_teacher {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/train_teacher.rs"
    ));
}

mod self_training {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/self_training.rs"
    ));
}

mod ablation_grid {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/ablation_grid.rs"
    ));
}

#[test]
fn featurize_text_example_runs() {
    let stats = featurize_text::run_example(&["good movie", "movie good", ""], 1024).unwrap();
    assert_eq!(stats[0].0, 3);
    assert_eq!(stats[1].0, 3);
    assert_eq!(stats[2], (0, 0.0));
}

#[test]
fn mc_dropout_example_runs() {
    let estimates = mc_dropout_uncertainty::run_example(10).unwrap();
    assert_eq!(estimates.len(), 3);
    assert!(estimates
        .iter()
        .all(|e| e.bald >= 0.0 && e.bald <= 3f64.ln()));
}

#[test]
fn sample_selection_example_runs() {
    let runs = sample_selection::run_example(16).unwrap();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|(_, s)| s.chosen.len() == 16));
}

#[test]
fn train_teacher_example_runs() {
    let accuracy = train_teacher::run_example(400, 10, 4096).unwrap();
    assert!(accuracy > 0.5, "{accuracy}");
}

#[test]
fn self_training_example_runs() {
    let outcome = self_training::run_example(400, 2, 4096).unwrap();
    assert!(outcome.rounds.len() <= 2);
    assert!(outcome.best_valid_loss <= outcome.teacher.valid_loss);
}

#[test]
fn ablation_grid_example_runs() {
    let plan = ust::experiment::ExperimentPlan::from_toml(
        r#"
        cells = ["base", "classic_st", "ust_easy-conf"]
        k = [10]
        seeds = [0, 1]
        [config]
        feature_dim = 4096
        hidden = 32
        passes = 6
        unlabeled_sample = 150
        iterations = 2
        teacher_epochs = 15
        student_epochs = 4
        policy = { strategy = "easy", class_dependent = true, budget = 40 }
        "#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = ablation_grid::run_example(&plan, 400, dir.path()).unwrap();
    assert_eq!(report.records.len(), 6);
    assert!(report.audit_passed() && !report.any_failed());
    assert!(dir.path().join("table.txt").exists());
    assert!(dir.path().join("curves/ust_easy-conf_K10.csv").exists());
}

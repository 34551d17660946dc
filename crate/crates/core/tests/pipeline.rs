//! End-to-end pipeline tests over small synthetic data.

use sembed::config::RunConfig;
use sembed::dataset::{read_jsonl, Origin};
use sembed::pipeline::{
    cmd_build_vocab, cmd_curate, cmd_evaluate, cmd_report, cmd_train, run_full_pipeline,
    EvalTarget, Split,
};
use sembed::synthetic::{benchmark_config, generate, SyntheticSpec};
use std::path::Path;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        n_train: 60,
        n_val: 24,
        n_test: 24,
        n_docs: 8,
        tokens_per_doc: 30,
        ..Default::default()
    }
}

fn small_config(dir: &Path, seed: u64) -> RunConfig {
    let paths = generate(&small_spec(seed), dir).unwrap();
    let mut cfg = benchmark_config(&paths, &dir.join("out"), seed);
    cfg.train.epochs = 2;
    cfg.members.truncate(2);
    cfg
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 5);
    let outcome = run_full_pipeline(&cfg).unwrap();

    for name in [
        "vocab.tsv",
        "bootstrap.ckpt",
        "bootstrap_trace.csv",
        "d_final.jsonl",
        "curation_report.json",
        "topk_similarity.csv",
        "member_0.ckpt",
        "member_0_trace.csv",
        "member_1.ckpt",
        "ensemble.json",
        "eval_ensemble_test.csv",
        "eval_member_0_test.csv",
        "eval_member_0_val.csv",
    ] {
        assert!(cfg.paths.output_dir.join(name).exists(), "{name} missing");
    }
    assert!(outcome.ensemble_test.accuracy >= 0.0 && outcome.ensemble_test.accuracy <= 1.0);
    assert_eq!(outcome.members_test.len(), 2);

    // The report command merges the eval rows.
    let report = cmd_report(&cfg).unwrap();
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.lines().count() >= 4);
    assert!(text.contains("ensemble,test"));
}

#[test]
fn ensemble_eval_row_carries_lambda_and_members() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 6);
    run_full_pipeline(&cfg).unwrap();
    let row = cmd_evaluate(&cfg, EvalTarget::Ensemble, Split::Test).unwrap();
    assert_eq!(row.lambda, Some(cfg.ensemble.lambda));
    assert_eq!(row.members, vec!["member_0.ckpt", "member_1.ckpt"]);

    // Evaluating twice yields identical reports.
    let again = cmd_evaluate(&cfg, EvalTarget::Ensemble, Split::Test).unwrap();
    assert_eq!(row.report.accuracy, again.report.accuracy);
    assert_eq!(row.report.auroc, again.report.auroc);
    assert_eq!(row.report.logloss, again.report.logloss);
}

#[test]
fn empty_corpus_curation_degenerates_to_gold_plus_augmented() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 7);
    // Point at an empty corpus directory.
    let empty = dir.path().join("empty_corpus");
    std::fs::create_dir_all(&empty).unwrap();
    cfg.paths.corpus_dir = empty;

    cmd_build_vocab(&cfg).unwrap();
    let report = cmd_curate(&cfg, false).unwrap();
    assert_eq!(report.n_pseudo, 0);
    assert_eq!(report.n_snippets, 0);

    let d_final = read_jsonl(&cfg.d_final_path()).unwrap();
    assert!(d_final.iter().all(|ex| ex.origin != Origin::Pseudo));
    assert!(d_final.iter().any(|ex| ex.origin == Origin::Gold));
    assert_eq!(report.n_final, d_final.len());
}

#[test]
fn no_filter_flag_keeps_every_unique_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    cmd_build_vocab(&cfg).unwrap();
    let report = cmd_curate(&cfg, true).unwrap();
    assert_eq!(report.n_pseudo, report.n_retrieved_unique);
    assert!(!report.filter_enabled);
}

#[test]
fn curation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 9);
    cmd_build_vocab(&cfg).unwrap();
    cmd_curate(&cfg, false).unwrap();
    let first = std::fs::read(cfg.d_final_path()).unwrap();
    cmd_curate(&cfg, false).unwrap();
    let second = std::fs::read(cfg.d_final_path()).unwrap();
    assert_eq!(first, second);
}

#[test]
fn epochs_zero_keeps_initialization_and_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 10);
    cfg.train.epochs = 0;
    cmd_build_vocab(&cfg).unwrap();
    cmd_curate(&cfg, false).unwrap();
    let (ckpt, trace) = cmd_train(&cfg, 0, false).unwrap();

    // Checkpoint equals a fresh seeded model.
    let mut trained = sembed::checkpoint::read_checkpoint(&ckpt).unwrap();
    let mut fresh = sembed::model::MemberModel::seeded(trained.cfg.clone()).unwrap();
    assert_eq!(trained.param_values(), fresh.param_values());

    // Trace has a header and no rows.
    let text = std::fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn trace_row_count_equals_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 11);
    cmd_build_vocab(&cfg).unwrap();
    cmd_curate(&cfg, false).unwrap();
    let (_, trace) = cmd_train(&cfg, 0, false).unwrap();
    let text = std::fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().count(), 1 + cfg.train.epochs);
}

#[test]
fn pseudo_examples_satisfy_filter_post_hoc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 12);
    let mut full = run_full_pipeline(&cfg);
    // Bootstrap-backed curation may keep zero pseudo examples on tiny data;
    // the post-hoc check still holds vacuously.
    if full.is_err() {
        full = run_full_pipeline(&cfg);
    }
    full.unwrap();

    let d_final = read_jsonl(&cfg.d_final_path()).unwrap();
    let gold = read_jsonl(&cfg.paths.train).unwrap();
    let sigma = match cfg.curation.sigma_fallback {
        sembed::curation::SigmaFallback::Const(c) => c,
        _ => panic!("benchmark config uses a constant sigma"),
    };
    for ex in d_final.iter().filter(|e| e.origin == Origin::Pseudo) {
        let anchor_idx: usize = ex
            .anchor_id
            .as_deref()
            .unwrap()
            .strip_prefix("gold:")
            .unwrap()
            .parse()
            .unwrap();
        let anchor = &gold[anchor_idx];
        assert!(
            (ex.label - anchor.label).abs() <= sigma + 1e-12,
            "pseudo label {} vs anchor {} exceeds sigma {}",
            ex.label,
            anchor.label,
            sigma
        );
    }
}

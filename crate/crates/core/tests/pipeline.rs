use std::fs;
use std::path::Path;

use teachertrace::classify::TrainConfig;
use teachertrace::experiment::{
    run_attribution, run_similarity, run_support_sweep, summarize, write_synthetic, ExperimentConfig, RunManifest,
    SynthParams,
};
use teachertrace::features::FeatureKind;
use teachertrace::metrics::EvalReport;
use teachertrace::Error;

fn small_family(dir: &Path, separation: f64) -> ExperimentConfig {
    let params = SynthParams {
        teachers: 3,
        separation,
        teacher_docs: 60,
        student_docs: 150,
        sentences_per_doc: 4,
        tagger_sentences: 600,
        seed: 11,
        ..SynthParams::default()
    };
    let mut cfg = ExperimentConfig::load(write_synthetic(&params, dir).unwrap()).unwrap();
    cfg.support_levels = vec![30, 90, 500];
    cfg.train_config = TrainConfig {
        max_iters: 300,
        ..TrainConfig::default()
    };
    cfg
}

fn report(dir: &Path, name: &str) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn attribution_writes_listed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_family(tmp.path(), 1.0);
    let m = run_attribution(&cfg).unwrap();
    for a in &m.artifacts {
        assert!(cfg.output_dir.join(a).is_file(), "{a} missing");
    }
    for a in ["templates.json", "eval_template_30.json", "eval_template_90.csv", "roc_template_90.svg", "accuracy_vs_support.csv"] {
        assert!(m.artifacts.iter().any(|x| x == a), "{a} not listed");
    }
    // 500 exceeds the student corpus and is skipped
    assert!(!m.artifacts.iter().any(|x| x.contains("_500")));
    assert!(m.template_vocab_hash.is_some() && m.tagger_hash.is_some());
    let r = report(&cfg.output_dir, "eval_template_90.json");
    assert_eq!(r.support, 90);
    assert!((r.chance_level - 1.0 / 3.0).abs() < 1e-12);
    assert!(r.accuracy >= 0.9, "template accuracy {}", r.accuracy);
    let loaded = RunManifest::load(cfg.output_dir.join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    assert!(summarize(&cfg.output_dir).unwrap().contains("eval_template_90"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_family(tmp.path(), 1.0);
    let a = run_attribution(&cfg).unwrap();
    let first = cfg.output_dir.clone();
    cfg.output_dir = tmp.path().join("again");
    let b = run_attribution(&cfg).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    for name in a.artifacts.iter().filter(|n| *n != "manifest.json") {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(cfg.output_dir.join(name)).unwrap(), "{name}");
    }
    assert_eq!((a.template_vocab_hash, a.feature_space_hashes), (b.template_vocab_hash, b.feature_space_hashes));
}

#[test]
fn sweep_shape_and_order_independence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_family(tmp.path(), 1.0);
    cfg.support_levels = vec![30, 90];
    run_support_sweep(&cfg).unwrap();
    let csv = fs::read_to_string(cfg.output_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(csv.starts_with("feature_kind,support,accuracy"));

    cfg.support_levels = vec![90, 30];
    cfg.output_dir = tmp.path().join("reordered");
    run_support_sweep(&cfg).unwrap();
    assert_eq!(fs::read_to_string(cfg.output_dir.join("sweep.csv")).unwrap(), csv);
}

#[test]
fn bow_is_blind_to_template_signatures() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_family(tmp.path(), 1.0);
    cfg.feature_kind = FeatureKind::Bow;
    cfg.tagger_model = None;
    run_attribution(&cfg).unwrap();
    let r = report(&cfg.output_dir, "eval_bow_90.json");
    assert!(r.accuracy < 0.6, "bow accuracy {}", r.accuracy);
}

#[test]
fn similarity_run_emits_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_family(tmp.path(), 0.0);
    let m = run_similarity(&cfg).unwrap();
    for a in ["similarity.csv", "similarity.json", "similarity_instances.csv"] {
        assert!(m.artifacts.iter().any(|x| x == a));
    }
    assert!(m.artifacts.iter().filter(|a| a.starts_with("roc_similarity_")).count() == 3);
}

#[test]
fn missing_inputs_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_family(tmp.path(), 1.0);
    cfg.student_corpus = tmp.path().join("nope.jsonl");
    let out = cfg.output_dir.clone();
    for r in [run_attribution(&cfg), run_similarity(&cfg), run_support_sweep(&cfg)] {
        match r {
            Err(e @ Error::Config(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected config error, got {other:?}"),
        }
    }
    assert!(!out.exists());
}

#[test]
fn unmapped_student_label_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_family(tmp.path(), 1.0);
    cfg.student_teacher.clear();
    assert!(matches!(run_attribution(&cfg), Err(Error::Config(_))));
}

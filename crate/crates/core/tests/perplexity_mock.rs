use std::collections::BTreeMap;

use teachertrace::corpus::{Corpus, Document, Role, Split};
use teachertrace::perplexity::mock::{MockConfig, MockModel, MockServer};
use teachertrace::perplexity::{fetch_logprobs, perplexity_probe, EndpointConfig, LogprobResponse};
use teachertrace::Error;

fn server(models: &[(&str, MockModel)]) -> MockServer {
    let config = MockConfig {
        models: models.iter().map(|(n, m)| (n.to_string(), m.clone())).collect(),
    };
    MockServer::start(config).unwrap()
}

fn endpoint(s: &MockServer, model: &str) -> EndpointConfig {
    EndpointConfig {
        backoff_ms: 1,
        ..EndpointConfig::new(s.url(), model)
    }
}

fn corpus(label: &str, n: usize) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| Document {
                id: format!("{label}-{i}"),
                text: format!("student {label} wrote sentence number {i} ."),
                source_label: label.to_string(),
                role: Role::Student,
                dataset: "mock".into(),
                split: Split::Test,
                prompt_id: None,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn fixture_round_trip() {
    let mut m = MockModel::default();
    m.fixtures.insert(
        "a b c".into(),
        LogprobResponse {
            tokens: vec!["a".into(), " b".into(), " c".into()],
            token_logprobs: vec![None, Some(-0.5), Some(-1.5)],
        },
    );
    let s = server(&[("m", m)]);
    let r = fetch_logprobs(&endpoint(&s, "m"), "a b c").unwrap();
    assert_eq!(r.tokens.len(), 3);
    assert_eq!(r.token_logprobs, vec![None, Some(-0.5), Some(-1.5)]);
    assert_eq!(teachertrace::perplexity::perplexity(&r).unwrap(), 1f64.exp());
}

#[test]
fn unauthorized_names_the_env_var() {
    let s = server(&[(
        "m",
        MockModel {
            require_token: Some("sekrit".into()),
            ..MockModel::default()
        },
    )]);
    let mut ep = endpoint(&s, "m");
    ep.auth_env_var = Some("TT_TEST_TOKEN_MISSING".into());
    match fetch_logprobs(&ep, "hello there") {
        Err(e @ Error::Auth { .. }) => {
            assert!(e.to_string().contains("TT_TEST_TOKEN_MISSING"), "{e}");
            assert_eq!(e.exit_code(), 4);
        }
        other => panic!("expected auth error, got {other:?}"),
    }
    std::env::set_var("TT_TEST_TOKEN_OK", "sekrit");
    ep.auth_env_var = Some("TT_TEST_TOKEN_OK".into());
    assert!(fetch_logprobs(&ep, "hello there").is_ok());
}

#[test]
fn forbidden_is_an_auth_error() {
    let s = server(&[(
        "m",
        MockModel {
            status: Some(403),
            ..MockModel::default()
        },
    )]);
    assert!(matches!(fetch_logprobs(&endpoint(&s, "m"), "x y"), Err(Error::Auth { .. })));
}

#[test]
fn retries_then_succeeds_or_gives_up() {
    let s = server(&[
        (
            "flaky",
            MockModel {
                fail_first: 2,
                ..MockModel::default()
            },
        ),
        (
            "down",
            MockModel {
                status: Some(503),
                ..MockModel::default()
            },
        ),
        (
            "busy",
            MockModel {
                status: Some(429),
                ..MockModel::default()
            },
        ),
    ]);
    let mut ep = endpoint(&s, "flaky");
    ep.max_retries = 3;
    assert!(fetch_logprobs(&ep, "x y z").is_ok());
    assert_eq!(s.stats().per_model["flaky"], 3);

    let mut ep = endpoint(&s, "down");
    ep.max_retries = 2;
    let e = fetch_logprobs(&ep, "x y z").unwrap_err();
    assert!(matches!(e, Error::Transport(_)), "{e:?}");
    assert_eq!(s.stats().per_model["down"], 3);

    let mut ep = endpoint(&s, "busy");
    ep.max_retries = 1;
    assert!(matches!(fetch_logprobs(&ep, "x y z"), Err(Error::Transport(_))));
    assert_eq!(s.stats().per_model["busy"], 2);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let s = server(&[(
        "m",
        MockModel {
            malformed: true,
            ..MockModel::default()
        },
    )]);
    assert!(matches!(fetch_logprobs(&endpoint(&s, "m"), "x y"), Err(Error::Protocol(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let mut ep = EndpointConfig::new("http://127.0.0.1:1", "m");
    ep.max_retries = 1;
    ep.backoff_ms = 1;
    assert!(matches!(fetch_logprobs(&ep, "x"), Err(Error::Transport(_))));
}

#[test]
fn concurrency_stays_within_limit() {
    let s = server(&[(
        "m",
        MockModel {
            latency_ms: 20,
            ..MockModel::default()
        },
    )]);
    let s2 = server(&[("m", MockModel::default())]);
    let mut ep = endpoint(&s, "m");
    ep.max_concurrent_requests = 3;
    let mut endpoints = BTreeMap::new();
    endpoints.insert("a".to_string(), ep);
    endpoints.insert("b".to_string(), endpoint(&s2, "m"));
    let mut students = BTreeMap::new();
    students.insert("s".to_string(), corpus("s", 24));
    perplexity_probe(&students, &endpoints, 24, 1).unwrap();
    let stats = s.stats();
    assert_eq!(stats.requests, 24);
    assert!(stats.max_in_flight <= 3, "{stats:?}");
    assert!(stats.max_in_flight >= 2, "requests were never concurrent: {stats:?}");
}

#[test]
fn lower_logprobs_win_the_argmin() {
    let s = server(&[
        (
            "good",
            MockModel {
                base_logprob: -1.0,
                ..MockModel::default()
            },
        ),
        (
            "bad",
            MockModel {
                base_logprob: -3.0,
                ..MockModel::default()
            },
        ),
    ]);
    let mut endpoints = BTreeMap::new();
    // Name order would favor "a-bad" on a tie.
    endpoints.insert("a-bad".to_string(), endpoint(&s, "bad"));
    endpoints.insert("b-good".to_string(), endpoint(&s, "good"));
    let mut students = BTreeMap::new();
    students.insert("s1".to_string(), corpus("s1", 10));
    students.insert("s2".to_string(), corpus("s2", 12));
    let t = perplexity_probe(&students, &endpoints, 12, 5).unwrap();
    assert_eq!(t.argmin_teacher["s1"], "b-good");
    assert_eq!(t.argmin_teacher["s2"], "b-good");
    assert_eq!(t.cell("s1", "a-bad").unwrap().summary.n, 10);
    assert_eq!(t.cell("s2", "b-good").unwrap().summary.n, 12);
    for c in &t.cells {
        assert!(c.summary.q1 <= c.summary.median && c.summary.median <= c.summary.q3);
    }
    let csv = t.to_csv();
    assert!(csv.starts_with("student,teacher,n,median,q1,q3,mean,min,max,argmin\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn ties_go_to_the_first_teacher_name() {
    let s = server(&[("m", MockModel::default())]);
    let mut endpoints = BTreeMap::new();
    endpoints.insert("zeta".to_string(), endpoint(&s, "m"));
    endpoints.insert("alpha".to_string(), endpoint(&s, "m"));
    let mut students = BTreeMap::new();
    students.insert("s".to_string(), corpus("s", 6));
    let t = perplexity_probe(&students, &endpoints, 6, 0).unwrap();
    let a = t.cell("s", "alpha").unwrap().summary.median;
    let z = t.cell("s", "zeta").unwrap().summary.median;
    assert_eq!(a, z);
    assert_eq!(t.argmin_teacher["s"], "alpha");
}

#[test]
fn failed_documents_are_recorded_and_excluded() {
    let s = server(&[
        (
            "picky",
            MockModel {
                reject_containing: Some("number 3 ".into()),
                ..MockModel::default()
            },
        ),
        ("ok", MockModel::default()),
    ]);
    let mut endpoints = BTreeMap::new();
    endpoints.insert("p".to_string(), endpoint(&s, "picky"));
    endpoints.insert("q".to_string(), endpoint(&s, "ok"));
    let mut students = BTreeMap::new();
    students.insert("s".to_string(), corpus("s", 8));
    let t = perplexity_probe(&students, &endpoints, 8, 0).unwrap();
    assert_eq!(t.cell("s", "p").unwrap().summary.n, 7);
    assert_eq!(t.cell("s", "q").unwrap().summary.n, 8);
    assert_eq!(t.failures.len(), 1);
    assert_eq!(t.failures[0].doc_id, "s-3");
}

#[test]
fn empty_cell_is_an_error_and_auth_aborts() {
    let s = server(&[
        (
            "dead",
            MockModel {
                status: Some(400),
                ..MockModel::default()
            },
        ),
        (
            "locked",
            MockModel {
                status: Some(401),
                ..MockModel::default()
            },
        ),
        ("ok", MockModel::default()),
    ]);
    let mut students = BTreeMap::new();
    students.insert("s".to_string(), corpus("s", 3));
    let mut endpoints = BTreeMap::new();
    endpoints.insert("dead".to_string(), endpoint(&s, "dead"));
    endpoints.insert("ok".to_string(), endpoint(&s, "ok"));
    assert!(perplexity_probe(&students, &endpoints, 3, 0).is_err());
    endpoints.remove("dead");
    endpoints.insert("locked".to_string(), endpoint(&s, "locked"));
    assert!(matches!(perplexity_probe(&students, &endpoints, 3, 0), Err(Error::Auth { .. })));
}

#[test]
fn probe_is_deterministic() {
    let s = server(&[("a", MockModel::default()), ("b", MockModel { base_logprob: -2.5, ..MockModel::default() })]);
    let mut endpoints = BTreeMap::new();
    endpoints.insert("a".to_string(), endpoint(&s, "a"));
    endpoints.insert("b".to_string(), endpoint(&s, "b"));
    let mut students = BTreeMap::new();
    students.insert("s".to_string(), corpus("s", 40));
    let t1 = perplexity_probe(&students, &endpoints, 15, 9).unwrap();
    let t2 = perplexity_probe(&students, &endpoints, 15, 9).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(t1.cell("s", "a").unwrap().summary.n, 15);
}

mod run {
    use super::*;
    use std::fs;
    use teachertrace::corpus::save_jsonl;
    use teachertrace::experiment::{run_perplexity, ExperimentConfig};

    fn endpoints_toml(s: &MockServer, names: &[(&str, &str)], extra: &str) -> String {
        names
            .iter()
            .map(|(teacher, model)| {
                format!(
                    "[[endpoint]]\nteacher = \"{teacher}\"\nbase_url = \"{}\"\nmodel_name = \"{model}\"\nbackoff_ms = 1\n{extra}",
                    s.url()
                )
            })
            .collect()
    }

    fn setup(dir: &std::path::Path, students: &Corpus, endpoints: &str) -> ExperimentConfig {
        save_jsonl(students, dir.join("students.jsonl")).unwrap();
        fs::write(dir.join("endpoints.toml"), endpoints).unwrap();
        let mut cfg = ExperimentConfig::from_toml(
            "student_corpus = \"students.jsonl\"\n[perplexity]\nendpoints = \"endpoints.toml\"\nsample_n = 10\n",
        )
        .unwrap();
        cfg.resolve_paths(dir);
        cfg
    }

    #[test]
    fn argmin_follows_constructed_order() {
        let s = server(&[
            ("near", MockModel { base_logprob: -0.5, ..MockModel::default() }),
            ("far", MockModel { base_logprob: -4.0, ..MockModel::default() }),
        ]);
        let tmp = tempfile::tempdir().unwrap();
        let students = Corpus::concat(&[corpus("s1", 6), corpus("s2", 6)]).unwrap();
        let cfg = setup(tmp.path(), &students, &endpoints_toml(&s, &[("t-far", "far"), ("t-near", "near")], ""));
        let m = run_perplexity(&cfg).unwrap();
        for a in ["ppl_table.csv", "ppl_box.svg", "ppl_table.json", "manifest.json"] {
            assert!(m.artifacts.iter().any(|x| x == a) && cfg.output_dir.join(a).is_file(), "{a}");
        }
        let csv = fs::read_to_string(cfg.output_dir.join("ppl_table.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let argmin = line.ends_with(",true");
            assert_eq!(argmin, line.contains(",t-near,"), "{line}");
        }
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn unset_auth_variable_is_a_config_error() {
        let s = server(&[("m", MockModel::default())]);
        let tmp = tempfile::tempdir().unwrap();
        let extra = "auth_env_var = \"TEACHERTRACE_TEST_TOKEN_NEVER_SET\"\n";
        let cfg = setup(tmp.path(), &corpus("s", 3), &endpoints_toml(&s, &[("a", "m"), ("b", "m")], extra));
        match run_perplexity(&cfg) {
            Err(e @ Error::Config(_)) => {
                assert!(e.to_string().contains("TEACHERTRACE_TEST_TOKEN_NEVER_SET"));
                assert_eq!(e.exit_code(), 2);
            }
            other => panic!("expected config error, got {other:?}"),
        }
        assert_eq!(s.stats().requests, 0);
    }

    #[test]
    fn empty_student_corpus_is_an_error() {
        let s = server(&[("m", MockModel::default())]);
        let tmp = tempfile::tempdir().unwrap();
        let cfg = setup(tmp.path(), &corpus("s", 1), &endpoints_toml(&s, &[("a", "m"), ("b", "m")], ""));
        fs::write(&cfg.student_corpus, "").unwrap();
        let e = run_perplexity(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{e}");
    }
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::Value;

use zeta_core::embed::ProviderConfig;
use zeta_core::eval::{map_labels, parse_labels_csv, run_benchmark};
use zeta_core::infer::{read_score_table, InferenceConfig};
use zeta_core::kb::{ConditionEntry, KnowledgeBase};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn zeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeta"))
        .args(args)
        .env_remove("ZETA_CONFIG")
        .env_remove("ZETA_KB")
        .env_remove("ZETA_SEED")
        .output()
        .expect("run zeta")
}

fn ok(args: &[&str]) -> String {
    let out = zeta(args);
    assert!(
        out.status.success(),
        "zeta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs every offline step into `dir` and returns the report path.
fn run_pipeline(dir: &Path) -> PathBuf {
    let fx = fixtures();
    let pipe = fx.join("pipeline");
    let p = |name: &str| dir.join(name);
    ok(&[
        "generate",
        "--conditions",
        s(&fx.join("conditions.json")),
        "--models",
        s(&fx.join("models.json")),
        "--fixtures",
        s(&fx.join("llm")),
        "--dataset",
        "ptbxl",
        "-o",
        s(&p("pool_a.json")),
    ]);
    ok(&[
        "preprocess",
        "--pools",
        s(&p("pool_a.json")),
        "--mode",
        "cdcp",
        "--alias",
        s(&pipe.join("alias.json")),
        "-o",
        s(&p("pool.json")),
    ]);
    ok(&[
        "review",
        "replay",
        "--pool",
        s(&p("pool.json")),
        "--log",
        s(&pipe.join("review_log.jsonl")),
        "-o",
        s(&p("reviewed.json")),
    ]);
    ok(&[
        "kb",
        "export",
        "--pool",
        s(&p("reviewed.json")),
        "-o",
        s(&p("kb.json")),
    ]);
    let provider = s(&pipe.join("provider.json")).to_string();
    ok(&[
        "embed-texts",
        "--kb",
        s(&p("kb.json")),
        "--provider",
        &provider,
        "-o",
        s(&p("text.zeb")),
    ]);
    ok(&[
        "embed-ecgs",
        "--labels",
        s(&pipe.join("labels.csv")),
        "--kb",
        s(&p("kb.json")),
        "--provider",
        &provider,
        "-o",
        s(&p("ecg.zeb")),
    ]);
    ok(&[
        "score",
        "--ecg-store",
        s(&p("ecg.zeb")),
        "--text-store",
        s(&p("text.zeb")),
        "--kb",
        s(&p("kb.json")),
        "-o",
        s(&p("scores.jsonl")),
    ]);
    ok(&[
        "evaluate",
        "--scores",
        s(&p("scores.jsonl")),
        "--labels",
        s(&pipe.join("labels.csv")),
        "--threshold",
        "0.5",
        "-o",
        s(&p("report.json")),
    ]);
    p("report.json")
}

fn assert_json_close(actual: &Value, expected: &Value, path: &str) {
    match (actual, expected) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-12, "{path}: {a} != {b}");
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(
                a.keys().collect::<Vec<_>>(),
                b.keys().collect::<Vec<_>>(),
                "{path}"
            );
            for (k, v) in a {
                assert_json_close(v, &b[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_json_close(x, y, &format!("{path}[{i}]"));
            }
        }
        _ => assert_eq!(actual, expected, "{path}"),
    }
}

/// Pairwise win / half-tie count over every positive-negative pair.
fn pairwise_auc(col: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in col.iter().filter(|(_, l)| *l) {
        for (sn, _) in col.iter().filter(|(_, l)| !*l) {
            pairs += 1.0;
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

#[test]
fn offline_pipeline_matches_golden_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report_a = run_pipeline(a.path());
    let report_b = run_pipeline(b.path());

    // deterministic: every artifact is byte-identical across runs
    for f in [
        "pool.json",
        "reviewed.json",
        "kb.json",
        "text.zeb",
        "ecg.zeb",
        "scores.jsonl",
        "report.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs between runs"
        );
    }

    let actual: Value = serde_json::from_str(&std::fs::read_to_string(&report_a).unwrap()).unwrap();
    let golden: Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("pipeline/golden_report.json")).unwrap(),
    )
    .unwrap();
    assert_json_close(&actual, &golden, "report");
    drop(report_b);
}

#[test]
fn pipeline_report_agrees_with_independent_recount() {
    let dir = tempfile::tempdir().unwrap();
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(run_pipeline(dir.path())).unwrap()).unwrap();
    let scores =
        read_score_table(&std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap())
            .unwrap();
    let labels =
        parse_labels_csv(&std::fs::read_to_string(fixtures().join("pipeline/labels.csv")).unwrap())
            .unwrap();

    let mut aucs = Vec::new();
    for code in ["AFIB", "AMI", "STACH"] {
        let col: Vec<(f64, bool)> = scores
            .iter()
            .filter(|r| r.condition == code)
            .map(|r| (r.possibility, labels[&r.ecg_id].contains(code)))
            .collect();
        assert_eq!(col.len(), 60);
        let auc = pairwise_auc(&col);
        assert!(
            (report["per_class_auc"][code].as_f64().unwrap() - auc).abs() < 1e-12,
            "{code}"
        );
        assert_eq!(report["class_counts"][code]["n_pos"], 20);
        aucs.push(auc);

        let tp = col.iter().filter(|(s, l)| *s > 0.5 && *l).count();
        assert_eq!(report["per_class_confusion"][code]["tp"], tp);
    }
    let mean = aucs.iter().sum::<f64>() / 3.0;
    assert!((report["macro_auc"].as_f64().unwrap() - mean).abs() < 1e-12);

    // reviewed texts survive, rejected and unreviewed ones do not
    let kb: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("kb.json")).unwrap())
            .unwrap();
    let afib = kb["conditions"]["AFIB"]["positives"].as_array().unwrap();
    assert!(afib.contains(&Value::from("no measurable pr interval")));
    assert!(!afib.contains(&Value::from("no consistent pr interval")));
    assert!(!afib.contains(&Value::from("no isoelectric baseline")));
    assert_eq!(kb["conditions"]["AMI"]["paired"], true);
}

#[test]
fn export_with_log_equals_replay_then_export() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let log = fixtures().join("pipeline/review_log.jsonl");
    let direct = dir.path().join("kb_direct.json");
    ok(&[
        "kb",
        "export",
        "--pool",
        s(&dir.path().join("pool.json")),
        "--log",
        s(&log),
        "-o",
        s(&direct),
    ]);
    assert_eq!(
        std::fs::read(direct).unwrap(),
        std::fs::read(dir.path().join("kb.json")).unwrap()
    );
}

#[test]
fn mismatched_store_dims_exit_2_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("kb.json"), kb_json()).unwrap();
    for (dim, name) in [(64, "p64.json"), (32, "p32.json")] {
        std::fs::write(p(name), format!(r#"{{"kind": "synthetic", "dim": {dim}}}"#)).unwrap();
    }
    ok(&[
        "embed-texts",
        "--kb",
        s(&p("kb.json")),
        "--provider",
        s(&p("p32.json")),
        "-o",
        s(&p("text.zeb")),
    ]);
    std::fs::write(p("ids.txt"), "e1\ne2\n").unwrap();
    ok(&[
        "embed-ecgs",
        "--ids",
        s(&p("ids.txt")),
        "--provider",
        s(&p("p64.json")),
        "-o",
        s(&p("ecg.zeb")),
    ]);
    let out = zeta(&[
        "score",
        "--ecg-store",
        s(&p("ecg.zeb")),
        "--text-store",
        s(&p("text.zeb")),
        "--kb",
        s(&p("kb.json")),
        "-o",
        s(&p("scores.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dim 64") && err.contains("dim 32"), "{err}");
    assert!(!p("scores.jsonl").exists());
}

#[test]
fn exit_code_classes() {
    // usage
    assert_eq!(zeta(&["score", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        zeta(&[
            "preprocess",
            "--pools",
            "a.json",
            "--mode",
            "dscp",
            "-o",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        zeta(&["kb", "export", "-o", "/tmp/never.json"])
            .status
            .code(),
        Some(1)
    );
    // runtime / IO
    let out = zeta(&[
        "kb",
        "export",
        "--pool",
        "/nonexistent/pool.json",
        "-o",
        "/tmp/never.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/pool.json"));
    // validation
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("pool.json");
    std::fs::write(&bad, "{\"not\": \"a pool\"}").unwrap();
    assert_eq!(
        zeta(&["kb", "export", "--pool", s(&bad), "-o", "/tmp/never.json"])
            .status
            .code(),
        Some(2)
    );
    // help is not an error
    assert_eq!(zeta(&["--help"]).status.code(), Some(0));
}

#[test]
fn remote_failures_exit_4_without_leaking_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models.json");
    std::fs::write(
        &models,
        r#"[{"name": "m", "endpoint": "http://127.0.0.1:9/v1/chat/completions", "token_env": "ZETA_TEST_CLI_TOKEN"}]"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zeta"))
        .args([
            "generate",
            "--conditions",
            s(&fixtures().join("conditions.json")),
            "--models",
            s(&models),
            "--timeout",
            "2",
            "--max-attempts",
            "2",
            "-o",
            s(&dir.path().join("pool.json")),
        ])
        .env("ZETA_TEST_CLI_TOKEN", "sekret-value-123")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!all.contains("sekret-value-123"), "{all}");
}

#[test]
fn dump_config_resolves_file_env_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zeta.json");
    std::fs::write(
        &cfg,
        r#"{"kb": "kb.json", "seed": 7, "jobs": 2, "inference": {"tau": 0.25}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zeta"))
        .args(["--dump-config", "--jobs", "3", "evaluate", "--scores", "x"])
        .env("ZETA_CONFIG", &cfg)
        .env("ZETA_SEED", "11")
        .env("ZETA_MODE", "paired")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kb"], s(&dir.path().join("kb.json")));
    assert_eq!(v["seed"], 11);
    assert_eq!(v["jobs"], 3);
    assert_eq!(v["inference"]["tau"], 0.25);
    assert_eq!(v["inference"]["mode"], "paired");
}

fn kb_json() -> String {
    planted_kb().to_json().unwrap()
}

const CODES: [&str; 4] = ["AFIB", "STACH", "SBRAD", "PACE"];

fn planted_kb() -> KnowledgeBase {
    let conditions = CODES
        .iter()
        .map(|c| {
            (
                c.to_string(),
                ConditionEntry {
                    positives: (0..3).map(|i| format!("{c} finding {i}")).collect(),
                    negatives: (0..3).map(|i| format!("{c} absent finding {i}")).collect(),
                    paired: true,
                },
            )
        })
        .collect();
    KnowledgeBase::new(conditions).unwrap()
}

#[test]
fn evaluate_matches_in_process_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let kb = planted_kb();
    kb.save(p("kb.json")).unwrap();
    let mut csv = String::from("sample_id,labels\n");
    for c in CODES {
        for i in 0..50 {
            csv.push_str(&format!("{c}_{i:03},{c}\n"));
        }
    }
    std::fs::write(p("labels.csv"), &csv).unwrap();
    let provider = ProviderConfig::Synthetic {
        seed: 42,
        dim: 64,
        sigma: 0.1,
        planted_labels: Some(p("labels.csv")),
        kb: None,
    };
    std::fs::write(
        p("provider.json"),
        serde_json::to_string(&provider).unwrap(),
    )
    .unwrap();

    let labels = map_labels(&parse_labels_csv(&csv).unwrap(), None, false).unwrap();
    let kb = Arc::new(kb);
    let built = provider.build(Some(kb.clone())).unwrap();
    let expected = run_benchmark(
        built.as_ref(),
        &labels,
        &kb,
        &InferenceConfig::default(),
        2,
        false,
    )
    .unwrap()
    .report
    .macro_auc;
    assert!(expected >= 0.95);

    let provider_path = s(&p("provider.json")).to_string();
    let kb_path = s(&p("kb.json")).to_string();
    ok(&[
        "embed-texts",
        "--kb",
        &kb_path,
        "--provider",
        &provider_path,
        "-o",
        s(&p("text.zeb")),
    ]);
    ok(&[
        "embed-ecgs",
        "--labels",
        s(&p("labels.csv")),
        "--kb",
        &kb_path,
        "--provider",
        &provider_path,
        "-o",
        s(&p("ecg.zeb")),
    ]);
    ok(&[
        "score",
        "--ecg-store",
        s(&p("ecg.zeb")),
        "--text-store",
        s(&p("text.zeb")),
        "--kb",
        &kb_path,
        "-o",
        s(&p("scores.jsonl")),
    ]);
    let stdout = ok(&[
        "evaluate",
        "--scores",
        s(&p("scores.jsonl")),
        "--labels",
        s(&p("labels.csv")),
    ]);
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("macro AUC "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (printed - expected).abs() <= 1e-12,
        "{printed} vs {expected}"
    );

    // the one-step benchmark command prints the same value
    let stdout = ok(&[
        "benchmark",
        "--labels",
        s(&p("labels.csv")),
        "--kb",
        &kb_path,
        "--provider",
        &provider_path,
    ]);
    let one_step: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("macro AUC "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(one_step, expected);
}

#[test]
fn study_plan_and_report_run_offline() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let p = |n: &str| dir.path().join(n);
    let labels = fixtures().join("pipeline/labels.csv");
    let plan = |out: &Path| {
        ok(&[
            "study",
            "plan",
            "--scores",
            s(&p("scores.jsonl")),
            "--labels",
            s(&labels),
            "--k",
            "3",
            "--session-id",
            "s1",
            "-o",
            s(out),
        ])
    };
    plan(&p("session.json"));
    plan(&p("session2.json"));
    assert_eq!(
        std::fs::read(p("session.json")).unwrap(),
        std::fs::read(p("session2.json")).unwrap()
    );

    let session: Value =
        serde_json::from_str(&std::fs::read_to_string(p("session.json")).unwrap()).unwrap();
    let cards = session["cards"].as_array().unwrap();
    assert_eq!(cards.len(), 3 * 4 * 3);
    let distinct: BTreeSet<(String, String)> = cards
        .iter()
        .map(|c| {
            (
                c["condition"].as_str().unwrap().into(),
                c["sample_id"].as_str().unwrap().into(),
            )
        })
        .collect();
    assert_eq!(distinct.len(), cards.len());

    // every card answered with the ground truth
    let mut log = String::new();
    for c in cards {
        let d = if c["label"] == true {
            "present"
        } else {
            "absent"
        };
        log.push_str(&format!(
            "{{\"session_id\":\"s1\",\"condition\":{},\"sample_id\":{},\"expert_id\":\"dr-a\",\"diagnosis\":\"{d}\",\"timestamp\":\"2025-05-01T00:00:00Z\"}}\n",
            c["condition"], c["sample_id"]
        ));
    }
    std::fs::write(p("answers.jsonl"), log).unwrap();
    let out = ok(&[
        "study",
        "report",
        "--session",
        s(&p("session.json")),
        "--answers",
        s(&p("answers.jsonl")),
        "-o",
        s(&p("study.json")),
    ]);
    assert!(out.contains("36 answers on 36 cards"), "{out}");
    let row = out
        .lines()
        .find(|l| l.starts_with("Expert + ZETA"))
        .unwrap();
    assert_eq!(
        row.trim_start_matches("Expert + ZETA")
            .split_whitespace()
            .collect::<Vec<_>>(),
        ["100.0", "100.0", "100.0", "100.0"]
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(p("study.json")).unwrap()).unwrap();
    let by_name: BTreeMap<&str, &Value> = report["pooled"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["name"].as_str().unwrap(), r))
        .collect();
    let g = by_name["Guidance"]["n"].as_u64().unwrap();
    let m = by_name["Misleading"]["n"].as_u64().unwrap();
    assert_eq!(g + m, 36);
}

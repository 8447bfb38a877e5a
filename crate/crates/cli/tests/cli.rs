use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;

const MODELS: [&str; 5] = ["GPT-4", "Claude-Opus", "LLAMA-3", "Mistral-v2", "GEMMA"];

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn polyemo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyemo"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("PROVIDER_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

fn f(rel: &str) -> String {
    fixture(rel).display().to_string()
}

fn ensemble_preds() -> Vec<String> {
    MODELS
        .iter()
        .flat_map(|m| ["--pred".to_string(), f(&format!("ensemble/{m}.tsv"))])
        .collect()
}

fn ensemble_args(extra: &[String], tail: &[&str]) -> Vec<String> {
    let mut args = vec!["ensemble".to_string()];
    args.extend(extra.iter().cloned());
    args.extend(tail.iter().map(|s| s.to_string()));
    args
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn audit(dir: &Path) -> Vec<Value> {
    read(dir.join("audit.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn provider_config(dir: &Path) -> PathBuf {
    let path = dir.join("provider.json");
    std::fs::write(
        &path,
        r#"{"endpoint":"http://127.0.0.1:9/unused","model":"m","backoff_base_ms":5,"max_backoff_ms":20}"#,
    )
    .unwrap();
    path
}

#[test]
fn evaluate_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let gold = f("ensemble/gold.tsv");
    let preds = tmp.path().join("perfect.tsv");
    let mut body = String::from("id\tlabel\n");
    for line in read(&gold).lines().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        body.push_str(&format!("{}\t{}\n", cells[0], cells[3]));
    }
    std::fs::write(&preds, body).unwrap();
    let out = tmp.path().join("out");
    let o = polyemo(&out, &["evaluate", "--gold", &gold, "--pred", preds.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(out.join("evaluation.txt"));
    for label in ["Micro F1", "Macro F1", "Weighted F1"] {
        assert!(text.contains(&format!("{label:<12} {:>8}", "1.0000")), "{text}");
    }
    assert_eq!(
        json(out.join("evaluation.json"))["perfect"]["aggregate"]["weighted"],
        1.0
    );
}

#[test]
fn evaluate_three_item_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polyemo(
        tmp.path(),
        &[
            "evaluate",
            "--gold",
            &f("micro/aab_gold.tsv"),
            "--pred",
            &format!("M={}", f("micro/aab_pred.tsv")),
        ],
    );
    assert_eq!(code(&o), 0);
    assert!(read(tmp.path().join("evaluation.txt")).contains("Weighted F1    0.6667"));
    let w = json(tmp.path().join("evaluation.json"))["M"]["aggregate"]["weighted"]
        .as_f64()
        .unwrap();
    assert!((w - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn evaluate_reports_line_of_bad_label() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.tsv");
    std::fs::write(&bad, "id\tlabel\na1\tAnger\na2\tHappy\n").unwrap();
    let o = polyemo(
        &tmp.path().join("out"),
        &[
            "evaluate",
            "--gold",
            &f("micro/aab_gold.tsv"),
            "--pred",
            bad.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("bad.tsv:3: unknown emotion-6 label \"Happy\"\n"), "{err}");
}

#[test]
fn evaluate_can_emit_a_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "evaluate".to_string(),
        "--gold".into(),
        f("ensemble/gold.tsv"),
        "--profile".into(),
    ];
    args.extend(ensemble_preds());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = polyemo(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let profile = json(tmp.path().join("skill_profile.json"));
    assert!(profile["by_language"]["LLAMA-3"]["Spanish"]["weighted"].is_number());
    assert!(profile["by_class"]["GEMMA"]["Love"].is_number());
}

#[test]
fn report_renders_profile_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polyemo(
        tmp.path(),
        &[
            "report",
            "--profile",
            &f("profiles/dev_profile.json"),
            "--models",
            "GPT-4,GEMMA,Claude-Opus,Mistral-v2,LLAMA-3",
            "--dataset",
            &f("corpus/dev.tsv"),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(tmp.path().join("report.txt"));
    let spanish = text.lines().find(|l| l.starts_with("Spanish    Weighted F1")).unwrap();
    let cells: Vec<&str> = spanish.split_whitespace().skip(3).collect();
    assert_eq!(cells, ["0.6760", "0.7250", "0.6660", "0.7510", "0.7790"]);
    let fear = text.lines().find(|l| l.starts_with("Fear ")).unwrap();
    assert!(fear.contains("0.4200"));
    let dist = json(tmp.path().join("report.json"));
    let key = f("corpus/dev.tsv");
    assert_eq!(dist["datasets"][&key]["by_class"]["Anger"], 129);
}

#[test]
fn ensemble_of_identical_models_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let one = f("ensemble/GPT-4.tsv");
    let gold = f("ensemble/gold.tsv");
    let mut args = vec!["ensemble", "--gold", &gold];
    let named: Vec<String> = MODELS.iter().map(|m| format!("{m}={one}")).collect();
    for n in &named {
        args.extend(["--pred", n.as_str()]);
    }
    let profile = f("profiles/dev_profile.json");
    args.extend(["--preset", "vote-route-macro", "--profile", &profile]);
    let o = polyemo(tmp.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(tmp.path().join("ensemble_predictions.tsv")), read(&one));
}

#[test]
fn route_weighted_sends_spanish_to_llama() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = ensemble_preds();
    let profile = f("profiles/dev_profile.json");
    let gold = f("ensemble/gold.tsv");
    let args = ensemble_args(
        &preds,
        &["--gold", &gold, "--preset", "route-weighted", "--profile", &profile],
    );
    let o = polyemo(tmp.path(), &strs(&args));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let llama = read(fixture("ensemble/LLAMA-3.tsv"));
    let out = read(tmp.path().join("ensemble_predictions.tsv"));
    for id in ["e09", "e10"] {
        let want = llama.lines().find(|l| l.starts_with(id)).unwrap();
        assert!(out.lines().any(|l| l == want), "{id}");
    }
    let records = audit(tmp.path());
    let e09 = records.iter().find(|r| r["id"] == "e09").unwrap();
    assert_eq!(e09["rule"], "route:LLAMA-3");
    assert_eq!(e09["label"], "Sadness");
}

#[test]
fn tie_falls_back_in_audit_log() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = ensemble_preds();
    let profile = f("profiles/dev_profile.json");
    let gold = f("ensemble/gold.tsv");
    let args = ensemble_args(
        &preds,
        &[
            "--gold",
            &gold,
            "--preset",
            "vote-global-weighted",
            "--profile",
            &profile,
        ],
    );
    let o = polyemo(tmp.path(), &strs(&args));
    assert_eq!(code(&o), 0);
    let records = audit(tmp.path());
    let tie = records.iter().find(|r| r["id"] == "e10").unwrap();
    assert_eq!(tie["rule"], "fallback:GPT-4");
    assert_eq!(tie["label"], "Joy");
    assert!(records
        .iter()
        .filter(|r| r["id"] != "e10")
        .all(|r| r["rule"] == "plurality"));
    assert!(tmp.path().join("evaluation.json").exists());
}

#[test]
fn unresolvable_items_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    // nobody votes on e10
    let mut args = vec!["ensemble".to_string(), "--gold".into(), f("ensemble/gold.tsv")];
    for m in MODELS {
        let path = tmp.path().join(format!("{m}.tsv"));
        let body: String = read(fixture(&format!("ensemble/{m}.tsv")))
            .lines()
            .filter(|l| !l.starts_with("e10"))
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(&path, body).unwrap();
        args.extend(["--pred".into(), path.display().to_string()]);
    }
    args.extend([
        "--preset".into(),
        "vote-global-weighted".into(),
        "--profile".into(),
        f("profiles/dev_profile.json"),
    ]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = tmp.path().join("strict");
    let o = polyemo(&out, &argv);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("e10"));
    assert_eq!(json(out.join("unresolved.json"))[0]["id"], "e10");

    let mut lenient = argv.clone();
    lenient.extend(["--max-unresolved", "0.1"]);
    let out = tmp.path().join("lenient");
    let o = polyemo(&out, &lenient);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(out.join("ensemble_predictions.tsv")).lines().count(), 10);
}

#[test]
fn ensemble_rejects_unknown_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = ensemble_preds();
    let profile = f("profiles/dev_profile.json");
    let gold = f("ensemble/gold.tsv");
    let args = ensemble_args(&preds, &["--gold", &gold, "--preset", "nope", "--profile", &profile]);
    assert_eq!(code(&polyemo(tmp.path(), &strs(&args))), 2);
}

#[test]
fn jsonl_output_format() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = ensemble_preds();
    let profile = f("profiles/dev_profile.json");
    let gold = f("ensemble/gold.tsv");
    let mut args = vec!["--format".to_string(), "jsonl".into()];
    args.extend(ensemble_args(
        &preds,
        &["--gold", &gold, "--preset", "route-macro", "--profile", &profile],
    ));
    let o = polyemo(tmp.path(), &strs(&args));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first: Value = serde_json::from_str(
        read(tmp.path().join("ensemble_predictions.jsonl"))
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["id"], "e01");
}

#[test]
fn predict_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = provider_config(tmp.path());
    let out = tmp.path().join("out");
    let o = polyemo(
        &out,
        &[
            "--mock",
            &f("mock/classify.json"),
            "predict",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        read(out.join("predictions.tsv")),
        "id\tlabel\nm1\tAnger\nm2\tSadness\nm3\tJoy\n"
    );
    let summary = json(out.join("predict_summary.json"));
    assert_eq!(summary["ok"], 3);
    let manifest = json(out.join("manifest.json"));
    assert!(manifest["config"]["provider"]["endpoint"]
        .as_str()
        .unwrap()
        .starts_with("mock:"));
}

#[test]
fn predict_logs_retries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = provider_config(tmp.path());
    let out = tmp.path().join("out");
    let o = polyemo(
        &out,
        &[
            "--mock",
            &f("mock/flaky.json"),
            "predict",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log: Vec<Value> = read(out.join("predict-classify.log.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log[0]["attempts"], 2);
    assert_eq!(log[1]["attempts"], 2);
    assert_eq!(log[2]["attempts"], 1);
}

#[test]
fn predict_resumes_from_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = provider_config(tmp.path());
    let out = tmp.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(
        out.join("predict-classify.log.jsonl"),
        concat!(
            r#"{"id":"m1","task":"classify","attempts":1,"outcome":"ok","value":"Fear"}"#,
            "\n",
            r#"{"id":"m2","task":"classify","attempts":4,"outcome":"error","error":"HTTP 503"}"#,
            "\n",
        ),
    )
    .unwrap();
    let o = polyemo(
        &out,
        &[
            "--mock",
            &f("mock/classify.json"),
            "predict",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(out.join("predict_summary.json"));
    assert_eq!(summary["requested"], serde_json::json!(["m2", "m3"]));
    // the restored answer is kept, not re-asked
    assert!(read(out.join("predictions.tsv")).contains("m1\tFear"));
}

#[test]
fn predict_abstains_on_unknown_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = provider_config(tmp.path());
    let out = tmp.path().join("out");
    let o = polyemo(
        &out,
        &[
            "--mock",
            &f("mock/unknown.json"),
            "predict",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(out.join("predict_summary.json"));
    assert_eq!(
        (summary["ok"].clone(), summary["abstained"].clone()),
        (2.into(), 1.into())
    );
    assert!(!read(out.join("predictions.tsv")).contains("m2"));
}

#[test]
fn predict_without_token_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polyemo(
        tmp.path(),
        &[
            "predict",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            &f("configs/provider.json"),
        ],
    );
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("PROVIDER_API_KEY"));
}

#[test]
fn predict_binary_and_language_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = provider_config(tmp.path());
    let script = tmp.path().join("yes.json");
    std::fs::write(&script, r#"{"default":{"content":"YES"}}"#).unwrap();
    let out = tmp.path().join("bin");
    let o = polyemo(
        &out,
        &[
            "--mock",
            script.to_str().unwrap(),
            "predict",
            "--task",
            "binary:Fear",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read(out.join("verdicts-Fear.tsv")).contains("m1\tYES"));

    std::fs::write(&script, r#"{"default":{"content":"Dutch"}}"#).unwrap();
    let out = tmp.path().join("lang");
    let o = polyemo(
        &out,
        &[
            "--mock",
            script.to_str().unwrap(),
            "predict",
            "--task",
            "language",
            "--dataset",
            &f("mock/items.tsv"),
            "--provider",
            cfg.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read(out.join("languages.tsv")).contains("m2\tDutch"));
}

#[test]
fn simulate_examples_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |spec: &str, name: &str, trials: &str| {
        let out = tmp.path().join(name);
        let o = polyemo(
            &out,
            &[
                "--seed",
                "11",
                "simulate",
                "--spec",
                &f(spec),
                "--strategies",
                &f("simulate/strategies.json"),
                "--trials",
                trials,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        json(out.join("trial_report.json"))
    };
    let strategy = |r: &Value, name: &str, metric: &str| {
        r["strategies"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["name"] == name)
            .unwrap()[metric]["mean"]
            .as_f64()
            .unwrap()
    };
    let independent = run("simulate/independent.json", "ind", "2");
    assert!(strategy(&independent, "vote-global-weighted", "micro") >= 0.68256 - 0.01);

    let correlated = run("simulate/correlated.json", "cor", "2");
    let vote = strategy(&correlated, "vote-global-weighted", "micro");
    for s in correlated["single_models"].as_array().unwrap() {
        assert!((vote - s["micro"]["mean"].as_f64().unwrap()).abs() <= 0.005);
    }

    let routed = run("simulate/profile_routing.json", "route", "6");
    let best = routed["single_models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["weighted"]["mean"].as_f64().unwrap())
        .fold(0.0, f64::max);
    assert!(strategy(&routed, "route-weighted", "weighted") >= best);
}

#[test]
fn simulate_rejects_invalid_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    std::fs::write(
        &spec,
        r#"{"gold":{"items_per_language":10},"models":[{"model":"GPT-4","default_correct":1.5}]}"#,
    )
    .unwrap();
    let o = polyemo(
        &tmp.path().join("o"),
        &[
            "simulate",
            "--spec",
            spec.to_str().unwrap(),
            "--preset",
            "route-weighted",
        ],
    );
    assert_eq!(code(&o), 2);
    let o = polyemo(
        &tmp.path().join("o"),
        &[
            "simulate",
            "--spec",
            &f("simulate/independent.json"),
            "--preset",
            "route-weighted",
            "--trials",
            "0",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn manifest_lists_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let gold = f("micro/aab_gold.tsv");
    let o = polyemo(
        tmp.path(),
        &["evaluate", "--gold", &gold, "--pred", &f("micro/aab_pred.tsv")],
    );
    assert_eq!(code(&o), 0);
    let m = json(tmp.path().join("manifest.json"));
    assert_eq!(m["command"], "evaluate");
    assert_eq!(m["timestamp"], "2023-11-14T22:13:20Z");
    assert_eq!(m["inputs"][&gold].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"], serde_json::json!(["evaluation.json", "evaluation.txt"]));
}

fn emotion_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["Anger", "Fear", "Joy", "Love", "Neutral", "Sadness"])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn text_and_json_reports_agree(rows in prop::collection::vec((emotion_name(), emotion_name()), 1..30)) {
        let tmp = tempfile::tempdir().unwrap();
        let gold = tmp.path().join("gold.tsv");
        let pred = tmp.path().join("m.tsv");
        let mut g = String::from("id\ttext\tlabel\n");
        let mut p = String::from("id\tlabel\n");
        for (i, (a, b)) in rows.iter().enumerate() {
            g.push_str(&format!("x{i}\tt\t{a}\n"));
            p.push_str(&format!("x{i}\t{b}\n"));
        }
        std::fs::write(&gold, g).unwrap();
        std::fs::write(&pred, p).unwrap();
        let out = tmp.path().join("out");
        let o = polyemo(&out, &["evaluate", "--gold", gold.to_str().unwrap(), "--pred", pred.to_str().unwrap()]);
        prop_assert_eq!(code(&o), 0);
        let report = json(out.join("evaluation.json"));
        let text = read(out.join("evaluation.txt"));
        for (label, key) in [("Micro F1", "micro"), ("Macro F1", "macro"), ("Weighted F1", "weighted")] {
            let v = report["m"]["aggregate"][key].as_f64().unwrap();
            let line = format!("{label:<12} {v:>8.4}");
            prop_assert!(text.contains(&line), "{} missing from\n{}", line, text);
        }
    }
}

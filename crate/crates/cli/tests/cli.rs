use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clinassert::manifest::RunManifest;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clinassert"));
    c.env_remove("CLINASSERT_DATA_DIR");
    c
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn assert_manifest_verifies(out: &Path) {
    let m = RunManifest::load(&RunManifest::path_for(out)).unwrap();
    assert!(m.mismatches().is_empty(), "{:?}", m.mismatches());
    assert!(!m.outputs.is_empty());
}

fn annotate_sentences(dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("ann.jsonl");
    let docs = data("fixtures/sentences/docs.jsonl");
    let chunks = data("fixtures/sentences/chunks.jsonl");
    let mut args = vec![
        "annotate",
        "--corpus",
        s(&docs),
        "--chunks",
        s(&chunks),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    (run(&args), out)
}

#[test]
fn version_names_schema() {
    let o = run(&["--version"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains(&format!("schema {}", clinassert::manifest::SCHEMA_VERSION)));
}

#[test]
fn annotate_sentences_six_rows_with_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = annotate_sentences(dir.path(), &["--engine", "contextual", "--fallback-label", "present"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<String> = lines(&out)
        .iter()
        .map(|v| v["label"].as_str().unwrap().to_string())
        .collect();
    let gold: Vec<String> = lines(&data("fixtures/sentences/gold.jsonl"))
        .iter()
        .map(|v| v["label"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(got.len(), 6);
    assert_eq!(got, gold);
    assert_manifest_verifies(&out);
}

#[test]
fn annotate_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let sub = dir.path().join(workers);
        std::fs::create_dir(&sub).unwrap();
        let (o, out) = annotate_sentences(&sub, &["--engine", "contextual", "--workers", workers]);
        assert_eq!(code(&o), 0);
        outputs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn negex_absent_only() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = annotate_sentences(dir.path(), &["--engine", "negex", "--emit-absent-only"]);
    assert_eq!(code(&o), 0);
    let rows = lines(&out);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["label"] == "absent" && r["source"] == "negex"));
}

#[test]
fn missing_rules_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = annotate_sentences(
        dir.path(),
        &["--engine", "contextual", "--rules", "/nonexistent/rules.jsonl"],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = annotate_sentences(dir.path(), &["--engine", "bogus"]);
    assert_eq!(code(&o), 2);
    assert_eq!(
        code(&run(&[
            "merge",
            "--pipeline",
            "p.json",
            "--stream",
            "noequals",
            "--out",
            "o"
        ])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn alignment_error_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let chunks = dir.path().join("chunks.jsonl");
    std::fs::write(
        &chunks,
        "{\"doc_id\":\"sent-4\",\"text\":\"diarrhea\",\"begin\":25,\"end\":33}\n\
         {\"doc_id\":\"sent-4\",\"text\":\"diarrhoea\",\"begin\":25,\"end\":33}\n",
    )
    .unwrap();
    let out = dir.path().join("o.jsonl");
    let docs = data("fixtures/sentences/docs.jsonl");
    let o = run(&[
        "annotate",
        "--engine",
        "negex",
        "--corpus",
        s(&docs),
        "--chunks",
        s(&chunks),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains(&format!("{}:2", chunks.display())), "{err}");
}

fn merge_args(dir: &Path, streams: &[&str], extra: &[String]) -> (Output, PathBuf) {
    let out = dir.join("merged.jsonl");
    let pipeline = data("pipelines/combined.json");
    let mut args: Vec<String> = vec!["merge".into(), "--pipeline".into(), s(&pipeline).into()];
    for name in streams {
        args.push("--stream".into());
        args.push(format!(
            "{name}={}",
            data(&format!("fixtures/pipeline/{name}.jsonl")).display()
        ));
    }
    args.extend_from_slice(extra);
    args.push("--out".into());
    args.push(s(&out).into());
    (bin().args(&args).output().unwrap(), out)
}

const STREAMS: [&str; 4] = ["assertion_fewshot", "assertionDL", "ca_possible", "ca_conditional"];

#[test]
fn merge_pipeline_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = merge_args(dir.path(), &STREAMS, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(data("fixtures/pipeline/expected.jsonl")).unwrap()
    );
    assert_manifest_verifies(&out);
}

#[test]
fn merge_unreferenced_stream_warns() {
    let dir = tempfile::tempdir().unwrap();
    let extra = vec!["--stream".to_string(), "spare=/nonexistent.jsonl".to_string()];
    let (o, _) = merge_args(dir.path(), &STREAMS, &extra);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stderr).unwrap().contains("spare"));
}

#[test]
fn merge_missing_stream_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = merge_args(dir.path(), &STREAMS[..3], &[]);
    assert_eq!(code(&o), 1);
}

fn evaluate(args: &[&str]) -> (Output, String) {
    let o = run(&[&["evaluate"], args].concat());
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    (o, out)
}

#[test]
fn evaluate_identity_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gold = data("fixtures/sentences/gold.jsonl");
    let report = dir.path().join("report.json");
    let (o, _) = evaluate(&["--gold", s(&gold), "--pred", s(&gold), "--report", s(&report)]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["weighted_f1"], 1.0);
    for (_, c) in r["per_class"].as_object().unwrap() {
        assert_eq!(c["f1"], 1.0);
    }
    assert_manifest_verifies(&report);
}

#[test]
fn evaluate_absent_only_weighted_equals_absent() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let (gold, pred) = (
        data("fixtures/span_match/gold.jsonl"),
        data("fixtures/span_match/pred.jsonl"),
    );
    let (o, stdout) = evaluate(&["--gold", s(&gold), "--pred", s(&pred), "--report", s(&report)]);
    assert_eq!(code(&o), 0);
    assert!(stdout.contains("full match 1443"), "{stdout}");
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["weighted_f1"], r["per_class"]["absent"]["f1"]);
    assert_eq!(r["match_counts"]["partial"], 535);
    assert_eq!(r["match_counts"]["none"], 616);
}

#[test]
fn evaluate_maps_vendor_labels() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("aws.jsonl");
    std::fs::write(
        &pred,
        "{\"doc_id\":\"sent-1\",\"text\":\"hypoxic\",\"begin\":30,\"end\":37,\"label\":\"SIGN\"}\n\
         {\"doc_id\":\"sent-4\",\"text\":\"diarrhea\",\"begin\":25,\"end\":33,\"label\":\"NEGATION\"}\n\
         {\"doc_id\":\"sent-5\",\"text\":\"MI\",\"begin\":14,\"end\":16,\"label\":\"PERTAINS_TO_FAMILY\"}\n",
    )
    .unwrap();
    let gold = data("fixtures/sentences/gold.jsonl");
    let map = data("label_maps/aws_comprehend.json");
    let report = dir.path().join("r.json");
    let (o, stdout) = evaluate(&[
        "--gold",
        s(&gold),
        "--pred",
        s(&pred),
        "--label-map",
        s(&map),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.contains("associated_with_someone_else"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let classes: Vec<&str> = r["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert_eq!(classes, ["present", "absent", "associated_with_someone_else"]);
    assert_eq!(r["weighted_f1"], 1.0);

    let (o, _) = evaluate(&["--gold", s(&gold), "--pred", s(&pred), "--unmapped", "error"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_empty_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let gold = data("fixtures/sentences/gold.jsonl");
    let (o, _) = evaluate(&["--gold", s(&gold), "--pred", s(&empty)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_contract() {
    let o = run(&["bench", "--engine", "contextual", "--reps", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("s / 100 rows") && text.contains("500 rows"), "{text}");

    assert_eq!(code(&run(&["bench", "--engine", "contextual", "--reps", "1"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs.jsonl");
    let chunks = dir.path().join("chunks.jsonl");
    std::fs::write(&docs, "").unwrap();
    std::fs::write(&chunks, "").unwrap();
    let o = run(&[
        "bench",
        "--engine",
        "negex",
        "--corpus",
        s(&docs),
        "--chunks",
        s(&chunks),
        "--reps",
        "3",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_and_data_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let o = run(&["synth", "--seed", "3", "--chunks", "40", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(lines(&out.join("gold.jsonl")).len(), 40);
    assert_manifest_verifies(&out.join("corpus"));

    // A data directory whose only rule marks chunks after "became" absent.
    let data_dir = dir.path().join("data");
    std::fs::create_dir_all(data_dir.join("rules")).unwrap();
    std::fs::write(
        data_dir.join("rules/only.jsonl"),
        "{\"label\":\"absent\",\"prefix_cues\":[\"became\"]}\n",
    )
    .unwrap();
    let ann = dir.path().join("ann.jsonl");
    let (docs, chunks) = (
        data("fixtures/sentences/docs.jsonl"),
        data("fixtures/sentences/chunks.jsonl"),
    );
    let o = bin()
        .env("CLINASSERT_DATA_DIR", &data_dir)
        .args([
            "annotate",
            "--engine",
            "contextual",
            "--corpus",
            s(&docs),
            "--chunks",
            s(&chunks),
            "--out",
            s(&ann),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&ann);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["doc_id"], "sent-1");
    assert_eq!(rows[0]["label"], "absent");
}

#[test]
fn convert_i2b2_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (txt, ast, out) = (dir.path().join("txt"), dir.path().join("ast"), dir.path().join("out"));
    std::fs::create_dir(&txt).unwrap();
    std::fs::create_dir(&ast).unwrap();
    std::fs::write(txt.join("n1.txt"), "Patient denies fever .\nMother had MI .\n").unwrap();
    std::fs::write(
        ast.join("n1.ast"),
        "c=\"fever\" 1:2 1:2||t=\"problem\"||a=\"absent\"\nc=\"mi\" 2:2 2:2||t=\"problem\"||a=\"associated_with_someone_else\"\n",
    )
    .unwrap();
    let o = run(&[
        "convert-i2b2",
        "--txt-dir",
        s(&txt),
        "--ast-dir",
        s(&ast),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gold = lines(&out.join("gold.jsonl"));
    assert_eq!(gold.len(), 2);
    assert_eq!(gold[1]["text"], "MI");

    let ann = dir.path().join("ann.jsonl");
    let (d, g) = (out.join("docs.jsonl"), out.join("gold.jsonl"));
    let o = run(&[
        "annotate",
        "--engine",
        "contextual",
        "--corpus",
        s(&d),
        "--chunks",
        s(&g),
        "--out",
        s(&ann),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (o, stdout) = evaluate(&["--gold", s(&g), "--pred", s(&ann)]);
    assert_eq!(code(&o), 0);
    assert!(stdout.contains("full match 2"), "{stdout}");
}

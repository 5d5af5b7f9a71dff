use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_idic-dst"));
    c.env_remove("IDIC_LLM_URL").env_remove("IDIC_EMBED_URL");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr_error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

fn write_fixture(dir: &Path) {
    std::fs::write(dir.join("dialogues.jsonl"), idic_core::toy::BUNDLED_FIXTURE).unwrap();
    std::fs::write(
        dir.join("run.toml"),
        "[data]\npool = \"dialogues.jsonl\"\neval = \"dialogues.jsonl\"\n",
    )
    .unwrap();
}

fn multiwoz_doc() -> Value {
    let meta = |area: &str, people: &str| {
        json!({
            "hotel": {"book": {"booked": [], "people": people}, "semi": {"area": area, "stars": "not mentioned"}},
            "taxi": {"book": {"booked": []}, "semi": {"leaveAt": "", "arriveBy": ""}}
        })
    };
    json!({
        "PMUL0002.json": {"log": [
            {"text": "i need a hotel in the centre", "metadata": {}},
            {"text": "how many people?", "metadata": meta("centre", "")},
            {"text": "4 people please", "metadata": {}},
            {"text": "booked", "metadata": meta("centre", "4")}
        ]},
        "MUL0001.json": {"log": [
            {"text": "hello", "metadata": {}},
            {"text": "hi", "metadata": meta("", "")}
        ]}
    })
}

#[test]
fn ingest_is_deterministic_and_atomic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.json"), multiwoz_doc().to_string()).unwrap();
    let a = run(dir.path(), &["ingest", "--version", "2.4", "data.json", "-o", "a.jsonl"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(dir.path(), &["ingest", "--version", "2.4", "data.json", "-o", "b.jsonl"]);
    assert!(b.status.success());
    let text = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(text, std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().starts_with(r#"{"dialogue_id":"MUL0001.json""#));
    assert!(text.contains(r#""state":{"hotel-area":"centre","hotel-people":"4"}"#));

    let bad = run(dir.path(), &["ingest", "--version", "2.4", "missing.json", "-o", "c.jsonl"]);
    assert!(!bad.status.success());
    assert!(stderr_error_line(&bad).contains("missing.json"));
    assert!(!dir.path().join("c.jsonl").exists());

    let version = run(dir.path(), &["ingest", "--version", "3.0", "data.json", "-o", "c.jsonl"]);
    assert!(!version.status.success());
}

#[test]
fn ingest_with_split_lists() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.json"), multiwoz_doc().to_string()).unwrap();
    std::fs::write(dir.path().join("val.txt"), "").unwrap();
    std::fs::write(dir.path().join("test.txt"), "PMUL0002.json\n").unwrap();
    let args = |split| {
        vec!["ingest", "--version", "2.1", "data.json", "--val-list", "val.txt", "--test-list", "test.txt", "--split", split, "-o", "out.jsonl"]
    };
    assert!(run(dir.path(), &args("test")).status.success());
    let text = std::fs::read_to_string(dir.path().join("out.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("PMUL0002.json"));
    assert!(run(dir.path(), &args("dev")).status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("out.jsonl")).unwrap(), "");
}

#[test]
fn sample_fraction_rules() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    for out in ["a.jsonl", "b.jsonl"] {
        let o = run(dir.path(), &["sample", "--input", "dialogues.jsonl", "--fraction", "0.25", "--seed", "7", "-o", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.lines().count(), 5);

    let full = run(dir.path(), &["sample", "--input", "dialogues.jsonl", "--fraction", "1.0", "-o", "full.jsonl"]);
    assert!(full.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("full.jsonl")).unwrap(), idic_core::toy::BUNDLED_FIXTURE);

    let zero = run(dir.path(), &["sample", "--input", "dialogues.jsonl", "--fraction", "0", "-o", "z.jsonl"]);
    assert!(!zero.status.success());
    assert!(stderr_error_line(&zero).contains("fraction"));
    assert!(!dir.path().join("z.jsonl").exists());
}

#[test]
fn eval_with_oracle_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = run(dir.path(), &["--config", "run.toml", "--llm", "oracle", "eval", "--out", "report"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("# effective configuration"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report["jga"], 1.0);
    assert_eq!(report["turn_count"], 84);
    assert_eq!(report["config"]["llm_backend"], "oracle");

    // Independent recount from the trace.
    let trace = std::fs::read_to_string(dir.path().join("report/trace.jsonl")).unwrap();
    let records: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 84);
    assert!(records.iter().all(|r| r["predicted_state"] == r["gold_state"]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("JGA                  1.0000"));
}

#[test]
fn track_single_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = run(dir.path(), &["--config", "run.toml", "track", "--dialogue", "toy20-0003"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().count() >= 2);
    assert!(stdout.lines().all(|l| l.contains("\"dialogue_id\":\"toy20-0003\"")));
    let missing = run(dir.path(), &["--config", "run.toml", "track", "--dialogue", "nope"]);
    assert!(!missing.status.success());
}

#[test]
fn ablate_prints_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let o = run(dir.path(), &["--config", "run.toml", "--k", "3", "ablate", "-o", "rows.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 4, "{stdout}");
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rows.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["report"]["jga"] == 1.0 && r["report"]["config"]["k"] == 3));
}

#[test]
fn sql_one_shots() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sql", "parse", "SELECT * FROM hotel WHERE area = 'centre';"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout), "hotel-area=centre\n");

    let o = run(dir.path(), &["sql", "encode", r#"{"hotel-area": "Center", "taxi-leaveat": "[DELETE]"}"#]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8_lossy(&o.stdout),
        "SELECT * FROM hotel AS d1, taxi AS d2 WHERE d1.area = 'centre' AND d2.leaveat = '[DELETE]';\n"
    );

    let bad = run(dir.path(), &["sql", "parse", "DROP TABLE hotel;"]);
    assert!(!bad.status.success());
    stderr_error_line(&bad);
}

#[test]
fn mine_pairs_and_toy() {
    let dir = tempfile::tempdir().unwrap();
    let toy = run(dir.path(), &["--seed", "3", "toy", "--dialogues", "30", "-o", "toy.jsonl"]);
    assert!(toy.status.success());
    std::fs::write(dir.path().join("run.toml"), "[data]\npool = \"toy.jsonl\"\n").unwrap();
    let mine = |out| run(dir.path(), &["--config", "run.toml", "--seed", "1", "mine-pairs", "-o", out]);
    assert!(mine("p1.jsonl").status.success());
    assert!(mine("p2.jsonl").status.success());
    let p1 = std::fs::read_to_string(dir.path().join("p1.jsonl")).unwrap();
    assert_eq!(p1, std::fs::read_to_string(dir.path().join("p2.jsonl")).unwrap());
    for line in p1.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let s = v["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!(v["text_a"].as_str().unwrap().starts_with("[CONTEXT]"));
    }
}

#[test]
fn config_errors_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[retrieval]\nkay = 3\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "eval"]);
    assert!(!o.status.success());
    assert!(stderr_error_line(&o).contains("kay"));

    let o = run(dir.path(), &["--llm", "remote", "eval"]);
    assert!(!o.status.success());
    assert!(stderr_error_line(&o).contains("IDIC_LLM_URL"));
}

#[test]
fn every_command_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["ingest", "sample", "toy", "track", "eval", "ablate", "mine-pairs", "sql"] {
        let o = run(dir.path(), &[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{cmd}");
    }
}

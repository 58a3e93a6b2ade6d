//! The command line as a user drives it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cda-forge"));
    c.env_remove("CDA_FORGE_JOBS");
    c
}

fn forge(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A bundled config with fewer cycles and the given edits.
fn small_config(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(configs().join("narrow_11.json")).unwrap()).unwrap();
    v["cycles"] = 2_000.into();
    edit(&mut v);
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn bundled_configs_cover_every_cell() {
    for zone in ["narrow", "medium", "wide"] {
        for rates in ["11", "14", "41", "44"] {
            let p = configs().join(format!("{zone}_{rates}.json"));
            cda_forge::config::load_config(&p).unwrap_or_else(|e| panic!("{e}"));
        }
    }
}

#[test]
fn run_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = forge(&["run", "--config", s(&configs().join("narrow_11.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["events.jsonl", "agents.csv", "offers.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join("decisions.jsonl").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["cycles"], 20_000);
    // one row per agent plus the header
    assert_eq!(fs::read_to_string(out.join("agents.csv")).unwrap().lines().count(), 21);
}

#[test]
fn negative_interval_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "bad.json", |v| v["buyers"]["offer_interval"] = (-200).into());
    let o = forge(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("buyers.offer_interval"), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists());

    let cfg = small_config(dir.path(), "rates.json", |v| v["nominal_rates"]["sell"] = 0.4.into());
    let o = forge(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nominal_rates.sell"), "{}", stderr(&o));

    let o = forge(&["run", "--config", s(&dir.path().join("absent.json")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_matches_inline_seed() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path(), "base.json", |_| {});
    let inline = small_config(dir.path(), "seven.json", |v| v["seed"] = 7.into());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(forge(&["run", "--config", s(&base), "--out", s(&a), "--seed", "7"]).status.success());
    assert!(forge(&["run", "--config", s(&inline), "--out", s(&b)]).status.success());
    same_files(&a, &b);
    // and the override really changes the run
    assert!(forge(&["run", "--config", s(&base), "--out", s(&c)]).status.success());
    assert_ne!(fs::read(a.join("events.jsonl")).unwrap(), fs::read(c.join("events.jsonl")).unwrap());
}

#[test]
fn dump_decisions_writes_one_record_per_p_offer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "c.json", |_| {});
    let out = dir.path().join("o");
    assert!(forge(&["run", "--config", s(&cfg), "--out", s(&out), "--dump-decisions"]).status.success());
    let lines = fs::read_to_string(out.join("decisions.jsonl")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(lines.lines().count() as u64, summary["target"]["offers"].as_u64().unwrap());
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first.get("belief").is_some());
}

fn fm_run(dir: &Path) -> PathBuf {
    let cfg = small_config(dir, "fm.json", |v| v["target"]["strategy"] = serde_json::json!({"kind": "fm", "markup": 5}));
    let out = dir.join("fm");
    let o = forge(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn opt_dominates_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let run = fm_run(dir.path());
    let (a, b) = (dir.path().join("opt_a"), dir.path().join("opt_b"));
    for out in [&a, &b] {
        let o = forge(&["opt", "--log", s(&run.join("events.jsonl")), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    same_files(&a, &b);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("opt.json")).unwrap()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let realized = summary["target"]["profit"].as_f64().unwrap();
    assert!(report["total_profit"].as_f64().unwrap() >= realized);
    assert_eq!(report["logged_total"].as_f64().unwrap(), realized);
    assert_eq!(report["dominance_violations"], 0);
    assert_eq!(report["open_loop"], true);
}

#[test]
fn opt_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = fm_run(dir.path());
    let text = fs::read_to_string(run.join("events.jsonl")).unwrap();

    // cut halfway through line 40
    let cut = text.match_indices('\n').nth(38).unwrap().0 + 20;
    let truncated = dir.path().join("truncated.jsonl");
    fs::write(&truncated, &text[..cut]).unwrap();
    let o = forge(&["opt", "--log", s(&truncated), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 40"), "{}", stderr(&o));

    // a well-formed but altered event fails replay at its own line
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let at = lines.iter().position(|l| l.contains("\"event\":\"matched\"")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&lines[at]).unwrap();
    let price = v["trade"]["price"].as_i64().unwrap();
    v["trade"]["price"] = (price + 1).into();
    lines[at] = v.to_string();
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let o = forge(&["opt", "--log", s(&tampered), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&format!("line {}", at + 1)), "{}", stderr(&o));
}

#[test]
fn compare_smoke_cell_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "cell.json", |_| {});
    let (a, b) = (dir.path().join("cell_a"), dir.path().join("cell_b"));
    let o = forge(&["compare", "--config", s(&cfg), "--out", s(&a), "--seeds", "1", "--jobs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["compare", "--config", s(&cfg), "--out", s(&b), "--seeds", "1"])
        .env("CDA_FORGE_JOBS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    same_files(&a, &b);

    let cell = cda_forge::report::load_cell(&a).unwrap();
    assert_eq!((cell.zone.as_str(), cell.rates.as_str()), ("narrow", "0.1/0.1"));
    assert_eq!(cell.runs.len(), 4);
    for r in &cell.runs {
        assert_eq!(r.dominance_violations, 0);
        assert!(r.normalized.is_none_or(|x| x <= 1.0), "{}: {:?}", r.target, r.normalized);
    }
    assert_eq!(fs::read_to_string(a.join("comparison.csv")).unwrap().lines().count(), 5);
    assert_eq!(fs::read_to_string(a.join("verdicts.csv")).unwrap().lines().count(), 7);

    let rep = dir.path().join("report");
    let o = forge(&["report", "--out", s(&rep), s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(rep.join("verdicts.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    let narrow_rm = csv.lines().find(|l| l.starts_with("RM,narrow,")).unwrap();
    let verdict = narrow_rm.split(',').nth(2).unwrap();
    assert!(["P", "other", "?"].contains(&verdict));
    assert!(fs::read_to_string(rep.join("verdicts.txt")).unwrap().contains("P vs RM"));
}

#[test]
fn report_needs_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = forge(&["report", "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = forge(&["report", "--out", s(&dir.path().join("r")), s(&dir.path().join("nowhere"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing cell artifact"), "{}", stderr(&o));
}

#[test]
fn sweep_walks_both_edges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "s.json", |v| v["cycles"] = 500.into());
    let out = dir.path().join("sweep");
    let o = forge(&["sweep", "--config", s(&cfg), "--out", s(&out), "--seeds", "1", "--jobs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 19);
    assert!(csv.lines().nth(1).unwrap().starts_with("9,0,0,"));
}

#[test]
fn help_documents_every_flag() {
    let expect: &[(&str, &[&str])] = &[
        ("run", &["--config", "--out", "--seed", "--dump-decisions", "--verbose"]),
        ("compare", &["--config", "--out", "--seed", "--seeds", "--jobs", "CDA_FORGE_JOBS", "--verbose"]),
        ("sweep", &["--config", "--out", "--seed", "--seeds", "--jobs", "CDA_FORGE_JOBS"]),
        ("opt", &["--log", "--out", "--target", "--cost", "--grid", "--clearing", "--delay-cost"]),
        ("report", &["--out", "[CELL]"]),
    ];
    let top = String::from_utf8(forge(&["--help"]).stdout).unwrap();
    for (sub, flags) in expect {
        assert!(top.contains(sub), "top-level help lacks {sub}");
        let o = forge(&[sub, "--help"]);
        assert!(o.status.success());
        let help = String::from_utf8(o.stdout).unwrap();
        for f in *flags {
            assert!(help.contains(f), "`{sub} --help` lacks {f}:\n{help}");
        }
    }
    assert_eq!(forge(&["run", "--bogus"]).status.code(), Some(2));
}

use std::path::Path;
use std::process::{Command, Output};

fn navsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn banner(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr
        .lines()
        .find_map(|l| l.strip_prefix("effective config: "))
        .expect("banner printed")
        .to_string()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn scene_generation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = navsim(tmp.path(), &["--seed", "3", "--out", out, "gen-scenes", "--count", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_dir_sorted(&tmp.path().join("a"));
    assert_eq!(a.len(), 2);
    assert_eq!(a, read_dir_sorted(&tmp.path().join("b")));
}

#[test]
fn pipeline_and_banner_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = navsim(d, &["--seed", "3", "--out", "scenes", "gen-scenes", "--count", "2"]);
    assert!(o.status.success());
    let o = navsim(d, &["--seed", "9", "--out", "ep.jsonl", "gen-episodes", "--scenes", "scenes", "--count", "40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = banner(&o);
    assert!(line.contains("--min-gdsp 1.0") && line.contains("--easy-accept-prob 0.2") && line.contains("--ratio-threshold 1.1"));

    // The banner alone reproduces the run.
    let args: Vec<String> = line.split_whitespace().skip(1).map(|s| s.replace("ep.jsonl", "ep2.jsonl")).collect();
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = navsim(d, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(d.join("ep.jsonl")).unwrap(),
        std::fs::read_to_string(d.join("ep2.jsonl")).unwrap()
    );

    let o = navsim(
        d,
        &[
            "--out",
            "report.json",
            "eval",
            "--agent",
            "oracle",
            "--episodes",
            "ep.jsonl",
            "--scenes",
            "scenes",
            "--seeds",
            "3",
            "--resolution",
            "16",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success_rate"], 1.0);
    assert_eq!(report["seeds"].as_array().unwrap().len(), 3);
    assert!(report["spl_stderr"].is_number());

    let o = navsim(d, &["--out", "stats.json", "stats", "--episodes", "ep.jsonl", "--format", "json"]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["count"], 40);
}

#[test]
fn bench_writes_requested_format() {
    let tmp = tempfile::tempdir().unwrap();
    let o = navsim(
        tmp.path(),
        &[
            "--out", "b.json", "bench", "--resolutions", "8,16", "--sensors", "rgb,rgbd", "--workers", "1", "--frames", "12",
            "--warmup", "2", "--format", "json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(r["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(navsim(d, &["--bogus"]).status.code(), Some(1));
    assert_eq!(navsim(d, &["eval", "--agent", "flying", "--episodes", "x", "--scenes", "y"]).status.code(), Some(1));
    assert_eq!(navsim(d, &["bench", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(navsim(d, &["--help"]).status.code(), Some(0));
    let o = navsim(d, &["eval", "--agent", "random", "--episodes", "missing.jsonl", "--scenes", "none"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.jsonl"));
    assert_eq!(navsim(d, &["bench", "--frames", "5", "--warmup", "5"]).status.code(), Some(2));
}

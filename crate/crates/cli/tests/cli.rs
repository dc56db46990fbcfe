use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use audiobook_core::audio::AudioBuffer;
use serde_json::Value;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo(name: &str) -> PathBuf {
    repo_root().join("demo").join(name)
}

fn engine(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_engine"))
        .args(args)
        .env_remove("ENGINE_LLM_API_KEY")
        .output()
        .expect("engine runs");
    out
}

fn ok(args: &[&str]) -> String {
    let out = engine(args);
    assert!(
        out.status.success(),
        "engine {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The single run directory under an output root.
fn run_dir(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.remove(0)
}

#[test]
fn personas_are_built_then_cached() {
    let out = tempfile::tempdir().unwrap();
    let story = demo("story.txt");
    let config = demo("mock.json");
    let args = ["personas", s(&story), "--config", s(&config), "--out", s(out.path())];
    let first = ok(&args);
    assert!(!first.contains("(0 backend calls)"), "{first}");

    let personas = run_dir(out.path()).join("personas");
    let count = std::fs::read_dir(&personas).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(count, 3);

    let second = ok(&args);
    assert!(second.contains("cache hit"), "{second}");
    assert!(second.contains("(0 backend calls)"), "{second}");
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let story = demo("story.txt");
    let config = demo("mock.json");
    for root in [a.path(), b.path()] {
        ok(&["generate", s(&story), "--config", s(&config), "--out", s(root)]);
    }
    let (ra, rb) = (run_dir(a.path()), run_dir(b.path()));
    for name in ["audiobook.wav", "manifest.json", "script.json"] {
        assert_eq!(std::fs::read(ra.join(name)).unwrap(), std::fs::read(rb.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn stage_flag_stops_before_audio() {
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "generate",
        s(&demo("story.txt")),
        "--config",
        s(&demo("mock.json")),
        "--out",
        s(out.path()),
        "--stage",
        "script",
    ]);
    assert!(stdout.contains("stopped"), "{stdout}");
    let dir = run_dir(out.path());
    assert!(dir.join("script.json").exists());
    assert!(!dir.join("audiobook.wav").exists());
}

#[test]
fn missing_api_key_exits_with_setup_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("http.json");
    std::fs::write(
        &config,
        r#"{"backends": {
            "llm": {"kind": "http", "base_url": "http://127.0.0.1:9", "api_key_env": "ENGINE_LLM_API_KEY"},
            "image": {"kind": "mock"},
            "tts": {"kind": "mock"}
        }}"#,
    )
    .unwrap();
    let out = engine(&["generate", s(&demo("story.txt")), "--config", s(&config), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ENGINE_LLM_API_KEY"), "{stderr}");
}

#[test]
fn evaluate_with_judge_fills_mos_columns() {
    let runs = tempfile::tempdir().unwrap();
    let reports = tempfile::tempdir().unwrap();
    let config = demo("mock.json");
    ok(&["generate", s(&demo("story.txt")), "--config", s(&config), "--out", s(runs.path())]);
    let run = run_dir(runs.path());
    let table = ok(&["evaluate", s(&run), "--config", s(&config), "--mllm", "--out", s(reports.path())]);
    for header in ["CharCon", "MOS-Q", "MOS-E", "MOS-S"] {
        assert!(table.contains(header), "{table}");
    }
    for score in ["3.9", "3.3", "4.6", "3.4"] {
        assert!(table.contains(score), "{table}");
    }
    let name = run.file_name().unwrap().to_str().unwrap();
    let report: Value =
        serde_json::from_slice(&std::fs::read(reports.path().join(format!("{name}.report.json"))).unwrap()).unwrap();
    assert_eq!(report["mllm_scores"]["MOS-E"], 4.6);
    assert!(report["speaker_similarity"].is_number());
}

#[test]
fn short_input_has_no_similarity_but_keeps_turning_points() {
    let dir = tempfile::tempdir().unwrap();
    // 5 s tone gliding up and down twice.
    let n = 5 * 24_000;
    let samples: Vec<f32> = {
        let mut phase = 0.0f64;
        (0..n)
            .map(|i| {
                let t = i as f64 / 24_000.0;
                let f0 = 180.0 + 30.0 * (2.0 * std::f64::consts::PI * 0.4 * t).sin();
                phase += 2.0 * std::f64::consts::PI * f0 / 24_000.0;
                (0.4 * phase.sin()) as f32
            })
            .collect()
    };
    let wav = dir.path().join("short.wav");
    AudioBuffer::from_f32(&samples, 24_000).write_wav(&wav).unwrap();

    let reports = dir.path().join("reports");
    let table = ok(&["evaluate", s(&wav), "--out", s(&reports)]);
    assert!(table.contains("n/a"), "{table}");
    let report: Value = serde_json::from_slice(&std::fs::read(reports.join("short.report.json")).unwrap()).unwrap();
    assert!(report["speaker_similarity"].is_null());
    assert!(report["turning_points"].as_u64().unwrap() >= 2, "{report}");
}

#[test]
fn compare_marks_best_and_second_best() {
    let table = repo_root().join("crates/core/fixtures/table2.json");
    let out = tempfile::tempdir().unwrap();
    let json_out = out.path().join("cmp.json");
    let text = ok(&["compare", s(&table), "--out", s(&json_out)]);
    assert!(text.contains("**51.334**"), "{text}");
    assert!(text.contains("_51.332_"), "{text}");
    assert!(text.contains("**146885.1**"), "{text}");
    assert!(text.contains("_125309.6_"), "{text}");
    assert!(json_out.exists());
}

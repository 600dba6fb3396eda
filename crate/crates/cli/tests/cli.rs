use std::path::Path;
use std::process::Command;

use serde_json::Value;
use tutor_core::audio::synth_tone_layout;

/// Four fluent and four hesitant clips plus one negative, one unusable.
fn write_dataset(dir: &Path) -> std::path::PathBuf {
    let mut manifest = String::from("clip_path\tlabel\ttranscript\n");
    for i in 0..4 {
        let fluent = synth_tone_layout(3.0, 16_000, &[(0.1, 1.3), (1.5, 2.9)], 200.0 + i as f64 * 10.0, 0.3);
        let hesitant = synth_tone_layout(4.0, 16_000, &[(0.0, 0.8), (1.6, 2.4), (3.2, 4.0)], 400.0 + i as f64, 0.3);
        std::fs::write(dir.join(format!("n{i}.wav")), fluent.to_wav_bytes()).unwrap();
        std::fs::write(dir.join(format!("p{i}.wav")), hesitant.to_wav_bytes()).unwrap();
        manifest += &format!("n{i}.wav\tNeutral\tI like movies.\np{i}.wav\tpauses\tI, um, like movies.\n");
    }
    let angry = synth_tone_layout(2.0, 16_000, &[(0.0, 2.0)], 900.0, 0.5);
    std::fs::write(dir.join("a.wav"), angry.to_wav_bytes()).unwrap();
    manifest += "a.wav\tnegative\tThis is so annoying.\nmissing.wav\tunusable\t\n";
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn tutor_eval(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tutor-eval")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path());
    let out = dir.path().join("ingest.json");
    let (ok, stdout, stderr) =
        tutor_eval(&["ingest", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("retained        9"), "{stdout}");
    let v = read_json(&out);
    assert_eq!(v["retained"], 9);
    assert_eq!(v["dropped_unusable"], 1);
    assert_eq!(v["counts"]["pauses"], 4);
}

#[test]
fn sweep_pauses_emits_nine_rows_per_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path());
    let out = dir.path().join("pauses.json");
    let m = manifest.to_str().unwrap();
    let (ok, stdout, stderr) =
        tutor_eval(&["sweep-pauses", "--metric", "avg_pause_length", "--direction", "above", "--manifest", m, "--out", out.to_str().unwrap()]);
    assert!(ok, "{stderr}");
    let v = read_json(&out);
    let sweeps = v["sweeps"].as_array().unwrap();
    assert_eq!(sweeps.len(), 1);
    let rows = sweeps[0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 9);
    // Hesitant clips pause for 0.8 s, fluent ones for 0.2 s.
    assert_eq!(rows[4]["neutral_pct"], 100.0);
    assert_eq!(rows[4]["pauses_pct"], 100.0);
    assert!((v["class_means"][0]["means"]["avg_pause_length"].as_f64().unwrap() - 0.8).abs() < 0.05);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("0.")).count(), 9);

    let (ok, _, _) = tutor_eval(&["sweep-pauses", "--direction", "both", "--manifest", m, "--out", out.to_str().unwrap()]);
    assert!(ok);
    assert_eq!(read_json(&out)["sweeps"].as_array().unwrap().len(), 6);
}

#[test]
fn sweep_emotion_with_stub_scores() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path());
    let scores = dir.path().join("scores.json");
    std::fs::write(&scores, r#"{
        "a.wav": {"angry": 0.7, "calm": 0, "disgust": 0, "fearful": 0, "happy": 0, "neutral": 0.3, "sad": 0, "surprised": 0},
        "n0.wav": {"angry": 0, "calm": 0, "disgust": 0, "fearful": 0, "happy": 0, "neutral": 0.9, "sad": 0.1, "surprised": 0}
    }"#).unwrap();
    let out = dir.path().join("emotion.json");
    let cache = dir.path().join("cache");
    let args = [
        "sweep-emotion",
        "--endpoint",
        "stub",
        "--stub-scores",
        scores.to_str().unwrap(),
        "--cache",
        cache.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let (ok, stdout, stderr) = tutor_eval(&args);
    assert!(ok, "{stderr}");
    let v = read_json(&out);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(v["n_negative"], 1);
    assert_eq!(v["n_neutral"], 4);
    let a = rows.iter().find(|r| r["setup"] == "A").unwrap();
    assert_eq!(a["f1_by_threshold"].as_array().unwrap().len(), 9);
    assert_eq!(a["best_f1"], 1.0);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 5);
    assert!(stdout.contains("Best F1"));

    // A second run is served from the cache and agrees.
    let (ok, _, _) = tutor_eval(&args);
    assert!(ok);
    assert_eq!(read_json(&out), v);
}

#[test]
fn grammar_eval_rates() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.tsv");
    std::fs::write(
        &pairs,
        "prediction\tgold\nI like books.\tI like books.\nI like books and tea.\tI like books\nShe go.\tShe goes.\nHi\tHi\n",
    )
    .unwrap();
    let out = dir.path().join("g.json");
    let (ok, stdout, stderr) = tutor_eval(&["grammar-eval", "--pairs", pairs.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(ok, "{stderr}");
    let v = read_json(&out);
    assert_eq!(v["n"], 4);
    assert_eq!(v["exact_match_rate"], 0.5);
    assert!(stdout.contains("exact match"));
}

#[test]
fn errors_are_reported() {
    let (ok, _, stderr) = tutor_eval(&["ingest"]);
    assert!(!ok && stderr.contains("requires --manifest"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "clip_path\tlabel\ttranscript\nx.wav\tangry\thi\n").unwrap();
    let (ok, _, stderr) = tutor_eval(&["ingest", "--manifest", bad.to_str().unwrap()]);
    assert!(!ok && stderr.contains("unknown label"), "{stderr}");
    let (ok, _, _) = tutor_eval(&["sweep-pauses", "--metric", "loudness", "--manifest", bad.to_str().unwrap()]);
    assert!(!ok);
}

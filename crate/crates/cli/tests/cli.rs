use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lstfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lstfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", out];
    args.extend_from_slice(extra);
    let o = lstfuse(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

/// A scene small enough to fuse 48 times quickly.
fn small_scene(dir: &Path) {
    let cfg = dir.join("scene_config.json");
    fs::create_dir_all(dir).unwrap();
    fs::write(
        &cfg,
        r#"{"fine_size": 64, "m_factor": 4, "c_factor": 16, "class_radius": 4}"#,
    )
    .unwrap();
    synth(dir, &["--config", cfg.to_str().unwrap(), "--window", "15"]);
}

fn grids_in(dir: &Path, prefix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with(prefix) && name.ends_with(".f32")
        })
        .count()
}

fn error_json(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error is JSON")
}

#[test]
fn full_diurnal_pipeline_writes_48_grids() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    let run = tmp.path().join("run.json");
    let o = lstfuse(&["fuse", "--config", run.to_str().unwrap(), "--diurnal"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("out");
    assert_eq!(grids_in(&out, "fused_"), 48);
    assert!(out.join("fused_0830.f32").exists());

    let eval = tmp.path().join("eval");
    let o = lstfuse(&[
        "evaluate",
        "--pred",
        out.to_str().unwrap(),
        "--reference",
        tmp.path().join("truth").to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["matched_times"], 48);
    assert!(report["metrics"]["rmse"].as_f64().unwrap() < 3.0);
}

#[test]
fn two_source_mode_ignores_moderate_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    fs::remove_file(tmp.path().join("m_t2.f32")).unwrap();
    fs::remove_file(tmp.path().join("m_t2.hdr.json")).unwrap();
    let run = tmp.path().join("run.json");
    let o = lstfuse(&["fuse", "--config", run.to_str().unwrap(), "--mode", "lc"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(grids_in(&tmp.path().join("out"), "fused_"), 1);
}

#[test]
fn missing_coarse_series_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    let c_series = tmp.path().join("c_series");
    fs::remove_dir_all(&c_series).unwrap();
    let o = lstfuse(&["fuse", "--config", tmp.path().join("run.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&o);
    assert_eq!(err["error"], "missing_input");
    assert_eq!(err["path"], c_series.to_str().unwrap());
}

#[test]
fn invalid_window_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    let o = lstfuse(&[
        "fuse",
        "--config",
        tmp.path().join("run.json").to_str().unwrap(),
        "--window",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "invalid_config");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    let run = tmp.path().join("run.json");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = lstfuse(&[
            "fuse",
            "--config",
            run.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("fused_0830.f32")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let again = tempfile::tempdir().unwrap();
    small_scene(again.path());
    for name in [
        "l_t1.f32",
        "m_t2.f32",
        "c_series/c_1200.f32",
        "stations/station_1.csv",
        "run.json",
    ] {
        assert_eq!(
            fs::read(tmp.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn tnor_off_matches_tnor_on_without_view_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scene_config.json");
    fs::write(
        &cfg,
        r#"{"fine_size": 64, "m_factor": 4, "c_factor": 16, "class_radius": 4, "m_view_shift": 0.0}"#,
    )
    .unwrap();
    synth(tmp.path(), &["--config", cfg.to_str().unwrap(), "--window", "15"]);
    let run = tmp.path().join("run.json");
    let mut outputs = Vec::new();
    for tnor in ["on", "off"] {
        let out = tmp.path().join(tnor);
        let o = lstfuse(&[
            "fuse",
            "--config",
            run.to_str().unwrap(),
            "--tnor",
            tnor,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("fused_0830.f32")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn normalize_fit_dtc_and_station_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    small_scene(tmp.path());
    let run = tmp.path().join("run.json");
    let run = run.to_str().unwrap();
    assert!(lstfuse(&["normalize", "--config", run]).status.success());
    let norm = tmp.path().join("out/normalized");
    for f in ["m_t1.f32", "m_t2.f32", "l_t1.f32", "glolm.json", "dtc_params.csv"] {
        assert!(norm.join(f).exists(), "{f}");
    }

    let csv = tmp.path().join("dtc.csv");
    let o = lstfuse(&[
        "fit-dtc",
        "--c-series",
        tmp.path().join("c_series").to_str().unwrap(),
        "--latitude",
        "38.9",
        "--longitude",
        "100.4",
        "--day-of-year",
        "211",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 16);

    assert!(lstfuse(&["fuse", "--config", run, "--diurnal"]).status.success());
    let scene: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("scene.json")).unwrap()).unwrap();
    let station = &scene["stations"][0];
    let eval = tmp.path().join("station_eval");
    let o = lstfuse(&[
        "evaluate",
        "--pred",
        tmp.path().join("out").to_str().unwrap(),
        "--station",
        tmp.path().join(station["fluxes"].as_str().unwrap()).to_str().unwrap(),
        "--row",
        &station["row"].to_string(),
        "--col",
        &station["col"].to_string(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(eval.join("series.csv")).unwrap().lines().count(),
        1 + 48
    );
}

#[test]
fn default_scene_diurnal_run_completes() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let o = lstfuse(&[
        "fuse",
        "--config",
        tmp.path().join("run.json").to_str().unwrap(),
        "--diurnal",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(grids_in(&tmp.path().join("out"), "fused_"), 48);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nirlink::{BudgetConfig, ExperimentConfig};

fn nirlink(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nirlink"))
        .args(args)
        .current_dir(dir)
        .env_remove("NIRLINK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn presets_list_and_show() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nirlink(tmp.path(), &["presets", "list"]);
    assert!(out.status.success());
    let names: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(names, ["degenerate_6km", "nondegenerate_12km", "budget_fig4"]);

    let shown = nirlink(tmp.path(), &["presets", "show", "nondegenerate_12km"]);
    let cfg = ExperimentConfig::from_toml_str(&String::from_utf8(shown.stdout).unwrap()).unwrap();
    assert_eq!(
        cfg,
        ExperimentConfig::resolve(Some("nondegenerate_12km"), None).unwrap()
    );
    let shown = nirlink(tmp.path(), &["presets", "show", "budget_fig4"]);
    BudgetConfig::from_toml_str(&String::from_utf8(shown.stdout).unwrap()).unwrap();
    assert_eq!(nirlink(tmp.path(), &["presets", "show", "nope"]).status.code(), Some(2));
}

#[test]
fn simulate_and_analyze_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "preset = \"degenerate_6km\"\nduration_s = 20.0\n",
    );
    let out = nirlink(
        tmp.path(),
        &["simulate", "--config", &cfg, "--out", "run", "--format", "csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["channel_0.csv", "channel_1.csv", "manifest.toml"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
    let out = nirlink(tmp.path(), &["analyze", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let peaks = fs::read_to_string(tmp.path().join("run/analysis/peaks.csv")).unwrap();
    assert_eq!(peaks.lines().count(), 4, "{peaks}");
}

#[test]
fn same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "preset = \"nondegenerate_12km\"\nduration_s = 0.2\n",
    );
    for (dir, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = nirlink(
            tmp.path(),
            &["simulate", "--config", &cfg, "--seed", seed, "--out", dir],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
    for f in ["channel_0.bin", "channel_1.bin", "manifest.toml"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "channel_0.bin"), read("c", "channel_0.bin"));
}

#[test]
fn config_error_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "preset = \"degenerate_6km\"\n\n[detector_a]\nefficiency = 1.5\n",
    );
    let out = nirlink(tmp.path(), &["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("bad.toml") && err.contains("line 4"), "{err}");
    assert_eq!(nirlink(tmp.path(), &["simulate"]).status.code(), Some(2));
    assert_eq!(
        nirlink(tmp.path(), &["budget", "--preset", "degenerate_6km"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn io_and_format_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(nirlink(tmp.path(), &["analyze", "missing"]).status.code(), Some(3));
    assert_eq!(
        nirlink(tmp.path(), &["simulate", "--config", "missing.toml"])
            .status
            .code(),
        Some(3)
    );

    let cfg = write(
        tmp.path(),
        "run.toml",
        "preset = \"degenerate_6km\"\nduration_s = 0.01\n",
    );
    assert!(nirlink(tmp.path(), &["simulate", "--config", &cfg, "--out", "run"])
        .status
        .success());
    let path = tmp.path().join("run/channel_0.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, bytes).unwrap();
    let out = nirlink(tmp.path(), &["analyze", "run"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));
}

#[test]
fn undefined_visibility_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "dark.toml",
        "preset = \"nondegenerate_12km\"\nduration_s = 0.0\n",
    );
    assert!(nirlink(tmp.path(), &["simulate", "--config", &cfg, "--out", "run"])
        .status
        .success());
    let out = nirlink(tmp.path(), &["analyze", "run"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(tmp.path().join("run/analysis/summary.toml").exists());
}

#[test]
fn analysis_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "preset = \"degenerate_6km\"\nduration_s = 0.5\n",
    );
    assert!(nirlink(tmp.path(), &["simulate", "--config", &cfg, "--out", "run"])
        .status
        .success());
    let over = write(
        tmp.path(),
        "analysis.toml",
        "bin_width_ps = 1000\n\n[peaks]\nthreshold_sigma = 8.0\n",
    );
    let out = nirlink(tmp.path(), &["analyze", "run", "--config", &over, "--out", "wide"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let histogram = fs::read_to_string(tmp.path().join("wide/histogram.csv")).unwrap();
    assert_eq!(histogram.lines().count(), 1 + 101);

    let bad = write(
        tmp.path(),
        "bad.toml",
        "bin_width_ps = 128\n\n[peaks]\nthreshold_sigma = -1.0\n",
    );
    let out = nirlink(tmp.path(), &["analyze", "run", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn budget_writes_markers_and_honors_env_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nirlink"))
        .args(["budget", "--preset", "budget_fig4", "--calibrate"])
        .current_dir(tmp.path())
        .env("NIRLINK_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let markers = fs::read_to_string(tmp.path().join("from_env/budget_markers.csv")).unwrap();
    let lengths: Vec<f64> = markers
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(lengths.len(), 2);
    assert!(
        (lengths[0] - 6.0).abs() < 1e-9 && (lengths[1] - 2.4).abs() < 1e-9,
        "{lengths:?}"
    );

    let single = write(
        tmp.path(),
        "one.toml",
        "preset = \"budget_fig4\"\ncrossovers = []\nsystems = [{ label = \"only\", brightness_pairs_per_s = 1e6, \
         detector_efficiency_source_arm = 0.5, detector_efficiency_fiber_arm = 0.5, attenuation_db_per_km = 3.0, \
         fixed_loss_db = 0.0, wdm_split_factor = 1.0, fundamental_mode_fraction = 1.0 }]\n",
    );
    let out = nirlink(tmp.path(), &["budget", "--config", &single, "--out", "one"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let markers = fs::read_to_string(tmp.path().join("one/budget_markers.csv")).unwrap();
    assert_eq!(markers.lines().count(), 1);
}

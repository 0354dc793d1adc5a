use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qpl-workbench"));
    c.env_remove("QPL_WORKBENCH_CONFIG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report_value(text: &str, key: &str) -> f64 {
    let table: toml::Table = toml::from_str(text).unwrap();
    table[key].as_float().unwrap_or_else(|| panic!("{key} missing in\n{text}"))
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let none = run(dir.path(), &[]);
    assert_eq!(none.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&none.stderr).contains("Usage"));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(dir.path(), &["fit-propagation"]).status.code(), Some(64));
}

#[test]
fn help_is_available_on_every_level() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    for sub in ["dipole", "sweep", "fit-g2", "reproduce"] {
        let o = run(dir.path(), &[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn bad_configs_exit_65() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[stack]\nlower = \"unobtainium\"\nupper = \"air\"\nemitter_layer = 0\nlayers = []\n").unwrap();
    fs::write(dir.path().join("typo.toml"), "[emiter]\nheight_nm = 3.0\n").unwrap();
    for cfg in ["bad.toml", "typo.toml", "missing.toml"] {
        let o = run(dir.path(), &["--config", cfg, "dipole"]);
        assert_eq!(o.status.code(), Some(65), "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let env = bin()
        .current_dir(dir.path())
        .env("QPL_WORKBENCH_CONFIG", "typo.toml")
        .arg("materials")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(65));
}

#[test]
fn extract_branching_reports_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "o", "extract-branching", "--dipole-counts", "1000", "--ring-counts", "100"]);
    assert_eq!(o.status.code(), Some(0));
    // spot term over the dipole collection, ring term over collection,
    // out-coupling and propagation loss across the trench radius
    let d = 1000.0 / 0.579;
    let r = 100.0 / (0.842 * 0.306 * (-2.0f64 / 6.35).exp());
    let xi = report_value(&stdout(&o), "xi");
    assert!((xi - r / (d + r)).abs() < 1e-12, "{xi}");
    assert!((xi - 0.23541).abs() < 2e-5);
    let saved = fs::read_to_string(dir.path().join("o/branching_report.txt")).unwrap();
    assert_eq!(saved, stdout(&o));
}

#[test]
fn dipole_writes_the_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "o", "dipole"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("o/dipole.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "channel,normalized_rate,percent");
    assert_eq!(rows.len(), 5);
    let pct: f64 = rows[2..].iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((pct - 100.0).abs() < 1e-6, "{pct}");
    let report = fs::read_to_string(dir.path().join("o/dipole_report.txt")).unwrap();
    assert!(report_value(&report, "dre") > 1.0);
}

#[test]
fn explicit_stack_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[[materials]]
id = "silver"
kind = "constant-epsilon"
values = [-21.0, 0.4]

[stack]
lower = "silver"
upper = "air"
emitter_layer = 0
layers = [{ material = "diamond", thickness_nm = 60.0 }]

[emitter]
height_nm = 30.0
"#;
    fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    let o = run(dir.path(), &["--config", "cfg.toml", "--out", "o", "modes"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("n_eff_re,n_eff_im,L_um\n"));
    assert!(text.lines().count() >= 2);
    let o = run(dir.path(), &["--config", "cfg.toml", "--out", "o", "scan-z", "--z-nm", "10,30,50"]);
    assert_eq!(o.status.code(), Some(0));
    let scan = fs::read_to_string(dir.path().join("o/scan_z.csv")).unwrap();
    assert_eq!(scan.lines().count(), 4);
    assert_eq!(fs::read_to_string(dir.path().join("cfg.toml")).unwrap(), cfg);
}

#[test]
fn unbounded_propagation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("rings.csv"), "distance_um,intensity\n2,0.1\n5,0.2\n8,0.3\n11,0.4\n").unwrap();
    let o = run(dir.path(), &["--out", "o", "fit-propagation", "--data", "rings.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saturation_fit_recovers_noiseless_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::from("power_mw,counts_per_s\n");
    for p in [0.2, 0.5, 1.0, 2.0, 4.0, 8.0] {
        data.push_str(&format!("{p},{}\n", 44e6 * p / (p + 1.5)));
    }
    fs::write(dir.path().join("sat.csv"), data).unwrap();
    let o = run(dir.path(), &["--out", "o", "fit-saturation", "--data", "sat.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!((report_value(&text, "i_inf_counts_per_s") / 44e6 - 1.0).abs() < 1e-6);
    assert!((report_value(&text, "p_sat_mw") / 1.5 - 1.0).abs() < 1e-6);
}

#[test]
fn simulate_then_fit_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[sim]\nseed = 7\npulses = 200000\nbackground_fraction = 0.1815\n";
    fs::write(dir.path().join("sim.toml"), cfg).unwrap();
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let o = run(dir.path(), &["--config", "sim.toml", "--out", out, "simulate-stream", "--histogram-bin-ps", "4", "--irf"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let stream = format!("{out}/stream.csv");
        let o = run(dir.path(), &["--out", out, "fit-g2", "--stream", &stream]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!((report_value(&stdout(&o), "g2_zero") - 0.33).abs() < 0.05);
        let (decay, irf) = (format!("{out}/decay_histogram.csv"), format!("{out}/irf_histogram.csv"));
        let o = run(dir.path(), &["--out", out, "fit-lifetime", "--decay", &decay, "--irf", &irf]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut files: Vec<_> = fs::read_dir(dir.path().join(out)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        outputs.push(files.iter().map(|f| (f.file_name().unwrap().to_owned(), fs::read(f).unwrap())).collect::<Vec<_>>());
    }
    assert_eq!(outputs[0].len(), 10);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn reproduce_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "o", "reproduce", "suppV"]);
    assert_eq!(o.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("o/suppV/summary.txt")).unwrap();
    assert!(summary.starts_with("PASS "), "{summary}");
    let trials = fs::read_to_string(dir.path().join("o/suppV/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1001);
}

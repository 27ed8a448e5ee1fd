use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn czkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_czkit"))
        .args(args)
        .env_remove("CZKIT_CALIB")
        .output()
        .expect("the binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("czkit-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dirac = data("dirac.json");
    let dirac = dirac.to_str().unwrap();
    let path = |n: &str| data(n).to_str().unwrap().to_string();
    let (dipole, unbalanced, truncated) = (path("dipole.json"), path("unbalanced.json"), path("truncated.json"));
    let (center, missing, bad_key) = (path("center.json"), path("missing_measure.toml"), path("bad_key.toml"));
    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["czd", "--measure", dirac, "--height", "1"], 0),
        (vec!["czd", "--measure", dirac], 2),
        (vec!["czd", "--measure", &truncated, "--height", "1"], 2),
        (vec!["czd", "--measure", "no/such.json", "--height", "1"], 2),
        (vec!["czd", "--height", "1"], 2),
        (vec!["convolve", "--measure", dirac, "--res", "16"], 0),
        (vec!["convolve", "--measure", dirac, "--kernel", "nope"], 2),
        (vec!["coeff", "dipole", "--measure", &dipole, "--res", "32"], 0),
        (vec!["coeff", "dipole", "--measure", &unbalanced], 1),
        (vec!["coeff", "dipole", "--measure", &dipole, "--theta", "0.5"], 2),
        (vec!["coeff", "composite", "--measure", dirac, "--height", "4", "--res", "32"], 0),
        (vec!["whitney", "--seed", "5", "--res", "32"], 0),
        (vec!["maximal", "--measure", dirac, "--res", "32"], 0),
        (vec!["poisson", "--measure", &center, "--res", "16"], 0),
        (vec!["level-set", "--res", "128", "--min-drop", "10"], 0),
        (vec!["level-set", "--res", "128", "--min-drop", "1e9"], 1),
        (vec!["frank-lieb", "--res", "128"], 0),
        (vec!["frank-lieb", "--scenario", "kink"], 1),
        (vec!["frank-lieb", "--scenario", "unknown"], 2),
        (vec!["verify-main", "--config", &missing], 2),
        (vec!["verify-main", "--config", &bad_key], 2),
        (vec!["acceptance", "--criterion", "4"], 0),
        (vec!["acceptance", "--criterion", "13"], 2),
        (vec!["bogus"], 2),
    ];
    for (args, code) in cases {
        let out = czkit(&args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn empty_config_reports_a_parse_diagnostic() {
    let p = tmp("empty.toml");
    std::fs::write(&p, "").unwrap();
    let out = czkit(&["verify-main", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
}

#[test]
fn czd_writes_a_passing_decomposition() {
    let out = tmp("czd.json");
    let o = czkit(&["czd", "--measure", data("dirac.json").to_str().unwrap(), "--height", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert_eq!(r["result"]["verify"]["cancellation"], true);
    assert!(!r["result"]["decomposition"]["bad_parts"].as_array().unwrap().is_empty());
}

#[test]
fn reports_and_plots_are_byte_identical_for_a_seed() {
    let dipole = data("dipole.json");
    let run = |tag: &str, seed: &str| {
        let (out, plot) = (tmp(&format!("{tag}.json")), tmp(&format!("{tag}.svg")));
        let o = czkit(&[
            "coeff", "dipole", "--measure", dipole.to_str().unwrap(), "--res", "32", "--seed", seed,
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let m = czkit(&[
            "maximal", "--measure", data("dirac.json").to_str().unwrap(), "--res", "32",
            "--out", tmp(&format!("{tag}-m.json")).to_str().unwrap(), "--plot", plot.to_str().unwrap(),
        ]);
        assert!(m.status.success());
        (std::fs::read(out).unwrap(), std::fs::read(plot).unwrap())
    };
    let a = run("a", "9");
    let b = run("b", "9");
    assert_eq!(a, b);
    let r: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(r["seed"], 9);
    let c = run("c", "10");
    assert_ne!(a.0, c.0);
}

#[test]
fn verify_main_config_reports_decreasing_errors() {
    let out = tmp("identity.json");
    let o = czkit(&["verify-main", "--config", data("identity_dirac.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let r = report(&out);
    let rows = r["result"]["resolutions"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let e: Vec<f64> = rows.iter().map(|x| x["mean_error"].as_f64().unwrap()).collect();
    assert!(e[1] < e[0], "{e:?}");
    // the exit code follows the asserted slope
    let passed = r["passed"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if passed { 0 } else { 1 }));

    let smooth = czkit(&["verify-main", "--config", data("identity_smooth.toml").to_str().unwrap(), "--out", tmp("s.json").to_str().unwrap()]);
    assert!(smooth.status.success());
}

#[test]
fn quotient_curve_goes_to_csv_and_svg() {
    let (csv, svg) = (tmp("q.csv"), tmp("q.svg"));
    let o = czkit(&[
        "norms", "--measure", data("dirac.json").to_str().unwrap(), "--res", "128", "--point", "0.5,0.5",
        "--csv", csv.to_str().unwrap(), "--plot", svg.to_str().unwrap(), "--out", tmp("n.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("r,q\n"));
    assert_eq!(text.lines().count(), 6);
    let s = std::fs::read_to_string(svg).unwrap();
    assert_eq!(s.matches("<polyline").count(), 1);
}

#[test]
fn acceptance_prints_one_line_per_criterion() {
    let o = czkit(&["acceptance", "--criterion", "4", "--criterion", "12"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("PASS  4"));
    assert!(lines[1].starts_with("PASS 12"));
}

#[test]
fn calibration_override_is_honored() {
    let bad = tmp("calib.json");
    std::fs::write(&bad, "{\"version\": 999}").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_czkit"))
        .args(["coeff", "dipole", "--measure", data("dipole.json").to_str().unwrap(), "--res", "16"])
        .env("CZKIT_CALIB", &bad)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

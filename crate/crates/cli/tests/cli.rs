use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn continuify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_continuify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "[population]\nn_followers = 100\nn_leaders = 100\n[numerics]\nt_final = 0.004\n";

#[test]
fn run_writes_the_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = continuify(&[
        "run",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(
        ts.lines().next().unwrap(),
        "t,l2_err_F,l2_err_L,V_F,V_L,alpha,C,mass_F,mass_L"
    );
    // dt = 2e-4 over 0.004: 21 logged steps
    assert_eq!(ts.lines().count(), 22);
    let fields = fs::read_to_string(out.join("fields_final.csv")).unwrap();
    assert_eq!(
        fields.lines().next().unwrap(),
        "x,rho_F,rho_bar_F,rho_L,rho_bar_L,u"
    );
    assert!(fs::read_to_string(out.join("manifest.toml"))
        .unwrap()
        .contains("command = \"run\""));
}

#[test]
fn runs_are_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let o = continuify(&[
            "run",
            "--config",
            &cfg,
            "--out-dir",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--quiet",
        ]);
        assert!(o.status.success());
        fs::read(out.join("timeseries.csv")).unwrap()
    };
    assert_eq!(read("a", "5"), read("b", "5"));
    assert_ne!(read("a", "5"), read("c", "6"));
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (name, body) in [
        ("syntax.toml", "[numerics\nt_final = 1"),
        ("type.toml", "[numerics]\nt_final = \"long\"\n"),
        ("unknown.toml", "[numerics]\nt_finale = 1.0\n"),
        ("invalid.toml", "[numerics]\nt_final = -1.0\n"),
    ] {
        let cfg = write_config(dir.path(), name, body);
        for cmd in ["run", "run-macro", "sweep-het", "min-mass"] {
            let o = continuify(&[cmd, "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(2), "{cmd} {name}");
            assert!(!out.exists(), "{cmd} {name} left artifacts");
        }
    }
    let o = continuify(&[
        "run",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_leaves_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "wild.toml",
        &format!("{SMALL}[leader_control]\nkp = 1e308\n"),
    );
    let out = dir.path().join("out");
    let o = continuify(&[
        "run",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("snapshot"));
    assert!(out.join("snapshot.csv").exists());
}

#[test]
fn run_macro_writes_both_bounding_systems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.toml", "[numerics]\nt_final = 0.01\n");
    let out = dir.path().join("out");
    let o = continuify(&[
        "run-macro",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success());
    for side in ["upper", "lower"] {
        assert!(out.join(side).join("timeseries.csv").exists());
        assert!(out.join(side).join("fields_final.csv").exists());
    }
}

#[test]
fn sweeps_write_cells_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SMALL}[sweep]\nheterogeneity = [2.0, 20.0]\npopulation = [20, 40]\nseeds = [1, 2]\npopulation_t_final = 0.004\nworkers = 1\n"
    );
    let cfg = write_config(dir.path(), "sweep.toml", &body);
    let het = dir.path().join("het");
    let o = continuify(&[
        "sweep-het",
        "--config",
        &cfg,
        "--out-dir",
        het.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(het.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "axis_value,seed,terminal_l2_err_F,min_mass_estimate,feasible"
    );
    // 2 values x 2 seeds, then median and max per value
    assert_eq!(lines.len(), 1 + 4 + 4);
    assert!(lines.iter().any(|l| l.starts_with("20,median,")));

    let pop = dir.path().join("pop");
    let o = continuify(&[
        "sweep-pop",
        "--axis",
        "leaders",
        "--config",
        &cfg,
        "--out-dir",
        pop.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(pop.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("threshold:"));
}

#[test]
fn min_mass_prints_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = continuify(&[
        "min-mass",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("sup along the run"));
    assert!(stdout.contains("feasible"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = continuify(&["fly"]);
    assert_eq!(o.status.code(), Some(2));
}

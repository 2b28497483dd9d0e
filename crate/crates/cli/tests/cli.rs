use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn conslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conslab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const LATTICE: &str = r#"
system = "burgers-shifted"
scheme = "semidiscrete"
t_final = 10
dt = 0.05

[window]
n_min = -20
n_max = 60

[initial]
kind = "riemann"
left = [0.4]
right = [0.0]
"#;

const BACKWARD: &str = r#"
system = "linear"
scheme = "backward"
steps = 4

[linear]
eigenvalues = [0.3, 0.7]
eigenvectors = [1.0, 0.5, 0.2, 1.0]

[grid]
x_min = -2.0
x_max = 30.0
dx = 0.05

[initial]
kind = "spike"
direction = [0.1, -0.05]
center = 1.0
width = 1.0
"#;

#[test]
fn kernels_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = conslab(&[
        "kernels",
        "fundamental-semidiscrete",
        "--lambda",
        "0.5",
        "--t",
        "4",
        "--from",
        "-2",
        "--to",
        "20",
        "--out",
        out,
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("kernel_fundamental-semidiscrete.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("n,value"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 23);
    let at0 = rows.iter().find(|r| r.0 == 0.0).unwrap().1;
    assert!((at0 - (-2.0f64).exp()).abs() < 1e-15);
    assert_eq!(rows[0].1, 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "kernels");
    assert!(manifest["version"]
        .as_str()
        .unwrap()
        .contains(env!("CARGO_PKG_VERSION")));
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn missing_or_invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = conslab(&["run-backward", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write(
        dir.path(),
        "bad.toml",
        &LATTICE.replace("dt = 0.05", "dt = -1\ncolour = 1"),
    );
    let o = conslab(&[
        "run-semidiscrete",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("dt") && err.contains("colour"), "{err}");

    let cfg = write(dir.path(), "syntax.toml", "system = \n");
    let o = conslab(&["run-semidiscrete", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn semidiscrete_reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", LATTICE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = conslab(&[
            "run-semidiscrete",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut csvs: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    csvs.sort();
    // start, every 20 steps over 200 steps
    assert_eq!(csvs.len(), 11);
    for name in &csvs {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap()
        );
    }
    let last = fs::read_to_string(a.join(csvs.last().unwrap())).unwrap();
    assert!(last
        .starts_with("# kind=lattice n_min=-20 time=1.0000000000000000e1 system=burgers-shifted"));

    let o = conslab(&[
        "diagnose",
        a.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--assert",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("d/diagnose.csv")).unwrap();
    assert!(report.starts_with("step,tv,q,lyapunov,c0,source_magnitude\n"));
    assert_eq!(report.lines().count(), 12);
}

#[test]
fn backward_run_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", BACKWARD);
    let out = dir.path().join("run");
    let o = conslab(&[
        "run-backward",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for step in 0..=4 {
        assert!(out.join(format!("profile_{step:06}.csv")).exists());
    }
    let d = dir.path().join("diag");
    let o = conslab(&[
        "diagnose",
        out.join("record.json").to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
        "--assert",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("diagnose.json")).unwrap()).unwrap();
    assert_eq!(summary["c0"], 1.0);
    assert!(summary["max_reconstruction_error"].as_f64().unwrap() < 1e-10);

    // a strided run keeps the predecessor of each recorded step
    let strided = write(
        dir.path(),
        "strided.toml",
        &BACKWARD.replace("steps = 4", "steps = 4\nstride = 2"),
    );
    let out2 = dir.path().join("run2");
    let o = conslab(&[
        "run-backward",
        "--config",
        &strided,
        "--out",
        out2.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out2.join("previous_000002.csv").exists());
    let o = conslab(&[
        "diagnose",
        out2.to_str().unwrap(),
        "--out",
        dir.path().join("diag2").to_str().unwrap(),
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn failed_assertion_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let flat = "# kind=lattice n_min=0 time=0 system=burgers-shifted left=0.1 outflow=0\nn,u_1\n0,0.1\n1,0.1\n2,0.1\n3,0.1\n";
    let jump = "# kind=lattice n_min=0 time=1 system=burgers-shifted left=0.1 outflow=0\nn,u_1\n0,0.1\n1,0.3\n2,0.1\n3,0.1\n";
    write(dir.path(), "a.csv", flat);
    write(dir.path(), "b.csv", jump);
    let record = r#"{"system":{"name":"burgers-shifted"},"scheme":"semidiscrete","snapshots":[
        {"step":0,"time":0.0,"file":"a.csv"},{"step":20,"time":1.0,"file":"b.csv"}]}"#;
    write(dir.path(), "record.json", record);
    let d = dir.path().join("d");
    let o = conslab(&[
        "diagnose",
        dir.path().to_str().unwrap(),
        "--c0",
        "1",
        "--assert",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(d.join("diagnose.csv").exists());
    assert!(d.join("manifest.json").exists());
}

#[test]
fn window_escape_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        &LATTICE
            .replace("n_max = 60", "n_max = 5")
            .replace("t_final = 10", "t_final = 40"),
    );
    let o = conslab(&[
        "run-semidiscrete",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn profile_file_initial_data_with_mismatched_system_warns() {
    let dir = tempfile::tempdir().unwrap();
    let mut profile = String::from(
        "# kind=lattice n_min=0 time=0 system=linear left=0.2 outflow=0\nn,u_1\n0,0.2\n",
    );
    for n in 1..40 {
        profile.push_str(&format!("{n},0.1\n"));
    }
    let path = write(dir.path(), "init.csv", &profile);
    let cfg = LATTICE
        .replace("t_final = 10", "t_final = 1")
        .replace("n_min = -20\nn_max = 60", "n_min = 0\nn_max = 39")
        .replace(
            "kind = \"riemann\"\nleft = [0.4]\nright = [0.0]",
            &format!("kind = \"file\"\npath = {path:?}"),
        );
    let cfg = write(dir.path(), "run.toml", &cfg);
    let o = conslab(&[
        "run-semidiscrete",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("linear"), "{}", stderr(&o));
}

#[test]
fn study_commands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "study.toml",
        &format!("{LATTICE}\n[study]\nepsilons = [0.04]\npairs = 2\n"),
    );
    for (cmd, header) in [
        (
            "converge",
            "scheme,epsilon,l1_error,runtime_seconds,failure",
        ),
        ("cross", "epsilon,l1_distance"),
        ("stability", "scheme,epsilon,lipschitz"),
    ] {
        let out = dir.path().join(cmd);
        let o = conslab(&[
            cmd,
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let table = fs::read_to_string(out.join(format!("{cmd}.csv"))).unwrap();
        assert!(table.starts_with(header), "{cmd}: {table}");
        assert!(out.join(format!("{cmd}.json")).exists());
    }
    let table = fs::read_to_string(dir.path().join("stability/stability.csv")).unwrap();
    for line in table.lines().skip(1) {
        let l: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(
            (l - 1.0).abs() < 1e-6,
            "scalar Burgers is L1-contractive: {line}"
        );
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn twirlcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twirlcorr"))
        .args(args)
        .env_remove("TWIRLCORR_THREADS")
        .output()
        .expect("binary runs")
}

fn twirlcorr_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twirlcorr"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).expect("csv exists");
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

const ANALYTIC: [&str; 12] = [
    "analytic", "--ensemble", "clifford-brickwork", "--n", "4", "--depth", "8", "--sigma", "0.15", "--tau",
    "0.1,1,10,100", "--seed",
];

#[test]
fn analytic_example_gives_four_rows_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "analytic.csv");
    let mut args = ANALYTIC.to_vec();
    args.extend(["5", "--out", s(&out)]);
    ok(&twirlcorr(&args));
    let (header, rows) = read_csv(&out);
    assert_eq!(
        header,
        ["circuit_hash", "n", "l", "cov_kind", "sigma", "tau_over_tg", "method", "p_I", "F", "std_error"]
    );
    assert_eq!(rows.len(), 4);
    let taus: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(taus, [0.1, 1.0, 10.0, 100.0]);
    for r in &rows {
        assert_eq!(r[1], "4");
        assert_eq!(r[6], "exact-sum");
        let f: f64 = r[8].parse().unwrap();
        assert!(f > 0.0 && f < 1.0);
        assert_eq!(r[9], "0");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "analytic.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "analytic");
    assert!(manifest["engine_versions"]["twirlcorr"].is_string());
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["budgets"]["mode"], "exact");
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let mut args = ANALYTIC.to_vec();
    args.push("5");
    let out = twirlcorr(&args);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("circuit_hash,"));
}

fn rerun_identical(args: &[&str], threads: (&str, &str)) {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    let mut first = args.to_vec();
    first.extend(["--out", s(&a)]);
    let mut second = args.to_vec();
    second.extend(["--out", s(&b)]);
    ok(&twirlcorr_env(&first, "TWIRLCORR_THREADS", threads.0));
    ok(&twirlcorr_env(&second, "TWIRLCORR_THREADS", threads.1));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{args:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let mut analytic = ANALYTIC.to_vec();
    analytic.extend(["9", "--mode", "sampled", "--paulis", "300"]);
    rerun_identical(&analytic, ("1", "1"));
    rerun_identical(
        &[
            "mc", "--ensemble", "t-doped-brickwork", "--n", "3", "--depth", "3", "--sigma", "0.1", "--tau", "1,10",
            "--n-noise", "24", "--seed", "4",
        ],
        ("1", "3"),
    );
    rerun_identical(
        &["repcode", "--rounds", "6", "--trajectories", "40", "--tau", "1,100", "--seed", "2"],
        ("2", "1"),
    );
}

#[test]
fn missing_qasm_fails_without_output() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "fig3.csv");
    let res = twirlcorr(&[
        "mc", "--qasm", s(&path(&dir, "sqrt_n_18.qasm")), "--sigma", "0.035", "--tau", "1e-2,1e4", "--twirled",
        "--long-run", "--out", s(&out),
    ]);
    assert!(!res.status.success());
    assert!(stderr(&res).contains("source.qasm"), "{}", stderr(&res));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "no file may be left behind");
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "run.toml");
    std::fs::write(
        &cfg,
        "seed = 11\n[source]\nensemble = \"clifford-brickwork\"\nn = 3\ndepth = 4\ncircuits = 2\n\
         [grid]\nsigma = [0.05, 0.1]\ntau = [1.0, 10.0, 100.0]\n",
    )
    .unwrap();
    let out = path(&dir, "out.csv");
    ok(&twirlcorr(&["analytic", "--config", s(&cfg), "--tau", "3", "--out", s(&out)]));
    let (_, rows) = read_csv(&out);
    // 2 circuits x 2 sigmas x 1 overriding tau
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[5] == "3"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "out.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "bad.toml");
    std::fs::write(&cfg, "[source]\nensemble = \"clifford-brickwork\"\nn = 3\ndepth = 2\n[grid]\nsigma = []\ntau = [1.0]\n")
        .unwrap();
    let res = twirlcorr(&["analytic", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("grid.sigma"), "{}", stderr(&res));

    std::fs::write(&cfg, "[grid]\nsigmas = [0.1]\n").unwrap();
    let res = twirlcorr(&["analytic", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("sigmas"), "{}", stderr(&res));

    let res = twirlcorr(&["analytic", "--ensemble", "clifford-brickwork", "--n", "3", "--depth", "2", "--sigma", "0.1", "--tau", "0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("grid.tau[0]"), "{}", stderr(&res));

    let res = twirlcorr(&["analytic", "--ensemble", "clifford-brickwork", "--qasm", "x.qasm", "--sigma", "0.1", "--tau", "1"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("exactly one"), "{}", stderr(&res));
}

#[test]
fn oversized_runs_are_refused() {
    let res = twirlcorr(&[
        "mc", "--ensemble", "clifford-brickwork", "--n", "16", "--depth", "16", "--sigma", "0.1", "--tau", "1",
        "--n-noise", "100000",
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(stderr(&res).contains("--long-run"), "{}", stderr(&res));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let mut args = ANALYTIC.to_vec();
    args.push("1");
    let res = twirlcorr_env(&args, "TWIRLCORR_THREADS", "zero");
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("TWIRLCORR_THREADS"));
}

const SMALL_QASM: &str = "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[3];\ncreg c[3];\n\
h q[0];\ncx q[0],q[1];\ns q[2];\ncx q[1],q[2];\ncz q[0],q[2];\nmeasure q[0] -> c[0];\n";

#[test]
fn qasm_report_and_circuit_round_trip() {
    let dir = TempDir::new().unwrap();
    let qasm = path(&dir, "small.qasm");
    std::fs::write(&qasm, SMALL_QASM).unwrap();
    let json = path(&dir, "small.json");
    let out = path(&dir, "info.csv");
    ok(&twirlcorr(&["qasm", "--qasm", s(&qasm), "--emit-circuit", s(&json), "--out", s(&out)]));
    let (header, rows) = read_csv(&out);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("n")], "3");
    assert_eq!(rows[0][col("gates")], "5");
    assert_eq!(rows[0][col("two_qubit_gates")], "3");
    assert_eq!(rows[0][col("noise_sites")], "6");
    assert_eq!(rows[0][col("measurements")], "1");

    // the emitted circuit and the QASM file give the same analytic result
    let grid = ["--sigma", "0.1", "--tau", "2"];
    let from_qasm = twirlcorr(&[&["analytic", "--qasm", s(&qasm)][..], &grid].concat());
    let from_json = twirlcorr(&[&["analytic", "--circuit", s(&json)][..], &grid].concat());
    ok(&from_qasm);
    ok(&from_json);
    assert_eq!(from_qasm.stdout, from_json.stdout);
}

#[test]
fn analytic_rejects_non_clifford_circuits() {
    let dir = TempDir::new().unwrap();
    let qasm = path(&dir, "t.qasm");
    std::fs::write(&qasm, "OPENQASM 2.0;\nqreg q[2];\nt q[0];\ncx q[0],q[1];\n").unwrap();
    let res = twirlcorr(&["analytic", "--qasm", s(&qasm), "--sigma", "0.1", "--tau", "1"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("Monte-Carlo"), "{}", stderr(&res));
    let res = twirlcorr(&["mc", "--qasm", s(&qasm), "--sigma", "0.1", "--tau", "1", "--n-noise", "8"]);
    ok(&res);
}

#[test]
fn bounds_hold() {
    let out = twirlcorr(&[
        "bounds", "--ensemble", "clifford-brickwork", "--n", "3", "--depth", "5", "--circuits", "3", "--sigma",
        "0.1,0.2", "--tau", "0.3,3,30",
    ]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
}

#[test]
fn small_runs_of_every_other_subcommand() {
    let out = twirlcorr(&[
        "ensemble", "--n", "4", "--depth", "2", "--circuits", "3", "--tau", "1,10", "--n-noise", "8",
    ]);
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);

    let out = twirlcorr(&[
        "sweep", "--ensemble", "clifford-brickwork", "--n", "3", "--depth", "2", "--sigma", "0.1", "--tau", "1,10",
        "--n-noise", "8",
    ]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| !l.contains(",,")), "analytic column filled: {text}");

    let out = twirlcorr(&["repcode", "--rounds", "3", "--trajectories", "10", "--tau", "1,10", "--bare"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("tau_over_tg,twirled,survival,std_error,n_samples\n"));
    assert_eq!(text.lines().count(), 3);

    let out = twirlcorr(&["qkernel", "--cases", "3"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
}

#[test]
fn ft_mask_instantaneous_limit_is_binary() {
    let out = twirlcorr(&[
        "ft-mask", "--ensemble", "clifford-brickwork", "--n", "2", "--depth", "2", "--gate-fraction", "0", "--pauli",
        "XI,ZZ",
    ]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        rows += 1;
        let cols: Vec<&str> = line.split(',').collect();
        let m: f64 = cols[5].parse().unwrap();
        let (a, b) = (cols[2], cols[3]);
        if a == b {
            assert!(m.abs() < 1e-8 || (m - 1.0).abs() < 1e-8, "{line}");
        }
    }
    assert!(rows > 0);
    let res = twirlcorr(&["ft-mask", "--ensemble", "clifford-brickwork", "--n", "2", "--depth", "2"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("ft.pauli"));
}

use std::path::Path;
use std::process::{Command, Output};

use mhe_riccati::bench::{read_csv, Status};
use mhe_riccati::io::SolutionFile;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhe-riccati")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn gen_solve_validate() {
    let dir = tempfile::tempdir().unwrap();
    let problem = path(dir.path(), "m.json");
    let out = run(&[
        "gen",
        "--kind",
        "mhe",
        "--nx",
        "3",
        "--nw",
        "2",
        "--ny",
        "2",
        "--horizon",
        "12",
        "--seed",
        "4",
        "-o",
        &problem,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut states = Vec::new();
    for method in ["serial", "parallel", "dense", "rts"] {
        let sol = path(dir.path(), &format!("{method}.json"));
        let out = run(&["solve", "--method", method, "-i", &problem, "-o", &sol, "--ns", "3", "--workers", "2"]);
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let file = SolutionFile::load(&sol).unwrap();
        assert_eq!(file.method, method);
        assert_eq!(file.stats.is_some(), method == "parallel");
        states.push(file.mhe.expect("estimates for an MHE input").x);
    }
    for other in &states[1..] {
        for (a, b) in states[0].iter().zip(other) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0));
            }
        }
    }

    let out = run(&["validate", "-i", &problem]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max deviation"), "{text}");
}

#[test]
fn worker_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let problem = path(dir.path(), "u.json");
    assert!(run(&["gen", "--kind", "uftoc", "--horizon", "30", "-o", &problem]).status.success());
    let sol = path(dir.path(), "s.json");
    let out = Command::new(env!("CARGO_BIN_EXE_mhe-riccati"))
        .args(["solve", "--method", "parallel", "-i", &problem, "-o", &sol])
        .env("MHE_RICCATI_WORKERS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(SolutionFile::load(&sol).unwrap().stats.unwrap().workers, 3);
}

#[test]
fn rts_needs_estimation_problem() {
    let dir = tempfile::tempdir().unwrap();
    let problem = path(dir.path(), "u.json");
    assert!(run(&["gen", "--kind", "uftoc", "--horizon", "5", "-o", &problem]).status.success());
    let out = run(&["solve", "--method", "rts", "-i", &problem, "-o", &path(dir.path(), "s.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let problem = path(dir.path(), "bad.json");
    std::fs::write(&problem, "{\"kind\": \"uftoc\",\n \"version\": 1,\n oops}").unwrap();
    let out = run(&["validate", "-i", &problem]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "cfg.json");
    std::fs::write(
        &cfg,
        r#"{"n_x": 2, "n_w": 2, "n_y": 2, "N_list": [64, 512], "N_s": 2, "workers": 2, "seeds": [7], "methods": ["serial", "parallel"], "repetitions": 3}"#,
    )
    .unwrap();
    let csv = path(dir.path(), "out.csv");
    let out = run(&["bench", "--config", &cfg, "--out", &csv]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.status == Status::Ok && r.wall_time_s.is_some()));
}

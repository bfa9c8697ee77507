use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riskvol(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskvol"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("failed to launch riskvol")
}

fn read_csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (meta, rows)
}

fn body(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.split_once('\n').unwrap().1.to_string()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TWO_CYCLE: &str = "\
[env]
kind = two-cycle
epsilon = 0.2

[train]
gamma = 0.9
horizon = 50
alpha = 0.1
iterations = 300

[sweep]
eval_batch = 2000
";

#[test]
fn verify_default_corpus_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskvol(&["verify"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (meta, rows) = read_csv(&dir.path().join("verify_report.csv"));
    assert!(meta.starts_with("# seed=0, config_hash="), "{meta}");
    assert!(meta.contains(", version="));
    assert_eq!(rows[0], ["theorem_id", "instances", "max_violation", "tolerance", "pass"]);
    assert_eq!(rows.len(), 17);
    for r in &rows[1..] {
        assert_eq!(r[4], "true", "{r:?}");
        assert!(r[1].parse::<usize>().unwrap() >= 50, "{r:?}");
    }
    assert!(!dir.path().join("verify_offending.txt").exists());
}

#[test]
fn two_cycle_sweep_is_monotone_in_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_CYCLE);
    let out = riskvol(&["sweep", "--config", &cfg, "--lambda-grid", "0,0.1,1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("frontier.csv"));
    assert_eq!(rows[0], ["lambda_or_c", "j_hat", "nu2_hat", "sigma2_hat", "eta_hat", "iterations", "seed"]);
    assert_eq!(rows.len(), 4);
    let nu2: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(nu2.windows(2).all(|w| w[1] <= w[0]), "{nu2:?}");
}

#[test]
fn zero_volatility_prices_are_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = riskvol(&["gen-data", "--vol", "0", "--drift", "0", "--n", "50", "--p0", "42"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (meta, rows) = read_csv(&dir.path().join("prices.csv"));
    assert!(meta.starts_with("# seed="));
    assert_eq!(rows[0], ["price"]);
    let prices: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(prices.len(), 50);
    assert!(prices.iter().all(|&p| p == 42.0), "{prices:?}");
}

#[test]
fn repeated_runs_produce_identical_bodies() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), "[env]\nkind = random-tabular\n[train]\ngamma = 0.9\nhorizon = 20\niterations = 20\nlambda = 0.5\n[sweep]\neval_batch = 50\n");
    for cmd in [&["sweep", "--lambda-grid", "0,1"][..], &["gen-data"], &["train"]] {
        let mut args = cmd.to_vec();
        args.extend(["--config", &cfg, "--seed", "3"]);
        assert!(riskvol(&args, a.path()).status.success());
        assert!(riskvol(&args, b.path()).status.success());
    }
    for name in ["frontier.csv", "prices.csv", "policy.ckpt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    // the wall-clock column is the only one allowed to differ
    let strip = |p: &Path| -> Vec<String> {
        body(p).lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    let (la, lb) = (strip(&a.path().join("train_log.csv")), strip(&b.path().join("train_log.csv")));
    assert_eq!(la[0], "iter,j_hat,nu2_hat,sigma2_hat,eta_hat,grad_norm,kl_step,accepted_step_size");
    assert_eq!(la.len(), 21);
    assert_eq!(la, lb);
}

#[test]
fn config_errors_report_the_line_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[env]\nkind = two-cycle\n\n[train]\nlamda = 0.5\n");
    let out = riskvol(&["train", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5") && err.contains("lamda"), "{err}");
    assert!(!dir.path().join("train_log.csv").exists());
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--algo", "sgd"][..],
        &["train", "--env", "moon"],
        &["sweep", "--lambda-grid", "0,x"],
        &["train", "--config", "/definitely/not/here.cfg"],
        &["train", "--bogus-flag"],
    ] {
        let out = riskvol(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cfg = write_config(dir.path(), "[train]\ngamma = 1.5\n");
    assert_eq!(riskvol(&["train", "--config", &cfg], dir.path()).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_2_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nalpha = 1e308\nlambda = 1\niterations = 3\n");
    let out = riskvol(&["train", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("train_log.csv").exists());
    assert!(!dir.path().join("policy.ckpt").exists());
}

#[test]
fn trading_env_reads_generated_prices() {
    let dir = tempfile::tempdir().unwrap();
    assert!(riskvol(&["gen-data", "--n", "300"], dir.path()).status.success());
    let prices = dir.path().join("prices.csv");
    let cfg = write_config(
        dir.path(),
        &format!("[env]\nkind = trading\nprices_csv = {}\nepisode_len = 20\n[train]\niterations = 2\nbatch = 10\n", prices.display()),
    );
    let out = riskvol(&["train", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(body(&dir.path().join("train_log.csv")).lines().count(), 3);
}

#[test]
fn checkpoint_resumes_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\ngamma = 0.9\nhorizon = 10\niterations = 3\n");
    assert!(riskvol(&["train", "--config", &cfg], dir.path()).status.success());
    let ckpt = dir.path().join("policy.ckpt");
    let next = dir.path().join("next");
    let cfg2 = write_config(
        dir.path(),
        &format!("[policy]\ncheckpoint = {}\n[train]\ngamma = 0.9\nhorizon = 10\niterations = 3\n", ckpt.display()),
    );
    let out = riskvol(&["train", "--config", &cfg2], &next);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(next.join("policy.ckpt").exists());
}

#[test]
fn every_algorithm_trains_on_a_tabular_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[env]\nkind = random-tabular\nn_states = 4\n[train]\ngamma = 0.9\nhorizon = 10\niterations = 2\nbatch = 20\nlambda = 0.5\n",
    );
    for algo in ["vola-pg", "trvo", "trpo-exp", "mean-variance", "safe-vola-pg"] {
        let out = riskvol(&["train", "--config", &cfg, "--algo", algo], dir.path());
        assert!(out.status.success(), "{algo}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

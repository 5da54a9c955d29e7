use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "[task]\nkind = \"quadratic\"\ndim = 4\nn_train = 320\nbatch_size = 16\nseed = 2\n[optimizer]\nkind = \"adam\"\nbase_lr = 0.05\n[guided]\nparams = [\"beta1\"]\nmeta_lr = 3e-3\n[train]\nsteps = 60\neval_every = 20\n";

fn guided(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_guided"));
    cmd.args(args).current_dir(dir).env_remove("GUIDED_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), config).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn run_writes_all_files() {
    let dir = setup(CONFIG);
    let o = guided(
        dir.path(),
        &["run", "--config", "cfg.toml", "--out", "r"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.csv", "config.echo", "summary.txt", "timing.txt"] {
        assert!(dir.path().join("r").join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(dir.path().join("r/summary.txt")).unwrap();
    assert!(summary.contains("total_steps = 60"));
}

#[test]
fn env_seed_overrides_config() {
    let dir = setup(CONFIG);
    guided(
        dir.path(),
        &["run", "--config", "cfg.toml", "--out", "a"],
        &[],
    );
    guided(
        dir.path(),
        &["run", "--config", "cfg.toml", "--out", "b"],
        &[("GUIDED_SEED", "77")],
    );
    let echo = fs::read_to_string(dir.path().join("b/config.echo")).unwrap();
    assert!(echo.contains("seed = 77"));
    assert_ne!(
        fs::read(dir.path().join("a/run.csv")).unwrap(),
        fs::read(dir.path().join("b/run.csv")).unwrap()
    );
}

#[test]
fn meta_lr_sweep_gives_one_run_per_value_and_report_counts_them() {
    let dir = setup(CONFIG);
    let o = guided(
        dir.path(),
        &[
            "sweep",
            "--config",
            "cfg.toml",
            "--param",
            "guided.meta_lr",
            "--values",
            "3e-5,3e-4,3e-3",
            "--jobs",
            "2",
            "--out",
            "s",
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..3 {
        assert!(dir.path().join(format!("s/run_{i:03}/run.csv")).exists());
    }
    assert!(!dir.path().join("s/run_003").exists());

    let o = guided(
        dir.path(),
        &[
            "bo", "--config", "cfg.toml", "--space", "beta1", "--budget", "5", "--n-init", "3",
            "--out", "b",
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = guided(
        dir.path(),
        &["report", "--runs", "s,b", "--out", "rep"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(dir.path().join("rep/report.md")).unwrap();
    // Runs and total steps: 3 x 60 for the sweep, 5 x 60 for BO.
    assert!(md.contains("| s | 3 |"), "{md}");
    assert!(md.contains("| b | 5 |"), "{md}");
    assert!(
        md.lines()
            .any(|l| l.starts_with("| s |") && l.trim_end().ends_with("| 180 |")),
        "{md}"
    );
    assert!(
        md.lines()
            .any(|l| l.starts_with("| b |") && l.trim_end().ends_with("| 300 |")),
        "{md}"
    );
    let svg = fs::read_to_string(dir.path().join("rep/report.svg")).unwrap();
    assert!(svg.contains("beta1 vs step"));
}

#[test]
fn exit_codes() {
    let dir = setup(CONFIG);
    // Validation: negative meta-learning rate, unknown key, bad usage.
    fs::write(
        dir.path().join("neg.toml"),
        CONFIG.replace("meta_lr = 3e-3", "meta_lr = -1"),
    )
    .unwrap();
    let o = guided(dir.path(), &["run", "--config", "neg.toml"], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("meta_lr"));
    fs::write(dir.path().join("typo.toml"), format!("{CONFIG}stepz = 3\n")).unwrap();
    assert_eq!(
        code(&guided(dir.path(), &["run", "--config", "typo.toml"], &[])),
        1
    );
    assert_eq!(
        code(&guided(
            dir.path(),
            &[
                "sweep",
                "--config",
                "cfg.toml",
                "--param",
                "guided.nope",
                "--values",
                "1"
            ],
            &[]
        )),
        1
    );
    assert_eq!(code(&guided(dir.path(), &["frobnicate"], &[])), 1);
    // I/O: missing config, unwritable output.
    assert_eq!(
        code(&guided(
            dir.path(),
            &["run", "--config", "missing.toml"],
            &[]
        )),
        3
    );
    fs::write(dir.path().join("blocker"), "").unwrap();
    assert_eq!(
        code(&guided(
            dir.path(),
            &["run", "--config", "cfg.toml", "--out", "blocker/x"],
            &[]
        )),
        3
    );
    // Numeric: a diverging run.
    let wild = CONFIG
        .replace("base_lr = 0.05", "base_lr = 1e300")
        .replace("kind = \"adam\"", "kind = \"lamb\"");
    fs::write(dir.path().join("wild.toml"), wild).unwrap();
    let o = guided(
        dir.path(),
        &["run", "--config", "wild.toml", "--out", "w"],
        &[],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("w/run.csv").exists());
}

#[test]
fn gradcheck_exit_status_follows_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let ok = guided(
        dir.path(),
        &[
            "gradcheck",
            "--optimizer",
            "adam",
            "--task",
            "quadratic",
            "--steps",
            "1,2,10,100",
            "--tol",
            "1e-6",
        ],
        &[],
    );
    assert_eq!(code(&ok), 0);
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(table.lines().count(), 5);
    let bad = guided(
        dir.path(),
        &[
            "gradcheck",
            "--optimizer",
            "lamb",
            "--task",
            "mlp",
            "--steps",
            "3",
            "--tol",
            "0",
        ],
        &[],
    );
    assert_ne!(code(&bad), 0);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    let skip = guided(
        dir.path(),
        &[
            "gradcheck",
            "--optimizer",
            "adafactor",
            "--task",
            "quadratic",
            "--steps",
            "1",
        ],
        &[],
    );
    assert_eq!(code(&skip), 0);
    assert!(String::from_utf8_lossy(&skip.stdout).contains("skipped: non-smooth"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ckpt-curator"));
    cmd.env_remove("CKPT_CURATOR_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}=` in {text}"))
}

fn small_conf(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("small.conf");
    fs::write(
        &path,
        format!("seed = {seed}\nn_train = 40\nn_valid = 20\nn_test = 40\nhidden_sizes = 8\nmax_epochs = 6\npatience = 50\n"),
    )
    .unwrap();
    path
}

#[test]
fn score_prints_the_sum() {
    let o = run(&["score", "--sutl", "1.2", "--val", "2.3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "3.5\n");
}

#[test]
fn stop_check_on_a_falling_ledger_continues() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.csv");
    fs::write(&path, "epoch,train_loss,sutl,val_loss\n1,1,0.9,0.9\n2,1,0.8,0.8\n3,1,0.7,0.7\n").unwrap();
    let o = run(&["stop-check", "--ledger", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "CONTINUE run_length=0\n");

    fs::write(&path, "epoch,train_loss,sutl,val_loss\n1,1,0.5,0.5\n2,1,0.5,0.6\n3,1,0.6,0.6\n").unwrap();
    let o = run(&["stop-check", "--ledger", path.to_str().unwrap(), "--patience", "2"]);
    assert_eq!(stdout(&o), "STOP epoch=3\n");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["score", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["average"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = run(&["stop-check", "--ledger", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: io: "), "{err}");
    assert_eq!(err.lines().count(), 1);

    let o = run(&["stop-check", "--ledger", missing.to_str().unwrap(), "--patience", "0"]);
    assert!(stderr(&o).starts_with("error: zero_patience: "));

    let o = run(&["report", "curves", "--run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: io: "));
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_conf(dir.path(), 3);
    let out = dir.path().join("run");
    let o = run(&["train-toy", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "epochs"), "6");

    let o = run(&["verify", "--run", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "OK\n");

    fs::remove_file(out.join("epoch_4.ckpt")).unwrap();
    let o = run(&["verify", "--run", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("epoch 4"));
    assert!(stderr(&o).starts_with("error: inconsistent_run: "));

    let conf = small_conf(dir.path(), 3);
    let out = dir.path().join("run2");
    run(&["train-toy", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let ledger = out.join("ledger.csv");
    let text = fs::read_to_string(&ledger).unwrap();
    fs::write(&ledger, text.replacen("\n2,", "\n2,9", 1)).unwrap();
    let o = run(&["verify", "--run", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

fn resolved_seed(dir: &Path, name: &str, flag: Option<&str>, env: Option<&str>) -> String {
    let conf = small_conf(dir, 7);
    let out = dir.join(name);
    let mut cmd = bin();
    cmd.args(["train-toy", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    if let Some(s) = flag {
        cmd.args(["--seed", s]);
    }
    if let Some(s) = env {
        cmd.env("CKPT_CURATOR_SEED", s);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("config.resolved")).unwrap();
    field(&text.replace(" = ", "="), "seed").to_owned()
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(resolved_seed(dir.path(), "a", None, None), "7");
    assert_eq!(resolved_seed(dir.path(), "b", None, Some("11")), "11");
    assert_eq!(resolved_seed(dir.path(), "c", Some("13"), Some("11")), "13");
}

#[test]
fn repeated_commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let conf = small_conf(dir.path(), 5);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    run(&["train-toy", "--config", conf.to_str().unwrap(), "--out", out_s]);
    let first = fs::read(out.join("ledger.csv")).unwrap();
    run(&["train-toy", "--config", conf.to_str().unwrap(), "--out", out_s]);
    assert_eq!(fs::read(out.join("ledger.csv")).unwrap(), first);

    let a = run(&["average", "--run", out_s, "--scheme", "kbvl", "-k", "3"]);
    let b = run(&["average", "--run", out_s, "--scheme", "kbvl", "-k", "3"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let o = run(&["verify", "--run", out_s]);
    assert!(o.status.success(), "averaged outputs must not upset verify: {}", stdout(&o));
}

#[test]
fn reference_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reference");
    let out_s = out.to_str().unwrap();
    let conf = config("reference.conf");
    let o = run(&["train-toy", "--config", conf.to_str().unwrap(), "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(field(&stdout(&o), "stopped epoch"), "406");

    let ledger = out.join("ledger.csv");
    let o = run(&["stop-check", "--ledger", ledger.to_str().unwrap()]);
    assert_eq!(stdout(&o), "STOP epoch=406\n");
    let o = run(&["stop-check", "--ledger", ledger.to_str().unwrap(), "--metric", "val"]);
    assert_eq!(stdout(&o), "STOP epoch=83\n");

    let o = run(&["average", "--run", out_s, "--scheme", "kbabvt", "-k", "10", "--endpoint", "406"]);
    assert_eq!(field(&stdout(&o), "digest"), "5ebf282db4dc0fbe");
    let o = run(&["average", "--run", out_s, "--scheme", "lk", "-k", "20"]);
    assert_eq!(field(&stdout(&o), "digest"), "96449a7b8b134cc1");
    assert!(out.join("avg_lk_k20.ckpt").is_file());

    let o = run(&["report", "ablation", "--run", out_s, "--endpoints", "stop", "--ks", "1,5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("endpoint,scheme,k,loss,accuracy\n"));
    // two endpoints x three schemes x two k values
    assert_eq!(csv.lines().count(), 1 + 12);

    let o = run(&["report", "curves", "--run", out_s]);
    assert!(o.status.success());
    assert!(field(&stdout(&o), "val_loss_argmin_epoch").parse::<u64>().unwrap() < 406);
    assert!(out.join("curves.csv").is_file());
}

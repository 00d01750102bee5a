use std::path::Path;
use std::process::{Command, Output};

fn mscvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscvit")).args(args).output().expect("spawn mscvit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_synth_training(dir: &Path) -> Output {
    mscvit(&[
        "train", "--variant", "t", "--dataset", "synth", "--epochs", "1", "--batch-size", "16",
        "--synth-per-class", "16", "--out", dir.to_str().unwrap(),
    ])
}

#[test]
fn inspect_prints_stage_table_and_totals() {
    let o = mscvit(&["inspect", "--variant", "xs"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("depths [1, 1, 3, 2]"), "{s}");
    assert!(s.contains("total params 7496490"), "{s}");
    for stage in ["stage1", "stage2", "stage3", "stage4"] {
        assert!(s.contains(stage));
    }
}

#[test]
fn inspect_normal_attention_reports_increase() {
    let s = stdout(&mscvit(&["inspect", "--variant", "s", "--attention", "normal"]));
    let line = s.lines().find(|l| l.starts_with("normal attention")).expect("comparison line");
    assert!(line.contains("+9.0%"), "{line}");
}

#[test]
fn set_override_changes_kernel() {
    let s = stdout(&mscvit(&["inspect", "--set", "stage2.Ck=5"]));
    let row = s.lines().find(|l| l.starts_with("stage2")).unwrap();
    assert!(row.contains("5/2"), "{row}");
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(mscvit(&["inspect", "--set", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(mscvit(&["inspect", "--res", "100"]).status.code(), Some(2));
    assert_eq!(mscvit(&["inspect", "--set", "stage1.R=0"]).status.code(), Some(2));
}

#[test]
fn missing_data_dir_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mscvit(&[
        "train", "--dataset", "cifar10", "--data-dir", "/does/not/exist", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = mscvit(&["eval", "--checkpoint", "/does/not/exist.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn build_writes_loadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mscvit(&["build", "--variant", "t", "--res", "32", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(tmp.path().join("config.txt")).unwrap();
    assert!(cfg.contains("resolution = 32"), "{cfg}");
    let ckpt = mscvit::model::Checkpoint::<f32>::load(tmp.path().join("init.ckpt")).unwrap();
    assert_eq!(ckpt.step, 0);
}

#[test]
fn train_then_eval_reproduces_logged_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_synth_training(tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "train.txt", "metrics.jsonl", "epoch-1.ckpt"] {
        assert!(tmp.path().join(f).exists(), "missing {f}");
    }
    let metrics = mscvit::train::read_metrics(std::io::BufReader::new(std::fs::File::open(tmp.path().join("metrics.jsonl")).unwrap())).unwrap();
    assert_eq!(metrics.len(), 1);
    let logged = metrics[0].test_top1.unwrap();

    let ckpt = tmp.path().join("epoch-1.ckpt");
    let o = mscvit(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "synth", "--synth-per-class", "16"]);
    assert!(o.status.success());
    let line = stdout(&o);
    let acc: f64 = line.trim().strip_prefix("top1 ").unwrap().parse().unwrap();
    assert_eq!(acc, logged);

    let o = mscvit(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "cifar100", "--data-dir", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let o = mscvit(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn identical_runs_write_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_synth_training(a.path()).status.success());
    assert!(run_synth_training(b.path()).status.success());
    for f in ["config.txt", "train.txt", "metrics.jsonl", "epoch-1.ckpt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

//! End-to-end checks of the binary: artifact layout, exit codes, and
//! determinism of the machine-readable outputs.

use std::path::Path;
use std::process::{Command, Output};

fn cotnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn export_spec_prints_canonical_document() {
    let out = cotnet(&["export-spec", "cotnext50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("model cotnext50\n"));
    assert!(text.contains("cardinality 2"));
    assert!(text.contains("stage res2 blocks=3 width=96 out=256 unit=cot"));

    let bad = cotnet(&["export-spec", "resnet34"]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("unknown model"));
}

#[test]
fn profile_writes_per_model_and_budget_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out_flag = dir.path().to_str().unwrap();
    let out = cotnet(&[
        "profile",
        "--models",
        "resnet_tiny,cotnet_tiny",
        "--input",
        "32",
        "--out",
        out_flag,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("convention: 1 op = 1 multiply-accumulate"));

    let budget = std::fs::read_to_string(dir.path().join("budget_table.csv")).unwrap();
    assert!(budget.starts_with("model,params,macs,"));
    assert_eq!(budget.lines().count(), 3);
    for model in ["resnet_tiny", "cotnet_tiny"] {
        let per_layer =
            std::fs::read_to_string(dir.path().join(format!("profile_{model}.csv"))).unwrap();
        assert!(per_layer.starts_with("layer_path,params,macs\n"));
        assert!(per_layer.lines().last().unwrap().starts_with("total,"));
    }
}

#[test]
fn profile_with_no_models_emits_empty_table_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotnet(&["profile", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let budget = std::fs::read_to_string(dir.path().join("budget_table.csv")).unwrap();
    assert_eq!(budget.lines().count(), 1, "header only: {budget}");
}

#[test]
fn gradcheck_runs_selected_ops_across_five_seeds() {
    let out = cotnet(&["gradcheck", "--ops", "relu,channel_gate", "--dtype", "f64"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("-> ok").count(), 10, "{text}");
    assert!(text.contains("10 checks at f64: all passed"));
}

#[test]
fn gradcheck_rejects_unknown_ops_and_f32() {
    let bad_op = cotnet(&["gradcheck", "--ops", "warp_drive"]);
    assert_eq!(bad_op.status.code(), Some(1));
    assert!(stderr(&bad_op).contains("unknown op 'warp_drive'"));

    let f32 = cotnet(&["gradcheck", "--dtype", "f32"]);
    assert_eq!(f32.status.code(), Some(2), "usage error for unsupported dtype");
    assert!(stderr(&f32).contains("possible values: f64"));
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let out = cotnet(&["defragment"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

fn train_tiny(dir: &Path, seed: &str) -> Output {
    cotnet(&[
        "train",
        "--model",
        "resnet_tiny",
        "--epochs",
        "1",
        "--batch",
        "16",
        "--train-len",
        "32",
        "--val-len",
        "16",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_metrics_and_checkpoint_then_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "7");
    assert!(out.status.success(), "{}", stderr(&out));

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,loss,top1\n0,train,"));
    // 2 pre-training rows + 2 rows for the single epoch.
    assert_eq!(metrics.lines().count(), 5);

    let ckpt = dir.path().join("resnet_tiny.ckpt");
    let eval = cotnet(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--val-len",
        "16",
        "--seed",
        "7",
    ]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let line = stdout(&eval);
    assert!(line.contains("val loss") && line.contains("top1"), "{line}");
    // The eval loss equals the final val row of the training log.
    let last_val = metrics.lines().last().unwrap();
    let logged_loss = last_val.split(',').nth(2).unwrap();
    assert!(line.contains(logged_loss), "{line} vs {last_val}");

    let no_ema = cotnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--ema"]);
    assert_eq!(no_ema.status.code(), Some(1));
    assert!(stderr(&no_ema).contains("no EMA shadow"));
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(train_tiny(a.path(), "3").status.success());
    assert!(train_tiny(b.path(), "3").status.success());
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "metrics.csv"), read(b.path(), "metrics.csv"));
    assert_eq!(
        read(a.path(), "resnet_tiny.ckpt"),
        read(b.path(), "resnet_tiny.ckpt")
    );
}

#[test]
fn stage_flags_build_hybrids_and_reject_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotnet(&[
        "train",
        "--model",
        "resnet_tiny",
        "--stage-flags",
        "0001",
        "--epochs",
        "1",
        "--batch",
        "16",
        "--train-len",
        "16",
        "--val-len",
        "16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("training resnet_tiny_cot0001"));
    assert!(dir.path().join("resnet_tiny_cot0001.ckpt").is_file());

    let short = cotnet(&["train", "--model", "resnet_tiny", "--stage-flags", "011"]);
    assert_eq!(short.status.code(), Some(1));
    assert!(stderr(&short).contains("four 0/1 digits"));

    // Replacement starts from a plain conv model, never a contextual one.
    let cot_base = cotnet(&["train", "--model", "cotnet_tiny", "--stage-flags", "0001"]);
    assert_eq!(cot_base.status.code(), Some(1));
}

#[test]
fn spec_file_models_train_under_their_own_name() {
    let dir = tempfile::tempdir().unwrap();
    let exported = cotnet(&["export-spec", "cotnet_tiny"]);
    assert!(exported.status.success());
    let spec_path = dir.path().join("custom.spec");
    std::fs::write(&spec_path, stdout(&exported).replace("model cotnet_tiny", "model custom"))
        .unwrap();

    let out = cotnet(&[
        "train",
        "--model",
        spec_path.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "16",
        "--train-len",
        "16",
        "--val-len",
        "16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("training custom:"));

    let missing = cotnet(&["train", "--model", "no_such_model"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("neither a canonical model"));
}

#[test]
fn ablate_emits_four_variants_and_reference_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotnet(&[
        "ablate",
        "--epochs",
        "1",
        "--batch",
        "16",
        "--train-len",
        "32",
        "--val-len",
        "16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("not reproducible"), "{text}");

    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    let params: Vec<u64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(params[0] < params[1] && params[0] < params[2] && params[0] < params[3]);
    for published in ["77.1", "78.5", "78.7", "79.2"] {
        assert!(csv.contains(published), "{csv}");
    }
}

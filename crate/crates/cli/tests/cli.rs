use std::path::Path;
use std::process::{Command, Output};

fn semd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semd"))
        .args(args)
        .output()
        .expect("spawn semd")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_small(dir: &Path) -> std::path::PathBuf {
    let ds = dir.join("ds.bin");
    let o = semd(&[
        "gen-data",
        "--kinds",
        "cube,sphere",
        "--count",
        "2",
        "--seed",
        "3",
        "--input-size",
        "32",
        "--output-size",
        "64",
        "--supervision-views",
        "6",
        "--out",
        s(&ds),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    ds
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path());
    let pre = dir.path().join("pre.bin");
    let log = dir.path().join("pre.csv");
    let o = semd(&[
        "pretrain", "--dataset", s(&ds), "--preset", "test", "--n-decoders", "4", "--iters", "3",
        "--batch-size", "2", "--out", s(&pre), "--log", s(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(pre.exists());

    let fine = dir.path().join("fine.bin");
    let o = semd(&[
        "finetune", "--dataset", s(&ds), "--checkpoint", s(&pre), "--iters", "2", "--batch-size", "2",
        "--views", "3", "--threshold", "0.3", "--out", s(&fine),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fine.exists());

    let ply = dir.path().join("cloud.ply");
    let o = semd(&[
        "infer", "--checkpoint", s(&pre), "--dataset", s(&ds), "--entry", "cube-0000", "--threshold", "0.01",
        "--out", s(&ply),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&ply).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\n"));
    assert!(semd::metrics::read_ply(&ply).is_ok());

    let curve = dir.path().join("curve.csv");
    let o = semd(&["losscurve", "--log", s(&log), "--window", "2", "--out", s(&curve)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = std::fs::read_to_string(&curve).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "iter,total,mask,depth,total_ma2");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].ends_with(','));
    assert!(!rows[2].ends_with(','));

    let gt = dir.path().join("gt.ply");
    let o = semd(&["export-ply", "--dataset", s(&ds), "--entry", "sphere-0001", "--format", "binary", "--out", s(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(semd::metrics::read_ply(&gt).unwrap().len(), semd::synthdata::SURFACE_SAMPLES);
}

#[test]
fn entry_ids_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path());
    let entries = semd::synthdata::read_dataset(&ds).unwrap();
    let ids: Vec<&str> = entries.iter().map(|e| e.model_id.as_str()).collect();
    assert_eq!(ids, ["cube-0000", "sphere-0001"]);
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let o = semd(&["eval", "--checkpoint", s(&missing), "--dataset", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.bin"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(semd(&["pretrain", "--bogus"]).status.code(), Some(1));
    assert_eq!(semd(&["infer", "--format", "xml", "--checkpoint", "a", "--out", "b"]).status.code(), Some(1));
    assert_eq!(semd(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_strategy_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = semd(&["gen-data", "--renderer", "pathtracer", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("raycast"), "{}", stderr(&o));
    let o = semd(&["eval", "--checkpoint", "a", "--dataset", "b", "--nn", "octree"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path());
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "# tiny run\npreset = test\nn_decoders = 2\nbatch_size = 2\npretrain_iters = 5\n").unwrap();
    let out = dir.path().join("net.bin");
    let log = dir.path().join("log.csv");
    let o = semd(&[
        "pretrain", "--dataset", s(&ds), "--config", s(&cfg), "--iters", "2", "--out", s(&out), "--log", s(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(semd::loss::read_loss_log(&log).unwrap().len(), 2);
    let net = semd::generator::SemdNetwork::load(&out).unwrap();
    assert_eq!(net.config().n_decoders, 2);

    std::fs::write(&cfg, "n_decoders = three\n").unwrap();
    let o = semd(&["pretrain", "--dataset", s(&ds), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_decoders"));
}

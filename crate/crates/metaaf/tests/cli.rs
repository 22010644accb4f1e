mod common;

use common::{walk, Workspace};
use metaaf::cli::main_with;

const DATA: &str = "[data]\ndir = \"data\"\nscenes = 10\n";
const TRAIN: &str = "[train]\nmax_epochs = 2\nbatch_size = 4\n";

fn prepared() -> Workspace {
    let ws = Workspace::new();
    let gen = ws.config("gen.toml", DATA);
    assert_eq!(ws.run("gen-data", &gen, None), 0);
    let kws = ws.config("kws.toml", &format!("{DATA}{TRAIN}"));
    assert_eq!(ws.run("train-kws", &kws, Some("kws")), 0);
    ws
}

#[test]
fn unknown_config_key_exits_with_usage_code() {
    let ws = Workspace::new();
    let cfg = ws.config("c.toml", "[data]\nscenez = 3\n");
    assert_eq!(ws.run("gen-data", &cfg, None), 2);
    let cfg = ws.config("d.toml", "colour = 1\n");
    assert_eq!(ws.run("gen-data", &cfg, None), 2);
    assert_eq!(main_with(["metaaf", "no-such-command"].map(Into::into)), 2);
}

#[test]
fn zero_scenes_exit_with_usage_code_and_write_nothing() {
    let ws = Workspace::new();
    let cfg = ws.config("c.toml", "[data]\ndir = \"data\"\nscenes = 0\n");
    assert_eq!(ws.run("gen-data", &cfg, None), 2);
    assert!(!ws.path("data").exists());
}

#[test]
fn missing_checkpoint_exits_with_usage_code_before_writing() {
    let ws = Workspace::new();
    let gen = ws.config("gen.toml", DATA);
    assert_eq!(ws.run("gen-data", &gen, None), 0);
    let ev = ws.config("ev.toml", &format!("{DATA}[kws]\ncheckpoint = \"{}\"\n", ws.path("nope.ckpt").display()));
    assert_eq!(ws.run("eval", &ev, Some("ev")), 2);
    assert_eq!(ws.run("train-meta", &ev, Some("tm")), 2);
    assert!(!ws.path("ev").exists());
    assert!(!ws.path("tm").exists());
}

#[test]
fn empty_evaluation_fold_is_a_usage_error() {
    let ws = prepared();
    let body = format!(
        "[data]\ndir = \"data\"\nscenes = 10\ntrain_frac = 0.6\nval_frac = 0.4\n[kws]\ncheckpoint = \"{}\"\n[eval]\ncancellers = [\"no-aec\"]\n",
        ws.path("kws/best.ckpt").display()
    );
    // Regenerate with no test fold.
    let gen = ws.config("gen2.toml", &body);
    assert_eq!(ws.run("gen-data", &gen, None), 0);
    assert_eq!(ws.run("eval", &gen, Some("ev")), 2);
    assert!(!ws.path("ev").exists());
}

#[test]
fn gen_data_is_deterministic() {
    let ws = Workspace::new();
    let body = "[data]\nscenes = 6\nwrite_audio = true\n";
    let a = ws.config("a.toml", &format!("{body}dir = \"a\"\n"));
    let b = ws.config("b.toml", &format!("{body}dir = \"b\"\n"));
    assert_eq!(ws.run("gen-data", &a, None), 0);
    assert_eq!(ws.run("gen-data", &b, None), 0);
    let files = |d: &str| {
        let mut v: Vec<_> = walk(&ws.path(d)).into_iter().map(|p| (p.strip_prefix(ws.path(d)).unwrap().to_path_buf(), std::fs::read(&p).unwrap())).collect();
        v.sort();
        v
    };
    let (fa, fb) = (files("a"), files("b"));
    assert_eq!(fa.len(), 2 + 12);
    assert_eq!(fa, fb);
}

#[test]
fn training_pipeline_runs_resumes_and_is_reproducible() {
    let ws = prepared();
    for f in ["best.ckpt", "last.ckpt", "log.jsonl", "run.json", "config.toml"] {
        assert!(ws.path("kws").join(f).is_file(), "{f}");
    }
    let kws = ws.path("kws/best.ckpt").display().to_string();
    let meta = ws.config("meta.toml", &format!("{DATA}[kws]\ncheckpoint = \"{kws}\"\n[train]\nmax_epochs = 1\nbatch_size = 4\nlambda = 0.5\n"));
    assert_eq!(ws.run("train-meta", &meta, Some("m1")), 0);
    assert_eq!(ws.run("train-meta", &meta, Some("m2")), 0);
    let bytes = |p: &str| std::fs::read(ws.path(p)).unwrap();
    assert_eq!(bytes("m1/best.ckpt"), bytes("m2/best.ckpt"));
    assert_eq!(bytes("m1/last.ckpt"), bytes("m2/last.ckpt"));

    let resumed = ws.config(
        "resume.toml",
        &format!(
            "{DATA}[kws]\ncheckpoint = \"{kws}\"\n[train]\nmax_epochs = 2\nbatch_size = 4\nlambda = 0.5\nresume = \"{}\"\n",
            ws.path("m1/last.ckpt").display()
        ),
    );
    assert_eq!(ws.run("train-meta", &resumed, Some("m3")), 0);
    let full = ws.config("full.toml", &format!("{DATA}[kws]\ncheckpoint = \"{kws}\"\n[train]\nmax_epochs = 2\nbatch_size = 4\nlambda = 0.5\n"));
    assert_eq!(ws.run("train-meta", &full, Some("m4")), 0);
    let params = |p: &str| {
        let ck = metaaf::checkpoint::Checkpoint::read(&ws.path(p)).unwrap();
        ck.arrays.iter().filter(|a| !a.name.starts_with("state.")).map(|a| a.data.clone()).collect::<Vec<_>>()
    };
    assert_eq!(params("m3/last.ckpt"), params("m4/last.ckpt"));

    let joint = ws.config(
        "joint.toml",
        &format!("{DATA}[kws]\ncheckpoint = \"{kws}\"\n[train]\nmax_epochs = 1\nbatch_size = 4\ninit = \"{}\"\n", ws.path("m1/best.ckpt").display()),
    );
    assert_eq!(ws.run("train-joint", &joint, Some("j")), 0);
    assert!(ws.path("j/best-kws.ckpt").is_file());

    let kf = ws.config("kf.toml", &format!("{DATA}[kws]\ncheckpoint = \"{kws}\"\n[kalman]\ntransition = [0.99]\nprocess_noise = [1e-3, 1e-2]\nsmoothing = [0.9]\n"));
    assert_eq!(ws.run("tune-kf", &kf, Some("kf")), 0);
    let ev = format!(
        "{DATA}[kws]\ncheckpoint = \"{kws}\"\n[kalman]\ntuned = \"{}\"\n[eval]\nmeta = \"{}\"\nct_meta = \"{}\"\n",
        ws.path("kf/kalman.toml").display(),
        ws.path("m1/best.ckpt").display(),
        ws.path("m4/best.ckpt").display()
    );
    let ev = ws.config("ev.toml", &ev);
    assert_eq!(ws.run("eval", &ev, Some("e1")), 0);
    assert_eq!(ws.run("eval", &ev, Some("e2")), 0);
    assert_eq!(bytes("e1/report.txt"), bytes("e2/report.txt"));
    assert_eq!(bytes("e1/report.jsonl"), bytes("e2/report.jsonl"));
    let report = String::from_utf8(bytes("e1/report.txt")).unwrap();
    for name in ["no-echo", "no-aec", "diag-kf", "meta", "ct-meta"] {
        assert!(report.contains(name), "{report}");
    }
}

#[test]
fn selfcheck_passes() {
    assert_eq!(main_with(["metaaf", "selfcheck"].map(Into::into)), 0);
}

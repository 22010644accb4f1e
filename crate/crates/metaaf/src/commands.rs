//! Subcommand implementations. Every input is resolved and validated before
//! any training or evaluation starts.

use std::path::{Path, PathBuf};

use metaaf_core::aec::EchoCanceller;
use metaaf_core::eval::{evaluate, paired_significance, swap_matrix, tune_kalman, Canceller, Head, MetricsReport};
use metaaf_core::exec::Executor;
use metaaf_core::kalman::{DiagKalman, KalmanConfig};
use metaaf_core::kws::Kws;
use metaaf_core::scene::{toy_manifest, Fold, Source};
use metaaf_core::train::{train_canceller, train_kws, CancellerTrainer, EpochRecord, Mode, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::manifest::{write_labels, write_manifest};
use crate::models::{build_meta, read_state, seeded_rng, write_state, KwsModel, MetaModel};
use crate::report::{epoch_record, f1_cell, metrics_record, opt_db, swap_table, table, JsonLines};
use crate::wav::write_wav;

/// SHA-256 over the named inputs of a run.
#[derive(Default)]
pub struct InputHash {
    h: Sha256,
}

impl InputHash {
    pub fn add_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.h.update((name.len() as u64).to_le_bytes());
        self.h.update(name.as_bytes());
        self.h.update((bytes.len() as u64).to_le_bytes());
        self.h.update(bytes);
    }

    pub fn add_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.add_bytes(name, &bytes);
        Ok(())
    }

    pub fn hex(self) -> String {
        self.h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Config snapshot, seed and input hash of a run directory.
fn write_run_info(dir: &Path, cfg: &RunConfig, command: &str, hash: &str) -> Result<()> {
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let info = json!({ "command": command, "seed": cfg.seed, "inputs_sha256": hash });
    write_text(&dir.join("run.json"), &(serde_json::to_string_pretty(&info).unwrap() + "\n"))
}

fn open_corpus(cfg: &RunConfig, manifest: &Path, hash: &mut InputHash) -> Result<Corpus> {
    let corpus = Corpus::open(manifest, cfg.scene_config())?;
    hash.add_file("manifest", manifest)?;
    hash.add_file("labels", &corpus.root.join("labels.txt"))?;
    Ok(corpus)
}

fn load_kws(cfg: &RunConfig, corpus_labels: &[String], hash: &mut InputHash) -> Result<KwsModel> {
    let path = cfg.kws.checkpoint.as_ref().ok_or_else(|| Error::Config("kws.checkpoint is required".into()))?;
    let m = KwsModel::from_checkpoint(&Checkpoint::read(path)?)?;
    if m.labels != corpus_labels {
        return Err(Error::Config(format!(
            "classifier {} knows labels {:?}, corpus has {:?}",
            path.display(),
            m.labels,
            corpus_labels
        )));
    }
    hash.add_file("kws", path)?;
    Ok(m)
}

fn load_meta(path: &Path, hash: &mut InputHash, name: &str) -> Result<MetaModel> {
    let m = MetaModel::from_checkpoint(&Checkpoint::read(path)?)?;
    hash.add_file(name, path)?;
    Ok(m)
}

fn stamp(ck: &mut Checkpoint, cfg: &RunConfig, run: &str, hash: &str, out: &TrainOutcome) {
    ck.set("run", run);
    ck.set("seed", cfg.seed);
    ck.set("inputs_sha256", hash);
    ck.set("best_epoch", out.best_epoch);
    if let Some(s) = out.best_score {
        ck.set("best_score", s);
    }
}

fn logger(path: &Path) -> Result<(JsonLines, Vec<Error>)> {
    Ok((JsonLines::create(path)?, Vec::new()))
}

/// Log callback that prints progress and keeps the first write failure.
fn log_epoch(log: &mut (JsonLines, Vec<Error>), r: &EpochRecord) {
    if let Err(e) = log.0.write(&epoch_record(r)) {
        log.1.push(e);
    }
    let f1 = r.macro_f1.map(|f| format!(" f1 {f:.3}")).unwrap_or_default();
    let erle = r.erle_db.map(|e| format!(" erle {e:.2} dB")).unwrap_or_default();
    eprintln!("epoch {:>3} {:<5} loss {:.4}{f1}{erle} lr {:.2e}", r.epoch, r.split.as_str(), r.loss, r.lr);
}

fn finish_log(log: (JsonLines, Vec<Error>)) -> Result<()> {
    match log.1.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Writes the manifest, labels and optionally audio, then rebuilds every
/// scene from the written files and checks its decomposition and SER.
pub fn gen_data<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<String> {
    let d = &cfg.data;
    if d.classes > d.labels.len() {
        return Err(Error::Config(format!("{} classes but only {} labels", d.classes, d.labels.len())));
    }
    let labels = d.labels[..d.classes].to_vec();
    let mut rows = toy_manifest(&cfg.toy_preset(), &labels)?;
    let dir = cfg.data_path(&d.dir);
    create_dir(&dir)?;
    if d.write_audio {
        let audio = dir.join("audio");
        create_dir(&audio)?;
        let scene_cfg = cfg.scene_config();
        let written = exec.map(rows.len(), |i| -> Result<(String, String)> {
            let r = &rows[i];
            let sc = metaaf_core::scene::scene_from_row(
                r,
                &labels,
                metaaf_core::scene::RowAudio { playback: None, keyword: None },
                &scene_cfg,
            )?;
            let kw = metaaf_core::scene::surrogate_keyword(&labels[r.class], match r.keyword {
                Source::Seed(s) => s,
                Source::Path(_) => unreachable!("toy rows are seeded"),
            });
            let (u, s) = (format!("audio/{}_u.wav", r.id), format!("audio/{}_s.wav", r.id));
            write_wav(&dir.join(&u), &sc.u)?;
            write_wav(&dir.join(&s), &kw)?;
            Ok((u, s))
        });
        for (r, w) in rows.iter_mut().zip(written) {
            let (u, s) = w?;
            r.playback = Source::Path(u);
            r.keyword = Source::Path(s);
        }
    }
    let manifest = dir.join("manifest.csv");
    write_labels(&dir.join("labels.txt"), &labels)?;
    write_manifest(&manifest, &rows)?;

    let corpus = Corpus::open(&manifest, cfg.scene_config())?;
    let checks = exec.map(corpus.rows.len(), |i| -> Result<()> {
        let sc = corpus.scene(&corpus.rows[i])?;
        let exact = (0..sc.len()).all(|t| sc.d[t] == sc.echo[t] + sc.n[t] + sc.s[t]);
        let support = sc.shift..sc.shift + sc.keyword_len;
        let es: f64 = sc.s[support.clone()].iter().map(|v| v * v).sum();
        let ee: f64 = sc.echo[support].iter().map(|v| v * v).sum();
        let ser = 10.0 * (es / ee).log10();
        if !exact || (ser - sc.ser_db).abs() > 0.01 {
            return Err(Error::Core(metaaf_core::Error::Generation(format!(
                "{}: decomposition or SER check failed ({ser:.4} vs {:.4} dB)",
                sc.id, sc.ser_db
            ))));
        }
        Ok(())
    });
    checks.into_iter().collect::<Result<Vec<_>>>()?;
    let count = |f: Fold| rows.iter().filter(|r| r.fold == f).count();
    Ok(format!(
        "wrote {} ({} scenes: train {}, val {}, test {}; decomposition verified)",
        manifest.display(),
        rows.len(),
        count(Fold::Train),
        count(Fold::Val),
        count(Fold::Test)
    ))
}

pub fn train_kws_cmd<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<String> {
    let mut hash = InputHash::default();
    hash.add_bytes("config", cfg.input_toml().as_bytes());
    let corpus = open_corpus(cfg, &cfg.manifest_path()?, &mut hash)?;
    let tc = cfg.train_config(TrainConfig::kws(cfg.seed))?;
    let kws = Kws::new(cfg.kws_config(corpus.labels.len()))?;
    let init = kws.init_params(&mut seeded_rng(cfg.seed, "kws"));
    let resume = match &cfg.train.resume {
        Some(p) => {
            hash.add_file("resume", p)?;
            Some(read_state(&Checkpoint::read(p)?, &[&init])?)
        }
        None => None,
    };
    let out_dir = cfg.out_dir()?;
    let train = corpus.examples(Fold::Train, exec)?;
    let val = corpus.examples(Fold::Val, exec)?;
    create_dir(&out_dir)?;
    let hex = hash.hex();
    write_run_info(&out_dir, cfg, "train-kws", &hex)?;
    let mut log = logger(&out_dir.join("log.jsonl"))?;
    let out = train_kws(&kws, init, &train, &val, &tc, resume, exec, &mut |r| log_epoch(&mut log, r))?;
    finish_log(log)?;

    let model = |params| KwsModel { kws: kws.clone(), params, labels: corpus.labels.clone() };
    let mut best = model(out.best[0].clone()).to_checkpoint();
    stamp(&mut best, cfg, "kws", &hex, &out);
    best.write(&out_dir.join("best.ckpt"))?;
    let mut last = model(out.last.params[0].clone()).to_checkpoint();
    stamp(&mut last, cfg, "kws", &hex, &out);
    write_state(&mut last, &out.last);
    last.write(&out_dir.join("last.ckpt"))?;
    Ok(format!("best epoch {} (val loss {:.4}) -> {}", out.best_epoch, out.best_score.unwrap_or(f64::NAN), out_dir.display()))
}

/// Optimizer training against the frozen classifier (`train-meta`) or
/// joint training of both (`train-joint`).
pub fn train_canceller_cmd<E: Executor>(cfg: &RunConfig, mode: Mode, exec: &E) -> Result<String> {
    let mut hash = InputHash::default();
    hash.add_bytes("config", cfg.input_toml().as_bytes());
    let corpus = open_corpus(cfg, &cfg.manifest_path()?, &mut hash)?;
    let kws = load_kws(cfg, &corpus.labels, &mut hash)?;
    let preset = match mode {
        Mode::Frozen => TrainConfig::meta(cfg.train.lambda.unwrap_or(0.0), cfg.seed),
        Mode::Joint => TrainConfig::joint(cfg.train.lambda.unwrap_or(0.5), cfg.seed),
    };
    let tc = cfg.train_config(preset)?;
    let (model, init) = match (mode, &cfg.train.init) {
        (Mode::Joint, None) => return Err(Error::Config("train.init (optimizer checkpoint) is required for joint training".into())),
        (_, Some(p)) => {
            let m = load_meta(p, &mut hash, "init")?;
            (m.model, m.params)
        }
        (Mode::Frozen, None) => {
            let o = &cfg.optimizer;
            let model = build_meta(cfg.filter_config(), o.hidden, o.group_size, o.group_hop)?;
            let init = model.optimizer().init_params(&mut seeded_rng(cfg.seed, "meta"));
            (model, init)
        }
    };
    let resume = match &cfg.train.resume {
        Some(p) => {
            hash.add_file("resume", p)?;
            let layouts: Vec<&_> = match mode {
                Mode::Frozen => vec![&init],
                Mode::Joint => vec![&init, &kws.params],
            };
            Some(read_state(&Checkpoint::read(p)?, &layouts)?)
        }
        None => None,
    };
    let out_dir = cfg.out_dir()?;
    let train = corpus.scenes(Fold::Train, exec)?;
    let val = corpus.scenes(Fold::Val, exec)?;
    create_dir(&out_dir)?;
    let hex = hash.hex();
    let (command, run) = match mode {
        Mode::Frozen => ("train-meta", metaaf_core::train::run_label(mode, tc.lambda)),
        Mode::Joint => ("train-joint", metaaf_core::train::run_label(mode, tc.lambda)),
    };
    write_run_info(&out_dir, cfg, command, &hex)?;
    let trainer = CancellerTrainer { model: &model, kws: &kws.kws, mode, cfg: tc.clone(), warmup: cfg.warmup() };
    let mut log = logger(&out_dir.join("log.jsonl"))?;
    let out = train_canceller(&trainer, init, kws.params.clone(), &train, &val, resume, exec, &mut |r| {
        log_epoch(&mut log, r)
    })?;
    finish_log(log)?;

    let save = |params: &metaaf_core::params::ParamSet, state: bool, name: &str| -> Result<()> {
        let mut ck = MetaModel { model: model.clone(), params: params.clone() }.to_checkpoint();
        stamp(&mut ck, cfg, &run, &hex, &out);
        ck.set("lambda", tc.lambda);
        if state {
            write_state(&mut ck, &out.last);
        }
        ck.write(&out_dir.join(name))
    };
    save(&out.best[0], false, "best.ckpt")?;
    save(&out.last.params[0], true, "last.ckpt")?;
    if mode == Mode::Joint {
        let mut ck = KwsModel { kws: kws.kws.clone(), params: out.best[1].clone(), labels: kws.labels.clone() }.to_checkpoint();
        stamp(&mut ck, cfg, &run, &hex, &out);
        ck.write(&out_dir.join("best-kws.ckpt"))?;
    }
    Ok(format!(
        "best epoch {} (score {:.4}) -> {}",
        out.best_epoch,
        out.best_score.unwrap_or(f64::NAN),
        out_dir.display()
    ))
}

/// Tuned Kalman settings as stored by `tune-kf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedKalman {
    pub transition: f64,
    pub process_noise: f64,
    pub smoothing: f64,
    pub initial_variance: f64,
}

impl From<KalmanConfig> for TunedKalman {
    fn from(c: KalmanConfig) -> Self {
        Self {
            transition: c.transition,
            process_noise: c.process_noise,
            smoothing: c.smoothing,
            initial_variance: c.initial_variance,
        }
    }
}

impl From<TunedKalman> for KalmanConfig {
    fn from(t: TunedKalman) -> Self {
        KalmanConfig {
            transition: t.transition,
            process_noise: t.process_noise,
            smoothing: t.smoothing,
            initial_variance: t.initial_variance,
        }
    }
}

fn read_tuned(path: &Path, hash: &mut InputHash) -> Result<KalmanConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match Error::io(path, e) {
        Error::Missing { path, .. } => Error::Missing { what: "tuned Kalman settings", path },
        other => other,
    })?;
    hash.add_bytes("kalman", text.as_bytes());
    let t: TunedKalman = toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))?;
    let c = KalmanConfig::from(t);
    c.validate()?;
    Ok(c)
}

/// Grid search on the validation fold, scored by downstream macro F1.
pub fn tune_kf<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<String> {
    let mut hash = InputHash::default();
    hash.add_bytes("config", cfg.input_toml().as_bytes());
    let corpus = open_corpus(cfg, &cfg.manifest_path()?, &mut hash)?;
    let kws = load_kws(cfg, &corpus.labels, &mut hash)?;
    let out_dir = cfg.out_dir()?;
    let aec = EchoCanceller::new(cfg.filter_config())?;
    let grid = cfg.kalman.grid();
    let val = corpus.scenes(Fold::Val, exec)?;
    create_dir(&out_dir)?;
    write_run_info(&out_dir, cfg, "tune-kf", &hash.hex())?;
    let (best, scores) = tune_kalman(&aec, &grid, &kws.kws, &kws.params, &val, cfg.warmup(), exec)?;
    let mut log = JsonLines::create(&out_dir.join("grid.jsonl"))?;
    let mut rows = Vec::new();
    for (g, s) in grid.iter().zip(&scores) {
        log.write(&json!({
            "transition": g.transition,
            "process_noise": g.process_noise,
            "smoothing": g.smoothing,
            "macro_f1": s.macro_f1,
            "erle_db": s.erle_db,
        }))?;
        rows.push(vec![
            format!("{}", g.transition),
            format!("{:e}", g.process_noise),
            format!("{}", g.smoothing),
            format!("{:.3}", s.macro_f1),
            format!("{:.2}", s.erle_db),
        ]);
    }
    let text = table(&["A", "q", "smoothing", "val F1", "ERLE dB"], &rows);
    write_text(&out_dir.join("grid.txt"), &text)?;
    let tuned = toml::to_string(&TunedKalman::from(best)).expect("settings serialize");
    write_text(&out_dir.join("kalman.toml"), &tuned)?;
    Ok(format!("{text}best: A={} q={} smoothing={}", best.transition, best.process_noise, best.smoothing))
}

/// Loads everything `eval` needs, failing before any scene is processed.
struct EvalInputs {
    corpus: Corpus,
    kws: KwsModel,
    kalman: Option<DiagKalman>,
    meta: Option<MetaModel>,
    ct_meta: Option<MetaModel>,
    hash: String,
}

fn eval_inputs(cfg: &RunConfig) -> Result<EvalInputs> {
    let mut hash = InputHash::default();
    hash.add_bytes("config", cfg.input_toml().as_bytes());
    let wants = |c: &str| cfg.eval.cancellers.iter().any(|x| x == c);
    let ckpt = |p: &Option<PathBuf>, key: &str| -> Result<PathBuf> {
        p.clone().ok_or_else(|| Error::Config(format!("eval.{key} is required for the {key} canceller")))
    };
    let meta = if wants("meta") { Some(load_meta(&ckpt(&cfg.eval.meta, "meta")?, &mut hash, "meta")?) } else { None };
    let ct_meta = if wants("ct-meta") {
        Some(load_meta(&ckpt(&cfg.eval.ct_meta, "ct_meta")?, &mut hash, "ct_meta")?)
    } else {
        None
    };
    let kalman = if wants("diag-kf") {
        let kc = match &cfg.kalman.tuned {
            Some(p) => read_tuned(p, &mut hash)?,
            None => KalmanConfig::default(),
        };
        Some(DiagKalman::new(EchoCanceller::new(cfg.filter_config())?, kc)?)
    } else {
        None
    };
    let corpus = open_corpus(cfg, &cfg.manifest_path()?, &mut hash)?;
    let kws = load_kws(cfg, &corpus.labels, &mut hash)?;
    Ok(EvalInputs { corpus, kws, kalman, meta, ct_meta, hash: hash.hex() })
}

pub fn eval_cmd<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<String> {
    let inputs = eval_inputs(cfg)?;
    let out_dir = cfg.out_dir()?;
    let fold = Fold::parse(&cfg.eval.fold)?;
    let scenes = inputs.corpus.scenes(fold, exec)?;
    if scenes.is_empty() {
        return Err(Error::Config(format!("fold {} is empty", fold.as_str())));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for name in &cfg.eval.cancellers {
        let c = match name.as_str() {
            "no-echo" => Canceller::NoEcho,
            "no-aec" => Canceller::NoAec,
            "diag-kf" => Canceller::Kalman(inputs.kalman.clone().expect("loaded above")),
            "meta" | "ct-meta" => {
                let m = if name == "meta" { &inputs.meta } else { &inputs.ct_meta };
                let m = m.as_ref().expect("loaded above");
                Canceller::Meta { model: &m.model, params: &m.params }
            }
            other => unreachable!("validated canceller {other}"),
        };
        let mut r = evaluate(&c, &inputs.kws.kws, &inputs.kws.params, &scenes, cfg.warmup(), exec)?;
        r.canceller = name.clone();
        reports.push(r);
    }
    let baseline = reports.iter().position(|r| r.canceller == "no-aec");
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for r in &reports {
        let p = match baseline {
            Some(b) if reports[b].canceller != r.canceller => {
                Some(paired_significance(r, &reports[b], cfg.eval.trials, cfg.seed)?)
            }
            _ => None,
        };
        rows.push(vec![
            r.canceller.clone(),
            f1_cell(r.macro_f1, r.micro_f1),
            opt_db(r.mean_erle_db),
            format!("{:.3}", r.mean_meta_loss),
            p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into()),
        ]);
        let mut rec = metrics_record(r);
        rec["p_vs_no_aec"] = json!(p);
        rec["fold"] = json!(fold.as_str());
        records.push(rec);
    }
    let mut text = table(&["canceller", "F1 macro (micro)", "ERLE dB", "meta-loss", "p vs no-aec"], &rows);
    text += "p: two-sided paired permutation test on per-scene correctness\n";
    let pos = |n: &str| reports.iter().position(|r| r.canceller == n);
    if let (Some(a), Some(b)) = (pos("ct-meta"), pos("meta")) {
        let p = paired_significance(&reports[a], &reports[b], cfg.eval.trials, cfg.seed)?;
        text += &format!("ct-meta vs meta: p = {p:.4}\n");
        records.push(json!({ "comparison": "ct-meta vs meta", "p": p }));
    }
    create_dir(&out_dir)?;
    write_run_info(&out_dir, cfg, "eval", &inputs.hash)?;
    let mut log = JsonLines::create(&out_dir.join("report.jsonl"))?;
    for r in &records {
        log.write(r)?;
    }
    write_text(&out_dir.join("report.txt"), &text)?;
    Ok(text)
}

pub fn swap_matrix_cmd<E: Executor>(cfg: &RunConfig, exec: &E) -> Result<String> {
    let entries = &cfg.swap.entries;
    if entries.len() < 2 {
        return Err(Error::Config("swap.entries needs at least two models".into()));
    }
    let mut hash = InputHash::default();
    hash.add_bytes("config", cfg.input_toml().as_bytes());
    let mut loaded = Vec::new();
    for e in entries {
        let meta = load_meta(&e.meta, &mut hash, &e.name)?;
        let corpus = open_corpus(cfg, &cfg.data_path(&e.manifest), &mut hash)?;
        let kws = KwsModel::from_checkpoint(&Checkpoint::read(&e.kws)?)?;
        if kws.labels != corpus.labels {
            return Err(Error::Config(format!("{}: classifier labels do not match its corpus", e.name)));
        }
        hash.add_file(&e.name, &e.kws)?;
        loaded.push((meta, corpus, kws));
    }
    let out_dir = cfg.out_dir()?;
    let fold = Fold::parse(&cfg.eval.fold)?;
    let scenes = loaded.iter().map(|(_, c, _)| c.scenes(fold, exec)).collect::<Result<Vec<_>>>()?;
    let cancellers: Vec<Canceller<'_>> =
        loaded.iter().map(|(m, _, _)| Canceller::Meta { model: &m.model, params: &m.params }).collect();
    let heads: Vec<Head<'_>> = loaded
        .iter()
        .zip(&scenes)
        .map(|((_, _, k), s)| Head { kws: &k.kws, params: &k.params, scenes: s })
        .collect();
    let m = swap_matrix(&cancellers, &heads, cfg.warmup(), exec)?;
    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    let dominant = m.diagonal_dominant();
    let mut text = swap_table(&names, &m);
    text += "* matched model and head\n";
    for (n, ok) in names.iter().zip(&dominant) {
        text += &format!("head {n}: matched pair {} every swapped model\n", if *ok { "at or above" } else { "BELOW" });
    }
    create_dir(&out_dir)?;
    write_run_info(&out_dir, cfg, "swap-matrix", &hash.hex())?;
    let mut log = JsonLines::create(&out_dir.join("report.jsonl"))?;
    for (r, row) in m.reports.iter().enumerate() {
        for (c, rep) in row.iter().enumerate() {
            let mut rec = metrics_record(rep);
            rec["model"] = json!(names[r]);
            rec["head"] = json!(names[c]);
            rec["matched"] = json!(r == c);
            log.write(&rec)?;
        }
    }
    write_text(&out_dir.join("report.txt"), &text)?;
    Ok(text)
}

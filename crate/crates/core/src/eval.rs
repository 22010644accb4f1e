//! Scene-level evaluation of cancellers feeding a keyword classifier.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{usage, Result};
use crate::exec::Executor;
use crate::kalman::{select_best, DiagKalman, GridScore, KalmanConfig};
use crate::kws::Kws;
use crate::loss::meta_loss;
use crate::meta::MetaAec;
use crate::metrics::{erle_db, paired_permutation_test, ConfusionMatrix};
use crate::params::ParamSet;
use crate::scene::Scene;

/// What sits between the microphone and the classifier.
#[derive(Debug, Clone)]
pub enum Canceller<'a> {
    /// Upper bound: the classifier hears the keyword (and noise) alone.
    NoEcho,
    /// Lower bound: the raw mixture.
    NoAec,
    Kalman(DiagKalman),
    Meta { model: &'a MetaAec, params: &'a ParamSet },
}

impl Canceller<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Canceller::NoEcho => "no-echo",
            Canceller::NoAec => "no-aec",
            Canceller::Kalman(_) => "diag-kf",
            Canceller::Meta { .. } => "meta",
        }
    }

    pub fn residual(&self, scene: &Scene) -> Result<Vec<f64>> {
        match self {
            Canceller::NoEcho => Ok(scene.s.iter().zip(&scene.n).map(|(s, n)| s + n).collect()),
            Canceller::NoAec => Ok(scene.d.clone()),
            Canceller::Kalman(kf) => kf.process(&scene.u, &scene.d),
            Canceller::Meta { model, params } => model
                .process(params, &scene.u, &scene.d)
                .map_err(|e| e.in_stream(&scene.id)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub id: String,
    pub class: usize,
    pub predicted: usize,
    pub erle_db: Option<f64>,
    pub meta_loss: f64,
}

impl SceneResult {
    pub fn correct(&self) -> bool {
        self.class == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub canceller: String,
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Mean over scenes with a defined ERLE.
    pub mean_erle_db: Option<f64>,
    pub mean_meta_loss: f64,
    pub scenes: Vec<SceneResult>,
}

impl MetricsReport {
    pub fn correctness(&self) -> Vec<bool> {
        self.scenes.iter().map(SceneResult::correct).collect()
    }
}

/// Runs every scene through `canceller` and `kws`. ERLE skips the first
/// `warmup` samples and the keyword.
pub fn evaluate<E: Executor>(
    canceller: &Canceller<'_>,
    kws: &Kws,
    kws_params: &ParamSet,
    scenes: &[Scene],
    warmup: usize,
    exec: &E,
) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(usage!("nothing to evaluate"));
    }
    kws.check_params(kws_params)?;
    let classes = kws.config().classes;
    if let Some(s) = scenes.iter().find(|s| s.class >= classes) {
        return Err(usage!("scene {} has class {} but the classifier knows {classes}", s.id, s.class));
    }
    let results = exec.map(scenes.len(), |i| -> Result<SceneResult> {
        let scene = &scenes[i];
        let e = canceller.residual(scene)?;
        let pred = kws.predict(kws_params, &e)?;
        let erle = match canceller {
            Canceller::NoEcho => None,
            _ => erle_db(&scene.d, &e, &scene.keyword_free_mask(warmup)),
        };
        Ok(SceneResult {
            id: scene.id.clone(),
            class: scene.class,
            predicted: pred.predicted,
            erle_db: erle,
            meta_loss: meta_loss(&e)?,
        })
    });
    let scenes_out = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut confusion = ConfusionMatrix::new(classes);
    for r in &scenes_out {
        confusion.add(r.class, r.predicted)?;
    }
    let (macro_f1, micro_f1) = confusion.f1_scores()?;
    let erles: Vec<f64> = scenes_out.iter().filter_map(|r| r.erle_db).collect();
    let mean_erle_db = (!erles.is_empty()).then(|| erles.iter().sum::<f64>() / erles.len() as f64);
    let mean_meta_loss = scenes_out.iter().map(|r| r.meta_loss).sum::<f64>() / scenes_out.len() as f64;
    Ok(MetricsReport {
        canceller: canceller.name().into(),
        confusion,
        macro_f1,
        micro_f1,
        mean_erle_db,
        mean_meta_loss,
        scenes: scenes_out,
    })
}

/// Grid search over Kalman settings scored by downstream macro F1.
pub fn tune_kalman<E: Executor>(
    aec: &crate::aec::EchoCanceller,
    grid: &[KalmanConfig],
    kws: &Kws,
    kws_params: &ParamSet,
    scenes: &[Scene],
    warmup: usize,
    exec: &E,
) -> Result<(KalmanConfig, Vec<GridScore>)> {
    let (best, scores) = select_best(grid, |cfg| {
        let kf = DiagKalman::new(aec.clone(), *cfg)?;
        let r = evaluate(&Canceller::Kalman(kf), kws, kws_params, scenes, warmup, exec)?;
        Ok(GridScore { macro_f1: r.macro_f1, erle_db: r.mean_erle_db.unwrap_or(f64::NEG_INFINITY) })
    })?;
    Ok((grid[best], scores))
}

/// One row per canceller, one column per classifier head; each head is
/// evaluated on its own scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapMatrix {
    pub reports: Vec<Vec<MetricsReport>>,
}

impl SwapMatrix {
    pub fn macro_f1(&self, row: usize, col: usize) -> f64 {
        self.reports[row][col].macro_f1
    }

    /// Whether each column's matched (diagonal) entry is at least every
    /// mismatched entry of that column.
    pub fn diagonal_dominant(&self) -> Vec<bool> {
        (0..self.reports.len())
            .map(|c| (0..self.reports.len()).all(|r| r == c || self.macro_f1(c, c) >= self.macro_f1(r, c)))
            .collect()
    }
}

pub struct Head<'a> {
    pub kws: &'a Kws,
    pub params: &'a ParamSet,
    pub scenes: &'a [Scene],
}

pub fn swap_matrix<E: Executor>(
    cancellers: &[Canceller<'_>],
    heads: &[Head<'_>],
    warmup: usize,
    exec: &E,
) -> Result<SwapMatrix> {
    if cancellers.len() != heads.len() || cancellers.is_empty() {
        return Err(usage!("swap matrix needs one canceller per head ({} vs {})", cancellers.len(), heads.len()));
    }
    let reports = cancellers
        .iter()
        .map(|c| heads.iter().map(|h| evaluate(c, h.kws, h.params, h.scenes, warmup, exec)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    Ok(SwapMatrix { reports })
}

/// Paired permutation p-value between two reports over the same scenes.
pub fn paired_significance(a: &MetricsReport, b: &MetricsReport, trials: usize, seed: u64) -> Result<f64> {
    if a.scenes.len() != b.scenes.len() || a.scenes.iter().zip(&b.scenes).any(|(x, y)| x.id != y.id) {
        return Err(usage!("reports cover different scenes"));
    }
    paired_permutation_test(&a.correctness(), &b.correctness(), trials, seed)
}

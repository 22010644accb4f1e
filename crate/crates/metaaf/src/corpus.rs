//! Manifest-backed scene corpora.

use std::path::{Path, PathBuf};

use metaaf_core::exec::Executor;
use metaaf_core::scene::{clean_example, scene_from_row, Fold, ManifestRow, RowAudio, Scene, SceneConfig, Source};
use metaaf_core::train::Example;

use crate::error::{Error, Result};
use crate::manifest::{read_labels, read_manifest};
use crate::wav::read_wav;

pub struct Corpus {
    /// Directory that relative audio paths resolve against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub labels: Vec<String>,
    pub scene_config: SceneConfig,
}

impl Corpus {
    /// Reads `manifest` and the `labels.txt` beside it.
    pub fn open(manifest: &Path, scene_config: SceneConfig) -> Result<Self> {
        let rows = read_manifest(manifest)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let labels = read_labels(&root.join("labels.txt"))?;
        if let Some(r) = rows.iter().find(|r| r.class >= labels.len()) {
            return Err(Error::Config(format!("{}: row {} has class {} of {}", manifest.display(), r.id, r.class, labels.len())));
        }
        Ok(Self { root, rows, labels, scene_config })
    }

    /// Rows of one fold, in manifest order.
    pub fn fold(&self, fold: Fold) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| r.fold == fold).collect()
    }

    fn audio(&self, row: &ManifestRow, src: &Source) -> Result<Option<Vec<f64>>> {
        match src {
            Source::Seed(_) => Ok(None),
            Source::Path(p) => {
                let path = self.root.join(p);
                read_wav(&path).map(Some).map_err(|e| match e {
                    Error::Missing { path, .. } => {
                        Error::Config(format!("row {}: audio file {} does not exist", row.id, path.display()))
                    }
                    other => other,
                })
            }
        }
    }

    pub fn scene(&self, row: &ManifestRow) -> Result<Scene> {
        let u = self.audio(row, &row.playback)?;
        let s = self.audio(row, &row.keyword)?;
        let audio = RowAudio { playback: u.as_deref(), keyword: s.as_deref() };
        Ok(scene_from_row(row, &self.labels, audio, &self.scene_config)?)
    }

    pub fn scenes<E: Executor>(&self, fold: Fold, exec: &E) -> Result<Vec<Scene>> {
        let rows = self.fold(fold);
        exec.map(rows.len(), |i| self.scene(rows[i])).into_iter().collect()
    }

    /// Playback-free classifier examples of a fold.
    pub fn examples<E: Executor>(&self, fold: Fold, exec: &E) -> Result<Vec<Example>> {
        let rows = self.fold(fold);
        exec.map(rows.len(), |i| {
            let scene = self.scene(rows[i])?;
            Ok(Example { x: clean_example(&scene), class: scene.class })
        })
        .into_iter()
        .collect()
    }
}

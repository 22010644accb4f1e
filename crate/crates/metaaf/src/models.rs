//! Model descriptions and training state stored in checkpoints.

use metaaf_core::adam::{Adam, Plateau};
use metaaf_core::aec::{EchoCanceller, FilterConfig};
use metaaf_core::kws::{Kws, KwsConfig};
use metaaf_core::meta::MetaAec;
use metaaf_core::optimizer::{MetaOptimizer, OptimizerConfig};
use metaaf_core::params::ParamSet;
use metaaf_core::train::TrainState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const KIND_KWS: &str = "kws";
pub const KIND_META: &str = "meta";

/// A classifier with its parameters and label vocabulary.
pub struct KwsModel {
    pub kws: Kws,
    pub params: ParamSet,
    pub labels: Vec<String>,
}

pub struct MetaModel {
    pub model: MetaAec,
    pub params: ParamSet,
}

pub fn build_meta(filter: FilterConfig, hidden: usize, group_size: usize, group_hop: usize) -> Result<MetaAec> {
    let aec = EchoCanceller::new(filter)?;
    let opt = MetaOptimizer::new(OptimizerConfig {
        group_size,
        group_hop,
        hidden,
        blocks: filter.blocks,
        bins: filter.bins(),
    })?;
    Ok(MetaAec::new(aec, opt)?)
}

/// Deterministic initial parameters for a model kind.
pub fn seeded_rng(seed: u64, kind: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ metaaf_core::scene::fnv1a(kind.as_bytes()))
}

fn check_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    let found = ck.require("kind")?;
    if found != kind {
        return Err(Error::Config(format!("expected a {kind} checkpoint, found {found}")));
    }
    Ok(())
}

impl KwsModel {
    pub fn describe(&self, ck: &mut Checkpoint, prefix: &str) {
        let c = self.kws.config();
        ck.set("kind", KIND_KWS);
        ck.set("kws.classes", c.classes);
        ck.set("kws.trunk", c.trunk);
        ck.set("kws.inner", c.inner);
        ck.set("kws.kernel", c.kernel);
        ck.set("kws.dilations", c.dilations.map(|d| d.to_string()).join(","));
        ck.set("labels", self.labels.join("\n"));
        ck.push_params(prefix, &self.params);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.describe(&mut ck, "");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_kind(ck, KIND_KWS)?;
        let kws = Self::architecture(ck)?;
        let params = ck.params("", &kws.init_params(&mut ChaCha8Rng::seed_from_u64(0)))?;
        let labels: Vec<String> = ck.require("labels")?.split('\n').map(String::from).collect();
        if labels.len() != kws.config().classes {
            return Err(Error::Config(format!("{} labels for {} classes", labels.len(), kws.config().classes)));
        }
        Ok(Self { kws, params, labels })
    }

    pub fn architecture(ck: &Checkpoint) -> Result<Kws> {
        let dil: Vec<usize> = ck
            .require("kws.dilations")?
            .split(',')
            .map(|d| d.parse().map_err(|_| Error::Config(format!("bad dilation {d:?}"))))
            .collect::<Result<_>>()?;
        let dilations: [usize; 3] =
            dil.try_into().map_err(|_| Error::Config("classifier checkpoints need three dilations".into()))?;
        Ok(Kws::new(KwsConfig {
            classes: ck.parse("kws.classes")?,
            trunk: ck.parse("kws.trunk")?,
            inner: ck.parse("kws.inner")?,
            kernel: ck.parse("kws.kernel")?,
            dilations,
        })?)
    }
}

impl MetaModel {
    pub fn describe(model: &MetaAec, ck: &mut Checkpoint) {
        let f = model.aec().config();
        let o = model.optimizer().config();
        ck.set("kind", KIND_META);
        ck.set("filter.window", f.window);
        ck.set("filter.blocks", f.blocks);
        ck.set("filter.constrain_gradient", f.constrain_gradient);
        ck.set("opt.hidden", o.hidden);
        ck.set("opt.group_size", o.group_size);
        ck.set("opt.group_hop", o.group_hop);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        Self::describe(&self.model, &mut ck);
        ck.push_params("", &self.params);
        ck
    }

    pub fn architecture(ck: &Checkpoint) -> Result<MetaAec> {
        check_kind(ck, KIND_META)?;
        let filter = FilterConfig {
            window: ck.parse("filter.window")?,
            blocks: ck.parse("filter.blocks")?,
            constrain_gradient: ck.parse("filter.constrain_gradient")?,
        };
        build_meta(filter, ck.parse("opt.hidden")?, ck.parse("opt.group_size")?, ck.parse("opt.group_hop")?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Self::architecture(ck)?;
        let params = ck.params("", &model.optimizer().init_params(&mut ChaCha8Rng::seed_from_u64(0)))?;
        model.optimizer().check_params(&params)?;
        Ok(Self { model, params })
    }
}

/// Stores the full resumable state under `state.`.
pub fn write_state(ck: &mut Checkpoint, st: &TrainState) {
    ck.set("state.epoch", st.epoch);
    ck.set("state.groups", st.params.len());
    ck.set("state.best_epoch", st.best_epoch);
    ck.set("state.stopped", st.stopped);
    let pl = &st.plateau;
    ck.set("state.plateau.lr_patience", pl.lr_patience);
    ck.set("state.plateau.stop_patience", pl.stop_patience);
    ck.set("state.plateau.stale", pl.stale);
    ck.set("state.plateau.since_cut", pl.since_cut);
    ck.set("state.plateau.higher_is_better", pl.higher_is_better);
    if let Some(b) = pl.best {
        ck.set("state.plateau.best", b);
    }
    for (g, p) in st.params.iter().enumerate() {
        ck.push_params(&format!("state.g{g}."), p);
        ck.push_params(&format!("state.best{g}."), &st.best[g]);
        let a = &st.adam[g];
        ck.set(&format!("state.lr{g}"), st.lrs[g]);
        ck.set(&format!("state.adam{g}.t"), a.t);
        ck.set(&format!("state.adam{g}.beta1"), a.beta1);
        ck.set(&format!("state.adam{g}.beta2"), a.beta2);
        ck.set(&format!("state.adam{g}.eps"), a.eps);
        ck.push_vector(&format!("state.adam{g}.m"), &a.m);
        ck.push_vector(&format!("state.adam{g}.v"), &a.v);
    }
}

/// Reads the state written by [`write_state`]; `layouts` gives the
/// parameter layout of each group.
pub fn read_state(ck: &Checkpoint, layouts: &[&ParamSet]) -> Result<TrainState> {
    let groups: usize = ck.parse("state.groups")?;
    if groups != layouts.len() {
        return Err(Error::Config(format!("checkpoint holds {groups} parameter groups, run needs {}", layouts.len())));
    }
    let mut st = TrainState {
        epoch: ck.parse("state.epoch")?,
        params: Vec::new(),
        adam: Vec::new(),
        lrs: Vec::new(),
        plateau: Plateau {
            lr_patience: ck.parse("state.plateau.lr_patience")?,
            stop_patience: ck.parse("state.plateau.stop_patience")?,
            best: ck.get("state.plateau.best").map(|_| ck.parse("state.plateau.best")).transpose()?,
            stale: ck.parse("state.plateau.stale")?,
            since_cut: ck.parse("state.plateau.since_cut")?,
            higher_is_better: ck.parse("state.plateau.higher_is_better")?,
        },
        best: Vec::new(),
        best_epoch: ck.parse("state.best_epoch")?,
        stopped: ck.parse("state.stopped")?,
    };
    for (g, like) in layouts.iter().enumerate() {
        st.params.push(ck.params(&format!("state.g{g}."), like)?);
        st.best.push(ck.params(&format!("state.best{g}."), like)?);
        st.lrs.push(ck.parse(&format!("state.lr{g}"))?);
        let m = ck.array(&format!("state.adam{g}.m"))?.data.clone();
        let v = ck.array(&format!("state.adam{g}.v"))?.data.clone();
        if m.len() != like.flat_len() || v.len() != like.flat_len() {
            return Err(Error::Config(format!("optimizer moments of group {g} do not match the model")));
        }
        st.adam.push(Adam {
            beta1: ck.parse(&format!("state.adam{g}.beta1"))?,
            beta2: ck.parse(&format!("state.adam{g}.beta2"))?,
            eps: ck.parse(&format!("state.adam{g}.eps"))?,
            t: ck.parse(&format!("state.adam{g}.t"))?,
            m,
            v,
        });
    }
    Ok(st)
}

use metaaf_core::exec::Sequential;
use metaaf_core::kws::{Kws, KwsConfig};
use metaaf_core::metrics::ConfusionMatrix;
use metaaf_core::params::ParamSet;
use metaaf_core::scene::{clean_example, scene_from_row, toy_manifest, Fold, RowAudio, SceneConfig, ToyPreset};
use metaaf_core::train::{train_kws, Example, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn examples() -> (Vec<Example>, Vec<Example>) {
    let labels: Vec<String> = ["rise", "fall"].map(String::from).to_vec();
    let preset = ToyPreset { split: (0.5, 0.5), ..ToyPreset::new(400, 2, 21) };
    let cfg = SceneConfig::for_taps(128);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for row in toy_manifest(&preset, &labels).unwrap() {
        let scene = scene_from_row(&row, &labels, RowAudio { playback: None, keyword: None }, &cfg).unwrap();
        let ex = Example { x: clean_example(&scene), class: scene.class };
        match row.fold {
            Fold::Train => train.push(ex),
            _ => val.push(ex),
        }
    }
    (train, val)
}

fn scores(kws: &Kws, params: &ParamSet, val: &[Example]) -> (f64, f64) {
    let mut cm = ConfusionMatrix::new(2);
    for e in val {
        cm.add(e.class, kws.predict(params, &e.x).unwrap().predicted).unwrap();
    }
    cm.f1_scores().unwrap()
}

fn fit(train: &[Example], val: &[Example]) -> (f64, f64) {
    let kws = Kws::new(KwsConfig::toy(2)).unwrap();
    let init = kws.init_params(&mut ChaCha8Rng::seed_from_u64(5));
    let cfg = TrainConfig { batch_size: 32, max_epochs: 100, ..TrainConfig::kws(5) };
    let out = train_kws(&kws, init, train, val, &cfg, None, &Sequential, &mut |_| {}).unwrap();
    scores(&kws, &out.best[0], val)
}

#[test]
fn two_word_classifier_reaches_high_f1() {
    let (train, val) = examples();
    assert_eq!((train.len(), val.len()), (200, 200));
    let (macro_f1, _) = fit(&train, &val);
    assert!(macro_f1 >= 0.95, "{macro_f1}");
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let (mut train, val) = examples();
    // Within each true class, half the examples get each label, so the
    // shuffled labels carry no class information at all.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth: Vec<usize> = train.iter().map(|e| e.class).collect();
    for c in 0..2 {
        let mut idx: Vec<usize> = (0..train.len()).filter(|&i| truth[i] == c).collect();
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        for (k, &i) in idx.iter().enumerate() {
            train[i].class = usize::from(k < half);
        }
    }
    // Selection runs on a shuffled-label slice; the final parameters are scored.
    let kws = Kws::new(KwsConfig::toy(2)).unwrap();
    let init = kws.init_params(&mut ChaCha8Rng::seed_from_u64(5));
    let cfg = TrainConfig { batch_size: 32, max_epochs: 100, ..TrainConfig::kws(5) };
    let out = train_kws(&kws, init, &train, &train[..40], &cfg, None, &Sequential, &mut |_| {}).unwrap();
    let (macro_f1, micro_f1) = scores(&kws, &out.last.params[0], &val);
    assert!((micro_f1 - 0.5).abs() <= 0.1, "accuracy {micro_f1} (macro {macro_f1})");
}

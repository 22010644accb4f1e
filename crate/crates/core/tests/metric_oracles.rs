use metaaf_core::metrics::{paired_permutation_test, ConfusionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// F1 of one class counted directly from labelled samples.
fn class_f1(samples: &[(usize, usize)], c: usize) -> f64 {
    let tp = samples.iter().filter(|&&(r, p)| r == c && p == c).count();
    let fp = samples.iter().filter(|&&(r, p)| r != c && p == c).count();
    let fneg = samples.iter().filter(|&&(r, p)| r == c && p != c).count();
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

#[test]
fn f1_matches_brute_force_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..1000 {
        let classes = rng.gen_range(2..7);
        let n = rng.gen_range(1..60);
        // Some classes never occur in the reference.
        let absent = rng.gen_range(0..classes);
        let samples: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let mut r = rng.gen_range(0..classes);
                if r == absent && classes > 2 && rng.gen_bool(0.8) {
                    r = (r + 1) % classes;
                }
                (r, rng.gen_range(0..classes))
            })
            .collect();
        let mut cm = ConfusionMatrix::new(classes);
        for &(r, p) in &samples {
            cm.add(r, p).unwrap();
        }
        let present: Vec<usize> = (0..classes).filter(|&c| samples.iter().any(|s| s.0 == c)).collect();
        let macro_oracle = present.iter().map(|&c| class_f1(&samples, c)).sum::<f64>() / present.len() as f64;
        let micro_oracle = samples.iter().filter(|s| s.0 == s.1).count() as f64 / n as f64;
        let (ma, mi) = cm.f1_scores().unwrap();
        assert!((ma - macro_oracle).abs() <= 1e-15, "trial {trial}: {ma} vs {macro_oracle}");
        assert_eq!(mi, micro_oracle, "trial {trial}");
        for (c, f) in cm.per_class_f1().iter().enumerate() {
            assert!((f - class_f1(&samples, c)).abs() <= 1e-15);
        }
    }
}

/// Two-sided p-value by swapping every subset of scene pairs.
fn exhaustive_p(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len();
    let stat = |swap: u32| -> i64 {
        (0..n)
            .map(|i| {
                let (x, y) = if swap >> i & 1 == 1 { (b[i], a[i]) } else { (a[i], b[i]) };
                x as i64 - y as i64
            })
            .sum::<i64>()
            .abs()
    };
    let observed = stat(0);
    let hits = (0..1u32 << n).filter(|&s| stat(s) >= observed).count();
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn permutation_test_matches_enumeration_on_five_scenes() {
    for case in 0..1024u32 {
        let a: Vec<bool> = (0..5).map(|i| case >> i & 1 == 1).collect();
        let b: Vec<bool> = (0..5).map(|i| case >> (i + 5) & 1 == 1).collect();
        let p = paired_permutation_test(&a, &b, 10_000, 7).unwrap();
        assert_eq!(p, exhaustive_p(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn sampled_permutation_test_tracks_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<bool> = (0..14).map(|_| rng.gen_bool(0.7)).collect();
    let b: Vec<bool> = (0..14).map(|_| rng.gen_bool(0.4)).collect();
    let exact = exhaustive_p(&a, &b);
    let sampled = paired_permutation_test(&a, &b, 5_000, 1).unwrap();
    assert!((exact - sampled).abs() < 0.03, "{exact} vs {sampled}");
}

use std::collections::BTreeMap;

use counter_core::corpus::{build_x, build_y, item_aspect_score, split, user_aspect_score};
use counter_core::synth::generate;
use counter_core::SynthSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn user_oracle(t: f64, n: f64) -> f64 {
    1.0 + (n - 1.0) * (2.0 * logistic(t) - 1.0)
}

fn item_oracle(t: f64, s: f64, n: f64) -> f64 {
    1.0 + (n - 1.0) * logistic(t * s)
}

#[test]
fn scores_match_scalar_formula_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let t = rng.gen_range(1..=30) as f64;
        let s = rng.gen_range(-1.0..=1.0);
        let n = rng.gen_range(2..=10u32);
        let nf = f64::from(n);
        let x = user_aspect_score(t, n);
        let y = item_aspect_score(t, s, n);
        assert!((x - user_oracle(t, nf)).abs() < 1e-9, "t={t} n={n}");
        assert!((y - item_oracle(t, s, nf)).abs() < 1e-9, "t={t} s={s} n={n}");
        assert!(x > 1.0 && x < nf);
        assert!(y > 1.0 && y < nf);
    }
}

#[test]
fn spot_values() {
    assert!((user_aspect_score(1.0, 5) - 2.848469).abs() < 1e-6);
    assert_eq!(item_aspect_score(3.0, 0.0, 5), 3.0);
    assert_eq!(item_aspect_score(0.0, 0.7, 5), 3.0);
}

#[test]
fn matrices_match_independent_aggregation() {
    let spec = SynthSpec {
        m: 30,
        n: 60,
        r: 6,
        density: 0.15,
        noise: 0.3,
        seed: 5,
        ..SynthSpec::default()
    };
    let (corpus, _) = generate(&spec).unwrap();
    let s = split(&corpus);
    let x = build_x(&corpus, &s);
    let y = build_y(&corpus, &s);
    let n = f64::from(corpus.scale);

    let mut user_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut item_mentions: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for rec in &corpus.records {
        if !s.train(rec.user).contains(&rec.item) {
            continue;
        }
        for m in &rec.mentions {
            *user_counts.entry((rec.user, m.aspect)).or_default() += 1;
            item_mentions.entry((rec.item, m.aspect)).or_default().push(m.sentiment);
        }
    }

    for u in 0..corpus.m() {
        for k in 0..corpus.r() {
            let expected = user_counts
                .get(&(u, k))
                .map_or(0.0, |&t| user_oracle(t as f64, n));
            assert!((x.get(u, k) - expected).abs() < 1e-9, "X[{u},{k}]");
        }
    }
    for j in 0..corpus.n() {
        for k in 0..corpus.r() {
            let expected = item_mentions.get(&(j, k)).map_or(0.0, |v| {
                let t = v.len() as f64;
                item_oracle(t, v.iter().sum::<f64>() / t, n)
            });
            assert!((y.get(j, k) - expected).abs() < 1e-9, "Y[{j},{k}]");
        }
    }
}

//! Frequency tests for the sampling paths. Critical values are for the 0.999
//! quantile, so a correct sampler fails about once per thousand seeds; the
//! seeds are fixed, so the outcome is reproducible.

use mrdg::config::RunConfig;
use mrdg::dpp::{PolicyDescriptor, PolicyPool, SchemeId};
use mrdg::learner::{epsilon_at, select_action};
use mrdg::rng;
use mrdg::substrates::{MatrixGame, Observation, Pairing, PayoffMatrix, ScriptedKind, ScriptedPolicy, SubstrateSpec};

fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = n as f64 * p;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn pool_sampling_is_uniform_over_stored_entries() {
    // Slot sizes 1, 2 and 4: seven entries, each drawn with probability 1/7.
    let mut pool = PolicyPool::new(None);
    let mut id = 0;
    for (scheme, size) in [(0, 1), (1, 2), (2, 4)] {
        for _ in 0..size {
            pool.store(&SchemeId::new("g", scheme), vec![PolicyDescriptor::Scripted(ScriptedKind::Always(id))]);
            id += 1;
        }
    }
    let mut r = rng::stream(1, "chi-square");
    let mut counts = [0usize; 7];
    for _ in 0..70_000 {
        let (_, joint) = pool.sample_scheme("g", &mut r).unwrap();
        let PolicyDescriptor::Scripted(ScriptedKind::Always(i)) = joint[0] else { unreachable!() };
        counts[i] += 1;
    }
    let stat = chi_square(&counts, &[1.0 / 7.0; 7]);
    // 6 degrees of freedom.
    assert!(stat < 22.458, "chi-square {stat} for counts {counts:?}");
}

#[test]
fn substrate_sampling_is_uniform_over_non_empty_substrates() {
    let mut pool = PolicyPool::new(None);
    for (g, n) in [("a", 1), ("b", 5), ("c", 2)] {
        for _ in 0..n {
            pool.store(&SchemeId::new(g, 0), vec![PolicyDescriptor::Scripted(ScriptedKind::TitForTat)]);
        }
    }
    let mut r = rng::stream(2, "chi-square");
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        let s = pool.sample_substrate(&mut r).unwrap();
        counts[(s.as_bytes()[0] - b'a') as usize] += 1;
    }
    // 2 degrees of freedom.
    let stat = chi_square(&counts, &[1.0 / 3.0; 3]);
    assert!(stat < 13.816, "chi-square {stat} for counts {counts:?}");
}

#[test]
fn full_exploration_picks_actions_uniformly() {
    let q = [5.0, -1.0, 0.5, 2.0];
    let mut r = rng::stream(3, "epsilon");
    let mut counts = [0usize; 4];
    for _ in 0..40_000 {
        counts[select_action(&q, 1.0, &mut r)] += 1;
    }
    // 3 degrees of freedom.
    let stat = chi_square(&counts, &[0.25; 4]);
    assert!(stat < 16.266, "chi-square {stat} for counts {counts:?}");
}

#[test]
fn partial_exploration_mixes_greedy_and_uniform() {
    let q = [0.0, 3.0, 1.0];
    let eps = 0.3;
    let mut r = rng::stream(4, "epsilon");
    let mut counts = [0usize; 3];
    for _ in 0..30_000 {
        counts[select_action(&q, eps, &mut r)] += 1;
    }
    let probs = [eps / 3.0, 1.0 - eps + eps / 3.0, eps / 3.0];
    let stat = chi_square(&counts, &probs);
    assert!(stat < 13.816, "chi-square {stat} for counts {counts:?}");
}

#[test]
fn random_partner_matches_its_distribution() {
    let spec = SubstrateSpec::new(PayoffMatrix::pure_coordination(), 2, 1, 1, Pairing::Fixed).unwrap();
    let (_, obs) = MatrixGame::reset(&spec, 0).unwrap();
    let probs = [0.2, 0.5, 0.3];
    let mut p = ScriptedPolicy::new(ScriptedKind::Random(probs.to_vec()), 3).unwrap();
    let mut r = rng::stream(5, "partner");
    let mut counts = [0usize; 3];
    let o: &Observation = &obs[1];
    for _ in 0..30_000 {
        counts[p.act(o, &mut r)] += 1;
    }
    let stat = chi_square(&counts, &probs);
    assert!(stat < 13.816, "chi-square {stat} for counts {counts:?}");
}

#[test]
fn epsilon_schedule_is_linear_then_flat() {
    let at = |s| epsilon_at(s, 1000, 1.0, 0.05, 0.2);
    assert_eq!(at(0), 1.0);
    assert!((at(100) - 0.525).abs() < 1e-12);
    assert_eq!(at(200), 0.05);
    assert_eq!(at(999), 0.05);
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

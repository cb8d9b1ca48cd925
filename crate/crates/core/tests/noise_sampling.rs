#[path = "oracles/stats.rs"]
mod stats;

use nngrams::corpus::{TokenizedSentence, Vocabulary, WordId};
use nngrams::lattice::Lattice;
use nngrams::ngram::{count_ngrams, KatzLM};
use nngrams::noise::{build_speech_noise, text_noise, NoiseProvider, NoiseRequest, SpeechNoise, TextNoise};
use nngrams::synthetic::random_lattice;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_lm() -> KatzLM {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sents: Vec<_> = (0..400)
        .map(|_| {
            let content: Vec<WordId> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(3..10)).collect();
            TokenizedSentence::from_content(&content).unwrap()
        })
        .collect();
    let store = count_ngrams(&sents, 3).unwrap();
    KatzLM::estimate(&store, 10, 3, 5).unwrap()
}

fn toy_histories() -> Vec<Vec<WordId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut out = vec![vec![0, 0], vec![1, 4]];
    while out.len() < 10 {
        out.push(vec![rng.gen_range(3..10), rng.gen_range(0..10)]);
    }
    out
}

#[test]
fn text_noise_matches_the_katz_conditional() {
    let lm = toy_lm();
    for h in &toy_histories() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        let draws = text_noise(&lm, h, 100_000, &mut rng);
        let probs = lm.distribution(h);
        let mut counts = vec![0u64; probs.len()];
        for d in &draws {
            counts[d.word as usize] += 1;
            assert!((d.log_prob - probs[d.word as usize].ln()).abs() < 1e-12);
        }
        let p = stats::chi_square_p(&counts, &probs);
        assert!(p > 0.01, "history {h:?}: p = {p}");
    }
}

#[test]
fn fixed_seeds_give_identical_streams() {
    let lm = toy_lm();
    let draw = |seed| {
        let mut noise = TextNoise::new(&lm);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        toy_histories()
            .iter()
            .map(|h| {
                let req = NoiseRequest {
                    sentence: 0,
                    position: 1,
                    target: 3,
                    history: h,
                };
                noise.draw(&req, 50, &mut rng).unwrap().unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

#[test]
fn speech_noise_only_uses_included_positions() {
    let vocab = Vocabulary::from_words(["a", "b", "c", "d", "e", "f"]);
    let lattices: Vec<(String, Lattice)> = (0..40)
        .map(|s| (format!("u{s}"), random_lattice(&mut ChaCha8Rng::seed_from_u64(s), 50)))
        .collect();
    let table = build_speech_noise(&lattices, 0.0).unwrap();
    assert!(!table.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<String> = lattices.iter().map(|(u, _)| u.clone()).collect();
    let mut provider = SpeechNoise::new(&table, &vocab, ids);
    for (s, (utt, l)) in lattices.iter().enumerate() {
        let best = l.one_best().unwrap();
        let pinched = l.pinch(&best).unwrap();
        for (pos, p) in pinched.positions.iter().enumerate() {
            let entry = table.get(utt, pos);
            assert_eq!(entry.is_some(), !p.usable().is_empty(), "{utt} {pos}");
            let target = vocab.id_or_unk(&p.word);
            let req = NoiseRequest {
                sentence: s,
                position: pos + 1,
                target,
                history: &[],
            };
            let draw = provider.draw(&req, 20, &mut rng).unwrap();
            match (entry, draw) {
                (None, None) => {}
                (Some(e), Some(d)) => {
                    let allowed: Vec<WordId> = e.alternatives.iter().map(|a| vocab.id_or_unk(&a.0)).collect();
                    assert!(d.samples.iter().all(|x| x.word != target && allowed.contains(&x.word)));
                    let mass: f64 = e.alternatives.iter().map(|a| a.1).sum();
                    assert!((mass - 1.0).abs() < 1e-9);
                }
                (Some(e), None) => {
                    // Every alternative maps onto the target.
                    assert!(e.alternatives.iter().all(|a| vocab.id_or_unk(&a.0) == target));
                }
                (None, Some(_)) => panic!("{utt} {pos}: noise from an excluded position"),
            }
        }
        // The sentence-end token has no lattice position.
        let end = NoiseRequest {
            sentence: s,
            position: best.len() + 1,
            target: 1,
            history: &[],
        };
        assert!(provider.draw(&end, 5, &mut rng).unwrap().is_none());
    }
}


/// Over many seeds the test above rejects at about its nominal rate.
#[test]
fn chi_square_rejection_rate_is_nominal() {
    let lm = toy_lm();
    let h = &toy_histories()[3];
    let probs = lm.distribution(h);
    let mut rejected = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; probs.len()];
        for d in text_noise(&lm, h, 20_000, &mut rng) {
            counts[d.word as usize] += 1;
        }
        if stats::chi_square_p(&counts, &probs) < 0.05 {
            rejected += 1;
        }
    }
    // Binomial(200, 0.05) stays below 22 with overwhelming probability.
    assert!(rejected < 22, "{rejected} of 200 rejected");
}

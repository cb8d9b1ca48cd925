//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any fails.

#[allow(dead_code)]
#[path = "../../core/tests/oracles/katz.rs"]
mod katz_oracle;
#[allow(dead_code)]
#[path = "../../core/tests/oracles/lattice.rs"]
mod lattice_oracle;
#[allow(dead_code)]
#[path = "../../core/tests/oracles/nce.rs"]
mod nce_oracle;
#[allow(dead_code)]
#[path = "../../core/tests/oracles/neighbors.rs"]
mod neighbors_oracle;
#[allow(dead_code)]
#[path = "../../core/tests/oracles/stats.rs"]
mod stats;

use std::process::Command;
use std::time::{Duration, Instant};

use nngrams::corpus::{TokenizedSentence, Vocabulary, WordId};
use nngrams::lattice::Exclusion;
use nngrams::model::{rescale_count, InputMode, ModelConfig, ModelParams};
use nngrams::ngram::{count_ngrams, KatzLM};
use nngrams::noise::{text_noise, NoiseProvider, NoiseRequest, TextNoise};
use nngrams::rescore::{evaluate, wer, KatzScorer, RescoreConfig, RescoreModel, WerCounts};
use nngrams::synthetic::{corrupted_testset, example_lattice, nce_recovery, random_lattice, BigramGenerator, RecoveryConfig};
use nngrams::training::{gradient_check, nce_loss_and_grad, random_batch, random_tiny_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn param_count() -> Outcome {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/large.cfg");
    let out = Command::new(env!("CARGO_BIN_EXE_nngrams"))
        .args(["param-count", "--config", config])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), "param-count failed")?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let total: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("parameters "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or("no parameter line")?;
    ensure(total == 515_950_849.0, format!("got {total}"))?;
    ensure((total - 517e6).abs() / 517e6 <= 0.01, "not within 1% of 517M")?;
    Ok(format!("{total} parameters"))
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let config = random_tiny_config(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(config, seed).map_err(|e| e.to_string())?;
        for (name, t) in params.tensors_mut() {
            if name.ends_with("bias") {
                t.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
            }
        }
        let batch = random_batch(&config, 3, 2, &mut rng);
        let (_, grads) = nce_loss_and_grad(&params, &batch).map_err(|e| e.to_string())?;
        let (err, compared) = nce_oracle::max_relative_error(&params, &batch, &grads, 1e-5);
        ensure(compared > 0, format!("seed {seed}: nothing compared"))?;
        let lib = gradient_check(&config, seed, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(err).max(lib.max_rel_error);
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn recovery() -> Outcome {
    let generator = BigramGenerator::five_word();
    let run = |mode: InputMode, f: usize| -> Result<f64, String> {
        let mut config = RecoveryConfig {
            input_mode: mode,
            ..RecoveryConfig::default()
        };
        config.train.noise_samples = f;
        config.train.seed = 1;
        Ok(nce_recovery(&generator, &config, |_| {}).map_err(|e| e.to_string())?.spearman)
    };
    let mut parts = Vec::new();
    for mode in [InputMode::CountsOnly, InputMode::Full] {
        let many = run(mode, 25)?;
        let one = run(mode, 1)?;
        parts.push(format!("{mode}: f=25 {many:.4} f=1 {one:.4}"));
        ensure(many >= 0.9, format!("{mode} f=25 spearman {many:.4}"))?;
        ensure(many >= one, format!("{mode}: f=25 {many:.4} below f=1 {one:.4}"))?;
    }
    Ok(parts.join(", "))
}

fn katz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let vocab = rng.gen_range(4..=8usize);
        let mut corpus: Vec<Vec<WordId>> = Vec::new();
        let mut tokens = 0;
        loop {
            let len = rng.gen_range(1..=6);
            if tokens + len + 2 > 50 {
                break;
            }
            tokens += len + 2;
            corpus.push((0..len).map(|_| rng.gen_range(2..vocab as WordId)).collect());
        }
        let sents: Vec<_> = corpus.iter().map(|s| TokenizedSentence::from_content(s).unwrap()).collect();
        for order in [2, 3] {
            let store = count_ngrams(&sents, order).map_err(|e| e.to_string())?;
            let lm = KatzLM::estimate(&store, vocab, order, 5).map_err(|e| e.to_string())?;
            let oracle = katz_oracle::KatzOracle::new(&corpus, vocab, order, 5);
            let mut hists: Vec<Vec<WordId>> = vec![Vec::new()];
            for _ in 1..order {
                hists = hists
                    .into_iter()
                    .flat_map(|h| (0..vocab as WordId).map(move |w| [h.clone(), vec![w]].concat()))
                    .collect();
            }
            for h in hists {
                let nearest_first: Vec<WordId> = h.iter().rev().copied().collect();
                let mut sum = 0.0;
                for w in 0..vocab as WordId {
                    let p = lm.cond_prob(w, &nearest_first);
                    worst = worst.max((p - oracle.prob(w, &h)).abs());
                    sum += p;
                }
                worst_sum = worst_sum.max((sum - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-9, format!("max conditional error {worst:e}"))?;
    ensure(worst_sum <= 1e-6, format!("max sum error {worst_sum:e}"))?;
    Ok(format!("max error {worst:.1e}, max sum error {worst_sum:.1e}"))
}

fn rescaling() -> Outcome {
    let e10 = rescale_count(10f64.exp().round() as u64);
    ensure(rescale_count(0) == -1.0, "rescale(0)")?;
    ensure(rescale_count(1) == 0.0, "rescale(1)")?;
    // e^10 is not an integer; the nearest count is off by at most 0.5.
    ensure((e10 - 1.0).abs() < 1e-5, format!("rescale(e^10) = {e10}"))?;
    Ok(format!("rescale(round(e^10)) = {e10:.8}"))
}

fn pinching() -> Outcome {
    let l = example_lattice();
    let best = l.one_best().map_err(|e| e.to_string())?;
    let pinched = l.pinch(&best).map_err(|e| e.to_string())?;
    let words: Vec<&str> = pinched.positions.iter().map(|p| p.word.as_str()).collect();
    ensure(words == ["Hello", "how", "are", "you"], format!("1-best {words:?}"))?;
    let p = &pinched.positions;
    ensure(p[0].excluded == Some(Exclusion::MultiwordAlignment), "Hello not multiword_alignment")?;
    ensure(p[2].excluded == Some(Exclusion::NoConfusions), "are not no_confusions")?;
    ensure(p[3].excluded == Some(Exclusion::NoConfusions), "you not no_confusions")?;
    let how = &p[1];
    ensure(how.excluded.is_none() && !how.alternatives.is_empty(), "how has no confusions")?;
    let total = how.best_posterior + how.alternatives.iter().map(|a| a.1).sum::<f64>();
    ensure((total - 1.0).abs() < 1e-6, format!("how segment sums to {total}"))?;
    let alts: Vec<String> = how.alternatives.iter().map(|a| a.0.join(" ")).collect();
    Ok(format!("how -> {alts:?}, segment mass {total:.9}"))
}

fn sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sents: Vec<_> = (0..400)
        .map(|_| {
            let content: Vec<WordId> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(3..10)).collect();
            TokenizedSentence::from_content(&content).unwrap()
        })
        .collect();
    let store = count_ngrams(&sents, 3).map_err(|e| e.to_string())?;
    let lm = KatzLM::estimate(&store, 10, 3, 5).map_err(|e| e.to_string())?;
    let mut histories = vec![vec![0, 0], vec![1, 4]];
    while histories.len() < 10 {
        histories.push(vec![rng.gen_range(3..10), rng.gen_range(0..10)]);
    }
    let mut min_p = 1.0f64;
    for h in &histories {
        let mut draw_rng = ChaCha8Rng::seed_from_u64(1000);
        let probs = lm.distribution(h);
        let mut counts = vec![0u64; probs.len()];
        for d in text_noise(&lm, h, 100_000, &mut draw_rng) {
            counts[d.word as usize] += 1;
        }
        min_p = min_p.min(stats::chi_square_p(&counts, &probs));
    }
    ensure(min_p > 0.01, format!("min p-value {min_p:.4}"))?;
    let stream = |seed: u64| -> Vec<u8> {
        let mut noise = TextNoise::new(&lm);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut bytes = Vec::new();
        for h in &histories {
            let req = NoiseRequest {
                sentence: 0,
                position: 1,
                target: 3,
                history: h,
            };
            let d = noise.draw(&req, 100, &mut r).unwrap().unwrap();
            for s in d.samples {
                bytes.extend(s.word.to_le_bytes());
                bytes.extend(s.log_prob.to_le_bytes());
            }
        }
        bytes
    };
    ensure(stream(77) == stream(77), "streams differ under one seed")?;
    ensure(stream(77) != stream(78), "streams ignore the seed")?;
    Ok(format!("min p-value {min_p:.4} over 10 histories"))
}

fn rescoring() -> Outcome {
    let generator = BigramGenerator::peaked(20, 0.8, 0.15, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let testset = corrupted_testset(&generator, 100, 10, 0.3, &mut rng);
    let train = generator.sample_corpus(20_000, &mut rng);
    let vocab: &Vocabulary = generator.vocab();
    let store = count_ngrams(&train, 2).map_err(|e| e.to_string())?;
    let lm = KatzLM::estimate(&store, vocab.len(), 2, 5).map_err(|e| e.to_string())?;
    let scorer = KatzScorer { lm: &lm, vocab };

    let mut first_pass = WerCounts::default();
    for u in &testset {
        first_pass.add(&wer(&u.reference, &u.nbest.as_ref().unwrap()[0].words));
    }
    let config = |weight| RescoreConfig {
        weight,
        model: RescoreModel::Katz,
        n: 150,
    };
    let zero = evaluate(&testset, &config(0.0), &scorer).map_err(|e| e.to_string())?.total;
    let half = evaluate(&testset, &config(0.5), &scorer).map_err(|e| e.to_string())?.total;
    ensure(zero == first_pass, format!("lambda=0 gives {} not {}", zero.summary_line(), first_pass.summary_line()))?;
    let (base, rescored) = (first_pass.rate().unwrap(), half.rate().unwrap());
    ensure(rescored < base, format!("WER {rescored:.2} not below first pass {base:.2}"))?;
    Ok(format!("first pass {base:.2}, lambda=0.5 {rescored:.2}"))
}

fn lattices() -> Outcome {
    for seed in 0..50 {
        let l = random_lattice(&mut ChaCha8Rng::seed_from_u64(seed), 100);
        for n in [1, 3, 10, 1000] {
            let got = l.n_best(n);
            let want = lattice_oracle::n_best(&l, n);
            ensure(got.len() == want.len(), format!("lattice {seed} n={n}: lengths differ"))?;
            for (g, (w, s)) in got.iter().zip(&want) {
                ensure(&g.words == w && (g.score - s).abs() < 1e-9, format!("lattice {seed} n={n}"))?;
            }
        }
        let mut rank = vec![0; l.num_nodes()];
        for (i, &v) in l.topo_order().iter().enumerate() {
            rank[v] = i;
        }
        let post = l.edge_posteriors();
        for cut in 1..l.num_nodes() {
            let mass: f64 = l
                .edges()
                .iter()
                .zip(&post)
                .filter(|(e, _)| rank[e.from] < cut && rank[e.to] >= cut)
                .map(|(_, p)| p)
                .sum();
            ensure((mass - 1.0).abs() < 1e-6, format!("lattice {seed} cut {cut}: {mass}"))?;
        }
    }
    Ok("50 lattices".into())
}

fn neighbors() -> Outcome {
    let config = ModelConfig {
        vocab_size: 50,
        embed_dim: 6,
        history: 1,
        count_order: 1,
        hidden_a: 2,
        hidden_b: 2,
        hidden_c: 2,
        input_mode: InputMode::EmbeddingsOnly,
    };
    for seed in 0..10 {
        let mut p = ModelParams::init(config, seed).map_err(|e| e.to_string())?;
        if seed % 2 == 1 {
            // Coarse values force exact distance ties.
            for (name, t) in p.tensors_mut() {
                if name == "embeddings" {
                    t.iter_mut().for_each(|v| *v = (*v * 4.0).round());
                }
            }
        }
        let table: Vec<f64> = p.tensors()[0].1.to_vec();
        for word in 0..50u32 {
            let got = p.nearest_neighbors(word, 10).map_err(|e| e.to_string())?;
            let want = neighbors_oracle::nearest(&table, 6, word as usize, 10);
            let same = got.iter().zip(&want).all(|(g, w)| g.0 as usize == w.0 && (g.1 - w.1).abs() < 1e-12);
            ensure(same && got.len() == want.len(), format!("seed {seed} word {word}"))?;
        }
    }
    Ok("10 tables x 50 queries".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1 parameter accounting", param_count, Duration::from_secs(1)),
        ("A2 gradient correctness", gradients, Duration::from_secs(30)),
        ("A3 NCE distribution recovery", recovery, Duration::from_secs(600)),
        ("A4 Katz oracle equivalence", katz, Duration::from_secs(60)),
        ("A5 count rescaling", rescaling, Duration::from_secs(1)),
        ("A6 lattice pinching", pinching, Duration::from_secs(1)),
        ("A7 sampler fidelity", sampler, Duration::from_secs(60)),
        ("A8 rescoring end-to-end", rescoring, Duration::from_secs(60)),
        ("A9 n-best and posterior oracles", lattices, Duration::from_secs(60)),
        ("A10 embedding neighbors", neighbors, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let started = Instant::now();
        let outcome = run();
        let took = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

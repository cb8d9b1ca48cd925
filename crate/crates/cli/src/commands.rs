use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nngrams::corpus::{read_corpus, TokenizedSentence, Vocabulary};
use nngrams::lattice::{nbest_to_text, Lattice};
use nngrams::model::{parameter_count, InputMode, ModelParams};
use nngrams::ngram::{count_ngrams, KatzLM, NGramStore};
use nngrams::noise::{build_speech_noise, text_noise, NoiseProvider, SpeechNoise, SpeechNoiseTable, TextNoise};
use nngrams::rescore::{self, evaluate, load_testset, parse_testset, KatzScorer, LmScorer, NnGramsScorer, RescoreModel};
use nngrams::synthetic::{nce_recovery, BigramGenerator, RecoveryConfig};
use nngrams::training::{gradient_check, random_tiny_config};

use crate::config::RunConfig;
use crate::{CliError, Common};

type Result<T> = std::result::Result<T, CliError>;

/// Parameter total reported for the large configuration.
const REPORTED_PARAMETERS: f64 = 517e6;
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_EPSILON: f64 = 1e-5;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got '{o}'")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(t) = common.threads {
        config.train.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::load(path)?)
}

fn load_arpa(path: &Path, vocab: &Vocabulary) -> Result<KatzLM> {
    Ok(KatzLM::from_arpa(&read(path)?, vocab)?)
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum vocabulary size including special tokens.
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
}

pub fn vocab(a: VocabArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let corpus = c.path(&a.corpus, "corpus")?;
    let vocab = Vocabulary::build(
        &corpus,
        a.max_size.unwrap_or(c.vocab_max_size),
        a.min_count.unwrap_or(c.vocab_min_count),
    )?;
    emit(&a.out.or_else(|| c.paths.get("vocab").cloned()), &vocab.to_text())
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Highest n-gram order; defaults to the larger of the Katz and count orders.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn count(a: CountArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let corpus = read_corpus(&c.path(&a.corpus, "corpus")?, &vocab)?;
    let order = a.order.unwrap_or(c.katz_order.max(c.model.count_order));
    let store = count_ngrams(&corpus, order)?;
    emit(&a.out.or_else(|| c.paths.get("counts").cloned()), &store.to_text())
}

#[derive(Subcommand, Debug)]
pub enum KatzAction {
    /// Estimate a Katz model from counts and write it as ARPA.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        gt_cutoff: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-read an ARPA model and write it back in canonical form.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arpa: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Natural-log probability of each sentence of a text file.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arpa: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn katz(action: KatzAction) -> Result<()> {
    match action {
        KatzAction::Train {
            common,
            counts,
            vocab,
            order,
            gt_cutoff,
            out,
        } => {
            let c = load_config(&common)?;
            let vocab = load_vocab(&c.path(&vocab, "vocab")?)?;
            let store = NGramStore::load(&c.path(&counts, "counts")?)?;
            let order = order.unwrap_or(c.katz_order.min(store.max_order()));
            let lm = KatzLM::estimate(&store, vocab.len(), order, gt_cutoff.unwrap_or(c.katz_gt_cutoff))?;
            emit(&out.or_else(|| c.paths.get("arpa").cloned()), &lm.to_arpa(&vocab)?)
        }
        KatzAction::Export { common, arpa, vocab, out } => {
            let c = load_config(&common)?;
            let vocab = load_vocab(&c.path(&vocab, "vocab")?)?;
            let lm = load_arpa(&c.path(&arpa, "arpa")?, &vocab)?;
            emit(&out, &lm.to_arpa(&vocab)?)
        }
        KatzAction::Score {
            common,
            arpa,
            vocab,
            text,
            out,
        } => {
            let c = load_config(&common)?;
            let vocab = load_vocab(&c.path(&vocab, "vocab")?)?;
            let lm = load_arpa(&c.path(&arpa, "arpa")?, &vocab)?;
            let scorer = KatzScorer { lm: &lm, vocab: &vocab };
            emit(&out, &score_lines(&read(&c.path(&text, "text")?)?, &scorer)?)
        }
    }
}

/// `<score>\t<sentence>` per line and a closing total.
fn score_lines(text: &str, scorer: &dyn LmScorer) -> Result<String> {
    let mut out = String::new();
    let mut total = 0.0;
    for line in text.lines() {
        let words: Vec<String> = line.split_whitespace().map(String::from).collect();
        let s = scorer.score_words(&words)?;
        total += s;
        let _ = writeln!(out, "{s}\t{}", words.join(" "));
    }
    let _ = writeln!(out, "total={total}");
    Ok(out)
}

#[derive(Args, Debug)]
pub struct NoiseTextArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    arpa: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// History words in text order, oldest first.
    #[arg(long, default_value = "")]
    history: String,
    /// Number of samples.
    #[arg(short = 'f', long, default_value_t = 25)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn noise_text(a: NoiseTextArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let seed = c.require_seed(a.seed)?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let lm = load_arpa(&c.path(&a.arpa, "arpa")?, &vocab)?;
    let history: Vec<_> = a.history.split_whitespace().rev().map(|w| vocab.id_or_unk(w)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for s in text_noise(&lm, &history, a.samples, &mut rng) {
        let _ = writeln!(out, "{}\t{}", vocab.word(s.word).unwrap_or("<unk>"), s.log_prob);
    }
    emit(&a.out, &out)
}

#[derive(Args, Debug)]
pub struct PinchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lattice: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn pinch(a: PinchArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let lattice = Lattice::load(&c.path(&a.lattice, "lattice")?)?;
    let best = lattice.one_best()?;
    emit(&a.out, &lattice.pinch(&best)?.to_text())
}

/// Lattice files of a directory as (utterance id, lattice), sorted by id.
fn load_lattice_dir(dir: &Path) -> Result<Vec<(String, Lattice)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lat"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, Lattice::load(&p)?))
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct NoiseSpeechArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of `<utt_id>.lat` files.
    #[arg(long)]
    lattices: Option<PathBuf>,
    /// Minimum 1-best confidence.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn noise_speech(a: NoiseSpeechArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let lattices = load_lattice_dir(&c.path(&a.lattices, "lattices")?)?;
    let threshold = a.threshold.unwrap_or(c.noise_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Validation("threshold must lie in [0, 1]".into()));
    }
    let table = build_speech_noise(&lattices, threshold)?;
    eprintln!(
        "lattices={} skipped_low_confidence={} positions={}",
        lattices.len(),
        table.skipped_lattices,
        table.len()
    );
    emit(&a.out.or_else(|| c.paths.get("speech_noise").cloned()), &table.to_text())
}

#[derive(Args, Debug)]
pub struct NbestArgs {
    #[command(flatten)]
    common: Common,
    /// A single lattice file.
    #[arg(long, conflicts_with = "lattices")]
    lattice: Option<PathBuf>,
    /// A directory of `<utt_id>.lat` files; `--out` is then a directory.
    #[arg(long)]
    lattices: Option<PathBuf>,
    #[arg(short = 'n', long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn nbest(a: NbestArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let n = a.n.unwrap_or(c.rescore.n);
    if n == 0 {
        return Err(CliError::Validation("n must be positive".into()));
    }
    if let Some(file) = &a.lattice {
        return emit(&a.out, &nbest_to_text(&Lattice::load(file)?.n_best(n)));
    }
    let dir = c.path(&a.lattices, "lattices")?;
    let out = a
        .out
        .or_else(|| c.paths.get("nbest_dir").cloned())
        .ok_or_else(|| CliError::Validation("missing --out directory".into()))?;
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    for (id, lattice) in load_lattice_dir(&dir)? {
        write_atomic(&out.join(format!("{id}.nbest")), nbest_to_text(&lattice.n_best(n)).as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training text, one sentence per line; with speech noise,
    /// `<utt_id>\t<1-best transcript>` lines.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Katz model for text noise.
    #[arg(long)]
    arpa: Option<PathBuf>,
    /// Speech-noise table; selects speech noise.
    #[arg(long)]
    speech_noise: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log destination.
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    c.train.seed = c.require_seed(a.seed)?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let store = NGramStore::load(&c.path(&a.counts, "counts")?)?;
    let corpus_path = c.path(&a.corpus, "corpus")?;
    let out = c.path(&a.out, "model")?;
    c.model.vocab_size = vocab.len();
    c.model.validate()?;

    let speech = a.speech_noise.clone().or_else(|| c.paths.get("speech_noise").cloned());
    let table;
    let lm;
    let (sentences, mut provider): (Vec<TokenizedSentence>, Box<dyn NoiseProvider + '_>) = match speech {
        Some(path) => {
            table = SpeechNoiseTable::load(&path)?;
            let (ids, sentences): (Vec<String>, Vec<TokenizedSentence>) = parse_testset(&read(&corpus_path)?)?
                .into_iter()
                .map(|(id, words)| (id, vocab.tokenize(&words.join(" "))))
                .unzip();
            (sentences, Box::new(SpeechNoise::new(&table, &vocab, ids)))
        }
        None => {
            lm = load_arpa(&c.path(&a.arpa, "arpa")?, &vocab)?;
            (read_corpus(&corpus_path, &vocab)?, Box::new(TextNoise::new(&lm)))
        }
    };
    let mut log_text = String::new();
    let (params, log) = nngrams::training::train(&c.train, c.model, &sentences, &store, provider.as_mut(), |entry| {
        eprintln!("{entry}");
        let _ = writeln!(log_text, "{entry}");
    })?;
    let _ = writeln!(
        log_text,
        "steps={} skipped_tokens={} converged={}",
        log.steps, log.skipped_tokens, log.converged
    );
    if let Some(p) = &a.log {
        write_atomic(p, log_text.as_bytes())?;
    }
    write_atomic(&out, &params.to_checkpoint_bytes())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let params = ModelParams::load(&c.path(&a.model, "model")?)?;
    let store = NGramStore::load(&c.path(&a.counts, "counts")?)?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let scorer = NnGramsScorer {
        params: &params,
        store: &store,
        vocab: &vocab,
    };
    emit(&a.out, &score_lines(&read(&c.path(&a.text, "text")?)?, &scorer)?)
}

#[derive(Args, Debug)]
pub struct RescoreArgs {
    #[command(flatten)]
    common: Common,
    /// `<utt_id>\t<reference>` lines.
    #[arg(long)]
    testset: Option<PathBuf>,
    /// Directory holding `<utt_id>.nbest` files.
    #[arg(long)]
    nbest_dir: Option<PathBuf>,
    /// `katz` or `nngrams`.
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    arpa: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Interpolation weight of the rescoring model.
    #[arg(long)]
    weight: Option<f64>,
    #[arg(short = 'n', long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn rescore(a: RescoreArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    if let Some(m) = &a.lm {
        c.rescore.model = m.parse::<RescoreModel>()?;
    }
    if let Some(w) = a.weight {
        c.rescore.weight = w;
    }
    if let Some(n) = a.n {
        c.rescore.n = n;
    }
    c.rescore.validate()?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let testset = load_testset(&c.path(&a.testset, "testset")?, &c.path(&a.nbest_dir, "nbest_dir")?)?;
    let report = match c.rescore.model {
        RescoreModel::Katz => {
            let lm = load_arpa(&c.path(&a.arpa, "arpa")?, &vocab)?;
            evaluate(&testset, &c.rescore, &KatzScorer { lm: &lm, vocab: &vocab })?
        }
        RescoreModel::NnGrams => {
            let params = ModelParams::load(&c.path(&a.model, "model")?)?;
            let store = NGramStore::load(&c.path(&a.counts, "counts")?)?;
            let scorer = NnGramsScorer {
                params: &params,
                store: &store,
                vocab: &vocab,
            };
            evaluate(&testset, &c.rescore, &scorer)?
        }
    };
    match &a.out {
        Some(p) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_atomic(p, report.to_text().as_bytes())?;
            println!("{}", report.total.summary_line());
            Ok(())
        }
        None => emit(&None, &report.to_text()),
    }
}

#[derive(Args, Debug)]
pub struct WerArgs {
    #[command(flatten)]
    common: Common,
    /// Reference sentences, one per line, optionally `<utt_id>\t<sentence>`.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypotheses aligned line by line with the references.
    #[arg(long)]
    hyp: PathBuf,
}

fn sentence_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| {
            let body = l.split_once('\t').map_or(l, |(_, s)| s);
            body.split_whitespace().map(String::from).collect()
        })
        .collect()
}

pub fn wer(a: WerArgs) -> Result<()> {
    load_config(&a.common)?;
    let refs = sentence_lines(&read(&a.reference)?);
    let hyps = sentence_lines(&read(&a.hyp)?);
    if refs.len() != hyps.len() {
        return Err(CliError::Data(format!(
            "reference has {} lines but hypothesis has {}",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = rescore::WerCounts::default();
    for (r, h) in refs.iter().zip(&hyps) {
        total.add(&rescore::wer(r, h));
    }
    println!("{}", total.summary_line());
    Ok(())
}

#[derive(Args, Debug)]
pub struct NeighborsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    word: String,
    #[arg(short = 'k', long, default_value_t = 10)]
    k: usize,
}

pub fn neighbors(a: NeighborsArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let params = ModelParams::load(&c.path(&a.model, "model")?)?;
    let vocab = load_vocab(&c.path(&a.vocab, "vocab")?)?;
    let id = vocab
        .id(&a.word)
        .ok_or_else(|| CliError::Validation(format!("'{}' is not in the vocabulary", a.word)))?;
    for (w, d) in params.nearest_neighbors(id, a.k)? {
        println!("{} {d:.2}", vocab.word(w).unwrap_or("<unk>"));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ParamCountArgs {
    #[command(flatten)]
    common: Common,
}

pub fn param_count(a: ParamCountArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let total = parameter_count(&c.model);
    println!("parameters {total}");
    let relative = (total as f64 - REPORTED_PARAMETERS).abs() / REPORTED_PARAMETERS;
    if relative <= 0.01 {
        println!("within 1% of 517M");
    } else {
        println!("not within 1% of 517M ({:.2}% off)", relative * 100.0);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// Random configurations to check, seeded `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    configs: u64,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let seed = c.require_seed(a.seed)?;
    let mut worst = 0.0f64;
    for s in seed..seed + a.configs {
        let config = random_tiny_config(s);
        let r = gradient_check(&config, s, GRADCHECK_EPSILON)?;
        println!(
            "seed={s} mode={} max_rel_error={:e} checked={} skipped={}",
            config.input_mode, r.max_rel_error, r.checked, r.skipped
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:e}");
    if worst < GRADCHECK_TOLERANCE {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Validation(format!("gradient check failed: {worst:e} >= {GRADCHECK_TOLERANCE:e}")))
    }
}

#[derive(Args, Debug)]
pub struct SyntheticEvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200_000)]
    sentences: usize,
    /// `full`, `embeddings_only` or `counts_only`.
    #[arg(long, default_value = "full")]
    mode: String,
    /// Noise samples per data word.
    #[arg(short = 'f', long, default_value_t = 25)]
    noise_samples: usize,
    #[arg(long, default_value_t = 2_000)]
    max_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn synthetic_eval(a: SyntheticEvalArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let mut config = RecoveryConfig {
        sentences: a.sentences,
        input_mode: a.mode.parse::<InputMode>()?,
        ..RecoveryConfig::default()
    };
    config.train.seed = c.require_seed(a.seed)?;
    config.train.noise_samples = a.noise_samples;
    config.train.max_steps = a.max_steps;
    config.train.threads = c.train.threads;
    let generator = BigramGenerator::five_word();
    let report = nce_recovery(&generator, &config, |e| eprintln!("{e}"))?;
    let vocab = generator.vocab();
    let mut out = String::from("history\tword\ttrue_log_prob\tmodel_score\n");
    for (h, w, t, m) in &report.pairs {
        let _ = writeln!(
            out,
            "{}\t{}\t{t:.6}\t{m:.6}",
            vocab.word(*h).unwrap_or("?"),
            vocab.word(*w).unwrap_or("?")
        );
    }
    let _ = writeln!(out, "spearman={:.6}", report.spearman);
    emit(&a.out, &out)
}

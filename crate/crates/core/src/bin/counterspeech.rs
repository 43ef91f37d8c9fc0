use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use counterspeech::classifier::{self, CnClassifier, PairRecord};
use counterspeech::corpus::{self, HateSpeechSample};
use counterspeech::embed::{EmbeddingSource, EmbeddingTable, TextEncoder, TriplePair};
use counterspeech::eval::{StubJudge, StubToxicity, ToxicityClient};
use counterspeech::decoder::DecoderConfig;
use counterspeech::lm::{train_toy_lm, CountLmConfig, Direction, LmConfig, ToyLm};
use counterspeech::pipeline::{
    self, evaluate, generate_one, lm_texts, load_vocab, parse_config, read_jsonl, run_pipeline, save_vocab, stage_seed,
    validate_config_with, Attempt, Generation, Models, PipelineConfig, PipelineError, Scorers,
};
use counterspeech::retrieve::{ssf, Encoders};
use counterspeech::text::Vocabulary;

/// Retrieval-augmented counter-narrative generation with toy models.
#[derive(Parser)]
#[command(name = "counterspeech", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderRole {
    Stance,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Items {
    Posts,
    Comments,
    Sentences,
}

#[derive(Clone, Copy, ValueEnum)]
enum LmKind {
    Neural,
    Count,
}

#[derive(clap::Args)]
struct Settings {
    /// Config file; flags given on the command line win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest post and comment records, drop downvoted comments, store the repository.
    Ingest {
        /// Line-delimited post and comment records.
        #[arg(long)]
        input: PathBuf,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        /// Keep comments with more downvotes than upvotes.
        #[arg(long)]
        no_filter: bool,
    },
    /// Train a stance encoder on labeled statements, or a semantic one on triples.
    TrainStance {
        /// Training data file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "stance")]
        kind: EncoderRole,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Contrastive temperature.
        #[arg(long)]
        temperature: Option<f64>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write embeddings of repository items in the embedding file format.
    EmbedExport {
        /// Trained encoder file.
        #[arg(long)]
        encoder: PathBuf,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "posts")]
        items: Items,
        /// Target label stance embeddings are taken towards.
        #[arg(long, default_value = "")]
        target: String,
    },
    /// Train a forward or backward toy language model.
    TrainLm {
        /// forward or backward.
        #[arg(long)]
        direction: Direction,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loaded when it exists, otherwise built from the training texts and written.
        #[arg(long)]
        vocab: PathBuf,
        /// Classifier pairs added to the training texts.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Hate-speech inputs added to the training texts.
        #[arg(long)]
        hs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "neural")]
        kind: LmKind,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the counter-narrative classifier on labeled pairs.
    TrainClassifier {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score pairs with a trained classifier.
    Classify {
        /// Trained classifier file.
        #[arg(long)]
        model: PathBuf,
        /// Hate speech text; requires --cn.
        #[arg(long, requires = "cn", conflicts_with = "pairs")]
        hs: Option<String>,
        #[arg(long)]
        cn: Option<String>,
        /// File of `{"hs", "cn", "label"}` lines.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Retrieve ranked counter-knowledge for every hate-speech input.
    Retrieve {
        /// Hate-speech inputs `{"id", "text", "target"}`.
        #[arg(long)]
        hs: PathBuf,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        /// Directory of trained model files.
        #[arg(long)]
        models: PathBuf,
        /// Posts kept by stance similarity.
        #[arg(long)]
        k1: Option<usize>,
        /// Comments kept by combined score.
        #[arg(long)]
        k2: Option<usize>,
        /// Sentences kept by fluency.
        #[arg(long)]
        k3: Option<usize>,
        /// Weight of semantic similarity in the comment score.
        #[arg(long)]
        alpha: Option<f64>,
        /// Weight of the parent post stance score in the comment score.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Retrieve and decode a counter-narrative for every hate-speech input.
    Generate {
        /// Hate-speech inputs `{"id", "text", "target"}`.
        #[arg(long)]
        hs: PathBuf,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        /// Directory of trained model files.
        #[arg(long)]
        models: PathBuf,
        /// Langevin iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// Langevin step size.
        #[arg(long)]
        step: Option<f64>,
        /// Length of the optimized soft sequence.
        #[arg(long)]
        max_len: Option<usize>,
        /// Initial noise scale.
        #[arg(long)]
        sigma0: Option<f64>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving one energy trace per input.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Compute metrics for a generations file.
    Evaluate {
        /// Output of `generate`.
        #[arg(long)]
        generations: PathBuf,
        /// Repository directory.
        #[arg(long)]
        repo: PathBuf,
        /// Directory of trained model files.
        #[arg(long)]
        models: PathBuf,
        /// Recorded judge responses; without it every text scores 0.5.
        #[arg(long)]
        judge: Option<PathBuf>,
        /// Recorded toxicity scores.
        #[arg(long)]
        toxicity: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run ingest, training, retrieval, decoding and evaluation from one config.
    Pipeline {
        /// Config file.
        #[arg(long)]
        config: PathBuf,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Langevin iterations.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `section.key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        /// Config file.
        #[arg(long)]
        config: PathBuf,
        /// Extra `section.key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn push<T: std::fmt::Display>(set: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        set.push(format!("{key}={v}"));
    }
}

fn push_str(set: &mut Vec<String>, key: &str, v: Option<&Path>) {
    if let Some(v) = v {
        set.push(format!("{key}={:?}", v.display().to_string()));
    }
}

/// Resolves flags over an optional config file over the defaults.
fn settings(s: &Settings, flags: Vec<String>) -> Result<PipelineConfig, PipelineError> {
    let mut overrides = s.set.clone();
    overrides.extend(flags);
    let v = match &s.config {
        Some(path) => validate_config_with(path, &overrides),
        None => parse_config("", Path::new("."), &overrides),
    }
    .map_err(PipelineError::Validation)?;
    for w in &v.warnings {
        eprintln!("warning: {w}");
    }
    Ok(v.config)
}

/// Creates the directory an output file goes into.
fn parent_dir(path: &Path) -> io::Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d),
        _ => Ok(()),
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            parent_dir(p)?;
            Box::new(BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line<T: serde::Serialize>(w: &mut dyn Write, value: &T) -> Result<(), PipelineError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| PipelineError::Serialize(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { input, repo, no_filter } => {
            let raw = corpus::ingest_path(&input)?;
            let kept = if no_filter { raw.clone() } else { raw.filter_comments() };
            let manifest = corpus::save(&kept, &repo)?;
            println!(
                "{} posts, {} comments ({} removed by vote filter), {} sentences",
                manifest.posts,
                manifest.comments,
                raw.comments().len() - kept.comments().len(),
                manifest.sentences
            );
        }
        Command::TrainStance { data, out, kind, epochs, lr, temperature, seed } => {
            let mut t = PipelineConfig::default().training.stance;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.learning_rate = lr.unwrap_or(t.learning_rate);
            t.temperature = temperature.unwrap_or(t.temperature);
            let encoder = match kind {
                EncoderRole::Stance => pipeline::train_stance(&read_jsonl(&data)?, &t, seed)?,
                EncoderRole::Semantic => pipeline::train_semantic(&read_jsonl::<TriplePair>(&data)?, &t, seed)?,
            };
            parent_dir(&out)?;
            encoder.save(&out)?;
        }
        Command::EmbedExport { encoder, repo, out, items, target } => {
            let enc = TextEncoder::load(&encoder)?;
            let repo = corpus::load(&repo)?;
            let rows: Vec<(String, String)> = match items {
                Items::Posts => repo.posts().iter().map(|p| (p.id.clone(), p.text())).collect(),
                Items::Comments => repo.comments().iter().map(|c| (c.id.clone(), c.body.clone())).collect(),
                Items::Sentences => {
                    repo.sentences().map(|s| (format!("{}/{}", s.comment_id, s.index), s.text.clone())).collect()
                }
            };
            let mut table = EmbeddingTable::new(enc.dim());
            for (id, text) in rows {
                let v = enc.embed(&id, &target, &text)?;
                table.insert(id, v)?;
            }
            parent_dir(&out)?;
            table.write_path(&out)?;
        }
        Command::TrainLm { direction, repo, out, vocab, pairs, hs, kind, epochs, seed } => {
            let repo = corpus::load(&repo)?;
            let pairs: Vec<PairRecord> = pairs.map(classifier::read_pairs_path).transpose()?.unwrap_or_default();
            let hs: Vec<HateSpeechSample> = hs.map(corpus::read_hs_path).transpose()?.unwrap_or_default();
            let prompt = PipelineConfig::default().retrieval.counter_prompt;
            let texts = lm_texts(&repo, &hs, &pairs, &prompt);
            let vocab = if vocab.exists() {
                load_vocab(&vocab)?
            } else {
                let v = Vocabulary::build(&texts, 1);
                parent_dir(&vocab)?;
                save_vocab(&v, &vocab)?;
                v
            };
            let config = match kind {
                LmKind::Count => LmConfig::Count(CountLmConfig::default()),
                LmKind::Neural => {
                    let LmConfig::Neural(mut c) = LmConfig::default() else { unreachable!() };
                    c.epochs = epochs.unwrap_or(c.epochs);
                    LmConfig::Neural(c)
                }
            };
            let seqs: Vec<_> = texts.iter().map(|t| vocab.encode(t)).collect();
            let lm = train_toy_lm(&seqs, &vocab, direction, &config, seed)?;
            parent_dir(&out)?;
            lm.save(&out)?;
            println!("trained {direction:?} model over {} sequences, |V| = {}", seqs.len(), vocab.len());
        }
        Command::TrainClassifier { pairs, vocab, out, epochs, lr, seed } => {
            let vocab = load_vocab(&vocab)?;
            let mut cfg = PipelineConfig::default().training.classifier;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            let labeled: Vec<_> = classifier::read_pairs_path(&pairs)?.iter().map(|p| p.encode(&vocab)).collect();
            let clf = classifier::train(&labeled, &vocab, &cfg, seed)?;
            println!("training accuracy {:.4}", classifier::accuracy(&clf, &labeled)?);
            parent_dir(&out)?;
            clf.save(&out)?;
        }
        Command::Classify { model, hs, cn, pairs } => {
            let clf = CnClassifier::load(&model)?;
            let records = match (hs, cn, pairs) {
                (Some(hs), Some(cn), None) => vec![PairRecord { hs, cn, label: 0 }],
                (None, None, Some(p)) => classifier::read_pairs_path(p)?,
                _ => return Err(PipelineError::Validation(vec!["give --hs with --cn, or --pairs".into()])),
            };
            let mut w = output(None)?;
            for r in &records {
                let p = clf.counter_probability(&clf.vocab.encode(&r.hs), &clf.vocab.encode(&r.cn))?;
                let line = serde_json::json!({ "hs": r.hs, "cn": r.cn, "counter_probability": p, "counter": p > 0.5 });
                json_line(&mut *w, &line)?;
            }
            w.flush()?;
        }
        Command::Retrieve { hs, repo, models, k1, k2, k3, alpha, beta, out, settings: s } => {
            let mut flags = Vec::new();
            push(&mut flags, "retrieval.k1", k1);
            push(&mut flags, "retrieval.k2", k2);
            push(&mut flags, "retrieval.k3", k3);
            push(&mut flags, "retrieval.alpha", alpha);
            push(&mut flags, "retrieval.beta", beta);
            let cfg = settings(&s, flags)?;
            let repo = corpus::load(&repo)?;
            let stance = TextEncoder::load(models.join(pipeline::STANCE_FILE))?;
            let semantic = TextEncoder::load(models.join(pipeline::SEMANTIC_FILE))?;
            let fwd = ToyLm::load(models.join(pipeline::LM_FWD_FILE))?;
            let mut w = output(out.as_deref())?;
            let mut failed = 0;
            for x in corpus::read_hs_path(&hs)? {
                match ssf(&repo, &x, &cfg.retrieval, Encoders { stance: &stance, semantic: &semantic }, &fwd) {
                    Ok(k) => k.write_lines(&mut w)?,
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}: {e}", x.id);
                    }
                }
            }
            w.flush()?;
            if failed > 0 {
                eprintln!("{failed} input(s) without counter-knowledge");
            }
        }
        Command::Generate { hs, repo, models, iters, step, max_len, sigma0, seed, trace, out, settings: s } => {
            let mut flags = Vec::new();
            push(&mut flags, "decoder.iterations", iters);
            push(&mut flags, "decoder.step_size", step);
            push(&mut flags, "decoder.max_length", max_len);
            push(&mut flags, "decoder.sigma0", sigma0);
            push(&mut flags, "seed", seed);
            let cfg = settings(&s, flags)?;
            let repo = corpus::load(&repo)?;
            let models = Models::load(&models)?;
            if let Some(dir) = &trace {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = output(out.as_deref())?;
            for (i, x) in corpus::read_hs_path(&hs)?.iter().enumerate() {
                let decoder = DecoderConfig { seed: stage_seed(cfg.seed, (1 << 20) + i as u64), ..cfg.decoder };
                match generate_one(&repo, x, &models, &cfg.retrieval, &cfg.energy, &decoder) {
                    Ok(run) => {
                        if let Some(dir) = &trace {
                            run.trace.write_path(dir.join(format!("{}.jsonl", run.generation.hs_id)))?;
                        }
                        json_line(&mut *w, &run.generation)?;
                    }
                    Err(e) => eprintln!("{}: {e}", x.id),
                }
            }
            w.flush()?;
        }
        Command::Evaluate { generations, repo, models, judge, toxicity, out } => {
            let gens: Vec<Generation> = read_jsonl(&generations)?;
            let repo = corpus::load(&repo)?;
            let models = Models::load(&models)?;
            let judge = match judge {
                Some(p) => StubJudge::read_path(p)?,
                None => StubJudge::constant(0.5, 0.5),
            };
            let toxicity = toxicity.map(StubToxicity::read_path).transpose()?;
            let corpus: Vec<String> = repo.sentences().map(|s| s.text.clone()).collect();
            let attempts: Vec<Attempt> =
                gens.into_iter().map(|g| Attempt { hs_id: g.hs_id.clone(), outcome: Ok(g) }).collect();
            let report = evaluate(
                &attempts,
                &Scorers {
                    classifier: &models.classifier,
                    semantic: &models.semantic,
                    novelty_corpus: &corpus,
                    judge: &judge,
                    toxicity: toxicity.as_ref().map(|t| t as &dyn ToxicityClient),
                },
            );
            let mut w = output(out.as_deref())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::Serialize(e.to_string()))?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
        Command::Pipeline { config, seed, iters, out, mut set } => {
            push(&mut set, "seed", seed);
            push(&mut set, "decoder.iterations", iters);
            push_str(&mut set, "paths.out", out.as_deref());
            let v = validate_config_with(&config, &set).map_err(PipelineError::Validation)?;
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            let report = run_pipeline(&v.config)?;
            eprintln!("{} input(s), {} failed", report.rows.len(), report.failed);
            if let Some(s) = &report.summary {
                println!("{}", serde_json::to_string(s).map_err(|e| PipelineError::Serialize(e.to_string()))?);
            }
        }
        Command::Validate { config, set } => match validate_config_with(&config, &set) {
            Ok(v) => {
                for w in &v.warnings {
                    eprintln!("warning: {w}");
                }
                print!("{}", v.config.to_toml()?);
            }
            Err(errs) => return Err(PipelineError::Validation(errs)),
        },
    }
    Ok(())
}

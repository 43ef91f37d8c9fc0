//! End-to-end orchestration: configuration loading and validation, toy model
//! training and persistence, and the retrieve → decode → evaluate loop.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, ClassifierConfig, ClassifierError, CnClassifier, PairRecord};
use crate::corpus::{self, CorpusError, HateSpeechSample, Repository};
use crate::decoder::{decode, DecodeError, DecodeTrace, DecoderConfig};
use crate::embed::{
    build_pairs, train_encoder, EmbedError, EncoderConfig, EncoderKind, StanceStatement, TextEncoder, TrainConfig,
    TriplePair,
};
use crate::energy::{left_context, Constraints, EnergyConfig};
use crate::eval::{
    bm25_relevance, ngram_retention, novelty, semantic_similarity, ClientError, CorpusStats, EvalError, JudgeClient,
    MetricReport, SampleMetrics, StubJudge, StubToxicity, ToxicityClient,
};
use crate::lm::{train_toy_lm, Direction, LanguageModel, LmConfig, LmError, ToyLm};
use crate::optim::stage_rng;
use crate::retrieve::{ssf, CounterKnowledge, Encoders, RetrievalConfig, RetrieveError};
use crate::text::{TokenSeq, Vocabulary};

pub const VOCAB_FILE: &str = "vocab.json";
pub const STANCE_FILE: &str = "stance.json";
pub const SEMANTIC_FILE: &str = "semantic.json";
pub const LM_FWD_FILE: &str = "lm_fwd.json";
pub const LM_BWD_FILE: &str = "lm_bwd.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const MODEL_FILES: [&str; 6] = [VOCAB_FILE, STANCE_FILE, SEMANTIC_FILE, LM_FWD_FILE, LM_BWD_FILE, CLASSIFIER_FILE];

const STANCE_STREAM: u64 = 1;
const SEMANTIC_STREAM: u64 = 2;
const LM_FWD_STREAM: u64 = 3;
const LM_BWD_STREAM: u64 = 4;
const CLASSIFIER_STREAM: u64 = 5;
const DECODE_STREAM_BASE: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("{path}: line {line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 1 for invalid configuration or input data, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) | PipelineError::Malformed { .. } => 1,
            PipelineError::Corpus(e) if !matches!(e, CorpusError::Io(_)) => 1,
            PipelineError::Classifier(ClassifierError::Malformed { .. } | ClassifierError::SingleClass) => 1,
            PipelineError::Client(ClientError::Malformed { .. } | ClientError::OutOfRange(_)) => 1,
            _ => 2,
        }
    }
}

/// Reads a file of one JSON value per line, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, PipelineError> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Serialize(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| PipelineError::Serialize(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Raw post and comment records. When set they are ingested, filtered
    /// and written to `repo`.
    pub corpus: Option<PathBuf>,
    pub repo: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub hs: Option<PathBuf>,
    /// Stance statements `{"text", "target", "polarity"}`.
    pub stance: Option<PathBuf>,
    /// Semantic triples `{"anchor", "positive", "hard_negative", "target"}`.
    pub semantic: Option<PathBuf>,
    /// Classifier pairs `{"hs", "cn", "label"}`.
    pub pairs: Option<PathBuf>,
    /// Recorded judge responses.
    pub judge: Option<PathBuf>,
    /// Recorded toxicity scores.
    pub toxicity: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.repo,
            &mut self.models,
            &mut self.hs,
            &mut self.stance,
            &mut self.semantic,
            &mut self.pairs,
            &mut self.judge,
            &mut self.toxicity,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderTraining {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            encoder: EncoderConfig::default(),
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            temperature: t.temperature,
        }
    }
}

impl EncoderTraining {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            temperature: self.temperature,
            seed,
        }
    }

    fn validate(&self, name: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let e = &self.encoder;
        if e.feature_dim == 0 || e.hidden == 0 || e.dim == 0 {
            errs.push(format!("training.{name}.encoder: dimensions must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            errs.push(format!("training.{name}: learning_rate and batch_size must be > 0"));
        }
        if !(self.temperature > 0.0) {
            errs.push(format!("training.{name}: temperature must be > 0"));
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Train fresh models (and write them to `paths.models` when set)
    /// instead of loading them from `paths.models`.
    pub train: bool,
    pub min_count: usize,
    pub stance: EncoderTraining,
    pub semantic: EncoderTraining,
    pub lm: LmConfig,
    pub classifier: ClassifierConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            train: true,
            min_count: 1,
            stance: EncoderTraining::default(),
            semantic: EncoderTraining::default(),
            lm: LmConfig::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Vec<String> {
        let mut errs = self.stance.validate("stance");
        errs.extend(self.semantic.validate("semantic"));
        match self.lm {
            LmConfig::Count(c) if !(c.k >= 0.0) => errs.push("training.lm: k must be >= 0".into()),
            LmConfig::Neural(c) if !(c.learning_rate > 0.0) || c.batch_size == 0 || c.embed_dim == 0 || c.hidden == 0 => {
                errs.push("training.lm: dimensions, learning_rate and batch_size must be > 0".into())
            }
            _ => {}
        }
        let c = &self.classifier;
        if !(c.learning_rate > 0.0) || c.batch_size == 0 || c.feature_dim == 0 || c.hidden == 0 || c.dim == 0 {
            errs.push("training.classifier: dimensions, learning_rate and batch_size must be > 0".into());
        }
        if !(c.tau_join > 0.0) {
            errs.push("training.classifier: tau_join must be > 0".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Judge scores returned for every text when no recorded file is given.
    pub judge_persuasiveness: f64,
    pub judge_informativeness: f64,
    /// Worker threads for per-sample work; 0 picks one per core.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { judge_persuasiveness: 0.5, judge_informativeness: 0.5, workers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; every stage draws its own stream from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub retrieval: RetrievalConfig,
    pub energy: EnergyConfig,
    pub decoder: DecoderConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Every invariant violation of the settings, without touching the
    /// file system.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.retrieval.validate();
        errs.extend(self.energy.validate());
        errs.extend(self.decoder.validate());
        errs.extend(self.training.validate());
        for (name, v) in [
            ("judge_persuasiveness", self.eval.judge_persuasiveness),
            ("judge_informativeness", self.eval.judge_informativeness),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("eval: {name} must lie in [0, 1]"));
            }
        }
        errs
    }

    fn path_violations(&self) -> Vec<String> {
        let p = &self.paths;
        let mut errs = Vec::new();
        let inputs = [
            ("corpus", &p.corpus),
            ("hs", &p.hs),
            ("stance", &p.stance),
            ("semantic", &p.semantic),
            ("pairs", &p.pairs),
            ("judge", &p.judge),
            ("toxicity", &p.toxicity),
        ];
        for (name, path) in inputs {
            if let Some(path) = path {
                if !path.is_file() {
                    errs.push(format!("paths.{name}: {} does not exist", path.display()));
                }
            }
        }
        if let (None, Some(repo)) = (&p.corpus, &p.repo) {
            if !repo.join("manifest.json").is_file() {
                errs.push(format!("paths.repo: no repository at {}", repo.display()));
            }
        }
        if let (false, Some(models)) = (self.training.train, &p.models) {
            for f in MODEL_FILES {
                if !models.join(f).is_file() {
                    errs.push(format!("paths.models: missing {}", models.join(f).display()));
                }
            }
        }
        errs
    }

    /// Inputs [`run_pipeline`] needs beyond a valid config.
    fn run_requirements(&self) -> Vec<String> {
        let p = &self.paths;
        let mut errs = Vec::new();
        if p.hs.is_none() {
            errs.push("paths.hs is required".into());
        }
        if p.corpus.is_none() && p.repo.is_none() {
            errs.push("one of paths.corpus or paths.repo is required".into());
        }
        if p.out.is_none() {
            errs.push("paths.out is required".into());
        }
        if self.training.train {
            for (name, path) in [("stance", &p.stance), ("semantic", &p.semantic), ("pairs", &p.pairs)] {
                if path.is_none() {
                    errs.push(format!("paths.{name} is required when training.train is true"));
                }
            }
        } else if p.models.is_none() {
            errs.push("paths.models is required when training.train is false".into());
        }
        errs
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Serialize(e.to_string()))
    }
}

/// A config that passed validation, with any warnings raised on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub config: PipelineConfig,
    pub warnings: Vec<String>,
}

pub fn validate_config(path: impl AsRef<Path>) -> Result<Validated, Vec<String>> {
    validate_config_with(path, &[])
}

/// Loads and validates a config file with `key.path=value` overrides
/// applied on top. Relative paths resolve against the file's directory.
pub fn validate_config_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<Validated, Vec<String>> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&src, base, overrides)
}

/// Parses, normalizes and checks a config. Never panics; every problem found
/// is reported at once.
pub fn parse_config(src: &str, base: &Path, overrides: &[String]) -> Result<Validated, Vec<String>> {
    let mut table: toml::Table = src.parse().map_err(|e| vec![format!("config syntax: {e}")])?;
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut table, o) {
            errors.push(e);
        }
    }
    // An `[training.lm]` table without `kind` tunes the default architecture.
    if let Some(lm) = table.get_mut("training").and_then(|t| t.get_mut("lm")).and_then(|l| l.as_table_mut()) {
        if !lm.contains_key("kind") {
            if let Ok(toml::Value::Table(d)) = toml::Value::try_from(LmConfig::default()) {
                lm.insert("kind".into(), d["kind"].clone());
            }
        }
    }
    let mut cfg = PipelineConfig::default();
    for (key, value) in table {
        let (errs, warns) = (&mut errors, &mut warnings);
        match key.as_str() {
            "seed" => match value.as_integer() {
                Some(s) if s >= 0 => cfg.seed = s as u64,
                _ => errs.push("seed: expected a nonnegative integer".into()),
            },
            "paths" => section(&key, value, &mut cfg.paths, errs, warns),
            "retrieval" => section(&key, value, &mut cfg.retrieval, errs, warns),
            "energy" => section(&key, value, &mut cfg.energy, errs, warns),
            "decoder" => section(&key, value, &mut cfg.decoder, errs, warns),
            "training" => section(&key, value, &mut cfg.training, errs, warns),
            "eval" => section(&key, value, &mut cfg.eval, errs, warns),
            _ => warns.push(format!("unknown key {key}")),
        }
    }
    cfg.paths.resolve(base);
    errors.extend(cfg.violations());
    errors.extend(cfg.path_violations());
    if errors.is_empty() {
        Ok(Validated { config: cfg, warnings })
    } else {
        Err(errors)
    }
}

fn section<T: DeserializeOwned + Serialize>(
    name: &str,
    value: toml::Value,
    slot: &mut T,
    errors: &mut Vec<String>,
    warnings: &mut Vec<String>,
) {
    match value.clone().try_into::<T>() {
        Ok(v) => {
            if let Ok(seen) = toml::Value::try_from(&v) {
                unknown_keys(name, &value, &seen, warnings);
            }
            *slot = v;
        }
        Err(e) => errors.push(format!("{name}: {}", e.to_string().trim())),
    }
}

/// Keys of `given` that did not survive deserialization into `seen`.
fn unknown_keys(prefix: &str, given: &toml::Value, seen: &toml::Value, out: &mut Vec<String>) {
    let (Some(given), Some(seen)) = (given.as_table(), seen.as_table()) else { return };
    for (k, v) in given {
        let path = format!("{prefix}.{k}");
        match seen.get(k) {
            Some(s) => unknown_keys(&path, v, s, out),
            None => out.push(format!("unknown key {path}")),
        }
    }
}

/// Sets `a.b.c` in the table from `a.b.c=value`. The value is read as a
/// TOML value, or taken as a bare string when it does not parse as one.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| format!("override {assignment:?}: expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override {assignment:?}: empty key segment"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, prefix) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in prefix {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("override {assignment:?}: {p} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Independent seed for a named stage of a run.
pub fn stage_seed(master: u64, stream: u64) -> u64 {
    stage_rng(master, stream).random()
}

/// Everything the generation loop runs on. All components share `vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub vocab: Vocabulary,
    pub stance: TextEncoder,
    pub semantic: TextEncoder,
    pub fwd: ToyLm,
    pub bwd: ToyLm,
    pub classifier: CnClassifier,
}

impl Models {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(dir.join(VOCAB_FILE), &self.vocab)?;
        self.stance.save(dir.join(STANCE_FILE))?;
        self.semantic.save(dir.join(SEMANTIC_FILE))?;
        self.fwd.save(dir.join(LM_FWD_FILE))?;
        self.bwd.save(dir.join(LM_BWD_FILE))?;
        self.classifier.save(dir.join(CLASSIFIER_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let models = Self {
            vocab: load_vocab(dir.join(VOCAB_FILE))?,
            stance: TextEncoder::load(dir.join(STANCE_FILE))?,
            semantic: TextEncoder::load(dir.join(SEMANTIC_FILE))?,
            fwd: ToyLm::load(dir.join(LM_FWD_FILE))?,
            bwd: ToyLm::load(dir.join(LM_BWD_FILE))?,
            classifier: CnClassifier::load(dir.join(CLASSIFIER_FILE))?,
        };
        models.check()?;
        Ok(models)
    }

    fn check(&self) -> Result<(), PipelineError> {
        let mut errs = Vec::new();
        if self.fwd.vocab() != &self.vocab || self.bwd.vocab() != &self.vocab || self.classifier.vocab != self.vocab {
            errs.push("models: language models and classifier must share the vocabulary".to_string());
        }
        if self.fwd.direction() != Direction::Forward || self.bwd.direction() != Direction::Backward {
            errs.push("models: expected one forward and one backward language model".to_string());
        }
        if self.stance.kind != EncoderKind::Stance || self.semantic.kind != EncoderKind::Semantic {
            errs.push("models: encoder kinds do not match their roles".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(errs))
        }
    }

    pub fn encoders(&self) -> Encoders<'_> {
        Encoders { stance: &self.stance, semantic: &self.semantic }
    }
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary, PipelineError> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| PipelineError::Serialize(format!("vocabulary: {e}")))
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    write_json(path, vocab)
}

/// Supervision for the toy models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub stance: Vec<StanceStatement>,
    pub semantic: Vec<TriplePair>,
    pub pairs: Vec<PairRecord>,
}

/// Texts the language models are trained on and the vocabulary is built
/// from: every repository sentence, the classifier pairs, the hate-speech
/// inputs and the counter prompt.
pub fn lm_texts(repo: &Repository, hs: &[HateSpeechSample], pairs: &[PairRecord], prompt: &str) -> Vec<String> {
    let mut texts: Vec<String> = repo.sentences().map(|s| s.text.clone()).collect();
    for p in pairs {
        texts.push(p.hs.clone());
        texts.push(p.cn.clone());
    }
    texts.extend(hs.iter().map(|x| x.text.clone()));
    texts.push(prompt.to_string());
    texts
}

pub fn train_stance(data: &[StanceStatement], t: &EncoderTraining, seed: u64) -> Result<TextEncoder, PipelineError> {
    let pairs = build_pairs(data);
    if pairs.triples.is_empty() {
        return Err(PipelineError::Validation(vec!["stance data yields no training triples".into()]));
    }
    let init = TextEncoder::new(EncoderKind::Stance, t.encoder, &mut stage_rng(seed, 0));
    Ok(train_encoder(&pairs.triples, init, &t.train_config(seed))?.encoder)
}

pub fn train_semantic(triples: &[TriplePair], t: &EncoderTraining, seed: u64) -> Result<TextEncoder, PipelineError> {
    if triples.is_empty() {
        return Err(PipelineError::Validation(vec!["no semantic training triples".into()]));
    }
    let init = TextEncoder::new(EncoderKind::Semantic, t.encoder, &mut stage_rng(seed, 0));
    Ok(train_encoder(triples, init, &t.train_config(seed))?.encoder)
}

/// Trains the full toy stack from scratch. Deterministic given `seed`.
pub fn train_models(
    repo: &Repository,
    hs: &[HateSpeechSample],
    data: &TrainingData,
    cfg: &TrainingConfig,
    prompt: &str,
    seed: u64,
) -> Result<Models, PipelineError> {
    let texts = lm_texts(repo, hs, &data.pairs, prompt);
    let vocab = Vocabulary::build(&texts, cfg.min_count);
    let corpus: Vec<TokenSeq> = texts.iter().map(|t| vocab.encode(t)).filter(|s| !s.is_empty()).collect();
    let labeled: Vec<_> = data.pairs.iter().map(|p| p.encode(&vocab)).collect();
    Ok(Models {
        stance: train_stance(&data.stance, &cfg.stance, stage_seed(seed, STANCE_STREAM))?,
        semantic: train_semantic(&data.semantic, &cfg.semantic, stage_seed(seed, SEMANTIC_STREAM))?,
        fwd: train_toy_lm(&corpus, &vocab, Direction::Forward, &cfg.lm, stage_seed(seed, LM_FWD_STREAM))?,
        bwd: train_toy_lm(&corpus, &vocab, Direction::Backward, &cfg.lm, stage_seed(seed, LM_BWD_STREAM))?,
        classifier: classifier::train(&labeled, &vocab, &cfg.classifier, stage_seed(seed, CLASSIFIER_STREAM))?,
        vocab,
    })
}

/// One generated counter-narrative and where its knowledge came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub hs_id: String,
    pub hs: String,
    pub target: String,
    pub cn: String,
    pub y_star: String,
    pub provenance: String,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub knowledge: CounterKnowledge,
    pub generation: Generation,
    pub trace: DecodeTrace,
}

/// Retrieval followed by decoding from the top-ranked sentence.
pub fn generate_one(
    repo: &Repository,
    x: &HateSpeechSample,
    models: &Models,
    retrieval: &RetrievalConfig,
    energy: &EnergyConfig,
    decoder: &DecoderConfig,
) -> Result<SampleRun, PipelineError> {
    let knowledge = ssf(repo, x, retrieval, models.encoders(), &models.fwd)?;
    let top = knowledge.y_star().ok_or(RetrieveError::NoCounterKnowledge)?;
    let vocab = &models.vocab;
    let x_ids = vocab.encode(&x.text);
    let x_l = left_context(&x_ids, &vocab.encode(&retrieval.counter_prompt));
    let y_star = vocab.encode(&top.text);
    let c = Constraints {
        x: &x_ids,
        x_l: &x_l,
        y_star: &y_star,
        clf: &models.classifier,
        fwd: &models.fwd,
        bwd: &models.bwd,
    };
    let decoded = decode(&c, energy, decoder)?;
    let mut trace = decoded.trace;
    trace.provenance = Some(top.provenance());
    let generation = Generation {
        hs_id: x.id.clone(),
        hs: x.text.clone(),
        target: x.target.clone(),
        cn: decoded.text,
        y_star: top.text.clone(),
        provenance: top.provenance(),
        final_energy: trace.energies.last().map_or(f64::NAN, |e| e.total),
    };
    Ok(SampleRun { generation, trace, knowledge: knowledge.clone() })
}

/// The outcome of one hate-speech input before evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub hs_id: String,
    pub outcome: Result<Generation, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub index: usize,
    pub hs_id: String,
    pub cn: Option<String>,
    pub provenance: Option<String>,
    pub metrics: Option<SampleMetrics>,
    pub error: Option<String>,
    pub judge_error: Option<String>,
}

/// Aggregate metrics plus one row per input, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Option<MetricReport>,
    pub failed: usize,
    pub rows: Vec<SampleRow>,
}

pub struct Scorers<'a> {
    pub classifier: &'a CnClassifier,
    pub semantic: &'a TextEncoder,
    /// Texts novelty is measured against.
    pub novelty_corpus: &'a [String],
    pub judge: &'a dyn JudgeClient,
    pub toxicity: Option<&'a dyn ToxicityClient>,
}

/// Scores every successful attempt. BM25 statistics are taken over the
/// generated texts of this batch.
pub fn evaluate(attempts: &[Attempt], s: &Scorers<'_>) -> Report {
    let pool: Vec<&str> = attempts.iter().filter_map(|a| a.outcome.as_ref().ok()).map(|g| g.cn.as_str()).collect();
    let stats = CorpusStats::from_documents(&pool);
    let rows: Vec<SampleRow> = attempts
        .par_iter()
        .enumerate()
        .map(|(index, a)| {
            let mut row = SampleRow {
                index,
                hs_id: a.hs_id.clone(),
                cn: None,
                provenance: None,
                metrics: None,
                error: None,
                judge_error: None,
            };
            match &a.outcome {
                Err(e) => row.error = Some(e.clone()),
                Ok(g) => {
                    row.cn = Some(g.cn.clone());
                    row.provenance = Some(g.provenance.clone());
                    match score(g, &stats, s) {
                        Ok((m, judge_error)) => {
                            row.metrics = Some(m);
                            row.judge_error = judge_error;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
            }
            row
        })
        .collect();
    let scored: Vec<SampleMetrics> = rows.iter().filter_map(|r| r.metrics.clone()).collect();
    Report { summary: MetricReport::aggregate(&scored), failed: rows.len() - scored.len(), rows }
}

fn score(g: &Generation, stats: &CorpusStats, s: &Scorers<'_>) -> Result<(SampleMetrics, Option<String>), PipelineError> {
    let vocab = &s.classifier.vocab;
    let (x, y) = (vocab.encode(&g.hs), vocab.encode(&g.cn));
    let counter_probability = if y.is_empty() { 0.0 } else { s.classifier.counter_probability(&x, &y)? };
    let (judge, judge_error) = match s.judge.judge(&g.cn) {
        Ok(j) => (Some(j), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let toxicity = s.toxicity.map(|t| t.toxicity(&g.cn)).transpose()?;
    let m = SampleMetrics {
        relevance: bm25_relevance(&g.cn, &g.hs, stats),
        countered: counter_probability > 0.5,
        counter_probability,
        novelty: novelty(&g.cn, s.novelty_corpus)?,
        retention_ngram: ngram_retention(&g.cn, &g.y_star, 2).ok(),
        retention_semantic: semantic_similarity(&g.cn, &g.y_star, s.semantic)?,
        persuasiveness: judge.map(|j| j.persuasiveness),
        informativeness: judge.map(|j| j.informativeness),
        toxicity,
    };
    Ok((m, judge_error))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Serialize(format!("thread pool: {e}")))
}

/// Loads the repository, ingesting and filtering raw records first when
/// `paths.corpus` is set.
pub fn prepare_repository(paths: &PathsConfig) -> Result<Repository, PipelineError> {
    match (&paths.corpus, &paths.repo) {
        (Some(raw), repo_dir) => {
            let repo = corpus::ingest_path(raw)?.filter_comments();
            if let Some(dir) = repo_dir {
                corpus::save(&repo, dir)?;
            }
            Ok(repo)
        }
        (None, Some(dir)) => Ok(corpus::load(dir)?),
        (None, None) => Err(PipelineError::Validation(vec!["no corpus or repository configured".into()])),
    }
}

fn trace_name(index: usize, hs_id: &str) -> String {
    let safe: String = hs_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("{index:04}_{safe}.jsonl")
}

/// Runs the whole loop for a validated config and writes `report.json`,
/// `generations.jsonl`, `retrieval.jsonl` and `traces/` under `paths.out`.
/// Per-input failures become error rows; only setup failures abort.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report, PipelineError> {
    let mut errs = cfg.run_requirements();
    errs.extend(cfg.violations());
    errs.extend(cfg.path_violations());
    if !errs.is_empty() {
        return Err(PipelineError::Validation(errs));
    }
    let p = &cfg.paths;
    let repo = prepare_repository(p)?;
    let samples = corpus::read_hs_path(p.hs.as_ref().expect("checked"))?;
    let models = if cfg.training.train {
        let data = TrainingData {
            stance: read_jsonl(p.stance.as_ref().expect("checked"))?,
            semantic: read_jsonl(p.semantic.as_ref().expect("checked"))?,
            pairs: classifier::read_pairs_path(p.pairs.as_ref().expect("checked"))?,
        };
        let m = train_models(&repo, &samples, &data, &cfg.training, &cfg.retrieval.counter_prompt, cfg.seed)?;
        if let Some(dir) = &p.models {
            m.save(dir)?;
        }
        m
    } else {
        Models::load(p.models.as_ref().expect("checked"))?
    };
    let judge = match &p.judge {
        Some(path) => StubJudge::read_path(path)?,
        None => StubJudge::constant(cfg.eval.judge_persuasiveness, cfg.eval.judge_informativeness),
    };
    let toxicity = p.toxicity.as_ref().map(StubToxicity::read_path).transpose()?;

    let out = p.out.as_ref().expect("checked");
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    let pool = thread_pool(cfg.eval.workers)?;
    let runs: Vec<Result<SampleRun, String>> = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let decoder = DecoderConfig { seed: stage_seed(cfg.seed, DECODE_STREAM_BASE + i as u64), ..cfg.decoder };
                generate_one(&repo, x, &models, &cfg.retrieval, &cfg.energy, &decoder).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut retrieval = BufWriter::new(fs::File::create(out.join("retrieval.jsonl"))?);
    for (i, run) in runs.iter().enumerate() {
        if let Ok(run) = run {
            run.knowledge.write_lines(&mut retrieval)?;
            run.trace.write_path(traces.join(trace_name(i, &samples[i].id)))?;
        }
    }
    retrieval.flush()?;
    write_jsonl(out.join("generations.jsonl"), runs.iter().filter_map(|r| r.as_ref().ok()).map(|r| &r.generation))?;

    let attempts: Vec<Attempt> = runs
        .into_iter()
        .zip(&samples)
        .map(|(r, x)| Attempt { hs_id: x.id.clone(), outcome: r.map(|r| r.generation) })
        .collect();
    let novelty_corpus: Vec<String> = repo.sentences().map(|s| s.text.clone()).collect();
    let scorers = Scorers {
        classifier: &models.classifier,
        semantic: &models.semantic,
        novelty_corpus: &novelty_corpus,
        judge: &judge,
        toxicity: toxicity.as_ref().map(|t| t as &dyn ToxicityClient),
    };
    let report = pool.install(|| evaluate(&attempts, &scorers));
    write_json(out.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<Validated, Vec<String>> {
        parse_config(src, Path::new("."), &[])
    }

    #[test]
    fn empty_config_is_the_default() {
        let v = parse("").unwrap();
        assert_eq!(v.config, PipelineConfig::default());
        assert!(v.warnings.is_empty());
        let r = &v.config.retrieval;
        assert_eq!((r.k1, r.k2, r.k3), (30, 10, 10));
        assert_eq!((v.config.decoder.iterations, v.config.decoder.step_size, v.config.decoder.max_length), (2000, 0.1, 30));
    }

    #[test]
    fn violations_are_listed_together() {
        let errs = parse("[retrieval]\nk1 = 5\nk2 = 10\n[decoder]\nstep_size = -1.0\n[eval]\njudge_persuasiveness = 2.0").unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("k1 >= k2")));
    }

    #[test]
    fn unknown_keys_warn() {
        let v = parse("colour = 1\n[energy]\nlambda_z = 3.0\n[training.lm]\nkind = \"count\"\nsmoothing = 1").unwrap();
        assert_eq!(v.warnings, vec!["unknown key colour", "unknown key energy.lambda_z", "unknown key training.lm.smoothing"]);
    }

    #[test]
    fn malformed_input_is_reported() {
        assert!(parse("[retrieval").is_err());
        let errs = parse("seed = -3\n[decoder]\niterations = \"many\"").unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn overrides_beat_the_file() {
        let v = parse_config(
            "seed = 1\n[decoder]\niterations = 50",
            Path::new("."),
            &["decoder.iterations=7".into(), "seed=9".into(), "retrieval.counter_prompt=No way.".into()],
        )
        .unwrap();
        assert_eq!((v.config.seed, v.config.decoder.iterations), (9, 7));
        assert_eq!(v.config.retrieval.counter_prompt, "No way.");
        assert!(parse_config("", Path::new("."), &["novalue".into()]).is_err());
    }

    #[test]
    fn lm_table_without_kind_tunes_the_default() {
        let v = parse_config("", Path::new("."), &["training.lm.epochs=3".into()]).unwrap();
        assert!(matches!(v.config.training.lm, LmConfig::Neural(c) if c.epochs == 3));
        let v = parse("[training.lm]\nkind = \"count\"").unwrap();
        assert!(matches!(v.config.training.lm, LmConfig::Count(_)));
    }

    #[test]
    fn missing_paths_are_errors() {
        let errs = parse("[paths]\nhs = \"/nonexistent/hs.jsonl\"\nrepo = \"/nonexistent/repo\"").unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn normalized_config_round_trips() {
        let cfg = parse("seed = 4\n[energy]\ngamma = 2.0").unwrap().config;
        let again = parse(&cfg.to_toml().unwrap()).unwrap().config;
        assert_eq!(cfg, again);
    }
}

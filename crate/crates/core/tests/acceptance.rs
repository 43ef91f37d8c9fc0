//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use counterspeech::classifier::{self, cc_loss, cc_loss_and_grad, cc_loss_from_logits, ClassifierConfig, CnClassifier, LabeledPair};
use counterspeech::corpus::{Comment, HateSpeechSample, Post, Repository};
use counterspeech::decoder::{decode, DecoderConfig, NoiseDecay};
use counterspeech::embed::{
    contrastive_loss_embeddings, cosine, cosine_margin, train_stance_encoder, build_pairs, EmbeddingTable,
    EmbeddingVector, EncoderConfig, EncoderKind, StanceStatement, TextEncoder, TrainConfig,
};
use counterspeech::energy::{
    energy, energy_and_grad, f_lr_and_grad, f_rl_and_grad, f_sim, f_sim_and_grad, left_context, ngram_precision,
    Constraints, EnergyConfig,
};
use counterspeech::eval::{
    bm25_relevance, ngram_retention, novelty, product_mean, valid_score, ClientError, CorpusStats, EvalPair,
    JudgeScores, StubJudge,
};
use counterspeech::gradcheck::{central_difference_matrix, relative_error};
use counterspeech::lm::{
    train_toy_lm, CountLmConfig, Direction, LanguageModelExt, LmConfig, NeuralLm, NeuralLmConfig,
    SoftSequence, ToyLm, UniformLm,
};
use counterspeech::math::{argmax, softmax_temp};
use counterspeech::optim::stage_rng;
use counterspeech::pipeline::{run_pipeline, validate_config_with};
use counterspeech::retrieve::{fit_score, select_comments, select_posts, ssf, Encoders, RetrievalConfig};
use counterspeech::text::{TokenSeq, Vocabulary};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "one-hot / discrete consistency", one_hot_consistency),
        (3, "retrieval oracle equivalence", retrieval_oracles),
        (4, "Langevin descent without noise", langevin_descent),
        (5, "annealing limit", annealing_limit),
        (6, "closed-form checks", closed_forms),
        (7, "training effectiveness", training_effectiveness),
        (8, "hyperparameter defaults", hyperparameter_defaults),
        (9, "end-to-end determinism", end_to_end),
        (10, "metric oracles", metric_oracles),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

const WORDS: [&str; 13] =
    ["they", "are", "people", "too", "and", "deserve", "respect", "not", "hate", "work", "hard", "pay", "taxes"];

fn small_vocab(rng: &mut ChaCha8Rng) -> Vocabulary {
    let k = rng.random_range(5..=WORDS.len());
    Vocabulary::build([WORDS[..k].join(" ")], 1)
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: &Vocabulary, len: usize) -> TokenSeq {
    TokenSeq((0..len).map(|_| rng.random_range(3..vocab.len())).collect())
}

fn random_logits(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, v), |_| rng.random_range(-2.0..2.0))
}

fn soft(l: &Array2<f64>) -> SoftSequence {
    SoftSequence::new(l.clone()).expect("finite logits")
}

struct Stack {
    vocab: Vocabulary,
    x: TokenSeq,
    x_l: TokenSeq,
    y_star: TokenSeq,
    clf: CnClassifier,
    fwd: NeuralLm,
    bwd: NeuralLm,
}

impl Stack {
    fn random(seed: u64) -> Self {
        let mut rng = stage_rng(seed, 1);
        let vocab = small_vocab(&mut rng);
        let lm = NeuralLmConfig { embed_dim: 3, hidden: 5, ..Default::default() };
        let clf = ClassifierConfig { feature_dim: 12, hidden: 5, dim: 3, tau_join: rng.random_range(0.5..1.5), ..Default::default() };
        let x_len = rng.random_range(1..=4);
        let x = random_seq(&mut rng, &vocab, x_len);
        let prompt = random_seq(&mut rng, &vocab, 2);
        let y_len = rng.random_range(2..=5);
        Self {
            x_l: left_context(&x, &prompt),
            y_star: random_seq(&mut rng, &vocab, y_len),
            clf: CnClassifier::new(vocab.clone(), &clf, seed),
            fwd: NeuralLm::new(vocab.clone(), Direction::Forward, &lm, seed + 1),
            bwd: NeuralLm::new(vocab.clone(), Direction::Backward, &lm, seed + 2),
            x,
            vocab,
        }
    }

    fn constraints(&self) -> Constraints<'_> {
        Constraints { x: &self.x, x_l: &self.x_l, y_star: &self.y_star, clf: &self.clf, fwd: &self.fwd, bwd: &self.bwd }
    }
}

fn check_grad(analytic: &Array2<f64>, f: impl FnMut(&Array2<f64>) -> f64, at: &Array2<f64>) -> f64 {
    relative_error(analytic, &central_difference_matrix(f, at, 1e-5))
}

fn gradient_suite() -> Outcome {
    const INSTANCES: u64 = 100;
    let start = Instant::now();
    let mut worst = [0.0f64; 5];
    for i in 0..INSTANCES {
        let k = Stack::random(1000 + i);
        let mut rng = stage_rng(i, 2);
        let v = k.vocab.len();
        let t = rng.random_range(1..=5);
        let tau = rng.random_range(0.5..1.5);
        let l = random_logits(&mut rng, t, v);
        let s = soft(&l);
        let t_sim = rng.random_range(2..=5);
        let l_sim = random_logits(&mut rng, t_sim, v);
        let errs = [
            check_grad(&f_sim_and_grad(&soft(&l_sim), &k.y_star, 2).unwrap().1, |m| f_sim(&soft(m), &k.y_star, 2).unwrap(), &l_sim),
            check_grad(&cc_loss_and_grad(&k.x, &s, &k.clf, t as f64).unwrap().1, |m| cc_loss(&k.x, &soft(m), &k.clf, t as f64).unwrap(), &l),
            check_grad(
                &f_lr_and_grad(&s, &k.x_l, &k.fwd, tau, false).unwrap().1,
                |m| f_lr_and_grad(&soft(m), &k.x_l, &k.fwd, tau, false).unwrap().0,
                &l,
            ),
            check_grad(
                &f_rl_and_grad(&s, &k.bwd, tau, false).unwrap().1,
                |m| f_rl_and_grad(&soft(m), &k.bwd, tau, false).unwrap().0,
                &l,
            ),
            {
                let c = k.constraints();
                let cfg = EnergyConfig { tau_model: tau, ..Default::default() };
                let t2 = rng.random_range(2..=5);
                let l2 = random_logits(&mut rng, t2, v);
                check_grad(&energy_and_grad(&c, &soft(&l2), &cfg).unwrap().1, |m| energy(&c, &soft(m), &cfg).unwrap().total, &l2)
            },
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let elapsed = start.elapsed();
    let names = ["f_sim", "f_cc", "f_lr", "f_rl", "total"];
    let summary: Vec<String> = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    ensure!(worst.iter().all(|&w| w <= 1e-4), "max relative error above 1e-4: {}", summary.join(", "));
    ensure!(elapsed <= Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("{INSTANCES} instances per term, max relative error {}", summary.join(", ")))
}

fn one_hot_consistency() -> Outcome {
    let mut sims = 0;
    let mut worst_lm = 0.0f64;
    let mut worst_clf = 0.0f64;
    for i in 0..50u64 {
        let k = Stack::random(2000 + i);
        let mut rng = stage_rng(i, 3);
        let v = k.vocab.len();
        let y_len = rng.random_range(2..=6);
        let y = random_seq(&mut rng, &k.vocab, y_len);
        // Scale 1e3 makes softmax rows exactly one-hot in f64.
        let hot = SoftSequence::one_hot(&y, v, 1e3).unwrap();
        let want = 1.0 - ngram_precision(&y, &k.y_star, 2).unwrap();
        let got = f_sim(&hot, &k.y_star, 2).unwrap();
        ensure!(got == want, "f_sim {got} != discrete {want} for {y:?} vs {:?}", k.y_star);
        sims += 1;

        for lm in [&k.fwd, &k.bwd] {
            let hard = lm.next_dist(&k.x_l.concat(&y)).unwrap();
            let softd = lm.next_dist_soft(&hot, &k.x_l, 1.0).unwrap();
            worst_lm = worst_lm.max((&hard - &softd).iter().fold(0.0, |m, d| m.max(d.abs())));
        }
        let a = k.clf.logits_hard(&k.x, &y).unwrap();
        let b = k.clf.logits(&k.x, &SoftSequence::one_hot(&y, v, 1e3 * k.clf.tau_join).unwrap()).unwrap();
        worst_clf = worst_clf.max((&a - &b).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    ensure!(worst_lm <= 1e-9, "next_dist_soft deviates by {worst_lm:e}");
    ensure!(worst_clf <= 1e-6, "classifier logits deviate by {worst_clf:e}");
    Ok(format!("{sims} exact f_sim matches, next_dist gap {worst_lm:.1e}, classifier gap {worst_clf:.1e}"))
}

struct RetrievalFixture {
    repo: Repository,
    stance: EmbeddingTable,
    semantic: EmbeddingTable,
    fwd: ToyLm,
    queries: Vec<HateSpeechSample>,
}

const SENTENCE_POOL: [&str; 12] = [
    "They pay taxes.",
    "They work hard.",
    "People deserve respect.",
    "Hate helps nobody.",
    "Most of them work in hospitals.",
    "Crime is not higher among them.",
    "They start businesses.",
    "Respect is not optional.",
    "They pay taxes.",
    "Hard work builds the country.",
    "Facts matter more than fear.",
    "Nobody deserves hate.",
];

fn retrieval_fixture(seed: u64, n_posts: usize, n_comments: usize) -> RetrievalFixture {
    let mut rng = stage_rng(seed, 4);
    // A small palette of directions forces many exact score ties.
    let palette: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let pick = |rng: &mut ChaCha8Rng| EmbeddingVector::try_from(palette.choose(rng).unwrap().clone()).unwrap();
    let mut stance = EmbeddingTable::new(4);
    let mut semantic = EmbeddingTable::new(4);
    let mut posts = Vec::new();
    for i in 0..n_posts {
        let id = format!("p{:03}", rng.random_range(0..1000) * 1000 + i);
        stance.insert(id.clone(), pick(&mut rng)).unwrap();
        posts.push(Post { id, title: format!("post {i}"), body: String::new(), target_tags: Default::default(), score: 0 });
    }
    let mut comments = Vec::new();
    for i in 0..n_comments {
        let id = format!("c{:04}", rng.random_range(0..100) * 10000 + i);
        semantic.insert(id.clone(), pick(&mut rng)).unwrap();
        let k = rng.random_range(1..=3);
        let body = (0..k).map(|_| *SENTENCE_POOL.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let post_id = posts[rng.random_range(0..n_posts)].id.clone();
        comments.push(Comment { id, post_id, body, upvotes: 1, downvotes: 0, delta_awarded: false });
    }
    let queries: Vec<HateSpeechSample> = (0..3)
        .map(|q| {
            let id = format!("hs{q}");
            stance.insert(id.clone(), pick(&mut rng)).unwrap();
            semantic.insert(id.clone(), pick(&mut rng)).unwrap();
            HateSpeechSample { id, text: "they take our jobs and hate us".into(), target: "MIGRANTS".into() }
        })
        .collect();
    let vocab = Vocabulary::build(SENTENCE_POOL.iter().copied().chain(["they take our jobs", "However, I disagree."]), 1);
    let corpus: Vec<TokenSeq> = SENTENCE_POOL.iter().map(|s| vocab.encode(s)).collect();
    let fwd = train_toy_lm(&corpus, &vocab, Direction::Forward, &LmConfig::Count(CountLmConfig::default()), 0).unwrap();
    RetrievalFixture { repo: Repository::new(posts, comments).unwrap(), stance, semantic, fwd, queries }
}

type Ranked = Vec<(String, usize, Option<f64>)>;

/// Scores every post, comment and sentence, then applies the three cuts.
fn brute_force(f: &RetrievalFixture, x: &HateSpeechSample, cfg: &RetrievalConfig) -> (Vec<String>, Vec<String>, Ranked) {
    let hs_st = f.stance.get(&x.id).unwrap();
    let hs_se = f.semantic.get(&x.id).unwrap();
    let sta_of = |pid: &str| cosine(f.stance.get(pid).unwrap(), hs_st).unwrap();
    let mut posts: Vec<(f64, String)> = f.repo.posts().iter().map(|p| (sta_of(&p.id), p.id.clone())).collect();
    posts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    posts.truncate(cfg.k1);
    let kept: Vec<String> = posts.iter().map(|p| p.1.clone()).collect();

    let mut comments: Vec<(f64, &Comment)> = f
        .repo
        .comments()
        .iter()
        .filter(|c| kept.contains(&c.post_id))
        .map(|c| {
            let sem = if cfg.alpha != 0.0 { cfg.alpha * cosine(f.semantic.get(&c.id).unwrap(), hs_se).unwrap() } else { 0.0 };
            (cfg.beta * sta_of(&c.post_id) + sem, c)
        })
        .collect();
    comments.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    comments.truncate(cfg.k2);

    let mut sentences: Vec<(f64, String, usize)> = Vec::new();
    for (_, c) in &comments {
        for s in f.repo.sentences_of(c) {
            sentences.push((fit_score(&s.text, x, cfg, &f.fwd).unwrap(), c.id.clone(), s.index));
        }
    }
    sentences.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    sentences.truncate(cfg.k3);
    (
        kept,
        comments.iter().map(|c| c.1.id.clone()).collect(),
        sentences.into_iter().map(|(fit, c, i)| (c, i, fit.is_finite().then_some(fit))).collect(),
    )
}

fn retrieval_oracles() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let configs = [
        RetrievalConfig { k1: 30, k2: 10, k3: 10, ..Default::default() },
        RetrievalConfig { k1: 120, k2: 60, k3: 25, alpha: 0.8, beta: 0.2, ..Default::default() },
        RetrievalConfig { k1: 500, k2: 400, k3: 40, alpha: 0.0, beta: 1.0, ..Default::default() },
    ];
    for (seed, size) in [(1, (500, 2000)), (2, (40, 150)), (3, (500, 2000))] {
        let f = retrieval_fixture(seed, size.0, size.1);
        let enc = Encoders { stance: &f.stance, semantic: &f.semantic };
        for x in &f.queries {
            for cfg in &configs {
                let (posts, comments, sentences) = brute_force(&f, x, cfg);
                let got_posts = select_posts(&f.repo, x, cfg, enc.stance).unwrap();
                ensure!(got_posts.iter().map(|p| p.post.id.clone()).eq(posts.iter().cloned()), "select_posts differs (seed {seed})");
                let got_comments = select_comments(&f.repo, &got_posts, x, cfg, enc).unwrap();
                ensure!(
                    got_comments.iter().map(|c| c.comment.id.clone()).eq(comments.iter().cloned()),
                    "select_comments differs (seed {seed})"
                );
                let k = ssf(&f.repo, x, cfg, enc, &f.fwd).unwrap();
                let got: Ranked = k.sentences.iter().map(|s| (s.comment_id.clone(), s.sentence_index, s.fit)).collect();
                ensure!(got == sentences, "ssf differs (seed {seed}, {} vs {} sentences)", got.len(), sentences.len());
                ensure!(k.sentences.iter().enumerate().all(|(i, s)| s.rank == i + 1), "ranks are not 1..n");
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed <= Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{checked} query/config cases up to 500 posts / 2000 comments match exactly, ties included"))
}

fn trained_stack(seed: u64) -> (Vocabulary, ToyLm, ToyLm, CnClassifier) {
    let texts = [
        "they are people too",
        "people deserve respect",
        "they work hard and pay taxes",
        "hate helps nobody",
        "they take our jobs",
        "they are a burden",
    ];
    let vocab = Vocabulary::build(texts, 1);
    let corpus: Vec<TokenSeq> = texts.iter().map(|t| vocab.encode(t)).collect();
    let lm = LmConfig::Neural(NeuralLmConfig { embed_dim: 6, hidden: 12, epochs: 40, learning_rate: 0.05, batch_size: 8 });
    let fwd = train_toy_lm(&corpus, &vocab, Direction::Forward, &lm, seed).unwrap();
    let bwd = train_toy_lm(&corpus, &vocab, Direction::Backward, &lm, seed + 1).unwrap();
    let pairs: Vec<LabeledPair> = [
        ("they take our jobs", "they work hard and pay taxes", 1),
        ("they take our jobs", "people deserve respect", 1),
        ("they are a burden", "they are people too", 1),
        ("they are a burden", "they take our jobs", 0),
        ("they take our jobs", "they are a burden", 0),
        ("they are a burden", "hate", 0),
    ]
    .iter()
    .map(|(h, c, l)| LabeledPair { hs: vocab.encode(h), candidate: vocab.encode(c), label: *l })
    .collect();
    let cfg = ClassifierConfig { feature_dim: 32, hidden: 8, dim: 4, epochs: 60, ..Default::default() };
    let clf = classifier::train(&pairs, &vocab, &cfg, seed + 2).unwrap();
    (vocab, fwd, bwd, clf)
}

fn langevin_descent() -> Outcome {
    let knowledge = ["they work hard and pay taxes", "people deserve respect", "they are people too", "hate helps nobody"];
    let mut worst = 1.0f64;
    for seed in 0..10u64 {
        let (vocab, fwd, bwd, clf) = trained_stack(seed);
        let x = vocab.encode(if seed % 2 == 0 { "they take our jobs" } else { "they are a burden" });
        let x_l = left_context(&x, &vocab.encode("hate"));
        let y_star = vocab.encode(knowledge[seed as usize % knowledge.len()]);
        let c = Constraints { x: &x, x_l: &x_l, y_star: &y_star, clf: &clf, fwd: &fwd, bwd: &bwd };
        let cfg = DecoderConfig {
            iterations: 200,
            step_size: 1e-3,
            max_length: 6,
            sigma0: 0.0,
            noise_decay: NoiseDecay::Constant,
            seed,
            ..Default::default()
        };
        let e: Vec<f64> = decode(&c, &EnergyConfig::default(), &cfg).unwrap().trace.energies.iter().map(|b| b.total).collect();
        let down = e.windows(2).filter(|w| w[1] < w[0]).count();
        let share = down as f64 / (e.len() - 1) as f64;
        worst = worst.min(share);
        ensure!(share >= 0.95, "seed {seed}: energy fell in only {:.1}% of iterations", share * 100.0);
        ensure!(e[e.len() - 1] < e[0], "seed {seed}: final {} >= initial {}", e[e.len() - 1], e[0]);
    }
    Ok(format!("10 seeded fixtures, energy fell in at least {:.1}% of 200 iterations", worst * 100.0))
}

fn annealing_limit() -> Outcome {
    let mut rng = stage_rng(5, 5);
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let logits = Array1::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));
        let top = argmax(logits.view());
        let p = softmax_temp(logits.view(), 1e-6);
        ensure!(argmax(p.view()) == top && p[top] >= 1.0 - 1e-6, "max probability {} at {}", p[top], argmax(p.view()));
        for tau in [1e-3, 0.1, 1.0, 10.0, 1e3] {
            ensure!(argmax(softmax_temp(logits.view(), tau).view()) == top, "argmax moved at tau {tau}");
        }
    }
    Ok("1000 random logit vectors".into())
}

fn closed_forms() -> Outcome {
    let mut rng = stage_rng(6, 6);
    for _ in 0..20 {
        let vocab = small_vocab(&mut rng);
        let lm = UniformLm { vocab: vocab.clone(), direction: Direction::Forward };
        let n = rng.random_range(2..10);
        let seq = random_seq(&mut rng, &vocab, n);
        let ppl = lm.perplexity(&seq).unwrap();
        ensure!((ppl - vocab.len() as f64).abs() <= 1e-9, "uniform perplexity {ppl} for |V| = {}", vocab.len());
    }
    for s in [-3.0, 0.0, 2.5, 40.0] {
        let l = cc_loss_from_logits(Array1::from(vec![s, s]).view(), 1.0);
        ensure!((l - std::f64::consts::LN_2).abs() <= 1e-9, "symmetric cc_loss {l}");
    }
    let z = Array1::from(vec![0.3, -1.2, 0.5]);
    let neg = Array1::from(vec![1.2, 0.3, 0.0]);
    let (loss, _) = contrastive_loss_embeddings(&[z.clone()], &[z.clone()], &[neg], 1.0).unwrap();
    let e = std::f64::consts::E;
    let want = -(e / (e + 1.0)).ln();
    ensure!((loss - want).abs() <= 1e-9, "contrastive loss {loss} vs {want}");
    Ok(format!("uniform perplexity = |V|, cc_loss = ln 2, contrastive = {want:.12}"))
}

fn training_effectiveness() -> Outcome {
    let mut data = Vec::new();
    let favor = ["they deserve respect", "they work hard", "they help us", "they are welcome", "they make us strong"];
    let against = ["they are a burden", "they steal jobs", "they bring crime", "they must leave", "they ruin everything"];
    for target in ["MIGRANTS", "WOMEN", "REFUGEES"] {
        for s in favor {
            data.push(StanceStatement { text: s.into(), target: target.into(), polarity: "favor".into() });
        }
        for s in against {
            data.push(StanceStatement { text: s.into(), target: target.into(), polarity: "against".into() });
        }
    }
    let triples = build_pairs(&data).triples;
    let init = TextEncoder::new(EncoderKind::Stance, EncoderConfig { feature_dim: 64, hidden: 16, dim: 8 }, &mut stage_rng(7, 0));
    let before = cosine_margin(&triples, &init).unwrap();
    let cfg = TrainConfig { epochs: 50, temperature: 0.1, seed: 7, ..Default::default() };
    let after = cosine_margin(&triples, &train_stance_encoder(&triples, init, &cfg).unwrap().encoder).unwrap();
    ensure!(after > before, "stance margin {before:.4} -> {after:.4}");

    let good = ["respect", "facts", "welcome", "equal", "help", "support"];
    let bad = ["burden", "crime", "leave", "ruin", "steal", "dirty"];
    let fillers = ["they", "are", "we", "people", "all", "now"];
    let vocab = Vocabulary::build([good.join(" "), bad.join(" "), fillers.join(" ")], 1);
    let mut rng = stage_rng(8, 0);
    let mut pairs = Vec::new();
    for i in 0..80 {
        let label = i % 2;
        let cue = if label == 1 { good } else { bad };
        let text = format!("{} {} {}", fillers.choose(&mut rng).unwrap(), cue.choose(&mut rng).unwrap(), fillers.choose(&mut rng).unwrap());
        let hs = format!("{} {}", fillers.choose(&mut rng).unwrap(), bad.choose(&mut rng).unwrap());
        pairs.push(LabeledPair { hs: vocab.encode(&hs), candidate: vocab.encode(&text), label });
    }
    let clf_cfg = ClassifierConfig { epochs: 200, ..Default::default() };
    let clf = classifier::train(&pairs, &vocab, &clf_cfg, 8).unwrap();
    let acc = classifier::accuracy(&clf, &pairs).unwrap();
    ensure!(acc >= 0.95, "classifier training accuracy {acc}");
    Ok(format!("stance margin {before:.4} -> {after:.4}; classifier accuracy {:.1}% after 200 epochs", acc * 100.0))
}

fn hyperparameter_defaults() -> Outcome {
    let r = RetrievalConfig::default();
    let d = DecoderConfig::default();
    let e = EnergyConfig::default();
    ensure!((r.k1, r.k2, r.k3) == (30, 10, 10), "k = {:?}", (r.k1, r.k2, r.k3));
    ensure!(d.iterations == 2000 && d.step_size == 0.1 && d.max_length == 30, "decoder defaults {d:?}");
    let l = [e.lambda_a, e.lambda_b, e.lambda_c_lr, e.lambda_c_rl];
    ensure!(l == [0.25, 0.5, 0.225, 0.025], "lambda = {l:?}");
    let flu = e.lambda_c_lr + e.lambda_c_rl;
    ensure!((e.lambda_b / e.lambda_a - 2.0).abs() < 1e-12 && (e.lambda_a / flu - 1.0).abs() < 1e-12, "not 1:2:1");
    ensure!((e.lambda_c_lr / e.lambda_c_rl - 9.0).abs() < 1e-12, "not 9:1");
    let from_empty = counterspeech::pipeline::parse_config("", Path::new("."), &[]).map_err(|e| e.join("; "))?;
    ensure!(from_empty.config.retrieval == r && from_empty.config.decoder == d && from_empty.config.energy == e, "empty config differs");
    Ok("k = (30, 10, 10), N = 2000, eta = 0.1, length 30, lambda 1:2:1 with 9:1 fluency split".into())
}

fn fixture_config() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini/pipeline.toml")
}

fn run_fixture(dir: &Path) -> Result<counterspeech::pipeline::Report, String> {
    let set = |k: &str, sub: &str| format!("paths.{k}={:?}", dir.join(sub).display().to_string());
    let overrides = [set("out", "report"), set("repo", "repo"), set("models", "models")];
    let v = validate_config_with(fixture_config(), &overrides).map_err(|e| e.join("; "))?;
    run_pipeline(&v.config).map_err(|e| e.to_string())
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_fixture(a.path())?;
    run_fixture(b.path())?;
    let elapsed = start.elapsed();
    let (ta, tb) = (tree_bytes(&a.path().join("report")), tree_bytes(&b.path().join("report")));
    ensure!(ta.len() > 3 && ta == tb, "outputs differ between runs ({} vs {} files)", ta.len(), tb.len());
    ensure!(tree_bytes(&a.path().join("models")) == tree_bytes(&b.path().join("models")), "model files differ");
    ensure!(report.failed == 0 && !report.rows.is_empty(), "{} of {} samples failed", report.failed, report.rows.len());
    for row in &report.rows {
        let m = row.metrics.as_ref().unwrap();
        let r = m.retention_ngram.unwrap_or(0.0);
        ensure!(r > 0.0, "{}: retention ngram_rate {r}", row.hs_id);
        ensure!(m.counter_probability > 0.5, "{}: counter probability {}", row.hs_id, m.counter_probability);
    }
    ensure!(elapsed <= Duration::from_secs(600), "two runs took {elapsed:?}");
    let s = report.summary.unwrap();
    Ok(format!(
        "{} samples, byte-identical over two runs, mean retention {:.3}, SROC {:.2}",
        report.rows.len(),
        s.retention_ngram.unwrap_or(0.0),
        s.sroc
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn metric_oracles() -> Outcome {
    // Values from an independent script over the same texts.
    let docs = [
        "Migrants pay taxes and fill empty jobs.",
        "Refugees start businesses and create jobs for locals.",
        "Women lead companies and earn degrees.",
        "Most migrants work hard and pay taxes every year, and they pay on time.",
        "Hate helps nobody; jobs grow when people work together.",
    ];
    let bm25 = [3.7684172177207342, 0.858610363564984, 0.3307318837687932, 2.781485666436616, 0.5340313333769101];
    let stats = CorpusStats::from_documents(&docs);
    for (d, want) in docs.iter().zip(bm25) {
        let got = bm25_relevance(d, "Migrants steal jobs and never pay taxes.", &stats);
        ensure!(close(got, want), "BM25 {got} vs {want} for {d:?}");
    }
    let corpus = ["They pay taxes.", "Migrants work in hospitals and pay taxes.", "Jobs are created by refugees.", "Women lead."];
    for (cn, want) in [("Migrants pay taxes and work hard.", 0.375), ("Refugees create jobs for everyone.", 0.75)] {
        let got = novelty(cn, &corpus).unwrap();
        ensure!(close(got, want), "novelty {got} vs {want}");
    }
    let r = ngram_retention(
        "Migrants pay taxes and fill jobs that stay empty.",
        "Migrants pay taxes and fill jobs that would otherwise stay empty.",
        2,
    )
    .unwrap();
    ensure!(close(r, 0.7), "retention {r}");

    let verdicts = [true, false, true, true, false];
    let p = [0.8, 0.9, 0.35, 0.6, 0.1];
    let i = [0.7, 0.2, 0.55, 0.9, 0.3];
    let v = product_mean(
        verdicts
            .iter()
            .zip(p.iter().zip(i))
            .map(|(&r, (&p, i))| (r, Ok::<_, ClientError>(JudgeScores { persuasiveness: p, informativeness: i })))
            .collect(),
    );
    ensure!(close(v.per_valid, 0.35) && close(v.inf_valid, 0.43), "valid scores {} {}", v.per_valid, v.inf_valid);

    // The same product-mean through the classifier and a recorded judge.
    let (vocab, _, _, clf) = trained_stack(3);
    let cns = ["they work hard and pay taxes", "they are a burden", "people deserve respect", "they take our jobs"];
    let mut judge = StubJudge::default();
    let mut want = (0.0, 0.0);
    let pairs: Vec<EvalPair> = cns
        .iter()
        .enumerate()
        .map(|(k, cn)| {
            let s = JudgeScores { persuasiveness: 0.1 + 0.2 * k as f64, informativeness: 0.9 - 0.2 * k as f64 };
            judge.recorded.insert(cn.to_string(), s);
            let logits = clf.logits_hard(&vocab.encode("they take our jobs"), &vocab.encode(cn)).unwrap();
            let r = if logits[1] > logits[0] { 1.0 } else { 0.0 };
            want.0 += r * s.persuasiveness / cns.len() as f64;
            want.1 += r * s.informativeness / cns.len() as f64;
            EvalPair { hs: "they take our jobs".into(), cn: cn.to_string() }
        })
        .collect();
    let got = valid_score(&pairs, &clf, &judge).unwrap();
    ensure!(close(got.per_valid, want.0) && close(got.inf_valid, want.1), "valid_score {got:?} vs {want:?}");
    Ok("BM25 (5 docs), novelty, retention and valid_score match to 1e-9".into())
}

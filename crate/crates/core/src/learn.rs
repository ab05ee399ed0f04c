//! Imitation learning against a dynamic oracle: mixed agent/expert
//! roll-outs, the discounted negative log-likelihood objective, plain SGD,
//! finite-difference gradient checking, and JSON checkpoints.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

use crate::corpus::{Corpus, Document, Ontology, TemplateInstance};
use crate::embed::{embed_tokens, encode_spans, EmbedderConfig, SpanEncoding};
use crate::engine::{gold_assignment, state_input, EngineError, EpisodeState};
use crate::model::{Head, Model, TapeModel};
use crate::policy::{action_log_prob, action_log_prob_value, SlotVocab};
use crate::tape::{Tape, Vid};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("expert policy needs a nonempty gold set")]
    EmptyGoldSet,
    #[error("training diverged at epoch {epoch}: non-finite parameters")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("checkpoint ontology mismatch: saved {saved}, current {current}")]
    OntologyMismatch { saved: String, current: String },
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Expert temperature β: the named limits plus explicit temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta {
    /// Point mass on the dataset-order-first remaining gold template.
    Fixed,
    /// Point mass on the agent-likeliest remaining gold template (β → 0).
    Argmax,
    /// Softmax of the agent log probabilities (β = 1).
    Xent,
    /// 1/|Ā| each (β → ∞).
    Uniform,
    /// Softmax of the agent log probabilities divided by β.
    Temperature(f64),
}

impl std::str::FromStr for Beta {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Beta::Fixed),
            "argmax" => Ok(Beta::Argmax),
            "xent" => Ok(Beta::Xent),
            "uniform" => Ok(Beta::Uniform),
            other => match other.parse::<f64>() {
                Ok(b) if b > 0.0 && b.is_finite() => Ok(Beta::Temperature(b)),
                _ => Err(format!(
                    "unknown beta `{other}` (expected fixed, argmax, xent, uniform or a positive temperature)"
                )),
            },
        }
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Beta::Fixed => f.write_str("fixed"),
            Beta::Argmax => f.write_str("argmax"),
            Beta::Xent => f.write_str("xent"),
            Beta::Uniform => f.write_str("uniform"),
            Beta::Temperature(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Agent roll-out rate: probability a step executes the agent's greedy
    /// action instead of the sampled oracle action.
    pub alpha: f64,
    pub beta: Beta,
    /// Discount on the per-step losses, in (0, 1].
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub head: Head,
    /// Cap on executed steps per episode.
    pub max_iter: usize,
    pub embedder: EmbedderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            beta: Beta::Xent,
            gamma: 1.0,
            learning_rate: 0.05,
            epochs: 30,
            seed: 0,
            head: Head::Independent,
            max_iter: 10,
            embedder: EmbedderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |msg: String| Err(LearnError::BadConfig(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if let Beta::Temperature(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("temperature {b} must be positive"));
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        self.embedder
            .validate()
            .map_err(|e| LearnError::BadConfig(e.to_string()))
    }
}

/// Expert distribution over the remaining gold templates, given the agent's
/// log probability for each (dataset order).
pub fn expert_policy(agent_log_probs: &[f64], beta: Beta) -> Result<Vec<f64>, LearnError> {
    let n = agent_log_probs.len();
    if n == 0 {
        return Err(LearnError::EmptyGoldSet);
    }
    Ok(match beta {
        Beta::Fixed => {
            let mut w = vec![0.0; n];
            w[0] = 1.0;
            w
        }
        Beta::Argmax => {
            let mut best = 0;
            for (i, &lp) in agent_log_probs.iter().enumerate().skip(1) {
                if lp > agent_log_probs[best] {
                    best = i;
                }
            }
            let mut w = vec![0.0; n];
            w[best] = 1.0;
            w
        }
        Beta::Uniform => vec![1.0 / n as f64; n],
        Beta::Xent => softmax_div(agent_log_probs, 1.0),
        Beta::Temperature(b) => softmax_div(agent_log_probs, b),
    })
}

fn softmax_div(lps: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = lps.iter().map(|&l| l / beta).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// One executed step of a recorded episode.
#[derive(Debug, Clone)]
pub struct EpisodeStep {
    pub executed: Vec<usize>,
    pub oracle: Vec<usize>,
    /// −γᵏ · log π(a*ₖ) at recording time.
    pub loss: f64,
}

/// One template type's episode on one document.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub type_name: String,
    pub steps: Vec<EpisodeStep>,
}

/// Rolls one episode on an already-registered tape. Per step: sample the
/// oracle action a* from the expert over the unconsumed gold templates (the
/// all-ε stop action once none remain), execute the agent's greedy action
/// with probability α and a* otherwise, and pay −γᵏ log π(a*). A gold
/// template is consumed when the executed assignment equals it exactly.
#[allow(clippy::too_many_arguments)]
fn run_episode(
    t: &mut Tape,
    tm: &TapeModel,
    vocab: &SlotVocab,
    ontology: &Ontology,
    doc: &Document,
    enc: &SpanEncoding,
    type_name: &str,
    gold_actions: &[Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vid>, EpisodeRecord), LearnError> {
    let mut remaining: Vec<Vec<usize>> = gold_actions.to_vec();
    let mut state = EpisodeState::new(t, enc.n_spans(), cfg.embedder.d);
    let mut terms = Vec::new();
    let mut record = EpisodeRecord {
        type_name: type_name.to_string(),
        steps: Vec::new(),
    };
    let stop = vec![vocab.epsilon(); enc.n_spans()];
    let mut k = 0usize;
    loop {
        let x = state_input(t, enc, &state)?;
        let out = tm
            .run_policy(t, vocab, cfg.head, type_name, &x)
            .map_err(EngineError::from)?;
        let stopping = remaining.is_empty();
        let oracle = if stopping {
            stop.clone()
        } else {
            let lps: Vec<f64> = remaining
                .iter()
                .map(|a| action_log_prob_value(t, &out.dist, a))
                .collect::<Result<_, _>>()
                .map_err(EngineError::from)?;
            let weights = expert_policy(&lps, cfg.beta)?;
            remaining[sample_index(&weights, rng)].clone()
        };
        let executed = if !stopping && rng.gen_bool(cfg.alpha) {
            out.dist.greedy(t)
        } else {
            oracle.clone()
        };
        let lp = action_log_prob(t, &out.dist, &oracle).map_err(EngineError::from)?;
        let gk = t.leaf(cfg.gamma.powi(k as i32));
        let term = t.mul(gk, lp);
        terms.push(term);
        record.steps.push(EpisodeStep {
            executed: executed.clone(),
            oracle,
            loss: -t.value(term),
        });
        k += 1;
        if stopping {
            break;
        }
        if let Some(pos) = remaining.iter().position(|g| g == &executed) {
            remaining.remove(pos);
        }
        state.transition(
            t,
            &tm.policy.slot_embeddings,
            &tm.gru,
            vocab,
            ontology,
            doc,
            type_name,
            &executed,
            out.summary,
        )?;
        if k >= cfg.max_iter {
            break;
        }
    }
    Ok((terms, record))
}

/// Gold assignments for one (document, template type), dataset order.
fn gold_actions_for(
    doc: &Document,
    vocab: &SlotVocab,
    gold: &[TemplateInstance],
    type_name: &str,
) -> Vec<Vec<usize>> {
    gold.iter()
        .filter(|i| i.template_type == type_name)
        .map(|i| gold_assignment(doc, vocab, i))
        .collect()
}

fn sum_terms(t: &mut Tape, terms: &[Vid]) -> Vid {
    let mut total = terms[0];
    for &v in &terms[1..] {
        total = t.add(total, v);
    }
    total
}

pub struct TrainReport {
    pub model: Model,
    /// Mean per-step loss, one entry per epoch.
    pub trace: Vec<f64>,
    /// Recorded episodes of the final epoch.
    pub last_epoch: Vec<EpisodeRecord>,
}

static NO_GOLD: Vec<TemplateInstance> = Vec::new();

/// Trains a fresh model on the corpus: per epoch, per document, per template
/// type, one episode, one backward pass, one SGD step.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainReport, LearnError> {
    cfg.validate()?;
    let vocab = SlotVocab::new(&corpus.ontology);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg.embedder, &vocab, &mut rng);
    let token_matrices: Vec<Vec<Vec<f64>>> = corpus
        .documents
        .iter()
        .map(|d| embed_tokens(d, &cfg.embedder))
        .collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut last_epoch = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut n_steps = 0usize;
        last_epoch.clear();
        for (di, doc) in corpus.documents.iter().enumerate() {
            let gold = corpus.gold.get(&doc.id).unwrap_or(&NO_GOLD);
            for ty in &corpus.ontology.template_types {
                let gold_actions = gold_actions_for(doc, &vocab, gold, &ty.name);
                let mut t = Tape::new();
                let tm = model.register(&mut t);
                let enc = encode_spans(&mut t, doc, &token_matrices[di], &tm.encoder, &cfg.embedder)
                    .map_err(EngineError::from)?;
                let (terms, record) = run_episode(
                    &mut t,
                    &tm,
                    &vocab,
                    &corpus.ontology,
                    doc,
                    &enc,
                    &ty.name,
                    &gold_actions,
                    cfg,
                    &mut rng,
                )?;
                let total = sum_terms(&mut t, &terms);
                let loss = t.neg(total);
                loss_sum += t.value(loss);
                n_steps += terms.len();
                last_epoch.push(record);

                let grads = t.backward(loss);
                let ranges = tm.ranges();
                let mut params = model.params_mut();
                debug_assert_eq!(ranges.len(), params.len());
                for (range, param) in ranges.iter().zip(params.iter_mut()) {
                    for (j, vid) in range.iter().enumerate() {
                        param.data[j] -= cfg.learning_rate * grads.get(vid);
                    }
                }
                if !model.all_finite() {
                    return Err(LearnError::Divergence { epoch });
                }
            }
        }
        trace.push(if n_steps == 0 {
            0.0
        } else {
            loss_sum / n_steps as f64
        });
    }
    Ok(TrainReport {
        model,
        trace,
        last_epoch,
    })
}

/// Records the episodes a fixed model would run on one document, without
/// updating anything. Seeded by `cfg.seed`.
pub fn record_episodes(
    model: &Model,
    ontology: &Ontology,
    doc: &Document,
    gold: &[TemplateInstance],
    cfg: &TrainConfig,
) -> Result<Vec<EpisodeRecord>, LearnError> {
    cfg.validate()?;
    let vocab = SlotVocab::new(ontology);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let token_matrix = embed_tokens(doc, &model.embedder);
    let mut records = Vec::new();
    for ty in &ontology.template_types {
        let gold_actions = gold_actions_for(doc, &vocab, gold, &ty.name);
        let mut t = Tape::new();
        let tm = model.register(&mut t);
        let enc = encode_spans(&mut t, doc, &token_matrix, &tm.encoder, &model.embedder)
            .map_err(EngineError::from)?;
        let (_, record) = run_episode(
            &mut t,
            &tm,
            &vocab,
            ontology,
            doc,
            &enc,
            &ty.name,
            &gold_actions,
            cfg,
            &mut rng,
        )?;
        records.push(record);
    }
    Ok(records)
}

/// Replays frozen episodes against the model's current parameters and returns
/// the total loss, plus per-parameter gradients when requested.
fn replay(
    model: &Model,
    ontology: &Ontology,
    doc: &Document,
    token_matrix: &[Vec<f64>],
    records: &[EpisodeRecord],
    cfg: &TrainConfig,
    want_grads: bool,
) -> Result<(f64, Vec<Vec<f64>>), LearnError> {
    let vocab = SlotVocab::new(ontology);
    let mut total_loss = 0.0;
    let mut acc: Vec<Vec<f64>> = if want_grads {
        model.params().iter().map(|p| vec![0.0; p.data.len()]).collect()
    } else {
        Vec::new()
    };
    for rec in records {
        let mut t = Tape::new();
        let tm = model.register(&mut t);
        let enc = encode_spans(&mut t, doc, token_matrix, &tm.encoder, &model.embedder)
            .map_err(EngineError::from)?;
        let mut state = EpisodeState::new(&mut t, enc.n_spans(), model.embedder.d);
        let mut terms = Vec::new();
        for (k, step) in rec.steps.iter().enumerate() {
            let x = state_input(&mut t, &enc, &state)?;
            let out = tm
                .run_policy(&mut t, &vocab, cfg.head, &rec.type_name, &x)
                .map_err(EngineError::from)?;
            let lp =
                action_log_prob(&mut t, &out.dist, &step.oracle).map_err(EngineError::from)?;
            let gk = t.leaf(cfg.gamma.powi(k as i32));
            terms.push(t.mul(gk, lp));
            state.transition(
                &mut t,
                &tm.policy.slot_embeddings,
                &tm.gru,
                &vocab,
                ontology,
                doc,
                &rec.type_name,
                &step.executed,
                out.summary,
            )?;
        }
        if terms.is_empty() {
            continue;
        }
        let total = sum_terms(&mut t, &terms);
        let loss = t.neg(total);
        total_loss += t.value(loss);
        if want_grads {
            let grads = t.backward(loss);
            for (range, slot) in tm.ranges().iter().zip(acc.iter_mut()) {
                for (j, vid) in range.iter().enumerate() {
                    slot[j] += grads.get(vid);
                }
            }
        }
    }
    Ok((total_loss, acc))
}

/// Compares every parameter's tape gradient against central finite
/// differences of the frozen-episode loss; returns the max relative error
/// |g − fd| / max(1, |g|, |fd|).
// pi/j walk the parameter tensors and the gradient table in lockstep.
#[allow(clippy::needless_range_loop)]
pub fn grad_check(
    model: &Model,
    ontology: &Ontology,
    doc: &Document,
    gold: &[TemplateInstance],
    cfg: &TrainConfig,
    epsilon: f64,
) -> Result<f64, LearnError> {
    assert!(epsilon > 0.0, "finite-difference step must be positive");
    let records = record_episodes(model, ontology, doc, gold, cfg)?;
    let token_matrix = embed_tokens(doc, &model.embedder);
    let (_, grads) = replay(model, ontology, doc, &token_matrix, &records, cfg, true)?;

    let mut work = model.clone();
    let n_params = work.params().len();
    let mut max_rel = 0.0f64;
    for pi in 0..n_params {
        for j in 0..work.params()[pi].data.len() {
            let orig = work.params()[pi].data[j];
            work.params_mut()[pi].data[j] = orig + epsilon;
            let (plus, _) = replay(&work, ontology, doc, &token_matrix, &records, cfg, false)?;
            work.params_mut()[pi].data[j] = orig - epsilon;
            let (minus, _) = replay(&work, ontology, doc, &token_matrix, &records, cfg, false)?;
            work.params_mut()[pi].data[j] = orig;
            let fd = (plus - minus) / (2.0 * epsilon);
            let g = grads[pi][j];
            let rel = (g - fd).abs() / 1.0f64.max(g.abs()).max(fd.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    ontology_sha256: String,
    config: TrainConfig,
    model: Model,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    cfg: &TrainConfig,
    ontology: &Ontology,
) -> Result<(), LearnError> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        ontology_sha256: ontology.hash(),
        config: *cfg,
        model: model.clone(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &ck)?;
    Ok(())
}

/// Loads a checkpoint and verifies it was trained against this ontology.
pub fn load_checkpoint(path: &Path, ontology: &Ontology) -> Result<(Model, TrainConfig), LearnError> {
    let file = std::fs::File::open(path)?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(LearnError::BadVersion(ck.version));
    }
    let current = ontology.hash();
    if ck.ontology_sha256 != current {
        return Err(LearnError::OntologyMismatch {
            saved: ck.ontology_sha256,
            current,
        });
    }
    Ok((ck.model, ck.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;

    fn tiny_corpus(seed: u64) -> Corpus {
        let cfg = SynthConfig {
            n_docs: 2,
            templates_per_doc_range: [1, 2],
            n_template_types: 1,
            slots_per_type: 2,
            fillers_per_slot: 3,
            distractor_vocab: 4,
            distractor_rate: 0.2,
            ..SynthConfig::new(seed)
        };
        crate::synth::generate(&cfg).unwrap()
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            alpha: 0.0,
            beta: Beta::Fixed,
            gamma: 1.0,
            learning_rate: 0.1,
            epochs: 4,
            seed: 7,
            head: Head::Independent,
            max_iter: 6,
            embedder: EmbedderConfig::new(8, 13).unwrap(),
        }
    }

    #[test]
    fn expert_policy_named_settings() {
        let lps = [0.6f64.ln(), 0.2f64.ln()];
        let xent = expert_policy(&lps, Beta::Xent).unwrap();
        assert!((xent[0] - 0.75).abs() < 1e-12);
        assert!((xent[1] - 0.25).abs() < 1e-12);

        let uniform = expert_policy(&[0.0; 4], Beta::Uniform).unwrap();
        assert_eq!(uniform, vec![0.25; 4]);

        assert_eq!(expert_policy(&lps, Beta::Fixed).unwrap(), vec![1.0, 0.0]);
        let argmax = expert_policy(&[-3.0, -1.0, -2.0], Beta::Argmax).unwrap();
        assert_eq!(argmax, vec![0.0, 1.0, 0.0]);

        // β = 0.5 squares the probabilities before normalizing.
        let sharp = expert_policy(&lps, Beta::Temperature(0.5)).unwrap();
        assert!((sharp[0] - 0.9).abs() < 1e-12);
        assert!((sharp[1] - 0.1).abs() < 1e-12);

        // Singleton support is a point mass under every setting.
        for beta in [Beta::Fixed, Beta::Argmax, Beta::Xent, Beta::Uniform] {
            assert_eq!(expert_policy(&[-0.5], beta).unwrap(), vec![1.0]);
        }
        assert!(matches!(
            expert_policy(&[], Beta::Xent),
            Err(LearnError::EmptyGoldSet)
        ));
    }

    #[test]
    fn beta_parses_from_cli_names() {
        assert_eq!("fixed".parse::<Beta>().unwrap(), Beta::Fixed);
        assert_eq!("xent".parse::<Beta>().unwrap(), Beta::Xent);
        assert_eq!("0.7".parse::<Beta>().unwrap(), Beta::Temperature(0.7));
        assert!("-1".parse::<Beta>().is_err());
        assert!("spicy".parse::<Beta>().is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = tiny_train_config();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { alpha: 1.5, ..ok },
            TrainConfig { gamma: 0.0, ..ok },
            TrainConfig { gamma: 1.5, ..ok },
            TrainConfig { learning_rate: 0.0, ..ok },
            TrainConfig { beta: Beta::Temperature(-2.0), ..ok },
            TrainConfig { max_iter: 0, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn teacher_forcing_follows_dataset_order() {
        let corpus = tiny_corpus(3);
        let cfg = tiny_train_config();
        let vocab = SlotVocab::new(&corpus.ontology);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(cfg.embedder, &vocab, &mut rng);

        let doc = &corpus.documents[0];
        let gold = &corpus.gold[&doc.id];
        let records = record_episodes(&model, &corpus.ontology, doc, gold, &cfg).unwrap();
        let rec = &records[0];
        let expected = gold_actions_for(doc, &vocab, gold, &rec.type_name);
        assert_eq!(rec.steps.len(), expected.len() + 1);
        for (step, want) in rec.steps.iter().zip(&expected) {
            assert_eq!(step.oracle, *want);
            // α = 0: executed equals the oracle action.
            assert_eq!(step.executed, *want);
        }
        let last = rec.steps.last().unwrap();
        assert!(last.oracle.iter().all(|&a| a == vocab.epsilon()));
    }

    #[test]
    fn discount_scales_later_steps() {
        let corpus = tiny_corpus(5);
        // Find a document with at least 2 gold templates so the episode has
        // a step at k = 2 (the stop step at worst).
        let cfg_full = tiny_train_config();
        let cfg_half = TrainConfig {
            gamma: 0.5,
            ..cfg_full
        };
        let vocab = SlotVocab::new(&corpus.ontology);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::init(cfg_full.embedder, &vocab, &mut rng);
        let doc = &corpus.documents[0];
        let gold = &corpus.gold[&doc.id];
        let full = record_episodes(&model, &corpus.ontology, doc, gold, &cfg_full).unwrap();
        let half = record_episodes(&model, &corpus.ontology, doc, gold, &cfg_half).unwrap();
        for (f, h) in full.iter().zip(&half) {
            assert_eq!(f.steps.len(), h.steps.len());
            for (k, (fs, hs)) in f.steps.iter().zip(&h.steps).enumerate() {
                // Identical trajectories, so losses differ by exactly γᵏ.
                assert_eq!(fs.oracle, hs.oracle);
                let want = fs.loss * 0.5f64.powi(k as i32);
                assert!(
                    (hs.loss - want).abs() < 1e-12,
                    "step {k}: {} vs {}",
                    hs.loss,
                    want
                );
            }
        }
    }

    #[test]
    fn loss_decreases_under_teacher_forcing() {
        let corpus = tiny_corpus(1);
        let cfg = TrainConfig {
            epochs: 25,
            ..tiny_train_config()
        };
        let report = train(&corpus, &cfg).unwrap();
        assert_eq!(report.trace.len(), 25);
        let first = report.trace[0];
        let last = *report.trace.last().unwrap();
        assert!(
            last < first,
            "mean loss should fall: first {first}, last {last}"
        );
        assert!(report.trace.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let corpus = tiny_corpus(2);
        let cfg = TrainConfig {
            alpha: 0.6,
            beta: Beta::Xent,
            epochs: 3,
            ..tiny_train_config()
        };
        let a = train(&corpus, &cfg).unwrap();
        let b = train(&corpus, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        for (pa, pb) in a.model.params().iter().zip(b.model.params().iter()) {
            assert_eq!(pa.data, pb.data);
        }
    }

    #[test]
    fn empty_gold_trains_the_stop_action() {
        let corpus = tiny_corpus(4);
        let cfg = tiny_train_config();
        let vocab = SlotVocab::new(&corpus.ontology);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(cfg.embedder, &vocab, &mut rng);
        let doc = &corpus.documents[0];
        let records = record_episodes(&model, &corpus.ontology, doc, &[], &cfg).unwrap();
        for rec in &records {
            assert_eq!(rec.steps.len(), 1);
            let step = &rec.steps[0];
            assert!(step.oracle.iter().all(|&a| a == vocab.epsilon()));
            assert!(step.loss >= 0.0);
        }
    }

    #[test]
    fn runaway_learning_rate_is_reported_as_divergence() {
        let corpus = tiny_corpus(6);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..tiny_train_config()
        };
        match train(&corpus, &cfg) {
            Err(LearnError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|r| r.trace)),
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_both_heads() {
        let corpus = tiny_corpus(8);
        let doc = &corpus.documents[0];
        let gold = &corpus.gold[&doc.id];
        for head in [Head::Independent, Head::Joint] {
            let cfg = TrainConfig {
                head,
                embedder: EmbedderConfig::new(4, 5).unwrap(),
                ..tiny_train_config()
            };
            let vocab = SlotVocab::new(&corpus.ontology);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let model = Model::init(cfg.embedder, &vocab, &mut rng);
            let err = grad_check(&model, &corpus.ontology, doc, gold, &cfg, 1e-4).unwrap();
            assert!(err < 1e-3, "{head:?}: max relative error {err}");
        }
    }

    #[test]
    fn checkpoints_round_trip_and_verify_the_ontology() {
        let corpus = tiny_corpus(10);
        let cfg = tiny_train_config();
        let vocab = SlotVocab::new(&corpus.ontology);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::init(cfg.embedder, &vocab, &mut rng);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model, &cfg, &corpus.ontology).unwrap();
        let (loaded, loaded_cfg) = load_checkpoint(&path, &corpus.ontology).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for (a, b) in model.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a.data, b.data);
        }

        // A structurally different ontology must be rejected.
        let other = SynthConfig {
            slots_per_type: 3,
            ..SynthConfig::new(10)
        }
        .ontology();
        assert!(matches!(
            load_checkpoint(&path, &other),
            Err(LearnError::OntologyMismatch { .. })
        ));
    }
}

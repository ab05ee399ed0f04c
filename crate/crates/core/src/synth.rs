//! Deterministic synthetic corpora with planted template structure.
//!
//! A document is a sequence of template blocks `TYPE_t (SLOT_t_j F_t_j_w)*`
//! with distractor tokens interleaved. Slot-marker and filler tokens are
//! unique per (type, slot), so token identity alone determines the correct
//! slot — the structure the toy embedder can represent and the policies can
//! learn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    Corpus, Document, Filler, Informativity, Mention, Ontology, PredictionMap, SlotDef, SlotKind,
    TemplateInstance, TemplateType,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("templates_per_doc_range [{0}, {1}] must satisfy min ≤ max")]
    BadRange(usize, usize),
    #[error("distractor_rate {0} must lie in [0, 1)")]
    BadRate(f64),
    #[error("{0} must be positive")]
    Zero(&'static str),
}

fn default_n_docs() -> usize {
    20
}

fn default_range() -> [usize; 2] {
    [1, 2]
}

fn default_types() -> usize {
    2
}

fn default_slots() -> usize {
    2
}

fn default_fillers() -> usize {
    6
}

fn default_distractor_vocab() -> usize {
    12
}

fn default_rate() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "default_n_docs")]
    pub n_docs: usize,
    #[serde(default = "default_range")]
    pub templates_per_doc_range: [usize; 2],
    #[serde(default = "default_types")]
    pub n_template_types: usize,
    #[serde(default = "default_slots")]
    pub slots_per_type: usize,
    /// Filler-token pool size per (type, slot) pair.
    #[serde(default = "default_fillers")]
    pub fillers_per_slot: usize,
    /// Distractor-token pool size.
    #[serde(default = "default_distractor_vocab")]
    pub distractor_vocab: usize,
    /// Fraction of candidate mentions that are distractors rather than gold
    /// fillers.
    #[serde(default = "default_rate")]
    pub distractor_rate: f64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        SynthConfig {
            seed,
            n_docs: default_n_docs(),
            templates_per_doc_range: default_range(),
            n_template_types: default_types(),
            slots_per_type: default_slots(),
            fillers_per_slot: default_fillers(),
            distractor_vocab: default_distractor_vocab(),
            distractor_rate: default_rate(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let [lo, hi] = self.templates_per_doc_range;
        if lo > hi {
            return Err(SynthError::BadRange(lo, hi));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return Err(SynthError::BadRate(self.distractor_rate));
        }
        for (v, name) in [
            (self.n_template_types, "n_template_types"),
            (self.slots_per_type, "slots_per_type"),
            (self.fillers_per_slot, "fillers_per_slot"),
            (self.distractor_vocab, "distractor_vocab"),
        ] {
            if v == 0 {
                return Err(SynthError::Zero(name));
            }
        }
        Ok(())
    }

    pub fn ontology(&self) -> Ontology {
        Ontology {
            template_types: (0..self.n_template_types)
                .map(|t| TemplateType {
                    name: format!("TYPE_{t}"),
                    slots: (0..self.slots_per_type)
                        .map(|j| SlotDef {
                            name: format!("SLOT_{t}_{j}"),
                            kind: SlotKind::Entity,
                            requires_time_irrealis: false,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Builds the corpus described by `cfg`; identical configs produce identical
/// corpora.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ontology = cfg.ontology();
    let mut documents = Vec::with_capacity(cfg.n_docs);
    let mut gold: PredictionMap = PredictionMap::new();
    let [lo, hi] = cfg.templates_per_doc_range;

    for di in 0..cfg.n_docs {
        let doc_id = format!("doc_{di}");
        let mut tokens: Vec<String> = Vec::new();
        let mut mentions: Vec<Mention> = Vec::new();
        let mut instances: Vec<TemplateInstance> = Vec::new();
        let mut n_mentions = 0usize;

        let k = rng.gen_range(lo..=hi);
        for _ in 0..k {
            let t = rng.gen_range(0..cfg.n_template_types);
            let mut inst = TemplateInstance::new(&format!("TYPE_{t}"));
            tokens.push(format!("TYPE_{t}"));
            for j in 0..cfg.slots_per_type {
                let w = rng.gen_range(0..cfg.fillers_per_slot);
                tokens.push(format!("SLOT_{t}_{j}"));
                let pos = tokens.len();
                tokens.push(format!("F_{t}_{j}_{w}"));
                let mid = format!("d{di}_m{n_mentions}");
                n_mentions += 1;
                mentions.push(Mention {
                    id: mid.clone(),
                    left: pos,
                    right: pos,
                    informativity: Informativity::Name,
                    surface: String::new(),
                });
                inst = inst.with_filler(&format!("SLOT_{t}_{j}"), Filler::entity(&[&mid]));
            }
            instances.push(inst);
        }

        let n_fill = mentions.len();
        let n_distract = if n_fill == 0 {
            rng.gen_range(3..=8)
        } else {
            (cfg.distractor_rate / (1.0 - cfg.distractor_rate) * n_fill as f64).round() as usize
        };
        for _ in 0..n_distract {
            let w = rng.gen_range(0..cfg.distractor_vocab);
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, format!("DIST_{w}"));
            for m in mentions.iter_mut() {
                if m.left >= at {
                    m.left += 1;
                    m.right += 1;
                }
            }
            let mid = format!("d{di}_m{n_mentions}");
            n_mentions += 1;
            mentions.push(Mention {
                id: mid,
                left: at,
                right: at,
                informativity: Informativity::Name,
                surface: String::new(),
            });
        }
        mentions.sort_by_key(|m| (m.left, m.right, m.id.clone()));

        let doc = Document::new(&doc_id, tokens, mentions).expect("construction is valid");
        for inst in instances.iter_mut() {
            inst.validate(&ontology, &doc).expect("construction is valid");
        }
        documents.push(doc);
        gold.insert(doc_id, instances);
    }

    Ok(Corpus {
        ontology,
        documents,
        gold,
    })
}

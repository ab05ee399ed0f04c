//! Template-extraction scoring: CEAF-family entity metrics with selectable φ
//! and matching variant, the Granular combined score, and the shared
//! Kuhn-Munkres alignment machinery with its brute-force oracle.

pub mod align;
mod ceaf;
mod granular;

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::corpus::{Corpus, Document, Ontology, PredictionMap, TemplateInstance};

pub use align::{align_bruteforce, align_optimal, AlignError, Matching};
pub use ceaf::{Phi, Variant, TYPE_PSEUDO_SLOT};
pub use granular::{CreditEntry, CreditSide};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("document {doc}: unknown template type `{name}`")]
    UnknownTemplateType { doc: String, name: String },
    #[error("document {doc}: unknown mention id `{mention}`")]
    UnknownMention { doc: String, mention: String },
    #[error("document {doc}: template type `{template_type}` has no slot `{slot}`")]
    UnknownSlot {
        doc: String,
        template_type: String,
        slot: String,
    },
    #[error("predictions reference unknown document `{doc}`")]
    UnknownDocument { doc: String },
}

/// Precision/recall/F1 triple. F1 = 2pr/(p+r), zero when both sides vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrF1 {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl PrF1 {
    fn new(p: f64, r: f64) -> Self {
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        PrF1 { p, r, f1 }
    }

    fn zero() -> Self {
        PrF1 { p: 0.0, r: 0.0, f1: 0.0 }
    }
}

/// Ratio with the empty-denominator convention (0) and a defensive cap at 1:
/// relaxed matching may reuse reference entities, which can push the raw
/// recall fraction above one.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        (num / den).min(1.0)
    }
}

/// Per-slot (or per-type) score with the pooled filler counts behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotScore {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub n_ref: usize,
    pub n_pred: usize,
}

/// CEAF-family report for one document.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub variant: Variant,
    pub phi: Phi,
    pub per_slot: BTreeMap<String, SlotScore>,
    pub per_type: BTreeMap<String, SlotScore>,
    /// Numerators and denominators pooled over slots.
    pub micro: PrF1,
    /// Mean of per-slot F1.
    pub macro_f1: f64,
    /// Chosen template alignment, (reference index, predicted index).
    pub alignment: Vec<(usize, usize)>,
    /// True when neither side carried any scorable mass.
    pub empty: bool,
}

/// CEAF-family report pooled over a corpus.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusScoreReport {
    pub variant: Variant,
    pub phi: Phi,
    pub per_slot: BTreeMap<String, SlotScore>,
    pub per_type: BTreeMap<String, SlotScore>,
    pub micro: PrF1,
    pub macro_f1: f64,
    /// Per-document template alignments.
    pub alignments: BTreeMap<String, Vec<(usize, usize)>>,
    pub empty: bool,
}

/// Granular report for one document.
#[derive(Debug, Clone, Serialize)]
pub struct GranularReport {
    pub type_score: PrF1,
    pub slot_score: PrF1,
    /// Exactly type_score.f1 × slot_score.f1.
    pub combined: f64,
    pub per_slot: BTreeMap<String, SlotScore>,
    /// Every filler's partial credit, keyed by slot.
    pub ledger: BTreeMap<String, Vec<CreditEntry>>,
    pub alignment: Vec<(usize, usize)>,
    pub empty: bool,
}

/// Granular report pooled over a corpus.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusGranularReport {
    pub type_score: PrF1,
    pub slot_score: PrF1,
    pub combined: f64,
    pub per_slot: BTreeMap<String, SlotScore>,
    pub ledger: BTreeMap<String, Vec<CreditEntry>>,
    pub alignments: BTreeMap<String, Vec<(usize, usize)>>,
    pub empty: bool,
}

fn slot_scores(tallies: &BTreeMap<String, ceaf::Tally>) -> BTreeMap<String, SlotScore> {
    tallies
        .iter()
        .map(|(name, t)| {
            let p = ratio(t.num, t.p_den);
            let r = ratio(t.num, t.r_den);
            let f = PrF1::new(p, r);
            (
                name.clone(),
                SlotScore {
                    p,
                    r,
                    f1: f.f1,
                    n_ref: t.n_ref,
                    n_pred: t.n_pred,
                },
            )
        })
        .collect()
}

fn micro_of(tallies: &BTreeMap<String, ceaf::Tally>) -> (PrF1, bool) {
    let mut pooled = ceaf::Tally::default();
    for t in tallies.values() {
        pooled.merge(t);
    }
    let empty = pooled.p_den == 0.0 && pooled.r_den == 0.0;
    let micro = if empty {
        PrF1::zero()
    } else {
        PrF1::new(ratio(pooled.num, pooled.p_den), ratio(pooled.num, pooled.r_den))
    };
    (micro, empty)
}

fn macro_of(per_slot: &BTreeMap<String, SlotScore>) -> f64 {
    if per_slot.is_empty() {
        0.0
    } else {
        per_slot.values().map(|s| s.f1).sum::<f64>() / per_slot.len() as f64
    }
}

/// CEAF-family score of one document's predicted templates against its
/// reference templates.
pub fn entity_score(
    doc: &Document,
    ontology: &Ontology,
    reference: &[TemplateInstance],
    predicted: &[TemplateInstance],
    phi: Phi,
    variant: Variant,
) -> Result<ScoreReport, ScoreError> {
    let t = ceaf::tally_document(doc, ontology, reference, predicted, phi, variant)?;
    let per_slot = slot_scores(&t.per_slot);
    let per_type = slot_scores(&t.per_type);
    let (micro, empty) = micro_of(&t.per_slot);
    let macro_f1 = macro_of(&per_slot);
    Ok(ScoreReport {
        variant,
        phi,
        per_slot,
        per_type,
        micro,
        macro_f1,
        alignment: t.alignment,
        empty,
    })
}

/// Granular combined score of one document.
pub fn granular_score(
    doc: &Document,
    ontology: &Ontology,
    reference: &[TemplateInstance],
    predicted: &[TemplateInstance],
) -> Result<GranularReport, ScoreError> {
    let t = granular::tally_document(doc, ontology, reference, predicted)?;
    Ok(granular_report(t))
}

fn granular_slot_scores(
    tallies: &BTreeMap<String, granular::SlotTally>,
) -> (BTreeMap<String, SlotScore>, PrF1) {
    let mut pooled = granular::SlotTally::default();
    let per_slot = tallies
        .iter()
        .map(|(name, t)| {
            pooled.merge(t);
            let p = ratio(t.p_num, t.n_pred as f64);
            let r = ratio(t.r_num, t.n_ref as f64);
            let f = PrF1::new(p, r);
            (
                name.clone(),
                SlotScore {
                    p,
                    r,
                    f1: f.f1,
                    n_ref: t.n_ref,
                    n_pred: t.n_pred,
                },
            )
        })
        .collect();
    let slot_score = PrF1::new(
        ratio(pooled.p_num, pooled.n_pred as f64),
        ratio(pooled.r_num, pooled.n_ref as f64),
    );
    (per_slot, slot_score)
}

fn granular_report(t: granular::GranularTallies) -> GranularReport {
    let type_score = PrF1::new(
        ratio(t.n_aligned as f64, t.n_pred as f64),
        ratio(t.n_aligned as f64, t.n_ref as f64),
    );
    let (per_slot, slot_score) = granular_slot_scores(&t.per_slot);
    GranularReport {
        type_score,
        slot_score,
        combined: type_score.f1 * slot_score.f1,
        per_slot,
        ledger: t.ledger,
        alignment: t.alignment,
        empty: t.n_ref == 0 && t.n_pred == 0,
    }
}

static NO_TEMPLATES: Vec<TemplateInstance> = Vec::new();

fn check_documents(corpus: &Corpus, predictions: &PredictionMap) -> Result<(), ScoreError> {
    for doc_id in predictions.keys() {
        if !corpus.documents.iter().any(|d| &d.id == doc_id) {
            return Err(ScoreError::UnknownDocument { doc: doc_id.clone() });
        }
    }
    Ok(())
}

/// CEAF-family score pooled over every document in the corpus. Documents
/// missing from `predictions` are scored against an empty prediction list, so
/// their gold mass lands in the recall denominator.
pub fn score_corpus(
    corpus: &Corpus,
    predictions: &PredictionMap,
    phi: Phi,
    variant: Variant,
) -> Result<CorpusScoreReport, ScoreError> {
    check_documents(corpus, predictions)?;
    let mut per_slot: BTreeMap<String, ceaf::Tally> = BTreeMap::new();
    let mut per_type: BTreeMap<String, ceaf::Tally> = BTreeMap::new();
    let mut alignments = BTreeMap::new();
    for doc in &corpus.documents {
        let gold = corpus.gold.get(&doc.id).unwrap_or(&NO_TEMPLATES);
        let pred = predictions.get(&doc.id).unwrap_or(&NO_TEMPLATES);
        let t = ceaf::tally_document(doc, &corpus.ontology, gold, pred, phi, variant)?;
        for (name, tally) in &t.per_slot {
            per_slot.entry(name.clone()).or_default().merge(tally);
        }
        for (name, tally) in &t.per_type {
            per_type.entry(name.clone()).or_default().merge(tally);
        }
        alignments.insert(doc.id.clone(), t.alignment);
    }
    let slot_reports = slot_scores(&per_slot);
    let type_reports = slot_scores(&per_type);
    let (micro, empty) = micro_of(&per_slot);
    let macro_f1 = macro_of(&slot_reports);
    Ok(CorpusScoreReport {
        variant,
        phi,
        per_slot: slot_reports,
        per_type: type_reports,
        micro,
        macro_f1,
        alignments,
        empty,
    })
}

/// Granular combined score pooled over every document in the corpus.
pub fn score_corpus_granular(
    corpus: &Corpus,
    predictions: &PredictionMap,
) -> Result<CorpusGranularReport, ScoreError> {
    check_documents(corpus, predictions)?;
    let mut pooled = granular::GranularTallies::default();
    let mut alignments = BTreeMap::new();
    for doc in &corpus.documents {
        let gold = corpus.gold.get(&doc.id).unwrap_or(&NO_TEMPLATES);
        let pred = predictions.get(&doc.id).unwrap_or(&NO_TEMPLATES);
        let t = granular::tally_document(doc, &corpus.ontology, gold, pred)?;
        pooled.n_ref += t.n_ref;
        pooled.n_pred += t.n_pred;
        pooled.n_aligned += t.n_aligned;
        for (name, tally) in &t.per_slot {
            pooled.per_slot.entry(name.clone()).or_default().merge(tally);
        }
        for (name, entries) in t.ledger {
            pooled.ledger.entry(name).or_default().extend(entries);
        }
        alignments.insert(doc.id.clone(), t.alignment);
    }
    let type_score = PrF1::new(
        ratio(pooled.n_aligned as f64, pooled.n_pred as f64),
        ratio(pooled.n_aligned as f64, pooled.n_ref as f64),
    );
    let (per_slot, slot_score) = granular_slot_scores(&pooled.per_slot);
    Ok(CorpusGranularReport {
        type_score,
        slot_score,
        combined: type_score.f1 * slot_score.f1,
        per_slot,
        ledger: pooled.ledger,
        alignments,
        empty: pooled.n_ref == 0 && pooled.n_pred == 0,
    })
}

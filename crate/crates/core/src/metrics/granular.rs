//! Granular combined scoring: response-gain template alignment, TypeF1 over
//! aligned same-type pairs, partial-credit SlotF1 with the informativity
//! ladder and time/irrealis point schedule, and their exact product.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

use super::align::align_optimal;
use super::ScoreError;
use crate::corpus::{
    Document, FillerPayload, Informativity, Irrealis, Ontology, TemplateInstance,
};

/// Which direction a ledger credit was taken in: each predicted filler's best
/// match feeds precision, each reference filler's best match feeds recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditSide {
    Precision,
    Recall,
}

/// One partial-credit observation in the per-slot ledger.
#[derive(Debug, Clone, Serialize)]
pub struct CreditEntry {
    pub doc: String,
    /// Reference template index, absent for unaligned predictions.
    pub reference_template: Option<usize>,
    /// Predicted template index, absent for unaligned references.
    pub predicted_template: Option<usize>,
    pub side: CreditSide,
    pub credit: f64,
}

/// Template instance pre-resolved against ontology and document so credit
/// arithmetic is pure and infallible.
struct RTemplate {
    type_name: String,
    /// slot name → (slot carries time/irrealis, fillers)
    slots: BTreeMap<String, (bool, Vec<RFiller>)>,
}

struct RFiller {
    payload: RPayload,
    time: BTreeSet<String>,
    irrealis: Option<Irrealis>,
}

enum RPayload {
    /// Mention or entity filler: member boundaries with informativity.
    Entity(Vec<(usize, usize, Informativity)>),
    Event(Vec<(usize, usize)>),
    Boolean(bool),
    Categorical(String),
}

fn resolve(
    doc: &Document,
    ontology: &Ontology,
    inst: &TemplateInstance,
) -> Result<RTemplate, ScoreError> {
    let ty = ontology
        .template_type(&inst.template_type)
        .ok_or_else(|| ScoreError::UnknownTemplateType {
            doc: doc.id.clone(),
            name: inst.template_type.clone(),
        })?;
    let mut slots = BTreeMap::new();
    for (slot_name, fillers) in &inst.fillers {
        let def = ty.slot(slot_name).ok_or_else(|| ScoreError::UnknownSlot {
            doc: doc.id.clone(),
            template_type: inst.template_type.clone(),
            slot: slot_name.clone(),
        })?;
        let mut resolved = Vec::with_capacity(fillers.len());
        for filler in fillers {
            let spans = |ids: &[String]| -> Result<Vec<(usize, usize)>, ScoreError> {
                ids.iter()
                    .map(|id| {
                        doc.mention(id)
                            .map(|m| (m.left, m.right))
                            .ok_or_else(|| ScoreError::UnknownMention {
                                doc: doc.id.clone(),
                                mention: id.clone(),
                            })
                    })
                    .collect()
            };
            let payload = match &filler.payload {
                FillerPayload::Mention(_) | FillerPayload::Entity(_) => RPayload::Entity(
                    filler
                        .payload
                        .mention_ids()
                        .iter()
                        .map(|id| {
                            doc.mention(id)
                                .map(|m| (m.left, m.right, m.informativity))
                                .ok_or_else(|| ScoreError::UnknownMention {
                                    doc: doc.id.clone(),
                                    mention: id.clone(),
                                })
                        })
                        .collect::<Result<_, _>>()?,
                ),
                FillerPayload::Event(ids) => RPayload::Event(spans(ids)?),
                FillerPayload::Boolean(b) => RPayload::Boolean(*b),
                FillerPayload::Categorical(c) => RPayload::Categorical(c.clone()),
            };
            resolved.push(RFiller {
                payload,
                time: filler.time_attachments.clone(),
                irrealis: filler.irrealis,
            });
        }
        slots.insert(slot_name.clone(), (def.requires_time_irrealis, resolved));
    }
    Ok(RTemplate {
        type_name: inst.template_type.clone(),
        slots,
    })
}

fn tier(inf: Informativity) -> Option<u8> {
    match inf {
        Informativity::Name => Some(2),
        Informativity::Nominal => Some(1),
        Informativity::Pronoun => Some(0),
        Informativity::Unspecified => None,
    }
}

/// Informativity-ladder credit for a predicted entity filler: its best member
/// mention that belongs to the reference cluster, discounted by half per
/// strictly more informative tier the reference has on offer.
fn entity_ladder(refs: &[(usize, usize, Informativity)], preds: &[(usize, usize, Informativity)]) -> f64 {
    let members: BTreeSet<(usize, usize)> = refs.iter().map(|&(l, r, _)| (l, r)).collect();
    let tiers: BTreeSet<u8> = refs.iter().filter_map(|&(_, _, i)| tier(i)).collect();
    let mut best = 0.0f64;
    for &(l, r, inf) in preds {
        if !members.contains(&(l, r)) {
            continue;
        }
        let credit = match tier(inf) {
            None => 1.0,
            Some(rank) => 0.5f64.powi(tiers.iter().filter(|&&t| t > rank).count() as i32),
        };
        best = best.max(credit);
    }
    best
}

/// Base credit of one predicted filler against one reference filler.
fn base_credit(r: &RFiller, s: &RFiller) -> f64 {
    match (&r.payload, &s.payload) {
        (RPayload::Entity(refs), RPayload::Entity(preds)) => entity_ladder(refs, preds),
        (RPayload::Event(refs), RPayload::Event(preds)) => {
            let cluster: BTreeSet<(usize, usize)> = refs.iter().copied().collect();
            let inside = !preds.is_empty() && preds.iter().all(|p| cluster.contains(p));
            if inside {
                1.0
            } else {
                0.0
            }
        }
        (RPayload::Boolean(a), RPayload::Boolean(b)) => (a == b) as u8 as f64,
        (RPayload::Categorical(a), RPayload::Categorical(b)) => (a == b) as u8 as f64,
        _ => 0.0,
    }
}

/// Full filler credit. Slots carrying time/irrealis halve the base credit and
/// add 0.25 points each for an exact time-attachment set match and an exact
/// irrealis match; the bonuses require a nonzero base so a wrong filler can
/// never earn annotation credit.
fn credit(r: &RFiller, s: &RFiller, timed: bool) -> f64 {
    let base = base_credit(r, s);
    if !timed {
        return base;
    }
    if base == 0.0 {
        return 0.0;
    }
    let mut c = 0.5 * base;
    if r.time == s.time {
        c += 0.25;
    }
    if r.irrealis == s.irrealis {
        c += 0.25;
    }
    c
}

fn best_credit(refs: &[RFiller], s: &RFiller, timed: bool) -> f64 {
    refs.iter().map(|r| credit(r, s, timed)).fold(0.0, f64::max)
}

static NO_FILLERS: (bool, Vec<RFiller>) = (false, Vec::new());

/// Response gain of pairing reference template `r` with prediction `s`:
/// predicted fillers with positive credit count +1, fruitless ones −1.
fn response_gain(r: &RTemplate, s: &RTemplate) -> i64 {
    let mut gain = 0i64;
    for (slot, (timed, preds)) in &s.slots {
        let (r_timed, refs) = r.slots.get(slot).unwrap_or(&NO_FILLERS);
        let timed = *timed || *r_timed;
        for p in preds {
            if best_credit(refs, p, timed) > 0.0 {
                gain += 1;
            } else {
                gain -= 1;
            }
        }
    }
    gain
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(super) struct SlotTally {
    pub p_num: f64,
    pub n_pred: usize,
    pub r_num: f64,
    pub n_ref: usize,
}

impl SlotTally {
    pub fn merge(&mut self, other: &SlotTally) {
        self.p_num += other.p_num;
        self.n_pred += other.n_pred;
        self.r_num += other.r_num;
        self.n_ref += other.n_ref;
    }
}

#[derive(Debug, Default)]
pub(super) struct GranularTallies {
    pub n_ref: usize,
    pub n_pred: usize,
    pub n_aligned: usize,
    pub per_slot: BTreeMap<String, SlotTally>,
    pub ledger: BTreeMap<String, Vec<CreditEntry>>,
    pub alignment: Vec<(usize, usize)>,
}

/// Scores one document: alignment maximizes clamped response gain plus a 0.5
/// same-type bonus (below the unit gain quantum, so gains still order the
/// optima while every alignable same-type pair gets aligned); cross-type
/// similarity is zero, so pairs never cross types.
pub(super) fn tally_document(
    doc: &Document,
    ontology: &Ontology,
    reference: &[TemplateInstance],
    predicted: &[TemplateInstance],
) -> Result<GranularTallies, ScoreError> {
    let refs: Vec<RTemplate> = reference
        .iter()
        .map(|i| resolve(doc, ontology, i))
        .collect::<Result<_, _>>()?;
    let preds: Vec<RTemplate> = predicted
        .iter()
        .map(|i| resolve(doc, ontology, i))
        .collect::<Result<_, _>>()?;

    let sim: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| {
            preds
                .iter()
                .map(|s| {
                    if r.type_name == s.type_name {
                        response_gain(r, s).max(0) as f64 + 0.5
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let matching = align_optimal(&sim);

    let mut out = GranularTallies {
        n_ref: refs.len(),
        n_pred: preds.len(),
        n_aligned: matching.pairs.len(),
        alignment: matching.pairs.clone(),
        ..Default::default()
    };

    let aligned_refs: BTreeSet<usize> = matching.pairs.iter().map(|&(i, _)| i).collect();
    let aligned_preds: BTreeSet<usize> = matching.pairs.iter().map(|&(_, j)| j).collect();

    for &(i, j) in &matching.pairs {
        let r = &refs[i];
        let s = &preds[j];
        let names: BTreeSet<&String> = r.slots.keys().chain(s.slots.keys()).collect();
        for name in names {
            let (r_timed, r_fillers) = r.slots.get(name).unwrap_or(&NO_FILLERS);
            let (s_timed, s_fillers) = s.slots.get(name).unwrap_or(&NO_FILLERS);
            let timed = *r_timed || *s_timed;
            let tally = out.per_slot.entry(name.clone()).or_default();
            let ledger = out.ledger.entry(name.clone()).or_default();
            for p in s_fillers {
                let c = best_credit(r_fillers, p, timed);
                tally.p_num += c;
                tally.n_pred += 1;
                ledger.push(CreditEntry {
                    doc: doc.id.clone(),
                    reference_template: Some(i),
                    predicted_template: Some(j),
                    side: CreditSide::Precision,
                    credit: c,
                });
            }
            for rf in r_fillers {
                let c = s_fillers
                    .iter()
                    .map(|p| credit(rf, p, timed))
                    .fold(0.0, f64::max);
                tally.r_num += c;
                tally.n_ref += 1;
                ledger.push(CreditEntry {
                    doc: doc.id.clone(),
                    reference_template: Some(i),
                    predicted_template: Some(j),
                    side: CreditSide::Recall,
                    credit: c,
                });
            }
        }
    }

    for (j, s) in preds.iter().enumerate() {
        if aligned_preds.contains(&j) {
            continue;
        }
        for (name, (_, fillers)) in &s.slots {
            let tally = out.per_slot.entry(name.clone()).or_default();
            let ledger = out.ledger.entry(name.clone()).or_default();
            for _ in fillers {
                tally.n_pred += 1;
                ledger.push(CreditEntry {
                    doc: doc.id.clone(),
                    reference_template: None,
                    predicted_template: Some(j),
                    side: CreditSide::Precision,
                    credit: 0.0,
                });
            }
        }
    }
    for (i, r) in refs.iter().enumerate() {
        if aligned_refs.contains(&i) {
            continue;
        }
        for (name, (_, fillers)) in &r.slots {
            let tally = out.per_slot.entry(name.clone()).or_default();
            let ledger = out.ledger.entry(name.clone()).or_default();
            for _ in fillers {
                tally.n_ref += 1;
                ledger.push(CreditEntry {
                    doc: doc.id.clone(),
                    reference_template: Some(i),
                    predicted_template: None,
                    side: CreditSide::Recall,
                    credit: 0.0,
                });
            }
        }
    }
    Ok(out)
}

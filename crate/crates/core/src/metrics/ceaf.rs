//! CEAF-family template scoring: φ similarity functions, the relaxed and
//! one-to-one entity-matching variants, and the slot/type/micro/macro
//! aggregation shared by document- and corpus-level reports.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::align::align_optimal;
use super::ScoreError;
use crate::corpus::{Document, FillerPayload, Ontology, TemplateInstance};

/// Entity similarity function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    /// |R ∩ S|
    Phi3,
    /// 2|R∩S| / (|R|+|S|)
    Phi4,
    /// 1 if S ⊆ R and S ≠ ∅, else 0
    PhiSubset,
}

impl std::str::FromStr for Phi {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phi3" => Ok(Phi::Phi3),
            "phi4" => Ok(Phi::Phi4),
            "phi-subset" | "phi_subset" => Ok(Phi::PhiSubset),
            other => Err(format!(
                "unknown phi `{other}` (expected phi3, phi4 or phi-subset)"
            )),
        }
    }
}

impl std::fmt::Display for Phi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phi::Phi3 => "phi3",
            Phi::Phi4 => "phi4",
            Phi::PhiSubset => "phi-subset",
        })
    }
}

/// Entity-matching variant inside an aligned template pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Each predicted entity takes its best reference entity; references may
    /// be reused.
    RmeRelaxed,
    /// One-to-one entity matching per slot (a second assignment problem).
    ReeDef,
    /// Relaxed matching plus a legacy "type" pseudo-slot carrying the
    /// template-type label as a singleton entity.
    ReeImpl,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rme-relaxed" | "rme_relaxed" | "rme" => Ok(Variant::RmeRelaxed),
            "ree-def" | "ree_def" => Ok(Variant::ReeDef),
            "ree-impl" | "ree_impl" => Ok(Variant::ReeImpl),
            other => Err(format!(
                "unknown variant `{other}` (expected rme-relaxed, ree-def or ree-impl)"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::RmeRelaxed => "rme-relaxed",
            Variant::ReeDef => "ree-def",
            Variant::ReeImpl => "ree-impl",
        })
    }
}

/// Name of the pseudo-slot injected by [`Variant::ReeImpl`].
pub const TYPE_PSEUDO_SLOT: &str = "type";

/// Identity of one entity member: a span by token boundaries, or a symbolic
/// label (used for the type pseudo-slot).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Key {
    Span(usize, usize),
    Label(String),
}

pub type Entity = BTreeSet<Key>;

pub fn phi(phi: Phi, r: &Entity, s: &Entity) -> f64 {
    match phi {
        Phi::Phi3 => r.intersection(s).count() as f64,
        Phi::Phi4 => {
            let denom = r.len() + s.len();
            if denom == 0 {
                0.0
            } else {
                2.0 * r.intersection(s).count() as f64 / denom as f64
            }
        }
        Phi::PhiSubset => {
            if !s.is_empty() && s.is_subset(r) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// A template instance reduced to scorable entities, slot name → entity list.
pub(super) struct EntityView {
    pub type_name: String,
    pub slots: BTreeMap<String, Vec<Entity>>,
}

/// Converts span-carrying fillers to boundary-key entities. Boolean and
/// categorical fillers carry no mentions and are outside CEAF's scope.
pub(super) fn entity_view(
    doc: &Document,
    ontology: &Ontology,
    inst: &TemplateInstance,
    variant: Variant,
) -> Result<EntityView, ScoreError> {
    let ty = ontology
        .template_type(&inst.template_type)
        .ok_or_else(|| ScoreError::UnknownTemplateType {
            doc: doc.id.clone(),
            name: inst.template_type.clone(),
        })?;
    let mut slots: BTreeMap<String, Vec<Entity>> = BTreeMap::new();
    for (slot_name, fillers) in &inst.fillers {
        if ty.slot(slot_name).is_none() {
            return Err(ScoreError::UnknownSlot {
                doc: doc.id.clone(),
                template_type: inst.template_type.clone(),
                slot: slot_name.clone(),
            });
        }
        for filler in fillers {
            if matches!(
                filler.payload,
                FillerPayload::Boolean(_) | FillerPayload::Categorical(_)
            ) {
                continue;
            }
            let mut entity = Entity::new();
            for id in filler.payload.mention_ids() {
                let m = doc.mention(id).ok_or_else(|| ScoreError::UnknownMention {
                    doc: doc.id.clone(),
                    mention: id.clone(),
                })?;
                entity.insert(Key::Span(m.left, m.right));
            }
            if !entity.is_empty() {
                slots.entry(slot_name.clone()).or_default().push(entity);
            }
        }
    }
    if variant == Variant::ReeImpl {
        let mut label = Entity::new();
        label.insert(Key::Label(inst.template_type.clone()));
        slots.insert(TYPE_PSEUDO_SLOT.to_string(), vec![label]);
    }
    Ok(EntityView {
        type_name: inst.template_type.clone(),
        slots,
    })
}

/// Slot-level credit between one reference and one predicted entity list
/// under the variant's matching discipline.
fn slot_credit(variant: Variant, phi_fn: Phi, refs: &[Entity], preds: &[Entity]) -> f64 {
    match variant {
        Variant::RmeRelaxed | Variant::ReeImpl => preds
            .iter()
            .map(|s| {
                refs.iter()
                    .map(|r| phi(phi_fn, r, s))
                    .fold(0.0f64, f64::max)
            })
            .sum(),
        Variant::ReeDef => {
            let sim: Vec<Vec<f64>> = refs
                .iter()
                .map(|r| preds.iter().map(|s| phi(phi_fn, r, s)).collect())
                .collect();
            align_optimal(&sim).total
        }
    }
}

/// Similarity between two whole templates: the summed slot credits, or 0
/// across different template types.
fn pair_similarity(phi_fn: Phi, variant: Variant, r: &EntityView, s: &EntityView) -> f64 {
    if r.type_name != s.type_name {
        return 0.0;
    }
    let empty: Vec<Entity> = Vec::new();
    let names: BTreeSet<&String> = r.slots.keys().chain(s.slots.keys()).collect();
    names
        .into_iter()
        .map(|name| {
            let refs = r.slots.get(name).unwrap_or(&empty);
            let preds = s.slots.get(name).unwrap_or(&empty);
            slot_credit(variant, phi_fn, refs, preds)
        })
        .sum()
}

/// Pooled numerators/denominators for one slot or one template type.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(super) struct Tally {
    pub num: f64,
    pub p_den: f64,
    pub r_den: f64,
    pub n_ref: usize,
    pub n_pred: usize,
}

impl Tally {
    pub fn merge(&mut self, other: &Tally) {
        self.num += other.num;
        self.p_den += other.p_den;
        self.r_den += other.r_den;
        self.n_ref += other.n_ref;
        self.n_pred += other.n_pred;
    }
}

#[derive(Debug, Default)]
pub(super) struct DocTallies {
    pub per_slot: BTreeMap<String, Tally>,
    pub per_type: BTreeMap<String, Tally>,
    pub alignment: Vec<(usize, usize)>,
}

/// Scores one document's reference and predicted template lists: optimal
/// template alignment, then per-slot and per-type credit pooling. Unaligned
/// templates feed only denominators.
pub(super) fn tally_document(
    doc: &Document,
    ontology: &Ontology,
    reference: &[TemplateInstance],
    predicted: &[TemplateInstance],
    phi_fn: Phi,
    variant: Variant,
) -> Result<DocTallies, ScoreError> {
    let refs: Vec<EntityView> = reference
        .iter()
        .map(|i| entity_view(doc, ontology, i, variant))
        .collect::<Result<_, _>>()?;
    let preds: Vec<EntityView> = predicted
        .iter()
        .map(|i| entity_view(doc, ontology, i, variant))
        .collect::<Result<_, _>>()?;

    let sim: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| {
            preds
                .iter()
                .map(|s| pair_similarity(phi_fn, variant, r, s))
                .collect()
        })
        .collect();
    let matching = align_optimal(&sim);

    let mut out = DocTallies {
        alignment: matching.pairs.clone(),
        ..Default::default()
    };

    for view in &refs {
        for (slot, entities) in &view.slots {
            let mass: f64 = entities.iter().map(|e| phi(phi_fn, e, e)).sum();
            let t = out.per_slot.entry(slot.clone()).or_default();
            t.r_den += mass;
            t.n_ref += entities.len();
            let t = out.per_type.entry(view.type_name.clone()).or_default();
            t.r_den += mass;
            t.n_ref += entities.len();
        }
    }
    for view in &preds {
        for (slot, entities) in &view.slots {
            let mass: f64 = entities.iter().map(|e| phi(phi_fn, e, e)).sum();
            let t = out.per_slot.entry(slot.clone()).or_default();
            t.p_den += mass;
            t.n_pred += entities.len();
            let t = out.per_type.entry(view.type_name.clone()).or_default();
            t.p_den += mass;
            t.n_pred += entities.len();
        }
    }

    let empty: Vec<Entity> = Vec::new();
    for &(i, j) in &matching.pairs {
        let r = &refs[i];
        let s = &preds[j];
        let names: BTreeSet<&String> = r.slots.keys().chain(s.slots.keys()).collect();
        for name in names {
            let credit = slot_credit(
                variant,
                phi_fn,
                r.slots.get(name).unwrap_or(&empty),
                s.slots.get(name).unwrap_or(&empty),
            );
            out.per_slot.entry(name.clone()).or_default().num += credit;
            out.per_type.entry(r.type_name.clone()).or_default().num += credit;
        }
    }
    Ok(out)
}

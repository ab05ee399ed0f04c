//! Domain types for documents, ontologies and template instances, plus the
//! JSON formats shared by the CLI, the trainer and the scorers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Reserved name of the null slot; never allowed in an ontology.
pub const EPSILON_SLOT: &str = "ε";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    MalformedJson {
        path: String,
        source: serde_json::Error,
    },
    #[error("document {doc}: mention {mention} has boundaries {left}..={right} outside 0..{len}")]
    BoundaryError {
        doc: String,
        mention: String,
        left: usize,
        right: usize,
        len: usize,
    },
    #[error("document {doc}: duplicate mention id {mention}")]
    DuplicateMention { doc: String, mention: String },
    #[error("ontology has no template types")]
    EmptyOntology,
    #[error("duplicate template type {name}")]
    DuplicateTemplateType { name: String },
    #[error("template type {template_type}: duplicate slot {slot}")]
    DuplicateSlot {
        template_type: String,
        slot: String,
    },
    #[error("template type {template_type}: slot name {EPSILON_SLOT} is reserved for the null slot")]
    ReservedSlotName { template_type: String },
    #[error("document {doc}: template references unknown type {name}")]
    UnknownTemplateType { doc: String, name: String },
    #[error("document {doc}: type {template_type} has no slot {slot}")]
    UnknownSlot {
        doc: String,
        template_type: String,
        slot: String,
    },
    #[error("document {doc}: slot {slot} of {template_type} expects a {expected} filler")]
    KindMismatch {
        doc: String,
        template_type: String,
        slot: String,
        expected: String,
    },
    #[error("document {doc}: categorical slot {slot} does not admit value {value}")]
    InvalidCategorical {
        doc: String,
        slot: String,
        value: String,
    },
    #[error("document {doc}: filler references unknown mention {mention}")]
    DanglingMention { doc: String, mention: String },
    #[error("predictions reference unknown document {id}")]
    DanglingDocument { id: String },
    #[error("gold references unknown document {id}")]
    UnknownGoldDocument { id: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Informativity {
    Name,
    Nominal,
    Pronoun,
    #[default]
    Unspecified,
}

/// A candidate span with inclusive token boundaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub left: usize,
    pub right: usize,
    #[serde(default)]
    pub informativity: Informativity,
    /// Space-joined tokens[left..=right], cached at load time.
    #[serde(skip)]
    pub surface: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<Mention>,
    #[serde(skip)]
    mention_index: HashMap<String, usize>,
}

impl Document {
    pub fn new(id: &str, tokens: Vec<String>, mentions: Vec<Mention>) -> Result<Self, CorpusError> {
        let mut doc = Document {
            id: id.to_string(),
            tokens,
            mentions,
            mention_index: HashMap::new(),
        };
        doc.finish()?;
        Ok(doc)
    }

    /// Validates boundaries and id uniqueness, then caches surfaces and the
    /// id lookup table.
    fn finish(&mut self) -> Result<(), CorpusError> {
        self.mention_index.clear();
        let len = self.tokens.len();
        for (i, m) in self.mentions.iter_mut().enumerate() {
            if m.left > m.right || m.right >= len {
                return Err(CorpusError::BoundaryError {
                    doc: self.id.clone(),
                    mention: m.id.clone(),
                    left: m.left,
                    right: m.right,
                    len,
                });
            }
            m.surface = self.tokens[m.left..=m.right].join(" ");
            if self.mention_index.insert(m.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateMention {
                    doc: self.id.clone(),
                    mention: m.id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn mention(&self, id: &str) -> Option<&Mention> {
        self.mention_index.get(id).map(|&i| &self.mentions[i])
    }

    pub fn mention_pos(&self, id: &str) -> Option<usize> {
        self.mention_index.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Entity,
    Event,
    Mixed,
    Boolean,
    Categorical(Vec<String>),
}

impl SlotKind {
    fn name(&self) -> &'static str {
        match self {
            SlotKind::Entity => "entity",
            SlotKind::Event => "event",
            SlotKind::Mixed => "mixed",
            SlotKind::Boolean => "boolean",
            SlotKind::Categorical(_) => "categorical",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    #[serde(rename = "time_irrealis", default)]
    pub requires_time_irrealis: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateType {
    pub name: String,
    pub slots: Vec<SlotDef>,
}

impl TemplateType {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ontology {
    pub template_types: Vec<TemplateType>,
}

impl Ontology {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.template_types.is_empty() {
            return Err(CorpusError::EmptyOntology);
        }
        let mut type_names = BTreeSet::new();
        for t in &self.template_types {
            if !type_names.insert(&t.name) {
                return Err(CorpusError::DuplicateTemplateType {
                    name: t.name.clone(),
                });
            }
            let mut slot_names = BTreeSet::new();
            for s in &t.slots {
                if s.name == EPSILON_SLOT {
                    return Err(CorpusError::ReservedSlotName {
                        template_type: t.name.clone(),
                    });
                }
                if !slot_names.insert(&s.name) {
                    return Err(CorpusError::DuplicateSlot {
                        template_type: t.name.clone(),
                        slot: s.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn template_type(&self, name: &str) -> Option<&TemplateType> {
        self.template_types.iter().find(|t| t.name == name)
    }

    /// Hex SHA-256 of the canonical serialization; stored in checkpoints so a
    /// model is never decoded against a different ontology.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("ontology serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Irrealis {
    Counterfactual,
    Hypothetical,
    Future,
    Unconfirmed,
    Unspecified,
    NonOccurrence,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillerPayload {
    Mention(String),
    Entity(Vec<String>),
    Event(Vec<String>),
    Boolean(bool),
    Categorical(String),
}

impl FillerPayload {
    /// Mention ids carried by the payload, if any.
    pub fn mention_ids(&self) -> &[String] {
        match self {
            FillerPayload::Mention(id) => std::slice::from_ref(id),
            FillerPayload::Entity(ids) | FillerPayload::Event(ids) => ids,
            _ => &[],
        }
    }
}

/// One filled value of a slot. Time attachments and irrealis are granular-only
/// annotations and default to empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Filler {
    #[serde(flatten)]
    pub payload: FillerPayload,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub time_attachments: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irrealis: Option<Irrealis>,
}

impl Filler {
    pub fn mention(id: &str) -> Self {
        Filler {
            payload: FillerPayload::Mention(id.to_string()),
            time_attachments: BTreeSet::new(),
            irrealis: None,
        }
    }

    pub fn entity(ids: &[&str]) -> Self {
        Filler {
            payload: FillerPayload::Entity(ids.iter().map(|s| s.to_string()).collect()),
            time_attachments: BTreeSet::new(),
            irrealis: None,
        }
    }

    pub fn event(ids: &[&str]) -> Self {
        Filler {
            payload: FillerPayload::Event(ids.iter().map(|s| s.to_string()).collect()),
            time_attachments: BTreeSet::new(),
            irrealis: None,
        }
    }

    pub fn boolean(value: bool) -> Self {
        Filler {
            payload: FillerPayload::Boolean(value),
            time_attachments: BTreeSet::new(),
            irrealis: None,
        }
    }

    pub fn categorical(value: &str) -> Self {
        Filler {
            payload: FillerPayload::Categorical(value.to_string()),
            time_attachments: BTreeSet::new(),
            irrealis: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateInstance {
    #[serde(rename = "type")]
    pub template_type: String,
    #[serde(default)]
    pub fillers: BTreeMap<String, Vec<Filler>>,
}

impl TemplateInstance {
    pub fn new(template_type: &str) -> Self {
        TemplateInstance {
            template_type: template_type.to_string(),
            fillers: BTreeMap::new(),
        }
    }

    pub fn with_filler(mut self, slot: &str, filler: Filler) -> Self {
        self.fillers.entry(slot.to_string()).or_default().push(filler);
        self
    }

    /// Validates against ontology and document, then canonicalizes: mention
    /// lists sorted by (left, right, id) and deduplicated, empty slots
    /// dropped, filler lists sorted.
    pub fn validate(
        &mut self,
        ontology: &Ontology,
        doc: &Document,
    ) -> Result<(), CorpusError> {
        let ty = ontology.template_type(&self.template_type).ok_or_else(|| {
            CorpusError::UnknownTemplateType {
                doc: doc.id.clone(),
                name: self.template_type.clone(),
            }
        })?;
        for (slot_name, fillers) in self.fillers.iter_mut() {
            let slot = ty.slot(slot_name).ok_or_else(|| CorpusError::UnknownSlot {
                doc: doc.id.clone(),
                template_type: ty.name.clone(),
                slot: slot_name.clone(),
            })?;
            for filler in fillers.iter_mut() {
                check_kind(&slot.kind, &filler.payload, doc, ty, slot_name)?;
                match &mut filler.payload {
                    FillerPayload::Mention(id) => {
                        if doc.mention(id).is_none() {
                            return Err(CorpusError::DanglingMention {
                                doc: doc.id.clone(),
                                mention: id.clone(),
                            });
                        }
                    }
                    FillerPayload::Entity(ids) | FillerPayload::Event(ids) => {
                        for id in ids.iter() {
                            if doc.mention(id).is_none() {
                                return Err(CorpusError::DanglingMention {
                                    doc: doc.id.clone(),
                                    mention: id.clone(),
                                });
                            }
                        }
                        ids.sort_by_key(|id| {
                            let m = doc.mention(id).unwrap();
                            (m.left, m.right, id.clone())
                        });
                        ids.dedup();
                    }
                    FillerPayload::Categorical(v) => {
                        if let SlotKind::Categorical(values) = &slot.kind {
                            if !values.contains(v) {
                                return Err(CorpusError::InvalidCategorical {
                                    doc: doc.id.clone(),
                                    slot: slot_name.clone(),
                                    value: v.clone(),
                                });
                            }
                        }
                    }
                    FillerPayload::Boolean(_) => {}
                }
            }
            fillers.sort();
            fillers.dedup();
        }
        self.fillers.retain(|_, v| !v.is_empty());
        Ok(())
    }
}

fn check_kind(
    kind: &SlotKind,
    payload: &FillerPayload,
    doc: &Document,
    ty: &TemplateType,
    slot: &str,
) -> Result<(), CorpusError> {
    let ok = match kind {
        SlotKind::Entity => matches!(
            payload,
            FillerPayload::Mention(_) | FillerPayload::Entity(_)
        ),
        SlotKind::Event => matches!(
            payload,
            FillerPayload::Mention(_) | FillerPayload::Event(_)
        ),
        SlotKind::Mixed => matches!(
            payload,
            FillerPayload::Mention(_) | FillerPayload::Entity(_) | FillerPayload::Event(_)
        ),
        SlotKind::Boolean => matches!(payload, FillerPayload::Boolean(_)),
        SlotKind::Categorical(_) => matches!(payload, FillerPayload::Categorical(_)),
    };
    if ok {
        Ok(())
    } else {
        Err(CorpusError::KindMismatch {
            doc: doc.id.clone(),
            template_type: ty.name.clone(),
            slot: slot.to_string(),
            expected: kind.name().to_string(),
        })
    }
}

pub type PredictionMap = BTreeMap<String, Vec<TemplateInstance>>;

#[derive(Debug, Clone)]
pub struct Corpus {
    pub ontology: Ontology,
    pub documents: Vec<Document>,
    /// Gold template lists keyed by document id; list order is meaningful
    /// (the fixed expert follows it).
    pub gold: PredictionMap,
}

impl Corpus {
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn validate(&mut self) -> Result<(), CorpusError> {
        self.ontology.validate()?;
        for doc in self.documents.iter_mut() {
            doc.finish()?;
        }
        let ontology = self.ontology.clone();
        let docs: HashMap<String, usize> = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        for (doc_id, templates) in self.gold.iter_mut() {
            let &idx = docs
                .get(doc_id)
                .ok_or_else(|| CorpusError::UnknownGoldDocument { id: doc_id.clone() })?;
            let doc = &self.documents[idx];
            for t in templates.iter_mut() {
                t.validate(&ontology, doc)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    documents: Vec<Document>,
    #[serde(default)]
    gold: PredictionMap,
}

#[derive(Serialize, Deserialize)]
struct PredictionFile {
    predictions: PredictionMap,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CorpusError::MalformedJson {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CorpusError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_ontology(path: &Path) -> Result<Ontology, CorpusError> {
    let ontology: Ontology = read_json(path)?;
    ontology.validate()?;
    Ok(ontology)
}

pub fn save_ontology(ontology: &Ontology, path: &Path) -> Result<(), CorpusError> {
    ontology.validate()?;
    write_json(ontology, path)
}

pub fn load_corpus(path: &Path, ontology_path: &Path) -> Result<Corpus, CorpusError> {
    let ontology = load_ontology(ontology_path)?;
    let file: CorpusFile = read_json(path)?;
    let mut corpus = Corpus {
        ontology,
        documents: file.documents,
        gold: file.gold,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_json(
        &CorpusFile {
            documents: corpus.documents.clone(),
            gold: corpus.gold.clone(),
        },
        path,
    )
}

/// Validates each prediction against its document and writes the canonical
/// prediction file (identical templates within a document are deduplicated).
pub fn save_predictions(
    predictions: &PredictionMap,
    corpus: &Corpus,
    path: &Path,
) -> Result<(), CorpusError> {
    let canonical = canonicalize_predictions(predictions, corpus)?;
    write_json(&PredictionFile { predictions: canonical }, path)
}

pub fn load_predictions(path: &Path, corpus: &Corpus) -> Result<PredictionMap, CorpusError> {
    let file: PredictionFile = read_json(path)?;
    canonicalize_predictions(&file.predictions, corpus)
}

fn canonicalize_predictions(
    predictions: &PredictionMap,
    corpus: &Corpus,
) -> Result<PredictionMap, CorpusError> {
    let mut out = PredictionMap::new();
    for (doc_id, templates) in predictions {
        let doc = corpus
            .document(doc_id)
            .ok_or_else(|| CorpusError::DanglingDocument { id: doc_id.clone() })?;
        let mut list = Vec::new();
        for t in templates {
            let mut t = t.clone();
            t.validate(&corpus.ontology, doc)?;
            if !list.contains(&t) {
                list.push(t);
            }
        }
        out.insert(doc_id.clone(), list);
    }
    Ok(out)
}

/// Set equality of two template lists (duplicates collapse).
pub fn template_set_eq(a: &[TemplateInstance], b: &[TemplateInstance]) -> bool {
    let canon = |ts: &[TemplateInstance]| {
        let mut v: Vec<TemplateInstance> = ts.to_vec();
        v.sort();
        v.dedup();
        v
    };
    canon(a) == canon(b)
}

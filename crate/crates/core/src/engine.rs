//! The extraction MDP and its greedy decoder.
//!
//! A state is the per-span memory matrix plus the templates generated so far;
//! an action assigns every candidate span a slot or ε. Transitions push each
//! used span's memory row through a GRU keyed by [slot ; t̂] and append the
//! materialized template. Decoding iterates template types in ontology
//! declaration order and stops a type once the greedy action is all-ε.

use std::collections::BTreeSet;
use thiserror::Error;

use crate::corpus::{
    CorpusError, Document, Filler, FillerPayload, Ontology, SlotKind, TemplateInstance,
};
use crate::embed::{embed_tokens, encode_spans, EmbedError, SpanEncoding};
use crate::model::{Head, Model, TapeModel};
use crate::nn::{gru_step, TGru, TParam};
use crate::policy::{PolicyError, SlotVocab};
use crate::tape::{Tape, VRange, Vid};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("state holds {expected} memory rows, encoding has {got} spans")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("slot `{slot}` does not belong to template type `{template_type}`")]
    SlotNotInType { slot: String, template_type: String },
}

/// The MDP state for one (document, template type) episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    /// One d-wide memory row per candidate span; all zeros at step 0.
    pub memory: Vec<VRange>,
    /// Templates generated so far, in emission order.
    pub generated: Vec<TemplateInstance>,
    pub step: usize,
}

impl EpisodeState {
    pub fn new(t: &mut Tape, n_spans: usize, d: usize) -> Self {
        let zeros = t.leaves(&vec![0.0; d]);
        EpisodeState {
            memory: vec![zeros; n_spans],
            generated: Vec::new(),
            step: 0,
        }
    }

    /// One environment step. Spans assigned ε keep their memory row
    /// bit-identical; an all-ε action is a complete no-op so that
    /// |generated| = step stays true.
    #[allow(clippy::too_many_arguments)]
    pub fn transition(
        &mut self,
        t: &mut Tape,
        slot_embeddings: &TParam,
        gru: &TGru,
        vocab: &SlotVocab,
        ontology: &Ontology,
        doc: &Document,
        type_name: &str,
        action: &[usize],
        summary: VRange,
    ) -> Result<(), EngineError> {
        if action.len() != self.memory.len() {
            return Err(PolicyError::IncompleteAssignment {
                expected: self.memory.len(),
                got: action.len(),
            }
            .into());
        }
        let eps = vocab.epsilon();
        if action.iter().all(|&a| a == eps) {
            return Ok(());
        }
        for (i, &a) in action.iter().enumerate() {
            if a == eps {
                continue;
            }
            let s = slot_embeddings.row(a);
            let ids: Vec<Vid> = s.iter().chain(summary.iter()).collect();
            let input = t.gather(&ids);
            self.memory[i] = gru_step(t, gru, input, self.memory[i]);
        }
        self.generated
            .push(materialize(doc, ontology, vocab, type_name, action)?);
        self.step += 1;
        Ok(())
    }
}

/// X = x_enc + x_mem, row by row.
pub fn state_input(
    t: &mut Tape,
    enc: &SpanEncoding,
    state: &EpisodeState,
) -> Result<Vec<VRange>, EngineError> {
    if enc.rows.len() != state.memory.len() {
        return Err(EngineError::ShapeMismatch {
            expected: state.memory.len(),
            got: enc.rows.len(),
        });
    }
    Ok(enc
        .rows
        .iter()
        .zip(&state.memory)
        .map(|(&x, &m)| t.add_range(x, m))
        .collect())
}

/// Builds the template named by the non-ε assignments: each assigned span
/// becomes a singleton entity (or event) filler of its slot.
pub fn materialize(
    doc: &Document,
    ontology: &Ontology,
    vocab: &SlotVocab,
    type_name: &str,
    action: &[usize],
) -> Result<TemplateInstance, EngineError> {
    let ty = ontology
        .template_type(type_name)
        .ok_or_else(|| PolicyError::UnknownTemplateType(type_name.to_string()))?;
    let mut inst = TemplateInstance::new(type_name);
    for (i, &a) in action.iter().enumerate() {
        if a == vocab.epsilon() {
            continue;
        }
        let slot_name = &vocab.slot_names[a];
        let def = ty
            .slot(slot_name)
            .ok_or_else(|| EngineError::SlotNotInType {
                slot: slot_name.clone(),
                template_type: type_name.to_string(),
            })?;
        let id = doc.mentions[i].id.clone();
        let filler = match def.kind {
            SlotKind::Event => Filler {
                payload: FillerPayload::Event(vec![id]),
                time_attachments: BTreeSet::new(),
                irrealis: None,
            },
            _ => Filler::entity(&[id.as_str()]),
        };
        inst = inst.with_filler(slot_name, filler);
    }
    inst.validate(ontology, doc)?;
    Ok(inst)
}

/// Reads a gold template back into an action over the document's spans:
/// every mention carried by one of its fillers maps to that slot, everything
/// else to ε.
pub fn gold_assignment(doc: &Document, vocab: &SlotVocab, inst: &TemplateInstance) -> Vec<usize> {
    doc.mentions
        .iter()
        .map(|m| {
            for (slot_name, fillers) in &inst.fillers {
                if fillers
                    .iter()
                    .any(|f| f.payload.mention_ids().contains(&m.id))
                {
                    return vocab.slot_index(slot_name).unwrap_or_else(|| vocab.epsilon());
                }
            }
            vocab.epsilon()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// Number of policy forward passes, including the one that fires the
    /// stopping rule.
    pub policy_evals: usize,
}

/// Greedy decoding: per-span argmax of the factorized policy, ties toward the
/// lowest slot index. Each template type runs its own episode from a zero
/// memory; a type stops on its first all-ε argmax or after max_iter emitted
/// templates.
pub fn decode(
    doc: &Document,
    ontology: &Ontology,
    vocab: &SlotVocab,
    model: &Model,
    head: Head,
    max_iter: usize,
) -> Result<(Vec<TemplateInstance>, DecodeStats), EngineError> {
    decode_with(doc, ontology, vocab, model, max_iter, |t, tm, ty, states, _| {
        let out = tm.run_policy(t, vocab, head, ty, states)?;
        Ok((out.dist.greedy(t), out.summary))
    })
}

/// The decode loop with action selection factored out; tests script it.
fn decode_with<F>(
    doc: &Document,
    ontology: &Ontology,
    vocab: &SlotVocab,
    model: &Model,
    max_iter: usize,
    mut select: F,
) -> Result<(Vec<TemplateInstance>, DecodeStats), EngineError>
where
    F: FnMut(
        &mut Tape,
        &TapeModel,
        &str,
        &[VRange],
        usize,
    ) -> Result<(Vec<usize>, VRange), EngineError>,
{
    assert!(max_iter >= 1, "max_iter must be at least 1");
    let token_matrix = embed_tokens(doc, &model.embedder);
    let mut out = Vec::new();
    let mut stats = DecodeStats::default();
    for ty in &ontology.template_types {
        let mut t = Tape::new();
        let tm = model.register(&mut t);
        let enc = encode_spans(&mut t, doc, &token_matrix, &tm.encoder, &model.embedder)?;
        let mut state = EpisodeState::new(&mut t, enc.n_spans(), model.embedder.d);
        loop {
            let x = state_input(&mut t, &enc, &state)?;
            let (action, summary) = select(&mut t, &tm, &ty.name, &x, state.step)?;
            stats.policy_evals += 1;
            if action.iter().all(|&a| a == vocab.epsilon()) {
                break;
            }
            state.transition(
                &mut t,
                &tm.policy.slot_embeddings,
                &tm.gru,
                vocab,
                ontology,
                doc,
                &ty.name,
                &action,
                summary,
            )?;
            if state.step >= max_iter {
                break;
            }
        }
        out.extend(state.generated);
    }
    Ok((out, stats))
}

//! Slot-assignment policy heads.
//!
//! Both heads map per-span state vectors plus a template type to a
//! distribution over that type's slots ∪ {ε} for every span. The independent
//! head scores each span in isolation through a feedforward network; the joint
//! head runs a small self-attention encoder over (template, spans) first, so
//! span distributions can depend on each other. Slots outside the type carry
//! exactly zero probability.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::corpus::{Ontology, SlotKind, EPSILON_SLOT};
use crate::nn::{self, Ffn, LayerNorm, Param, TFfn, TLayerNorm, TParam};
use crate::tape::{Tape, VRange, Vid};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown template type `{0}`")]
    UnknownTemplateType(String),
    #[error("assignment covers {got} spans, distribution has {expected}")]
    IncompleteAssignment { expected: usize, got: usize },
    #[error("slot index {index} out of range for vocabulary of {n_slots}")]
    BadSlotIndex { index: usize, n_slots: usize },
}

/// Global slot vocabulary: the union of slot names across all template types
/// in first-appearance order, with ε as the final entry. Each template type
/// owns an ascending list of permitted indices: its span-fillable slots plus
/// ε. Boolean and categorical slots keep embedding rows but are excluded from
/// the action space, since a span assignment cannot materialize them.
#[derive(Debug, Clone)]
pub struct SlotVocab {
    pub slot_names: Vec<String>,
    pub type_names: Vec<String>,
    allowed: Vec<Vec<usize>>,
    slot_index: HashMap<String, usize>,
    type_index: HashMap<String, usize>,
}

fn span_fillable(kind: &SlotKind) -> bool {
    matches!(kind, SlotKind::Entity | SlotKind::Event | SlotKind::Mixed)
}

impl SlotVocab {
    pub fn new(ontology: &Ontology) -> Self {
        let mut slot_names: Vec<String> = Vec::new();
        let mut slot_index = HashMap::new();
        for tt in &ontology.template_types {
            for s in &tt.slots {
                if !slot_index.contains_key(&s.name) {
                    slot_index.insert(s.name.clone(), slot_names.len());
                    slot_names.push(s.name.clone());
                }
            }
        }
        let eps = slot_names.len();
        slot_index.insert(EPSILON_SLOT.to_string(), eps);
        slot_names.push(EPSILON_SLOT.to_string());

        let mut type_names = Vec::new();
        let mut type_index = HashMap::new();
        let mut allowed = Vec::new();
        for tt in &ontology.template_types {
            type_index.insert(tt.name.clone(), type_names.len());
            type_names.push(tt.name.clone());
            let mut idx: Vec<usize> = tt
                .slots
                .iter()
                .filter(|s| span_fillable(&s.kind))
                .map(|s| slot_index[&s.name])
                .collect();
            idx.push(eps);
            idx.sort_unstable();
            allowed.push(idx);
        }
        SlotVocab {
            slot_names,
            type_names,
            allowed,
            slot_index,
            type_index,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slot_names.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn epsilon(&self) -> usize {
        self.slot_names.len() - 1
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slot_index.get(name).copied()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    pub fn allowed(&self, type_idx: usize) -> &[usize] {
        &self.allowed[type_idx]
    }
}

/// One pre-norm residual block: self-attention then a position-wise FFN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub norm1: LayerNorm,
    pub wq: Param,
    pub bq: Param,
    pub wk: Param,
    pub bk: Param,
    pub wv: Param,
    pub bv: Param,
    pub wo: Param,
    pub bo: Param,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl AttentionLayer {
    fn new<R: Rng>(d: usize, rng: &mut R) -> Self {
        AttentionLayer {
            norm1: LayerNorm::new(d),
            wq: Param::xavier(d, d, rng),
            bq: Param::zeros(1, d),
            wk: Param::xavier(d, d, rng),
            bk: Param::zeros(1, d),
            wv: Param::xavier(d, d, rng),
            bv: Param::zeros(1, d),
            wo: Param::xavier(d, d, rng),
            bo: Param::zeros(1, d),
            norm2: LayerNorm::new(d),
            ffn: Ffn::new(d, 4 * d, d, rng),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.norm1.params();
        v.extend([
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]);
        v.extend(self.norm2.params());
        v.extend(self.ffn.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm1.params_mut();
        v.extend([
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]);
        v.extend(self.norm2.params_mut());
        v.extend(self.ffn.params_mut());
        v
    }

    fn register(&self, t: &mut Tape) -> TAttentionLayer {
        TAttentionLayer {
            norm1: self.norm1.register(t),
            wq: self.wq.register(t),
            bq: self.bq.register(t),
            wk: self.wk.register(t),
            bk: self.bk.register(t),
            wv: self.wv.register(t),
            bv: self.bv.register(t),
            wo: self.wo.register(t),
            bo: self.bo.register(t),
            norm2: self.norm2.register(t),
            ffn: self.ffn.register(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TAttentionLayer {
    pub norm1: TLayerNorm,
    pub wq: TParam,
    pub bq: TParam,
    pub wk: TParam,
    pub bk: TParam,
    pub wv: TParam,
    pub bv: TParam,
    pub wo: TParam,
    pub bo: TParam,
    pub norm2: TLayerNorm,
    pub ffn: TFfn,
}

/// All learnable policy state: embedding tables, the independent-head FFN and
/// the joint-head transformer. The slot table doubles as the output
/// projection (weight tying), so a slot's embedding is its classifier row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub d: usize,
    pub heads: usize,
    pub template_embeddings: Param,
    pub slot_embeddings: Param,
    pub independent_head: Ffn,
    pub layers: Vec<AttentionLayer>,
    pub final_norm: LayerNorm,
}

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HEADS: usize = 4;

impl PolicyParameters {
    pub fn new<R: Rng>(d: usize, n_types: usize, n_slots: usize, rng: &mut R) -> Self {
        Self::with_arch(d, n_types, n_slots, DEFAULT_LAYERS, DEFAULT_HEADS, rng)
    }

    pub fn with_arch<R: Rng>(
        d: usize,
        n_types: usize,
        n_slots: usize,
        layers: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "head count must divide d");
        PolicyParameters {
            d,
            heads,
            template_embeddings: Param::xavier(n_types, d, rng),
            slot_embeddings: Param::xavier(n_slots, d, rng),
            independent_head: Ffn::new(2 * d, d, d, rng),
            layers: (0..layers).map(|_| AttentionLayer::new(d, rng)).collect(),
            final_norm: LayerNorm::new(d),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.template_embeddings, &self.slot_embeddings];
        v.extend(self.independent_head.params());
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend(self.final_norm.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.template_embeddings, &mut self.slot_embeddings];
        v.extend(self.independent_head.params_mut());
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend(self.final_norm.params_mut());
        v
    }

    pub fn register(&self, t: &mut Tape) -> TPolicy {
        TPolicy {
            d: self.d,
            heads: self.heads,
            template_embeddings: self.template_embeddings.register(t),
            slot_embeddings: self.slot_embeddings.register(t),
            independent_head: self.independent_head.register(t),
            layers: self.layers.iter().map(|l| l.register(t)).collect(),
            final_norm: self.final_norm.register(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TPolicy {
    pub d: usize,
    pub heads: usize,
    pub template_embeddings: TParam,
    pub slot_embeddings: TParam,
    pub independent_head: TFfn,
    pub layers: Vec<TAttentionLayer>,
    pub final_norm: TLayerNorm,
}

/// Per-span probability rows over the full slot vocabulary. Entries for slots
/// outside S_t ∪ {ε} point at a shared zero (probability) / −∞ (log) leaf.
#[derive(Debug, Clone)]
pub struct SlotDistribution {
    pub n_slots: usize,
    pub allowed: Vec<usize>,
    rows_p: Vec<Vec<Vid>>,
    rows_lp: Vec<Vec<Vid>>,
}

impl SlotDistribution {
    /// Test constructor from literal probability rows; every slot is treated
    /// as permitted.
    pub fn from_probs(t: &mut Tape, rows: &[Vec<f64>]) -> Self {
        let n_slots = rows.first().map_or(0, |r| r.len());
        let mut rows_p = Vec::new();
        let mut rows_lp = Vec::new();
        for row in rows {
            assert_eq!(row.len(), n_slots, "ragged probability rows");
            let p = t.leaves(row);
            let lp: Vec<Vid> = p.iter().map(|v| t.ln(v)).collect();
            rows_p.push(p.iter().collect());
            rows_lp.push(lp);
        }
        SlotDistribution {
            n_slots,
            allowed: (0..n_slots).collect(),
            rows_p,
            rows_lp,
        }
    }

    pub fn n_spans(&self) -> usize {
        self.rows_p.len()
    }

    pub fn prob(&self, t: &Tape, span: usize, slot: usize) -> f64 {
        t.value(self.rows_p[span][slot])
    }

    pub fn log_prob_vid(&self, span: usize, slot: usize) -> Vid {
        self.rows_lp[span][slot]
    }

    pub fn row_values(&self, t: &Tape, span: usize) -> Vec<f64> {
        self.rows_p[span].iter().map(|&v| t.value(v)).collect()
    }

    /// Per-span argmax over permitted slots; ties break toward the lowest
    /// global slot index, so ε (the final index) never wins a tie.
    pub fn greedy(&self, t: &Tape) -> Vec<usize> {
        (0..self.n_spans())
            .map(|i| {
                let mut best = self.allowed[0];
                let mut best_v = f64::NEG_INFINITY;
                for &j in &self.allowed {
                    let v = t.value(self.rows_p[i][j]);
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Builds masked softmax rows from per-span representation vectors: logits
/// are dot products with the (tied) slot-embedding rows.
fn masked_distribution(
    t: &mut Tape,
    slot_embeddings: &TParam,
    allowed: &[usize],
    n_slots: usize,
    reps: &[VRange],
) -> SlotDistribution {
    let zero = t.leaf(0.0);
    let neg_inf = t.leaf(f64::NEG_INFINITY);
    let mut rows_p = Vec::with_capacity(reps.len());
    let mut rows_lp = Vec::with_capacity(reps.len());
    for &z in reps {
        let start = t.len() as u32;
        for &j in allowed {
            let s = slot_embeddings.row(j);
            t.dot(s, z);
        }
        let logits = VRange {
            start,
            len: allowed.len() as u32,
        };
        let (probs, logps) = nn::log_softmax(t, logits);
        let mut rp = vec![zero; n_slots];
        let mut rl = vec![neg_inf; n_slots];
        for (pos, &j) in allowed.iter().enumerate() {
            rp[j] = probs.at(pos);
            rl[j] = logps.at(pos);
        }
        rows_p.push(rp);
        rows_lp.push(rl);
    }
    SlotDistribution {
        n_slots,
        allowed: allowed.to_vec(),
        rows_p,
        rows_lp,
    }
}

/// A policy head's output: the per-span slot distribution and the template
/// summary vector t̂ feeding the memory update.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub dist: SlotDistribution,
    pub summary: VRange,
}

/// Scores each span independently: logits_s = sᵀ·FFN([t ; x]); t̂ = t.
pub fn independent_policy(
    t: &mut Tape,
    p: &TPolicy,
    vocab: &SlotVocab,
    type_name: &str,
    states: &[VRange],
) -> Result<PolicyOutput, PolicyError> {
    let ti = vocab
        .type_index(type_name)
        .ok_or_else(|| PolicyError::UnknownTemplateType(type_name.to_string()))?;
    let temb = p.template_embeddings.row(ti);
    let reps: Vec<VRange> = states
        .iter()
        .map(|x| {
            let ids: Vec<Vid> = temb.iter().chain(x.iter()).collect();
            let tx = t.gather(&ids);
            nn::ffn(t, &p.independent_head, tx)
        })
        .collect();
    let dist = masked_distribution(t, &p.slot_embeddings, vocab.allowed(ti), vocab.n_slots(), &reps);
    Ok(PolicyOutput {
        dist,
        summary: temb,
    })
}

// Head index h addresses parallel per-head column tables and slice offsets.
#[allow(clippy::needless_range_loop)]
fn attention_block(t: &mut Tape, layer: &TAttentionLayer, seq: &[VRange], heads: usize) -> Vec<VRange> {
    let n = seq.len();
    let d = seq[0].len as usize;
    let dh = d / heads;

    let normed: Vec<VRange> = seq.iter().map(|&x| nn::layer_norm(t, &layer.norm1, x)).collect();
    let qs: Vec<VRange> = normed
        .iter()
        .map(|&x| nn::affine(t, &layer.wq, &layer.bq, x))
        .collect();
    let ks: Vec<VRange> = normed
        .iter()
        .map(|&x| nn::affine(t, &layer.wk, &layer.bk, x))
        .collect();
    let vs: Vec<VRange> = normed
        .iter()
        .map(|&x| nn::affine(t, &layer.wv, &layer.bv, x))
        .collect();

    // Column views of the value vectors, gathered once and reused by every
    // query position.
    let mut vcols: Vec<Vec<VRange>> = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut cols = Vec::with_capacity(dh);
        for c in 0..dh {
            let ids: Vec<Vid> = vs.iter().map(|v| v.at(h * dh + c)).collect();
            cols.push(t.gather(&ids));
        }
        vcols.push(cols);
    }

    let scale = t.leaf(1.0 / (dh as f64).sqrt());
    let mut attended = Vec::with_capacity(n);
    for i in 0..n {
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = qs[i].slice(h * dh, (h + 1) * dh);
            let s_start = t.len() as u32;
            for k in ks.iter() {
                let kh = k.slice(h * dh, (h + 1) * dh);
                t.dot(qh, kh);
            }
            let raw = VRange {
                start: s_start,
                len: n as u32,
            };
            let scaled = t.scale_range(raw, scale);
            let (w, _) = nn::log_softmax(t, scaled);
            let o_start = t.len() as u32;
            for col in &vcols[h] {
                t.dot(w, *col);
            }
            head_outs.push(VRange {
                start: o_start,
                len: dh as u32,
            });
        }
        let ids: Vec<Vid> = head_outs.iter().flat_map(|r| r.iter()).collect();
        let concat = t.gather(&ids);
        let o = nn::affine(t, &layer.wo, &layer.bo, concat);
        attended.push(t.add_range(seq[i], o));
    }

    attended
        .iter()
        .map(|&x| {
            let nx = nn::layer_norm(t, &layer.norm2, x);
            let f = nn::ffn(t, &layer.ffn, nx);
            t.add_range(x, f)
        })
        .collect()
}

/// Runs the span-level self-attention encoder over (t, x₁..x_M) — no
/// positional signal is added here — then scores each contextualized span
/// against the slot table. t̂ is the encoder output at position 0.
pub fn joint_policy(
    t: &mut Tape,
    p: &TPolicy,
    vocab: &SlotVocab,
    type_name: &str,
    states: &[VRange],
) -> Result<PolicyOutput, PolicyError> {
    let ti = vocab
        .type_index(type_name)
        .ok_or_else(|| PolicyError::UnknownTemplateType(type_name.to_string()))?;
    let mut seq = Vec::with_capacity(states.len() + 1);
    seq.push(p.template_embeddings.row(ti));
    seq.extend(states.iter().copied());
    for layer in &p.layers {
        seq = attention_block(t, layer, &seq, p.heads);
    }
    let out: Vec<VRange> = seq
        .iter()
        .map(|&x| nn::layer_norm(t, &p.final_norm, x))
        .collect();
    let dist = masked_distribution(
        t,
        &p.slot_embeddings,
        vocab.allowed(ti),
        vocab.n_slots(),
        &out[1..],
    );
    Ok(PolicyOutput {
        dist,
        summary: out[0],
    })
}

/// Σ over spans of log P(assigned slot), as a tape value; −∞ when any
/// assigned slot is masked.
pub fn action_log_prob(
    t: &mut Tape,
    dist: &SlotDistribution,
    action: &[usize],
) -> Result<Vid, PolicyError> {
    if action.len() != dist.n_spans() {
        return Err(PolicyError::IncompleteAssignment {
            expected: dist.n_spans(),
            got: action.len(),
        });
    }
    for &a in action {
        if a >= dist.n_slots {
            return Err(PolicyError::BadSlotIndex {
                index: a,
                n_slots: dist.n_slots,
            });
        }
    }
    if action.is_empty() {
        return Ok(t.leaf(0.0));
    }
    let ids: Vec<Vid> = action
        .iter()
        .enumerate()
        .map(|(i, &a)| dist.log_prob_vid(i, a))
        .collect();
    let lp = t.gather(&ids);
    Ok(t.sum(lp))
}

pub fn action_log_prob_value(
    t: &mut Tape,
    dist: &SlotDistribution,
    action: &[usize],
) -> Result<f64, PolicyError> {
    let v = action_log_prob(t, dist, action)?;
    Ok(t.value(v))
}

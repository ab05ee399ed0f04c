//! The full learnable model: embedder config, span encoder, policy head and
//! the memory GRU, bundled for initialization, registration on a tape, SGD
//! updates and checkpointing.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::embed::{EmbedderConfig, EncoderParameters, TEncoder};
use crate::nn::{Gru, Param, TGru};
use crate::policy::{
    independent_policy, joint_policy, PolicyError, PolicyOutput, PolicyParameters, SlotVocab,
    TPolicy,
};
use crate::tape::{Tape, VRange};

/// Which slot-assignment head the model runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    Independent,
    Joint,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Independent => write!(f, "independent"),
            Head::Joint => write!(f, "joint"),
        }
    }
}

impl FromStr for Head {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(Head::Independent),
            "joint" => Ok(Head::Joint),
            other => Err(format!(
                "unknown head `{other}` (expected `independent` or `joint`)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub embedder: EmbedderConfig,
    pub encoder: EncoderParameters,
    pub policy: PolicyParameters,
    pub gru: Gru,
}

impl Model {
    /// Fresh parameters for the given embedding width and slot vocabulary.
    /// The GRU consumes [slot ; t̂] (width 2d) and carries a d-wide memory.
    pub fn init<R: Rng>(embedder: EmbedderConfig, vocab: &SlotVocab, rng: &mut R) -> Self {
        let d = embedder.d;
        Model {
            encoder: EncoderParameters::new(d, rng),
            policy: PolicyParameters::new(d, vocab.n_types(), vocab.n_slots(), rng),
            gru: Gru::new(2 * d, d, rng),
            embedder,
        }
    }

    /// Every parameter tensor, in the fixed order mirrored by
    /// [`TapeModel::ranges`]. SGD and gradient checks rely on this pairing.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.policy.params());
        v.extend(self.gru.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.policy.params_mut());
        v.extend(self.gru.params_mut());
        v
    }

    pub fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    pub fn register(&self, t: &mut Tape) -> TapeModel {
        TapeModel {
            encoder: self.encoder.register(t),
            policy: self.policy.register(t),
            gru: self.gru.register(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TapeModel {
    pub encoder: TEncoder,
    pub policy: TPolicy,
    pub gru: TGru,
}

impl TapeModel {
    /// Leaf ranges in the same order as [`Model::params`].
    pub fn ranges(&self) -> Vec<VRange> {
        let mut v = vec![
            self.encoder.pooling_query.range,
            self.encoder.compress.w1.range,
            self.encoder.compress.b1.range,
            self.encoder.compress.w2.range,
            self.encoder.compress.b2.range,
            self.policy.template_embeddings.range,
            self.policy.slot_embeddings.range,
            self.policy.independent_head.w1.range,
            self.policy.independent_head.b1.range,
            self.policy.independent_head.w2.range,
            self.policy.independent_head.b2.range,
        ];
        for l in &self.policy.layers {
            v.extend([
                l.norm1.gain.range,
                l.norm1.bias.range,
                l.wq.range,
                l.bq.range,
                l.wk.range,
                l.bk.range,
                l.wv.range,
                l.bv.range,
                l.wo.range,
                l.bo.range,
                l.norm2.gain.range,
                l.norm2.bias.range,
                l.ffn.w1.range,
                l.ffn.b1.range,
                l.ffn.w2.range,
                l.ffn.b2.range,
            ]);
        }
        v.extend([
            self.policy.final_norm.gain.range,
            self.policy.final_norm.bias.range,
            self.gru.wz.range,
            self.gru.uz.range,
            self.gru.bz.range,
            self.gru.wr.range,
            self.gru.ur.range,
            self.gru.br.range,
            self.gru.wh.range,
            self.gru.uh.range,
            self.gru.bh.range,
        ]);
        v
    }

    /// Dispatches to the requested head.
    pub fn run_policy(
        &self,
        t: &mut Tape,
        vocab: &SlotVocab,
        head: Head,
        type_name: &str,
        states: &[VRange],
    ) -> Result<PolicyOutput, PolicyError> {
        match head {
            Head::Independent => independent_policy(t, &self.policy, vocab, type_name, states),
            Head::Joint => joint_policy(t, &self.policy, vocab, type_name, states),
        }
    }
}

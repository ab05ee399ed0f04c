//! Deterministic toy token embedder and the span-representation pipeline.
//!
//! Token vectors are hash-seeded unit Gaussians: a pure function of
//! (token string, seed), standing in for a pretrained encoder. Span encodings
//! concatenate first/last/attention-pooled token vectors, compress through a
//! two-layer FFN and add a sinusoidal offset encoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::corpus::Document;
use crate::nn::{self, Ffn, Param, TFfn, TParam};
use crate::tape::{Tape, VRange};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding width must be a positive multiple of 4, got {0}")]
    BadWidth(usize),
    #[error("token matrix has {got} rows, document has {want} tokens")]
    RowMismatch { got: usize, want: usize },
}

fn default_d() -> usize {
    32
}

fn default_chunk() -> usize {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    pub seed: u64,
    /// Retained for interface parity; the surrogate embedder is per-token, so
    /// chunking never changes its output.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            d: default_d(),
            seed: 0,
            chunk_size: default_chunk(),
        }
    }
}

impl EmbedderConfig {
    pub fn new(d: usize, seed: u64) -> Result<Self, EmbedError> {
        let cfg = EmbedderConfig {
            d,
            seed,
            chunk_size: default_chunk(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The width must be even for the sinusoidal pairs and divisible by the
    /// joint head's 4 attention heads.
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.d == 0 || !self.d.is_multiple_of(4) {
            return Err(EmbedError::BadWidth(self.d));
        }
        Ok(())
    }
}

/// Learned parts of the span encoder: the pooling query and the 3d→d→d
/// compression FFN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParameters {
    pub pooling_query: Param,
    pub compress: Ffn,
}

impl EncoderParameters {
    pub fn new<R: rand::Rng>(d: usize, rng: &mut R) -> Self {
        EncoderParameters {
            pooling_query: Param::randn(1, d, 1.0 / (d as f64).sqrt(), rng),
            compress: Ffn::new(3 * d, d, d, rng),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.pooling_query];
        v.extend(self.compress.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.pooling_query];
        v.extend(self.compress.params_mut());
        v
    }

    pub fn register(&self, t: &mut Tape) -> TEncoder {
        TEncoder {
            pooling_query: self.pooling_query.register(t),
            compress: self.compress.register(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TEncoder {
    pub pooling_query: TParam,
    pub compress: TFfn,
}

fn fnv1a64(seed: u64, token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Unit-norm Gaussian vector drawn from a generator seeded by the token hash.
pub fn token_vector(token: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(cfg.seed, token));
    let mut v: Vec<f64> = (0..cfg.d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    v
}

/// N × d token matrix; identical tokens share identical rows.
pub fn embed_tokens(doc: &Document, cfg: &EmbedderConfig) -> Vec<Vec<f64>> {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    doc.tokens
        .iter()
        .map(|tok| {
            cache
                .entry(tok.as_str())
                .or_insert_with(|| token_vector(tok, cfg))
                .clone()
        })
        .collect()
}

/// entry 2k = sin(offset / 10000^(2k/d)), entry 2k+1 = cos of the same angle.
pub fn positional_encoding(offset: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; d];
    for k in 0..d / 2 {
        let angle = offset as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        pe[2 * k] = angle.sin();
        pe[2 * k + 1] = angle.cos();
    }
    pe
}

/// Per-mention encodings x_enc, as rows on the tape.
#[derive(Debug, Clone)]
pub struct SpanEncoding {
    pub rows: Vec<VRange>,
    pub d: usize,
}

impl SpanEncoding {
    pub fn n_spans(&self) -> usize {
        self.rows.len()
    }

    pub fn to_values(&self, t: &Tape) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| t.values(*r)).collect()
    }
}

/// Builds x_enc for every candidate mention:
/// [first ; last ; pooled] → FFN(3d→d→d) → + sinusoidal(left offset).
pub fn encode_spans(
    t: &mut Tape,
    doc: &Document,
    token_matrix: &[Vec<f64>],
    enc: &TEncoder,
    cfg: &EmbedderConfig,
) -> Result<SpanEncoding, EmbedError> {
    if token_matrix.len() != doc.tokens.len() {
        return Err(EmbedError::RowMismatch {
            got: token_matrix.len(),
            want: doc.tokens.len(),
        });
    }
    let d = cfg.d;
    let mut rows = Vec::with_capacity(doc.mentions.len());
    for m in &doc.mentions {
        let span_toks: Vec<VRange> = (m.left..=m.right)
            .map(|i| t.leaves(&token_matrix[i]))
            .collect();
        let first = span_toks[0];
        let last = *span_toks.last().unwrap();

        let score_start = t.len() as u32;
        for tok in &span_toks {
            t.dot(*tok, enc.pooling_query.range);
        }
        let scores = VRange {
            start: score_start,
            len: span_toks.len() as u32,
        };
        let (weights, _) = nn::log_softmax(t, scores);
        let cols: Vec<VRange> = (0..d)
            .map(|c| {
                let col: Vec<_> = span_toks.iter().map(|r| r.at(c)).collect();
                t.gather(&col)
            })
            .collect();
        let pooled_start = t.len() as u32;
        for col in cols {
            t.dot(weights, col);
        }
        let pooled = VRange {
            start: pooled_start,
            len: d as u32,
        };

        let concat: Vec<_> = first
            .iter()
            .chain(last.iter())
            .chain(pooled.iter())
            .collect();
        let concat = t.gather(&concat);
        let compressed = nn::ffn(t, &enc.compress, concat);
        let pe = t.leaves(&positional_encoding(m.left, d));
        rows.push(t.add_range(compressed, pe));
    }
    Ok(SpanEncoding { rows, d })
}

/// Convenience wrapper evaluating span encodings on a scratch tape.
pub fn encode_spans_values(
    doc: &Document,
    cfg: &EmbedderConfig,
    params: &EncoderParameters,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let mut t = Tape::new();
    let reg = params.register(&mut t);
    let tokens = embed_tokens(doc, cfg);
    let enc = encode_spans(&mut t, doc, &tokens, &reg, cfg)?;
    Ok(enc.to_values(&t))
}

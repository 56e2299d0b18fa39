//! Caption encoding and the dynamic mixture of text experts.
//!
//! Each expert's caption is encoded by a frozen [`TextEncoder`] into an L×d
//! token matrix. A shared self-attention adapter refines every matrix, a
//! sigmoid gate computed from the pooled tokens scores each expert, and the
//! mixed tokens are the gate- and weight-scaled sum of the adapted matrices.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{dim, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::{normal_tensor, substream, Fnv64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps text to a fixed-size L×d token matrix.
pub trait TextEncoder {
    fn length(&self) -> usize;
    fn width(&self) -> usize;
    fn encode(&self, params: &ParamStore, text: &str) -> Tensor;
}

/// Lower-cased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Frozen hashing encoder: token `i` becomes row `i` of the output, taken
/// from a random embedding table at a seeded hash of the token. Rows past
/// the last token are zero; tokens past `length` are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashEncoder {
    pub length: usize,
    pub width: usize,
    pub buckets: usize,
    pub seed: u64,
    pub table: ParamId,
}

impl HashEncoder {
    pub const DEFAULT_LENGTH: usize = 16;
    pub const DEFAULT_WIDTH: usize = 32;
    pub const DEFAULT_BUCKETS: usize = 2048;

    /// Registers the embedding table in `store` as a frozen parameter.
    pub fn new(store: &mut ParamStore, seed: u64, length: usize, width: usize, buckets: usize) -> Self {
        let mut rng = substream(seed, "text-encoder");
        let table = normal_tensor(&mut rng, &[buckets, width], 1.0);
        let table = store.add("text_encoder.table", table, false);
        Self {
            length,
            width,
            buckets,
            seed,
            table,
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = Fnv64::new();
        h.write_u64(self.seed);
        h.write(token.as_bytes());
        (h.finish() % self.buckets as u64) as usize
    }
}

impl TextEncoder for HashEncoder {
    fn length(&self) -> usize {
        self.length
    }

    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, params: &ParamStore, text: &str) -> Tensor {
        let table = params.value(self.table).data();
        let d = self.width;
        let mut out = Tensor::zeros(&[self.length, d]);
        for (row, token) in tokenize(text).iter().take(self.length).enumerate() {
            let b = self.bucket(token);
            out.data_mut()[row * d..(row + 1) * d].copy_from_slice(&table[b * d..(b + 1) * d]);
        }
        out
    }
}

/// Single-head self-attention with output projection and residual, shared
/// by all experts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinguisticAttention {
    pub width: usize,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
}

impl LinguisticAttention {
    pub fn new(store: &mut ParamStore, seed: u64, width: usize) -> Self {
        let mut rng = substream(seed, "linguistic-attention");
        let std = 1.0 / libm::sqrtf(width as f32);
        let mut mat = |name: &str| {
            store.add(
                format!("dmte.attention.{name}"),
                normal_tensor(&mut rng, &[width, width], std),
                true,
            )
        };
        Self {
            width,
            query: mat("query"),
            key: mat("key"),
            value: mat("value"),
            output: mat("output"),
        }
    }

    /// `softmax(Q Kᵀ / √d) V W_o + Φ` for an L×d token matrix Φ.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: Var) -> Result<Var> {
        let s = g.shape(tokens);
        if s.len() != 2 || s[1] != self.width {
            return Err(dim(
                "linguistic_attention",
                format!("tokens {s:?} do not have width {}", self.width),
            ));
        }
        let (wq, wk, wv, wo) = (
            g.param(self.query),
            g.param(self.key),
            g.param(self.value),
            g.param(self.output),
        );
        let q = g.matmul(tokens, wq)?;
        let k = g.matmul(tokens, wk)?;
        let v = g.matmul(tokens, wv)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, T::one() / T::from_usize(self.width).sqrt());
        let attn = g.softmax(logits, 1)?;
        let mixed = g.matmul(attn, v)?;
        let projected = g.matmul(mixed, wo)?;
        g.add(projected, tokens)
    }
}

/// Gate values for `M` experts: sigmoid of a linear map of the token matrix
/// averaged over experts and then over tokens.
pub fn compute_gates<T: Scalar>(g: &mut Graph<'_, T>, adapted: &[Var], weight: Var, bias: Var) -> Result<Var> {
    let ws = g.shape(weight).to_vec();
    if ws.len() != 2 || ws[1] != adapted.len() || g.value(bias).numel() != ws[1] {
        return Err(dim(
            "compute_gates",
            format!(
                "{} experts against gate weight {ws:?} and bias {:?}",
                adapted.len(),
                g.shape(bias)
            ),
        ));
    }
    let m = ws[1];
    let mut total = adapted[0];
    for &a in &adapted[1..] {
        total = g.add(total, a)?;
    }
    let pooled = g.scale(total, T::one() / T::from_usize(m));
    let pooled = g.mean(pooled, 0)?;
    let row = g.reshape(pooled, &[1, ws[0]])?;
    let logits = g.linear(row, weight, Some(bias))?;
    let gates = g.sigmoid(logits);
    g.reshape(gates, &[m])
}

/// `Σ_m W_m · G_m · Φ_m`.
pub fn mix_experts<T: Scalar>(g: &mut Graph<'_, T>, adapted: &[Var], gates: Var, weights: Var) -> Result<Var> {
    let m = adapted.len();
    if m == 0 || g.value(gates).numel() != m || g.value(weights).numel() != m {
        return Err(dim(
            "mix_experts",
            format!(
                "{m} experts against gates {:?} and weights {:?}",
                g.shape(gates),
                g.shape(weights)
            ),
        ));
    }
    let gates = g.reshape(gates, &[m])?;
    let weights = g.reshape(weights, &[m])?;
    let mut total = None;
    for (i, &phi) in adapted.iter().enumerate() {
        let gi = g.narrow(gates, 0, i, 1)?;
        let wi = g.narrow(weights, 0, i, 1)?;
        let coeff = g.mul(gi, wi)?;
        let term = g.scale_by(phi, coeff)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one expert"))
}

/// Parameters of the expert mixture: the shared adapter, the gate and the
/// per-expert weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dmte {
    pub experts: usize,
    pub attention: LinguisticAttention,
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub expert_weights: ParamId,
}

/// Mixed tokens and the gate values that produced them.
#[derive(Clone, Copy, Debug)]
pub struct MixOutput {
    pub tokens: Var,
    pub gates: Var,
}

impl Dmte {
    /// Gate weight and bias start at zero (every gate 0.5); expert weights at 1.
    pub fn new(store: &mut ParamStore, seed: u64, width: usize, experts: usize) -> Self {
        let attention = LinguisticAttention::new(store, seed, width);
        let gate_weight = store.add("dmte.gate.weight", Tensor::zeros(&[width, experts]), true);
        let gate_bias = store.add("dmte.gate.bias", Tensor::zeros(&[experts]), true);
        let expert_weights = store.add("dmte.expert_weights", Tensor::full(&[experts], 1.0), true);
        Self {
            experts,
            attention,
            gate_weight,
            gate_bias,
            expert_weights,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[Var]) -> Result<MixOutput> {
        if tokens.len() != self.experts {
            return Err(dim(
                "dmte",
                format!("{} token sets for {} experts", tokens.len(), self.experts),
            ));
        }
        let adapted = tokens
            .iter()
            .map(|&t| self.attention.forward(g, t))
            .collect::<Result<Vec<_>>>()?;
        let (gw, gb, ew) = (
            g.param(self.gate_weight),
            g.param(self.gate_bias),
            g.param(self.expert_weights),
        );
        let gates = compute_gates(g, &adapted, gw, gb)?;
        let tokens = mix_experts(g, &adapted, gates, ew)?;
        Ok(MixOutput { tokens, gates })
    }
}

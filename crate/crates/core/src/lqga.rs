//! Text-queried guidance of visual features.
//!
//! Text tokens query the visual tokens of a C×H×W map; the attended values,
//! averaged over queries and squashed by a sigmoid, give one weight per
//! channel. The map is scaled channel-wise by those weights, added back to
//! itself, concatenated with a second visual stream and reduced by a 1×1
//! convolution.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{ConvSpec, Graph, Var};
use crate::error::{dim, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::{indexed_substream, normal_tensor};
use crate::scalar::Scalar;
use crate::vision::Conv;

/// Query, key and value token matrices of one block.
#[derive(Clone, Copy, Debug)]
pub struct Projections {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Text tokens as queries (L×d_e), visual tokens as keys (N×d_e) and values
/// (N×C), visual position (y, x) at token y·W + x.
pub fn project<T: Scalar>(
    g: &mut Graph<'_, T>,
    visual: Var,
    text: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Projections> {
    let (sv, st) = (g.shape(visual).to_vec(), g.shape(text).to_vec());
    let (sq, sk, svv) = (g.shape(wq).to_vec(), g.shape(wk).to_vec(), g.shape(wv).to_vec());
    let ok = sv.len() == 3
        && st.len() == 2
        && sq.len() == 2
        && sk.len() == 2
        && svv.len() == 2
        && sq[0] == st[1]
        && sk[0] == sv[0]
        && svv[0] == sv[0]
        && sq[1] == sk[1];
    if !ok {
        return Err(dim(
            "lqga_project",
            format!("visual {sv:?}, text {st:?} against query {sq:?}, key {sk:?}, value {svv:?}"),
        ));
    }
    let tokens = g.to_tokens(visual)?;
    Ok(Projections {
        query: g.matmul(text, wq)?,
        key: g.matmul(tokens, wk)?,
        value: g.matmul(tokens, wv)?,
    })
}

/// `sigmoid(mean_rows(softmax(Q Kᵀ / √d_e) V))`, one weight per value column.
pub fn guided_weights<T: Scalar>(g: &mut Graph<'_, T>, p: Projections) -> Result<Var> {
    let d = g.shape(p.query)[1];
    let kt = g.transpose(p.key)?;
    let logits = g.matmul(p.query, kt)?;
    let logits = g.scale(logits, T::one() / T::from_usize(d).sqrt());
    let attn = g.softmax(logits, 1)?;
    let attended = g.matmul(attn, p.value)?;
    let pooled = g.mean(attended, 0)?;
    Ok(g.sigmoid(pooled))
}

/// `w[c] · F[c, y, x] + F[c, y, x]`.
pub fn apply_guidance<T: Scalar>(g: &mut Graph<'_, T>, weights: Var, visual: Var) -> Result<Var> {
    let s = g.shape(visual).to_vec();
    if s.len() != 3 || g.value(weights).numel() != s[0] {
        return Err(dim(
            "apply_guidance",
            format!("weights {:?} against visual map {s:?}", g.shape(weights)),
        ));
    }
    let column = g.reshape(weights, &[s[0], 1, 1])?;
    let broad = g.expand(column, &s)?;
    let scaled = g.mul(broad, visual)?;
    g.add(scaled, visual)
}

/// One guided-attention block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LqgaBlock {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub fuse: Conv,
}

/// Output of a block and the channel weights it applied.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub features: Var,
    pub weights: Var,
}

impl LqgaBlock {
    pub fn new(store: &mut ParamStore, seed: u64, index: usize, text_width: usize, channels: usize, embed: usize) -> Self {
        let mut rng = indexed_substream(seed, "lqga", index as u64);
        let name = format!("lqga{index}");
        let query = store.add(
            format!("{name}.query"),
            normal_tensor(&mut rng, &[text_width, embed], 1.0 / libm::sqrtf(text_width as f32)),
            true,
        );
        let key = store.add(
            format!("{name}.key"),
            normal_tensor(&mut rng, &[channels, embed], 1.0 / libm::sqrtf(channels as f32)),
            true,
        );
        let value = store.add(
            format!("{name}.value"),
            normal_tensor(&mut rng, &[channels, channels], 1.0 / libm::sqrtf(channels as f32)),
            true,
        );
        let fuse = Conv::new(
            store,
            &mut rng,
            &format!("{name}.fuse"),
            [channels, 2 * channels, 1, 1],
            ConvSpec::unit(),
            true,
            true,
        );
        Self {
            query,
            key,
            value,
            fuse,
        }
    }

    /// Guides `visual` with `text` and fuses the result with `stream`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, visual: Var, stream: Var, text: Var) -> Result<BlockOutput> {
        let (wq, wk, wv) = (g.param(self.query), g.param(self.key), g.param(self.value));
        let p = project(g, visual, text, wq, wk, wv)?;
        let weights = guided_weights(g, p)?;
        let guided = apply_guidance(g, weights, visual)?;
        let features = fuse_output(g, guided, stream, &self.fuse)?;
        Ok(BlockOutput { features, weights })
    }
}

/// 1×1 convolution of the channel concatenation of two equal-size maps.
pub fn fuse_output<T: Scalar>(g: &mut Graph<'_, T>, guided: Var, stream: Var, conv: &Conv) -> Result<Var> {
    let (a, b) = (g.shape(guided).to_vec(), g.shape(stream).to_vec());
    if a.len() != 3 || a != b {
        return Err(dim("fuse_output", format!("guided {a:?} vs stream {b:?}")));
    }
    let joined = g.concat(&[guided, stream], 0)?;
    conv.forward(g, joined)
}

/// Chained blocks: the first sees the fused encoder feature on both inputs,
/// each later block sees the previous block's output on both.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LqgaStack {
    pub blocks: Vec<LqgaBlock>,
}

/// Final features and the weights of every block.
#[derive(Clone, Debug)]
pub struct StackOutput {
    pub features: Var,
    pub weights: Vec<Var>,
}

impl LqgaStack {
    pub fn new(store: &mut ParamStore, seed: u64, blocks: usize, text_width: usize, channels: usize, embed: usize) -> Self {
        Self {
            blocks: (0..blocks)
                .map(|i| LqgaBlock::new(store, seed, i, text_width, channels, embed))
                .collect(),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, fused: Var, text: Var) -> Result<StackOutput> {
        let mut z = fused;
        let mut weights = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = block.forward(g, z, z, text)?;
            z = out.features;
            weights.push(out.weights);
        }
        Ok(StackOutput { features: z, weights })
    }
}

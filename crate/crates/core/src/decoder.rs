//! U-Net style decoder and the argmax readout.
//!
//! Three stages run from coarse to fine. Each joins its input with the skip
//! feature of the same resolution, applies two 3×3 conv + norm + ReLU
//! blocks, and (except the last) doubles the resolution. A 1×1 head emits
//! `K·f²` channels which a depth-to-space step turns into K full-resolution
//! logit maps, `f` being the stride of the last stage.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{ConvSpec, Graph, Var};
use crate::error::{dim, Result};
use crate::param::ParamStore;
use crate::rng::indexed_substream;
use crate::scalar::Scalar;
use crate::scene::LabelMap;
use crate::tensor::Tensor;
use crate::vision::{Conv, ConvBlock};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderStage {
    pub blocks: [ConvBlock; 2],
    pub upsample: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoder {
    pub stages: Vec<DecoderStage>,
    pub head: Conv,
    pub classes: usize,
    /// Resolution ratio between the last stage and the image.
    pub head_stride: usize,
}

impl Decoder {
    /// `input` channels of the deepest map, `skips` widths from fine to
    /// coarse, `widths` of the stages from coarse to fine. The head starts
    /// at zero so every class begins equally likely.
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        input: usize,
        skips: [usize; 3],
        widths: [usize; 3],
        classes: usize,
        head_stride: usize,
    ) -> Self {
        let mut in_ch = input;
        let mut stages = Vec::with_capacity(3);
        for (i, &w) in widths.iter().enumerate() {
            let mut rng = indexed_substream(seed, "decoder", i as u64);
            let skip = skips[2 - i];
            let name = format!("decoder.stage{}", i + 1);
            stages.push(DecoderStage {
                blocks: [
                    ConvBlock::new(store, &mut rng, &format!("{name}.a"), in_ch + skip, w, 1),
                    ConvBlock::new(store, &mut rng, &format!("{name}.b"), w, w, 1),
                ],
                upsample: i < 2,
            });
            in_ch = w;
        }
        let mut rng = indexed_substream(seed, "decoder", 3);
        let head = Conv::new(
            store,
            &mut rng,
            "decoder.head",
            [classes * head_stride * head_stride, in_ch, 1, 1],
            ConvSpec::unit(),
            true,
            true,
        );
        store.get_mut(head.kernel).value.fill(0.0);
        Self {
            stages,
            head,
            classes,
            head_stride,
        }
    }

    /// K×H×W logits from the deepest feature and the skips `[f1, f2, f3]`
    /// (strides 4, 8, 16).
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, deep: Var, skips: [Var; 3]) -> Result<Var> {
        let mut x = deep;
        for (i, stage) in self.stages.iter().enumerate() {
            let skip = skips[2 - i];
            let (a, b) = (g.shape(x).to_vec(), g.shape(skip).to_vec());
            if a.len() != 3 || b.len() != 3 || a[1..] != b[1..] {
                return Err(dim(
                    "decode",
                    format!("stage {}: input {a:?} does not match skip {b:?}", i + 1),
                ));
            }
            x = g.concat(&[x, skip], 0)?;
            for block in &stage.blocks {
                x = block.forward(g, x)?;
            }
            if stage.upsample {
                x = g.upsample_nearest(x, 2)?;
            }
        }
        let y = self.head.forward(g, x)?;
        g.depth_to_space(y, self.head_stride)
    }
}

/// Per-pixel argmax over the class axis of K×H×W logits; ties go to the
/// lowest class index.
pub fn segment<T: Scalar>(logits: &Tensor<T>) -> Result<LabelMap> {
    let s = logits.shape();
    if s.len() != 3 || s[0] == 0 || s[0] > 256 {
        return Err(dim("segment", format!("expected K×H×W with 1 ≤ K ≤ 256, got {s:?}")));
    }
    let (k, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let d = logits.data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * plane + p] > d[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, labels)
}

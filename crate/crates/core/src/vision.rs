//! Vision encoder: a frozen multi-level backbone, a lite trainable detail
//! encoder, dilated local-window fusion of the deepest level and per-level
//! skip features for the decoder.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{ConvSpec, Graph, Var, WindowSpec};
use crate::error::{dim, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::{he_tensor, indexed_substream, normal_tensor, substream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Convolution weights with an optional bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    /// He-initialised kernel and zero bias.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        name: &str,
        shape: [usize; 4],
        spec: ConvSpec,
        bias: bool,
        trainable: bool,
    ) -> Self {
        let fan_in = shape[1] * shape[2] * shape[3];
        let kernel = store.add(format!("{name}.kernel"), he_tensor(rng, &shape, fan_in), trainable);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[shape[0]]), trainable));
        Self { kernel, bias, spec }
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.value(self.kernel).shape()[0]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let k = g.param(self.kernel);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, k, b, self.spec)
    }
}

/// Channel-wise layer norm parameters (scale 1, shift 0 at start).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
        }
    }

    /// Normalises a C×H×W map across channels at every pixel.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta, 0)
    }
}

/// Convolution, channel norm, ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let conv = Conv::new(
            store,
            rng,
            &format!("{name}.conv"),
            [out_ch, in_ch, 3, 3],
            ConvSpec::same(3, stride),
            true,
            true,
        );
        let norm = Norm::new(store, &format!("{name}.norm"), out_ch);
        Self { conv, norm }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.norm.forward(g, y)?;
        Ok(g.relu(y))
    }
}

fn check_image(op: &'static str, shape: &[usize], multiple: usize) -> Result<()> {
    if shape.len() != 3 || shape[0] != 3 || !shape[1].is_multiple_of(multiple) || !shape[2].is_multiple_of(multiple) || shape[1] == 0 {
        return Err(dim(
            op,
            format!("image {shape:?} must be 3×H×W with H, W divisible by {multiple}"),
        ));
    }
    Ok(())
}

/// Frozen stand-in for a pretrained backbone: four conv + ReLU levels at
/// strides 4, 8, 16 and 16.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StubBackbone {
    pub widths: [usize; 4],
    pub levels: [Conv; 4],
}

impl StubBackbone {
    pub fn new(store: &mut ParamStore, seed: u64, widths: [usize; 4]) -> Self {
        let mut rng = substream(seed, "backbone");
        let [w0, w1, w2, w3] = widths;
        let mut conv = |i: usize, shape: [usize; 4], spec: ConvSpec| {
            Conv::new(store, &mut rng, &format!("backbone.level{i}"), shape, spec, true, false)
        };
        let levels = [
            conv(0, [w0, 3, 4, 4], ConvSpec::new(4, 0, 1)),
            conv(1, [w1, w0, 3, 3], ConvSpec::same(3, 2)),
            conv(2, [w2, w1, 3, 3], ConvSpec::same(3, 2)),
            conv(3, [w3, w2, 3, 3], ConvSpec::same(3, 1)),
        ];
        let mut rng = substream(seed, "backbone-bias");
        for level in &levels {
            let id = level.bias.expect("backbone convs carry a bias");
            let n = store.value(id).numel();
            store.get_mut(id).value = normal_tensor(&mut rng, &[n], 0.1);
        }
        Self { widths, levels }
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<[Var; 4]> {
        check_image("backbone", g.shape(image), 16)?;
        let mut taps = Vec::with_capacity(4);
        let mut x = image;
        for level in &self.levels {
            let y = level.forward(g, x)?;
            x = g.relu(y);
            taps.push(x);
        }
        Ok([taps[0], taps[1], taps[2], taps[3]])
    }

    /// Evaluates the frozen levels outside any training graph.
    pub fn features(&self, store: &ParamStore, image: &Tensor) -> Result<[Tensor; 4]> {
        let mut g = Graph::with_params(store);
        let x = g.input(image.clone());
        let taps = self.encode(&mut g, x)?;
        Ok(taps.map(|t| g.value(t).clone()))
    }
}

/// Lite detail encoder: stage one (two stride-2 blocks) reaches stride 4,
/// stages two and three add one stride-2 block each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetailEncoder {
    pub widths: [usize; 3],
    pub stem: [ConvBlock; 2],
    pub stage2: ConvBlock,
    pub stage3: ConvBlock,
}

impl DetailEncoder {
    pub fn new(store: &mut ParamStore, seed: u64, widths: [usize; 3]) -> Self {
        let mut rng = substream(seed, "detail-encoder");
        let [c1, c2, c3] = widths;
        let stem = [
            ConvBlock::new(store, &mut rng, "detail.stage1a", 3, c1, 2),
            ConvBlock::new(store, &mut rng, "detail.stage1b", c1, c1, 2),
        ];
        let stage2 = ConvBlock::new(store, &mut rng, "detail.stage2", c1, c2, 2);
        let stage3 = ConvBlock::new(store, &mut rng, "detail.stage3", c2, c3, 2);
        Self {
            widths,
            stem,
            stage2,
            stage3,
        }
    }

    /// Detail maps at strides 4, 8 and 16.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<[Var; 3]> {
        check_image("detail_encoder", g.shape(image), 16)?;
        let x = self.stem[0].forward(g, image)?;
        let l1 = self.stem[1].forward(g, x)?;
        let l2 = self.stage2.forward(g, l1)?;
        let l3 = self.stage3.forward(g, l2)?;
        Ok([l1, l2, l3])
    }
}

/// One dilated local-window self-attention over a C×H×W map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub window: usize,
    pub dilation: usize,
}

impl WindowAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        name: &str,
        channels: usize,
        window: usize,
        dilation: usize,
    ) -> Self {
        let std = 1.0 / libm::sqrtf(channels as f32);
        let mut mat = |part: &str| {
            store.add(
                format!("{name}.{part}"),
                normal_tensor(rng, &[channels, channels], std),
                true,
            )
        };
        Self {
            query: mat("query"),
            key: mat("key"),
            value: mat("value"),
            window,
            dilation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 {
            return Err(dim("dilate_fuse", format!("expected C×H×W, got {s:?}")));
        }
        let spec = WindowSpec {
            height: s[1],
            width: s[2],
            window: self.window,
            dilation: self.dilation,
        };
        let tokens = g.to_tokens(x)?;
        let (wq, wk, wv) = (g.param(self.query), g.param(self.key), g.param(self.value));
        let q = g.matmul(tokens, wq)?;
        let k = g.matmul(tokens, wk)?;
        let v = g.matmul(tokens, wv)?;
        let y = g.window_attention(q, k, v, spec)?;
        g.from_tokens(y, s[1], s[2])
    }
}

/// Fusion of the deepest backbone level with the deepest detail level: each
/// stream is aligned to `channels` by a 1×1 convolution and passed through
/// its own window attention, then the streams are concatenated and reduced
/// by a 1×1 convolution. Without a detail stream only the backbone stream
/// is used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DilateFuse {
    pub channels: usize,
    pub streams: Vec<(Conv, WindowAttention)>,
    pub reduce: Conv,
}

impl DilateFuse {
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        stream_widths: &[usize],
        channels: usize,
        window: usize,
        dilation: usize,
    ) -> Self {
        let mut rng = substream(seed, "dilate-fuse");
        let streams = stream_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let align = Conv::new(
                    store,
                    &mut rng,
                    &format!("fuse.stream{i}.align"),
                    [channels, w, 1, 1],
                    ConvSpec::unit(),
                    true,
                    true,
                );
                let attn = WindowAttention::new(store, &mut rng, &format!("fuse.stream{i}.attention"), channels, window, dilation);
                (align, attn)
            })
            .collect::<Vec<_>>();
        let reduce = Conv::new(
            store,
            &mut rng,
            "fuse.reduce",
            [channels, channels * streams.len(), 1, 1],
            ConvSpec::unit(),
            true,
            true,
        );
        Self {
            channels,
            streams,
            reduce,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.streams.len() {
            return Err(dim(
                "dilate_fuse",
                format!("{} inputs for {} streams", inputs.len(), self.streams.len()),
            ));
        }
        let mut outs = Vec::with_capacity(inputs.len());
        for (&x, (align, attn)) in inputs.iter().zip(&self.streams) {
            let a = align.forward(g, x)?;
            outs.push(attn.forward(g, a)?);
        }
        let joined = g.concat(&outs, 0)?;
        self.reduce.forward(g, joined)
    }
}

/// Skip features: per level, 1×1 convolution of the concatenated backbone
/// and detail maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skips {
    pub levels: Vec<Conv>,
}

impl Skips {
    pub fn new(store: &mut ParamStore, seed: u64, in_widths: [usize; 3], out_widths: [usize; 3]) -> Self {
        let levels = (0..3)
            .map(|i| {
                let mut rng = indexed_substream(seed, "skips", i as u64);
                Conv::new(
                    store,
                    &mut rng,
                    &format!("skip{}", i + 1),
                    [out_widths[i], in_widths[i], 1, 1],
                    ConvSpec::unit(),
                    true,
                    true,
                )
            })
            .collect();
        Self { levels }
    }

    /// `detail` may be empty (no detail encoder) or hold one map per level.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, taps: &[Var], detail: &[Var]) -> Result<[Var; 3]> {
        if taps.len() < 3 || !(detail.is_empty() || detail.len() == 3) {
            return Err(dim(
                "collect_skips",
                format!("{} backbone and {} detail levels", taps.len(), detail.len()),
            ));
        }
        let mut out = Vec::with_capacity(3);
        for (i, conv) in self.levels.iter().enumerate() {
            let x = if detail.is_empty() {
                taps[i]
            } else {
                let (a, b) = (g.shape(taps[i]).to_vec(), g.shape(detail[i]).to_vec());
                if a[1..] != b[1..] {
                    return Err(dim(
                        "collect_skips",
                        format!("level {}: backbone {a:?} vs detail {b:?}", i + 1),
                    ));
                }
                g.concat(&[taps[i], detail[i]], 0)?
            };
            out.push(conv.forward(g, x)?);
        }
        Ok([out[0], out[1], out[2]])
    }
}

//! Finite-difference checks of every differentiable operation and of the
//! composed blocks, on `f64` graphs.

#![allow(dead_code)]

use mpers_core::autograd::{ConvSpec, WindowSpec};
use mpers_core::decoder::Decoder;
use mpers_core::gradcheck::{grad_check, grad_check_params};
use mpers_core::lqga::LqgaBlock;
use mpers_core::rng::{indexed_substream, normal_tensor, substream};
use mpers_core::text::{Dmte, LinguisticAttention};
use mpers_core::vision::{ConvBlock, DilateFuse, Skips, WindowAttention};
use mpers_core::{Graph, ParamStore, Result, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

pub fn random(seed: u64, name: &str, shape: &[usize]) -> Tensor<f64> {
    normal_tensor(&mut substream(seed, name), shape, 1.0).cast()
}

/// Scalar readout `Σ y ⊙ R` with a fixed random `R`, so no gradient entry
/// is trivially symmetric.
pub fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let r = random(seed, "readout", g.shape(y));
    let r = g.input(r);
    let p = g.mul(y, r)?;
    Ok(g.sum_all(p))
}

pub struct Case {
    pub name: &'static str,
    pub worst: f64,
}

type Unary = fn(&mut Graph<'_, f64>, Var, &[Var]) -> Result<Var>;

/// Checks `op` with respect to its first argument `x` and, one at a time,
/// each of the `others`.
fn check_op(seed: u64, shapes: &[&[usize]], op: Unary) -> Result<f64> {
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random(seed, &format!("arg{i}"), s))
        .collect();
    let mut worst = 0.0f64;
    for wrt in 0..inputs.len() {
        let err = grad_check(
            |g, x| {
                let args: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == wrt { x } else { g.input(t.clone()) })
                    .collect();
                let y = op(g, args[0], &args[1..])?;
                project(g, y, seed)
            },
            &inputs[wrt],
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn op_cases() -> Vec<(&'static str, Vec<&'static [usize]>, Unary)> {
    vec![
        ("matmul", vec![&[3, 4], &[4, 2]], |g, a, r| g.matmul(a, r[0])),
        ("transpose", vec![&[3, 4]], |g, a, _| g.transpose(a)),
        ("reshape", vec![&[2, 6]], |g, a, _| g.reshape(a, &[3, 4])),
        ("add", vec![&[2, 3], &[2, 3]], |g, a, r| g.add(a, r[0])),
        ("sub", vec![&[2, 3], &[2, 3]], |g, a, r| g.sub(a, r[0])),
        ("mul", vec![&[2, 3], &[2, 3]], |g, a, r| g.mul(a, r[0])),
        ("scale", vec![&[2, 3]], |g, a, _| Ok(g.scale(a, -1.7))),
        ("scale_by", vec![&[2, 3], &[1]], |g, a, r| g.scale_by(a, r[0])),
        ("sigmoid", vec![&[2, 3]], |g, a, _| Ok(g.sigmoid(a))),
        ("relu", vec![&[2, 5]], |g, a, _| Ok(g.relu(a))),
        ("sum_all", vec![&[2, 3]], |g, a, _| Ok(g.sum_all(a))),
        ("mean_axis0", vec![&[3, 4]], |g, a, _| g.mean(a, 0)),
        ("mean_axis1", vec![&[2, 3, 2]], |g, a, _| g.mean(a, 1)),
        ("concat", vec![&[2, 3, 2], &[1, 3, 2]], |g, a, r| g.concat(&[a, r[0]], 0)),
        ("expand", vec![&[2, 1, 1]], |g, a, _| g.expand(a, &[2, 3, 2])),
        ("narrow", vec![&[4, 3]], |g, a, _| g.narrow(a, 0, 1, 2)),
        ("upsample_nearest", vec![&[2, 2, 3]], |g, a, _| g.upsample_nearest(a, 2)),
        ("depth_to_space", vec![&[8, 2, 2]], |g, a, _| g.depth_to_space(a, 2)),
        ("layer_norm", vec![&[4, 2, 3], &[4], &[4]], |g, a, r| g.layer_norm(a, r[0], r[1], 0)),
        ("softmax_rows", vec![&[3, 4]], |g, a, _| g.softmax(a, 1)),
        ("softmax_cols", vec![&[3, 4]], |g, a, _| g.softmax(a, 0)),
        ("cross_entropy", vec![&[4, 3, 3]], |g, a, _| {
            let labels = [0u8, 1, 2, 3, 3, 2, 1, 0, 2];
            g.cross_entropy(a, &labels, Some(1))
        }),
        ("conv2d", vec![&[3, 5, 5], &[2, 3, 3, 3], &[2]], |g, a, r| {
            g.conv2d(a, r[0], Some(r[1]), ConvSpec::new(1, 1, 1))
        }),
        ("conv2d_stride2", vec![&[2, 6, 6], &[3, 2, 3, 3]], |g, a, r| {
            g.conv2d(a, r[0], None, ConvSpec::new(2, 1, 1))
        }),
        ("conv2d_dilation2", vec![&[2, 6, 6], &[2, 2, 3, 3], &[2]], |g, a, r| {
            g.conv2d(a, r[0], Some(r[1]), ConvSpec::new(1, 2, 2))
        }),
        ("window_attention", vec![&[12, 3], &[12, 3], &[12, 3]], |g, q, r| {
            let spec = WindowSpec {
                height: 3,
                width: 4,
                window: 3,
                dilation: 1,
            };
            g.window_attention(q, r[0], r[1], spec)
        }),
        ("window_attention_dilated", vec![&[16, 2], &[16, 2], &[16, 2]], |g, q, r| {
            let spec = WindowSpec {
                height: 4,
                width: 4,
                window: 3,
                dilation: 2,
            };
            g.window_attention(q, r[0], r[1], spec)
        }),
        ("linear", vec![&[3, 4], &[4, 2], &[2]], |g, a, r| g.linear(a, r[0], Some(r[1]))),
        ("to_tokens", vec![&[2, 3, 2]], |g, a, _| g.to_tokens(a)),
        ("from_tokens", vec![&[6, 2]], |g, a, _| g.from_tokens(a, 2, 3)),
    ]
}

/// Randomises every trainable parameter, so zero-initialised ones (gates,
/// heads) do not hide gradient paths.
fn randomise(store: &mut ParamStore, seed: u64) {
    for (id, p) in store.iter_mut() {
        if p.requires_grad() {
            let noise = normal_tensor(&mut indexed_substream(seed, "perturb", id.index() as u64), p.value.shape(), 0.5);
            p.value.add_assign(&noise);
        }
    }
}

fn input(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize]) -> mpers_core::ParamId {
    store.add(name, normal_tensor(&mut substream(seed, name), shape, 1.0), true)
}

fn check_block(
    seed: u64,
    build: impl Fn(&mut ParamStore) -> Box<dyn Fn(&mut Graph<'_, f64>) -> Result<Var>>,
) -> Result<f64> {
    let mut store = ParamStore::new();
    let f = build(&mut store);
    randomise(&mut store, seed);
    let store64 = store.cast::<f64>();
    grad_check_params(
        &store64,
        |g| {
            let y = f(g)?;
            project(g, y, seed)
        },
        EPS,
    )
}

type BlockCase = (&'static str, fn(u64) -> Result<f64>);

fn block_cases() -> Vec<BlockCase> {
    vec![
        ("linguistic_attention", |seed| {
            check_block(seed, |s| {
                let la = LinguisticAttention::new(s, seed, 4);
                let x = input(s, seed, "tokens", &[3, 4]);
                Box::new(move |g| {
                    let t = g.param(x);
                    la.forward(g, t)
                })
            })
        }),
        ("dmte_gate_mix", |seed| {
            check_block(seed, |s| {
                let dmte = Dmte::new(s, seed, 4, 3);
                let toks: Vec<_> = (0..3).map(|e| input(s, seed, &format!("expert{e}"), &[3, 4])).collect();
                Box::new(move |g| {
                    let t: Vec<Var> = toks.iter().map(|&id| g.param(id)).collect();
                    let out = dmte.forward(g, &t)?;
                    let a = project(g, out.tokens, seed)?;
                    let b = project(g, out.gates, seed ^ 1)?;
                    g.add(a, b)
                })
            })
        }),
        ("lqga_block", |seed| {
            check_block(seed, |s| {
                let block = LqgaBlock::new(s, seed, 0, 5, 4, 6);
                let visual = input(s, seed, "visual", &[4, 3, 3]);
                let stream = input(s, seed, "stream", &[4, 3, 3]);
                let text = input(s, seed, "text", &[3, 5]);
                Box::new(move |g| {
                    let (v, st, t) = (g.param(visual), g.param(stream), g.param(text));
                    let out = block.forward(g, v, st, t)?;
                    let a = project(g, out.features, seed)?;
                    let b = project(g, out.weights, seed ^ 1)?;
                    g.add(a, b)
                })
            })
        }),
        ("decoder_stages", |seed| {
            check_block(seed, |s| {
                let dec = Decoder::new(s, seed, 4, [2, 2, 2], [4, 3, 3], 3, 2);
                let deep = input(s, seed, "deep", &[4, 2, 2]);
                let f1 = input(s, seed, "f1", &[2, 8, 8]);
                let f2 = input(s, seed, "f2", &[2, 4, 4]);
                let f3 = input(s, seed, "f3", &[2, 2, 2]);
                Box::new(move |g| {
                    let d = g.param(deep);
                    let skips = [g.param(f1), g.param(f2), g.param(f3)];
                    dec.decode(g, d, skips)
                })
            })
        }),
        ("conv_block", |seed| {
            check_block(seed, |s| {
                let block = ConvBlock::new(s, &mut substream(seed, "conv-block"), "block", 2, 3, 2);
                let x = input(s, seed, "x", &[2, 6, 6]);
                Box::new(move |g| {
                    let v = g.param(x);
                    block.forward(g, v)
                })
            })
        }),
        ("window_attention_block", |seed| {
            check_block(seed, |s| {
                let wa = WindowAttention::new(s, &mut substream(seed, "window"), "wa", 3, 3, 2);
                let x = input(s, seed, "x", &[3, 4, 4]);
                Box::new(move |g| {
                    let v = g.param(x);
                    wa.forward(g, v)
                })
            })
        }),
        ("dilate_fuse", |seed| {
            check_block(seed, |s| {
                let fuse = DilateFuse::new(s, seed, &[3, 2], 4, 3, 2);
                let a = input(s, seed, "a", &[3, 4, 4]);
                let b = input(s, seed, "b", &[2, 4, 4]);
                Box::new(move |g| {
                    let streams = [g.param(a), g.param(b)];
                    fuse.forward(g, &streams)
                })
            })
        }),
        ("skips", |seed| {
            check_block(seed, |s| {
                let skips = Skips::new(s, seed, [3, 3, 3], [2, 2, 2]);
                let taps: Vec<_> = (0..3)
                    .map(|i| input(s, seed, &format!("tap{i}"), &[2, 4 >> i, 4 >> i]))
                    .collect();
                let detail: Vec<_> = (0..3)
                    .map(|i| input(s, seed, &format!("detail{i}"), &[1, 4 >> i, 4 >> i]))
                    .collect();
                Box::new(move |g| {
                    let t: Vec<Var> = taps.iter().map(|&id| g.param(id)).collect();
                    let d: Vec<Var> = detail.iter().map(|&id| g.param(id)).collect();
                    let out = skips.forward(g, &t, &d)?;
                    let flat = out.map(|v| flatten(g, v));
                    let flat = [flat[0].clone()?, flat[1].clone()?, flat[2].clone()?];
                    g.concat(&flat, 0)
                })
            })
        }),
    ]
}

fn flatten(g: &mut Graph<'_, f64>, x: Var) -> Result<Var> {
    let n: usize = g.shape(x).iter().product();
    g.reshape(x, &[n])
}

/// Worst relative error per case over `seeds`.
pub fn run_suite(seeds: u64) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for (name, shapes, op) in op_cases() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(check_op(seed, &shapes, op)?);
        }
        out.push(Case { name, worst });
    }
    for (name, check) in block_cases() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(check(seed)?);
        }
        out.push(Case { name, worst });
    }
    Ok(out)
}

//! Brute-force reference implementations and the exact identities the
//! model's equations must satisfy.

#![allow(dead_code)]

use mpers_core::autograd::{ConvSpec, WindowSpec};
use mpers_core::lqga::{apply_guidance, fuse_output, guided_weights, Projections};
use mpers_core::metrics::ConfusionMatrix;
use mpers_core::rng::{normal_tensor, substream};
use mpers_core::text::{mix_experts, Dmte};
use mpers_core::vision::Conv;
use mpers_core::{Graph, ParamStore, Tensor};
use rand::Rng;

pub struct Check {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

pub const ORACLE_TOLERANCE: f64 = 1e-5;

fn random(seed: u64, name: &str, shape: &[usize]) -> Tensor {
    normal_tensor(&mut substream(seed, name), shape, 1.0)
}

/// Largest `|a − b| / max(1, |b|)`.
fn deviation(actual: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &b)| (a as f64 - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a[i * k + p] * b[p * m + j];
            }
        }
    }
    out
}

/// Zero-padded cross-correlation, one output pixel at a time.
pub fn naive_conv(x: &Tensor, k: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> (Vec<f64>, [usize; 3]) {
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let (o, kh, kw) = (k.dim(0), k.dim(2), k.dim(3));
    let span = |n: usize, kn: usize| (n + 2 * spec.padding - spec.dilation * (kn - 1) - 1) / spec.stride + 1;
    let (oh, ow) = (span(h, kh), span(w, kw));
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[oc] as f64);
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                            let xx = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let xi = (ic * h + y as usize) * w + xx as usize;
                            let ki = ((oc * c + ic) * kh + ky) * kw + kx;
                            acc += xd[xi] as f64 * kd[ki] as f64;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, [o, oh, ow])
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Windowed attention: every query attends to the in-grid keys on a
/// `window`×`window` lattice spaced `dilation` apart around it.
pub fn naive_window_attention(q: &Tensor, k: &Tensor, v: &Tensor, spec: WindowSpec) -> Vec<f64> {
    let c = q.dim(1);
    let (h, w) = (spec.height as isize, spec.width as isize);
    let r = (spec.window / 2) as isize;
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; q.numel()];
    for y in 0..h {
        for x in 0..w {
            let qi = (y * w + x) as usize;
            let mut keys = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ky, kx) = (y + dy * spec.dilation as isize, x + dx * spec.dilation as isize);
                    if ky >= 0 && kx >= 0 && ky < h && kx < w {
                        keys.push((ky * w + kx) as usize);
                    }
                }
            }
            let logits: Vec<f64> = keys
                .iter()
                .map(|&ki| (0..c).map(|ch| q.data()[qi * c + ch] as f64 * k.data()[ki * c + ch] as f64).sum::<f64>() * scale)
                .collect();
            let a = softmax(&logits);
            for ch in 0..c {
                out[qi * c + ch] = keys.iter().zip(&a).map(|(&ki, &p)| p * v.data()[ki * c + ch] as f64).sum();
            }
        }
    }
    out
}

/// Per-class IoU and F1 by counting pixel pairs directly.
pub fn counting_scores(pred: &[u8], gt: &[u8], k: usize) -> Vec<Option<(f64, f64)>> {
    (0..k as u8)
        .map(|c| {
            let tp = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g == c).count() as f64;
            let fp = pred.iter().zip(gt).filter(|&(&p, &g)| p == c && g != c).count() as f64;
            let fn_ = pred.iter().zip(gt).filter(|&(&p, &g)| p != c && g == c).count() as f64;
            (tp + fp + fn_ > 0.0).then(|| (tp / (tp + fp + fn_), 2.0 * tp / (2.0 * tp + fp + fn_)))
        })
        .collect()
}

fn oracle_matmul(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let (a, b) = (random(seed, "a", &[5, 7]), random(seed, "b", &[7, 3]));
            let mut g = Graph::<f32>::new();
            let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
            let y = g.matmul(av, bv).unwrap();
            deviation(g.value(y).data(), &naive_matmul(&f64s(&a), &f64s(&b), 5, 7, 3))
        })
        .fold(0.0, f64::max)
}

fn oracle_conv(seeds: u64, spec: ConvSpec) -> f64 {
    (0..seeds)
        .map(|seed| {
            let x = random(seed, "x", &[3, 9, 8]);
            let k = random(seed, "k", &[4, 3, 3, 3]);
            let b = random(seed, "b", &[4]);
            let mut g = Graph::<f32>::new();
            let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
            let y = g.conv2d(xv, kv, Some(bv), spec).unwrap();
            let (expected, shape) = naive_conv(&x, &k, Some(&b), spec);
            assert_eq!(g.shape(y), shape);
            deviation(g.value(y).data(), &expected)
        })
        .fold(0.0, f64::max)
}

fn oracle_window(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let spec = WindowSpec {
                height: 5,
                width: 6,
                window: 3,
                dilation: 2,
            };
            let (q, k, v) = (random(seed, "q", &[30, 4]), random(seed, "k", &[30, 4]), random(seed, "v", &[30, 4]));
            let mut g = Graph::<f32>::new();
            let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
            let y = g.window_attention(qv, kv, vv, spec).unwrap();
            deviation(g.value(y).data(), &naive_window_attention(&q, &k, &v, spec))
        })
        .fold(0.0, f64::max)
}

fn oracle_guided_weights(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let (l, n, d, c) = (4, 9, 6, 5);
            let (q, k, v) = (random(seed, "q", &[l, d]), random(seed, "k", &[n, d]), random(seed, "v", &[n, c]));
            let mut g = Graph::<f32>::new();
            let p = Projections {
                query: g.input(q.clone()),
                key: g.input(k.clone()),
                value: g.input(v.clone()),
            };
            let w = guided_weights(&mut g, p).unwrap();
            let (qd, kd, vd) = (f64s(&q), f64s(&k), f64s(&v));
            let mut mean = vec![0.0; c];
            for i in 0..l {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|e| qd[i * d + e] * kd[j * d + e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let a = softmax(&logits);
                for ch in 0..c {
                    mean[ch] += (0..n).map(|j| a[j] * vd[j * c + ch]).sum::<f64>() / l as f64;
                }
            }
            let expected: Vec<f64> = mean.iter().map(|&m| sigmoid(m)).collect();
            deviation(g.value(w).data(), &expected)
        })
        .fold(0.0, f64::max)
}

fn oracle_mix(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let phis: Vec<Tensor> = (0..3).map(|e| random(seed, &format!("phi{e}"), &[4, 5])).collect();
            let gates = random(seed, "gates", &[3]).map(|v| 1.0 / (1.0 + (-v).exp()));
            let weights = random(seed, "weights", &[3]);
            let mut g = Graph::<f32>::new();
            let pv: Vec<_> = phis.iter().map(|p| g.input(p.clone())).collect();
            let (gv, wv) = (g.input(gates.clone()), g.input(weights.clone()));
            let t = mix_experts(&mut g, &pv, gv, wv).unwrap();
            let expected: Vec<f64> = (0..20)
                .map(|i| {
                    (0..3)
                        .map(|e| weights.data()[e] as f64 * gates.data()[e] as f64 * phis[e].data()[i] as f64)
                        .sum()
                })
                .collect();
            deviation(g.value(t).data(), &expected)
        })
        .fold(0.0, f64::max)
}

fn oracle_broadcast(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let f = random(seed, "f", &[3, 4, 5]);
            let w = random(seed, "w", &[3]);
            let mut g = Graph::<f32>::new();
            let (fv, wv) = (g.input(f.clone()), g.input(w.clone()));
            let y = apply_guidance(&mut g, wv, fv).unwrap();
            let expected: Vec<f64> = (0..60)
                .map(|i| {
                    let x = f.data()[i] as f64;
                    w.data()[i / 20] as f64 * x + x
                })
                .collect();
            deviation(g.value(y).data(), &expected)
        })
        .fold(0.0, f64::max)
}

fn oracle_fuse(seeds: u64) -> f64 {
    (0..seeds)
        .map(|seed| {
            let mut store = ParamStore::new();
            let conv = Conv::new(&mut store, &mut substream(seed, "fuse"), "fuse", [3, 6, 1, 1], ConvSpec::unit(), true, true);
            let bias = conv.bias.unwrap();
            store.get_mut(bias).value = random(seed, "bias", &[3]);
            let (a, b) = (random(seed, "a", &[3, 4, 4]), random(seed, "b", &[3, 4, 4]));
            let mut g = Graph::with_params(&store);
            let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
            let y = fuse_output(&mut g, av, bv, &conv).unwrap();
            let k = store.value(conv.kernel).data();
            let bias = store.value(bias).data();
            let mut expected = vec![0.0; 48];
            for o in 0..3 {
                for p in 0..16 {
                    let mut acc = bias[o] as f64;
                    for c in 0..3 {
                        acc += k[o * 6 + c] as f64 * a.data()[c * 16 + p] as f64;
                        acc += k[o * 6 + 3 + c] as f64 * b.data()[c * 16 + p] as f64;
                    }
                    expected[o * 16 + p] = acc;
                }
            }
            deviation(g.value(y).data(), &expected)
        })
        .fold(0.0, f64::max)
}

fn oracle_metrics(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = substream(seed, "metrics");
        let k = 4;
        let n = 37 * 23;
        let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8 - 1)).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.accumulate(&pred, &gt, 23, None).unwrap();
        let report = cm.summarize().unwrap();
        let expected = counting_scores(&pred, &gt, k);
        let mut ious = Vec::new();
        let mut f1s = Vec::new();
        for (got, want) in report.per_class.iter().zip(&expected) {
            match (got, want) {
                (Some(s), Some((iou, f1))) => {
                    worst = worst.max((s.iou - iou).abs()).max((s.f1 - f1).abs());
                    ious.push(*iou);
                    f1s.push(*f1);
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
        let oa = pred.iter().zip(&gt).filter(|(p, g)| p == g).count() as f64 / n as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        worst = worst
            .max((report.miou - mean(&ious)).abs())
            .max((report.mf1 - mean(&f1s)).abs())
            .max((report.oa - oa).abs());
    }
    // Four pixels per class, one of each confused with the other class.
    let gt = [0u8, 0, 0, 0, 1, 1, 1, 1];
    let pred = [0u8, 0, 0, 1, 1, 1, 1, 0];
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt, 4, None).unwrap();
    let counts = cm.counts().to_vec();
    let (iou, f1) = counting_scores(&pred, &gt, 2)[0].unwrap();
    let s = cm.per_class()[0].unwrap();
    if counts != [3, 1, 1, 3] || (iou, f1) != (0.6, 0.75) {
        return f64::INFINITY;
    }
    worst.max((s.iou - 0.6).abs()).max((s.f1 - 0.75).abs())
}

/// Every operation and metric against its reference over `seeds` inputs.
pub fn oracle_suite(seeds: u64) -> Vec<Check> {
    let t = ORACLE_TOLERANCE;
    vec![
        Check { name: "matmul", error: oracle_matmul(seeds), tolerance: t },
        Check { name: "conv2d", error: oracle_conv(seeds, ConvSpec::new(1, 1, 1)), tolerance: t },
        Check { name: "conv2d stride 2", error: oracle_conv(seeds, ConvSpec::new(2, 1, 1)), tolerance: t },
        Check { name: "conv2d dilation 2", error: oracle_conv(seeds, ConvSpec::new(1, 2, 2)), tolerance: t },
        Check { name: "dilated window attention", error: oracle_window(seeds), tolerance: t },
        Check { name: "guided attention weights", error: oracle_guided_weights(seeds), tolerance: t },
        Check { name: "expert weighted sum", error: oracle_mix(seeds), tolerance: t },
        Check { name: "channel broadcast residual", error: oracle_broadcast(seeds), tolerance: t },
        Check { name: "1x1 fusion conv", error: oracle_fuse(seeds), tolerance: t },
        Check { name: "metrics (counting)", error: oracle_metrics(seeds), tolerance: t },
    ]
}

fn exact(equal: bool) -> f64 {
    if equal {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Identities that hold exactly or to a stated bound.
pub fn identity_suite(seeds: u64) -> Vec<Check> {
    let gate_init = {
        let mut store = ParamStore::new();
        let dmte = Dmte::new(&mut store, 0, 8, 3);
        let mut g = Graph::with_params(&store);
        let toks: Vec<_> = (0..3).map(|e| g.input(random(e, "tok", &[4, 8]))).collect();
        let out = dmte.forward(&mut g, &toks).unwrap();
        exact(g.value(out.gates).data().iter().all(|&v| v == 0.5))
    };
    let one_hot = (0..seeds)
        .map(|seed| {
            let phis: Vec<Tensor> = (0..3).map(|e| random(seed, &format!("phi{e}"), &[4, 6])).collect();
            let mut g = Graph::<f32>::new();
            let pv: Vec<_> = phis.iter().map(|p| g.input(p.clone())).collect();
            let gates = g.input(Tensor::new(&[3], vec![1.0, 0.0, 0.0]).unwrap());
            let weights = g.input(Tensor::full(&[3], 1.0));
            let t = mix_experts(&mut g, &pv, gates, weights).unwrap();
            exact(g.value(t) == &phis[0])
        })
        .fold(0.0, f64::max);
    let residual = (0..seeds)
        .map(|seed| {
            let f = random(seed, "f", &[4, 3, 5]);
            let mut g = Graph::<f32>::new();
            let (fv, wv) = (g.input(f.clone()), g.input(Tensor::zeros(&[4])));
            let y = apply_guidance(&mut g, wv, fv).unwrap();
            exact(g.value(y) == &f)
        })
        .fold(0.0, f64::max);
    let f1_iou = (0..seeds)
        .map(|seed| {
            let mut rng = substream(seed, "cm");
            let counts: Vec<u64> = (0..25).map(|_| rng.random_range(0..1000)).collect();
            let cm = ConfusionMatrix::from_counts(5, counts).unwrap();
            cm.per_class()
                .iter()
                .flatten()
                .map(|s| (s.f1 - 2.0 * s.iou / (1.0 + s.iou)).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let softmax_rows = (0..seeds)
        .map(|seed| {
            let x = random(seed, "logits", &[6, 9]).map(|v| v * 30.0);
            let mut g = Graph::<f32>::new();
            let xv = g.input(x);
            let s = g.softmax(xv, 1).unwrap();
            g.value(s)
                .data()
                .chunks(9)
                .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    vec![
        Check { name: "fresh gates equal sigmoid(0) = 0.5", error: gate_init, tolerance: 0.0 },
        Check { name: "one-hot gate with unit weights returns expert 1", error: one_hot, tolerance: 0.0 },
        Check { name: "zero guidance leaves features unchanged", error: residual, tolerance: 0.0 },
        Check { name: "F1 = 2 IoU / (1 + IoU)", error: f1_iou, tolerance: 1e-9 },
        Check { name: "softmax rows sum to 1", error: softmax_rows, tolerance: 1e-6 },
    ]
}

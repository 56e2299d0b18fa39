//! Metrics, ablation and guidance reports.

use std::fmt::Write as _;

use mpers_core::metrics::{ConfusionMatrix, MetricsReport};
use mpers_core::train::Prediction;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    /// `None` when the class is absent from both prediction and ground truth.
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub split: String,
    pub scenes: usize,
    pub classes: Vec<ClassMetrics>,
    pub miou: f64,
    pub mf1: f64,
    pub oa: f64,
    /// Rows are ground truth, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsJson {
    pub fn new(split: &str, scenes: usize, class_names: &[String], cm: &ConfusionMatrix) -> Result<Self> {
        let report: MetricsReport = cm.summarize()?;
        let k = cm.classes();
        Ok(Self {
            split: split.into(),
            scenes,
            classes: report
                .per_class
                .iter()
                .enumerate()
                .map(|(c, s)| ClassMetrics {
                    class: c,
                    name: class_names[c].clone(),
                    iou: s.map(|s| s.iou),
                    f1: s.map(|s| s.f1),
                })
                .collect(),
            miou: report.miou,
            mf1: report.mf1,
            oa: report.oa,
            confusion: (0..k).map(|g| (0..k).map(|p| cm.get(g, p)).collect()).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Renders rows of cells with every column padded to its widest cell.
/// The first column is left-aligned, the rest right-aligned.
pub fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
                let _ = write!(line, "{cell:>w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// One row per class with IoU and F1 in percent, then the summary rows.
pub fn metrics_table(m: &MetricsJson) -> String {
    let mut rows = vec![vec!["class".to_string(), "IoU(%)".into(), "F1(%)".into()]];
    for c in &m.classes {
        rows.push(vec![c.name.clone(), pct(c.iou), pct(c.f1)]);
    }
    rows.push(vec!["mean".into(), pct(Some(m.miou)), pct(Some(m.mf1))]);
    rows.push(vec!["OA".into(), pct(Some(m.oa)), String::new()]);
    aligned(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub seed: u64,
    pub oa: f64,
    pub miou: f64,
    pub mf1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_ldpe: bool,
    pub use_lqga: bool,
    pub use_dmte: bool,
    pub parameters: usize,
    pub runs: Vec<RunScores>,
    pub median: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub oa: f64,
    pub miou: f64,
    pub mf1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub split: String,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Median of a non-empty list; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl RunSummary {
    pub fn median_of(runs: &[RunScores]) -> Self {
        let pick = |f: fn(&RunScores) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            oa: pick(|r| r.oa),
            miou: pick(|r| r.miou),
            mf1: pick(|r| r.mf1),
        }
    }
}

/// One row per configuration: parameter count and median OA, mIoU, mF1.
pub fn ablation_table(a: &AblationResult) -> String {
    let flag = |b: bool| if b { "x" } else { "" }.to_string();
    let mut rows = vec![vec![
        "config".to_string(),
        "LDPE".into(),
        "LQGA".into(),
        "DMTE".into(),
        "params".into(),
        "OA(%)".into(),
        "mIoU(%)".into(),
        "mF1(%)".into(),
    ]];
    for r in &a.rows {
        rows.push(vec![
            r.name.clone(),
            flag(r.use_ldpe),
            flag(r.use_lqga),
            flag(r.use_dmte),
            r.parameters.to_string(),
            pct(Some(r.median.oa)),
            pct(Some(r.median.miou)),
            pct(Some(r.median.mf1)),
        ]);
    }
    aligned(&rows)
}

/// Channel guidance weights of one fusion block for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceLine {
    pub scene_seed: u64,
    pub block: usize,
    pub weights: Vec<f32>,
}

/// Expert gate values for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateLine {
    pub scene_seed: u64,
    pub gates: Vec<f32>,
}

pub fn guidance_jsonl(seeds: &[u64], preds: &[Prediction]) -> Result<(String, String)> {
    let mut guidance = String::new();
    let mut gates = String::new();
    for (&scene_seed, p) in seeds.iter().zip(preds) {
        for (block, w) in p.guidance.iter().enumerate() {
            let line = GuidanceLine {
                scene_seed,
                block,
                weights: w.data().to_vec(),
            };
            guidance.push_str(&serde_json::to_string(&line)?);
            guidance.push('\n');
        }
        if let Some(g) = &p.gates {
            let line = GateLine {
                scene_seed,
                gates: g.data().to_vec(),
            };
            gates.push_str(&serde_json::to_string(&line)?);
            gates.push('\n');
        }
    }
    Ok((guidance, gates))
}

//! Synthetic labelled scenes: coloured rectangles and discs on a ground class,
//! with metadata (counts, pixel proportions, spatial relations) that the
//! caption stub and the similarity scorer are grounded in.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, substream};
use crate::tensor::Tensor;

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!(
                "{} labels for a {height}×{width} map",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    /// 3×H×W, values in [0, 1].
    pub image: Tensor,
    pub labels: LabelMap,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    LeftOf,
    RightOf,
    Above,
    Below,
    AdjacentTo,
}

impl Predicate {
    pub const ALL: [Predicate; 5] = [
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::Above,
        Predicate::Below,
        Predicate::AdjacentTo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left-of",
            Predicate::RightOf => "right-of",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::AdjacentTo => "adjacent-to",
        }
    }

    /// Words used in running text.
    pub fn phrase(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left of",
            Predicate::RightOf => "right of",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::AdjacentTo => "adjacent to",
        }
    }

    /// The single word that identifies the predicate in a caption.
    pub fn keyword(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left",
            Predicate::RightOf => "right",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::AdjacentTo => "adjacent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

/// `subject` is `predicate` `object`, both object-class indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Relation {
    pub subject: usize,
    pub predicate: Predicate,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMetadata {
    /// Placed objects per class; the ground class (0) has none.
    pub class_counts: Vec<u32>,
    /// Pixel fraction per class, summing to 1.
    pub class_proportions: Vec<f64>,
    pub relations: Vec<Relation>,
}

impl SceneMetadata {
    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn present(&self, class: usize) -> bool {
        self.class_proportions[class] > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneParams {
    pub num_classes: usize,
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            num_classes: 5,
            size: 64,
            min_objects: 4,
            max_objects: 8,
        }
    }
}

const NOISE_SIGMA: f32 = 0.05;
const MAX_ATTEMPTS: usize = 1000;
/// Bounding boxes closer than this many pixels count as adjacent.
pub const ADJACENT_GAP: usize = 2;

const CLASS_NAMES: [&str; 8] = ["ground", "building", "road", "tree", "water", "car", "field", "roof"];

/// Vocabulary for `k` classes: fixed names, then `classN`.
pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| CLASS_NAMES.get(i).map_or_else(|| format!("class{i}"), |s| s.to_string()))
        .collect()
}

const PALETTE: [[f32; 3]; 8] = [
    [0.55, 0.50, 0.42],
    [0.85, 0.20, 0.20],
    [0.35, 0.35, 0.38],
    [0.10, 0.55, 0.15],
    [0.15, 0.30, 0.80],
    [0.95, 0.85, 0.10],
    [0.60, 0.85, 0.30],
    [0.75, 0.35, 0.75],
];

/// Base colour of class `k`; classes past the fixed palette get evenly
/// spaced hues.
pub fn class_color(k: usize, num_classes: usize) -> [f32; 3] {
    if let Some(c) = PALETTE.get(k) {
        return *c;
    }
    let h = (k as f32 / num_classes as f32) * 6.0;
    let sector = h as usize % 6;
    let f = h - (h as usize) as f32;
    let (v, s) = (0.8, 0.7);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { r0: usize, c0: usize, h: usize, w: usize },
    Disc { cr: usize, cc: usize, radius: usize },
}

impl Shape {
    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Shape::Rect { r0, c0, h, w } => r >= r0 && r < r0 + h && c >= c0 && c < c0 + w,
            Shape::Disc { cr, cc, radius } => {
                let dr = r as isize - cr as isize;
                let dc = c as isize - cc as isize;
                dr * dr + dc * dc <= (radius * radius) as isize
            }
        }
    }

    /// Inclusive bounding box (r0, r1, c0, c1).
    fn bbox(&self) -> (usize, usize, usize, usize) {
        match *self {
            Shape::Rect { r0, c0, h, w } => (r0, r0 + h - 1, c0, c0 + w - 1),
            Shape::Disc { cr, cc, radius } => (cr - radius, cr + radius, cc - radius, cc + radius),
        }
    }
}

fn sample_shape(rng: &mut impl Rng, size: usize) -> Shape {
    if rng.random_bool(0.5) {
        let lo = (size / 8).max(2);
        let hi = (size / 3).max(lo + 1);
        let h = rng.random_range(lo..=hi);
        let w = rng.random_range(lo..=hi);
        Shape::Rect {
            r0: rng.random_range(0..=size - h),
            c0: rng.random_range(0..=size - w),
            h,
            w,
        }
    } else {
        let lo = (size / 16).max(1);
        let hi = (size / 6).max(lo + 1);
        let radius = rng.random_range(lo..=hi);
        Shape::Disc {
            cr: rng.random_range(radius..size - radius),
            cc: rng.random_range(radius..size - radius),
            radius,
        }
    }
}

/// Generates the scene for `seed`. Objects never overlap and keep a one-pixel
/// margin from each other, so every placed object stays visible.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<(LabeledScene, SceneMetadata)> {
    let SceneParams {
        num_classes: k,
        size,
        min_objects,
        max_objects,
    } = *params;
    if !(2..=256).contains(&k) {
        return Err(Error::Contract(format!("need 2..=256 classes, got {k}")));
    }
    if size < 16 {
        return Err(Error::Contract(format!("scene size {size} is below 16")));
    }
    if min_objects > max_objects {
        return Err(Error::Contract(format!(
            "min_objects {min_objects} exceeds max_objects {max_objects}"
        )));
    }

    let mut layout = substream(seed, "scene-layout");
    let n_objects = layout.random_range(min_objects..=max_objects);
    let mut labels = vec![0u8; size * size];
    // occupied pixels, dilated by one so that objects keep a gap
    let mut blocked = vec![false; size * size];
    let mut class_counts = vec![0u32; k];
    for obj in 0..n_objects {
        let class = layout.random_range(1..k);
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let shape = sample_shape(&mut layout, size);
            let (r0, r1, c0, c1) = shape.bbox();
            let clash = (r0..=r1)
                .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
                .any(|(r, c)| shape.contains(r, c) && blocked[r * size + c]);
            if !clash {
                placed = Some(shape);
                break;
            }
        }
        let shape = placed.ok_or_else(|| {
            Error::Generation(format!(
                "could not place object {obj} of {n_objects} after {MAX_ATTEMPTS} attempts"
            ))
        })?;
        let (r0, r1, c0, c1) = shape.bbox();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if shape.contains(r, c) {
                    labels[r * size + c] = class as u8;
                    for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (0, 0)] {
                        let rr = r as isize + dr;
                        let cc = c as isize + dc;
                        if rr >= 0 && cc >= 0 && (rr as usize) < size && (cc as usize) < size {
                            blocked[rr as usize * size + cc as usize] = true;
                        }
                    }
                }
            }
        }
        class_counts[class] += 1;
    }

    let mut noise_rng = substream(seed, "scene-noise");
    let plane = size * size;
    let mut image = vec![0.0f32; 3 * plane];
    for (p, &l) in labels.iter().enumerate() {
        let color = class_color(l as usize, k);
        for (ch, &base) in color.iter().enumerate() {
            let v = base + (standard_normal(&mut noise_rng) * NOISE_SIGMA as f64) as f32;
            image[ch * plane + p] = v.clamp(0.0, 1.0);
        }
    }

    let labels = LabelMap::new(size, size, labels)?;
    let metadata = SceneMetadata {
        class_proportions: class_proportions(&labels, k),
        relations: relations_from_raster(&labels, &class_counts),
        class_counts,
    };
    Ok((
        LabeledScene {
            image: Tensor::new(&[3, size, size], image)?,
            labels,
            seed,
        },
        metadata,
    ))
}

fn class_proportions(labels: &LabelMap, k: usize) -> Vec<f64> {
    let mut counts = vec![0u64; k];
    for &l in &labels.data {
        counts[l as usize] += 1;
    }
    let total = labels.data.len() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Centroid and inclusive bounding box of every pixel of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

pub fn class_region(labels: &LabelMap, class: u8) -> Option<Region> {
    let (mut n, mut sr, mut sc) = (0u64, 0u64, 0u64);
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..labels.height {
        for c in 0..labels.width {
            if labels.get(r, c) == class {
                n += 1;
                sr += r as u64;
                sc += c as u64;
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    (n > 0).then(|| Region {
        centroid_row: sr as f64 / n as f64,
        centroid_col: sc as f64 / n as f64,
        rows: (r0, r1),
        cols: (c0, c1),
    })
}

/// Empty pixels strictly between two inclusive intervals (0 when they touch
/// or overlap).
fn interval_gap(a: (usize, usize), b: (usize, usize)) -> usize {
    if a.1 < b.0 {
        b.0 - a.1 - 1
    } else if b.1 < a.0 {
        a.0 - b.1 - 1
    } else {
        0
    }
}

/// Predicate relating region `a` to region `b`: adjacent when the bounding
/// boxes are less than [`ADJACENT_GAP`] pixels apart, otherwise the dominant
/// centroid offset decides.
pub fn predicate_between(a: &Region, b: &Region) -> Predicate {
    let gap = interval_gap(a.rows, b.rows).max(interval_gap(a.cols, b.cols));
    if gap < ADJACENT_GAP {
        return Predicate::AdjacentTo;
    }
    let dx = a.centroid_col - b.centroid_col;
    let dy = a.centroid_row - b.centroid_row;
    if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            Predicate::LeftOf
        } else {
            Predicate::RightOf
        }
    } else if dy < 0.0 {
        Predicate::Above
    } else {
        Predicate::Below
    }
}

/// One relation per pair of present object classes, lower index as subject.
pub fn relations_from_raster(labels: &LabelMap, class_counts: &[u32]) -> Vec<Relation> {
    let regions: Vec<Option<Region>> = (0..class_counts.len())
        .map(|c| {
            if c == 0 || class_counts[c] == 0 {
                None
            } else {
                class_region(labels, c as u8)
            }
        })
        .collect();
    let mut out = Vec::new();
    for a in 1..regions.len() {
        for b in a + 1..regions.len() {
            if let (Some(ra), Some(rb)) = (&regions[a], &regions[b]) {
                out.push(Relation {
                    subject: a,
                    predicate: predicate_between(ra, rb),
                    object: b,
                });
            }
        }
    }
    out
}

/// Order-stable split: duplicates dropped (first occurrence kept), then the
/// first `round(n · train_fraction)` seeds train and the rest evaluate.
pub fn make_split(seeds: &[u64], train_fraction: f64) -> Result<(Vec<u64>, Vec<u64>)> {
    if seeds.is_empty() {
        return Err(Error::Contract("cannot split an empty seed list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut unique: Vec<u64> = Vec::with_capacity(seeds.len());
    for &s in seeds {
        if !unique.contains(&s) {
            unique.push(s);
        }
    }
    let n_train = (libm::round(unique.len() as f64 * train_fraction) as usize).min(unique.len());
    let eval = unique.split_off(n_train);
    Ok((unique, eval))
}

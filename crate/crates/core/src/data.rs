//! Synthetic two-domain shapes benchmark, PNG dataset loading, SSDA splits
//! and block-wise partial annotation.
//!
//! Scenes are drawn from a geometry stream and an appearance stream seeded
//! independently, so a seed fixes the label map regardless of style.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::imageio::{self, ImageError};
use crate::labels::{LabelError, LabelMap, VOID};

pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "disk", "rectangle", "triangle", "stripe"];
pub const SCENE_WIDTH: usize = 128;
pub const SCENE_HEIGHT: usize = 64;
/// Side of the square blocks used by [`partial_annotation`].
pub const ANNOTATION_BLOCK: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("`{stem}` has an image but no label file, or vice versa ({missing} missing)")]
    MissingPair { stem: String, missing: PathBuf },
    #[error("`{stem}`: image is {image_width}x{image_height}, labels are {label_width}x{label_height}")]
    SizeMismatch {
        stem: String,
        image_width: usize,
        image_height: usize,
        label_width: usize,
        label_height: usize,
    },
    #[error("{path}: {source}")]
    Label { path: PathBuf, source: LabelError },
    #[error("annotation fraction must be in (0, 1], got {0}")]
    Fraction(f64),
    #[error("requested {requested} labeled target scenes but only {available} exist")]
    SplitTooLarge { requested: usize, available: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

/// An image with its full annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: usize,
    pub domain: Domain,
    pub image: Tensor,
    pub labels: LabelMap,
}

/// A target image whose labels are withheld from training.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledScene {
    pub id: usize,
    pub image: Tensor,
}

/// Appearance of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Style {
    /// Base RGB colour per class.
    pub palette: [[f64; 3]; NUM_CLASSES],
    /// Uniform per-shape colour jitter half-width.
    pub color_jitter: f64,
    /// Standard deviation of additive per-pixel Gaussian noise.
    pub noise: f64,
    /// Peak-to-peak strength of a linear illumination ramp.
    pub illumination: f64,
    /// Amplitude of a sinusoidal background texture.
    pub texture_amplitude: f64,
    /// Spatial frequency of that texture in cycles per image width.
    pub texture_frequency: f64,
}

impl Style {
    pub fn source() -> Self {
        Style {
            palette: [
                [0.40, 0.42, 0.38],
                [0.85, 0.25, 0.20],
                [0.20, 0.35, 0.85],
                [0.90, 0.80, 0.20],
                [0.25, 0.75, 0.30],
            ],
            color_jitter: 0.05,
            noise: 0.02,
            illumination: 0.0,
            texture_amplitude: 0.03,
            texture_frequency: 3.0,
        }
    }

    pub fn target() -> Self {
        Style {
            palette: [
                [0.30, 0.34, 0.44],
                [0.62, 0.35, 0.42],
                [0.28, 0.42, 0.70],
                [0.66, 0.64, 0.42],
                [0.30, 0.58, 0.50],
            ],
            color_jitter: 0.05,
            noise: 0.08,
            illumination: 0.35,
            texture_amplitude: 0.06,
            texture_frequency: 5.0,
        }
    }

    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Source => Style::source(),
            Domain::Target => Style::target(),
        }
    }
}

/// Mix three integers into a well-spread seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { p: [(f64, f64); 3] },
    Stripe { px: f64, py: f64, nx: f64, ny: f64, half: f64 },
}

impl Shape {
    fn class(&self) -> u8 {
        match self {
            Shape::Disk { .. } => 1,
            Shape::Rect { .. } => 2,
            Shape::Triangle { .. } => 3,
            Shape::Stripe { .. } => 4,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle { p } => {
                let side = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let s = [side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0])];
                s.iter().all(|v| *v >= 0.0) || s.iter().all(|v| *v <= 0.0)
            }
            Shape::Stripe { px, py, nx, ny, half } => ((x - px) * nx + (y - py) * ny).abs() <= half,
        }
    }

    fn random(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Shape {
        let cx = rng.gen_range(0.0..w);
        let cy = rng.gen_range(0.0..h);
        match rng.gen_range(1..=4) {
            1 => Shape::Disk {
                cx,
                cy,
                r: rng.gen_range(6.0..14.0),
            },
            2 => {
                let (hw, hh) = (rng.gen_range(6.0..18.0), rng.gen_range(5.0..12.0));
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            3 => {
                let r = rng.gen_range(9.0..18.0);
                let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
                let step = std::f64::consts::TAU / 3.0;
                let p = [0.0, 1.0, 2.0].map(|k| {
                    let a = a0 + k * step;
                    (cx + r * a.cos(), cy + r * a.sin())
                });
                Shape::Triangle { p }
            }
            _ => {
                let a = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Stripe {
                    px: cx,
                    py: cy,
                    nx: a.cos(),
                    ny: a.sin(),
                    half: rng.gen_range(2.0..4.5),
                }
            }
        }
    }
}

/// Generate one `128×64` scene. Geometry depends only on `seed`; `style`
/// and `domain` change appearance only.
pub fn generate_scene(seed: u64, id: usize, domain: Domain, style: &Style) -> Scene {
    let (w, h) = (SCENE_WIDTH, SCENE_HEIGHT);
    let mut geo = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let mut look = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2, domain as u64));

    let count = geo.gen_range(2..=6);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| Shape::random(&mut geo, w as f64, h as f64))
        .collect();
    let mut labels = LabelMap::filled(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            for s in &shapes {
                if s.contains(fx, fy) {
                    labels.set(x, y, s.class());
                }
            }
        }
    }

    let mut colors = vec![style.palette[0]];
    for s in &shapes {
        let base = style.palette[s.class() as usize];
        colors.push(base.map(|c| c + look.gen_range(-1.0..=1.0) * style.color_jitter));
    }
    let phase = look.gen_range(0.0..std::f64::consts::TAU);
    let tex_angle = look.gen_range(0.0..std::f64::consts::PI);
    let light_angle = look.gen_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, style.noise.max(0.0)).expect("finite noise level");

    let hw = w * h;
    let mut data = vec![0.0; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            // last shape containing the pixel decides its colour, as for labels
            let owner = shapes
                .iter()
                .rposition(|s| s.contains(fx, fy))
                .map_or(0, |i| i + 1);
            let along = (fx * tex_angle.cos() + fy * tex_angle.sin()) / w as f64;
            let texture = style.texture_amplitude
                * (std::f64::consts::TAU * style.texture_frequency * along + phase).sin();
            let ramp = ((fx / w as f64 - 0.5) * light_angle.cos()
                + (fy / h as f64 - 0.5) * light_angle.sin())
                * style.illumination;
            for c in 0..3 {
                let v = (colors[owner][c] + texture) * (1.0 + ramp) + noise.sample(&mut look);
                data[c * hw + y * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Scene {
        id,
        domain,
        image: Tensor::new(vec![3, h, w], data).expect("scene tensor shape"),
        labels,
    }
}

/// Sizes and seeds of a generated benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub num_source: usize,
    pub num_target: usize,
    /// Held-out labeled target scenes used only for validation.
    pub num_target_val: usize,
    pub source_style: Style,
    pub target_style: Style,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 2024,
            num_source: 200,
            num_target: 100,
            num_target_val: 40,
            source_style: Style::source(),
            target_style: Style::target(),
        }
    }
}

/// Generated scenes of both domains.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub source: Vec<Scene>,
    pub target: Vec<Scene>,
    pub target_val: Vec<Scene>,
}

const STREAM_SOURCE: u64 = 11;
const STREAM_TARGET: u64 = 12;
const STREAM_VAL: u64 = 13;

pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Benchmark {
    let make = |n: usize, stream: u64, domain: Domain, style: &Style| -> Vec<Scene> {
        (0..n)
            .map(|i| generate_scene(derive_seed(cfg.seed, stream, i as u64), i, domain, style))
            .collect()
    };
    Benchmark {
        source: make(cfg.num_source, STREAM_SOURCE, Domain::Source, &cfg.source_style),
        target: make(cfg.num_target, STREAM_TARGET, Domain::Target, &cfg.target_style),
        target_val: make(cfg.num_target_val, STREAM_VAL, Domain::Target, &cfg.target_style),
    }
}

/// Keep labels in a seeded uniform choice of `ceil(fraction · blocks)` of
/// the `10×10` blocks anchored at the top-left corner; the rest become VOID.
pub fn partial_annotation(labels: &LabelMap, fraction: f64, seed: u64) -> Result<LabelMap, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Fraction(fraction));
    }
    let bw = labels.width().div_ceil(ANNOTATION_BLOCK);
    let bh = labels.height().div_ceil(ANNOTATION_BLOCK);
    let blocks = bw * bh;
    // tolerate representation error such as 0.3·10 = 3.0000000000000004
    let keep = ((fraction * blocks as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; blocks];
    for i in index::sample(&mut rng, blocks, keep.min(blocks)) {
        kept[i] = true;
    }
    let mut out = labels.clone();
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            if !kept[(y / ANNOTATION_BLOCK) * bw + x / ANNOTATION_BLOCK] {
                out.set(x, y, VOID);
            }
        }
    }
    Ok(out)
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DataError> {
    let io = |source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Load `image_dir/*.png` paired by stem with `label_dir/*.png`, in
/// lexicographic stem order. Scene ids are positions in that order.
pub fn load_dataset(
    image_dir: &Path,
    label_dir: &Path,
    num_classes: usize,
    domain: Domain,
) -> Result<Vec<Scene>, DataError> {
    let images = png_stems(image_dir)?;
    let labels = png_stems(label_dir)?;
    if let Some(stem) = labels.keys().find(|s| !images.contains_key(*s)) {
        return Err(DataError::MissingPair {
            stem: stem.clone(),
            missing: image_dir.join(format!("{stem}.png")),
        });
    }
    let mut scenes = Vec::with_capacity(images.len());
    for (id, (stem, image_path)) in images.iter().enumerate() {
        let Some(label_path) = labels.get(stem) else {
            return Err(DataError::MissingPair {
                stem: stem.clone(),
                missing: label_dir.join(format!("{stem}.png")),
            });
        };
        let image = imageio::read_rgb(image_path)?;
        let lm = imageio::read_labels(label_path)?;
        let (ih, iw) = (image.shape()[1], image.shape()[2]);
        if (iw, ih) != (lm.width(), lm.height()) {
            return Err(DataError::SizeMismatch {
                stem: stem.clone(),
                image_width: iw,
                image_height: ih,
                label_width: lm.width(),
                label_height: lm.height(),
            });
        }
        lm.validate(num_classes).map_err(|source| DataError::Label {
            path: label_path.clone(),
            source,
        })?;
        scenes.push(Scene {
            id,
            domain,
            image,
            labels: lm,
        });
    }
    Ok(scenes)
}

/// Write scenes as `images/<id>.png` and `labels/<id>.png` under `root`.
pub fn save_scenes(root: &Path, scenes: &[Scene]) -> Result<(), DataError> {
    let (img_dir, lbl_dir) = (root.join("images"), root.join("labels"));
    for d in [&img_dir, &lbl_dir] {
        std::fs::create_dir_all(d).map_err(|source| DataError::Io {
            path: d.clone(),
            source,
        })?;
    }
    for s in scenes {
        let name = format!("{:05}.png", s.id);
        imageio::write_rgb(&img_dir.join(&name), &s.image)?;
        imageio::write_labels(&lbl_dir.join(&name), &s.labels)?;
    }
    Ok(())
}

/// Target-scene labels hidden from training, readable only for evaluation.
#[derive(Clone, Debug, Default)]
pub struct Sequestered {
    labels: BTreeMap<usize, LabelMap>,
}

impl Sequestered {
    /// Ground truth of an unlabeled target scene, for scoring only.
    pub fn labels_for_evaluation(&self, id: usize) -> Option<&LabelMap> {
        self.labels.get(&id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SsdaSplit {
    pub source: Vec<Scene>,
    pub labeled: Vec<Scene>,
    pub unlabeled: Vec<UnlabeledScene>,
    sequestered: Sequestered,
}

impl SsdaSplit {
    pub fn sequestered(&self) -> &Sequestered {
        &self.sequestered
    }

    /// Replace labeled-target annotations, e.g. with partial ones.
    pub fn map_labeled(&mut self, mut f: impl FnMut(&Scene) -> Result<LabelMap, DataError>) -> Result<(), DataError> {
        for s in &mut self.labeled {
            s.labels = f(s)?;
        }
        Ok(())
    }
}

/// Seeded choice of `n_labeled` target scenes that keep their labels; the
/// rest lose them.
pub fn split_ssda(
    source: Vec<Scene>,
    target: Vec<Scene>,
    n_labeled: usize,
    seed: u64,
) -> Result<SsdaSplit, DataError> {
    if n_labeled > target.len() {
        return Err(DataError::SplitTooLarge {
            requested: n_labeled,
            available: target.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; target.len()];
    for i in index::sample(&mut rng, target.len(), n_labeled) {
        chosen[i] = true;
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut sequestered = Sequestered::default();
    for (scene, keep) in target.into_iter().zip(chosen) {
        if keep {
            labeled.push(scene);
        } else {
            sequestered.labels.insert(scene.id, scene.labels);
            unlabeled.push(UnlabeledScene {
                id: scene.id,
                image: scene.image,
            });
        }
    }
    Ok(SsdaSplit {
        source,
        labeled,
        unlabeled,
        sequestered,
    })
}

/// Recorded next to a generated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator: String,
    pub image_width: usize,
    pub image_height: usize,
    pub class_names: Vec<String>,
    pub benchmark: BenchmarkConfig,
}

impl Manifest {
    pub fn new(cfg: &BenchmarkConfig) -> Self {
        Manifest {
            generator: format!("patchwise {}", env!("CARGO_PKG_VERSION")),
            image_width: SCENE_WIDTH,
            image_height: SCENE_HEIGHT,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            benchmark: cfg.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_style_independent_in_labels() {
        let a = generate_scene(5, 0, Domain::Source, &Style::source());
        assert_eq!(a, generate_scene(5, 0, Domain::Source, &Style::source()));
        let b = generate_scene(5, 0, Domain::Target, &Style::target());
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.image, b.image);
        assert!(a.labels.data().iter().all(|&v| (v as usize) < NUM_CLASSES));
        assert_eq!(a.image.shape(), &[3, 64, 128]);
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generator_covers_all_classes() {
        let mut seen = [false; NUM_CLASSES];
        for s in 0..40 {
            for &v in generate_scene(s, 0, Domain::Source, &Style::source()).labels.data() {
                seen[v as usize] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn partial_annotation_counts_blocks() {
        let m = LabelMap::new(120, 60, (0..7200).map(|i| (i % 5) as u8).collect()).unwrap();
        let p = partial_annotation(&m, 0.25, 3).unwrap();
        assert_eq!(p.count_non_void(), 18 * 100);
        for (a, b) in m.data().iter().zip(p.data()) {
            assert!(*b == VOID || a == b);
        }
        assert_eq!(partial_annotation(&m, 1.0, 3).unwrap(), m);
        assert_ne!(p, partial_annotation(&m, 0.25, 4).unwrap());
        assert!(partial_annotation(&m, 0.0, 3).is_err());
        assert!(partial_annotation(&m, 1.5, 3).is_err());
    }

    #[test]
    fn ragged_edge_blocks() {
        let m = LabelMap::filled(128, 64, 1);
        // 13 x 7 = 91 blocks, keep ceil(0.5 * 91) = 46
        let p = partial_annotation(&m, 0.5, 0).unwrap();
        let mut kept = 0;
        for by in 0..7 {
            for bx in 0..13 {
                if p.get(bx * 10, by * 10) != VOID {
                    kept += 1;
                }
            }
        }
        assert_eq!(kept, 46);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let cfg = BenchmarkConfig {
            num_source: 2,
            num_target: 12,
            num_target_val: 0,
            ..Default::default()
        };
        let b = generate_benchmark(&cfg);
        let s = split_ssda(b.source.clone(), b.target.clone(), 5, 9).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (5, 7));
        let mut ids: Vec<usize> = s.labeled.iter().map(|x| x.id).chain(s.unlabeled.iter().map(|x| x.id)).collect();
        ids.sort();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
        for u in &s.unlabeled {
            assert_eq!(s.sequestered().labels_for_evaluation(u.id), Some(&b.target[u.id].labels));
        }
        let again = split_ssda(b.source.clone(), b.target.clone(), 5, 9).unwrap();
        assert_eq!(s.labeled, again.labeled);
        let uda = split_ssda(b.source.clone(), b.target.clone(), 0, 9).unwrap();
        assert!(uda.labeled.is_empty());
        assert!(matches!(
            split_ssda(b.source, b.target, 13, 9),
            Err(DataError::SplitTooLarge { .. })
        ));
    }

    #[test]
    fn loader_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("labels")).unwrap();
        let empty = load_dataset(&root.join("images"), &root.join("labels"), 5, Domain::Source).unwrap();
        assert!(empty.is_empty());

        let s = generate_scene(1, 0, Domain::Source, &Style::source());
        save_scenes(root, std::slice::from_ref(&s)).unwrap();
        let loaded = load_dataset(&root.join("images"), &root.join("labels"), 5, Domain::Source).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].labels, s.labels);
        for (a, b) in loaded[0].image.data().iter().zip(s.image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            assert_eq!(*a, (a * 255.0).round() / 255.0);
        }

        let mut bad = s.labels.clone();
        bad.set(3, 2, 200);
        imageio::write_labels(&root.join("labels/00000.png"), &bad).unwrap();
        let err = load_dataset(&root.join("images"), &root.join("labels"), 5, Domain::Source).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("00000.png") && msg.contains("(3,2)"), "{msg}");

        imageio::write_labels(&root.join("labels/00001.png"), &s.labels).unwrap();
        assert!(matches!(
            load_dataset(&root.join("images"), &root.join("labels"), 5, Domain::Source),
            Err(DataError::MissingPair { .. })
        ));
    }
}

//! Label-space patch disparity: per-patch class histograms compared over a
//! three-level spatial pyramid (whole patch, 2×2 quadrants, 4×4 cells).
//!
//! Level `m` has `N_m ∈ {1, 4, 16}` sub-patches and is weighted by
//! `N_{2−m}`, so each level can contribute at most 32 and the total lies in
//! `[0, 96]`. VOID pixels are dropped from every histogram; a sub-patch with
//! no labeled pixel has an all-zero semantic vector.

use thiserror::Error;

use crate::grid::PatchGrid;
use crate::labels::{LabelMap, VOID};

/// Largest possible pyramid disparity.
pub const MAX_DISPARITY: f64 = 96.0;

/// Sub-patch counts per pyramid level.
pub const LEVEL_CELLS: [usize; 3] = [1, 4, 16];

/// Level weights `N_{2−m}`.
pub const LEVEL_WEIGHTS: [f64; 3] = [16.0, 4.0, 1.0];

const SUB_PATCHES: usize = 21;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DisparityError {
    #[error("patch sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("patch {0}x{1} cannot be split into a 4x4 pyramid")]
    NotDivisible(usize, usize),
    #[error("label map {map_width}x{map_height} does not match grid image {grid_width}x{grid_height}")]
    GridMismatch {
        map_width: usize,
        map_height: usize,
        grid_width: usize,
        grid_height: usize,
    },
}

/// Class proportions of a patch; all zero when nothing is labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticVector(pub Vec<f64>);

impl SemanticVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn semantic_vector(patch: &LabelMap, num_classes: usize) -> SemanticVector {
    let mut counts = vec![0usize; num_classes];
    for &v in patch.data() {
        if v != VOID && (v as usize) < num_classes {
            counts[v as usize] += 1;
        }
    }
    SemanticVector(normalize(&counts))
}

fn normalize(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Which label-space similarity drives pair mining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchingStrategy {
    #[default]
    Pyramid,
    /// Fraction of differing pixels, scaled to `[0, 96]`.
    Exact,
}

/// The 21 semantic vectors of a patch, laid out level 0, then level 1
/// (row-major quadrants), then level 2 (row-major cells).
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidDescriptor {
    num_classes: usize,
    vectors: Vec<f64>,
}

impl PyramidDescriptor {
    pub fn new(patch: &LabelMap, num_classes: usize) -> Result<Self, DisparityError> {
        let (w, h) = (patch.width(), patch.height());
        if w == 0 || h == 0 || w % 4 != 0 || h % 4 != 0 {
            return Err(DisparityError::NotDivisible(w, h));
        }
        // class counts per 4x4 cell; coarser levels are sums of cells
        let (cw, ch) = (w / 4, h / 4);
        let mut cells = vec![vec![0usize; num_classes]; 16];
        for y in 0..h {
            let row = &patch.data()[y * w..(y + 1) * w];
            for (x, &v) in row.iter().enumerate() {
                if v != VOID && (v as usize) < num_classes {
                    cells[(y / ch) * 4 + x / cw][v as usize] += 1;
                }
            }
        }
        let mut quads = vec![vec![0usize; num_classes]; 4];
        for (i, cell) in cells.iter().enumerate() {
            let q = (i / 4 / 2) * 2 + (i % 4) / 2;
            quads[q].iter_mut().zip(cell).for_each(|(a, b)| *a += b);
        }
        let mut whole = vec![0usize; num_classes];
        for q in &quads {
            whole.iter_mut().zip(q).for_each(|(a, b)| *a += b);
        }
        let mut vectors = Vec::with_capacity(SUB_PATCHES * num_classes);
        for counts in std::iter::once(&whole).chain(&quads).chain(&cells) {
            vectors.extend(normalize(counts));
        }
        Ok(Self {
            num_classes,
            vectors,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Semantic vector of sub-patch `index` at pyramid `level`.
    pub fn vector(&self, level: usize, index: usize) -> &[f64] {
        let offset: usize = LEVEL_CELLS[..level].iter().sum::<usize>() + index;
        &self.vectors[offset * self.num_classes..(offset + 1) * self.num_classes]
    }

    /// Weighted per-level contributions against `other`.
    pub fn compare(&self, other: &PyramidDescriptor) -> Disparity {
        let mut levels = [0.0; 3];
        for (level, slot) in levels.iter_mut().enumerate() {
            let mut unweighted = 0.0;
            for i in 0..LEVEL_CELLS[level] {
                unweighted += squared_distance(self.vector(level, i), other.vector(level, i));
            }
            *slot = LEVEL_WEIGHTS[level] * unweighted;
        }
        Disparity {
            total: levels[0] + levels[1] + levels[2],
            levels,
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pyramid disparity with its weighted per-level breakdown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disparity {
    pub total: f64,
    /// Weighted contribution of levels 0, 1 and 2.
    pub levels: [f64; 3],
}

fn check_pair(a: &LabelMap, b: &LabelMap) -> Result<(), DisparityError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(DisparityError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

pub fn pyramid_disparity_breakdown(
    a: &LabelMap,
    b: &LabelMap,
    num_classes: usize,
) -> Result<Disparity, DisparityError> {
    check_pair(a, b)?;
    let da = PyramidDescriptor::new(a, num_classes)?;
    let db = PyramidDescriptor::new(b, num_classes)?;
    Ok(da.compare(&db))
}

pub fn pyramid_disparity(
    a: &LabelMap,
    b: &LabelMap,
    num_classes: usize,
) -> Result<f64, DisparityError> {
    Ok(pyramid_disparity_breakdown(a, b, num_classes)?.total)
}

/// Normalized Hamming distance between two label patches, scaled to
/// `[0, 96]` so it shares thresholds with the pyramid metric. VOID counts as
/// a value of its own.
pub fn exact_disparity(a: &LabelMap, b: &LabelMap) -> Result<f64, DisparityError> {
    check_pair(a, b)?;
    let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
    Ok(MAX_DISPARITY * differing as f64 / a.data().len() as f64)
}

/// Dense `rows × cols` matrix of disparities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DisparityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "disparity matrix size");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_grid(labels: &LabelMap, grid: &PatchGrid) -> Result<(), DisparityError> {
    let (gw, gh) = grid.image_size();
    if labels.width() != gw || labels.height() != gh {
        return Err(DisparityError::GridMismatch {
            map_width: labels.width(),
            map_height: labels.height(),
            grid_width: gw,
            grid_height: gh,
        });
    }
    Ok(())
}

fn patches(labels: &LabelMap, grid: &PatchGrid) -> Vec<LabelMap> {
    (0..grid.num_patches())
        .map(|p| {
            let r = grid.rect(p);
            labels
                .crop(r.left, r.top, r.width, r.height)
                .expect("grid rect inside checked map")
        })
        .collect()
}

/// Entry `(i, j)` is the disparity between patch `i` of `labels_a` and
/// patch `j` of `labels_b`.
pub fn disparity_matrix(
    labels_a: &LabelMap,
    labels_b: &LabelMap,
    grid: &PatchGrid,
    num_classes: usize,
    strategy: MatchingStrategy,
) -> Result<DisparityMatrix, DisparityError> {
    check_grid(labels_a, grid)?;
    check_grid(labels_b, grid)?;
    let (pa, pb) = (patches(labels_a, grid), patches(labels_b, grid));
    let n = grid.num_patches();
    let mut data = Vec::with_capacity(n * n);
    match strategy {
        MatchingStrategy::Pyramid => {
            let da = pa
                .iter()
                .map(|p| PyramidDescriptor::new(p, num_classes))
                .collect::<Result<Vec<_>, _>>()?;
            let db = pb
                .iter()
                .map(|p| PyramidDescriptor::new(p, num_classes))
                .collect::<Result<Vec<_>, _>>()?;
            for a in &da {
                data.extend(db.iter().map(|b| a.compare(b).total));
            }
        }
        MatchingStrategy::Exact => {
            for a in &pa {
                for b in &pb {
                    data.push(exact_disparity(a, b)?);
                }
            }
        }
    }
    Ok(DisparityMatrix::new(n, n, data))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn uniform(w: usize, h: usize, class: u8) -> LabelMap {
        LabelMap::filled(w, h, class)
    }

    /// Recomputes every sub-patch histogram from scratch by cropping.
    fn naive_disparity(a: &LabelMap, b: &LabelMap, num_classes: usize) -> f64 {
        let hist = |m: &LabelMap| {
            let mut counts = vec![0.0f64; num_classes];
            let mut total = 0.0f64;
            for &v in m.data() {
                if v != VOID {
                    counts[v as usize] += 1.0;
                    total += 1.0;
                }
            }
            if total > 0.0 {
                counts.iter_mut().for_each(|c| *c /= total);
            }
            counts
        };
        let mut d = 0.0;
        for (split, weight) in [(1usize, 16.0), (2, 4.0), (4, 1.0)] {
            let (sw, sh) = (a.width() / split, a.height() / split);
            for i in 0..split {
                for j in 0..split {
                    let ca = a.crop(j * sw, i * sh, sw, sh).unwrap();
                    let cb = b.crop(j * sw, i * sh, sw, sh).unwrap();
                    let (ha, hb) = (hist(&ca), hist(&cb));
                    let dist: f64 = ha.iter().zip(&hb).map(|(x, y)| (x - y).powi(2)).sum();
                    d += weight * dist;
                }
            }
        }
        d
    }

    fn random_patch(rng: &mut ChaCha8Rng, w: usize, h: usize, n_c: u8) -> LabelMap {
        let data = (0..w * h)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    VOID
                } else {
                    rng.gen_range(0..n_c)
                }
            })
            .collect();
        LabelMap::new(w, h, data).unwrap()
    }

    #[test]
    fn semantic_vector_is_class_proportion() {
        let p = LabelMap::new(2, 2, vec![1, 1, 2, 3]).unwrap();
        assert_eq!(semantic_vector(&p, 4).0, vec![0.0, 0.5, 0.25, 0.25]);
        assert_eq!(semantic_vector(&uniform(4, 4, 2), 4).0, vec![0.0, 0.0, 1.0, 0.0]);
        let half = LabelMap::new(2, 2, vec![VOID, 0, VOID, 0]).unwrap();
        assert_eq!(semantic_vector(&half, 3).0, vec![1.0, 0.0, 0.0]);
        assert_eq!(semantic_vector(&uniform(2, 2, VOID), 3).0, vec![0.0; 3]);
    }

    #[test]
    fn identical_patches_have_zero_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_patch(&mut rng, 32, 16, 5);
        assert_eq!(pyramid_disparity(&p, &p, 5).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_single_class_patches_hit_the_maximum() {
        let d = pyramid_disparity_breakdown(&uniform(32, 16, 1), &uniform(32, 16, 2), 5).unwrap();
        assert_eq!(d.levels, [32.0, 32.0, 32.0]);
        assert_eq!(d.total, 96.0);
    }

    #[test]
    fn half_split_case() {
        let a = uniform(32, 16, 1);
        let mut b = uniform(32, 16, 1);
        for y in 0..16 {
            for x in 16..32 {
                b.set(x, y, 2);
            }
        }
        let d = pyramid_disparity_breakdown(&a, &b, 5).unwrap();
        assert_eq!(d.levels, [8.0, 16.0, 16.0]);
        assert_eq!(d.total, 40.0);
        assert_eq!(naive_disparity(&a, &b, 5), 40.0);
    }

    #[test]
    fn rejects_bad_patches() {
        assert!(matches!(
            pyramid_disparity(&uniform(8, 8, 0), &uniform(8, 4, 0), 3),
            Err(DisparityError::SizeMismatch(..))
        ));
        assert!(matches!(
            pyramid_disparity(&uniform(6, 8, 0), &uniform(6, 8, 0), 3),
            Err(DisparityError::NotDivisible(6, 8))
        ));
    }

    #[test]
    fn matrix_matches_entrywise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = PatchGrid::new(16, 16, 4, 4).unwrap();
        let a = random_patch(&mut rng, 16, 16, 5);
        let b = random_patch(&mut rng, 16, 16, 5);
        let m = disparity_matrix(&a, &b, &grid, 5, MatchingStrategy::Pyramid).unwrap();
        for i in 0..grid.num_patches() {
            for j in 0..grid.num_patches() {
                let (ri, rj) = (grid.rect(i), grid.rect(j));
                let pa = a.crop(ri.left, ri.top, 4, 4).unwrap();
                let pb = b.crop(rj.left, rj.top, 4, 4).unwrap();
                let want = naive_disparity(&pa, &pb, 5);
                assert!((m.get(i, j) - want).abs() < 1e-9);
                assert!((0.0..=MAX_DISPARITY).contains(&m.get(i, j)));
            }
        }
        let same = disparity_matrix(&a, &a, &grid, 5, MatchingStrategy::Pyramid).unwrap();
        assert!((0..16).all(|i| same.get(i, i) == 0.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let grid = PatchGrid::new(16, 16, 4, 4).unwrap();
        let a = uniform(16, 16, 0);
        let b = uniform(16, 12, 0);
        assert!(matches!(
            disparity_matrix(&a, &b, &grid, 3, MatchingStrategy::Pyramid),
            Err(DisparityError::GridMismatch { .. })
        ));
    }

    #[test]
    fn exact_strategy_is_scaled_hamming() {
        let a = uniform(4, 4, 0);
        let mut b = uniform(4, 4, 0);
        for x in 0..4 {
            b.set(x, 0, 1);
        }
        assert_eq!(exact_disparity(&a, &b).unwrap(), 24.0);
        assert_eq!(exact_disparity(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn each_level_caps_at_32() {
        for m in 0..3 {
            assert_eq!(LEVEL_WEIGHTS[m] * LEVEL_CELLS[m] as f64 * 2.0, 32.0);
        }
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_matches_naive(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_patch(&mut rng, 16, 8, 4);
            let b = random_patch(&mut rng, 16, 8, 4);
            let ab = pyramid_disparity(&a, &b, 4).unwrap();
            let ba = pyramid_disparity(&b, &a, 4).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((0.0..=MAX_DISPARITY).contains(&ab));
            prop_assert!((ab - naive_disparity(&a, &b, 4)).abs() < 1e-9);
        }
    }
}

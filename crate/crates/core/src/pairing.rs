//! Cross-domain pair mining by label-space disparity, and the InfoNCE-style
//! contrastive loss over the mined pairs.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{GraphBuilder, GraphError, NodeId, Tensor};
use crate::disparity::DisparityMatrix;

/// Default positive threshold: pairs with `D < α` are positives.
pub const DEFAULT_ALPHA: f64 = 3.0;
/// Default negative threshold: pairs with `D > β` are negatives.
pub const DEFAULT_BETA: f64 = 70.0;
pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_NEGATIVES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error("thresholds must satisfy 0 <= alpha < beta, got alpha={alpha} beta={beta}")]
    Thresholds { alpha: f64, beta: f64 },
    #[error("need at least one negative per query")]
    NoNegatives,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("vector {0} has zero norm")]
    ZeroNorm(&'static str),
    #[error("vector lengths differ")]
    LengthMismatch,
    #[error("malformed pair line `{line}`: {reason}")]
    Parse { line: String, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Whether the query's labels come from annotation or from a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LabelSource {
    GroundTruth,
    Pseudo,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::GroundTruth => "GROUND_TRUTH",
            LabelSource::Pseudo => "PSEUDO",
        })
    }
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GROUND_TRUTH" => Ok(LabelSource::GroundTruth),
            "PSEUDO" => Ok(LabelSource::Pseudo),
            other => Err(format!("unknown label source `{other}`")),
        }
    }
}

/// Query row, positive column and negative columns of a disparity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MinedPair {
    pub query: usize,
    pub positive: usize,
    pub positive_disparity: f64,
    pub negatives: Vec<usize>,
}

/// For every row with at least one column below `alpha` and at least `k`
/// columns above `beta`, pick the lowest-disparity column (first index on
/// ties) as positive and `k` distinct negatives uniformly at random.
/// Everything in `[alpha, beta]` is ignored.
pub fn mine_pairs(
    disparities: &DisparityMatrix,
    alpha: f64,
    beta: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<MinedPair>, PairingError> {
    if !(alpha >= 0.0 && alpha < beta) {
        return Err(PairingError::Thresholds { alpha, beta });
    }
    if k == 0 {
        return Err(PairingError::NoNegatives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for q in 0..disparities.rows() {
        let row = disparities.row(q);
        let mut best: Option<(usize, f64)> = None;
        for (j, &d) in row.iter().enumerate() {
            if d < alpha && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let Some((positive, positive_disparity)) = best else {
            continue;
        };
        let candidates: Vec<usize> = (0..row.len()).filter(|&j| row[j] > beta).collect();
        if candidates.len() < k {
            continue;
        }
        let negatives = index::sample(&mut rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        pairs.push(MinedPair {
            query: q,
            positive,
            positive_disparity,
            negatives,
        });
    }
    Ok(pairs)
}

/// One image patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub image: usize,
    pub patch: usize,
}

/// A query patch with its positive and negatives in another image.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub query: PatchRef,
    pub positive: PatchRef,
    /// Negative patch indices; they live in the positive's image.
    pub negatives: Vec<usize>,
    pub disparity: f64,
    pub label_source: LabelSource,
}

impl PairSet {
    pub fn from_mined(
        query_image: usize,
        candidate_image: usize,
        mined: &MinedPair,
        label_source: LabelSource,
    ) -> Self {
        PairSet {
            query: PatchRef {
                image: query_image,
                patch: mined.query,
            },
            positive: PatchRef {
                image: candidate_image,
                patch: mined.positive,
            },
            negatives: mined.negatives.clone(),
            disparity: mined.positive_disparity,
            label_source,
        }
    }

    /// `query_img,query_patch,pos_img,pos_patch,neg_patches...,disparity,label_source`
    pub fn to_line(&self) -> String {
        let mut fields = vec![
            self.query.image.to_string(),
            self.query.patch.to_string(),
            self.positive.image.to_string(),
            self.positive.patch.to_string(),
        ];
        fields.extend(self.negatives.iter().map(|n| n.to_string()));
        fields.push(self.disparity.to_string());
        fields.push(self.label_source.to_string());
        fields.join(",")
    }

    pub fn parse_line(line: &str) -> Result<Self, PairingError> {
        let bad = |reason: &str| PairingError::Parse {
            line: line.to_string(),
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() < 7 {
            return Err(bad("expected at least 7 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer field"));
        let n = fields.len();
        Ok(PairSet {
            query: PatchRef {
                image: int(fields[0])?,
                patch: int(fields[1])?,
            },
            positive: PatchRef {
                image: int(fields[2])?,
                patch: int(fields[3])?,
            },
            negatives: fields[4..n - 2].iter().map(|s| int(s)).collect::<Result<_, _>>()?,
            disparity: fields[n - 2].parse().map_err(|_| bad("bad disparity"))?,
            label_source: fields[n - 1].parse().map_err(|e: String| bad(&e))?,
        })
    }
}

fn cosine(a: &[f64], b: &[f64], which: &'static str) -> Result<f64, PairingError> {
    if a.len() != b.len() {
        return Err(PairingError::LengthMismatch);
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(PairingError::ZeroNorm("query"));
    }
    if nb == 0.0 {
        return Err(PairingError::ZeroNorm(which));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// `−log[ e^{cos(q,+)/τ} / (e^{cos(q,+)/τ} + Σ e^{cos(q,−ᵢ)/τ}) ]`, evaluated
/// as a softmax cross-entropy over the `k+1` logits with the positive first.
pub fn contrastive_loss(
    query: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<f64, PairingError> {
    if !(tau > 0.0) {
        return Err(PairingError::Temperature(tau));
    }
    if negatives.is_empty() {
        return Err(PairingError::NoNegatives);
    }
    let mut logits = vec![cosine(query, positive, "positive")? / tau];
    for n in negatives {
        logits.push(cosine(query, n, "negative")? / tau);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}

/// Rows of the query and candidate latent matrices taking part in one
/// contrastive term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Mean contrastive loss over `triplets`, as a graph node.
///
/// `queries` is `[n_q, d]` and `candidates` is `[n_c, d]`; triplet indices
/// refer to their rows. All triplets must have the same number of negatives.
pub fn contrastive_loss_node(
    b: &mut GraphBuilder,
    queries: NodeId,
    candidates: NodeId,
    triplets: &[Triplet],
    tau: f64,
) -> Result<NodeId, PairingError> {
    if !(tau > 0.0) {
        return Err(PairingError::Temperature(tau));
    }
    let k = triplets.first().map_or(0, |t| t.negatives.len());
    if k == 0 {
        return Err(PairingError::NoNegatives);
    }
    if triplets.iter().any(|t| t.negatives.len() != k) {
        return Err(PairingError::LengthMismatch);
    }
    let m = triplets.len();
    let mut q_rows = Vec::with_capacity(m * (k + 1));
    let mut c_rows = Vec::with_capacity(m * (k + 1));
    for t in triplets {
        q_rows.extend(std::iter::repeat_n(t.query, k + 1));
        c_rows.push(t.positive);
        c_rows.extend(&t.negatives);
    }
    let qn = b.l2_normalize_rows(queries)?;
    let cn = b.l2_normalize_rows(candidates)?;
    let qs = b.select_rows(qn, q_rows)?;
    let cs = b.select_rows(cn, c_rows)?;
    let prod = b.mul(qs, cs)?;
    let cos = b.sum_axis(prod, 1)?;
    let cos = b.reshape(cos, &[m, k + 1])?;
    let logits = b.scale(cos, 1.0 / tau);
    let log_probs = b.log_softmax(logits, 1)?;
    let mut mask = Tensor::zeros(&[m, k + 1]);
    for row in mask.data_mut().chunks_mut(k + 1) {
        row[0] = 1.0;
    }
    let mask = b.constant(mask);
    let picked = b.mul(log_probs, mask)?;
    let total = b.sum(picked);
    Ok(b.scale(total, -1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::autodiff::{grad_check, Bindings};

    /// Literal ratio-of-exponentials form.
    fn direct_form(q: &[f64], p: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let sim = |a: &[f64], b: &[f64]| (cos(a, b) / tau).exp();
        let pos = sim(q, p);
        let denom = pos + negs.iter().map(|n| sim(q, n)).sum::<f64>();
        -(pos / denom).ln()
    }

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> DisparityMatrix {
        DisparityMatrix::new(rows, cols, data)
    }

    #[test]
    fn identical_vectors_give_log_k_plus_one() {
        let v = vec![0.3, -1.2, 2.0];
        for k in [1usize, 3, 8] {
            let negs = vec![v.clone(); k];
            let l = contrastive_loss(&v, &v, &negs, 0.07).unwrap();
            assert!((l - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
        let l8 = contrastive_loss(&v, &v, &vec![v.clone(); 8], 0.07).unwrap();
        assert!((l8 - 2.19722).abs() < 1e-5);
    }

    #[test]
    fn orthogonal_negative_closed_form() {
        let l = contrastive_loss(&[1.0, 0.0], &[2.0, 0.0], &[vec![0.0, 1.0]], 0.07).unwrap();
        let want = (1.0 + (-1.0f64 / 0.07).exp()).ln();
        assert!((l - want).abs() < 1e-15);
        assert!((l - 6.2e-7).abs() < 1e-8);
    }

    #[test]
    fn invalid_inputs() {
        let v = vec![1.0, 0.0];
        assert_eq!(
            contrastive_loss(&v, &v, &[v.clone()], 0.0),
            Err(PairingError::Temperature(0.0))
        );
        assert_eq!(
            contrastive_loss(&[0.0, 0.0], &v, &[v.clone()], 0.1),
            Err(PairingError::ZeroNorm("query"))
        );
        assert_eq!(
            contrastive_loss(&v, &v, &[vec![0.0, 0.0]], 0.1),
            Err(PairingError::ZeroNorm("negative"))
        );
    }

    #[test]
    fn self_pairs_on_identical_maps() {
        let n = 4;
        let mut data = vec![80.0; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        let pairs = mine_pairs(&matrix(n, n, data), 3.0, 70.0, 2, 0).unwrap();
        assert_eq!(pairs.len(), n);
        for p in &pairs {
            assert_eq!(p.positive, p.query);
            assert_eq!(p.negatives.len(), 2);
            assert!(!p.negatives.contains(&p.query));
        }
    }

    #[test]
    fn ignored_band_yields_nothing() {
        let pairs = mine_pairs(&matrix(3, 3, vec![50.0; 9]), 3.0, 70.0, 1, 0).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn ties_go_to_lowest_index_and_bad_params_fail() {
        let m = matrix(1, 4, vec![90.0, 1.0, 1.0, 95.0]);
        let p = mine_pairs(&m, 3.0, 70.0, 2, 5).unwrap();
        assert_eq!(p[0].positive, 1);
        let mut negs = p[0].negatives.clone();
        negs.sort();
        assert_eq!(negs, vec![0, 3]);
        assert!(mine_pairs(&m, 70.0, 3.0, 1, 0).is_err());
        assert!(mine_pairs(&m, 3.0, 70.0, 0, 0).is_err());
        // too few negatives: skipped
        assert!(mine_pairs(&m, 3.0, 70.0, 3, 0).unwrap().is_empty());
    }

    #[test]
    fn checkerboard_mining_matches_threshold_scan() {
        use crate::disparity::{disparity_matrix, MatchingStrategy};
        use crate::grid::PatchGrid;
        use crate::labels::LabelMap;
        // 4x4 patches of 4x4 pixels; checkerboard of classes 0/1 by patch, the
        // second map is the first shifted by one patch column.
        let grid = PatchGrid::new(16, 16, 4, 4).unwrap();
        let mut a = LabelMap::filled(16, 16, 0);
        let mut b = LabelMap::filled(16, 16, 0);
        for y in 0..16 {
            for x in 0..16 {
                a.set(x, y, (((x / 4) + (y / 4)) % 2) as u8);
                b.set(x, y, (((x / 4) + (y / 4) + 1) % 2) as u8);
            }
        }
        let d = disparity_matrix(&a, &b, &grid, 2, MatchingStrategy::Pyramid).unwrap();
        let pairs = mine_pairs(&d, 3.0, 70.0, 3, 17).unwrap();
        for q in 0..16 {
            let row = d.row(q);
            let pos: Vec<usize> = (0..16).filter(|&j| row[j] < 3.0).collect();
            let neg: Vec<usize> = (0..16).filter(|&j| row[j] > 70.0).collect();
            let mined = pairs.iter().find(|p| p.query == q);
            if pos.is_empty() || neg.len() < 3 {
                assert!(mined.is_none());
                continue;
            }
            let p = mined.expect("query with candidates is mined");
            assert_eq!(p.positive, pos[0]);
            assert!(p.negatives.iter().all(|n| neg.contains(n)));
        }
        assert_eq!(pairs.len(), 16);
    }

    #[test]
    fn pair_line_round_trip() {
        let p = PairSet {
            query: PatchRef { image: 3, patch: 7 },
            positive: PatchRef { image: 12, patch: 2 },
            negatives: vec![9, 0, 14],
            disparity: 1.25,
            label_source: LabelSource::Pseudo,
        };
        let line = p.to_line();
        assert_eq!(line, "3,7,12,2,9,0,14,1.25,PSEUDO");
        assert_eq!(PairSet::parse_line(&line).unwrap(), p);
        assert!(PairSet::parse_line("1,2,3").is_err());
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn graph_form_matches_closed_form_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, nq, nc, k) = (6, 3, 7, 4);
        let q: Vec<Vec<f64>> = (0..nq).map(|_| random_vec(&mut rng, d)).collect();
        let c: Vec<Vec<f64>> = (0..nc).map(|_| random_vec(&mut rng, d)).collect();
        let triplets = vec![
            Triplet { query: 0, positive: 1, negatives: vec![0, 2, 3, 6] },
            Triplet { query: 2, positive: 5, negatives: vec![4, 1, 6, 6] },
        ];
        let mut b = GraphBuilder::new();
        let qn = b.leaf("q", &[nq, d]).unwrap();
        let cn = b.leaf("c", &[nc, d]).unwrap();
        let loss = contrastive_loss_node(&mut b, qn, cn, &triplets, 0.5).unwrap();
        let g = b.build(loss);
        let mut bindings = Bindings::new();
        bindings.insert("q".into(), Tensor::new(vec![nq, d], q.concat()).unwrap());
        bindings.insert("c".into(), Tensor::new(vec![nc, d], c.concat()).unwrap());
        let got = g.evaluate(&bindings).unwrap().output().item();
        let want: f64 = triplets
            .iter()
            .map(|t| {
                let negs: Vec<Vec<f64>> = t.negatives.iter().map(|&n| c[n].clone()).collect();
                contrastive_loss(&q[t.query], &c[t.positive], &negs, 0.5).unwrap()
            })
            .sum::<f64>()
            / k as f64
            * (k as f64 / triplets.len() as f64);
        assert!((got - want).abs() < 1e-12);
        assert!(grad_check(&g, &bindings, 1e-5).unwrap() < 1e-4);
    }

    proptest! {
        #[test]
        fn forms_agree_and_scale_invariant(seed in any::<u64>(), k in 1usize..10, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 8;
            let q = random_vec(&mut rng, d);
            let p = random_vec(&mut rng, d);
            let negs: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut rng, d)).collect();
            let stable = contrastive_loss(&q, &p, &negs, 0.07).unwrap();
            let direct = direct_form(&q, &p, &negs, 0.07);
            if direct.is_finite() {
                prop_assert!((stable - direct).abs() < 1e-9);
            }
            let qs: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let scaled = contrastive_loss(&qs, &p, &negs, 0.07).unwrap();
            prop_assert!((stable - scaled).abs() < 1e-9);
            prop_assert!(stable >= 0.0);
        }

        #[test]
        fn mined_pairs_respect_thresholds(seed in any::<u64>(), k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, c) = (6, 9);
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.0..96.0)).collect();
            let m = matrix(r, c, data);
            for p in mine_pairs(&m, 3.0, 70.0, k, seed).unwrap() {
                prop_assert!(m.get(p.query, p.positive) < 3.0);
                prop_assert_eq!(p.negatives.len(), k);
                let mut uniq = p.negatives.clone();
                uniq.sort();
                uniq.dedup();
                prop_assert_eq!(uniq.len(), k);
                for &n in &p.negatives {
                    prop_assert!(m.get(p.query, n) > 70.0);
                }
            }
        }
    }

    #[test]
    fn loss_is_monotone_in_similarities() {
        // rotate the positive toward the query: loss must fall
        let q = [1.0, 0.0, 0.0];
        let negs = vec![vec![0.2, 1.0, 0.3], vec![-0.5, 0.1, 1.0]];
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let t = step as f64 / 9.0 * std::f64::consts::FRAC_PI_2;
            let pos = [t.cos(), 0.0, t.sin()];
            let l = contrastive_loss(&q, &pos, &negs, 0.1).unwrap();
            if step > 0 {
                assert!(l > last, "loss should rise as the positive moves away");
            }
            last = l;
        }
        // rotate one negative toward the query: loss must rise
        let pos = vec![0.8, 0.6, 0.0];
        let mut last = f64::NEG_INFINITY;
        for step in 0..10 {
            let t = (1.0 - step as f64 / 9.0) * std::f64::consts::FRAC_PI_2;
            let neg = vec![t.cos(), 0.0, t.sin()];
            let l = contrastive_loss(&q, &pos, &[neg, negs[1].clone()], 0.1).unwrap();
            assert!(l > last);
            last = l;
        }
    }
}

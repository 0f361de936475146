//! Segmentation losses: masked cross-entropy, Charbonnier-penalized entropy,
//! argmax pseudo labels and the weighted training objectives.
//!
//! All reductions are means over pixels (and over images, at the call site),
//! so the weights do not depend on resolution.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphBuilder, GraphError, NodeId, Tensor};
use crate::labels::{LabelMap, VOID};

/// Added inside every logarithm of a probability.
pub const LOG_EPS: f64 = 1e-12;
/// Squared Charbonnier offset, `0.001²`.
pub const CHARBONNIER_EPS: f64 = 1e-6;

static ALL_VOID_WARNINGS: AtomicUsize = AtomicUsize::new(0);

/// Number of cross-entropy evaluations that saw a fully VOID label map.
pub fn all_void_warnings() -> usize {
    ALL_VOID_WARNINGS.load(Ordering::Relaxed)
}

fn warn_all_void() {
    ALL_VOID_WARNINGS.fetch_add(1, Ordering::Relaxed);
    log::warn!("cross-entropy on a fully VOID label map; contributing 0");
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction shape {pred:?} does not match {width}x{height} labels")]
    Shape {
        pred: Vec<usize>,
        width: usize,
        height: usize,
    },
    #[error("label {0} is not a class of the prediction")]
    Label(u8),
    #[error("loss weights must be non-negative and eta positive")]
    Weights,
    #[error("required loss component `{0}` is missing")]
    Missing(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_ent: f64,
    pub lambda_self: f64,
    pub lambda_cont_gt: f64,
    pub lambda_cont_pseudo: f64,
    /// Charbonnier exponent.
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ent: 0.005,
            lambda_self: 1.0,
            lambda_cont_gt: 1e-3,
            lambda_cont_pseudo: 1e-4,
            eta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let lambdas = [
            self.lambda_ent,
            self.lambda_self,
            self.lambda_cont_gt,
            self.lambda_cont_pseudo,
        ];
        if lambdas.iter().all(|l| *l >= 0.0) && self.eta > 0.0 {
            Ok(())
        } else {
            Err(LossError::Weights)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// `L_sup^s + L_sup^l + λ_ent·L_ent`
    Base,
    /// Base plus self-training and both contrastive terms.
    Full,
}

/// Loss terms of one step; `None` means the term is absent and adds 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Components<T> {
    pub sup_s: Option<T>,
    pub sup_l: Option<T>,
    pub ent: Option<T>,
    pub self_train: Option<T>,
    pub cont_gt: Option<T>,
    pub cont_pseudo: Option<T>,
}

impl<T> Default for Components<T> {
    fn default() -> Self {
        Components {
            sup_s: None,
            sup_l: None,
            ent: None,
            self_train: None,
            cont_gt: None,
            cont_pseudo: None,
        }
    }
}

/// The `(weight, term)` list the phase's objective sums.
///
/// The source supervision term is always required; the self-training term
/// is required in the full phase whenever it carries weight.
pub fn weighted_terms<T: Copy>(
    c: &Components<T>,
    w: &LossWeights,
    phase: Phase,
) -> Result<Vec<(f64, T)>, LossError> {
    w.validate()?;
    let sup_s = c.sup_s.ok_or(LossError::Missing("sup_s"))?;
    let mut terms = vec![(1.0, sup_s)];
    terms.extend(c.sup_l.map(|t| (1.0, t)));
    terms.extend(c.ent.map(|t| (w.lambda_ent, t)));
    if phase == Phase::Full {
        match c.self_train {
            Some(t) => terms.push((w.lambda_self, t)),
            None if w.lambda_self > 0.0 => return Err(LossError::Missing("self_train")),
            None => {}
        }
        terms.extend(c.cont_gt.map(|t| (w.lambda_cont_gt, t)));
        terms.extend(c.cont_pseudo.map(|t| (w.lambda_cont_pseudo, t)));
    }
    Ok(terms)
}

pub fn total_loss(c: &Components<f64>, w: &LossWeights, phase: Phase) -> Result<f64, LossError> {
    Ok(weighted_terms(c, w, phase)?
        .into_iter()
        .map(|(l, v)| l * v)
        .sum())
}

pub fn total_loss_node(
    b: &mut GraphBuilder,
    c: &Components<NodeId>,
    w: &LossWeights,
    phase: Phase,
) -> Result<NodeId, LossError> {
    let mut total: Option<NodeId> = None;
    for (lambda, term) in weighted_terms(c, w, phase)? {
        let scaled = if lambda == 1.0 { term } else { b.scale(term, lambda) };
        total = Some(match total {
            Some(acc) => b.add(acc, scaled)?,
            None => scaled,
        });
    }
    Ok(total.expect("sup_s is always present"))
}

fn check_shape(pred: &[usize], labels: &LabelMap) -> Result<(usize, usize), LossError> {
    match pred {
        [c, h, w] if *h == labels.height() && *w == labels.width() => Ok((*c, h * w)),
        _ => Err(LossError::Shape {
            pred: pred.to_vec(),
            width: labels.width(),
            height: labels.height(),
        }),
    }
}

/// `[N_c, H, W]` mask with `1/n` at each scored pixel's true class, where
/// `n` is the number of non-VOID pixels. `None` when every pixel is VOID.
fn target_weights(pred: &[usize], labels: &LabelMap) -> Result<Option<Tensor>, LossError> {
    let (nc, hw) = check_shape(pred, labels)?;
    let scored = labels.count_non_void();
    if scored == 0 {
        return Ok(None);
    }
    let mut mask = vec![0.0; nc * hw];
    for (i, &v) in labels.data().iter().enumerate() {
        if v == VOID {
            continue;
        }
        if v as usize >= nc {
            return Err(LossError::Label(v));
        }
        mask[v as usize * hw + i] = 1.0 / scored as f64;
    }
    Ok(Some(Tensor::new(pred.to_vec(), mask).expect("mask matches pred shape")))
}

/// Mean over non-VOID pixels of `−log(p_true + ε)`; 0 for an all-VOID map.
pub fn cross_entropy(pred: &Tensor, labels: &LabelMap) -> Result<f64, LossError> {
    let Some(mask) = target_weights(pred.shape(), labels)? else {
        warn_all_void();
        return Ok(0.0);
    };
    Ok(-pred
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, m)| **m != 0.0)
        .map(|(p, m)| m * (p + LOG_EPS).ln())
        .sum::<f64>())
}

/// Graph form of [`cross_entropy`]; `None` for an all-VOID map.
pub fn cross_entropy_node(
    b: &mut GraphBuilder,
    pred: NodeId,
    labels: &LabelMap,
) -> Result<Option<NodeId>, LossError> {
    let shape = b.shape(pred).to_vec();
    let Some(mask) = target_weights(&shape, labels)? else {
        warn_all_void();
        return Ok(None);
    };
    let logp = b.log(pred, LOG_EPS);
    let mask = b.constant(mask);
    let picked = b.mul(logp, mask)?;
    let s = b.sum(picked);
    Ok(Some(b.scale(s, -1.0)))
}

fn charbonnier(x: f64, eta: f64) -> f64 {
    (x * x + CHARBONNIER_EPS).powf(eta)
}

/// Mean over pixels of `ρ(−Σ_c p_c log p_c)`.
pub fn entropy_reg(pred: &Tensor, eta: f64) -> Result<f64, LossError> {
    let [nc, h, w] = pred.shape() else {
        return Err(LossError::Shape {
            pred: pred.shape().to_vec(),
            width: 0,
            height: 0,
        });
    };
    let hw = h * w;
    let p = pred.data();
    let total: f64 = (0..hw)
        .map(|i| {
            let ent = -(0..*nc)
                .map(|c| {
                    let v = p[c * hw + i];
                    v * (v + LOG_EPS).ln()
                })
                .sum::<f64>();
            charbonnier(ent, eta)
        })
        .sum();
    Ok(total / hw as f64)
}

pub fn entropy_reg_node(b: &mut GraphBuilder, pred: NodeId, eta: f64) -> Result<NodeId, LossError> {
    if b.shape(pred).len() != 3 {
        return Err(LossError::Shape {
            pred: b.shape(pred).to_vec(),
            width: 0,
            height: 0,
        });
    }
    let logp = b.log(pred, LOG_EPS);
    let plogp = b.mul(pred, logp)?;
    let neg_ent = b.sum_axis(plogp, 0)?;
    let sq = b.mul(neg_ent, neg_ent)?;
    let shifted = b.add_scalar(sq, CHARBONNIER_EPS);
    let rho = b.powf(shifted, eta);
    Ok(b.mean(rho))
}

/// Per-pixel argmax class; the lowest class index wins ties.
pub fn pseudo_labels(pred: &Tensor) -> Result<LabelMap, LossError> {
    let [nc, h, w] = pred.shape() else {
        return Err(LossError::Shape {
            pred: pred.shape().to_vec(),
            width: 0,
            height: 0,
        });
    };
    let hw = h * w;
    let p = pred.data();
    let data = (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..*nc {
                if p[c * hw + i] > p[best * hw + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Ok(LabelMap::new(*w, *h, data).expect("argmax map has h*w entries"))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check, Bindings};

    fn one_hot(labels: &LabelMap, nc: usize) -> Tensor {
        let hw = labels.width() * labels.height();
        let mut t = Tensor::zeros(&[nc, labels.height(), labels.width()]);
        for (i, &v) in labels.data().iter().enumerate() {
            t.data_mut()[v as usize * hw + i] = 1.0;
        }
        t
    }

    fn uniform(nc: usize, h: usize, w: usize) -> Tensor {
        Tensor::full(&[nc, h, w], 1.0 / nc as f64)
    }

    fn random_probs(rng: &mut ChaCha8Rng, nc: usize, h: usize, w: usize) -> Tensor {
        let hw = h * w;
        let mut data: Vec<f64> = (0..nc * hw).map(|_| rng.gen_range(0.05..1.0)).collect();
        for i in 0..hw {
            let s: f64 = (0..nc).map(|c| data[c * hw + i]).sum();
            for c in 0..nc {
                data[c * hw + i] /= s;
            }
        }
        Tensor::new(vec![nc, h, w], data).unwrap()
    }

    #[test]
    fn cross_entropy_anchors() {
        let labels = LabelMap::new(3, 2, vec![0, 1, 2, 3, 4, 0]).unwrap();
        let ce = cross_entropy(&one_hot(&labels, 5), &labels).unwrap();
        assert!(ce.abs() < 1e-11);
        let ce = cross_entropy(&uniform(5, 2, 3), &labels).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-10);
        assert!((ce - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn void_pixels_are_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = random_probs(&mut rng, 5, 2, 4);
        let full = LabelMap::new(4, 2, vec![0, 1, 2, 3, 4, 0, 1, 2]).unwrap();
        let mut half = full.clone();
        for x in 0..4 {
            half.set(x, 1, VOID);
        }
        let want: f64 = (0..4)
            .map(|x| -(pred.data()[full.get(x, 0) as usize * 8 + x] + LOG_EPS).ln())
            .sum::<f64>()
            / 4.0;
        assert!((cross_entropy(&pred, &half).unwrap() - want).abs() < 1e-12);

        let before = all_void_warnings();
        let void = LabelMap::filled(4, 2, VOID);
        assert_eq!(cross_entropy(&pred, &void).unwrap(), 0.0);
        assert!(all_void_warnings() > before);
        let mut b = GraphBuilder::new();
        let p = b.constant(pred);
        assert!(cross_entropy_node(&mut b, p, &void).unwrap().is_none());
    }

    #[test]
    fn cross_entropy_rejects_bad_inputs() {
        let pred = uniform(3, 2, 2);
        assert!(matches!(
            cross_entropy(&pred, &LabelMap::filled(3, 2, 0)),
            Err(LossError::Shape { .. })
        ));
        assert_eq!(
            cross_entropy(&pred, &LabelMap::filled(2, 2, 4)),
            Err(LossError::Label(4))
        );
    }

    #[test]
    fn entropy_anchors() {
        let labels = LabelMap::new(2, 2, vec![0, 3, 1, 4]).unwrap();
        let one_hot_penalty = entropy_reg(&one_hot(&labels, 5), 2.0).unwrap();
        assert!((one_hot_penalty - 1e-12).abs() < 1e-16);
        let u = entropy_reg(&uniform(5, 2, 2), 2.0).unwrap();
        let want = (5f64.ln().powi(2) + 1e-6).powi(2);
        assert!((u - want).abs() < 1e-9);
        assert!((u - 6.709610).abs() < 1e-6);
        let one_hot_eta1 = entropy_reg(&one_hot(&labels, 5), 1.0).unwrap();
        assert!((one_hot_eta1 - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn pseudo_labels_argmax_and_ties() {
        let labels = LabelMap::filled(3, 2, 3);
        assert_eq!(pseudo_labels(&one_hot(&labels, 5)).unwrap(), labels);
        let mut t = Tensor::zeros(&[4, 1, 1]);
        t.data_mut().copy_from_slice(&[0.1, 0.4, 0.4, 0.1]);
        assert_eq!(pseudo_labels(&t).unwrap().data(), &[1]);
    }

    #[test]
    fn self_training_composes_argmax_and_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = random_probs(&mut rng, 5, 3, 3);
        let pl = pseudo_labels(&pred).unwrap();
        let direct: f64 = (0..9)
            .map(|i| {
                let best = (0..5).map(|c| pred.data()[c * 9 + i]).fold(0.0, f64::max);
                -(best + LOG_EPS).ln()
            })
            .sum::<f64>()
            / 9.0;
        assert!((cross_entropy(&pred, &pl).unwrap() - direct).abs() < 1e-12);
    }

    fn comps(v: [Option<f64>; 6]) -> Components<f64> {
        Components {
            sup_s: v[0],
            sup_l: v[1],
            ent: v[2],
            self_train: v[3],
            cont_gt: v[4],
            cont_pseudo: v[5],
        }
    }

    #[test]
    fn total_loss_weighting() {
        let zero = LossWeights {
            lambda_ent: 0.0,
            lambda_self: 0.0,
            lambda_cont_gt: 0.0,
            lambda_cont_pseudo: 0.0,
            eta: 2.0,
        };
        let c = comps([Some(1.3), None, Some(0.7), None, None, None]);
        assert_eq!(total_loss(&c, &zero, Phase::Base).unwrap(), 1.3);

        let w = LossWeights::default();
        let c = comps([Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0), Some(6.0)]);
        let base = total_loss(&c, &w, Phase::Base).unwrap();
        assert!((base - (3.0 + 0.005 * 3.0)).abs() < 1e-15);
        let full = total_loss(&c, &w, Phase::Full).unwrap();
        assert!((full - (base + 4.0 + 1e-3 * 5.0 + 1e-4 * 6.0)).abs() < 1e-12);

        let no_cont = LossWeights {
            lambda_cont_gt: 0.0,
            lambda_cont_pseudo: 0.0,
            ..w
        };
        let full = total_loss(&c, &no_cont, Phase::Full).unwrap();
        assert!((full - (base + w.lambda_self * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_requires_components() {
        let w = LossWeights::default();
        assert_eq!(
            total_loss(&comps([None; 6]), &w, Phase::Base),
            Err(LossError::Missing("sup_s"))
        );
        let c = comps([Some(1.0), None, None, None, None, None]);
        assert_eq!(total_loss(&c, &w, Phase::Full), Err(LossError::Missing("self_train")));
        let bad = LossWeights { lambda_ent: -1.0, ..w };
        assert_eq!(total_loss(&c, &bad, Phase::Base), Err(LossError::Weights));
    }

    #[test]
    fn graph_forms_match_values_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (nc, h, w) = (4, 3, 5);
        let logits: Vec<f64> = (0..nc * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = LabelMap::new(
            w,
            h,
            (0..h * w)
                .map(|i| if i % 4 == 0 { VOID } else { rng.gen_range(0..nc as u8) })
                .collect(),
        )
        .unwrap();
        let mut b = GraphBuilder::new();
        let x = b.leaf("logits", &[nc, h, w]).unwrap();
        let p = b.softmax(x, 0).unwrap();
        let ce = cross_entropy_node(&mut b, p, &labels).unwrap().unwrap();
        let ent = entropy_reg_node(&mut b, p, 2.0).unwrap();
        let c = Components {
            sup_s: Some(ce),
            ent: Some(ent),
            ..Default::default()
        };
        let total = total_loss_node(&mut b, &c, &LossWeights::default(), Phase::Base).unwrap();
        let (ce_id, ent_id, p_id) = (ce, ent, p);
        let g = b.build(total);
        let mut bind = Bindings::new();
        bind.insert("logits".into(), Tensor::new(vec![nc, h, w], logits).unwrap());
        let ev = g.evaluate(&bind).unwrap();
        let probs = ev.value(p_id).clone();
        let ce_v = cross_entropy(&probs, &labels).unwrap();
        let ent_v = entropy_reg(&probs, 2.0).unwrap();
        assert!((ev.value(ce_id).item() - ce_v).abs() < 1e-12);
        assert!((ev.value(ent_id).item() - ent_v).abs() < 1e-12);
        assert!((ev.output().item() - (ce_v + 0.005 * ent_v)).abs() < 1e-12);
        assert!(grad_check(&g, &bind, 1e-5).unwrap() < 1e-4);
    }

    proptest! {
        #[test]
        fn entropy_extremes(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_probs(&mut rng, 5, 2, 2);
            let e = entropy_reg(&p, 2.0).unwrap();
            let lo = entropy_reg(&one_hot(&LabelMap::filled(2, 2, 1), 5), 2.0).unwrap();
            let hi = entropy_reg(&uniform(5, 2, 2), 2.0).unwrap();
            prop_assert!(lo <= e && e <= hi + 1e-12);
        }

        #[test]
        fn cross_entropy_is_nonnegative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_probs(&mut rng, 5, 2, 3);
            let labels = LabelMap::new(3, 2, (0..6).map(|_| rng.gen_range(0..5)).collect()).unwrap();
            prop_assert!(cross_entropy(&p, &labels).unwrap() > 0.0);
        }

        #[test]
        fn total_is_linear_in_each_weight(
            vals in proptest::array::uniform6(0.0f64..5.0),
            lam in 0.0f64..3.0,
            which in 0usize..4,
        ) {
            let c = comps(vals.map(Some));
            let set = |l: f64| {
                let mut w = LossWeights::default();
                match which {
                    0 => w.lambda_ent = l,
                    1 => w.lambda_self = l,
                    2 => w.lambda_cont_gt = l,
                    _ => w.lambda_cont_pseudo = l,
                }
                total_loss(&c, &w, Phase::Full).unwrap()
            };
            let (a, b0, b1) = (set(lam), set(0.0), set(1.0));
            prop_assert!((a - (b0 + lam * (b1 - b0))).abs() < 1e-9);
        }
    }
}

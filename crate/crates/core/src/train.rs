//! Two-phase training: a base phase on supervised and entropy losses, argmax
//! pseudo labels from the frozen base model, then a fresh network trained on
//! the full objective with self-training and patch-wise contrastive terms.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphBuilder, GraphError, NodeId, Tensor};
use crate::data::{derive_seed, DataError, Scene, SsdaSplit};
use crate::disparity::{disparity_matrix, DisparityError, DisparityMatrix, MatchingStrategy};
use crate::eval::{evaluate, EvalError};
use crate::fda::{translate, FdaError};
use crate::grid::{GridError, PatchGrid};
use crate::imageio;
use crate::labels::LabelMap;
use crate::losses::{
    cross_entropy_node, entropy_reg_node, pseudo_labels, total_loss_node, Components, LossError,
    LossWeights, Phase,
};
use crate::pairing::{contrastive_loss_node, mine_pairs, LabelSource, PairingError, Triplet};
use crate::segnet::{build_forward, init_params, segment, ModelParams, ParamNodes, SegNetConfig, SegNetError};

pub const METRICS_HEADER: &str = "iter,lr,L_sup_s,L_sup_l,L_ent,L_self,L_cont_gt,L_cont_pseudo,total,val_miou";

const STREAM_INIT: u64 = 31;
const STREAM_BATCH: u64 = 32;
/// Pair mining draws from its own stream so that toggling the contrastive
/// terms leaves batch composition unchanged.
const STREAM_MINE: u64 = 33;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("iteration {iter} outside [0, {max_iters}]")]
    IterRange { iter: usize, max_iters: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("phase {0:?} needs pseudo labels")]
    MissingPseudoLabels(Phase),
    #[error("non-finite loss at iteration {iter}: {detail}{}", dump.as_ref().map(|p| format!(" (step dump: {})", p.display())).unwrap_or_default())]
    NonFinite {
        iter: usize,
        detail: String,
        dump: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] SegNetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Disparity(#[from] DisparityError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fda(#[from] FdaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Which side of a cross-domain pair supplies the query patch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryDirection {
    /// Target patches query translated-source candidates.
    #[default]
    TargetToSource,
    SourceToTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub negatives: usize,
    pub tau: f64,
    pub patch_width: usize,
    pub patch_height: usize,
    pub strategy: MatchingStrategy,
    pub direction: QueryDirection,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig {
            alpha: crate::pairing::DEFAULT_ALPHA,
            beta: crate::pairing::DEFAULT_BETA,
            negatives: crate::pairing::DEFAULT_NEGATIVES,
            tau: crate::pairing::DEFAULT_TAU,
            patch_width: 32,
            patch_height: 16,
            strategy: MatchingStrategy::Pyramid,
            direction: QueryDirection::TargetToSource,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub source_per_batch: usize,
    pub target_per_batch: usize,
    pub base_lr: f64,
    pub poly_power: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub use_fda: bool,
    pub fda_window_ratio: f64,
    pub loss: LossWeights,
    pub pairing: PairingConfig,
    /// Validate every this many iterations (and after the last); 0 only at the end.
    pub val_every: usize,
    /// Per-node non-finite checks in the training graph.
    pub check_finite: bool,
    /// Read pseudo labels from `<dir>/<id>.png` instead of generating them.
    pub pseudo_label_dir: Option<PathBuf>,
    /// Where to write a step dump when the loss goes non-finite.
    pub diagnostic_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 3000,
            source_per_batch: 2,
            target_per_batch: 2,
            base_lr: 2.5e-4,
            poly_power: 0.9,
            weight_decay: 5e-4,
            momentum: 0.9,
            use_fda: true,
            fda_window_ratio: 0.05,
            loss: LossWeights::default(),
            pairing: PairingConfig::default(),
            val_every: 500,
            check_finite: cfg!(debug_assertions),
            pseudo_label_dir: None,
            diagnostic_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_iters == 0 || self.source_per_batch == 0 || self.target_per_batch == 0 {
            return bad("iterations and batch sizes must be positive");
        }
        if !(self.base_lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..=0.5).contains(&self.fda_window_ratio) {
            return bad("fda_window_ratio must be in [0, 0.5]");
        }
        let p = &self.pairing;
        if !(p.alpha >= 0.0 && p.alpha < p.beta) || p.negatives == 0 || !(p.tau > 0.0) {
            return bad("pairing needs 0 <= alpha < beta, negatives >= 1 and tau > 0");
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// `base_lr · (1 − iter/max_iters)^power`.
pub fn poly_lr(iter: usize, max_iters: usize, base_lr: f64, power: f64) -> Result<f64, TrainError> {
    if iter > max_iters || max_iters == 0 {
        return Err(TrainError::IterRange { iter, max_iters });
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iters as f64).powf(power))
}

/// One logged optimization step; absent loss terms are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub terms: Components<f64>,
    pub total: f64,
    pub val_miou: Option<f64>,
    pub gt_pairs: usize,
    pub pseudo_pairs: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(w: &mut W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        let t = &r.terms;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.lr,
            opt(t.sup_s),
            opt(t.sup_l),
            opt(t.ent),
            opt(t.self_train),
            opt(t.cont_gt),
            opt(t.cont_pseudo),
            r.total,
            opt(r.val_miou)
        )?;
    }
    Ok(())
}

/// Pseudo labels of unlabeled target scenes, keyed by scene id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabels {
    labels: BTreeMap<usize, LabelMap>,
}

impl PseudoLabels {
    pub fn get(&self, id: usize) -> Option<&LabelMap> {
        self.labels.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &LabelMap)> {
        self.labels.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        for (id, l) in &self.labels {
            imageio::write_labels(&dir.join(format!("{id:05}.png")), l).map_err(DataError::from)?;
        }
        Ok(())
    }

    /// Load `<dir>/<id>.png` for every unlabeled scene of `split`.
    pub fn load(dir: &Path, split: &SsdaSplit, num_classes: usize) -> Result<Self, TrainError> {
        let mut labels = BTreeMap::new();
        for s in &split.unlabeled {
            let path = dir.join(format!("{:05}.png", s.id));
            let l = imageio::read_labels(&path).map_err(DataError::from)?;
            l.validate(num_classes)
                .map_err(|source| DataError::Label { path, source })?;
            labels.insert(s.id, l);
        }
        Ok(PseudoLabels { labels })
    }
}

/// Argmax labels of the frozen model on every unlabeled target scene.
pub fn generate_pseudo_labels(params: &ModelParams, split: &SsdaSplit) -> Result<PseudoLabels, TrainError> {
    let mut labels = BTreeMap::new();
    for s in &split.unlabeled {
        labels.insert(s.id, pseudo_labels(&segment(params, &s.image)?)?);
    }
    Ok(PseudoLabels { labels })
}

/// Everything a phase reads besides parameters and config.
#[derive(Clone, Copy, Debug)]
pub struct PhaseData<'a> {
    pub split: &'a SsdaSplit,
    pub pseudo: Option<&'a PseudoLabels>,
    /// Fully labeled target scenes used only for validation mIoU.
    pub val: &'a [Scene],
}

#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub params: ModelParams,
    pub log: Vec<MetricsRow>,
}

impl PhaseOutcome {
    pub fn final_val_miou(&self) -> Option<f64> {
        self.log.iter().rev().find_map(|r| r.val_miou)
    }
}

#[derive(Clone, Copy, Debug)]
enum TargetSlot {
    Labeled(usize),
    Unlabeled(usize),
}

fn mean_of(b: &mut GraphBuilder, nodes: &[NodeId]) -> Result<Option<NodeId>, GraphError> {
    let Some((&first, rest)) = nodes.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &n in rest {
        acc = b.add(acc, n)?;
    }
    Ok(Some(if nodes.len() == 1 {
        acc
    } else {
        b.scale(acc, 1.0 / nodes.len() as f64)
    }))
}

fn transpose(m: &DisparityMatrix) -> DisparityMatrix {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for j in 0..m.cols() {
        data.extend((0..m.rows()).map(|i| m.get(i, j)));
    }
    DisparityMatrix::new(m.cols(), m.rows(), data)
}

pub fn validation_miou(params: &ModelParams, val: &[Scene]) -> Result<Option<f64>, TrainError> {
    if val.is_empty() {
        return Ok(None);
    }
    let (_, report) = evaluate(params, val.iter().map(|s| (&s.image, &s.labels)))?;
    Ok(Some(report.miou))
}

struct Step {
    lr: f64,
    terms: Components<f64>,
    total: f64,
    gt_pairs: usize,
    pseudo_pairs: usize,
    grads: BTreeMap<String, Tensor>,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    net: SegNetConfig,
    data: PhaseData<'a>,
    phase: Phase,
    grid: PatchGrid,
    want_gt_pairs: bool,
    want_pseudo_pairs: bool,
    want_self: bool,
    target_pool: Vec<&'a Tensor>,
}

impl<'a> Trainer<'a> {
    fn sample_slots(&self, rng: &mut ChaCha8Rng) -> Vec<TargetSlot> {
        let (nl, nu) = (self.data.split.labeled.len(), self.data.split.unlabeled.len());
        (0..self.cfg.target_per_batch)
            .map(|slot| {
                // labeled scenes take the first slot when any exist
                if nl > 0 && (slot == 0 || nu == 0) {
                    TargetSlot::Labeled(rng.gen_range(0..nl))
                } else {
                    TargetSlot::Unlabeled(rng.gen_range(0..nu))
                }
            })
            .collect()
    }

    fn step(
        &self,
        iter: usize,
        params: &ModelParams,
        rng: &mut ChaCha8Rng,
        mine_rng: &mut ChaCha8Rng,
    ) -> Result<Step, TrainError> {
        let cfg = self.cfg;
        let split = self.data.split;
        let lr = poly_lr(iter, cfg.max_iters, cfg.base_lr, cfg.poly_power)?;
        let want_latents = self.want_gt_pairs || self.want_pseudo_pairs;
        let grid = want_latents.then_some(&self.grid);

        let mut b = GraphBuilder::new();
        let pn = ParamNodes::register(&mut b, &self.net)?;

        let mut sources = Vec::with_capacity(cfg.source_per_batch);
        let mut sup_s = Vec::new();
        for _ in 0..cfg.source_per_batch {
            let scene = &split.source[rng.gen_range(0..split.source.len())];
            let image = if cfg.use_fda && !self.target_pool.is_empty() {
                let style = self.target_pool[rng.gen_range(0..self.target_pool.len())];
                translate(&scene.image, style, cfg.fda_window_ratio)?
            } else {
                scene.image.clone()
            };
            let x = b.constant(image);
            let fwd = build_forward(&mut b, &self.net, &pn, x, grid)?;
            if let Some(ce) = cross_entropy_node(&mut b, fwd.probs, &scene.labels)? {
                sup_s.push(ce);
            }
            sources.push((scene, fwd));
        }

        let (mut sup_l, mut ent, mut self_t) = (Vec::new(), Vec::new(), Vec::new());
        let (mut cont_gt, mut cont_pseudo) = (Vec::new(), Vec::new());
        let (mut gt_pairs, mut pseudo_pairs) = (0, 0);
        for slot in self.sample_slots(rng) {
            let (image, query_labels, source_tag) = match slot {
                TargetSlot::Labeled(i) => {
                    let s = &split.labeled[i];
                    (&s.image, Some(&s.labels), LabelSource::GroundTruth)
                }
                TargetSlot::Unlabeled(i) => {
                    let s = &split.unlabeled[i];
                    let pl = self.data.pseudo.and_then(|p| p.get(s.id));
                    (&s.image, pl, LabelSource::Pseudo)
                }
            };
            let x = b.constant(image.clone());
            let fwd = build_forward(&mut b, &self.net, &pn, x, grid)?;
            match slot {
                TargetSlot::Labeled(i) => {
                    if let Some(ce) = cross_entropy_node(&mut b, fwd.probs, &split.labeled[i].labels)? {
                        sup_l.push(ce);
                    }
                }
                TargetSlot::Unlabeled(_) => {
                    ent.push(entropy_reg_node(&mut b, fwd.probs, cfg.loss.eta)?);
                    if self.want_self {
                        let pl = query_labels.ok_or(TrainError::MissingPseudoLabels(self.phase))?;
                        if let Some(ce) = cross_entropy_node(&mut b, fwd.probs, pl)? {
                            self_t.push(ce);
                        }
                    }
                }
            }
            let wanted = match source_tag {
                LabelSource::GroundTruth => self.want_gt_pairs,
                LabelSource::Pseudo => self.want_pseudo_pairs,
            };
            if !wanted {
                continue;
            }
            let query_labels = query_labels.ok_or(TrainError::MissingPseudoLabels(self.phase))?;
            let (src_scene, src_fwd) = &sources[mine_rng.gen_range(0..sources.len())];
            let p = &cfg.pairing;
            let nc = self.net.num_classes;
            let (d, q_lat, c_lat) = match p.direction {
                QueryDirection::TargetToSource => (
                    disparity_matrix(query_labels, &src_scene.labels, &self.grid, nc, p.strategy)?,
                    &fwd.latents,
                    &src_fwd.latents,
                ),
                QueryDirection::SourceToTarget => (
                    transpose(&disparity_matrix(query_labels, &src_scene.labels, &self.grid, nc, p.strategy)?),
                    &src_fwd.latents,
                    &fwd.latents,
                ),
            };
            let mined = mine_pairs(&d, p.alpha, p.beta, p.negatives, mine_rng.gen())?;
            if mined.is_empty() {
                continue;
            }
            let triplets: Vec<Triplet> = mined
                .iter()
                .map(|m| Triplet {
                    query: m.query,
                    positive: m.positive,
                    negatives: m.negatives.clone(),
                })
                .collect();
            let mut per_stage = Vec::with_capacity(q_lat.len());
            for (&q, &c) in q_lat.iter().zip(c_lat) {
                per_stage.push(contrastive_loss_node(&mut b, q, c, &triplets, p.tau)?);
            }
            let mut summed = per_stage[0];
            for &n in &per_stage[1..] {
                summed = b.add(summed, n)?;
            }
            match source_tag {
                LabelSource::GroundTruth => {
                    gt_pairs += mined.len();
                    cont_gt.push(summed);
                }
                LabelSource::Pseudo => {
                    pseudo_pairs += mined.len();
                    cont_pseudo.push(summed);
                }
            }
        }

        let comps = Components {
            sup_s: mean_of(&mut b, &sup_s)?,
            sup_l: mean_of(&mut b, &sup_l)?,
            ent: mean_of(&mut b, &ent)?,
            self_train: mean_of(&mut b, &self_t)?,
            cont_gt: mean_of(&mut b, &cont_gt)?,
            cont_pseudo: mean_of(&mut b, &cont_pseudo)?,
        };
        let comps = if comps.sup_s.is_none() {
            // fully VOID source batch: contributes a constant zero
            let zero = b.constant(Tensor::scalar(0.0));
            Components {
                sup_s: Some(zero),
                ..comps
            }
        } else {
            comps
        };
        let total = total_loss_node(&mut b, &comps, &cfg.loss, self.phase)?;
        let mut graph = b.build(total);
        graph.set_check_finite(cfg.check_finite);
        let (eval, grads) = graph.backward(&params.bindings())?;
        let val = |n: Option<NodeId>| n.map(|id| eval.value(id).item());
        let terms = Components {
            sup_s: val(comps.sup_s),
            sup_l: val(comps.sup_l),
            ent: val(comps.ent),
            self_train: val(comps.self_train),
            cont_gt: val(comps.cont_gt),
            cont_pseudo: val(comps.cont_pseudo),
        };
        Ok(Step {
            lr,
            terms,
            total: eval.output().item(),
            gt_pairs,
            pseudo_pairs,
            grads,
        })
    }

    fn dump(&self, iter: usize, detail: &str) -> Option<PathBuf> {
        let dir = self.cfg.diagnostic_dir.as_ref()?;
        std::fs::create_dir_all(dir).ok()?;
        let path = dir.join(format!("nonfinite-{:?}-{iter}.txt", self.phase).to_lowercase());
        let text = format!("phase {:?}\niter {iter}\n{detail}\n", self.phase);
        std::fs::write(&path, text).ok()?;
        Some(path)
    }
}

/// Plain SGD with momentum; weight decay is added to the gradient, so a zero
/// learning rate leaves parameters untouched.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        for (name, p) in params.tensors_mut() {
            let Some(g) = grads.get(name) else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.len()]);
            for ((w, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = momentum * *vi + gi + weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}

/// Optimize `params` for one phase.
pub fn train_phase(
    mut params: ModelParams,
    data: PhaseData<'_>,
    cfg: &TrainConfig,
    phase: Phase,
    seed: u64,
) -> Result<PhaseOutcome, TrainError> {
    cfg.validate()?;
    let net = params.config().clone();
    let split = data.split;
    if split.source.is_empty() {
        return Err(TrainError::Config("no source scenes".into()));
    }
    if split.labeled.is_empty() && split.unlabeled.is_empty() {
        return Err(TrainError::Config("no target scenes".into()));
    }
    let full = phase == Phase::Full;
    let want_self = full && cfg.loss.lambda_self > 0.0 && !split.unlabeled.is_empty();
    let want_gt_pairs = full && cfg.loss.lambda_cont_gt > 0.0 && !split.labeled.is_empty();
    let want_pseudo_pairs = full && cfg.loss.lambda_cont_pseudo > 0.0 && !split.unlabeled.is_empty();
    if (want_self || want_pseudo_pairs) && data.pseudo.is_none() {
        return Err(TrainError::MissingPseudoLabels(phase));
    }
    let grid = PatchGrid::new(
        net.image_width,
        net.image_height,
        cfg.pairing.patch_width,
        cfg.pairing.patch_height,
    )?;
    if want_gt_pairs || want_pseudo_pairs {
        net.check_grid(&grid)?;
    }
    let target_pool = split
        .labeled
        .iter()
        .map(|s| &s.image)
        .chain(split.unlabeled.iter().map(|s| &s.image))
        .collect();
    let trainer = Trainer {
        cfg,
        net,
        data,
        phase,
        grid,
        want_gt_pairs,
        want_pseudo_pairs,
        want_self,
        target_pool,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_BATCH, phase as u64));
    let mut mine_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MINE, phase as u64));
    let mut sgd = Sgd::default();
    let mut log = Vec::with_capacity(cfg.max_iters);
    for iter in 0..cfg.max_iters {
        let step = match trainer.step(iter, &params, &mut rng, &mut mine_rng) {
            Err(TrainError::Graph(e @ GraphError::NonFinite { .. })) => {
                let detail = e.to_string();
                return Err(TrainError::NonFinite {
                    iter,
                    dump: trainer.dump(iter, &detail),
                    detail,
                });
            }
            other => other?,
        };
        if !step.total.is_finite() {
            let detail = format!("total={} terms={:?}", step.total, step.terms);
            return Err(TrainError::NonFinite {
                iter,
                dump: trainer.dump(iter, &detail),
                detail,
            });
        }
        sgd.step(&mut params, &step.grads, step.lr, cfg.momentum, cfg.weight_decay);
        let last = iter + 1 == cfg.max_iters;
        let val_miou = if last || (cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0) {
            validation_miou(&params, data.val)?
        } else {
            None
        };
        if let Some(m) = val_miou {
            log::info!("{phase:?} iter {} total {:.4} val mIoU {:.4}", iter + 1, step.total, m);
        }
        log.push(MetricsRow {
            iter,
            lr: step.lr,
            terms: step.terms,
            total: step.total,
            val_miou,
            gt_pairs: step.gt_pairs,
            pseudo_pairs: step.pseudo_pairs,
        });
    }
    Ok(PhaseOutcome { params, log })
}

/// Parameters for `phase` (1 or 2) come from separate seed streams.
pub fn phase_init_seed(seed: u64, phase: u64) -> u64 {
    derive_seed(seed, STREAM_INIT, phase)
}

#[derive(Clone, Debug)]
pub struct TwoPhaseOutcome {
    pub phase1: PhaseOutcome,
    pub pseudo: PseudoLabels,
    pub phase2: PhaseOutcome,
}

/// Pseudo labels from the frozen phase-1 model (or from
/// `cfg.pseudo_label_dir`), a fresh initialization, then the full objective.
pub fn run_phase2(
    phase1: &ModelParams,
    split: &SsdaSplit,
    val: &[Scene],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(PseudoLabels, PhaseOutcome), TrainError> {
    let net = phase1.config();
    let pseudo = match &cfg.pseudo_label_dir {
        Some(dir) => PseudoLabels::load(dir, split, net.num_classes)?,
        None => generate_pseudo_labels(phase1, split)?,
    };
    let init = init_params(net, phase_init_seed(seed, 2))?;
    let data = PhaseData {
        split,
        pseudo: Some(&pseudo),
        val,
    };
    let outcome = train_phase(init, data, cfg, Phase::Full, seed)?;
    Ok((pseudo, outcome))
}

pub fn run_phase1(
    net: &SegNetConfig,
    split: &SsdaSplit,
    val: &[Scene],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseOutcome, TrainError> {
    let init = init_params(net, phase_init_seed(seed, 1))?;
    let data = PhaseData {
        split,
        pseudo: None,
        val,
    };
    train_phase(init, data, cfg, Phase::Base, seed)
}

pub fn run_two_phase(
    net: &SegNetConfig,
    split: &SsdaSplit,
    val: &[Scene],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TwoPhaseOutcome, TrainError> {
    let phase1 = run_phase1(net, split, val, cfg, seed)?;
    let (pseudo, phase2) = run_phase2(&phase1.params, split, val, cfg, seed)?;
    Ok(TwoPhaseOutcome {
        phase1,
        pseudo,
        phase2,
    })
}

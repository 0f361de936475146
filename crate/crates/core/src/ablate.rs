//! One-axis ablation sweeps over a base [`RunConfig`].
//!
//! Every cell is a list of dotted overrides. Cells that only touch the
//! phase-2 objective reuse one phase-1 model per seed; phase 1 never reads
//! those knobs, so sharing it changes nothing.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::data::Benchmark;
use crate::grid::PatchGrid;
use crate::pipeline::make_split;
use crate::train::{run_phase1, run_phase2, validation_miou};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    LossTerms,
    Lambda,
    Tau,
    AlphaBeta,
    PatchSize,
    Matching,
    Annotation,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::LossTerms,
        Axis::Lambda,
        Axis::Tau,
        Axis::AlphaBeta,
        Axis::PatchSize,
        Axis::Matching,
        Axis::Annotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::LossTerms => "loss-terms",
            Axis::Lambda => "lambda",
            Axis::Tau => "tau",
            Axis::AlphaBeta => "alpha-beta",
            Axis::PatchSize => "patch-size",
            Axis::Matching => "matching",
            Axis::Annotation => "annotation",
        }
    }

    /// Whether every cell leaves phase 1 untouched.
    fn shares_phase1(self) -> bool {
        self != Axis::Annotation
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown ablation axis `{0}` (expected one of loss-terms, lambda, tau, alpha-beta, patch-size, matching, annotation)")]
pub struct UnknownAxis(pub String);

impl FromStr for Axis {
    type Err = UnknownAxis;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAxis(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub overrides: Vec<String>,
    /// Score the phase-1 model and skip phase 2.
    pub phase1_only: bool,
}

impl Cell {
    fn new(name: impl Into<String>, overrides: Vec<String>) -> Self {
        Cell {
            name: name.into(),
            overrides,
            phase1_only: false,
        }
    }
}

/// The cells of `axis`, relative to `base`.
pub fn cells(axis: Axis, base: &RunConfig) -> Vec<Cell> {
    let lw = &base.train.loss;
    match axis {
        Axis::LossTerms => vec![
            Cell {
                phase1_only: true,
                ..Cell::new("sup+ent", vec![])
            },
            Cell::new(
                "sup+ent+self",
                vec![
                    "train.loss.lambda_cont_gt=0.0".into(),
                    "train.loss.lambda_cont_pseudo=0.0".into(),
                ],
            ),
            Cell::new("sup+ent+self+cont", vec![]),
        ],
        Axis::Lambda => {
            let g = lw.lambda_cont_gt;
            [(0.0, 0.0), (g, 0.0), (g, g), (g, g / 10.0), (g / 10.0, g / 10.0)]
                .into_iter()
                .map(|(gt, ps)| {
                    Cell::new(
                        format!("gt={gt:e} pseudo={ps:e}"),
                        vec![
                            format!("train.loss.lambda_cont_gt={gt:?}"),
                            format!("train.loss.lambda_cont_pseudo={ps:?}"),
                        ],
                    )
                })
                .collect()
        }
        Axis::Tau => [0.05, 0.07, 0.1]
            .into_iter()
            .map(|t| Cell::new(format!("tau={t}"), vec![format!("train.pairing.tau={t:?}")]))
            .collect(),
        Axis::AlphaBeta => [(1.0, 80.0), (3.0, 70.0), (10.0, 40.0)]
            .into_iter()
            .map(|(a, b)| {
                Cell::new(
                    format!("alpha={a} beta={b}"),
                    vec![
                        format!("train.pairing.alpha={a:?}"),
                        format!("train.pairing.beta={b:?}"),
                    ],
                )
            })
            .collect(),
        Axis::PatchSize => {
            let (pw, ph) = (base.train.pairing.patch_width, base.train.pairing.patch_height);
            let candidates = [(pw / 2, ph / 2), (pw, ph), (pw * 2, ph * 2), (pw * 4, ph * 4)];
            candidates
                .into_iter()
                .filter(|&(w, h)| {
                    let net = &base.net;
                    PatchGrid::new(net.image_width, net.image_height, w, h)
                        .map(|g| g.num_patches() > 1 && net.check_grid(&g).is_ok())
                        .unwrap_or(false)
                })
                .map(|(w, h)| {
                    Cell::new(
                        format!("{w}x{h}"),
                        vec![
                            format!("train.pairing.patch_width={w}"),
                            format!("train.pairing.patch_height={h}"),
                        ],
                    )
                })
                .collect()
        }
        Axis::Matching => ["pyramid", "exact"]
            .into_iter()
            .map(|s| Cell::new(s, vec![format!("train.pairing.strategy=\"{s}\"")]))
            .collect(),
        Axis::Annotation => [1.0, 0.75, 0.5, 0.25]
            .into_iter()
            .map(|f| {
                Cell::new(
                    format!("{}%", (f * 100.0) as u32),
                    vec![format!("annotation_fraction={f:?}")],
                )
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub axis: Axis,
    pub cell: String,
    pub seeds: Vec<u64>,
    pub mious: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.mious.iter().sum::<f64>() / self.mious.len().max(1) as f64
    }
}

/// Run every cell of `axis` once per seed and report final validation mIoU.
pub fn run_axis(
    axis: Axis,
    base: &RunConfig,
    data: &Benchmark,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, Error> {
    let cells = cells(axis, base);
    let mut rows: Vec<AblationRow> = cells
        .iter()
        .map(|c| AblationRow {
            axis,
            cell: c.name.clone(),
            seeds: seeds.to_vec(),
            mious: Vec::with_capacity(seeds.len()),
        })
        .collect();
    let val = &data.target_val;
    for &seed in seeds {
        let seeded = RunConfig { seed, ..base.clone() };
        let shared = if axis.shares_phase1() {
            let split = make_split(&seeded, data)?;
            let p1 = run_phase1(&seeded.net, &split, val, &seeded.train, seed)?;
            Some((split, p1))
        } else {
            None
        };
        for (cell, row) in cells.iter().zip(rows.iter_mut()) {
            let cfg = seeded.with_overrides(&cell.overrides)?;
            let params = match &shared {
                Some((_, p1)) if cell.phase1_only => p1.params.clone(),
                Some((split, p1)) => run_phase2(&p1.params, split, val, &cfg.train, seed)?.1.params,
                None => {
                    let split = make_split(&cfg, data)?;
                    let p1 = run_phase1(&cfg.net, &split, val, &cfg.train, seed)?;
                    if cell.phase1_only {
                        p1.params
                    } else {
                        run_phase2(&p1.params, &split, val, &cfg.train, seed)?.1.params
                    }
                }
            };
            let m = validation_miou(&params, val)?.unwrap_or(f64::NAN);
            log::info!("{axis} {} seed {seed}: mIoU {m:.4}", cell.name);
            row.mious.push(m);
        }
    }
    Ok(rows)
}

pub const ABLATION_HEADER: &str = "axis,cell,seeds,mean_miou,per_seed";

pub fn write_ablation_csv<W: Write>(w: &mut W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let per: Vec<String> = r.mious.iter().map(|m| format!("{m:.6}")).collect();
        writeln!(
            w,
            "{},{},{},{:.6},{}",
            r.axis,
            r.cell,
            seeds.join(";"),
            r.mean(),
            per.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_benchmark, BenchmarkConfig};
    use crate::segnet::SegNetConfig;

    #[test]
    fn axis_names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert!("nope".parse::<Axis>().is_err());
    }

    #[test]
    fn every_cell_override_resolves() {
        let base = RunConfig::default();
        for a in Axis::ALL {
            let cs = cells(a, &base);
            assert!(cs.len() >= 2, "{a}");
            for c in cs {
                base.with_overrides(&c.overrides).unwrap();
            }
        }
    }

    #[test]
    fn lambda_cells_scale_with_base() {
        let mut base = RunConfig::default();
        base.train.loss.lambda_cont_gt = 0.1;
        let cs = cells(Axis::Lambda, &base);
        let c = base.with_overrides(&cs[3].overrides).unwrap();
        assert_eq!(c.train.loss.lambda_cont_gt, 0.1);
        assert!((c.train.loss.lambda_cont_pseudo - 0.01).abs() < 1e-15);
    }

    #[test]
    fn patch_cells_skip_grids_the_net_cannot_resolve() {
        let mut base = RunConfig::default();
        base.train.pairing.patch_width = 8;
        base.train.pairing.patch_height = 8;
        let names: Vec<String> = cells(Axis::PatchSize, &base).into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["8x8", "16x16", "32x32"]);
    }

    #[test]
    fn tiny_sweep_writes_one_row_per_cell() {
        let base = RunConfig {
            net: SegNetConfig {
                channels: vec![4, 6, 8],
                hidden: 8,
                latent_dim: 6,
                ..SegNetConfig::default()
            },
            n_labeled: 1,
            ..RunConfig::default()
        }
        .with_overrides(&["train.max_iters=2".into(), "train.val_every=0".into()])
        .unwrap();
        let data = generate_benchmark(&BenchmarkConfig {
            num_source: 3,
            num_target: 3,
            num_target_val: 1,
            ..Default::default()
        });
        let rows = run_axis(Axis::Matching, &base, &data, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.mious.len() == 2 && r.mean().is_finite()));
        let mut out = Vec::new();
        write_ablation_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("matching,pyramid,1;2,"));
    }
}

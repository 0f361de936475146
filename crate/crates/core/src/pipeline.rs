//! End-to-end runs driven by a [`RunConfig`]: data, split, two-phase
//! training and the files a run leaves behind.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{
    derive_seed, generate_benchmark, load_dataset, partial_annotation, split_ssda, Benchmark, Domain,
    SsdaSplit, CLASS_NAMES,
};
use crate::eval::{evaluate, write_report_csv};
use crate::train::{run_two_phase, write_metrics_csv, PhaseOutcome, TwoPhaseOutcome};
use crate::Error;

const STREAM_SPLIT: u64 = 41;
const STREAM_ANNOTATION: u64 = 42;

/// Generate the benchmark, or load `source/`, `target/` and `val/` from
/// `data_dir` when set.
pub fn prepare_data(cfg: &RunConfig) -> Result<Benchmark, Error> {
    match &cfg.data_dir {
        None => Ok(generate_benchmark(&cfg.data)),
        Some(dir) => {
            let nc = cfg.net.num_classes;
            let load = |name: &str, domain| {
                let root = dir.join(name);
                load_dataset(&root.join("images"), &root.join("labels"), nc, domain)
            };
            Ok(Benchmark {
                source: load("source", Domain::Source)?,
                target: load("target", Domain::Target)?,
                target_val: load("val", Domain::Target)?,
            })
        }
    }
}

/// Seeded SSDA split; labeled targets are then partially annotated when
/// `annotation_fraction < 1`.
pub fn make_split(cfg: &RunConfig, data: &Benchmark) -> Result<SsdaSplit, Error> {
    let mut split = split_ssda(
        data.source.clone(),
        data.target.clone(),
        cfg.n_labeled,
        derive_seed(cfg.seed, STREAM_SPLIT, 0),
    )?;
    if cfg.annotation_fraction < 1.0 {
        let seed = cfg.seed;
        let frac = cfg.annotation_fraction;
        split.map_labeled(|s| {
            partial_annotation(&s.labels, frac, derive_seed(seed, STREAM_ANNOTATION, s.id as u64))
        })?;
    }
    Ok(split)
}

pub fn run(cfg: &RunConfig, data: &Benchmark) -> Result<TwoPhaseOutcome, Error> {
    let split = make_split(cfg, data)?;
    Ok(run_two_phase(&cfg.net, &split, &data.target_val, &cfg.train, cfg.seed)?)
}

pub fn metrics_csv_string(outcome: &PhaseOutcome) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome.log).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}

/// Write `config.toml`, per-phase checkpoints and metrics, pseudo labels
/// and the final validation report under `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    data: &Benchmark,
    outcome: &TwoPhaseOutcome,
) -> Result<(), Error> {
    cfg.write_resolved(dir)?;
    for (i, phase) in [&outcome.phase1, &outcome.phase2].into_iter().enumerate() {
        let n = i + 1;
        phase.params.save(&dir.join(format!("phase{n}.ckpt")))?;
        std::fs::write(dir.join(format!("metrics_phase{n}.csv")), metrics_csv_string(phase))?;
    }
    outcome.pseudo.save(&dir.join("pseudo_labels"))?;
    if !data.target_val.is_empty() {
        let (_, report) = evaluate(
            &outcome.phase2.params,
            data.target_val.iter().map(|s| (&s.image, &s.labels)),
        )?;
        let mut w = BufWriter::new(File::create(dir.join("report.csv"))?);
        write_report_csv(&mut w, &report, &CLASS_NAMES)?;
    }
    Ok(())
}

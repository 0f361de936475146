//! A short two-phase run on a reduced benchmark: phase 1 on the base
//! objective, pseudo labels, then a fresh network on the full objective.
//!
//! `cargo run --release --example two_phase_training`

use patchwise::config::RunConfig;
use patchwise::pipeline::{prepare_data, run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = RunConfig::default().with_overrides(&[
        "data.num_source=40".into(),
        "data.num_target=20".into(),
        "data.num_target_val=10".into(),
        "n_labeled=3".into(),
        "train.max_iters=150".into(),
        "train.val_every=50".into(),
        "train.base_lr=0.01".into(),
        "train.pairing.patch_width=8".into(),
        "train.pairing.patch_height=8".into(),
    ])?;
    let data = prepare_data(&cfg)?;
    let out = run(&cfg, &data)?;
    let gt: usize = out.phase2.log.iter().map(|r| r.gt_pairs).sum();
    let ps: usize = out.phase2.log.iter().map(|r| r.pseudo_pairs).sum();
    println!("phase 1 val mIoU {:.4}", out.phase1.final_val_miou().unwrap_or(f64::NAN));
    println!("phase 2 val mIoU {:.4}", out.phase2.final_val_miou().unwrap_or(f64::NAN));
    println!("{} pseudo-labelled scenes, {gt} GT pairs, {ps} pseudo pairs mined", out.pseudo.len());
    Ok(())
}

//! A miniature ablation sweep. The real sweeps use the benchmark config
//! and several seeds; this one only shows the shape of the output.

use patchwise::ablate::{cells, run_axis, write_ablation_csv, Axis};
use patchwise::config::RunConfig;
use patchwise::pipeline::prepare_data;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default().with_overrides(&[
        "data.num_source=12".into(),
        "data.num_target=8".into(),
        "data.num_target_val=4".into(),
        "n_labeled=2".into(),
        "train.max_iters=20".into(),
        "train.val_every=0".into(),
        "train.base_lr=0.01".into(),
        "train.pairing.patch_width=8".into(),
        "train.pairing.patch_height=8".into(),
    ])?;
    for axis in Axis::ALL {
        let names: Vec<String> = cells(axis, &cfg).into_iter().map(|c| c.name).collect();
        println!("{axis}: {}", names.join(" | "));
    }
    let data = prepare_data(&cfg)?;
    let rows = run_axis(Axis::LossTerms, &cfg, &data, &[0])?;
    let mut out = Vec::new();
    write_ablation_csv(&mut out, &rows)?;
    print!("{}", String::from_utf8(out)?);
    Ok(())
}

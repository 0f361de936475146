//! Generate the two-domain shape benchmark and write a few scenes as PNGs.
//!
//! `cargo run --release --example synthetic_benchmark -- /tmp/bench`

use std::path::PathBuf;

use patchwise::data::{generate_benchmark, save_scenes, BenchmarkConfig, CLASS_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "bench-preview".into()).into();
    let cfg = BenchmarkConfig {
        num_source: 8,
        num_target: 8,
        num_target_val: 4,
        ..Default::default()
    };
    let b = generate_benchmark(&cfg);

    let mut counts = [0usize; CLASS_NAMES.len()];
    for s in &b.source {
        for &v in s.labels.data() {
            counts[v as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    for (name, c) in CLASS_NAMES.iter().zip(counts) {
        println!("{name:>10}: {:5.1}% of source pixels", 100.0 * c as f64 / total as f64);
    }

    // same label layout, different appearance
    let (s, t) = (&b.source[0], &b.target[0]);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    println!("mean intensity source {:.3} target {:.3}", mean(s.image.data()), mean(t.image.data()));

    save_scenes(&out.join("source"), &b.source)?;
    save_scenes(&out.join("target"), &b.target)?;
    println!("wrote {}", out.display());
    Ok(())
}

//! Swap the low-frequency amplitude of a source scene with a target scene's
//! and check what survives.

use patchwise::data::{generate_scene, Domain, Style};
use patchwise::fda::{dft2, translate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let src = generate_scene(1, 0, Domain::Source, &Style::source());
    let tgt = generate_scene(2, 0, Domain::Target, &Style::target());
    let (h, w) = (src.image.shape()[1], src.image.shape()[2]);

    for ratio in [0.0, 0.01, 0.05, 0.1] {
        let out = translate(&src.image, &tgt.image, ratio)?;
        println!("window {ratio:<4}: max |out - source| = {:.4}", out.max_abs_diff(&src.image));
    }

    // the DC amplitude of each channel now comes from the target
    let out = translate(&src.image, &tgt.image, 0.05)?;
    for c in 0..3 {
        let plane = |t: &patchwise::autodiff::Tensor| t.data()[c * h * w..(c + 1) * h * w].to_vec();
        let dc = |p: Vec<f64>| dft2(&p, h, w).amplitude(0, 0);
        println!(
            "channel {c}: DC source {:.1} target {:.1} translated {:.1}",
            dc(plane(&src.image)),
            dc(plane(&tgt.image)),
            dc(plane(&out))
        );
    }
    Ok(())
}

//! Run the segmentation network on one scene: class probabilities plus the
//! patch-wise latent vectors of each projector stage.

use patchwise::data::{generate_scene, Domain, Style};
use patchwise::grid::PatchGrid;
use patchwise::segnet::{forward, init_params, SegNetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SegNetConfig::default();
    let params = init_params(&cfg, 0)?;
    println!("{} parameters, config hash {}", params.num_scalars(), &cfg.hash()[..12]);

    let scene = generate_scene(3, 0, Domain::Source, &Style::source());
    let grid = PatchGrid::new(cfg.image_width, cfg.image_height, 16, 16)?;
    let out = forward(&params, &scene.image, Some(&grid))?;
    println!("probabilities {:?}", out.probs.shape());
    let pixel0: Vec<String> = (0..cfg.num_classes)
        .map(|c| format!("{:.3}", out.probs.data()[c * cfg.image_width * cfg.image_height]))
        .collect();
    println!("pixel (0,0): [{}]", pixel0.join(", "));
    for (stage, lat) in cfg.latent_stages.iter().zip(&out.latents) {
        println!("stage {stage}: {} patches x {} dims", lat.len(), lat[0].len());
    }
    Ok(())
}

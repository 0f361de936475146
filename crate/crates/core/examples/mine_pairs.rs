//! Mine positive and negative patch pairs between a target and a source
//! scene, then print them in the pair-set line format.

use patchwise::data::{generate_scene, Domain, Style};
use patchwise::disparity::{disparity_matrix, MatchingStrategy};
use patchwise::grid::PatchGrid;
use patchwise::pairing::{mine_pairs, LabelSource, PairSet, DEFAULT_ALPHA, DEFAULT_BETA};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = generate_scene(7, 0, Domain::Target, &Style::target());
    let source = generate_scene(8, 1, Domain::Source, &Style::source());
    for (pw, ph) in [(32, 16), (16, 8), (8, 8)] {
        let grid = PatchGrid::new(128, 64, pw, ph)?;
        let d = disparity_matrix(&target.labels, &source.labels, &grid, 5, MatchingStrategy::Pyramid)?;
        let pairs = mine_pairs(&d, DEFAULT_ALPHA, DEFAULT_BETA, 4, 0)?;
        println!("{pw}x{ph}: {} patches, {} mined queries", grid.num_patches(), pairs.len());
        if pw == 8 {
            for m in pairs.iter().take(5) {
                println!("  {}", PairSet::from_mined(0, 1, m, LabelSource::GroundTruth).to_line());
            }
        }
    }
    Ok(())
}

//! Pyramid disparity between label patches, level by level.

use patchwise::disparity::{exact_disparity, pyramid_disparity_breakdown};
use patchwise::labels::{LabelMap, VOID};

fn patch(f: impl Fn(usize, usize) -> u8) -> LabelMap {
    let (w, h) = (32, 16);
    let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
    LabelMap::new(w, h, data).expect("valid patch")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let all0 = patch(|_, _| 0);
    let all1 = patch(|_, _| 1);
    let halves = patch(|x, _| if x < 16 { 0 } else { 1 });
    let mirrored = patch(|x, _| if x < 16 { 1 } else { 0 });
    let speckled = patch(|x, y| if (x + y) % 7 == 0 { VOID } else { 0 });

    let cases = [
        ("identical", &all0, &all0),
        ("disjoint classes", &all0, &all1),
        ("half vs all0", &halves, &all0),
        ("half vs mirrored", &halves, &mirrored),
        ("VOID speckle vs all0", &speckled, &all0),
    ];
    for (name, a, b) in cases {
        let d = pyramid_disparity_breakdown(a, b, 5)?;
        println!(
            "{name:<22} D={:6.2}  levels {:6.2} {:6.2} {:6.2}  exact {:6.2}",
            d.total,
            d.levels[0],
            d.levels[1],
            d.levels[2],
            exact_disparity(a, b)?
        );
    }
    Ok(())
}

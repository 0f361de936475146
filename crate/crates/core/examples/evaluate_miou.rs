//! Confusion-matrix mIoU, first on hand-made maps, then on an untrained
//! network.

use patchwise::data::{generate_benchmark, BenchmarkConfig, CLASS_NAMES};
use patchwise::eval::{evaluate, miou, write_report_csv, ConfusionMatrix};
use patchwise::labels::{LabelMap, VOID};
use patchwise::segnet::{init_params, SegNetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = LabelMap::new(4, 1, vec![0, 0, 1, VOID])?;
    let pred = LabelMap::new(4, 1, vec![0, 1, 1, 1])?;
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&pred, &gt)?;
    let r = miou(&cm)?;
    println!("per class {:?}, mIoU {:.4}", r.per_class, r.miou);

    let b = generate_benchmark(&BenchmarkConfig {
        num_source: 1,
        num_target: 1,
        num_target_val: 5,
        ..Default::default()
    });
    let params = init_params(&SegNetConfig::default(), 0)?;
    let (_, report) = evaluate(&params, b.target_val.iter().map(|s| (&s.image, &s.labels)))?;
    let mut out = Vec::new();
    write_report_csv(&mut out, &report, &CLASS_NAMES)?;
    print!("untrained network:\n{}", String::from_utf8(out)?);
    Ok(())
}

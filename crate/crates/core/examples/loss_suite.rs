//! Supervised cross-entropy, the entropy regulariser and pseudo labels on a
//! hand-made prediction.

use patchwise::autodiff::Tensor;
use patchwise::labels::{LabelMap, VOID};
use patchwise::losses::{cross_entropy, entropy_reg, pseudo_labels, total_loss, Components, LossWeights, Phase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (c, h, w) = (5, 2, 2);
    let uniform = Tensor::full(&[c, h, w], 1.0 / c as f64);
    let mut confident = Tensor::zeros(&[c, h, w]);
    for p in 0..h * w {
        confident.data_mut()[(p % c) * h * w + p] = 1.0;
    }
    let labels = LabelMap::new(w, h, vec![0, 1, VOID, 3])?;

    println!("uniform:   CE {:.4}  entropy penalty {:.6}", cross_entropy(&uniform, &labels)?, entropy_reg(&uniform, 2.0)?);
    println!("confident: CE {:.1e}  entropy penalty {:.3e}", cross_entropy(&confident, &labels)?, entropy_reg(&confident, 2.0)?);
    println!("pseudo labels of the confident map: {:?}", pseudo_labels(&confident)?.data());

    let terms = Components {
        sup_s: Some(0.8),
        sup_l: Some(0.6),
        ent: Some(6.7),
        self_train: Some(0.5),
        cont_gt: Some(2.1),
        cont_pseudo: Some(2.3),
    };
    let w = LossWeights::default();
    println!("base objective {:.4}", total_loss(&terms, &w, Phase::Base)?);
    println!("full objective {:.4}", total_loss(&terms, &w, Phase::Full)?);
    Ok(())
}

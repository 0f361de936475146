//! The patch contrastive loss in closed form and as a graph node, with its
//! behaviour under temperature and input rescaling.

use std::collections::HashMap;

use patchwise::autodiff::{grad_check, GraphBuilder, Tensor};
use patchwise::pairing::{contrastive_loss, contrastive_loss_node, Triplet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = vec![1.0, 0.2, -0.3];
    let pos = vec![0.9, 0.1, -0.2];
    let negs = vec![vec![-1.0, 0.5, 0.0], vec![0.0, -1.0, 1.0], vec![0.3, 0.3, 0.3]];

    for tau in [0.05, 0.07, 0.1, 1.0] {
        println!("tau {tau:<4}: loss {:.6}", contrastive_loss(&q, &pos, &negs, tau)?);
    }
    let scaled: Vec<f64> = q.iter().map(|v| v * 10.0).collect();
    println!("query scaled by 10: {:.6}", contrastive_loss(&scaled, &pos, &negs, 0.07)?);

    // same value through the graph, with gradients
    let mut b = GraphBuilder::new();
    let qs = b.leaf("q", &[1, 3])?;
    let cs = b.leaf("c", &[4, 3])?;
    let t = Triplet {
        query: 0,
        positive: 0,
        negatives: vec![1, 2, 3],
    };
    let loss = contrastive_loss_node(&mut b, qs, cs, &[t], 0.07)?;
    let graph = b.build(loss);
    let mut bind = HashMap::new();
    bind.insert("q".to_string(), Tensor::new(vec![1, 3], q.clone())?);
    let cands: Vec<f64> = pos.iter().chain(negs.iter().flatten()).copied().collect();
    bind.insert("c".to_string(), Tensor::new(vec![4, 3], cands)?);
    let (eval, _) = graph.backward(&bind)?;
    println!("graph loss {:.6}, grad check {:.2e}", eval.output().item(), grad_check(&graph, &bind, 1e-5)?);
    Ok(())
}

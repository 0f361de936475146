//! Record a tiny graph, run it forward and backward, and confirm the
//! gradients against central finite differences.

use std::collections::HashMap;

use patchwise::autodiff::{grad_check, GraphBuilder, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = GraphBuilder::new();
    let x = b.leaf("x", &[2, 3])?;
    let w = b.leaf("w", &[3, 2])?;
    let h = b.matmul(x, w)?;
    let h = b.relu(h);
    let p = b.softmax(h, 1)?;
    let lp = b.log(p, 1e-12);
    let loss = b.mean(lp);
    let loss = b.scale(loss, -1.0);
    let graph = b.build(loss);

    let mut bindings = HashMap::new();
    bindings.insert("x".to_string(), Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?);
    bindings.insert("w".to_string(), Tensor::new(vec![3, 2], vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.9])?);

    let (eval, grads) = graph.backward(&bindings)?;
    println!("loss = {:.6}", eval.output().item());
    for (name, g) in &grads {
        println!("d loss / d {name} = {:?}", g.data());
    }
    println!("max relative finite-difference error: {:.2e}", grad_check(&graph, &bindings, 1e-5)?);
    Ok(())
}

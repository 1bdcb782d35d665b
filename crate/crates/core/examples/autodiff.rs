//! The autodiff engine on its own: a two-layer MLP classifier, its analytic
//! gradient, and a central finite-difference check of every weight.

use mtp::{Graph, Tensor};

fn loss_and_grads(w1: &Tensor, w2: &Tensor, x: &Tensor, y: &[usize]) -> mtp::Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let a = g.leaf(w1.clone().with_requires_grad(true));
    let b = g.leaf(w2.clone().with_requires_grad(true));
    let h = g.matmul(xn, a)?;
    let h = g.gelu(h)?;
    let logits = g.matmul(h, b)?;
    let loss = g.cross_entropy(logits, y, usize::MAX)?;
    g.backward(loss)?;
    Ok((
        g.scalar(loss)?,
        g.grad(a).unwrap().to_vec(),
        g.grad(b).unwrap().to_vec(),
    ))
}

fn main() -> mtp::Result<()> {
    let pseudo = |i: usize, s: f64| ((i as f64 * 12.9898 + s).sin() * 43758.5453).fract() - 0.5;
    let w1 = Tensor::new(vec![4, 6], (0..24).map(|i| pseudo(i, 1.0)).collect())?;
    let w2 = Tensor::new(vec![6, 3], (0..18).map(|i| pseudo(i, 2.0)).collect())?;
    let x = Tensor::new(vec![5, 4], (0..20).map(|i| 2.0 * pseudo(i, 3.0)).collect())?;
    let y = [0, 2, 1, 1, 0];

    let (loss, g1, g2) = loss_and_grads(&w1, &w2, &x, &y)?;
    println!("loss = {loss:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &g1), (1, &g2)] {
        for i in 0..analytic.len() {
            let bump = |delta: f64| -> mtp::Result<f64> {
                let (mut a, mut b) = (w1.clone(), w2.clone());
                let t = if which == 0 { &mut a } else { &mut b };
                t.values_mut()[i] += delta;
                Ok(loss_and_grads(&a, &b, &x, &y)?.0)
            };
            let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    println!("max relative error over {} weights: {worst:.2e}", g1.len() + g2.len());
    Ok(())
}

//! Builds a small two-layer network on the tape, backpropagates, checks the
//! gradients against central differences and takes a few AdaGrad steps.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use lstc::tensor::{
    gradient_check, AdaGrad, GradCheckOptions, Graph, LearningRates, NodeId, ParamSet, Tensor, TensorError,
};

fn loss(g: &mut Graph, p: &ParamSet) -> Result<NodeId, TensorError> {
    let x = g.constant(Tensor::new(vec![4, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5, -2.0, 1.0, 0.3, 0.7, 0.7, -0.1])?);
    let w1 = g.param("hidden.weight", p.get("hidden.weight")?);
    let b1 = g.param("hidden.bias", p.get("hidden.bias")?);
    let w2 = g.param("out.weight", p.get("out.weight")?);
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h)?;
    let y = g.matmul(h, w2)?;
    let y = g.sigmoid(y)?;
    let y = g.clamp(y, 1e-7, 1.0 - 1e-7)?;
    let y = g.ln(y)?;
    let nll = g.mean(y)?;
    g.scale(nll, -1.0)
}

fn main() -> Result<(), TensorError> {
    let mut params = ParamSet::new();
    params.insert("hidden.weight", Tensor::from_fn(vec![3, 5], |i| ((i * 7 % 11) as f64 - 5.0) / 10.0));
    params.insert("hidden.bias", Tensor::from_fn(vec![5], |i| 0.05 + 0.03 * i as f64));
    params.insert("out.weight", Tensor::from_fn(vec![5, 1], |i| (i as f64 - 2.0) / 4.0));

    let report = gradient_check(&params, loss, &GradCheckOptions::default())?;
    for p in &report.params {
        println!("{:<14} max rel error {:.2e} over {} entries", p.name, p.max_rel_error, p.probed);
    }
    println!("gradient check {}", if report.passed() { "passed" } else { "FAILED" });

    let rates = LearningRates::new(0.1)?.with_group("out.", 0.3)?;
    let mut opt = AdaGrad::new(rates);
    for step in 0..=20 {
        let mut g = Graph::new();
        let out = loss(&mut g, &params)?;
        if step % 5 == 0 {
            println!("step {step:>2}: loss {:.5}", g.value(out).data()[0]);
        }
        let grads = g.backward(out)?;
        opt.step(&mut params, &grads)?;
    }
    Ok(())
}

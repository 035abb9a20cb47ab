//! Reverse-mode differentiation on the tape: a one-layer network's squared
//! error, its gradient, and a central finite-difference check.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use gmrl::ad::{Graph, Tensor, Var};

fn loss(g: &mut Graph<f64>, w: &Tensor<f64>) -> anyhow::Result<(Var, Var)> {
    let x = g.constant(Tensor::from_f64(2, 3, &[0.5, -1.0, 2.0, 1.5, 0.2, -0.7])?);
    let w = g.input(w.clone());
    let b = g.constant(Tensor::from_f64(1, 2, &[0.1, -0.2])?);
    let h = g.affine(x, w, b)?;
    let h = g.tanh(h);
    let sq = g.square(h);
    Ok((g.mean(sq), w))
}

fn main() -> anyhow::Result<()> {
    let w0 = [0.3, -0.1, 0.8, 0.05, -0.4, 0.2];
    let w = Tensor::from_f64(3, 2, &w0)?;
    let mut g = Graph::new();
    let (l, wv) = loss(&mut g, &w)?;
    let grads = g.backward(l)?;
    let analytic = grads.of(wv).expect("input receives a gradient");
    println!("loss {:.6}", g.value(l).item());

    let h = 1e-6;
    let eval = |data: &[f64]| -> anyhow::Result<f64> {
        let mut g = Graph::new();
        let (l, _) = loss(&mut g, &Tensor::from_f64(3, 2, data)?)?;
        Ok(g.value(l).item())
    };
    for (k, _) in w0.iter().enumerate() {
        let (mut up, mut down) = (w0, w0);
        up[k] += h;
        down[k] -= h;
        let numeric = (eval(&up)? - eval(&down)?) / (2.0 * h);
        let a = analytic.get(k / 2, k % 2);
        println!("dL/dw[{}][{}]  analytic {a:>11.8}  numeric {numeric:>11.8}", k / 2, k % 2);
    }
    Ok(())
}

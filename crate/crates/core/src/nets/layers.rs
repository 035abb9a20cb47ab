use rand::Rng;

use crate::ad::{Graph, ParamId, ParamStore, Scalar, Var};
use crate::error::Result;

/// How a forward pass binds parameters onto the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bind {
    /// Gradients flow into unfrozen parameters.
    Train,
    /// Every parameter enters as a constant.
    Frozen,
}

pub(crate) fn bind<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId, mode: Bind) -> Var {
    match mode {
        Bind::Train => g.param(store, id),
        Bind::Frozen => g.param_const(store, id),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Linear> {
        let w = store.add_glorot(&format!("{name}.w"), inputs, outputs, gain, rng)?;
        let b = store.add_zeros(&format!("{name}.b"), 1, outputs)?;
        Ok(Linear { w, b, inputs, outputs })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Bind) -> Result<Var> {
        let w = bind(g, store, self.w, mode);
        let b = bind(g, store, self.b, mode);
        g.affine(x, w, b)
    }
}

/// Two-layer perceptron: `in → hidden (tanh) → out`, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: (usize, usize, usize),
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Mlp> {
        let (i, h, o) = dims;
        Ok(Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), i, h, 1.0, rng)?,
            out: Linear::new(store, &format!("{name}.1"), h, o, out_gain, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Bind) -> Result<Var> {
        let h = self.hidden.forward(g, store, x, mode)?;
        let h = g.tanh(h);
        self.out.forward(g, store, h, mode)
    }
}

/// Gated recurrent cell with fused gate weights, gate order (reset, update, candidate):
///
/// ```text
/// r = σ(x Wxr + bxr + h Whr + bhr)
/// z = σ(x Wxz + bxz + h Whz + bhz)
/// n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Gru> {
        Ok(Gru {
            input: Linear::new(store, &format!("{name}.x"), inputs, 3 * hidden, 1.0, rng)?,
            recurrent: Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, 1.0, rng)?,
            hidden,
        })
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var, mode: Bind) -> Result<Var> {
        let n = self.hidden;
        let gx = self.input.forward(g, store, x, mode)?;
        let gh = self.recurrent.forward(g, store, h, mode)?;
        let rz_x = g.slice_cols(gx, 0, 2 * n)?;
        let rz_h = g.slice_cols(gh, 0, 2 * n)?;
        let rz = g.add(rz_x, rz_h)?;
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, n)?;
        let z = g.slice_cols(rz, n, n)?;
        let nx = g.slice_cols(gx, 2 * n, n)?;
        let nh = g.slice_cols(gh, 2 * n, n)?;
        let rn = g.mul(r, nh)?;
        let cand = g.add(nx, rn)?;
        let cand = g.tanh(cand);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, cand)?;
        let zd = g.mul(z, diff)?;
        g.add(cand, zd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Tensor;
    use rand::SeedableRng;

    #[test]
    fn gru_matches_scalar_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let gru = Gru::new(&mut store, "gru", 2, 3, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            for (k, v) in store.value_mut(id).data_mut().iter_mut().enumerate() {
                *v += 0.01 * k as f64;
            }
        }
        let x = [0.4, -0.7];
        let h = [0.1, -0.2, 0.3];
        let mut g = Graph::new();
        let xv = g.constant(Tensor::from_f64(1, 2, &x).unwrap());
        let hv = g.constant(Tensor::from_f64(1, 3, &h).unwrap());
        let out = gru.step(&mut g, &store, xv, hv, Bind::Frozen).unwrap();

        let wx = store.value(gru.input.w);
        let bx = store.value(gru.input.b);
        let wh = store.value(gru.recurrent.w);
        let bh = store.value(gru.recurrent.b);
        let lin = |j: usize| {
            let a: f64 = (0..2).map(|i| x[i] * wx.get(i, j)).sum::<f64>() + bx.get(0, j);
            let b: f64 = (0..3).map(|i| h[i] * wh.get(i, j)).sum::<f64>() + bh.get(0, j);
            (a, b)
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..3 {
            let (ar, br) = lin(j);
            let (az, bz) = lin(3 + j);
            let (an, bn) = lin(6 + j);
            let r = sig(ar + br);
            let z = sig(az + bz);
            let n = (an + r * bn).tanh();
            let expect = (1.0 - z) * n + z * h[j];
            assert!((g.value(out).get(0, j) - expect).abs() < 1e-14);
        }
    }
}

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use super::NetError;

/// Dense layer `y = x W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Linear {
    /// Uniform init scaled by fan-in (He) when a relu follows, Glorot otherwise.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_width: usize,
        out_width: usize,
        relu_follows: bool,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let bound = if relu_follows {
            (6.0 / in_width as f64).sqrt()
        } else {
            (6.0 / (in_width + out_width) as f64).sqrt()
        };
        let w: Vec<f64> = (0..in_width * out_width).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.add(format!("{name}.w"), Tensor::from_f64(vec![in_width, out_width], &w))?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(vec![out_width]))?;
        Ok(Self { weight, bias, in_width, out_width })
    }

    /// Applies the layer to the last axis of `x` (any rank ≥ 1).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, NetError> {
        let shape = g.shape(x).to_vec();
        let rows = shape[..shape.len().saturating_sub(1)].iter().product::<usize>();
        let flat = if shape.len() == 2 { x } else { g.reshape(x, vec![rows, *shape.last().unwrap_or(&0)])? };
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(flat, w)?;
        let y = g.add(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().expect("rank checked by matmul") = self.out_width;
            Ok(g.reshape(y, out_shape)?)
        }
    }
}

/// Stack of linear layers with relu between them, applied pointwise.
///
/// `final_relu` decides whether the last layer is also rectified (PointNet
/// trunks) or left linear (prediction heads).
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub layers: Vec<Linear>,
    pub final_relu: bool,
}

impl SharedMlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        final_relu: bool,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NetError::Widths(format!("{name}: {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let relu = i + 1 < n || final_relu;
                Linear::new(store, &format!("{name}.l{i}"), widths[i], widths[i + 1], relu, rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, final_relu })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().expect("at least one layer").out_width
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
    ) -> Result<Var, NetError> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i + 1 < n || self.final_relu {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

/// Shared MLP on every point followed by a max-pool over points.
///
/// `x` is `(N, d)` giving `(out,)`, or `(B, N, d)` giving `(B, out)`.
pub fn pointnet_encode<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    mlp: &SharedMlp,
    x: Var,
) -> Result<Var, NetError> {
    let rank = g.shape(x).len();
    if !(rank == 2 || rank == 3) || g.shape(x)[rank - 2] == 0 {
        return Err(NetError::Input(format!("pointnet_encode needs (N, d) or (B, N, d) with N ≥ 1, got {:?}", g.shape(x))));
    }
    let h = mlp.forward(g, store, x)?;
    Ok(g.max_reduce(h, rank - 2)?)
}

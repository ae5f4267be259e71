use rand::Rng;

use super::{dense_backward, dense_forward, init_layer, Activation, Layer, LayerCache};
use crate::error::{Error, Result};

/// A chain of dense layers. Parameters flatten layer by layer as
/// `weights (row-major), bias`; gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<LayerCache>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    format!("MLP layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// `sizes = [in, hidden..., out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!("MLP sizes {sizes:?} need input and output")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| init_layer(w[0], w[1], if i + 1 == n { output } else { hidden }, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths `[in, hidden..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("Mlp::assign", self.num_params(), params.len()));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&rest[..nw]);
            let nb = l.bias.len();
            l.bias.copy_from_slice(&rest[nw..nw + nb]);
            rest = &rest[nw + nb..];
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let (y, c) = dense_forward(&h, l)?;
            caches.push(c);
            h = y;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    /// Returns `(dL/dx, flat dL/dθ)`.
    pub fn backward(&self, dy: &[f64], cache: &MlpCache) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = dy.to_vec();
        for (i, (l, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let (dx, lg) = dense_backward(&g, c, l)?;
            let mut flat = lg.weights.data().to_vec();
            flat.extend_from_slice(&lg.bias);
            grads[i] = flat;
            g = dx;
        }
        Ok((g, grads.concat()))
    }
}

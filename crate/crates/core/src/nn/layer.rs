use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y = act(z)`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// One fully connected layer `y = act(W x + b)`, with `W` shaped (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("Layer bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// Uniform fan-in/fan-out initialization in `±sqrt(6 / (in + out))`, zero bias.
pub fn init_layer<R: Rng + ?Sized>(
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<Layer> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Config(format!(
            "layer dims must be >= 1, got {out_dim}x{in_dim}"
        )));
    }
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let data = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Layer::new(
        Matrix::from_vec(out_dim, in_dim, data)?,
        vec![0.0; out_dim],
        activation,
    )
}

/// Values saved by [`dense_forward`] for the matching backward call.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl LayerCache {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

pub fn dense_forward(x: &[f64], layer: &Layer) -> Result<(Vec<f64>, LayerCache)> {
    if x.len() != layer.in_dim() {
        return Err(Error::shape(
            format!("dense_forward ({}x{} layer)", layer.out_dim(), layer.in_dim()),
            format!("input of length {}", layer.in_dim()),
            format!("input of length {}", x.len()),
        ));
    }
    let mut y = layer.weights.matvec(x);
    for (yi, b) in y.iter_mut().zip(&layer.bias) {
        *yi = layer.activation.apply(*yi + b);
    }
    let cache = LayerCache {
        input: x.to_vec(),
        output: y.clone(),
    };
    Ok((y, cache))
}

pub fn dense_backward(
    dy: &[f64],
    cache: &LayerCache,
    layer: &Layer,
) -> Result<(Vec<f64>, LayerGrad)> {
    if cache.input.len() != layer.in_dim() || cache.output.len() != layer.out_dim() {
        return Err(Error::StaleCache(format!(
            "cache holds {}->{} but layer is {}->{}",
            cache.input.len(),
            cache.output.len(),
            layer.in_dim(),
            layer.out_dim()
        )));
    }
    if dy.len() != layer.out_dim() {
        return Err(Error::shape("dense_backward upstream", layer.out_dim(), dy.len()));
    }
    let dz: Vec<f64> = dy
        .iter()
        .zip(&cache.output)
        .map(|(g, y)| g * layer.activation.derivative(*y))
        .collect();
    let (rows, cols) = layer.weights.shape();
    let mut dw = Matrix::zeros(rows, cols);
    for (r, &g) in dz.iter().enumerate() {
        let row = &mut dw.data_mut()[r * cols..(r + 1) * cols];
        for (d, x) in row.iter_mut().zip(&cache.input) {
            *d = g * x;
        }
    }
    let dx = layer.weights.matvec_t(&dz);
    Ok((dx, LayerGrad { weights: dw, bias: dz }))
}

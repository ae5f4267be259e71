use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    rate: f64,
}

impl DropoutMask {
    /// The evaluation-mode mask: keeps everything, no scaling.
    pub fn all_keep(len: usize) -> Self {
        Self {
            keep: vec![true; len],
            rate: 0.0,
        }
    }

    pub fn from_keep(keep: Vec<bool>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { keep, rate })
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.keep.len() {
            return Err(Error::shape("dropout mask", self.keep.len(), x.len()));
        }
        let s = self.scale();
        Ok(x.iter()
            .zip(&self.keep)
            .map(|(v, &k)| if k { v * s } else { 0.0 })
            .collect())
    }

    /// The mask is linear, so the backward pass is the same map.
    pub fn backward(&self, dy: &[f64]) -> Result<Vec<f64>> {
        self.apply(dy)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

pub fn dropout_apply<R: Rng + ?Sized>(
    x: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, DropoutMask)> {
    check_rate(rate)?;
    let mask = match mode {
        Mode::Eval => DropoutMask::all_keep(x.len()),
        Mode::Train if rate == 0.0 => DropoutMask {
            keep: vec![true; x.len()],
            rate,
        },
        Mode::Train => DropoutMask {
            keep: (0..x.len()).map(|_| rng.random::<f64>() >= rate).collect(),
            rate,
        },
    };
    let y = mask.apply(x)?;
    Ok((y, mask))
}

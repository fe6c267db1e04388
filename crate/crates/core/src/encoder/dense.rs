use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W: out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Self {
        assert_eq!(weight.nrows(), bias.len(), "bias length must equal output size");
        Self {
            weight,
            bias,
            activation,
        }
    }

    /// Gaussian weights with variance `gain² / fan_in`, zero bias, values
    /// rounded to `f32` so a weight file reproduces them exactly.
    pub fn random(rng: &mut impl Rng, input: usize, output: usize, gain: f64, activation: Activation) -> Self {
        let std = gain / (input.max(1) as f64).sqrt();
        let weight = DMatrix::from_fn(output, input, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32 as f64
        });
        Self::new(weight, DVector::zeros(output), activation)
    }

    /// Square layer with orthonormal rows (an isometry), rounded to `f32`.
    pub fn random_orthogonal(rng: &mut impl Rng, size: usize, activation: Activation) -> Self {
        let g = DMatrix::from_fn(size, size, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        let q = g.qr().q();
        Self::new(q.map(|v| v as f32 as f64), DVector::zeros(size), activation)
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self::new(DMatrix::zeros(output, input), DVector::zeros(output), activation)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let act = self.activation;
        (&self.weight * x + &self.bias).map(|v| act.apply(v))
    }

    /// Row-wise forward over a batch stored one sample per row.
    pub fn forward_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let act = self.activation;
        let mut y = x * self.weight.transpose();
        for mut row in y.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.iter()) {
                *v = act.apply(*v + b);
            }
        }
        y
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.layers.iter().fold(x.clone(), |h, l| l.forward(&h))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    /// Zeroes the final layer so the MLP outputs exactly zero.
    pub fn zero_output(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }
}

//! Trainable layers with cached forward state for backpropagation.

use rand::Rng;

use super::conv::{conv2d_backward, conv2d_forward, tconv2d_backward, tconv2d_forward, ConvGeom};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// A named parameter (or running-statistics buffer) with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let n = data.len();
        Self {
            name: name.into(),
            shape,
            data,
            grad: vec![0.0; n],
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Kaiming-uniform values for a layer feeding an activation of negative slope `a`.
pub fn kaiming_uniform<R: Rng>(rng: &mut R, len: usize, fan_in: usize, a: f64) -> Vec<f64> {
    let bound = (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Forward/backward interface shared by layers and whole networks.
pub trait Module {
    /// `train` selects batch statistics (and updates running ones) in batch norm.
    fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4>;
    /// Accumulates parameter gradients and returns the input gradient. Uses the
    /// state cached by the latest forward call.
    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4>;
    /// Trainable parameters in a fixed order.
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn cached<'a>(cache: &'a Option<Tensor4>, what: &str) -> Result<&'a Tensor4> {
    cache
        .as_ref()
        .ok_or_else(|| Error::Shape(format!("{what}: backward called before forward")))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor4>,
}

impl Conv2d {
    pub fn new<R: Rng>(prefix: &str, geom: ConvGeom, neg_slope: f64, rng: &mut R) -> Self {
        let k = geom.kernel;
        let fan_in = geom.in_channels * k * k;
        let w = kaiming_uniform(rng, geom.weight_len(), fan_in, neg_slope);
        Self {
            geom,
            weight: Param::new(
                format!("{prefix}.weight"),
                vec![geom.out_channels, geom.in_channels, k, k],
                w,
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![geom.out_channels]),
            input: None,
        }
    }
}

impl Module for Conv2d {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Result<Tensor4> {
        let y = conv2d_forward(x, &self.weight.data, &self.bias.data, &self.geom)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = cached(&self.input, "conv2d")?;
        let (dx, dw, db) = conv2d_backward(x, &self.weight.data, &self.geom, dy)?;
        self.weight.grad.iter_mut().zip(&dw).for_each(|(a, v)| *a += v);
        self.bias.grad.iter_mut().zip(&db).for_each(|(a, v)| *a += v);
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor4>,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(prefix: &str, geom: ConvGeom, neg_slope: f64, rng: &mut R) -> Self {
        let k = geom.kernel;
        // Each output pixel receives (k / stride)^2 taps per input channel.
        let per_axis = k.div_ceil(geom.stride).max(1);
        let fan_in = geom.in_channels * per_axis * per_axis;
        let w = kaiming_uniform(rng, geom.weight_len(), fan_in, neg_slope);
        Self {
            geom,
            weight: Param::new(
                format!("{prefix}.weight"),
                vec![geom.in_channels, geom.out_channels, k, k],
                w,
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![geom.out_channels]),
            input: None,
        }
    }
}

impl Module for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Result<Tensor4> {
        let y = tconv2d_forward(x, &self.weight.data, &self.bias.data, &self.geom)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = cached(&self.input, "tconv2d")?;
        let (dx, dw, db) = tconv2d_backward(x, &self.weight.data, &self.geom, dy)?;
        self.weight.grad.iter_mut().zip(&dw).for_each(|(a, v)| *a += v);
        self.bias.grad.iter_mut().zip(&db).for_each(|(a, v)| *a += v);
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `max(x, slope * x)`; `slope = 0` gives ReLU.
#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    input: Option<Tensor4>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, input: None }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }
}

pub fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

impl Module for LeakyRelu {
    fn forward(&mut self, x: &Tensor4, _train: bool) -> Result<Tensor4> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = leaky_relu(*v, self.slope));
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let x = cached(&self.input, "activation")?;
        x.same_dims(dy)?;
        let mut dx = dy.clone();
        for (d, v) in dx.data.iter_mut().zip(&x.data) {
            if *v <= 0.0 {
                *d *= self.slope;
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Per-channel batch normalization with affine parameters and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Normalized input, per-channel `1/sqrt(var + eps)` and the mode of the last forward.
    cache: Option<(Tensor4, Vec<f64>, bool)>,
    prefix: String,
}

impl BatchNorm2d {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::zeros(format!("{prefix}.beta"), vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
            prefix: prefix.to_string(),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

impl Module for BatchNorm2d {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let [n, c, h, w] = x.dims;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, input {c}",
                self.channels()
            )));
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut s = 0.0;
                for i in 0..n {
                    s += x.sample(i)[ch * plane..][..plane].iter().sum::<f64>();
                }
                let mean = s / count;
                let mut q = 0.0;
                for i in 0..n {
                    q += x.sample(i)[ch * plane..][..plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = q / count;
                let unbiased = if count > 1.0 { q / (count - 1.0) } else { var };
                self.running_mean[ch] = BN_MOMENTUM * self.running_mean[ch] + (1.0 - BN_MOMENTUM) * mean;
                self.running_var[ch] = BN_MOMENTUM * self.running_var[ch] + (1.0 - BN_MOMENTUM) * unbiased;
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for v in &mut xhat.data[off..off + plane] {
                    *v = (*v - mean) * is;
                }
            }
        }
        let mut y = xhat.clone();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (g, b) = (self.gamma.data[ch], self.beta.data[ch]);
                y.data[off..off + plane].iter_mut().for_each(|v| *v = g * *v + b);
            }
        }
        self.cache = Some((xhat, inv_std, train));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let (xhat, inv_std, train) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Shape("batch norm: backward called before forward".into()))?;
        xhat.same_dims(dy)?;
        let [n, c, h, w] = dy.dims;
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut dx = dy.clone();
        for ch in 0..c {
            let g = self.gamma.data[ch];
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for (d, xh) in dy.data[off..off + plane].iter().zip(&xhat.data[off..off + plane]) {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                }
            }
            self.beta.grad[ch] += sum_dy;
            self.gamma.grad[ch] += sum_dy_xhat;
            let is = inv_std[ch];
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for (k, d) in dx.data[off..off + plane].iter_mut().enumerate() {
                    let dxhat = *d * g;
                    // Eval-mode statistics are constants.
                    *d = if *train {
                        is * (dxhat - (g * sum_dy + g * sum_dy_xhat * xhat.data[off + k]) / count)
                    } else {
                        is * dxhat
                    };
                }
            }
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

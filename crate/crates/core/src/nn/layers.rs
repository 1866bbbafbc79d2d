use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Square-kernel convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("{name}: kernel {kernel} must be odd")));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::config(format!("{name}: stride must be 1 or 2, got {stride}")));
        }
        let weight = store.add_he(
            format!("{name}.weight"),
            Shape::new(out_channels, in_channels, kernel, kernel)?,
            in_channels * kernel * kernel,
        );
        let bias = store.add_zeros(format!("{name}.bias"), Shape::new(1, out_channels, 1, 1)?);
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let c = tape.shape(x).c;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "{} expects {} input channels, got {}",
                store.name(self.weight),
                self.in_channels,
                tape.shape(x)
            )));
        }
        let w = tape.param(self.weight, store.get(self.weight));
        let b = tape.param(self.bias, store.get(self.bias));
        tape.conv2d(x, w, b, self.stride)
    }
}

/// 3x3 convolution block with a rectifier; with `residual` set it is the
/// two-convolution basic block with an identity or 1x1 projection shortcut.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub residual: bool,
    pub conv1: Conv2d,
    pub conv2: Option<Conv2d>,
    pub projection: Option<Conv2d>,
}

impl ConvBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        residual: bool,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), in_channels, out_channels, 3, stride)?;
        let (conv2, projection) = if residual {
            let conv2 = Conv2d::new(store, &format!("{name}.conv2"), out_channels, out_channels, 3, 1)?;
            let proj = (stride != 1 || in_channels != out_channels)
                .then(|| Conv2d::new(store, &format!("{name}.proj"), in_channels, out_channels, 1, stride))
                .transpose()?;
            (Some(conv2), proj)
        } else {
            (None, None)
        };
        Ok(ConvBlock {
            in_channels,
            out_channels,
            stride,
            residual,
            conv1,
            conv2,
            projection,
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.conv1.output_hw(h, w)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(store, tape, x)?;
        let Some(conv2) = &self.conv2 else {
            return Ok(tape.relu(h));
        };
        let h = tape.relu(h);
        let h = conv2.forward(store, tape, h)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(store, tape, x)?,
            None => x,
        };
        let sum = tape.add(h, shortcut)?;
        Ok(tape.relu(sum))
    }

    /// Evaluates the block on a plain tensor.
    pub fn forward_tensor<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = self.forward(store, &mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.conv1.weight, self.conv1.bias];
        for c in self.conv2.iter().chain(self.projection.iter()) {
            out.push(c.weight);
            out.push(c.bias);
        }
        out
    }
}

/// Fully-connected layer `y = W v + b` with `W` of shape `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        let weight = store.add_he(
            format!("{name}.weight"),
            Shape::new(out_features, in_features, 1, 1)?,
            in_features,
        );
        let bias = store.add_zeros(format!("{name}.bias"), Shape::new(1, out_features, 1, 1)?);
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, v: Var) -> Result<Var> {
        let features = tape.shape(v).sample_len();
        if features != self.in_features {
            return Err(Error::shape(format!(
                "{} expects {} features per sample, got {} (input {})",
                store.name(self.weight),
                self.in_features,
                features,
                tape.shape(v)
            )));
        }
        let w = tape.param(self.weight, store.get(self.weight));
        let b = tape.param(self.bias, store.get(self.bias));
        tape.linear(v, w, b, self.out_features)
    }

    pub fn forward_tensor<T: Scalar>(&self, store: &ParamStore<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(v.clone());
        let y = self.forward(store, &mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

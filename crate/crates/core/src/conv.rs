//! Tensors, convolution layer geometry, the reference convolution and the
//! patch algebra used by every strategy.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeError {
    DataLength { expected: usize, actual: usize },
    ZeroDimension(&'static str),
    KernelLargerThanInput { axis: &'static str, input: usize, kernel: usize },
    InputMismatch { expected: (usize, usize, usize), actual: (usize, usize, usize) },
    KernelCount { expected: usize, actual: usize },
    KernelMismatch { index: usize, expected: (usize, usize, usize), actual: (usize, usize, usize) },
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeError::DataLength { expected, actual } => {
                write!(f, "tensor data has {actual} values, expected {expected}")
            }
            ShapeError::ZeroDimension(name) => write!(f, "{name} must be at least 1"),
            ShapeError::KernelLargerThanInput { axis, input, kernel } => {
                write!(f, "kernel {axis} {kernel} exceeds padded input {axis} {input}")
            }
            ShapeError::InputMismatch { expected, actual } => {
                write!(f, "input is {actual:?}, layer expects {expected:?}")
            }
            ShapeError::KernelCount { expected, actual } => {
                write!(f, "got {actual} kernels, layer expects {expected}")
            }
            ShapeError::KernelMismatch { index, expected, actual } => {
                write!(f, "kernel {index} is {actual:?}, layer expects {expected:?}")
            }
        }
    }
}

impl std::error::Error for ShapeError {}

/// Dense 3D tensor stored channel-major: `c`, then `h`, then `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(ShapeError::DataLength { expected, actual: data.len() });
        }
        Ok(Tensor3 { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor3 { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(c < self.channels && h < self.height && w < self.width);
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, value: f64) {
        let idx = self.offset(c, h, w);
        self.data[idx] = value;
    }

    /// Zero-fills the borders. The result is what a [`LayerSpec`] describes.
    pub fn pad(&self, padding: Padding) -> Tensor3 {
        let height = self.height + padding.top + padding.bottom;
        let width = self.width + padding.left + padding.right;
        Tensor3::from_fn(self.channels, height, width, |c, h, w| {
            let inside =
                h >= padding.top && h < padding.top + self.height && w >= padding.left && w < padding.left + self.width;
            if inside {
                self.get(c, h - padding.top, w - padding.left)
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Convolution hyperparameters. `h_in`/`w_in` always describe the padded
/// input; `padding` is kept only as a record of how it was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub n_kernels: usize,
    pub h_k: usize,
    pub w_k: usize,
    pub s_h: usize,
    pub s_w: usize,
    #[serde(default)]
    pub padding: Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputDims {
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl LayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        h_in: usize,
        w_in: usize,
        n_kernels: usize,
        h_k: usize,
        w_k: usize,
        s_h: usize,
        s_w: usize,
    ) -> Result<Self, ShapeError> {
        let layer = LayerSpec { c_in, h_in, w_in, n_kernels, h_k, w_k, s_h, s_w, padding: Padding::default() };
        layer.validate()?;
        Ok(layer)
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        for (name, v) in [
            ("c_in", self.c_in),
            ("h_in", self.h_in),
            ("w_in", self.w_in),
            ("n_kernels", self.n_kernels),
            ("h_k", self.h_k),
            ("w_k", self.w_k),
            ("s_h", self.s_h),
            ("s_w", self.s_w),
        ] {
            if v == 0 {
                return Err(ShapeError::ZeroDimension(name));
            }
        }
        if self.h_k > self.h_in {
            return Err(ShapeError::KernelLargerThanInput { axis: "height", input: self.h_in, kernel: self.h_k });
        }
        if self.w_k > self.w_in {
            return Err(ShapeError::KernelLargerThanInput { axis: "width", input: self.w_in, kernel: self.w_k });
        }
        Ok(())
    }

    pub fn output_dims(&self) -> OutputDims {
        OutputDims {
            c_out: self.n_kernels,
            h_out: (self.h_in - self.h_k) / self.s_h + 1,
            w_out: (self.w_in - self.w_k) / self.s_w + 1,
        }
    }

    pub fn c_out(&self) -> usize {
        self.n_kernels
    }

    pub fn h_out(&self) -> usize {
        self.output_dims().h_out
    }

    pub fn w_out(&self) -> usize {
        self.output_dims().w_out
    }

    /// MAC operations needed for one output scalar.
    pub fn nb_op_value(&self) -> usize {
        self.c_in * self.h_k * self.w_k
    }

    /// Scalar elements in one kernel.
    pub fn kernel_elements(&self) -> usize {
        self.nb_op_value()
    }

    pub fn num_pixels(&self) -> usize {
        self.h_in * self.w_in
    }

    pub fn num_patches(&self) -> usize {
        let d = self.output_dims();
        d.h_out * d.w_out
    }

    pub fn input_elements(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn output_elements(&self) -> usize {
        let d = self.output_dims();
        d.c_out * d.h_out * d.w_out
    }

    pub fn patch_set(&self) -> PatchSet {
        let d = self.output_dims();
        PatchSet { h_out: d.h_out, w_out: d.w_out }
    }

    pub fn patch_from_linear(&self, id: usize) -> Patch {
        let w_out = self.w_out();
        Patch { i: id / w_out, j: id % w_out }
    }

    pub fn pixel_from_linear(&self, id: usize) -> PixelId {
        PixelId { h: id / self.w_in, w: id % self.w_in }
    }

    /// Pixels read by `patch`, in row-major order.
    pub fn patch_footprint(&self, patch: Patch) -> Vec<PixelId> {
        let h0 = self.s_h * patch.i;
        let w0 = self.s_w * patch.j;
        let mut out = Vec::with_capacity(self.h_k * self.w_k);
        for h in h0..h0 + self.h_k {
            for w in w0..w0 + self.w_k {
                out.push(PixelId { h, w });
            }
        }
        out
    }

    pub fn contains_patch(&self, patch: Patch) -> bool {
        let d = self.output_dims();
        patch.i < d.h_out && patch.j < d.w_out
    }
}

/// A spatial input position; carries all `c_in` channel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelId {
    pub h: usize,
    pub w: usize,
}

impl PixelId {
    pub fn linear(&self, layer: &LayerSpec) -> usize {
        self.h * layer.w_in + self.w
    }
}

/// The input slice that produces output position `(i, j)` for every output
/// channel. Ordering is row-major, matching [`Patch::linear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Patch {
    pub i: usize,
    pub j: usize,
}

impl Patch {
    pub fn new(i: usize, j: usize) -> Self {
        Patch { i, j }
    }

    pub fn linear(&self, layer: &LayerSpec) -> usize {
        self.i * layer.w_out() + self.j
    }
}

impl fmt::Display for Patch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{},{}", self.i, self.j)
    }
}

/// Every patch of a layer, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSet {
    pub h_out: usize,
    pub w_out: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Patch> + '_ {
        let w_out = self.w_out;
        (0..self.len()).map(move |id| Patch { i: id / w_out, j: id % w_out })
    }
}

pub fn output_dims(layer: &LayerSpec) -> OutputDims {
    layer.output_dims()
}

pub fn check_operands(input: &Tensor3, kernels: &[Tensor3], layer: &LayerSpec) -> Result<(), ShapeError> {
    let expected = (layer.c_in, layer.h_in, layer.w_in);
    if input.dims() != expected {
        return Err(ShapeError::InputMismatch { expected, actual: input.dims() });
    }
    if kernels.len() != layer.n_kernels {
        return Err(ShapeError::KernelCount { expected: layer.n_kernels, actual: kernels.len() });
    }
    let kdims = (layer.c_in, layer.h_k, layer.w_k);
    for (index, k) in kernels.iter().enumerate() {
        if k.dims() != kdims {
            return Err(ShapeError::KernelMismatch { index, expected: kdims, actual: k.dims() });
        }
    }
    Ok(())
}

/// One output scalar `O[l, i, j]`.
pub fn output_value(input: &Tensor3, kernel: &Tensor3, layer: &LayerSpec, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..layer.c_in {
        for h in 0..layer.h_k {
            for w in 0..layer.w_k {
                acc += input.get(c, i * layer.s_h + h, j * layer.s_w + w) * kernel.get(c, h, w);
            }
        }
    }
    acc
}

/// Direct cross-correlation over the pre-padded input.
pub fn reference_convolution(input: &Tensor3, kernels: &[Tensor3], layer: &LayerSpec) -> Result<Tensor3, ShapeError> {
    check_operands(input, kernels, layer)?;
    let d = layer.output_dims();
    Ok(Tensor3::from_fn(d.c_out, d.h_out, d.w_out, |l, i, j| output_value(input, &kernels[l], layer, i, j)))
}

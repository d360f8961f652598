//! Layer vocabulary: shape rules, forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Per-sample feature shape flowing between layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureShape {
    Flat(usize),
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl FeatureShape {
    pub fn flat_len(&self) -> usize {
        match *self {
            FeatureShape::Flat(d) => d,
            FeatureShape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    /// Tensor dims for a batch of `b` samples of this shape.
    pub fn batched_dims(&self, b: usize) -> Vec<usize> {
        match *self {
            FeatureShape::Flat(d) => vec![b, d],
            FeatureShape::Spatial {
                channels,
                height,
                width,
            } => vec![b, channels, height, width],
        }
    }

    pub fn of_batch(t: &Tensor) -> Result<FeatureShape> {
        match t.shape() {
            [_, d] => Ok(FeatureShape::Flat(*d)),
            [_, c, h, w] => Ok(FeatureShape::Spatial {
                channels: *c,
                height: *h,
                width: *w,
            }),
            other => Err(Error::Input(format!(
                "expected batched tensor of rank 2 or 4, got shape {other:?}"
            ))),
        }
    }

    /// Feature axis size: width for flat features, channels for spatial ones.
    pub fn feature_axis(&self) -> usize {
        match *self {
            FeatureShape::Flat(d) => d,
            FeatureShape::Spatial { channels, .. } => channels,
        }
    }
}

impl std::fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            FeatureShape::Flat(d) => write!(f, "[{d}]"),
            FeatureShape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "[{channels}x{height}x{width}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    ReLU,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool2d {
        window: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Exact number of scalar parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => kernel * kernel * in_channels * out_channels + out_channels,
            _ => 0,
        }
    }

    /// Fan-in used for initialization scaling.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Some(vec![in_dim, out_dim]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel, kernel]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { out_dim, .. } => Some(vec![out_dim]),
            LayerSpec::Conv2d { out_channels, .. } => Some(vec![out_channels]),
            _ => None,
        }
    }

    fn validate(&self, layer: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("layer {layer}: {msg}")));
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return bad(format!("Dense dims must be positive, got {in_dim}x{out_dim}"));
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return bad("Conv2d channels must be positive".into());
                }
                if kernel != 1 && kernel != 3 {
                    return bad(format!("Conv2d kernel must be 1 or 3, got {kernel}"));
                }
                if stride == 0 {
                    return bad("Conv2d stride must be positive".into());
                }
            }
            LayerSpec::AvgPool2d { window } => {
                if window == 0 {
                    return bad("AvgPool2d window must be positive".into());
                }
            }
            LayerSpec::ReLU | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Output feature shape given the input shape, or a shape error naming
    /// this layer.
    pub fn out_shape(&self, layer: usize, input: &FeatureShape) -> Result<FeatureShape> {
        self.validate(layer)?;
        let mismatch = |expected: String| Error::Shape {
            layer,
            expected,
            got: input.to_string(),
        };
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => match *input {
                FeatureShape::Flat(d) if d == in_dim => Ok(FeatureShape::Flat(out_dim)),
                _ => Err(mismatch(format!("[{in_dim}] (flat)"))),
            },
            LayerSpec::ReLU => Ok(input.clone()),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match *input {
                FeatureShape::Spatial {
                    channels,
                    height,
                    width,
                } if channels == in_channels => {
                    let h_in = height + 2 * padding;
                    let w_in = width + 2 * padding;
                    if h_in < kernel || w_in < kernel {
                        return Err(mismatch(format!("spatial extent >= {kernel}")));
                    }
                    Ok(FeatureShape::Spatial {
                        channels: out_channels,
                        height: (h_in - kernel) / stride + 1,
                        width: (w_in - kernel) / stride + 1,
                    })
                }
                _ => Err(mismatch(format!("[{in_channels}xHxW] (spatial)"))),
            },
            LayerSpec::AvgPool2d { window } => match *input {
                FeatureShape::Spatial {
                    channels,
                    height,
                    width,
                } if height >= window && width >= window => Ok(FeatureShape::Spatial {
                    channels,
                    height: height / window,
                    width: width / window,
                }),
                _ => Err(mismatch(format!("spatial extent >= {window}"))),
            },
            LayerSpec::Flatten => Ok(FeatureShape::Flat(input.flat_len())),
        }
    }
}

/// Run the shape rules over a whole layer sequence.
pub fn check_spec(spec: &[LayerSpec], input: &FeatureShape) -> Result<FeatureShape> {
    let mut shape = input.clone();
    for (i, layer) in spec.iter().enumerate() {
        shape = layer.out_shape(i, &shape)?;
    }
    Ok(shape)
}

/// Exact scalar parameter count of a layer sequence.
pub fn count_params(spec: &[LayerSpec]) -> usize {
    spec.iter().map(LayerSpec::param_count).sum()
}

pub(crate) struct LayerIo<'a> {
    pub weights: Option<&'a Tensor>,
    pub bias: Option<&'a Tensor>,
}

/// Forward one layer for a whole batch.
pub(crate) fn layer_forward(
    layer_idx: usize,
    spec: &LayerSpec,
    io: &LayerIo,
    x: &Tensor,
) -> Result<Tensor> {
    let in_shape = FeatureShape::of_batch(x)?;
    let out_shape = spec.out_shape(layer_idx, &in_shape)?;
    let b = x.batch();
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            let w = io.weights.expect("dense weights").values();
            let bias = io.bias.expect("dense bias").values();
            let xs = x.values();
            let mut out = vec![0.0; b * out_dim];
            for s in 0..b {
                let xrow = &xs[s * in_dim..(s + 1) * in_dim];
                let orow = &mut out[s * out_dim..(s + 1) * out_dim];
                orow.copy_from_slice(bias);
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * out_dim..(i + 1) * out_dim];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
            Tensor::new(out_shape.batched_dims(b), out)
        }
        LayerSpec::ReLU => {
            let mut t = x.clone();
            for v in t.values_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Ok(t)
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (h, w_in) = match in_shape {
                FeatureShape::Spatial { height, width, .. } => (height, width),
                _ => unreachable!("shape checked above"),
            };
            let (oh, ow) = match out_shape {
                FeatureShape::Spatial { height, width, .. } => (height, width),
                _ => unreachable!(),
            };
            let weights = io.weights.expect("conv weights").values();
            let bias = io.bias.expect("conv bias").values();
            let xs = x.values();
            let mut out = vec![0.0; b * out_channels * oh * ow];
            let in_stride = in_channels * h * w_in;
            let out_stride = out_channels * oh * ow;
            for s in 0..b {
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..in_channels {
                                for ky in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy as usize >= h {
                                        continue;
                                    }
                                    for kx in 0..kernel {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix as usize >= w_in {
                                            continue;
                                        }
                                        let xi = s * in_stride
                                            + ic * h * w_in
                                            + iy as usize * w_in
                                            + ix as usize;
                                        let wi = ((oc * in_channels + ic) * kernel + ky) * kernel
                                            + kx;
                                        acc += xs[xi] * weights[wi];
                                    }
                                }
                            }
                            out[s * out_stride + oc * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
            }
            Tensor::new(out_shape.batched_dims(b), out)
        }
        LayerSpec::AvgPool2d { window } => {
            let (c, h, w_in) = match in_shape {
                FeatureShape::Spatial {
                    channels,
                    height,
                    width,
                } => (channels, height, width),
                _ => unreachable!(),
            };
            let (oh, ow) = (h / window, w_in / window);
            let xs = x.values();
            let mut out = vec![0.0; b * c * oh * ow];
            let norm = 1.0 / (window * window) as f64;
            for s in 0..b {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..window {
                                for kx in 0..window {
                                    acc += xs[s * c * h * w_in
                                        + ch * h * w_in
                                        + (oy * window + ky) * w_in
                                        + (ox * window + kx)];
                                }
                            }
                            out[s * c * oh * ow + ch * oh * ow + oy * ow + ox] = acc * norm;
                        }
                    }
                }
            }
            Tensor::new(out_shape.batched_dims(b), out)
        }
        LayerSpec::Flatten => x.clone().reshape(out_shape.batched_dims(b)),
    }
}

pub(crate) struct LayerGrads {
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Tensor>,
    pub d_input: Tensor,
}

/// Backward one layer: parameter gradients (when `want_param_grads`) and the
/// gradient with respect to the layer input.
pub(crate) fn layer_backward(
    spec: &LayerSpec,
    io: &LayerIo,
    x: &Tensor,
    d_out: &Tensor,
    want_param_grads: bool,
) -> Result<LayerGrads> {
    let b = x.batch();
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            let w = io.weights.expect("dense weights").values();
            let xs = x.values();
            let dy = d_out.values();
            let mut d_input = vec![0.0; b * in_dim];
            for s in 0..b {
                let dyrow = &dy[s * out_dim..(s + 1) * out_dim];
                let dxrow = &mut d_input[s * in_dim..(s + 1) * in_dim];
                for (i, dx) in dxrow.iter_mut().enumerate() {
                    let wrow = &w[i * out_dim..(i + 1) * out_dim];
                    let mut acc = 0.0;
                    for (dyv, wv) in dyrow.iter().zip(wrow) {
                        acc += dyv * wv;
                    }
                    *dx = acc;
                }
            }
            let (d_weights, d_bias) = if want_param_grads {
                let mut dw = vec![0.0; in_dim * out_dim];
                let mut db = vec![0.0; out_dim];
                for s in 0..b {
                    let xrow = &xs[s * in_dim..(s + 1) * in_dim];
                    let dyrow = &dy[s * out_dim..(s + 1) * out_dim];
                    for (i, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let dwrow = &mut dw[i * out_dim..(i + 1) * out_dim];
                        for (dwv, dyv) in dwrow.iter_mut().zip(dyrow) {
                            *dwv += xv * dyv;
                        }
                    }
                    for (dbv, dyv) in db.iter_mut().zip(dyrow) {
                        *dbv += dyv;
                    }
                }
                (
                    Some(Tensor::new(vec![in_dim, out_dim], dw)?),
                    Some(Tensor::new(vec![out_dim], db)?),
                )
            } else {
                (None, None)
            };
            Ok(LayerGrads {
                d_weights,
                d_bias,
                d_input: Tensor::new(x.shape().to_vec(), d_input)?,
            })
        }
        LayerSpec::ReLU => {
            let mut d_input = d_out.clone();
            for (dv, &xv) in d_input.values_mut().iter_mut().zip(x.values()) {
                if xv <= 0.0 {
                    *dv = 0.0;
                }
            }
            Ok(LayerGrads {
                d_weights: None,
                d_bias: None,
                d_input,
            })
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (h, w_in) = match FeatureShape::of_batch(x)? {
                FeatureShape::Spatial { height, width, .. } => (height, width),
                _ => unreachable!(),
            };
            let (oh, ow) = match FeatureShape::of_batch(d_out)? {
                FeatureShape::Spatial { height, width, .. } => (height, width),
                _ => unreachable!(),
            };
            let weights = io.weights.expect("conv weights").values();
            let xs = x.values();
            let dy = d_out.values();
            let mut d_input = vec![0.0; xs.len()];
            let mut dw = vec![0.0; weights.len()];
            let mut db = vec![0.0; out_channels];
            let in_stride = in_channels * h * w_in;
            let out_stride = out_channels * oh * ow;
            for s in 0..b {
                for oc in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dy[s * out_stride + oc * oh * ow + oy * ow + ox];
                            if g == 0.0 {
                                continue;
                            }
                            db[oc] += g;
                            for ic in 0..in_channels {
                                for ky in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy as usize >= h {
                                        continue;
                                    }
                                    for kx in 0..kernel {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix as usize >= w_in {
                                            continue;
                                        }
                                        let xi = s * in_stride
                                            + ic * h * w_in
                                            + iy as usize * w_in
                                            + ix as usize;
                                        let wi = ((oc * in_channels + ic) * kernel + ky) * kernel
                                            + kx;
                                        dw[wi] += g * xs[xi];
                                        d_input[xi] += g * weights[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let (d_weights, d_bias) = if want_param_grads {
                (
                    Some(Tensor::new(
                        vec![out_channels, in_channels, kernel, kernel],
                        dw,
                    )?),
                    Some(Tensor::new(vec![out_channels], db)?),
                )
            } else {
                (None, None)
            };
            Ok(LayerGrads {
                d_weights,
                d_bias,
                d_input: Tensor::new(x.shape().to_vec(), d_input)?,
            })
        }
        LayerSpec::AvgPool2d { window } => {
            let (c, h, w_in) = match FeatureShape::of_batch(x)? {
                FeatureShape::Spatial {
                    channels,
                    height,
                    width,
                } => (channels, height, width),
                _ => unreachable!(),
            };
            let (oh, ow) = (h / window, w_in / window);
            let dy = d_out.values();
            let mut d_input = vec![0.0; x.values().len()];
            let norm = 1.0 / (window * window) as f64;
            for s in 0..b {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dy[s * c * oh * ow + ch * oh * ow + oy * ow + ox] * norm;
                            for ky in 0..window {
                                for kx in 0..window {
                                    d_input[s * c * h * w_in
                                        + ch * h * w_in
                                        + (oy * window + ky) * w_in
                                        + (ox * window + kx)] += g;
                                }
                            }
                        }
                    }
                }
            }
            Ok(LayerGrads {
                d_weights: None,
                d_bias: None,
                d_input: Tensor::new(x.shape().to_vec(), d_input)?,
            })
        }
        LayerSpec::Flatten => Ok(LayerGrads {
            d_weights: None,
            d_bias: None,
            d_input: d_out.clone().reshape(x.shape().to_vec())?,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_shape_chain() {
        let spec = vec![
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 8,
            },
            LayerSpec::ReLU,
            LayerSpec::Dense {
                in_dim: 8,
                out_dim: 3,
            },
        ];
        let out = check_spec(&spec, &FeatureShape::Flat(4)).unwrap();
        assert_eq!(out, FeatureShape::Flat(3));
    }

    #[test]
    fn shape_error_names_layer() {
        let spec = vec![
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 8,
            },
            LayerSpec::Dense {
                in_dim: 9,
                out_dim: 3,
            },
        ];
        match check_spec(&spec, &FeatureShape::Flat(4)) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_shape_math() {
        let conv = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let out = conv
            .out_shape(
                0,
                &FeatureShape::Spatial {
                    channels: 1,
                    height: 28,
                    width: 28,
                },
            )
            .unwrap();
        assert_eq!(
            out,
            FeatureShape::Spatial {
                channels: 4,
                height: 28,
                width: 28
            }
        );
    }

    #[test]
    fn kernel_restricted_to_one_or_three() {
        let conv = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 5,
            stride: 1,
            padding: 0,
        };
        assert!(conv
            .out_shape(
                0,
                &FeatureShape::Spatial {
                    channels: 1,
                    height: 8,
                    width: 8
                }
            )
            .is_err());
    }

    #[test]
    fn count_params_examples() {
        // Dense(4,3) -> 4*3+3 = 15
        assert_eq!(
            count_params(&[LayerSpec::Dense {
                in_dim: 4,
                out_dim: 3
            }]),
            15
        );
        // Conv2d(2->4, k=3) -> 3*3*2*4 + 4 = 76
        assert_eq!(
            count_params(&[LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1
            }]),
            76
        );
        // empty spec -> 0
        assert_eq!(count_params(&[]), 0);
    }
}

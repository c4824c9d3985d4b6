use crate::error::{shape, Result};

/// One stage of a feed-forward network.
///
/// Convolutions are stride 1 with no padding; pooling is 2x2 max with stride 2
/// (odd trailing rows/columns are dropped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_units: usize,
        out_units: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2x2,
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn dense(in_units: usize, out_units: usize) -> Self {
        LayerSpec::Dense {
            in_units,
            out_units,
        }
    }

    /// 5x5 convolution.
    pub fn conv5(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Weight and bias extents, if the layer has parameters.
    pub fn param_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => Some((vec![out_units, in_units], vec![out_units])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_dims().map_or(0, |(w, b)| {
            w.iter().product::<usize>() + b.iter().product::<usize>()
        })
    }

    /// `(fan_in, fan_out)` for Glorot-uniform initialization.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => Some((in_units, out_units)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                if input != [in_units] {
                    return Err(shape(format!(
                        "dense layer expects [{in_units}], got {input:?}"
                    )));
                }
                Ok(vec![out_units])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => match *input {
                [c, h, w] if c == in_channels && h >= kernel && w >= kernel && kernel > 0 => {
                    Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
                }
                _ => Err(shape(format!(
                    "conv2d expects [{in_channels}, >={kernel}, >={kernel}], got {input:?}"
                ))),
            },
            LayerSpec::MaxPool2x2 => match *input {
                [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(shape(format!("maxpool2x2 expects [C, >=2, >=2], got {input:?}"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

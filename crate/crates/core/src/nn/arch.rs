use std::fmt;
use std::str::FromStr;

use super::LayerSpec;
use crate::error::{invalid, shape, Error, Result};

/// Named architecture families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// conv5(6) relu pool conv5(16) relu pool dense(120) relu dense(84) relu dense(K).
    Lenet5,
    /// LeNet5 with every channel and unit count halved, rounding up.
    Lenet5Half,
    /// Fully connected; hidden widths in order (empty means linear softmax).
    Mlp(Vec<usize>),
}

const LENET_WIDTHS: [usize; 4] = [6, 16, 120, 84];

impl Architecture {
    /// Layer chain for the given per-sample input shape and class count.
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
        match self {
            Architecture::Lenet5 => lenet(input_shape, num_classes, LENET_WIDTHS),
            Architecture::Lenet5Half => {
                lenet(input_shape, num_classes, LENET_WIDTHS.map(|w| w.div_ceil(2)))
            }
            Architecture::Mlp(hidden) => {
                let mut layers = Vec::new();
                if input_shape.len() > 1 {
                    layers.push(LayerSpec::Flatten);
                }
                let mut width: usize = input_shape.iter().product();
                for &h in hidden {
                    layers.push(LayerSpec::dense(width, h));
                    layers.push(LayerSpec::Relu);
                    width = h;
                }
                layers.push(LayerSpec::dense(width, num_classes));
                Ok(layers)
            }
        }
    }
}

fn lenet(input_shape: &[usize], num_classes: usize, w: [usize; 4]) -> Result<Vec<LayerSpec>> {
    let [c, h, wd] = *input_shape else {
        return Err(shape(format!(
            "LeNet needs [C, H, W] inputs, got {input_shape:?}"
        )));
    };
    // two (conv5, pool) stages
    let side = |s: usize| s.checked_sub(4).map(|s| s / 2).and_then(|s| s.checked_sub(4)).map(|s| s / 2);
    let (Some(oh), Some(ow)) = (side(h), side(wd)) else {
        return Err(shape(format!("input {h}x{wd} too small for LeNet")));
    };
    if oh == 0 || ow == 0 {
        return Err(shape(format!("input {h}x{wd} too small for LeNet")));
    }
    Ok(vec![
        LayerSpec::conv5(c, w[0]),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::conv5(w[0], w[1]),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::dense(w[1] * oh * ow, w[2]),
        LayerSpec::Relu,
        LayerSpec::dense(w[2], w[3]),
        LayerSpec::Relu,
        LayerSpec::dense(w[3], num_classes),
    ])
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Lenet5 => f.write_str("lenet5"),
            Architecture::Lenet5Half => f.write_str("lenet5_half"),
            Architecture::Mlp(hidden) => {
                let parts: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                write!(f, "mlp:{}", parts.join("-"))
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Accepts `lenet5`, `lenet5_half`, `mlp:` and `mlp:<w1>-<w2>-...`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenet5" => Ok(Architecture::Lenet5),
            "lenet5_half" => Ok(Architecture::Lenet5Half),
            "mlp" | "mlp:" => Ok(Architecture::Mlp(Vec::new())),
            _ => {
                let spec = s
                    .strip_prefix("mlp:")
                    .ok_or_else(|| invalid(format!("unknown architecture {s:?}")))?;
                let hidden = spec
                    .split('-')
                    .map(|w| match w.trim().parse::<usize>() {
                        Ok(v) if v > 0 => Ok(v),
                        _ => Err(invalid(format!("bad mlp width {w:?} in {s:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Architecture::Mlp(hidden))
            }
        }
    }
}

//! Architecture descriptors and their textual form, e.g. `mlp(2,64,64)`,
//! `cnn1d(2,1024)` or `cnn2d(3,32,32)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PteError, Result};

/// Named reference architecture. The class count is supplied separately when
/// the classifier is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected ReLU network. `widths[0]` is the input dimension, the
    /// remaining entries are hidden widths.
    Mlp { widths: Vec<usize> },
    /// Two convolutions over a `channels x length` window, max pooling after the
    /// first, global average pooling after the second, then two dense layers.
    Cnn1d {
        channels: usize,
        length: usize,
        filters: [usize; 2],
        kernels: [usize; 2],
        stride: usize,
        pool: usize,
        hidden: usize,
    },
    /// Two 3x3 convolutions with 2x2 max pooling over `channels x height x width`
    /// images, then two dense layers.
    Cnn2d {
        channels: usize,
        height: usize,
        width: usize,
        filters: [usize; 2],
        hidden: usize,
    },
}

impl Architecture {
    pub fn mlp(widths: &[usize]) -> Self {
        Architecture::Mlp {
            widths: widths.to_vec(),
        }
    }

    /// Default 1D-CNN for `channels x length` signal windows.
    pub fn cnn1d(channels: usize, length: usize) -> Self {
        Architecture::Cnn1d {
            channels,
            length,
            filters: [16, 32],
            kernels: [16, 8],
            stride: 2,
            pool: 4,
            hidden: 32,
        }
    }

    /// Default small 2D-CNN for `channels x height x width` images.
    pub fn cnn2d(channels: usize, height: usize, width: usize) -> Self {
        Architecture::Cnn2d {
            channels,
            height,
            width,
            filters: [8, 16],
            hidden: 64,
        }
    }

    /// Shape of a single input sample.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Architecture::Mlp { widths } => vec![widths.first().copied().unwrap_or(0)],
            Architecture::Cnn1d {
                channels, length, ..
            } => vec![*channels, *length],
            Architecture::Cnn2d {
                channels,
                height,
                width,
                ..
            } => vec![*channels, *height, *width],
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PteError::Config(format!("architecture {self}: {msg}")));
        match self {
            Architecture::Mlp { widths } => {
                if widths.is_empty() || widths.contains(&0) {
                    return bad("mlp widths must be nonempty and positive".into());
                }
            }
            Architecture::Cnn1d {
                channels,
                length,
                filters,
                kernels,
                stride,
                pool,
                hidden,
            } => {
                if [
                    *channels, *length, filters[0], filters[1], *stride, *pool, *hidden,
                ]
                .contains(&0)
                    || kernels.contains(&0)
                {
                    return bad("all sizes must be positive".into());
                }
                if *length < kernels[0] {
                    return bad("window shorter than the first kernel".into());
                }
                let conv1 = (length - kernels[0]) / stride + 1;
                let pooled = conv1 / pool;
                if pooled < kernels[1] {
                    return bad(format!(
                        "window too short: {pooled} positions after pooling, second kernel {}",
                        kernels[1]
                    ));
                }
            }
            Architecture::Cnn2d {
                channels,
                height,
                width,
                filters,
                hidden,
            } => {
                if [*channels, filters[0], filters[1], *hidden].contains(&0) {
                    return bad("all sizes must be positive".into());
                }
                // conv3 -> pool2 -> conv3 -> pool2 must leave at least one pixel
                let after = |n: usize| {
                    n.checked_sub(2)
                        .map(|v| v / 2)
                        .and_then(|v| v.checked_sub(2))
                        .map(|v| v / 2)
                };
                if !matches!(after(*height), Some(h) if h > 0)
                    || !matches!(after(*width), Some(w) if w > 0)
                {
                    return bad("image too small for two conv/pool stages".into());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Mlp { widths } => {
                let w: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
                write!(f, "mlp({})", w.join(","))
            }
            Architecture::Cnn1d {
                channels,
                length,
                filters,
                kernels,
                stride,
                pool,
                hidden,
            } => write!(
                f,
                "cnn1d({channels},{length},{},{},{},{},{stride},{pool},{hidden})",
                filters[0], filters[1], kernels[0], kernels[1]
            ),
            Architecture::Cnn2d {
                channels,
                height,
                width,
                filters,
                hidden,
            } => write!(
                f,
                "cnn2d({channels},{height},{width},{},{},{hidden})",
                filters[0], filters[1]
            ),
        }
    }
}

impl FromStr for Architecture {
    type Err = PteError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| PteError::Config(format!("architecture `{s}`: expected name(args)")))?;
        if !s.ends_with(')') {
            return Err(PteError::Config(format!("architecture `{s}`: missing `)`")));
        }
        let name = s[..open].trim();
        let args: Vec<usize> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim())
            .filter(|a| !a.is_empty())
            .map(|a| {
                a.parse::<usize>().map_err(|_| {
                    PteError::Config(format!("architecture `{s}`: bad argument `{a}`"))
                })
            })
            .collect::<Result<_>>()?;
        let wrong_arity =
            || PteError::Config(format!("architecture `{s}`: wrong number of arguments"));
        let arch = match name {
            "mlp" => Architecture::mlp(&args),
            "cnn1d" => match args.as_slice() {
                [c, l] => Architecture::cnn1d(*c, *l),
                [c, l, f1, f2, k1, k2, st, p, h] => Architecture::Cnn1d {
                    channels: *c,
                    length: *l,
                    filters: [*f1, *f2],
                    kernels: [*k1, *k2],
                    stride: *st,
                    pool: *p,
                    hidden: *h,
                },
                _ => return Err(wrong_arity()),
            },
            "cnn2d" => match args.as_slice() {
                [c, h, w] => Architecture::cnn2d(*c, *h, *w),
                [c, h, w, f1, f2, hid] => Architecture::Cnn2d {
                    channels: *c,
                    height: *h,
                    width: *w,
                    filters: [*f1, *f2],
                    hidden: *hid,
                },
                _ => return Err(wrong_arity()),
            },
            other => {
                return Err(PteError::Config(format!(
                    "unknown architecture `{other}` (expected mlp, cnn1d or cnn2d)"
                )))
            }
        };
        arch.validate()?;
        Ok(arch)
    }
}

use super::{NnError, Result};

/// Network family of a tiny classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Single affine map from input to logits.
    Linear,
    /// Fully connected network with one or two hidden layers.
    Mlp(Vec<usize>),
    /// One 1-D convolution (kernel 3, zero "same" padding) followed by a dense head.
    ConvTiny { channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation. `relu'(0) = 0`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::fmt::Display for Arch {
    /// `linear`, `mlp:32,16` or `conv_tiny:4`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Linear => write!(f, "linear"),
            Arch::Mlp(hidden) => {
                let sizes: Vec<String> = hidden.iter().map(usize::to_string).collect();
                write!(f, "mlp:{}", sizes.join(","))
            }
            Arch::ConvTiny { channels } => write!(f, "conv_tiny:{channels}"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let bad = || NnError::InvalidSpec(format!("cannot parse architecture `{s}`"));
        match name {
            "linear" if args.is_empty() => Ok(Arch::Linear),
            "mlp" => args
                .split(',')
                .map(|h| h.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()
                .map(Arch::Mlp),
            "conv_tiny" => Ok(Arch::ConvTiny {
                channels: args.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(NnError::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

pub const CONV_KERNEL: usize = 3;
pub const MAX_HIDDEN_LAYERS: usize = 2;

/// Architecture descriptor of a classifier `f(x, w)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

/// A dense or convolutional block, located inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        offset: usize,
    },
    Conv {
        channels: usize,
        length: usize,
        offset: usize,
    },
}

impl Layer {
    pub(crate) fn param_count(&self) -> usize {
        match *self {
            Layer::Dense {
                inputs, outputs, ..
            } => inputs * outputs + outputs,
            Layer::Conv { channels, .. } => channels * CONV_KERNEL + channels,
        }
    }
}

impl ModelSpec {
    pub fn new(arch: Arch, input_dim: usize, num_classes: usize, activation: Activation) -> Result<Self> {
        let spec = Self {
            arch,
            input_dim,
            num_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(Arch::Linear, input_dim, num_classes, Activation::Relu)
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize, activation: Activation) -> Result<Self> {
        Self::new(Arch::Mlp(hidden.to_vec()), input_dim, num_classes, activation)
    }

    pub fn conv_tiny(input_dim: usize, channels: usize, num_classes: usize, activation: Activation) -> Result<Self> {
        Self::new(Arch::ConvTiny { channels }, input_dim, num_classes, activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input dimension must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(NnError::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        match &self.arch {
            Arch::Linear => {}
            Arch::Mlp(hidden) => {
                if hidden.is_empty() || hidden.len() > MAX_HIDDEN_LAYERS {
                    return Err(NnError::InvalidSpec(format!(
                        "mlp takes 1..={MAX_HIDDEN_LAYERS} hidden layers, got {}",
                        hidden.len()
                    )));
                }
                if hidden.contains(&0) {
                    return Err(NnError::InvalidSpec("hidden sizes must be positive".into()));
                }
            }
            Arch::ConvTiny { channels } => {
                if *channels == 0 {
                    return Err(NnError::InvalidSpec("conv channels must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut layers: Vec<Layer> = Vec::new();
        let mut offset = 0;
        let dense = |inputs: usize, outputs: usize, offset: &mut usize| {
            let layer = Layer::Dense {
                inputs,
                outputs,
                offset: *offset,
            };
            *offset += layer.param_count();
            layer
        };
        match &self.arch {
            Arch::Linear => layers.push(dense(self.input_dim, self.num_classes, &mut offset)),
            Arch::Mlp(hidden) => {
                let mut width = self.input_dim;
                for &h in hidden {
                    layers.push(dense(width, h, &mut offset));
                    width = h;
                }
                layers.push(dense(width, self.num_classes, &mut offset));
            }
            Arch::ConvTiny { channels } => {
                let conv = Layer::Conv {
                    channels: *channels,
                    length: self.input_dim,
                    offset,
                };
                offset += conv.param_count();
                layers.push(conv);
                layers.push(dense(channels * self.input_dim, self.num_classes, &mut offset));
            }
        }
        layers
    }

    /// Length of the flat parameter vector.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::param_count).sum()
    }

    /// Short human-readable form, e.g. `mlp(16,8)/tanh d=20 k=3`.
    pub fn describe(&self) -> String {
        let arch = match &self.arch {
            Arch::Linear => "linear".to_string(),
            Arch::Mlp(h) => format!(
                "mlp({})",
                h.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            ),
            Arch::ConvTiny { channels } => format!("conv_tiny({channels})"),
        };
        format!(
            "{arch}/{} d={} k={}",
            self.activation.name(),
            self.input_dim,
            self.num_classes
        )
    }
}

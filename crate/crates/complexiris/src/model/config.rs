//! Architecture hyperparameters and their flat key=value encoding
//! (embedded in checkpoints).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBlockConfig {
    /// Composite layers per block (each is BN-zReLU-CONV1x1-BN-zReLU-CONV3x3).
    pub layers: usize,
    /// Channels appended by each composite layer.
    pub growth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub gabor_kh: usize,
    pub gabor_kw: usize,
    pub gabor_m: usize,
    /// The Gabor block is trainable after initialization unless frozen.
    pub gabor_trainable: bool,
    pub dense_blocks: Vec<DenseBlockConfig>,
    /// Output channels of each transition block's 1x1 convolution.
    pub transitions: Vec<usize>,
    pub input_h: usize,
    pub input_w: usize,
    /// The 1x1 bottleneck emits `bottleneck_factor * growth` channels.
    pub bottleneck_factor: usize,
    /// Pure-real ablation variant: no Gabor embedding, real kernels,
    /// real spectral pooling; feature maps stay on the real plane.
    pub real_mode: bool,
    /// Stochastic train-mode resolution jitter of the pooling targets.
    pub pool_jitter: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::two_block()
    }
}

impl ModelConfig {
    /// Desk-scale preset: 16 Gabor filters, two dense blocks of 3
    /// composite layers (growth 8), transitions to 12 then 8 channels.
    /// Output on 64x256 input: 16x64x8.
    pub fn tiny() -> Self {
        ModelConfig {
            gabor_kh: 7,
            gabor_kw: 7,
            gabor_m: 16,
            gabor_trainable: true,
            dense_blocks: vec![
                DenseBlockConfig { layers: 3, growth: 8 },
                DenseBlockConfig { layers: 3, growth: 8 },
            ],
            transitions: vec![12, 8],
            input_h: 64,
            input_w: 256,
            bottleneck_factor: 4,
            real_mode: false,
            pool_jitter: false,
        }
    }

    /// Two dense blocks of 6 layers (growth 12), the best-validating
    /// depth; transitions to 68 then 20 channels.
    pub fn two_block() -> Self {
        ModelConfig {
            gabor_kh: 7,
            gabor_kw: 7,
            gabor_m: 64,
            gabor_trainable: true,
            dense_blocks: vec![
                DenseBlockConfig { layers: 6, growth: 12 },
                DenseBlockConfig { layers: 6, growth: 12 },
            ],
            transitions: vec![68, 20],
            input_h: 64,
            input_w: 256,
            bottleneck_factor: 4,
            real_mode: false,
            pool_jitter: false,
        }
    }

    /// Full three-block column: 64 Gabor filters, three dense blocks
    /// of 6x12, transitions to 68/70/20 channels; 8x32x20 output.
    pub fn three_block() -> Self {
        ModelConfig {
            gabor_kh: 7,
            gabor_kw: 7,
            gabor_m: 64,
            gabor_trainable: true,
            dense_blocks: vec![
                DenseBlockConfig { layers: 6, growth: 12 },
                DenseBlockConfig { layers: 6, growth: 12 },
                DenseBlockConfig { layers: 6, growth: 12 },
            ],
            transitions: vec![68, 70, 20],
            input_h: 64,
            input_w: 256,
            bottleneck_factor: 4,
            real_mode: false,
            pool_jitter: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "two-block" => Ok(Self::two_block()),
            "three-block" | "paper" => Ok(Self::three_block()),
            other => Err(Error::invalid(format!(
                "unknown model preset '{other}' (expected tiny, two-block or three-block)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dense_blocks.is_empty() {
            return Err(Error::invalid("model needs at least one dense block"));
        }
        if self.transitions.len() != self.dense_blocks.len() {
            return Err(Error::invalid(format!(
                "{} dense blocks but {} transitions; each block needs one",
                self.dense_blocks.len(),
                self.transitions.len()
            )));
        }
        if self.gabor_kh % 2 == 0 || self.gabor_kw % 2 == 0 {
            return Err(Error::invalid("gabor kernel extents must be odd"));
        }
        if self.gabor_m == 0 {
            return Err(Error::invalid("gabor filter count must be positive"));
        }
        if self.bottleneck_factor == 0 {
            return Err(Error::invalid("bottleneck factor must be positive"));
        }
        if self
            .dense_blocks
            .iter()
            .any(|b| b.layers == 0 || b.growth == 0)
        {
            return Err(Error::invalid("dense block layers and growth must be positive"));
        }
        if self.transitions.iter().any(|&c| c == 0) {
            return Err(Error::invalid("transition channels must be positive"));
        }
        // every transition halves the spatial extents
        let div = 1usize << self.transitions.len();
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} is not divisible by 2^{} transitions",
                self.input_h,
                self.input_w,
                self.transitions.len()
            )));
        }
        Ok(())
    }

    /// `(h, w, c)` of the feature representation (after the final
    /// transition block), from pure shape arithmetic.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let div = 1usize << self.transitions.len();
        (
            self.input_h / div,
            self.input_w / div,
            *self.transitions.last().unwrap(),
        )
    }

    /// Input channel count of composite layer `l` in block `b`:
    /// `c0 + l*growth` by dense-connectivity arithmetic.
    pub fn block_input_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.gabor_m
        } else {
            self.transitions[block - 1]
        }
    }

    pub fn to_text(&self) -> String {
        let blocks: Vec<String> = self
            .dense_blocks
            .iter()
            .map(|b| format!("{}x{}", b.layers, b.growth))
            .collect();
        let transitions: Vec<String> = self.transitions.iter().map(|c| c.to_string()).collect();
        format!(
            "gabor_kh={}\ngabor_kw={}\ngabor_m={}\ngabor_trainable={}\n\
             dense_blocks={}\ntransitions={}\ninput_h={}\ninput_w={}\n\
             bottleneck_factor={}\nreal_mode={}\npool_jitter={}\n",
            self.gabor_kh,
            self.gabor_kw,
            self.gabor_m,
            self.gabor_trainable,
            blocks.join(","),
            transitions.join(","),
            self.input_h,
            self.input_w,
            self.bottleneck_factor,
            self.real_mode,
            self.pool_jitter
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::tiny();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("bad config line {}: '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            seen.insert(key.to_string());
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::invalid(format!("bad integer '{v}' for key '{key}'")))
            };
            let parse_bool = |v: &str| -> Result<bool> {
                v.parse()
                    .map_err(|_| Error::invalid(format!("bad bool '{v}' for key '{key}'")))
            };
            match key {
                "gabor_kh" => cfg.gabor_kh = parse_usize(value)?,
                "gabor_kw" => cfg.gabor_kw = parse_usize(value)?,
                "gabor_m" => cfg.gabor_m = parse_usize(value)?,
                "gabor_trainable" => cfg.gabor_trainable = parse_bool(value)?,
                "dense_blocks" => {
                    let mut blocks = Vec::new();
                    for part in value.split(',') {
                        let (l, g) = part.trim().split_once('x').ok_or_else(|| {
                            Error::invalid(format!("bad dense block spec '{part}'"))
                        })?;
                        blocks.push(DenseBlockConfig {
                            layers: parse_usize(l)?,
                            growth: parse_usize(g)?,
                        });
                    }
                    cfg.dense_blocks = blocks;
                }
                "transitions" => {
                    cfg.transitions = value
                        .split(',')
                        .map(|p| parse_usize(p.trim()))
                        .collect::<Result<_>>()?;
                }
                "input_h" => cfg.input_h = parse_usize(value)?,
                "input_w" => cfg.input_w = parse_usize(value)?,
                "bottleneck_factor" => cfg.bottleneck_factor = parse_usize(value)?,
                "real_mode" => cfg.real_mode = parse_bool(value)?,
                "pool_jitter" => cfg.pool_jitter = parse_bool(value)?,
                other => {
                    return Err(Error::invalid(format!("unknown model config key '{other}'")))
                }
            }
        }
        cfg.validate()?;
        let _ = seen;
        Ok(cfg)
    }
}

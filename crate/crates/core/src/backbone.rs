//! Miniature residual CNN used for both the RGB stream and the depth stream.
//! Features are tapped after the activation of each of the two convolutions
//! in every residual block, shallow to deep.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape, VarId};

pub const TAPS_PER_BLOCK: usize = 2;
const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Square input side; both streams must use the same value.
    pub input_hw: usize,
    pub stem_channels: usize,
    pub num_blocks: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_hw: 64,
            stem_channels: 16,
            num_blocks: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(Error::Config("num_blocks must be at least 1".into()));
        }
        if self.stem_channels < 1 {
            return Err(Error::Config("stem_channels must be at least 1".into()));
        }
        let min_hw = 1usize << (self.num_blocks - 1);
        if self.input_hw < min_hw {
            return Err(Error::Config(format!(
                "input {}x{} smaller than total downsampling {}x",
                self.input_hw, self.input_hw, min_hw
            )));
        }
        Ok(())
    }

    pub fn level_count(&self) -> usize {
        self.num_blocks * TAPS_PER_BLOCK
    }

    /// Channels of each tap, shallow to deep (both taps of a block match).
    pub fn tap_channels(&self) -> Vec<usize> {
        (0..self.num_blocks)
            .flat_map(|b| {
                let c = self.stem_channels << b;
                [c, c]
            })
            .collect()
    }

    /// Spatial side of each tap, shallow to deep.
    pub fn tap_hw(&self) -> Vec<usize> {
        let mut hw = self.input_hw;
        let mut out = Vec::with_capacity(self.level_count());
        for b in 0..self.num_blocks {
            if b > 0 {
                // 3x3 stride-2 pad-1 entry conv
                hw = (hw + 2 - 3) / 2 + 1;
            }
            out.push(hw);
            out.push(hw);
        }
        out
    }
}

struct ResidualBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    /// 1x1 projection on the skip path when the block changes shape.
    skip: Option<Conv2d>,
}

/// Ordered feature taps from one stream, shallow to deep.
pub struct MultiLevelFeatures {
    pub levels: Vec<VarId>,
}

impl MultiLevelFeatures {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn deepest(&self) -> VarId {
        *self.levels.last().expect("backbone always has taps")
    }
}

pub struct Backbone {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResidualBlock>,
    pub config: BackboneConfig,
}

impl Backbone {
    /// Builds the stream under `prefix` (`rgb` / `depth`). Stem is a 3x3
    /// stride-1 conv; block b doubles channels and halves resolution for
    /// b > 1. All weights are Xavier-initialized from `rng`.
    pub fn init<T: Scalar>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        config: &BackboneConfig,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        config.validate()?;
        let stem_conv = Conv2d::init(
            ps,
            &format!("{prefix}.stem.conv"),
            IMAGE_CHANNELS,
            config.stem_channels,
            3,
            1,
            1,
            false,
            rng,
        )?;
        let stem_bn = BatchNorm2d::init(ps, &format!("{prefix}.stem.bn"), config.stem_channels)?;

        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut in_ch = config.stem_channels;
        for b in 1..=config.num_blocks {
            let out_ch = config.stem_channels << (b - 1);
            let stride = if b == 1 { 1 } else { 2 };
            let name = format!("{prefix}.block{b}");
            let conv1 = Conv2d::init(
                ps,
                &format!("{name}.conv1"),
                in_ch,
                out_ch,
                3,
                stride,
                1,
                false,
                rng,
            )?;
            let bn1 = BatchNorm2d::init(ps, &format!("{name}.bn1"), out_ch)?;
            let conv2 = Conv2d::init(
                ps,
                &format!("{name}.conv2"),
                out_ch,
                out_ch,
                3,
                1,
                1,
                false,
                rng,
            )?;
            let bn2 = BatchNorm2d::init(ps, &format!("{name}.bn2"), out_ch)?;
            let skip = if stride != 1 || in_ch != out_ch {
                Some(Conv2d::init(
                    ps,
                    &format!("{name}.skip"),
                    in_ch,
                    out_ch,
                    1,
                    stride,
                    0,
                    false,
                    rng,
                )?)
            } else {
                None
            };
            blocks.push(ResidualBlock {
                conv1,
                bn1,
                conv2,
                bn2,
                skip,
            });
            in_ch = out_ch;
        }
        Ok(Backbone {
            stem_conv,
            stem_bn,
            blocks,
            config: config.clone(),
        })
    }

    /// Runs the stream and returns all `2 * num_blocks` taps. The block
    /// output that feeds the next block is `tap2 + skip(input)`, so zeroed
    /// block convolutions reduce the block to its (possibly projected) skip.
    pub fn forward_multilevel<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &mut ParamSet<T>,
        x: VarId,
        mode: BnMode,
    ) -> Result<MultiLevelFeatures> {
        let xs = tape.shape(x);
        if xs.len() != 4
            || xs[1] != IMAGE_CHANNELS
            || xs[2] != self.config.input_hw
            || xs[3] != self.config.input_hw
        {
            return Err(Error::shape(format!(
                "backbone expects n x {IMAGE_CHANNELS} x {0} x {0}, got {xs:?}",
                self.config.input_hw
            )));
        }
        let s = self.stem_conv.forward(tape, ps, x)?;
        let s = self.stem_bn.forward(tape, ps, s, mode)?;
        let mut cur = tape.relu(s)?;

        let mut levels = Vec::with_capacity(self.config.level_count());
        for block in &self.blocks {
            let t1 = block.conv1.forward(tape, ps, cur)?;
            let t1 = block.bn1.forward(tape, ps, t1, mode)?;
            let t1 = tape.relu(t1)?;
            let t2 = block.conv2.forward(tape, ps, t1)?;
            let t2 = block.bn2.forward(tape, ps, t2, mode)?;
            let t2 = tape.relu(t2)?;
            let skipped = match &block.skip {
                Some(conv) => conv.forward(tape, ps, cur)?,
                None => cur,
            };
            cur = tape.add(t2, skipped)?;
            levels.push(t1);
            levels.push(t2);
        }
        Ok(MultiLevelFeatures { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::tensor::Tensor;

    fn tiny_cfg() -> BackboneConfig {
        BackboneConfig {
            input_hw: 8,
            stem_channels: 4,
            num_blocks: 3,
        }
    }

    #[test]
    fn tap_arithmetic_matches_config() {
        let cfg = BackboneConfig {
            input_hw: 64,
            stem_channels: 16,
            num_blocks: 3,
        };
        assert_eq!(cfg.level_count(), 6);
        assert_eq!(cfg.tap_channels(), vec![16, 16, 32, 32, 64, 64]);
        assert_eq!(cfg.tap_hw(), vec![64, 64, 32, 32, 16, 16]);
    }

    #[test]
    fn forward_returns_all_taps_with_expected_shapes() {
        let cfg = tiny_cfg();
        let mut ps = ParamSet::<f32>::new();
        let mut rng = stream_rng(1, Stream::Init);
        let bb = Backbone::init(&mut ps, "rgb", &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 8, 8]));
        let taps = bb
            .forward_multilevel(&mut tape, &mut ps, x, BnMode::Eval)
            .unwrap();
        assert_eq!(taps.level_count(), 6);
        let hw = cfg.tap_hw();
        let ch = cfg.tap_channels();
        for (i, &v) in taps.levels.iter().enumerate() {
            assert_eq!(tape.shape(v), &[2, ch[i], hw[i], hw[i]]);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = tiny_cfg();
        let mut a = ParamSet::<f64>::new();
        let mut b = ParamSet::<f64>::new();
        let mut r1 = stream_rng(9, Stream::Init);
        let mut r2 = stream_rng(9, Stream::Init);
        Backbone::init(&mut a, "rgb", &cfg, &mut r1).unwrap();
        Backbone::init(&mut b, "rgb", &cfg, &mut r2).unwrap();
        assert!(a.state_eq(&b));
    }

    #[test]
    fn input_smaller_than_downsampling_rejected() {
        let cfg = BackboneConfig {
            input_hw: 4,
            stem_channels: 4,
            num_blocks: 4, // needs at least 8
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zeroed_block_reduces_to_projected_skip() {
        // With conv weights zero and BN neutral (running stats 0/1, eval mode),
        // the taps are relu(0) = 0 and the block output equals the skip path.
        let cfg = BackboneConfig {
            input_hw: 6,
            stem_channels: 4,
            num_blocks: 2,
        };
        let mut ps = ParamSet::<f64>::new();
        let mut rng = stream_rng(3, Stream::Init);
        let bb = Backbone::init(&mut ps, "rgb", &cfg, &mut rng).unwrap();
        // Zero every conv weight except the block-2 skip projection, which we
        // make an identity-like 1x1 (identity impossible with channel change;
        // keep it and verify block1 only).
        for (_, e) in ps.iter().map(|(i, e)| (i, e.name.clone())).collect::<Vec<_>>() {
            if e.ends_with(".weight") && !e.contains("skip") {
                let id = ps.id_of(&e).unwrap();
                let t = &mut ps.get_mut(id).tensor;
                let z = vec![0.0; t.numel()];
                t.data_mut().copy_from_slice(&z);
            }
        }
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 6 * 6).map(|i| (i as f64 * 0.05).sin()).collect();
        let x = tape.constant(Tensor::new(vec![2, 3, 6, 6], data).unwrap());
        let taps = bb
            .forward_multilevel(&mut tape, &mut ps, x, BnMode::Eval)
            .unwrap();
        // All taps are zero: conv outputs are zero, BN is neutral, relu(0)=0.
        for &v in &taps.levels {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }
}

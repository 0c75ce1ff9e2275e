//! Multi-scale feature extractor with CSP, ELAN or MSP stage blocks.
//!
//! Graph (all convolutions zero-padded, `act` = leaky ReLU):
//!
//! ```text
//! stem.conv1   2x2 s2   3 -> stem        + act
//! stem.conv2   3x3 s1   stem -> stem     + act
//! stage{s}.down 2x2 s2  prev -> width_s  + act          s = 1..4
//! stage{s}.block{b}     stage block of the configured kind
//! ```
//!
//! Stage `s` emits `X_{s-1}`, so for an `H x W` input the four feature maps
//! sit at strides 4, 8, 16 and 32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;
use crate::weights::{push_conv, ParamSpec, WeightContainer};

pub const NUM_STAGES: usize = 4;
/// Stride of `X_i` relative to the input image.
pub const FEATURE_STRIDES: [usize; NUM_STAGES] = [4, 8, 16, 32];
pub const DEFAULT_SLOPE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageBlockKind {
    Csp,
    Msp,
    Elan,
}

impl StageBlockKind {
    pub fn name(self) -> &'static str {
        match self {
            StageBlockKind::Csp => "csp",
            StageBlockKind::Msp => "msp",
            StageBlockKind::Elan => "elan",
        }
    }

    /// CSP and MSP split their input into two equal halves.
    fn splits(self) -> bool {
        matches!(self, StageBlockKind::Csp | StageBlockKind::Msp)
    }
}

fn default_depth() -> usize {
    1
}

fn default_slope() -> f32 {
    DEFAULT_SLOPE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: StageBlockKind,
    pub stem_channels: usize,
    /// Widths of `X_0..X_3`.
    pub stage_channels: [usize; NUM_STAGES],
    pub blocks_per_stage: [usize; NUM_STAGES],
    /// Conv units inside each stage block.
    #[serde(default = "default_depth")]
    pub block_depth: usize,
    #[serde(default = "default_slope")]
    pub activation_slope: f32,
}

impl BackboneConfig {
    /// The canonical desk-scale backbone for `kind`.
    pub fn desk(kind: StageBlockKind) -> Self {
        BackboneConfig {
            kind,
            stem_channels: 16,
            stage_channels: [16, 32, 64, 128],
            blocks_per_stage: [1, 2, 2, 1],
            block_depth: 1,
            activation_slope: DEFAULT_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(Error::config("backbone.stem_channels must be >= 1"));
        }
        if self.kind == StageBlockKind::Msp && self.stem_channels % 2 != 0 {
            return Err(Error::config(format!(
                "backbone.stem_channels = {} is odd; msp taps half of the stem output",
                self.stem_channels
            )));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c == 0 {
                return Err(Error::config(format!("backbone.stage_channels[{i}] must be >= 1")));
            }
            if i > 0 && c < self.stage_channels[i - 1] {
                return Err(Error::config(format!(
                    "backbone.stage_channels[{i}] = {c} is narrower than stage_channels[{}] = {}; widths must be non-decreasing",
                    i - 1,
                    self.stage_channels[i - 1]
                )));
            }
            if self.kind.splits() && c % 2 != 0 {
                return Err(Error::config(format!(
                    "backbone.stage_channels[{i}] = {c} is odd (stage {}); {} blocks split channels into equal halves",
                    i + 1,
                    self.kind.name()
                )));
            }
        }
        for (i, &b) in self.blocks_per_stage.iter().enumerate() {
            if b == 0 {
                return Err(Error::config(format!("backbone.blocks_per_stage[{i}] must be >= 1")));
            }
        }
        if self.block_depth == 0 {
            return Err(Error::config("backbone.block_depth must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.activation_slope) {
            return Err(Error::config("backbone.activation_slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Input channels of stage `s` (0-based) block taps for MSP.
    fn tap_channels(&self, s: usize) -> usize {
        if s == 0 {
            self.stem_channels / 2
        } else {
            self.stage_channels[s - 1] / 2
        }
    }
}

/// Backbone outputs `X_0..X_3` at strides 4, 8, 16 and 32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub levels: [Tensor; NUM_STAGES],
}

impl FeatureSet {
    pub fn get(&self, i: usize) -> &Tensor {
        &self.levels[i]
    }

    pub fn bit_eq(&self, other: &FeatureSet) -> bool {
        self.levels.iter().zip(&other.levels).all(|(a, b)| a.bit_eq(b))
    }
}

fn split_halves(x: &Tensor, width: usize) -> Result<(Tensor, Tensor)> {
    if width % 2 != 0 {
        return Err(Error::config(format!("block width {width} is odd; cannot split into equal halves")));
    }
    if x.channels() != width {
        return Err(Error::shape(format!("block expects {width} channels, got {}", x.channels())));
    }
    Ok((x.slice_channels(0, width / 2)?, x.slice_channels(width / 2, width)?))
}

/// One residual unit: `x + act(conv3x3(x))`.
fn residual_unit(exec: &Exec, x: &Tensor, node: &str, slope: f32, weights: &WeightContainer) -> Result<Tensor> {
    let c = x.channels();
    let y = exec.conv(x, &weights.conv(node, c, c, 3, 1, 1)?)?;
    exec.add(x, &exec.leaky(&y, slope))
}

/// Cross-stage partial block.
///
/// The first half bypasses; the second half runs through `depth` residual
/// 3x3 units. The halves are concatenated and mixed by a linear 1x1 `fuse`.
pub fn csp_block(
    exec: &Exec,
    x: &Tensor,
    width: usize,
    depth: usize,
    slope: f32,
    weights: &WeightContainer,
    node: &str,
) -> Result<Tensor> {
    let (bypass, mut part) = split_halves(x, width)?;
    for i in 1..=depth {
        part = residual_unit(exec, &part, &format!("{node}.conv{i}"), slope, weights)?;
    }
    let cat = exec.cat(&[&bypass, &part])?;
    exec.conv(&cat, &weights.conv(&format!("{node}.fuse"), width, width, 1, 1, 0)?)
}

/// Layer-aggregation block.
///
/// A chain of `depth` 3x3 units; the input and every unit output are
/// concatenated and mixed by a linear 1x1 `fuse`.
pub fn elan_block(
    exec: &Exec,
    x: &Tensor,
    width: usize,
    depth: usize,
    slope: f32,
    weights: &WeightContainer,
    node: &str,
) -> Result<Tensor> {
    if x.channels() != width {
        return Err(Error::shape(format!("elan block expects {width} channels, got {}", x.channels())));
    }
    let mut outs = vec![x.clone()];
    for i in 1..=depth {
        let prev = outs.last().unwrap();
        let spec = weights.conv(&format!("{node}.conv{i}"), width, width, 3, 1, 1)?;
        let y = exec.leaky(&exec.conv(prev, &spec)?, slope);
        outs.push(y);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let cat = exec.cat(&refs)?;
    exec.conv(&cat, &weights.conv(&format!("{node}.fuse"), (depth + 1) * width, width, 1, 1, 0)?)
}

/// Output of [`msp_block`]: the block result and its bypass half, which the
/// stage driver forwards as the next stage's tap.
#[derive(Debug, Clone)]
pub struct MspOutput {
    pub out: Tensor,
    pub bypass: Tensor,
}

/// Mixed-stage partial block.
///
/// Split like CSP. The tap from the previous stage (already resampled to
/// this resolution) is projected to half width and joins the processed half
/// to form the mixed stream `m`; `depth` residual 3x3 units run over `m`, and
/// the bypass half, `m` and every unit output are concatenated into the
/// linear 1x1 `fuse`. Without a tap, `m` is the processed half alone.
#[allow(clippy::too_many_arguments)]
pub fn msp_block(
    exec: &Exec,
    x: &Tensor,
    tap: Option<&Tensor>,
    width: usize,
    depth: usize,
    slope: f32,
    weights: &WeightContainer,
    node: &str,
) -> Result<MspOutput> {
    let (bypass, part) = split_halves(x, width)?;
    let half = width / 2;
    let mixed = match tap {
        Some(t) => {
            let (ts, xs) = (t.shape(), x.shape());
            if (ts.n, ts.h, ts.w) != (xs.n, xs.h, xs.w) {
                return Err(Error::shape(format!("msp tap {ts} does not match block input {xs}")));
            }
            let proj = weights.conv(&format!("{node}.tap_proj"), t.channels(), half, 1, 1, 0)?;
            let t = exec.conv(t, &proj)?;
            exec.cat(&[&part, &t])?
        }
        None => part,
    };
    let mut outs = vec![bypass.clone(), mixed];
    for i in 1..=depth {
        let y = residual_unit(exec, outs.last().unwrap(), &format!("{node}.conv{i}"), slope, weights)?;
        outs.push(y);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let cat = exec.cat(&refs)?;
    let fuse = weights.conv(&format!("{node}.fuse"), cat.channels(), width, 1, 1, 0)?;
    Ok(MspOutput {
        out: exec.conv(&cat, &fuse)?,
        bypass,
    })
}

pub fn backbone_forward(image: &Tensor, cfg: &BackboneConfig, weights: &WeightContainer) -> Result<FeatureSet> {
    backbone_forward_with(&Exec::default(), image, cfg, weights)
}

pub fn backbone_forward_with(
    exec: &Exec,
    image: &Tensor,
    cfg: &BackboneConfig,
    weights: &WeightContainer,
) -> Result<FeatureSet> {
    cfg.validate()?;
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::input(format!("backbone expects a 1x3xHxW image, got {s}")));
    }
    if s.h % 32 != 0 || s.w % 32 != 0 {
        return Err(Error::input(format!("image size {}x{} is not divisible by 32", s.h, s.w)));
    }
    let slope = cfg.activation_slope;
    let stem = cfg.stem_channels;
    let x = exec.conv(image, &weights.conv("backbone.stem.conv1", 3, stem, 2, 2, 0)?)?;
    let x = exec.leaky(&x, slope);
    let x = exec.conv(&x, &weights.conv("backbone.stem.conv2", stem, stem, 3, 1, 1)?)?;
    let mut x = exec.leaky(&x, slope);

    // The stem's first half seeds the stage-1 tap for MSP.
    let mut tap = match cfg.kind {
        StageBlockKind::Msp => Some(x.slice_channels(0, stem / 2)?),
        _ => None,
    };
    let mut prev = stem;
    let mut levels = Vec::with_capacity(NUM_STAGES);
    for st in 0..NUM_STAGES {
        let width = cfg.stage_channels[st];
        let stage = format!("backbone.stage{}", st + 1);
        x = exec.conv(&x, &weights.conv(&format!("{stage}.down"), prev, width, 2, 2, 0)?)?;
        x = exec.leaky(&x, slope);
        let stage_tap = match tap.take() {
            Some(t) => Some(exec.down2(&t)?),
            None => None,
        };
        for b in 0..cfg.blocks_per_stage[st] {
            let node = format!("{stage}.block{b}");
            x = match cfg.kind {
                StageBlockKind::Csp => csp_block(exec, &x, width, cfg.block_depth, slope, weights, &node)?,
                StageBlockKind::Elan => elan_block(exec, &x, width, cfg.block_depth, slope, weights, &node)?,
                StageBlockKind::Msp => {
                    let o = msp_block(exec, &x, stage_tap.as_ref(), width, cfg.block_depth, slope, weights, &node)?;
                    tap = Some(o.bypass);
                    o.out
                }
            };
        }
        levels.push(x.clone());
        prev = width;
    }
    let levels: [Tensor; NUM_STAGES] = levels.try_into().expect("four stages");
    Ok(FeatureSet { levels })
}

/// Every parameter the backbone forward reads, in graph order.
pub fn layout(cfg: &BackboneConfig, out: &mut Vec<ParamSpec>) {
    let stem = cfg.stem_channels;
    let d = cfg.block_depth;
    push_conv(out, "backbone.stem.conv1", 3, stem, 2);
    push_conv(out, "backbone.stem.conv2", stem, stem, 3);
    let mut prev = stem;
    for st in 0..NUM_STAGES {
        let w = cfg.stage_channels[st];
        let stage = format!("backbone.stage{}", st + 1);
        push_conv(out, &format!("{stage}.down"), prev, w, 2);
        for b in 0..cfg.blocks_per_stage[st] {
            let node = format!("{stage}.block{b}");
            match cfg.kind {
                StageBlockKind::Csp => {
                    for i in 1..=d {
                        push_conv(out, &format!("{node}.conv{i}"), w / 2, w / 2, 3);
                    }
                    push_conv(out, &format!("{node}.fuse"), w, w, 1);
                }
                StageBlockKind::Elan => {
                    for i in 1..=d {
                        push_conv(out, &format!("{node}.conv{i}"), w, w, 3);
                    }
                    push_conv(out, &format!("{node}.fuse"), (d + 1) * w, w, 1);
                }
                StageBlockKind::Msp => {
                    push_conv(out, &format!("{node}.tap_proj"), cfg.tap_channels(st), w / 2, 1);
                    for i in 1..=d {
                        push_conv(out, &format!("{node}.conv{i}"), w, w, 3);
                    }
                    push_conv(out, &format!("{node}.fuse"), w / 2 + (d + 1) * w, w, 1);
                }
            }
        }
        prev = w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_input(seed: u64, shape: Shape) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn block_weights(kind: StageBlockKind, width: usize, depth: usize, tap: Option<usize>) -> WeightContainer {
        let mut l = Vec::new();
        let node = "blk";
        match kind {
            StageBlockKind::Csp => {
                for i in 1..=depth {
                    push_conv(&mut l, &format!("{node}.conv{i}"), width / 2, width / 2, 3);
                }
                push_conv(&mut l, "blk.fuse", width, width, 1);
            }
            StageBlockKind::Elan => {
                for i in 1..=depth {
                    push_conv(&mut l, &format!("{node}.conv{i}"), width, width, 3);
                }
                push_conv(&mut l, "blk.fuse", (depth + 1) * width, width, 1);
            }
            StageBlockKind::Msp => {
                let mw = if tap.is_some() { width } else { width / 2 };
                if let Some(tc) = tap {
                    push_conv(&mut l, "blk.tap_proj", tc, width / 2, 1);
                }
                for i in 1..=depth {
                    push_conv(&mut l, &format!("{node}.conv{i}"), mw, mw, 3);
                }
                push_conv(&mut l, "blk.fuse", width / 2 + (depth + 1) * mw, width, 1);
            }
        }
        WeightContainer::seeded(&l, 11)
    }

    #[test]
    fn csp_zero_branch_passes_bypass_through() {
        let mut w = block_weights(StageBlockKind::Csp, 8, 1, None);
        for (name, e) in w.iter_mut() {
            e.data.fill(0.0);
            if name == "blk.fuse.weight" {
                for c in 0..8 {
                    e.data[c * 8 + c] = 1.0;
                }
            }
        }
        let x = seeded_input(1, Shape::new(1, 8, 16, 16));
        let y = csp_block(&Exec::default(), &x, 8, 1, 0.1, &w, "blk").unwrap();
        assert!(y.slice_channels(0, 4).unwrap().bit_eq(&x.slice_channels(0, 4).unwrap()));
    }

    #[test]
    fn blocks_preserve_shape() {
        let x = seeded_input(2, Shape::new(1, 8, 16, 16));
        let exec = Exec::default();
        let csp = csp_block(&exec, &x, 8, 2, 0.1, &block_weights(StageBlockKind::Csp, 8, 2, None), "blk").unwrap();
        assert_eq!(csp.shape(), x.shape());
        let elan = elan_block(&exec, &x, 8, 2, 0.1, &block_weights(StageBlockKind::Elan, 8, 2, None), "blk").unwrap();
        assert_eq!(elan.shape(), x.shape());
        let tap = seeded_input(3, Shape::new(1, 2, 16, 16));
        let w = block_weights(StageBlockKind::Msp, 8, 2, Some(2));
        let msp = msp_block(&exec, &x, Some(&tap), 8, 2, 0.1, &w, "blk").unwrap();
        assert_eq!(msp.out.shape(), x.shape());
        assert!(msp.bypass.bit_eq(&x.slice_channels(0, 4).unwrap()));
    }

    #[test]
    fn csp_rejects_odd_width() {
        let x = seeded_input(2, Shape::new(1, 7, 4, 4));
        let w = WeightContainer::new();
        assert!(matches!(csp_block(&Exec::default(), &x, 7, 1, 0.1, &w, "blk"), Err(Error::Config(_))));
    }

    #[test]
    fn elan_depth_one_fuses_two_members() {
        // A fuse expecting 2 * width inputs must be accepted, anything else rejected.
        let x = seeded_input(4, Shape::new(1, 6, 8, 8));
        let w = block_weights(StageBlockKind::Elan, 6, 1, None);
        assert_eq!(w.get("blk.fuse.weight").unwrap().shape, vec![6, 12, 1, 1]);
        assert!(elan_block(&Exec::default(), &x, 6, 1, 0.1, &w, "blk").is_ok());
    }

    #[test]
    fn msp_tap_must_match_spatially() {
        let x = seeded_input(5, Shape::new(1, 8, 8, 8));
        let tap = seeded_input(6, Shape::new(1, 2, 4, 4));
        let w = block_weights(StageBlockKind::Msp, 8, 1, Some(2));
        assert!(matches!(
            msp_block(&Exec::default(), &x, Some(&tap), 8, 1, 0.1, &w, "blk"),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn feature_strides_for_64x64() {
        for kind in [StageBlockKind::Csp, StageBlockKind::Elan, StageBlockKind::Msp] {
            let cfg = BackboneConfig::desk(kind);
            let mut l = Vec::new();
            layout(&cfg, &mut l);
            let w = WeightContainer::seeded(&l, 42);
            let img = seeded_input(7, Shape::new(1, 3, 64, 64));
            let f = backbone_forward(&img, &cfg, &w).unwrap();
            let dims: Vec<_> = f.levels.iter().map(|t| t.shape()).collect();
            assert_eq!(
                dims,
                vec![
                    Shape::new(1, 16, 16, 16),
                    Shape::new(1, 32, 8, 8),
                    Shape::new(1, 64, 4, 4),
                    Shape::new(1, 128, 2, 2)
                ]
            );
            assert!(f.bit_eq(&backbone_forward(&img, &cfg, &w).unwrap()));
            assert!(f.levels.iter().all(|t| t.is_finite()));
        }
    }

    #[test]
    fn rejects_bad_image_size() {
        let cfg = BackboneConfig::desk(StageBlockKind::Csp);
        let img = Tensor::zeros(Shape::new(1, 3, 48, 64)).unwrap();
        assert!(matches!(backbone_forward(&img, &cfg, &WeightContainer::new()), Err(Error::Input(_))));
    }

    #[test]
    fn validation_names_offending_field() {
        let mut cfg = BackboneConfig::desk(StageBlockKind::Csp);
        cfg.stage_channels[2] = 65;
        cfg.stage_channels[3] = 129;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("stage_channels[2]") && err.contains("stage 3"), "{err}");
        let mut cfg = BackboneConfig::desk(StageBlockKind::Elan);
        cfg.stage_channels = [32, 16, 64, 128];
        assert!(cfg.validate().unwrap_err().to_string().contains("stage_channels[1]"));
        let mut cfg = BackboneConfig::desk(StageBlockKind::Elan);
        cfg.stage_channels = [15, 33, 64, 128];
        assert!(cfg.validate().is_ok());
    }
}

//! Analytic parameter and FLOP counts.
//!
//! Convention: FLOPs = 2 x multiply-accumulates. A convolution costs
//! `2 * kh * kw * cin * cout * ho * wo`; activations, resampling, channel
//! concatenation and residual adds cost one operation per output element and
//! are charged to the conv node they follow or feed. Concatenations of the
//! pyramid outputs have no conv node and appear as `pyramid.lead{k}` and
//! `pyramid.aux{k}`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::backbone::{StageBlockKind, FEATURE_STRIDES, NUM_STAGES};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};

pub const FLOP_CONVENTION: &str = "FLOPs = 2 x multiply-accumulates; elementwise ops 1 per output element";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeCost {
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub convention: &'static str,
    /// `[height, width]` the FLOPs refer to; absent for parameter-only reports.
    pub input_size: Option<[usize; 2]>,
    pub total: NodeCost,
    /// Per node, in graph order.
    pub nodes: Vec<(String, NodeCost)>,
}

impl CostReport {
    pub fn node(&self, name: &str) -> Option<NodeCost> {
        self.nodes.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.nodes.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        match self.input_size {
            Some([h, w]) => writeln!(s, "# input {h}x{w}; {FLOP_CONVENTION}").unwrap(),
            None => writeln!(s, "# parameters only").unwrap(),
        }
        writeln!(s, "{:<width$}  {:>12}  {:>14}", "node", "params", "flops").unwrap();
        for (n, c) in &self.nodes {
            writeln!(s, "{n:<width$}  {:>12}  {:>14}", c.params, c.flops).unwrap();
        }
        writeln!(s, "{:<width$}  {:>12}  {:>14}", "total", self.total.params, self.total.flops).unwrap();
        s
    }
}

struct Walker {
    /// Spatial area multiplier; zero when only parameters are counted.
    hw: Option<(usize, usize)>,
    nodes: Vec<(String, NodeCost)>,
}

impl Walker {
    /// Output area at `stride`, or 0 without an input size.
    fn area(&self, stride: usize) -> u64 {
        self.hw.map_or(0, |(h, w)| ((h / stride) * (w / stride)) as u64)
    }

    /// A conv node producing `cout` maps at `stride`; `extra` elementwise
    /// output elements per pixel are charged to it as well.
    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, stride: usize, extra: u64) {
        let (cin, cout, k) = (cin as u64, cout as u64, k as u64);
        let a = self.area(stride);
        self.nodes.push((
            name,
            NodeCost {
                params: cout * cin * k * k + cout,
                flops: 2 * k * k * cin * cout * a + extra * a,
            },
        ));
    }

    fn op(&mut self, name: String, elems_per_pixel: u64, stride: usize) {
        let a = self.area(stride);
        self.nodes.push((
            name,
            NodeCost {
                params: 0,
                flops: elems_per_pixel * a,
            },
        ));
    }

    /// Charges extra elementwise work to an existing node.
    fn charge(&mut self, name: &str, flops: u64) {
        let node = self.nodes.iter_mut().rev().find(|(n, _)| n == name).expect("node exists");
        node.1.flops += flops;
    }
}

fn walk_backbone(cfg: &PipelineConfig, w: &mut Walker) {
    let b = &cfg.backbone;
    let d = b.block_depth;
    let stem = b.stem_channels;
    w.conv("backbone.stem.conv1".into(), 3, stem, 2, 2, stem as u64);
    w.conv("backbone.stem.conv2".into(), stem, stem, 3, 2, stem as u64);
    let mut prev = stem;
    let mut tap_ch = stem / 2;
    for st in 0..NUM_STAGES {
        let c = b.stage_channels[st];
        let h = c / 2;
        let s = FEATURE_STRIDES[st];
        let stage = format!("backbone.stage{}", st + 1);
        w.conv(format!("{stage}.down"), prev, c, 2, s, c as u64);
        for blk in 0..b.blocks_per_stage[st] {
            let node = format!("{stage}.block{blk}");
            match b.kind {
                StageBlockKind::Csp => {
                    for i in 1..=d {
                        // act + residual add
                        w.conv(format!("{node}.conv{i}"), h, h, 3, s, 2 * h as u64);
                    }
                    // concatenation of both halves
                    w.conv(format!("{node}.fuse"), c, c, 1, s, c as u64);
                }
                StageBlockKind::Elan => {
                    for i in 1..=d {
                        w.conv(format!("{node}.conv{i}"), c, c, 3, s, c as u64);
                    }
                    let cat = (d + 1) * c;
                    w.conv(format!("{node}.fuse"), cat, c, 1, s, cat as u64);
                }
                StageBlockKind::Msp => {
                    // the projected tap joins the processed half: one concat
                    w.conv(format!("{node}.tap_proj"), tap_ch, h, 1, s, c as u64);
                    if blk == 0 {
                        let a = w.area(s);
                        w.charge(&format!("{node}.tap_proj"), tap_ch as u64 * a);
                    }
                    for i in 1..=d {
                        w.conv(format!("{node}.conv{i}"), c, c, 3, s, 2 * c as u64);
                    }
                    let cat = h + (d + 1) * c;
                    w.conv(format!("{node}.fuse"), cat, c, 1, s, cat as u64);
                }
            }
        }
        prev = c;
        tap_ch = h;
    }
}

fn walk_pyramid(cfg: &PipelineConfig, w: &mut Walker) {
    let p = &cfg.pyramid;
    let feat = cfg.backbone.stage_channels;
    let cp = p.path_width;
    let levels = p.num_levels;
    let stride = |k: usize| 32usize >> (k - 1);
    for j in 1..=p.num_paths {
        for k in 1..=levels {
            let base = format!("pyramid.path{j}.core{k}");
            let s = stride(k);
            let mut n = 0;
            for i in [4isize - k as isize, 3 - k as isize] {
                if !(0..NUM_STAGES as isize).contains(&i) {
                    continue;
                }
                let i = i as usize;
                let name = format!("{base}.proj_x{i}");
                w.conv(name.clone(), feat[i], cp, 1, s, 0);
                // X_{3-k} is one octave finer: one 2x average pool
                if FEATURE_STRIDES[i] < s {
                    let a = w.area(s);
                    w.charge(&name, feat[i] as u64 * a);
                }
                n += 1;
            }
            if k > 1 {
                // CORE_{k-1} is upsampled once
                w.conv(format!("{base}.proj_prev"), cp, cp, 1, s, cp as u64);
                n += 1;
            }
            w.conv(format!("{base}.fuse"), n * cp, cp, 3, s, (n * cp + cp) as u64);
        }
        for k in (1..=levels).rev() {
            let base = format!("pyramid.path{j}.bfm{k}");
            let s = stride(k);
            if k == levels {
                w.conv(format!("{base}.fuse"), cp, cp, 1, s, cp as u64);
            } else {
                w.conv(format!("{base}.proj_next"), cp, cp, 1, s, cp as u64);
                w.conv(format!("{base}.fuse"), 2 * cp, cp, 3, s, 3 * cp as u64);
            }
        }
    }
    let fused = (p.num_paths * cp) as u64;
    for k in 1..=levels {
        w.op(format!("pyramid.lead{k}"), fused, stride(k));
        w.op(format!("pyramid.aux{k}"), fused, stride(k));
    }
}

fn walk_heads(cfg: &PipelineConfig, w: &mut Walker) {
    let p = &cfg.pyramid;
    let fused = p.num_paths * p.path_width;
    let nc = cfg.head.num_classes;
    let anchors = cfg.head.anchor_set(&p.level_strides).per_level();
    for k in 1..=p.num_levels {
        let s = p.level_strides[k - 1];
        w.conv(format!("head.level{k}.cls"), fused, anchors * nc, 1, s, 0);
        w.conv(format!("head.level{k}.box"), fused, anchors * 4, 1, s, 0);
        w.conv(format!("head.level{k}.obj"), fused, anchors, 1, s, 0);
    }
}

fn walk(cfg: &PipelineConfig, hw: Option<(usize, usize)>) -> Result<CostReport> {
    cfg.validate()?;
    if let Some((h, wd)) = hw {
        if h == 0 || wd == 0 || h % 32 != 0 || wd % 32 != 0 {
            return Err(Error::arg(format!("input size {h}x{wd} must be positive multiples of 32")));
        }
    }
    let mut w = Walker { hw, nodes: Vec::new() };
    walk_backbone(cfg, &mut w);
    walk_pyramid(cfg, &mut w);
    walk_heads(cfg, &mut w);
    let total = w.nodes.iter().fold(NodeCost::default(), |t, (_, c)| NodeCost {
        params: t.params + c.params,
        flops: t.flops + c.flops,
    });
    Ok(CostReport {
        convention: FLOP_CONVENTION,
        input_size: hw.map(|(h, w)| [h, w]),
        total,
        nodes: w.nodes,
    })
}

/// Parameter counts per node; FLOPs are reported as zero.
pub fn count_params(cfg: &PipelineConfig) -> Result<CostReport> {
    walk(cfg, None)
}

/// Parameter and FLOP counts for an `h x w` input.
pub fn count_flops(cfg: &PipelineConfig, input_size: (usize, usize)) -> Result<CostReport> {
    walk(cfg, Some(input_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_arithmetic() {
        let mut w = Walker { hw: Some((4, 4)), nodes: vec![] };
        w.conv("a".into(), 3, 8, 3, 1, 0);
        assert_eq!(w.nodes[0].1.params, 224);
        let mut w = Walker { hw: Some((4, 4)), nodes: vec![] };
        w.conv("b".into(), 1, 1, 1, 1, 0);
        assert_eq!(w.nodes[0].1.flops, 32);
    }

    #[test]
    fn totals_are_sums_and_conv_flops_scale_by_four() {
        for kind in [StageBlockKind::Csp, StageBlockKind::Elan, StageBlockKind::Msp] {
            let cfg = PipelineConfig::desk(kind);
            let a = count_flops(&cfg, (64, 64)).unwrap();
            let b = count_flops(&cfg, (128, 128)).unwrap();
            assert_eq!(a.total.params, a.nodes.iter().map(|n| n.1.params).sum::<u64>());
            assert_eq!(a.total.flops, a.nodes.iter().map(|n| n.1.flops).sum::<u64>());
            for ((n, ca), (_, cb)) in a.nodes.iter().zip(&b.nodes) {
                assert_eq!(cb.flops, 4 * ca.flops, "{n}");
            }
            assert_eq!(count_params(&cfg).unwrap().total.params, a.total.params);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let cfg = PipelineConfig::desk(StageBlockKind::Csp);
        assert!(count_flops(&cfg, (48, 64)).is_err());
        assert!(count_flops(&cfg, (0, 64)).is_err());
    }

    #[test]
    fn table_and_json_render() {
        let r = count_flops(&PipelineConfig::desk(StageBlockKind::Csp), (64, 64)).unwrap();
        let t = r.to_table();
        assert!(t.contains("backbone.stem.conv1") && t.lines().last().unwrap().starts_with("total"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["total"]["params"].as_u64().unwrap(), r.total.params);
    }
}

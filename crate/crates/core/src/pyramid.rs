//! Parallel residual bi-fusion pyramid.
//!
//! `J` independent paths each run a bottom-up CORE chain over levels
//! `k = 1..K` and a top-down BFM chain back from `K` to `1`. Level `k` sits at
//! stride `32 / 2^(k-1)`, so `k = 1` is the coarsest map.
//!
//! ```text
//! CORE_k = fuse3x3(cat(proj(X_{4-k}), proj(X_{3-k}), proj(CORE_{k-1})))
//! BFM_K  = fuse1x1(CORE_K)
//! BFM_k  = fuse3x3(cat(CORE_k, proj(BFM_{k+1})))
//! lead_k = cat(BFM^1_k, .., BFM^J_k)
//! aux_k  = cat(CORE^1_k, .., CORE^J_k)
//! ```
//!
//! Inputs whose index falls outside `X_0..X_3`, and `CORE_0`, are left out.
//! Every input is resampled to the level stride before its 1x1 projection.

use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureSet, FEATURE_STRIDES, NUM_STAGES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;
use crate::weights::{push_conv, ParamSpec, WeightContainer};

pub const MAX_LEVELS: usize = 4;

fn default_slope() -> f32 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidConfig {
    pub num_paths: usize,
    pub num_levels: usize,
    pub path_width: usize,
    pub level_strides: Vec<usize>,
    #[serde(default = "default_slope")]
    pub activation_slope: f32,
}

impl PyramidConfig {
    pub fn desk() -> Self {
        PyramidConfig {
            num_paths: 3,
            num_levels: 4,
            path_width: 32,
            level_strides: vec![32, 16, 8, 4],
            activation_slope: default_slope(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::config("pyramid.num_paths must be >= 1"));
        }
        if !(2..=MAX_LEVELS).contains(&self.num_levels) {
            return Err(Error::config(format!(
                "pyramid.num_levels = {} must lie in 2..={MAX_LEVELS}",
                self.num_levels
            )));
        }
        if self.path_width == 0 || self.path_width % 2 != 0 {
            return Err(Error::config(format!(
                "pyramid.path_width = {} must be even and positive",
                self.path_width
            )));
        }
        let expected: Vec<usize> = (1..=self.num_levels).map(level_stride).collect();
        if self.level_strides != expected {
            return Err(Error::config(format!(
                "pyramid.level_strides = {:?} must be {expected:?} for {} levels",
                self.level_strides, self.num_levels
            )));
        }
        if !(0.0..1.0).contains(&self.activation_slope) {
            return Err(Error::config("pyramid.activation_slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Channels of each lead and aux map.
    pub fn fused_channels(&self) -> usize {
        self.num_paths * self.path_width
    }
}

/// Stride of 1-based level `k`.
pub fn level_stride(k: usize) -> usize {
    32 >> (k - 1)
}

/// Backbone indices feeding CORE level `k`: `X_{4-k}` then `X_{3-k}`.
fn core_sources(k: usize) -> impl Iterator<Item = usize> {
    [4isize - k as isize, 3 - k as isize]
        .into_iter()
        .filter(|&i| (0..NUM_STAGES as isize).contains(&i))
        .map(|i| i as usize)
}

/// All maps of one pyramid pass. `core[j][k]` holds path `j + 1`, level `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub core: Vec<Vec<Tensor>>,
    pub bfm: Vec<Vec<Tensor>>,
    pub lead: Vec<Tensor>,
    pub aux: Vec<Tensor>,
}

impl FusionState {
    pub fn bit_eq(&self, other: &FusionState) -> bool {
        fn eq(a: &[Tensor], b: &[Tensor]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
        }
        self.core.len() == other.core.len()
            && self.core.iter().zip(&other.core).all(|(a, b)| eq(a, b))
            && self.bfm.iter().zip(&other.bfm).all(|(a, b)| eq(a, b))
            && eq(&self.lead, &other.lead)
            && eq(&self.aux, &other.aux)
    }
}

/// Brings `x` from stride `from` to stride `to` by repeated 2x steps.
pub fn resample(exec: &Exec, x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let (lo, hi) = (from.min(to), from.max(to));
    if lo == 0 || hi % lo != 0 || !(hi / lo).is_power_of_two() {
        return Err(Error::config(format!("cannot resample from stride {from} to {to}: ratio is not a power of two")));
    }
    let mut y = x.clone();
    let mut s = from;
    while s < to {
        y = exec.down2(&y)?;
        s *= 2;
    }
    while s > to {
        y = exec.up2(&y);
        s /= 2;
    }
    Ok(y)
}

fn node(path: usize, step: &str, k: usize) -> String {
    format!("pyramid.path{path}.{step}{k}")
}

/// One bottom-up fusion at level `k` (1-based) of path `path` (1-based).
///
/// `x_a` is `X_{4-k}`, `x_b` is `X_{3-k}` and `core_prev` is `CORE_{k-1}`.
#[allow(clippy::too_many_arguments)]
pub fn core_step(
    exec: &Exec,
    x_a: Option<&Tensor>,
    x_b: Option<&Tensor>,
    core_prev: Option<&Tensor>,
    k: usize,
    cfg: &PyramidConfig,
    weights: &WeightContainer,
    path: usize,
) -> Result<Tensor> {
    let target = level_stride(k);
    let base = node(path, "core", k);
    let mut inputs: Vec<(String, &Tensor, usize)> = Vec::with_capacity(3);
    for (i, x) in [(4isize - k as isize, x_a), (3 - k as isize, x_b)] {
        if let Some(x) = x {
            if !(0..NUM_STAGES as isize).contains(&i) {
                return Err(Error::arg(format!("{base}: X_{i} does not exist")));
            }
            inputs.push((format!("proj_x{i}"), x, FEATURE_STRIDES[i as usize]));
        }
    }
    if let Some(p) = core_prev {
        if k < 2 {
            return Err(Error::arg(format!("{base}: level 1 has no previous CORE")));
        }
        inputs.push(("proj_prev".into(), p, level_stride(k - 1)));
    }
    if inputs.is_empty() {
        return Err(Error::arg(format!("{base}: no fusion inputs")));
    }
    let cp = cfg.path_width;
    let mut projected = Vec::with_capacity(inputs.len());
    for (slot, x, stride) in inputs {
        let r = resample(exec, x, stride, target)?;
        let spec = weights.conv(&format!("{base}.{slot}"), r.channels(), cp, 1, 1, 0)?;
        projected.push(exec.conv(&r, &spec)?);
    }
    let refs: Vec<&Tensor> = projected.iter().collect();
    let cat = exec.cat(&refs)?;
    let spec = weights.conv(&format!("{base}.fuse"), cat.channels(), cp, 3, 1, 1)?;
    Ok(exec.leaky(&exec.conv(&cat, &spec)?, cfg.activation_slope))
}

/// One top-down fusion at level `k` (1-based). `bfm_next` must be given
/// exactly when `k < K`.
#[allow(clippy::too_many_arguments)]
pub fn bfm_step(
    exec: &Exec,
    core_k: &Tensor,
    bfm_next: Option<&Tensor>,
    k: usize,
    cfg: &PyramidConfig,
    weights: &WeightContainer,
    path: usize,
) -> Result<Tensor> {
    let base = node(path, "bfm", k);
    let cp = cfg.path_width;
    let slope = cfg.activation_slope;
    match bfm_next {
        None => {
            if k != cfg.num_levels {
                return Err(Error::arg(format!("{base}: only level {} may omit the next BFM", cfg.num_levels)));
            }
            let spec = weights.conv(&format!("{base}.fuse"), core_k.channels(), cp, 1, 1, 0)?;
            Ok(exec.leaky(&exec.conv(core_k, &spec)?, slope))
        }
        Some(next) => {
            let up = resample(exec, next, level_stride(k + 1), level_stride(k))?;
            let (a, b) = (up.shape(), core_k.shape());
            if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
                return Err(Error::shape(format!("{base}: resampled BFM {a} does not match CORE {b}")));
            }
            let proj = weights.conv(&format!("{base}.proj_next"), up.channels(), cp, 1, 1, 0)?;
            let p = exec.conv(&up, &proj)?;
            let cat = exec.cat(&[core_k, &p])?;
            let spec = weights.conv(&format!("{base}.fuse"), cat.channels(), cp, 3, 1, 1)?;
            Ok(exec.leaky(&exec.conv(&cat, &spec)?, slope))
        }
    }
}

type PathMaps = (Vec<Tensor>, Vec<Tensor>);

fn run_path(
    exec: &Exec,
    features: &FeatureSet,
    cfg: &PyramidConfig,
    weights: &WeightContainer,
    path: usize,
) -> Result<PathMaps> {
    let levels = cfg.num_levels;
    let mut core: Vec<Tensor> = Vec::with_capacity(levels);
    for k in 1..=levels {
        let mut src = core_sources(k).map(|i| features.get(i));
        let (x_a, x_b) = (src.next(), src.next());
        core.push(core_step(exec, x_a, x_b, core.last(), k, cfg, weights, path)?);
    }
    let mut bfm: Vec<Option<Tensor>> = vec![None; levels];
    for k in (1..=levels).rev() {
        let next = if k < levels { bfm[k].as_ref() } else { None };
        bfm[k - 1] = Some(bfm_step(exec, &core[k - 1], next, k, cfg, weights, path)?);
    }
    Ok((core, bfm.into_iter().map(Option::unwrap).collect()))
}

fn assemble(exec: &Exec, cfg: &PyramidConfig, paths: Vec<PathMaps>) -> Result<FusionState> {
    let (core, bfm): (Vec<_>, Vec<_>) = paths.into_iter().unzip();
    let mut lead = Vec::with_capacity(cfg.num_levels);
    let mut aux = Vec::with_capacity(cfg.num_levels);
    for k in 0..cfg.num_levels {
        let b: Vec<&Tensor> = bfm.iter().map(|p: &Vec<Tensor>| &p[k]).collect();
        let c: Vec<&Tensor> = core.iter().map(|p: &Vec<Tensor>| &p[k]).collect();
        lead.push(exec.cat(&b)?);
        aux.push(exec.cat(&c)?);
    }
    Ok(FusionState { core, bfm, lead, aux })
}

fn check_features(features: &FeatureSet) -> Result<()> {
    let base = features.get(0).shape();
    for (i, x) in features.levels.iter().enumerate() {
        let s = x.shape();
        let f = FEATURE_STRIDES[i] / FEATURE_STRIDES[0];
        if s.n != base.n || s.h * f != base.h || s.w * f != base.w {
            return Err(Error::shape(format!("X_{i} {s} is inconsistent with X_0 {base}")));
        }
    }
    Ok(())
}

/// Runs all paths concurrently; path `j` only reads its own weights.
pub fn pyramid_forward(
    exec: &Exec,
    features: &FeatureSet,
    cfg: &PyramidConfig,
    weights: &WeightContainer,
) -> Result<FusionState> {
    cfg.validate()?;
    check_features(features)?;
    let results: Vec<Result<PathMaps>> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=cfg.num_paths)
            .map(|j| s.spawn(move || run_path(exec, features, cfg, weights, j)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("pyramid path panicked")).collect()
    });
    // Lowest-numbered failing path wins.
    let paths = results.into_iter().collect::<Result<Vec<_>>>()?;
    assemble(exec, cfg, paths)
}

/// Runs the paths one after another in `order` (1-based path indices, a
/// permutation of `1..=J`). The result never depends on the order.
pub fn pyramid_forward_ordered(
    exec: &Exec,
    features: &FeatureSet,
    cfg: &PyramidConfig,
    weights: &WeightContainer,
    order: &[usize],
) -> Result<FusionState> {
    cfg.validate()?;
    check_features(features)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (1..=cfg.num_paths).collect::<Vec<_>>() {
        return Err(Error::arg(format!("{order:?} is not a permutation of 1..={}", cfg.num_paths)));
    }
    let mut slots: Vec<Option<PathMaps>> = vec![None; cfg.num_paths];
    for &j in order {
        slots[j - 1] = Some(run_path(exec, features, cfg, weights, j)?);
    }
    assemble(exec, cfg, slots.into_iter().map(Option::unwrap).collect())
}

/// Every parameter the pyramid reads; `feature_channels[i]` is the width of `X_i`.
pub fn layout(cfg: &PyramidConfig, feature_channels: [usize; NUM_STAGES], out: &mut Vec<ParamSpec>) {
    let cp = cfg.path_width;
    for j in 1..=cfg.num_paths {
        for k in 1..=cfg.num_levels {
            let base = node(j, "core", k);
            let mut n = 0;
            for i in core_sources(k) {
                push_conv(out, &format!("{base}.proj_x{i}"), feature_channels[i], cp, 1);
                n += 1;
            }
            if k > 1 {
                push_conv(out, &format!("{base}.proj_prev"), cp, cp, 1);
                n += 1;
            }
            push_conv(out, &format!("{base}.fuse"), n * cp, cp, 3);
        }
        for k in (1..=cfg.num_levels).rev() {
            let base = node(j, "bfm", k);
            if k == cfg.num_levels {
                push_conv(out, &format!("{base}.fuse"), cp, cp, 1);
            } else {
                push_conv(out, &format!("{base}.proj_next"), cp, cp, 1);
                push_conv(out, &format!("{base}.fuse"), 2 * cp, cp, 3);
            }
        }
    }
}

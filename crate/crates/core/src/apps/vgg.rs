// SPDX-License-Identifier: Apache-2.0
//! VGG-style inference over a Convolution + Maxpool overlay.
//!
//! Queue 0 runs the 13 convolution layers and the 3 fully connected layers,
//! queue 1 the 5 max-pooling layers. Intermediate maps travel through the
//! overlay's feature buffer; the input comes from `X` and the last pool
//! writes to `Y`, where the FC layers then work in place.
//!
//! Layouts: `X` is `H × W × C × n`; `Y` is `L × n` with one column per input
//! map; conv weights are grouped by stage as `3 × 3 × Cin_max × Cout × layers`
//! (layers with fewer input channels use a prefix of axis 2); FC weights are
//! `In × Out`.

use std::path::Path;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::kernels::ConvControlFlags;
use crate::overlay::{IpDescriptor, IpKind, Overlay, OverlayBuilder};
use crate::runtime::{
    build_task_graph, run_with, Arg, ExecutionTrace, RuleSet, RunOptions, TaskGraph, TaskInstance, TaskKind,
};
use crate::tensor::{BlockView, Fill, TensorBuffer};

use super::require_layout;

const LAYOUT: [IpKind; 2] = [IpKind::Convolution, IpKind::Maxpool];

const DDR_TO_FB: ConvControlFlags = ConvControlFlags::new(false, true, true, false);
const FB_TO_FB: ConvControlFlags = ConvControlFlags::new(true, true, true, false);
const FC: ConvControlFlags = ConvControlFlags::new(false, false, true, true);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VggConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stage_channels: [usize; 5],
    pub fc_widths: [usize; 3],
    /// Number of input maps.
    pub batch: usize,
}

impl VggConfig {
    pub const STAGE_LAYERS: [usize; 5] = [2, 2, 3, 3, 3];
    pub const CONV_LAYERS: usize = 13;
    pub const TASKS_PER_MAP: usize = 21;

    pub fn tiny(batch: usize) -> Self {
        VggConfig {
            height: 32,
            width: 32,
            channels: 3,
            stage_channels: [2, 2, 4, 4, 4],
            fc_widths: [8, 8, 4],
            batch,
        }
    }

    pub fn small(batch: usize) -> Self {
        VggConfig {
            height: 64,
            width: 64,
            channels: 3,
            stage_channels: [4, 4, 8, 8, 8],
            fc_widths: [8, 8, 4],
            batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input extents {}x{} must be positive multiples of 32",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.stage_channels.contains(&0) || self.fc_widths.contains(&0) {
            return Err(Error::Config("channel counts and FC widths must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }

    /// `(Cin, Cout)` of each convolution layer.
    pub fn conv_layers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(Self::CONV_LAYERS);
        let mut cin = self.channels;
        for (stage, &count) in Self::STAGE_LAYERS.iter().enumerate() {
            let cout = self.stage_channels[stage];
            for _ in 0..count {
                out.push((cin, cout));
                cin = cout;
            }
        }
        out
    }

    /// `(stage, index within stage)` of a convolution layer.
    pub fn conv_position(&self, layer: usize) -> (usize, usize) {
        let mut rest = layer;
        for (stage, &count) in Self::STAGE_LAYERS.iter().enumerate() {
            if rest < count {
                return (stage, rest);
            }
            rest -= count;
        }
        panic!("convolution layer {layer} out of range");
    }

    /// Shape of each stage's grouped weight tensor.
    pub fn conv_weight_shapes(&self) -> Vec<[usize; 5]> {
        let layers = self.conv_layers();
        let mut first = 0;
        Self::STAGE_LAYERS
            .iter()
            .enumerate()
            .map(|(stage, &count)| {
                let cin_max = layers[first..first + count].iter().map(|l| l.0).max().unwrap_or(1);
                first += count;
                [3, 3, cin_max, self.stage_channels[stage], count]
            })
            .collect()
    }

    /// Length of the flattened map after the last pool.
    pub fn flat_len(&self) -> usize {
        (self.height / 32) * (self.width / 32) * self.stage_channels[4]
    }

    /// `(In, Out)` of each FC layer.
    pub fn fc_dims(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.fc_widths;
        [(self.flat_len(), a), (a, b), (b, c)]
    }

    /// Rows of `Y`: large enough for the pooled map and every FC output.
    pub fn y_len(&self) -> usize {
        self.fc_widths.iter().copied().fold(self.flat_len(), usize::max)
    }

    pub fn output_len(&self) -> usize {
        self.fc_widths[2]
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.height, self.width, self.channels, self.batch]
    }
}

/// Seeded input maps, uniform in `[-1, 1)`.
pub fn vgg_input<T: Element>(config: &VggConfig, seed: u64) -> Result<TensorBuffer<T>> {
    Ok(TensorBuffer::new(
        &config.input_shape(),
        Fill::Uniform {
            lo: -1.0,
            hi: 1.0,
            seed,
        },
    )?)
}

#[derive(Debug, Clone)]
pub struct VggWeights<T: Element = f64> {
    /// One grouped tensor per stage.
    pub conv: Vec<TensorBuffer<T>>,
    pub fc: Vec<TensorBuffer<T>>,
}

impl<T: Element> VggWeights<T> {
    fn build(config: &VggConfig, fill: impl Fn(&str, usize) -> Fill<T>) -> Result<Self> {
        config.validate()?;
        let conv = config
            .conv_weight_shapes()
            .iter()
            .enumerate()
            .map(|(k, s)| TensorBuffer::new(s, fill("conv", k)))
            .collect::<Result<Vec<_>, _>>()?;
        let fc = config
            .fc_dims()
            .iter()
            .enumerate()
            .map(|(k, &(i, o))| TensorBuffer::new(&[i, o], fill("fc", k)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VggWeights { conv, fc })
    }

    /// Uniform in `[-0.1, 0.1)`; every tensor draws from its own stream.
    pub fn seeded(config: &VggConfig, seed: u64) -> Result<Self> {
        Self::build(config, |group, k| Fill::Uniform {
            lo: -0.1,
            hi: 0.1,
            seed: seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(if group == "conv" { k } else { 16 + k } as u64 + 1),
        })
    }

    pub fn zeros(config: &VggConfig) -> Result<Self> {
        Self::build(config, |_, _| Fill::Zeros)
    }

    /// Tensor-text files `conv0.txt`..`conv4.txt` and `fc0.txt`..`fc2.txt`.
    pub fn from_dir(config: &VggConfig, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::build(config, |group, k| Fill::File(dir.join(format!("{group}{k}.txt"))))
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (k, w) in self.conv.iter().enumerate() {
            w.save_text(dir.join(format!("conv{k}.txt")))?;
        }
        for (k, w) in self.fc.iter().enumerate() {
            w.save_text(dir.join(format!("fc{k}.txt")))?;
        }
        Ok(())
    }

    /// `3 × 3 × Cin × Cout` window of a layer's weights.
    pub fn conv_weight_view(&self, config: &VggConfig, layer: usize) -> Result<BlockView<T>> {
        let (stage, l) = config.conv_position(layer);
        let cin = config.conv_layers()[layer].0;
        Ok(self.conv[stage].cropped(4, l, 1)?.crop(2, 0, cin)?)
    }

    fn check(&self, config: &VggConfig) -> Result<()> {
        let conv_ok = self.conv.len() == 5
            && self
                .conv
                .iter()
                .zip(config.conv_weight_shapes())
                .all(|(w, s)| w.shape() == s);
        let fc_ok = self.fc.len() == 3
            && self
                .fc
                .iter()
                .zip(config.fc_dims())
                .all(|(w, (i, o))| w.shape() == [i, o]);
        if conv_ok && fc_ok {
            Ok(())
        } else {
            Err(Error::Config("weight shapes do not match the network configuration".into()))
        }
    }
}

pub fn vgg_overlay<T: Element>() -> Result<Overlay<T>> {
    let mut b = OverlayBuilder::new("vgg");
    for (q, kind) in LAYOUT.into_iter().enumerate() {
        b.command(&IpDescriptor::new(kind), q, kind.formal_signature())?;
    }
    Ok(b.build()?)
}

fn conv_kind(k: usize) -> TaskKind {
    TaskKind::indexed("ConvLayers", k)
}

fn pool_kind(k: usize) -> TaskKind {
    TaskKind::indexed("MaxpoolLayer", k)
}

fn fc_kind(k: usize) -> TaskKind {
    TaskKind::indexed("FCLayers", k)
}

/// Cross-queue dependences: each pool waits for the last conv of its stage,
/// the first conv of the next stage waits for the pool, and the first FC
/// waits for the last pool.
pub fn vgg_rules() -> RuleSet {
    let kinds = (0..VggConfig::CONV_LAYERS)
        .map(conv_kind)
        .chain((0..5).map(pool_kind))
        .chain((0..3).map(fc_kind));
    let mut rules = RuleSet::with_kinds(kinds);
    let mut last = 0;
    for (stage, &count) in VggConfig::STAGE_LAYERS.iter().enumerate() {
        last += count;
        rules
            .depend(pool_kind(stage), conv_kind(last - 1), 0, None)
            .expect("declared kinds");
        let next = if stage < 4 { conv_kind(last) } else { fc_kind(0) };
        rules.depend(next, pool_kind(stage), 0, None).expect("declared kinds");
    }
    rules
}

/// Enqueue the 21-task sequence for every input map.
pub fn vgg_generate_tasks<T: Element>(
    config: &VggConfig,
    x: &TensorBuffer<T>,
    y: &TensorBuffer<T>,
    weights: &VggWeights<T>,
    overlay: &Overlay<T>,
) -> Result<(Vec<TaskInstance<T>>, RuleSet)> {
    config.validate()?;
    weights.check(config)?;
    if x.shape() != config.input_shape() {
        return Err(Error::Config(format!(
            "X has shape {:?}, expected {:?}",
            x.shape(),
            config.input_shape()
        )));
    }
    if y.shape() != [config.y_len(), config.batch] {
        return Err(Error::Config(format!(
            "Y has shape {:?}, expected {:?}",
            y.shape(),
            [config.y_len(), config.batch]
        )));
    }
    require_layout(overlay, &LAYOUT)?;

    // stands in for operands a flag routes through the feature buffer
    let dummy: BlockView<T> = TensorBuffer::zeros(&[1])?.view();
    let conv_views: Vec<BlockView<T>> = (0..VggConfig::CONV_LAYERS)
        .map(|l| weights.conv_weight_view(config, l))
        .collect::<Result<_>>()?;
    let fc_views: Vec<BlockView<T>> = weights.fc.iter().map(TensorBuffer::view).collect();
    let flags = |f: ConvControlFlags| f.as_array().map(Arg::Flag);

    for i in 0..config.batch {
        let input = x.cropped(3, i, 1)?;
        let out = y.cropped(1, i, 1)?;
        let mut layer = 0;
        for (stage, &count) in VggConfig::STAGE_LAYERS.iter().enumerate() {
            for _ in 0..count {
                let (src, f) = if layer == 0 {
                    (input.clone(), DDR_TO_FB)
                } else {
                    (dummy.clone(), FB_TO_FB)
                };
                let mut args = vec![src.into(), dummy.clone().into(), conv_views[layer].clone().into()];
                args.extend(flags(f));
                overlay.enqueue(0, conv_kind(layer), i, args)?;
                layer += 1;
            }
            let (dst, to_fb) = if stage < 4 { (dummy.clone(), true) } else { (out.clone(), false) };
            overlay.enqueue(1, pool_kind(stage), i, vec![dst.into(), Arg::Flag(to_fb)])?;
        }
        for (k, w) in fc_views.iter().enumerate() {
            let mut args = vec![out.clone().into(), out.clone().into(), w.clone().into()];
            args.extend(flags(FC));
            overlay.enqueue(0, fc_kind(k), i, args)?;
        }
    }
    Ok((overlay.drain(), vgg_rules()))
}

pub fn vgg_task_graph<T: Element>(
    config: &VggConfig,
    x: &TensorBuffer<T>,
    y: &TensorBuffer<T>,
    weights: &VggWeights<T>,
    overlay: &Overlay<T>,
) -> Result<TaskGraph<T>> {
    let (tasks, rules) = vgg_generate_tasks(config, x, y, weights, overlay)?;
    Ok(build_task_graph(tasks, &rules)?)
}

#[derive(Debug, Clone)]
pub struct VggRun<T: Element = f64> {
    /// `L × n`; column `i` starts with the final FC outputs of map `i`.
    pub y: TensorBuffer<T>,
    pub trace: ExecutionTrace,
}

impl<T: Element> VggRun<T> {
    /// Final FC outputs, one vector per input map.
    pub fn outputs(&self, config: &VggConfig) -> Vec<Vec<T>> {
        (0..config.batch)
            .map(|i| (0..config.output_len()).map(|k| self.y.get(&[k, i])).collect())
            .collect()
    }
}

pub fn vgg_forward<T: Element>(
    config: &VggConfig,
    x: &TensorBuffer<T>,
    weights: &VggWeights<T>,
    workers: usize,
) -> Result<VggRun<T>> {
    vgg_forward_with(config, x, weights, &vgg_overlay()?, RunOptions::new(workers))
}

pub fn vgg_forward_with<T: Element>(
    config: &VggConfig,
    x: &TensorBuffer<T>,
    weights: &VggWeights<T>,
    overlay: &Overlay<T>,
    opts: RunOptions,
) -> Result<VggRun<T>> {
    let y = TensorBuffer::zeros(&[config.y_len(), config.batch])?;
    let graph = vgg_task_graph(config, x, &y, weights, overlay)?;
    let trace = run_with(overlay, &graph, opts)?;
    Ok(VggRun { y, trace })
}

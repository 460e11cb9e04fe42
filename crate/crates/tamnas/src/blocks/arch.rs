//! Parameter-shape enumeration: the single source of truth for every tensor
//! a subnet owns, at both full supernet width and the width selected by a
//! channel gene.
//!
//! Store construction, prefix slicing, scratch initialization and the
//! parameter table all derive from the same [`ParamDef`] lists, so a count
//! read from the table always equals the elements instantiated by a build.

use super::{BlockBase, BlockSpec, NonLocalKind};
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;
/// Squeeze-excitation channel reduction (floor of 1 on tiny widths).
pub const SE_REDUCTION: usize = 4;

/// Width of a block's intermediate channels for a channel gene:
/// max(1, round(ratio * base_mid)) with ratio = 0.2 * (id + 1),
/// evaluated in exact integer arithmetic.
pub fn mid_channels(channel_id: usize, base_mid: usize) -> usize {
    let t = (channel_id + 1) * base_mid;
    ((2 * t + 5) / 10).max(1)
}

/// Shape of one choice layer in the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub index: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Kaiming-uniform with fan-in = product of non-leading axes.
    FanIn,
    Zeros,
    Ones,
}

/// One named tensor of a subnet: full supernet-width shape, current
/// (channel-gene) shape, its initializer, and whether the optimizer sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDef {
    pub name: String,
    pub full: Vec<usize>,
    pub cur: Vec<usize>,
    pub init: InitKind,
    pub learned: bool,
}

impl ParamDef {
    pub fn cur_numel(&self) -> u64 {
        self.cur.iter().product::<usize>() as u64
    }
}

/// Channel widths inside one block instance; shared by the def enumeration
/// and the forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockDims {
    pub half: usize,
    pub mid_cur: usize,
    pub mid_full: usize,
    /// Channels entering the main branch (half at stride 1, in_ch at stride 2).
    pub branch_in: usize,
    /// Non-local bottleneck (fixed for tiny robust, selector-scaled for pure robust).
    pub nl_cur: usize,
    pub nl_full: usize,
    /// Channel count the SE layer gates.
    pub se_on: usize,
    pub se_hidden: usize,
}

impl BlockDims {
    pub fn compute(layer: &LayerShape, spec: BlockSpec, channel_id: usize) -> Result<Self> {
        if channel_id > 9 {
            return Err(Error::ChannelIdOutOfRange { id: channel_id });
        }
        if spec.base == BlockBase::PureRobust && layer.stride != 1 {
            return Err(Error::IllegalPlacement {
                layer: layer.index,
                block: spec.id(),
                stride: layer.stride,
            });
        }
        if let Some(k) = spec.kernel {
            if !matches!(k, 3 | 5 | 7) {
                return Err(Error::InvalidKernel { k });
            }
        }
        if layer.out_ch % 2 != 0 {
            return Err(Error::InvalidArgument {
                op: "block_dims",
                msg: format!("layer {} out channels {} must be even", layer.index, layer.out_ch),
            });
        }
        if layer.stride == 1 && layer.in_ch != layer.out_ch {
            return Err(Error::ShapeMismatch {
                op: "block_dims",
                axis_a: "stride-1 in channels".into(),
                axis_b: "out channels".into(),
                dim_a: layer.in_ch,
                dim_b: layer.out_ch,
            });
        }
        let base_mid = layer.out_ch / 2;
        Ok(match spec.base {
            BlockBase::PureRobust => {
                let c = layer.out_ch;
                BlockDims {
                    half: base_mid,
                    mid_cur: mid_channels(channel_id, base_mid),
                    mid_full: mid_channels(9, base_mid),
                    branch_in: c,
                    nl_cur: mid_channels(channel_id, base_mid),
                    nl_full: mid_channels(9, base_mid),
                    se_on: c,
                    se_hidden: (c / SE_REDUCTION).max(1),
                }
            }
            _ => {
                let half = layer.out_ch / 2;
                let nb = (half / 2).max(1);
                BlockDims {
                    half,
                    mid_cur: mid_channels(channel_id, base_mid),
                    mid_full: mid_channels(9, base_mid),
                    branch_in: if layer.stride == 1 { half } else { layer.in_ch },
                    nl_cur: nb,
                    nl_full: nb,
                    se_on: half,
                    se_hidden: (half / SE_REDUCTION).max(1),
                }
            }
        })
    }
}

/// Builder collecting defs under a dotted name prefix.
struct Defs {
    prefix: String,
    out: Vec<ParamDef>,
}

/// (full, cur) width pair for one axis.
type W = (usize, usize);

fn same(w: usize) -> W {
    (w, w)
}

impl Defs {
    fn new(prefix: &str) -> Self {
        Defs { prefix: prefix.to_string(), out: Vec::new() }
    }

    fn name(&self, tail: &str) -> String {
        format!("{}{}", self.prefix, tail)
    }

    fn conv(&mut self, n: &str, o: W, i: W, k: usize) {
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.w")),
            full: vec![o.0, i.0, k, k],
            cur: vec![o.1, i.1, k, k],
            init: InitKind::FanIn,
            learned: true,
        });
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.b")),
            full: vec![o.0],
            cur: vec![o.1],
            init: InitKind::Zeros,
            learned: true,
        });
    }

    fn dw(&mut self, n: &str, c: W, k: usize) {
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.w")),
            full: vec![c.0, 1, k, k],
            cur: vec![c.1, 1, k, k],
            init: InitKind::FanIn,
            learned: true,
        });
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.b")),
            full: vec![c.0],
            cur: vec![c.1],
            init: InitKind::Zeros,
            learned: true,
        });
    }

    fn bn(&mut self, n: &str, c: W) {
        for (tail, init, learned) in [
            ("g", InitKind::Ones, true),
            ("b", InitKind::Zeros, true),
            ("rm", InitKind::Zeros, false),
            ("rv", InitKind::Ones, false),
        ] {
            self.out.push(ParamDef {
                name: self.name(&format!("{n}.{tail}")),
                full: vec![c.0],
                cur: vec![c.1],
                init,
                learned,
            });
        }
    }

    fn fc(&mut self, n: &str, o: W, i: W) {
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.w")),
            full: vec![o.0, i.0],
            cur: vec![o.1, i.1],
            init: InitKind::FanIn,
            learned: true,
        });
        self.out.push(ParamDef {
            name: self.name(&format!("{n}.b")),
            full: vec![o.0],
            cur: vec![o.1],
            init: InitKind::Zeros,
            learned: true,
        });
    }

    fn nonlocal_defs(&mut self, kind: NonLocalKind, c: W, b: W) {
        if kind == NonLocalKind::EmbeddedGaussian {
            self.conv("nl.theta", b, c, 1);
            self.conv("nl.phi", b, c, 1);
        }
        self.conv("nl.g", b, c, 1);
        self.conv("nl.out", c, b, 1);
    }

    fn se_defs(&mut self, c: W, hidden: usize) {
        self.fc("se.fc1", same(hidden), c);
        self.fc("se.fc2", c, same(hidden));
    }
}

/// Name prefix for one (layer, block) pair.
pub fn block_prefix(layer_index: usize, block_id: usize) -> String {
    format!("l{layer_index}.b{block_id}.")
}

/// Every tensor of one block choice at the given channel gene.
pub fn block_defs(layer: &LayerShape, spec: BlockSpec, channel_id: usize) -> Result<Vec<ParamDef>> {
    let dims = BlockDims::compute(layer, spec, channel_id)?;
    let mut d = Defs::new(&block_prefix(layer.index, spec.id()));
    let mid = (dims.mid_full, dims.mid_cur);
    let half = same(dims.half);
    let bin = same(dims.branch_in);
    match spec.base {
        BlockBase::ShuffleV2 => {
            let k = spec.kernel.unwrap();
            d.conv("main.conv1", mid, bin, 1);
            d.bn("main.bn1", mid);
            d.dw("main.dw", mid, k);
            d.bn("main.bn2", mid);
            d.conv("main.conv2", half, mid, 1);
            d.bn("main.bn3", half);
            d.nonlocal_tiny(spec.nonlocal, dims);
            d.se_defs(half, dims.se_hidden);
            if layer.stride == 2 {
                d.proj_defs(layer.in_ch, dims.half, k);
            }
        }
        BlockBase::ShuffleXception => {
            let k = spec.kernel.unwrap();
            d.dw("main.dw1", bin, k);
            d.bn("main.bn1", bin);
            d.conv("main.conv1", mid, bin, 1);
            d.bn("main.bn2", mid);
            d.dw("main.dw2", mid, k);
            d.bn("main.bn3", mid);
            d.conv("main.conv2", mid, mid, 1);
            d.bn("main.bn4", mid);
            d.dw("main.dw3", mid, k);
            d.bn("main.bn5", mid);
            d.conv("main.conv3", half, mid, 1);
            d.bn("main.bn6", half);
            d.nonlocal_tiny(spec.nonlocal, dims);
            d.se_defs(half, dims.se_hidden);
            if layer.stride == 2 {
                d.proj_defs(layer.in_ch, dims.half, k);
            }
        }
        BlockBase::PureRobust => {
            let c = same(dims.se_on);
            d.nonlocal_defs(spec.nonlocal, c, (dims.nl_full, dims.nl_cur));
            d.se_defs(c, dims.se_hidden);
            if spec.trailing_bn {
                d.bn("post_bn", c);
            }
        }
    }
    Ok(d.out)
}

impl Defs {
    fn nonlocal_tiny(&mut self, kind: NonLocalKind, dims: BlockDims) {
        if kind != NonLocalKind::None {
            self.nonlocal_defs(kind, same(dims.se_on), same(dims.nl_cur));
        }
    }

    fn proj_defs(&mut self, in_ch: usize, half: usize, k: usize) {
        self.dw("proj.dw", same(in_ch), k);
        self.bn("proj.bn1", same(in_ch));
        self.conv("proj.conv", same(half), same(in_ch), 1);
        self.bn("proj.bn2", same(half));
    }
}

pub fn stem_defs(input_ch: usize, stem_ch: usize) -> Vec<ParamDef> {
    let mut d = Defs::new("stem.");
    d.conv("conv", same(stem_ch), same(input_ch), 3);
    d.bn("bn", same(stem_ch));
    d.out
}

pub fn tail_defs(
    last_ch: usize,
    pre_pool: usize,
    expand: usize,
    final_ch: usize,
    classes: usize,
) -> Vec<ParamDef> {
    let mut d = Defs::new("tail.");
    d.conv("prepool.conv", same(pre_pool), same(last_ch), 1);
    d.bn("prepool.bn", same(pre_pool));
    d.fc("expand", same(expand), same(pre_pool));
    let eh = (expand / SE_REDUCTION).max(1);
    d.fc("se.fc1", same(eh), same(expand));
    d.fc("se.fc2", same(expand), same(eh));
    d.fc("proj", same(final_ch), same(expand));
    d.fc("cls", same(classes), same(final_ch));
    d.out
}

/// A fully specified subnet: stem, one block choice per layer with a channel
/// gene, and the fixed tail.
#[derive(Debug, Clone)]
pub struct SubnetArch {
    pub input_ch: usize,
    pub stem_ch: usize,
    pub layers: Vec<(LayerShape, BlockSpec, usize)>,
    pub pre_pool: usize,
    pub expand: usize,
    pub final_ch: usize,
    pub classes: usize,
}

impl SubnetArch {
    /// All tensors of this subnet in deterministic (definition) order.
    pub fn param_defs(&self) -> Result<Vec<ParamDef>> {
        let mut defs = stem_defs(self.input_ch, self.stem_ch);
        for (layer, spec, cid) in &self.layers {
            defs.extend(block_defs(layer, *spec, *cid)?);
        }
        let last = self.layers.last().map(|(l, _, _)| l.out_ch).unwrap_or(self.stem_ch);
        defs.extend(tail_defs(last, self.pre_pool, self.expand, self.final_ch, self.classes));
        Ok(defs)
    }

    /// Learned-parameter count at the current channel genes
    /// (conv/fc weights and biases plus batch-norm scale/shift).
    pub fn learned_param_count(&self) -> Result<u64> {
        Ok(self
            .param_defs()?
            .iter()
            .filter(|d| d.learned)
            .map(|d| d.cur_numel())
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_channels_matches_rounding_rule() {
        // ratio 0.2 on base 24 -> round(4.8) = 5
        assert_eq!(mid_channels(0, 24), 5);
        // ratio 1.0 identity
        assert_eq!(mid_channels(4, 24), 24);
        // ratio 2.0 doubles
        assert_eq!(mid_channels(9, 24), 48);
        // floor of 1
        assert_eq!(mid_channels(0, 2), 1);
    }

    #[test]
    fn stem_parameter_count_is_672_plus_bn() {
        let defs = stem_defs(3, 24);
        let conv: u64 = defs
            .iter()
            .filter(|d| d.name.starts_with("stem.conv"))
            .map(|d| d.cur_numel())
            .sum();
        assert_eq!(conv, 672);
        let bn: u64 = defs
            .iter()
            .filter(|d| d.learned && d.name.starts_with("stem.bn"))
            .map(|d| d.cur_numel())
            .sum();
        assert_eq!(bn, 48);
    }

    #[test]
    fn pure_robust_rejects_stride_2() {
        let layer = LayerShape { index: 0, in_ch: 24, out_ch: 48, stride: 2 };
        let spec = BlockSpec::from_id(21).unwrap();
        assert!(matches!(
            block_defs(&layer, spec, 4),
            Err(Error::IllegalPlacement { layer: 0, block: 21, stride: 2 })
        ));
    }

    #[test]
    fn channel_selector_scales_only_intermediate_tensors() {
        let layer = LayerShape { index: 3, in_ch: 48, out_ch: 48, stride: 1 };
        let spec = BlockSpec::from_id(0).unwrap();
        let narrow = block_defs(&layer, spec, 0).unwrap();
        let wide = block_defs(&layer, spec, 9).unwrap();
        for (a, b) in narrow.iter().zip(&wide) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.full, b.full);
            // block outputs (conv2 out, bn3, se) keep genome-independent widths
            if a.name.contains("conv2.b") || a.name.contains("bn3") || a.name.contains("se.") {
                assert_eq!(a.cur, b.cur, "{}", a.name);
            }
        }
        // ratio 0.2 of base 24 -> 5 mid channels
        let c1 = narrow.iter().find(|d| d.name.ends_with("main.conv1.w")).unwrap();
        assert_eq!(c1.cur, vec![5, 24, 1, 1]);
        assert_eq!(c1.full, vec![48, 24, 1, 1]);
    }

    #[test]
    fn param_count_is_a_pure_function_of_shape_inputs() {
        let layer = LayerShape { index: 1, in_ch: 96, out_ch: 96, stride: 1 };
        for id in 0..22 {
            let spec = BlockSpec::from_id(id).unwrap();
            let a: u64 = block_defs(&layer, spec, 3)
                .unwrap()
                .iter()
                .filter(|d| d.learned)
                .map(|d| d.cur_numel())
                .sum();
            let b: u64 = block_defs(&layer, spec, 3)
                .unwrap()
                .iter()
                .filter(|d| d.learned)
                .map(|d| d.cur_numel())
                .sum();
            assert_eq!(a, b);
            assert!(a > 0);
        }
    }
}

//! Forward semantics for subnets assembled from choice blocks.
//!
//! Parameter tensors live in a flat name -> tensor map so the optimizer,
//! checkpoint codec and weight-sharing slicer all see the same keys that the
//! forward pass registers on the tape.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::arch::{BlockDims, InitKind, ParamDef, SubnetArch, BN_EPS, BN_MOMENTUM};
use super::{BlockBase, BlockSpec, NonLocalKind};
use crate::error::{Error, Result};
use crate::tensor::{Mode, NodeId, Tape, Tensor};

/// All tensors of one subnet: learned parameters plus batch-norm running
/// statistics, keyed by hierarchical names.
#[derive(Debug, Clone, Default)]
pub struct SubnetParams {
    pub learned: BTreeMap<String, Tensor>,
    pub stats: BTreeMap<String, Tensor>,
}

impl SubnetParams {
    /// Fresh initialization at the defs' current shapes.
    pub fn init(defs: &[ParamDef], rng: &mut ChaCha8Rng) -> Self {
        let mut p = SubnetParams::default();
        for def in defs {
            let t = match def.init {
                InitKind::FanIn => {
                    let fan_in: usize = def.cur[1..].iter().product::<usize>().max(1);
                    Tensor::kaiming_uniform(&def.cur, fan_in, rng)
                }
                InitKind::Zeros => Tensor::zeros(&def.cur),
                InitKind::Ones => Tensor::ones(&def.cur),
            };
            p.insert(def, t);
        }
        p
    }

    pub fn insert(&mut self, def: &ParamDef, t: Tensor) {
        if def.learned {
            self.learned.insert(def.name.clone(), t);
        } else {
            self.stats.insert(def.name.clone(), t);
        }
    }

    pub fn learned_count(&self) -> u64 {
        self.learned.values().map(|t| t.numel() as u64).sum()
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.learned.get(name).ok_or_else(|| Error::InvalidArgument {
            op: "subnet_forward",
            msg: format!("missing parameter {name}"),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.learned.values().all(|t| t.all_finite()) && self.stats.values().all(|t| t.all_finite())
    }
}

/// How learned tensors enter the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamReg {
    /// Differentiable named parameters (training).
    Trainable,
    /// Constants; backward only flows to explicitly-registered vars
    /// (input-gradient attacks, pure inference).
    Frozen,
}

struct Fwd<'a> {
    tape: &'a mut Tape,
    params: &'a mut SubnetParams,
    mode: Mode,
    reg: ParamReg,
}

impl<'a> Fwd<'a> {
    fn reg(&mut self, name: &str) -> Result<NodeId> {
        let t = self.params.get(name)?;
        Ok(match self.reg {
            ParamReg::Trainable => self.tape.param(name, t),
            ParamReg::Frozen => self.tape.leaf(t.clone()),
        })
    }

    fn conv(&mut self, prefix: &str, x: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let w = self.reg(&format!("{prefix}.w"))?;
        let b = self.reg(&format!("{prefix}.b"))?;
        self.tape.conv2d(x, w, Some(b), stride, pad)
    }

    fn dw(&mut self, prefix: &str, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let w = self.reg(&format!("{prefix}.w"))?;
        let b = self.reg(&format!("{prefix}.b"))?;
        self.tape.depthwise_conv2d(x, w, Some(b), stride, (k - 1) / 2)
    }

    fn bn(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let g = self.reg(&format!("{prefix}.g"))?;
        let b = self.reg(&format!("{prefix}.b"))?;
        let rm_name = format!("{prefix}.rm");
        let rv_name = format!("{prefix}.rv");
        let mut rm = self.params.stats.remove(&rm_name).ok_or_else(|| Error::InvalidArgument {
            op: "subnet_forward",
            msg: format!("missing running stats {rm_name}"),
        })?;
        let mut rv = self.params.stats.remove(&rv_name).unwrap_or_else(|| Tensor::ones(rm.shape()));
        let out = self.tape.batch_norm(
            x,
            g,
            b,
            rm.data_mut(),
            rv.data_mut(),
            BN_MOMENTUM,
            BN_EPS,
            self.mode,
        );
        self.params.stats.insert(rm_name, rm);
        self.params.stats.insert(rv_name, rv);
        out
    }

    fn fc(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = self.reg(&format!("{prefix}.w"))?;
        let b = self.reg(&format!("{prefix}.b"))?;
        self.tape.fully_connected(x, w, b)
    }

    /// Squeeze-excitation gate over the channels of a 4-d tensor.
    fn se(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let pooled = self.tape.global_avg_pool(x)?;
        let h = self.fc(&format!("{prefix}se.fc1"), pooled)?;
        let h = self.tape.relu(h);
        let gate = self.fc(&format!("{prefix}se.fc2"), h)?;
        let gate = self.tape.sigmoid(gate);
        self.tape.channel_scale(x, gate)
    }

    /// Non-local attention with residual output, embedded-Gaussian or
    /// Gaussian flavour.
    fn nonlocal_layer(&mut self, prefix: &str, kind: NonLocalKind, x: NodeId) -> Result<NodeId> {
        let shape = self.tape.value(x).shape().to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = h * w;
        let att = match kind {
            NonLocalKind::EmbeddedGaussian => {
                let theta = self.conv(&format!("{prefix}nl.theta"), x, 1, 0)?;
                let phi = self.conv(&format!("{prefix}nl.phi"), x, 1, 0)?;
                let b = self.tape.value(theta).shape()[1];
                let theta = self.tape.reshape(theta, &[n, b, hw])?;
                let phi = self.tape.reshape(phi, &[n, b, hw])?;
                let theta_t = self.tape.transpose12(theta)?;
                let logits = self.tape.bmm(theta_t, phi)?;
                self.tape.softmax(logits, 2)?
            }
            NonLocalKind::Gaussian => {
                let flat = self.tape.reshape(x, &[n, c, hw])?;
                let flat_t = self.tape.transpose12(flat)?;
                let logits = self.tape.bmm(flat_t, flat)?;
                self.tape.softmax(logits, 2)?
            }
            NonLocalKind::None => {
                return Err(Error::InvalidArgument {
                    op: "nonlocal_layer",
                    msg: "called without a non-local kind".into(),
                })
            }
        };
        let g = self.conv(&format!("{prefix}nl.g"), x, 1, 0)?;
        let b = self.tape.value(g).shape()[1];
        let g = self.tape.reshape(g, &[n, b, hw])?;
        let g_t = self.tape.transpose12(g)?;
        let y = self.tape.bmm(att, g_t)?;
        let y = self.tape.transpose12(y)?;
        let y = self.tape.reshape(y, &[n, b, h, w])?;
        let y = self.conv(&format!("{prefix}nl.out"), y, 1, 0)?;
        self.tape.add(x, y)
    }

    /// Stride-2 projection branch shared by both shuffle bases.
    fn proj_branch(&mut self, prefix: &str, x: NodeId, k: usize) -> Result<NodeId> {
        let p = self.dw(&format!("{prefix}proj.dw"), x, k, 2)?;
        let p = self.bn(&format!("{prefix}proj.bn1"), p)?;
        let p = self.conv(&format!("{prefix}proj.conv"), p, 1, 0)?;
        let p = self.bn(&format!("{prefix}proj.bn2"), p)?;
        Ok(self.tape.relu(p))
    }

    fn shuffle_v2_main(&mut self, prefix: &str, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let t = self.conv(&format!("{prefix}main.conv1"), x, 1, 0)?;
        let t = self.bn(&format!("{prefix}main.bn1"), t)?;
        let t = self.tape.relu(t);
        let t = self.dw(&format!("{prefix}main.dw"), t, k, stride)?;
        let t = self.bn(&format!("{prefix}main.bn2"), t)?;
        let t = self.conv(&format!("{prefix}main.conv2"), t, 1, 0)?;
        let t = self.bn(&format!("{prefix}main.bn3"), t)?;
        Ok(self.tape.relu(t))
    }

    fn xception_main(&mut self, prefix: &str, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let mut t = x;
        for (unit, s) in [(1usize, stride), (2, 1), (3, 1)] {
            t = self.dw(&format!("{prefix}main.dw{unit}"), t, k, s)?;
            t = self.bn(&format!("{prefix}main.bn{}", unit * 2 - 1), t)?;
            t = self.conv(&format!("{prefix}main.conv{unit}"), t, 1, 0)?;
            t = self.bn(&format!("{prefix}main.bn{}", unit * 2), t)?;
            t = self.tape.relu(t);
        }
        Ok(t)
    }

    /// One choice block. Input channels must equal the layer's in_ch.
    fn block(
        &mut self,
        layer: &super::arch::LayerShape,
        spec: BlockSpec,
        channel_id: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        let dims = BlockDims::compute(layer, spec, channel_id)?;
        let prefix = super::arch::block_prefix(layer.index, spec.id());
        let got = self.tape.value(x).shape()[1];
        if got != layer.in_ch {
            return Err(Error::ShapeMismatch {
                op: "forward_block",
                axis_a: "input channels".into(),
                axis_b: "layer in channels".into(),
                dim_a: got,
                dim_b: layer.in_ch,
            });
        }
        match spec.base {
            BlockBase::PureRobust => {
                let mut t = self.nonlocal_layer(&prefix, spec.nonlocal, x)?;
                t = self.se(&prefix, t)?;
                if spec.trailing_bn {
                    t = self.bn(&format!("{prefix}post_bn"), t)?;
                }
                self.tape.add(t, x)
            }
            base => {
                let k = spec.kernel.unwrap();
                let (identity, branch_in) = if layer.stride == 1 {
                    let (a, b) = self.tape.split(x, 1, dims.half)?;
                    (Some(a), b)
                } else {
                    (None, x)
                };
                let mut main = match base {
                    BlockBase::ShuffleV2 => {
                        self.shuffle_v2_main(&prefix, branch_in, k, layer.stride)?
                    }
                    _ => self.xception_main(&prefix, branch_in, k, layer.stride)?,
                };
                if spec.nonlocal != NonLocalKind::None {
                    main = self.nonlocal_layer(&prefix, spec.nonlocal, main)?;
                }
                main = self.se(&prefix, main)?;
                let merged = match identity {
                    Some(id_half) => self.tape.concat(id_half, main, 1)?,
                    None => {
                        let proj = self.proj_branch(&prefix, x, k)?;
                        self.tape.concat(proj, main, 1)?
                    }
                };
                self.tape.channel_shuffle(merged, 2)
            }
        }
    }
}

/// Stem conv output plus final logits, for training procedures that need a
/// handle on the first layer's activations.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub stem_conv: NodeId,
    pub logits: NodeId,
}

impl SubnetArch {
    /// Full forward pass from an already-registered input node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &mut SubnetParams,
        input: NodeId,
        mode: Mode,
        reg: ParamReg,
    ) -> Result<NodeId> {
        Ok(self.forward_traced(tape, params, input, mode, reg)?.logits)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        params: &mut SubnetParams,
        input: NodeId,
        mode: Mode,
        reg: ParamReg,
    ) -> Result<ForwardTrace> {
        let stem_conv = self.stem_conv(tape, params, input, reg)?;
        let logits = self.forward_from_stem(tape, params, stem_conv, mode, reg)?;
        Ok(ForwardTrace { stem_conv, logits })
    }

    /// First layer only: the stem 3x3 convolution (pre-BN).
    pub fn stem_conv(
        &self,
        tape: &mut Tape,
        params: &mut SubnetParams,
        input: NodeId,
        reg: ParamReg,
    ) -> Result<NodeId> {
        let mut f = Fwd { tape, params, mode: Mode::Eval, reg };
        f.conv("stem.conv", input, 1, 1)
    }

    /// Everything after the stem convolution.
    pub fn forward_from_stem(
        &self,
        tape: &mut Tape,
        params: &mut SubnetParams,
        stem_conv: NodeId,
        mode: Mode,
        reg: ParamReg,
    ) -> Result<NodeId> {
        let mut f = Fwd { tape, params, mode, reg };
        let mut t = f.bn("stem.bn", stem_conv)?;
        t = f.tape.relu(t);
        for (layer, spec, cid) in &self.layers {
            t = f.block(layer, *spec, *cid, t)?;
        }
        t = f.conv("tail.prepool.conv", t, 1, 0)?;
        t = f.bn("tail.prepool.bn", t)?;
        t = f.tape.relu(t);
        let mut v = f.tape.global_avg_pool(t)?;
        v = f.fc("tail.expand", v)?;
        v = f.tape.relu(v);
        let h = f.fc("tail.se.fc1", v)?;
        let h = f.tape.relu(h);
        let gate = f.fc("tail.se.fc2", h)?;
        let gate = f.tape.sigmoid(gate);
        v = f.tape.mul(v, gate)?;
        v = f.fc("tail.proj", v)?;
        v = f.tape.relu(v);
        f.fc("tail.cls", v)
    }
}

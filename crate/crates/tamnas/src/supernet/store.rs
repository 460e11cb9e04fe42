//! The shared parameter store and its prefix-slicing subnet views.

use rand_chacha::ChaCha8Rng;

use crate::blocks::{block_defs, stem_defs, tail_defs, BlockSpec, ParamDef, SubnetParams};
use crate::error::{Error, Result};
use crate::space::{legal_blocks, Genome, Preset};
use crate::tensor::{Mode, NodeId, Tape};

/// Full-width parameters for every legal (layer, block) pair plus the fixed
/// stem and tail. Channel gene 9 (ratio 2.0) defines the stored width;
/// subnets take prefix slices.
#[derive(Debug, Clone)]
pub struct WeightStore {
    pub preset: Preset,
    pub params: SubnetParams,
}

impl WeightStore {
    /// Every tensor the store holds, at full width.
    pub fn full_defs(preset: &Preset) -> Result<Vec<ParamDef>> {
        let mut defs = stem_defs(preset.input_ch, preset.stem_ch);
        for layer in preset.layers() {
            for block in legal_blocks(&layer) {
                defs.extend(block_defs(&layer, BlockSpec::from_id(block)?, 9)?);
            }
        }
        defs.extend(tail_defs(
            preset.last_stage_ch(),
            preset.tail_pre_pool,
            preset.tail_expand,
            preset.tail_final,
            preset.classes,
        ));
        Ok(defs)
    }

    pub fn init(preset: &Preset, rng: &mut ChaCha8Rng) -> Result<Self> {
        let defs = Self::full_defs(preset)?;
        Ok(WeightStore { preset: preset.clone(), params: SubnetParams::init(&defs, rng) })
    }

    /// Clone a subnet: prefix-slice the chosen blocks' tensors at the widths
    /// the channel genes select. Running statistics slice identically. The
    /// store is not touched.
    pub fn clone_subnet(&self, genome: &Genome) -> Result<SubnetParams> {
        let arch = self.preset.subnet_arch(genome)?;
        let mut out = SubnetParams::default();
        for def in arch.param_defs()? {
            let src = if def.learned {
                self.params.learned.get(&def.name)
            } else {
                self.params.stats.get(&def.name)
            }
            .ok_or_else(|| Error::InvalidArgument {
                op: "clone_subnet",
                msg: format!("store is missing {}", def.name),
            })?;
            out.insert(&def, src.prefix_slice(&def.cur)?);
        }
        Ok(out)
    }

    /// Forward a genome's path directly against the store (Eval or Train):
    /// slices are taken on the fly, layer by layer, with the same prefix
    /// rule `clone_subnet` uses.
    pub fn forward_path(
        &self,
        genome: &Genome,
        tape: &mut Tape,
        input: NodeId,
        mode: Mode,
    ) -> Result<NodeId> {
        let arch = self.preset.subnet_arch(genome)?;
        let mut sliced = SubnetParams::default();
        for def in arch.param_defs()? {
            let src = if def.learned {
                self.params.learned.get(&def.name)
            } else {
                self.params.stats.get(&def.name)
            }
            .ok_or_else(|| Error::InvalidArgument {
                op: "forward_path",
                msg: format!("store is missing {}", def.name),
            })?;
            sliced.insert(&def, src.prefix_slice(&def.cur)?);
        }
        arch.forward(tape, &mut sliced, input, mode, crate::blocks::ParamReg::Frozen)
    }

    /// Write a trained subnet's tensors back into the stored prefixes.
    pub fn write_back(&mut self, genome: &Genome, sub: &SubnetParams) -> Result<()> {
        let arch = self.preset.subnet_arch(genome)?;
        for def in arch.param_defs()? {
            let (src, dst) = if def.learned {
                (sub.learned.get(&def.name), self.params.learned.get_mut(&def.name))
            } else {
                (sub.stats.get(&def.name), self.params.stats.get_mut(&def.name))
            };
            let (Some(src), Some(dst)) = (src, dst) else {
                return Err(Error::InvalidArgument {
                    op: "write_back",
                    msg: format!("missing {} on one side", def.name),
                });
            };
            dst.prefix_write(&def.cur, src.data())?;
        }
        Ok(())
    }
}

//! The choice-block zoo: pure tiny, tiny robust, and pure robust blocks,
//! plus the fixed stem and tail of the backbone.
//!
//! Block ids 0..=21 encode, in order: ShuffleV2 / ShuffleXception bases with
//! kernel 3/5/7 (ids 0-5), the same with an embedded-Gaussian non-local
//! layer (6-11) or a Gaussian non-local layer (12-17), and standalone
//! non-local attention blocks (18-21, stride-1 only). Every block carries a
//! squeeze-excitation layer.

mod arch;
mod forward;

pub use arch::{
    block_defs, block_prefix, mid_channels, stem_defs, tail_defs, InitKind, LayerShape,
    ParamDef, SubnetArch, BN_EPS, BN_MOMENTUM, SE_REDUCTION,
};
pub use forward::{ForwardTrace, ParamReg, SubnetParams};

use crate::error::{Error, Result};

pub const BLOCK_COUNT: usize = 22;

/// Backbone family of a choice block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockBase {
    ShuffleV2,
    ShuffleXception,
    PureRobust,
}

/// Non-local attention flavour inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NonLocalKind {
    None,
    EmbeddedGaussian,
    Gaussian,
}

/// Structural description of one choice block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub base: BlockBase,
    /// Depthwise kernel size, `None` for pure robust blocks.
    pub kernel: Option<usize>,
    pub nonlocal: NonLocalKind,
    /// Trailing batch norm after SE; only pure robust ids 18 and 20.
    pub trailing_bn: bool,
    pub has_se: bool,
}

impl BlockSpec {
    /// Decode a block id into its structure (bijective over 0..=21).
    pub fn from_id(id: usize) -> Result<Self> {
        if id >= BLOCK_COUNT {
            return Err(Error::BlockIdOutOfRange { id });
        }
        if id < 18 {
            let nonlocal = match id / 6 {
                0 => NonLocalKind::None,
                1 => NonLocalKind::EmbeddedGaussian,
                _ => NonLocalKind::Gaussian,
            };
            let base = if (id / 3) % 2 == 0 {
                BlockBase::ShuffleV2
            } else {
                BlockBase::ShuffleXception
            };
            let kernel = [3, 5, 7][id % 3];
            Ok(BlockSpec { base, kernel: Some(kernel), nonlocal, trailing_bn: false, has_se: true })
        } else {
            let nonlocal = if id < 20 {
                NonLocalKind::EmbeddedGaussian
            } else {
                NonLocalKind::Gaussian
            };
            Ok(BlockSpec {
                base: BlockBase::PureRobust,
                kernel: None,
                nonlocal,
                trailing_bn: id % 2 == 0,
                has_se: true,
            })
        }
    }

    /// Inverse of [`BlockSpec::from_id`].
    pub fn id(&self) -> usize {
        match self.base {
            BlockBase::PureRobust => {
                let nl = if self.nonlocal == NonLocalKind::Gaussian { 2 } else { 0 };
                18 + nl + usize::from(!self.trailing_bn)
            }
            _ => {
                let nl = match self.nonlocal {
                    NonLocalKind::None => 0,
                    NonLocalKind::EmbeddedGaussian => 1,
                    NonLocalKind::Gaussian => 2,
                };
                let base = usize::from(self.base == BlockBase::ShuffleXception);
                let k = match self.kernel {
                    Some(3) => 0,
                    Some(5) => 1,
                    _ => 2,
                };
                nl * 6 + base * 3 + k
            }
        }
    }

    /// All 22 legal specs in id order.
    pub fn all() -> Vec<BlockSpec> {
        (0..BLOCK_COUNT).map(|id| BlockSpec::from_id(id).unwrap()).collect()
    }

    /// Pure robust blocks cannot change spatial resolution.
    pub fn allows_stride2(&self) -> bool {
        self.base != BlockBase::PureRobust
    }
}


#[cfg(test)]
#[path = "tests.rs"]
mod block_tests;

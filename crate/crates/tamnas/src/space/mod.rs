//! Search-space definition: backbone presets, genome encoding and legality,
//! and the precomputed (layer, block, channel) -> parameter-count table.

mod genome;
mod table;

pub use genome::{channel_ratio, decode_block, legal_blocks, Genome};
pub use table::ParamTable;

use sha2::{Digest, Sha256};

use crate::blocks::{LayerShape, SubnetArch};
use crate::error::{Error, Result};

/// Backbone preset: the fixed macro-skeleton a genome parameterizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preset {
    pub name: String,
    pub input_size: usize,
    pub input_ch: usize,
    pub classes: usize,
    pub stem_ch: usize,
    /// (out_channels, layer count); each stage leads with its stride-2 layer.
    pub stages: Vec<(usize, usize)>,
    pub tail_pre_pool: usize,
    pub tail_expand: usize,
    pub tail_final: usize,
}

impl Preset {
    /// The CIFAR-scale backbone: 16 choice layers over stages 48/96/192,
    /// stem 24, tail 176 -> 920 -> 1024 -> 10.
    pub fn full() -> Self {
        Preset {
            name: "full".into(),
            input_size: 32,
            input_ch: 3,
            classes: 10,
            stem_ch: 24,
            stages: vec![(48, 4), (96, 8), (192, 4)],
            tail_pre_pool: 176,
            tail_expand: 920,
            tail_final: 1024,
        }
    }

    /// Desk-scale preset: 6 choice layers, 16x16 inputs, 4 classes.
    pub fn mini() -> Self {
        Preset {
            name: "mini".into(),
            input_size: 16,
            input_ch: 3,
            classes: 4,
            stem_ch: 8,
            stages: vec![(16, 3), (32, 3)],
            tail_pre_pool: 40,
            tail_expand: 64,
            tail_final: 128,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "mini" => Ok(Self::mini()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Expand the stage plan into ordered per-layer shapes.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::new();
        let mut in_ch = self.stem_ch;
        for &(ch, repeat) in &self.stages {
            for r in 0..repeat {
                let stride = if r == 0 { 2 } else { 1 };
                out.push(LayerShape { index: out.len(), in_ch, out_ch: ch, stride });
                in_ch = ch;
            }
        }
        out
    }

    pub fn layer_count(&self) -> usize {
        self.stages.iter().map(|&(_, r)| r).sum()
    }

    pub fn last_stage_ch(&self) -> usize {
        self.stages.last().map(|&(c, _)| c).unwrap_or(self.stem_ch)
    }

    /// Stable digest of the structural fields, used to bind checkpoints and
    /// fitness caches to the preset they were computed for.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for v in [
            self.input_size,
            self.input_ch,
            self.classes,
            self.stem_ch,
            self.tail_pre_pool,
            self.tail_expand,
            self.tail_final,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        for &(c, r) in &self.stages {
            h.update((c as u64).to_le_bytes());
            h.update((r as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    /// Assemble the concrete subnet architecture a genome describes.
    pub fn subnet_arch(&self, genome: &Genome) -> Result<SubnetArch> {
        genome.validate(self)?;
        let layers = self
            .layers()
            .into_iter()
            .zip(genome.blocks.iter().zip(&genome.channels))
            .map(|(layer, (&b, &c))| {
                Ok((layer, crate::blocks::BlockSpec::from_id(b)?, c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubnetArch {
            input_ch: self.input_ch,
            stem_ch: self.stem_ch,
            layers,
            pre_pool: self.tail_pre_pool,
            expand: self.tail_expand,
            final_ch: self.tail_final,
            classes: self.classes,
        })
    }

    /// Total genome count: product over layers of legal block choices,
    /// times 10 channel choices per layer.
    pub fn search_space_cardinality(&self) -> u128 {
        let mut total: u128 = 1;
        for layer in self.layers() {
            total *= legal_blocks(&layer).len() as u128;
            total *= 10;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_expands_to_16_layers_with_stride2_at_0_4_12() {
        let p = Preset::full();
        let layers = p.layers();
        assert_eq!(layers.len(), 16);
        let stride2: Vec<usize> =
            layers.iter().filter(|l| l.stride == 2).map(|l| l.index).collect();
        assert_eq!(stride2, vec![0, 4, 12]);
        assert_eq!(layers[0].in_ch, 24);
        assert_eq!(layers[0].out_ch, 48);
        assert_eq!(layers[4].out_ch, 96);
        assert_eq!(layers[12].out_ch, 192);
        assert_eq!(layers[15].out_ch, 192);
    }

    #[test]
    fn mini_preset_expands_to_6_layers() {
        let p = Preset::mini();
        let layers = p.layers();
        assert_eq!(layers.len(), 6);
        let stride2: Vec<usize> =
            layers.iter().filter(|l| l.stride == 2).map(|l| l.index).collect();
        assert_eq!(stride2, vec![0, 3]);
    }

    #[test]
    fn full_cardinality_matches_symbolic_product() {
        // 3 stride-2 layers with 18 choices, 13 stride-1 layers with 22,
        // and 10 channel choices at each of the 16 layers
        let expected: u128 = 18u128.pow(3) * 22u128.pow(13) * 10u128.pow(16);
        assert_eq!(Preset::full().search_space_cardinality(), expected);
    }

    #[test]
    fn digest_distinguishes_presets() {
        assert_ne!(Preset::full().digest(), Preset::mini().digest());
        assert_eq!(Preset::full().digest(), Preset::full().digest());
    }
}

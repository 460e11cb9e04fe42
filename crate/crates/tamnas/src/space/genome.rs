//! Genome encoding: per-layer block and channel gene sequences, their text
//! form, and placement legality.

use super::Preset;
use crate::blocks::{BlockSpec, LayerShape, BLOCK_COUNT};
use crate::error::{Error, Result};

pub const CHANNEL_CHOICES: usize = 10;

/// Channel-selector expansion ratio for a channel gene: 0.2 * (id + 1).
pub fn channel_ratio(channel_id: usize) -> Result<f64> {
    if channel_id >= CHANNEL_CHOICES {
        return Err(Error::ChannelIdOutOfRange { id: channel_id });
    }
    Ok(0.2 * (channel_id + 1) as f64)
}

/// Structure of a block id (bijective over 0..=21).
pub fn decode_block(block_id: usize) -> Result<BlockSpec> {
    BlockSpec::from_id(block_id)
}

/// Block ids legal at a layer: stride-2 layers exclude the pure robust
/// blocks, whose attention output cannot change the feature-map size.
pub fn legal_blocks(layer: &LayerShape) -> Vec<usize> {
    if layer.stride == 2 {
        (0..18).collect()
    } else {
        (0..BLOCK_COUNT).collect()
    }
}

/// One subnet: a block id and a channel id per choice layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genome {
    pub blocks: Vec<usize>,
    pub channels: Vec<usize>,
}

impl Genome {
    pub fn new(blocks: Vec<usize>, channels: Vec<usize>) -> Self {
        Genome { blocks, channels }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Check lengths, gene ranges and placement legality against a preset.
    /// Errors name the first offending layer.
    pub fn validate(&self, preset: &Preset) -> Result<()> {
        let layers = preset.layers();
        if self.blocks.len() != layers.len() || self.channels.len() != layers.len() {
            return Err(Error::GenomeLength {
                got: self.blocks.len().min(self.channels.len()),
                expected: layers.len(),
            });
        }
        for (layer, (&b, &c)) in layers.iter().zip(self.blocks.iter().zip(&self.channels)) {
            if b >= BLOCK_COUNT {
                return Err(Error::BlockIdOutOfRange { id: b });
            }
            if c >= CHANNEL_CHOICES {
                return Err(Error::ChannelIdOutOfRange { id: c });
            }
            if layer.stride == 2 && !BlockSpec::from_id(b)?.allows_stride2() {
                return Err(Error::IllegalPlacement {
                    layer: layer.index,
                    block: b,
                    stride: layer.stride,
                });
            }
        }
        Ok(())
    }

    /// Uniform draw over legal blocks, channels restricted to `channel_ids`.
    pub fn random<R: rand::Rng>(preset: &Preset, channel_ids: &[usize], rng: &mut R) -> Genome {
        let layers = preset.layers();
        let blocks = layers
            .iter()
            .map(|l| {
                let legal = legal_blocks(l);
                legal[rng.gen_range(0..legal.len())]
            })
            .collect();
        let channels = layers
            .iter()
            .map(|_| channel_ids[rng.gen_range(0..channel_ids.len())])
            .collect();
        Genome::new(blocks, channels)
    }

    /// Text form: space-separated block ids, a `/` separator, then channel
    /// ids. One line, diff-able and hashable.
    pub fn encode(&self) -> String {
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!("{} / {}", blocks.join(" "), channels.join(" "))
    }

    /// Parse and validate the text form against a preset.
    pub fn decode(text: &str, preset: &Preset) -> Result<Genome> {
        let mut sides = text.split('/');
        let (Some(blocks), Some(channels), None) = (sides.next(), sides.next(), sides.next())
        else {
            return Err(Error::GenomeParse {
                msg: "expected exactly one '/' separating blocks from channels".into(),
            });
        };
        let parse = |side: &str| -> Result<Vec<usize>> {
            side.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>().map_err(|_| Error::GenomeParse {
                        msg: format!("bad gene {tok:?}"),
                    })
                })
                .collect()
        };
        let genome = Genome::new(parse(blocks)?, parse(channels)?);
        if genome.blocks.len() != genome.channels.len() {
            return Err(Error::GenomeParse {
                msg: format!(
                    "{} block genes vs {} channel genes",
                    genome.blocks.len(),
                    genome.channels.len()
                ),
            });
        }
        genome.validate(preset)?;
        Ok(genome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockBase, NonLocalKind};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn channel_ratio_matches_encoding_table() {
        assert_eq!(channel_ratio(0).unwrap(), 0.2);
        assert!((channel_ratio(4).unwrap() - 1.0).abs() < 1e-12);
        assert!((channel_ratio(9).unwrap() - 2.0).abs() < 1e-12);
        assert!(channel_ratio(10).is_err());
        // strictly increasing
        for id in 1..10 {
            assert!(channel_ratio(id).unwrap() > channel_ratio(id - 1).unwrap());
        }
    }

    #[test]
    fn decode_block_spot_checks() {
        let b0 = decode_block(0).unwrap();
        assert_eq!(b0.base, BlockBase::ShuffleV2);
        assert_eq!(b0.kernel, Some(3));
        assert_eq!(b0.nonlocal, NonLocalKind::None);
        let b15 = decode_block(15).unwrap();
        assert_eq!(b15.base, BlockBase::ShuffleXception);
        assert_eq!(b15.kernel, Some(3));
        assert_eq!(b15.nonlocal, NonLocalKind::Gaussian);
        let b18 = decode_block(18).unwrap();
        assert_eq!(b18.base, BlockBase::PureRobust);
        assert_eq!(b18.nonlocal, NonLocalKind::EmbeddedGaussian);
        assert!(b18.trailing_bn);
        assert!(decode_block(22).is_err());
    }

    #[test]
    fn legal_blocks_by_stride() {
        let p = Preset::full();
        let layers = p.layers();
        assert_eq!(legal_blocks(&layers[0]), (0..18).collect::<Vec<_>>());
        assert_eq!(legal_blocks(&layers[1]), (0..22).collect::<Vec<_>>());
        let mini = Preset::mini();
        assert!(!legal_blocks(&mini.layers()[3]).contains(&19));
    }

    pub fn random_legal(preset: &Preset, seed: u64) -> Genome {
        let all: Vec<usize> = (0..CHANNEL_CHOICES).collect();
        Genome::random(preset, &all, &mut rng_from_seed(seed))
    }

    #[test]
    fn roundtrip_is_identity_on_random_legal_genomes() {
        let p = Preset::full();
        for seed in 0..200 {
            let g = random_legal(&p, seed);
            let text = g.encode();
            let back = Genome::decode(&text, &p).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn decode_rejects_illegal_and_malformed_text() {
        let p = Preset::full();
        // pure robust block at a stride-2 layer
        let mut g = random_legal(&p, 1);
        g.blocks[0] = 19;
        assert!(matches!(
            Genome::decode(&g.encode(), &p),
            Err(Error::IllegalPlacement { layer: 0, block: 19, .. })
        ));
        // wrong length: 15 genes for the 16-layer preset
        let mut short = random_legal(&p, 2);
        short.blocks.pop();
        short.channels.pop();
        assert!(matches!(Genome::decode(&short.encode(), &p), Err(Error::GenomeLength { .. })));
        // malformed text
        assert!(matches!(
            Genome::decode("1 2 3", &p),
            Err(Error::GenomeParse { .. })
        ));
        assert!(matches!(
            Genome::decode("1 x / 3 4", &p),
            Err(Error::GenomeParse { .. })
        ));
        // out-of-range genes
        let mut bad = random_legal(&p, 3);
        bad.blocks[3] = 22;
        assert!(matches!(Genome::decode(&bad.encode(), &p), Err(Error::BlockIdOutOfRange { id: 22 })));
        let mut bad = random_legal(&p, 4);
        bad.channels[3] = 10;
        assert!(matches!(
            Genome::decode(&bad.encode(), &p),
            Err(Error::ChannelIdOutOfRange { id: 10 })
        ));
    }
}

//! Precomputed parameter-count table over (layer, block, channel), plus the
//! fixed stem/tail count. Built once per preset so constrained sampling and
//! the model-size objective are table lookups instead of shape walks.

use std::io::Write;

use super::genome::{legal_blocks, Genome, CHANNEL_CHOICES};
use super::Preset;
use crate::blocks::{block_defs, stem_defs, tail_defs, BlockSpec, BLOCK_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamTable {
    /// Learned parameters of stem plus tail (genome-independent).
    pub fixed: u64,
    /// Indexed (layer * 22 + block) * 10 + channel; illegal entries are None.
    entries: Vec<Option<u64>>,
    layer_count: usize,
    preset_digest: [u8; 32],
}

impl ParamTable {
    pub fn build(preset: &Preset) -> Result<ParamTable> {
        let layers = preset.layers();
        let mut entries = vec![None; layers.len() * BLOCK_COUNT * CHANNEL_CHOICES];
        for layer in &layers {
            for block in legal_blocks(layer) {
                let spec = BlockSpec::from_id(block)?;
                for channel in 0..CHANNEL_CHOICES {
                    let count: u64 = block_defs(layer, spec, channel)?
                        .iter()
                        .filter(|d| d.learned)
                        .map(|d| d.cur_numel())
                        .sum();
                    entries[(layer.index * BLOCK_COUNT + block) * CHANNEL_CHOICES + channel] =
                        Some(count);
                }
            }
        }
        let fixed_stem: u64 = stem_defs(preset.input_ch, preset.stem_ch)
            .iter()
            .filter(|d| d.learned)
            .map(|d| d.cur_numel())
            .sum();
        let fixed_tail: u64 = tail_defs(
            preset.last_stage_ch(),
            preset.tail_pre_pool,
            preset.tail_expand,
            preset.tail_final,
            preset.classes,
        )
        .iter()
        .filter(|d| d.learned)
        .map(|d| d.cur_numel())
        .sum();
        Ok(ParamTable {
            fixed: fixed_stem + fixed_tail,
            entries,
            layer_count: layers.len(),
            preset_digest: preset.digest(),
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn preset_digest(&self) -> [u8; 32] {
        self.preset_digest
    }

    /// Count for one legal (layer, block, channel) triple.
    pub fn entry(&self, layer: usize, block: usize, channel: usize) -> Option<u64> {
        if layer >= self.layer_count || block >= BLOCK_COUNT || channel >= CHANNEL_CHOICES {
            return None;
        }
        self.entries[(layer * BLOCK_COUNT + block) * CHANNEL_CHOICES + channel]
    }

    /// Exact learned-parameter count of a genome: fixed + per-layer entries.
    pub fn count(&self, genome: &Genome) -> Result<u64> {
        if genome.blocks.len() != self.layer_count {
            return Err(Error::GenomeLength { got: genome.blocks.len(), expected: self.layer_count });
        }
        let mut total = self.fixed;
        for (layer, (&b, &c)) in genome.blocks.iter().zip(&genome.channels).enumerate() {
            total += self.entry(layer, b, c).ok_or(Error::IllegalPlacement {
                layer,
                block: b,
                stride: 2,
            })?;
        }
        Ok(total)
    }

    /// Achievable [min, max] over genomes whose channel genes come from
    /// `channel_ids` (or all ids when empty). Used for feasibility
    /// diagnostics when a constraint window rejects every sample.
    pub fn achievable_range(&self, channel_ids: &[usize]) -> (u64, u64) {
        let all: Vec<usize> = (0..CHANNEL_CHOICES).collect();
        let ids = if channel_ids.is_empty() { &all[..] } else { channel_ids };
        let mut lo = self.fixed;
        let mut hi = self.fixed;
        for layer in 0..self.layer_count {
            let mut lmin = u64::MAX;
            let mut lmax = 0;
            for block in 0..BLOCK_COUNT {
                for &c in ids {
                    if let Some(v) = self.entry(layer, block, c) {
                        lmin = lmin.min(v);
                        lmax = lmax.max(v);
                    }
                }
            }
            lo += lmin;
            hi += lmax;
        }
        (lo, hi)
    }

    /// CSV rows `layer,block,channel,count` for every legal entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,block,channel,count")?;
        for layer in 0..self.layer_count {
            for block in 0..BLOCK_COUNT {
                for channel in 0..CHANNEL_CHOICES {
                    if let Some(v) = self.entry(layer, block, channel) {
                        writeln!(w, "{layer},{block},{channel},{v}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::mid_channels;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// Independent symbolic parameter-count oracle, hand-derived from the
    /// block structures. Kept deliberately separate from the ParamDef
    /// machinery the production table is built on.
    fn oracle_block_count(
        in_ch: u64,
        out_ch: u64,
        stride: u64,
        block: usize,
        channel: usize,
    ) -> u64 {
        let half = out_ch / 2;
        let mid = mid_channels(channel, (out_ch / 2) as usize) as u64;
        let hid = (half / 4).max(1);
        let nb = (half / 2).max(1);
        let conv = |o: u64, i: u64, k: u64| o * i * k * k + o;
        let bn = |c: u64| 2 * c;
        let se = |c: u64, h: u64| conv(h, c, 1) + conv(c, h, 1);
        let nl_eg = |c: u64, b: u64| 3 * conv(b, c, 1) + conv(c, b, 1);
        let nl_g = |c: u64, b: u64| conv(b, c, 1) + conv(c, b, 1);
        if block >= 18 {
            // pure robust on C channels, bottleneck = selector-scaled C/2
            let c = out_ch;
            let b = mid_channels(channel, (c / 2) as usize) as u64;
            let ch = (c / 4).max(1);
            let mut total = match block {
                18 | 19 => nl_eg(c, b),
                _ => nl_g(c, b),
            };
            total += se(c, ch);
            if block == 18 || block == 20 {
                total += bn(c);
            }
            return total;
        }
        let k = [3u64, 5, 7][block % 3];
        let branch_in = if stride == 1 { half } else { in_ch };
        let shuffle_v2 = (block / 3) % 2 == 0;
        let mut total = if shuffle_v2 {
            conv(mid, branch_in, 1)
                + bn(mid)
                + (mid * k * k + mid)
                + bn(mid)
                + conv(half, mid, 1)
                + bn(half)
        } else {
            (branch_in * k * k + branch_in)
                + bn(branch_in)
                + conv(mid, branch_in, 1)
                + bn(mid)
                + (mid * k * k + mid)
                + bn(mid)
                + conv(mid, mid, 1)
                + bn(mid)
                + (mid * k * k + mid)
                + bn(mid)
                + conv(half, mid, 1)
                + bn(half)
        };
        match block / 6 {
            1 => total += nl_eg(half, nb),
            2 => total += nl_g(half, nb),
            _ => {}
        }
        total += se(half, hid);
        if stride == 2 {
            total += (in_ch * k * k + in_ch) + bn(in_ch) + conv(half, in_ch, 1) + bn(half);
        }
        total
    }

    fn oracle_fixed(p: &Preset) -> u64 {
        let conv = |o: u64, i: u64, k: u64| o * i * k * k + o;
        let fc = |o: u64, i: u64| o * i + o;
        let (stem, inc) = (p.stem_ch as u64, p.input_ch as u64);
        let (last, pre, ex, fin, cls) = (
            p.last_stage_ch() as u64,
            p.tail_pre_pool as u64,
            p.tail_expand as u64,
            p.tail_final as u64,
            p.classes as u64,
        );
        let eh = (ex / 4).max(1);
        conv(stem, inc, 3)
            + 2 * stem
            + conv(pre, last, 1)
            + 2 * pre
            + fc(ex, pre)
            + fc(eh, ex)
            + fc(ex, eh)
            + fc(fin, ex)
            + fc(cls, fin)
    }

    #[test]
    fn fixed_part_includes_stem_conv_and_bn() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        // 672-parameter stem conv and 48 learned BN parameters are part of it
        assert_eq!(t.fixed, oracle_fixed(&p));
        assert!(t.fixed > 672 + 48);
    }

    #[test]
    fn final_classifier_count_matches_hand_arithmetic() {
        // FC 1024 -> 10 contributes 1024*10 + 10 = 10250
        let p = Preset::full();
        assert_eq!((p.tail_final * p.classes + p.classes) as u64, 10250);
    }

    #[test]
    fn table_matches_symbolic_oracle_on_random_triples() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        let layers = p.layers();
        let mut rng = rng_from_seed(42);
        let mut audited = 0;
        while audited < 20 {
            let layer = &layers[rng.gen_range(0..layers.len())];
            let block = rng.gen_range(0..BLOCK_COUNT);
            let channel = rng.gen_range(0..CHANNEL_CHOICES);
            let Some(got) = t.entry(layer.index, block, channel) else {
                continue;
            };
            let want = oracle_block_count(
                layer.in_ch as u64,
                layer.out_ch as u64,
                layer.stride as u64,
                block,
                channel,
            );
            assert_eq!(got, want, "layer {} block {block} channel {channel}", layer.index);
            audited += 1;
        }
    }

    #[test]
    fn all_minimum_genome_matches_oracle_sum() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        let layers = p.layers();
        let g = Genome::new(vec![0; 16], vec![0; 16]);
        let mut want = oracle_fixed(&p);
        for layer in &layers {
            want += oracle_block_count(
                layer.in_ch as u64,
                layer.out_ch as u64,
                layer.stride as u64,
                0,
                0,
            );
        }
        assert_eq!(t.count(&g).unwrap(), want);
    }

    #[test]
    fn entries_monotone_in_channel_id() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        for layer in 0..16 {
            for block in 0..BLOCK_COUNT {
                let Some(first) = t.entry(layer, block, 0) else { continue };
                let mut prev = first;
                for channel in 1..CHANNEL_CHOICES {
                    let cur = t.entry(layer, block, channel).unwrap();
                    assert!(cur >= prev, "layer {layer} block {block} channel {channel}");
                    prev = cur;
                }
            }
        }
    }

    #[test]
    fn count_is_additive_in_single_gene_changes() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        let mut rng = rng_from_seed(7);
        for _ in 0..20 {
            let g1 = Genome::random(&p, &(0..10).collect::<Vec<_>>(), &mut rng);
            let mut g2 = g1.clone();
            let layer = rng.gen_range(0..16);
            let legal = legal_blocks(&p.layers()[layer]);
            g2.blocks[layer] = legal[rng.gen_range(0..legal.len())];
            let delta = t.entry(layer, g2.blocks[layer], g2.channels[layer]).unwrap() as i64
                - t.entry(layer, g1.blocks[layer], g1.channels[layer]).unwrap() as i64;
            assert_eq!(
                t.count(&g2).unwrap() as i64 - t.count(&g1).unwrap() as i64,
                delta
            );
        }
    }

    #[test]
    fn count_invariant_under_text_roundtrip() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        for seed in 0..20 {
            let g = Genome::random(&p, &(0..10).collect::<Vec<_>>(), &mut rng_from_seed(seed));
            let back = Genome::decode(&g.encode(), &p).unwrap();
            assert_eq!(t.count(&g).unwrap(), t.count(&back).unwrap());
        }
    }

    #[test]
    fn count_rejects_illegal_genome_naming_layer() {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        let mut g = Genome::new(vec![0; 16], vec![0; 16]);
        g.blocks[4] = 20; // stride-2 layer
        match t.count(&g) {
            Err(Error::IllegalPlacement { layer: 4, block: 20, .. }) => {}
            other => panic!("expected illegal placement at layer 4, got {other:?}"),
        }
    }

    #[test]
    fn count_equals_instantiated_tensor_sum() {
        // table vs actually allocating every tensor of the subnet
        let p = Preset::mini();
        let t = ParamTable::build(&p).unwrap();
        for seed in 0..10 {
            let g = Genome::random(&p, &(0..10).collect::<Vec<_>>(), &mut rng_from_seed(seed));
            let arch = p.subnet_arch(&g).unwrap();
            let params =
                crate::blocks::SubnetParams::init(&arch.param_defs().unwrap(), &mut rng_from_seed(1));
            assert_eq!(t.count(&g).unwrap(), params.learned_count());
        }
    }
}

//! Algorithm-level supernet training: per refresh period one constrained
//! sample is drawn, its path cloned, adversarially trained with TRADES-YOPO
//! steps, and written back. Only the sampled path's parameters (plus the
//! shared stem and tail) ever change.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::sampler::{Phase, SamplerState};
use super::store::WeightStore;
use crate::adversarial::{yopo_trades_step, AttackSpec, Model, SubnetModel, TradesConfig};
use crate::data::{Augment, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::space::{Genome, ParamTable};
use crate::tensor::Tensor;

/// SGD with momentum and L2 weight decay:
/// v <- momentum * v + (g + wd * w); w <- w - lr * v.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl SgdOptimizer {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        SgdOptimizer { momentum, weight_decay, velocity: BTreeMap::new() }
    }

    pub fn step(
        &mut self,
        params: &mut crate::blocks::SubnetParams,
        grads: &[(String, Vec<f32>)],
        lr: f32,
    ) {
        for (name, grad) in grads {
            let Some(w) = params.learned.get_mut(name) else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .and_modify(|v| {
                    if v.len() != grad.len() {
                        *v = vec![0.0; grad.len()];
                    }
                })
                .or_insert_with(|| vec![0.0; grad.len()]);
            for ((vel, &g), w) in v.iter_mut().zip(grad).zip(w.data_mut()) {
                *vel = self.momentum * *vel + g + self.weight_decay * *w;
                *w -= lr * *vel;
            }
        }
    }
}

/// Epochs, refresh cadence and learning-rate plan for both sampling phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub block_epochs: usize,
    pub joint_epochs: usize,
    /// A new architecture is sampled every this many epochs.
    pub refresh_period: usize,
    /// The joint-phase channel set widens every this many epochs.
    pub widen_period: usize,
    pub lr: f32,
    /// Phase-relative epochs where the rate drops by 10x.
    pub block_milestones: Vec<usize>,
    pub joint_milestones: Vec<usize>,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Checkpoint cadence in epochs, besides phase boundaries.
    pub checkpoint_every: usize,
}

impl TrainSchedule {
    /// The CIFAR-scale plan: 500 + 500 epochs, resample every 20, widen
    /// every 20, SGD(0.1, momentum 0.9, weight decay 5e-4), batch 512.
    pub fn full() -> Self {
        TrainSchedule {
            block_epochs: 500,
            joint_epochs: 500,
            refresh_period: 20,
            widen_period: 20,
            lr: 0.1,
            block_milestones: vec![200, 400, 450],
            joint_milestones: vec![100, 200, 300],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 512,
            checkpoint_every: 50,
        }
    }

    /// Minutes-scale plan for the mini preset.
    pub fn mini_smoke() -> Self {
        TrainSchedule {
            block_epochs: 6,
            joint_epochs: 6,
            refresh_period: 2,
            widen_period: 2,
            lr: 0.05,
            block_milestones: vec![4],
            joint_milestones: vec![4],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            checkpoint_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.refresh_period > 0
            && self.block_epochs % self.refresh_period == 0
            && self.joint_epochs % self.refresh_period == 0;
        if !ok {
            return Err(Error::Config(format!(
                "refresh period {} must divide both phase lengths {}/{}",
                self.refresh_period, self.block_epochs, self.joint_epochs
            )));
        }
        Ok(())
    }

    /// Learning rate at a phase-relative epoch: base rate divided by ten at
    /// each passed milestone.
    pub fn lr_at(&self, phase: Phase, epoch_in_phase: usize) -> f32 {
        let milestones = match phase {
            Phase::BlockOnly => &self.block_milestones,
            Phase::Joint => &self.joint_milestones,
        };
        let drops = milestones.iter().filter(|&&m| epoch_in_phase >= m).count();
        self.lr * 0.1f32.powi(drops as i32)
    }
}

/// Observation points inside the training loop.
pub trait TrainHooks {
    fn on_period_start(&mut self, epoch: usize, genome: &Genome) -> Result<()> {
        let _ = (epoch, genome);
        Ok(())
    }
    fn on_epoch(&mut self, epoch: usize, phase: Phase, mean_loss: f64) -> Result<()> {
        let _ = (epoch, phase, mean_loss);
        Ok(())
    }
    fn on_checkpoint(&mut self, tag: &str, checkpoint: &Checkpoint) -> Result<()> {
        let _ = (tag, checkpoint);
        Ok(())
    }
}

pub struct NoHooks;
impl TrainHooks for NoHooks {}

/// Train the supernet through both phases (Algorithm: sample a candidate
/// every refresh period, run TRADES-YOPO epochs, update the sampled weights).
#[allow(clippy::too_many_arguments)]
pub fn train_supernet<H: TrainHooks>(
    store: &mut WeightStore,
    sampler: &mut SamplerState,
    schedule: &TrainSchedule,
    table: &ParamTable,
    data: &Dataset,
    augment: &Augment,
    trades: &TradesConfig,
    attack: &AttackSpec,
    seed: u64,
    hooks: &mut H,
) -> Result<()> {
    schedule.validate()?;
    trades.validate()?;
    attack.validate()?;
    let preset = store.preset.clone();
    let total = schedule.block_epochs + schedule.joint_epochs;

    while sampler.epoch < total {
        let phase_start = if sampler.epoch < schedule.block_epochs {
            0
        } else {
            schedule.block_epochs
        };
        if sampler.epoch >= schedule.block_epochs && sampler.phase != Phase::Joint {
            sampler.enter_joint_phase(&preset, table);
        }
        if sampler.phase == Phase::Joint {
            sampler.widen_channel_space(sampler.epoch - schedule.block_epochs, schedule.widen_period);
        }

        // one refresh period on a freshly sampled path
        let genome = sampler.sample_architecture(&preset, table)?;
        hooks.on_period_start(sampler.epoch, &genome)?;
        let arch = preset.subnet_arch(&genome)?;
        let mut model = SubnetModel { arch, params: store.clone_subnet(&genome)? };
        let mut optimizer = SgdOptimizer::new(schedule.momentum, schedule.weight_decay);

        for _ in 0..schedule.refresh_period {
            if sampler.phase == Phase::Joint {
                sampler
                    .widen_channel_space(sampler.epoch - schedule.block_epochs, schedule.widen_period);
            }
            let epoch = sampler.epoch;
            let lr = schedule.lr_at(sampler.phase, epoch - phase_start);
            let mut order: Vec<usize> = (0..data.len()).collect();
            let mut order_rng = rng_from_seed(derive_seed(seed, "epoch-order", &[epoch as u64]));
            for i in (1..order.len()).rev() {
                let j = rand::Rng::gen_range(&mut order_rng, 0..=i);
                order.swap(i, j);
            }
            let mut aug_rng = rng_from_seed(derive_seed(seed, "augment", &[epoch as u64]));
            let mut step_rng = rng_from_seed(derive_seed(seed, "yopo", &[epoch as u64]));
            let mut loss_sum = 0f64;
            let mut batches = 0usize;
            for chunk in order.chunks(schedule.batch_size) {
                let (mut x, y) = data.batch(chunk);
                augment.apply(&mut x, &mut aug_rng);
                let report = yopo_trades_step(&mut model, &x, &y, trades, attack, &mut step_rng)?;
                optimizer.step(model.params_mut(), &report.grads, lr);
                loss_sum += report.loss;
                batches += 1;
            }
            let mean_loss = loss_sum / batches.max(1) as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("supernet training epoch {epoch}"),
                    batch_index: None,
                });
            }
            sampler.epoch += 1;
            hooks.on_epoch(epoch, sampler.phase, mean_loss)?;

            let at_phase_boundary =
                sampler.epoch == schedule.block_epochs || sampler.epoch == total;
            if at_phase_boundary
                || (schedule.checkpoint_every > 0 && sampler.epoch % schedule.checkpoint_every == 0)
            {
                store.write_back(&genome, model.params())?;
                let tag = if sampler.epoch == total {
                    "final".to_string()
                } else if sampler.epoch == schedule.block_epochs {
                    "phase1".to_string()
                } else {
                    format!("epoch{:05}", sampler.epoch)
                };
                let ckpt = Checkpoint {
                    preset_digest: preset.digest(),
                    sampler: sampler.clone(),
                    params: store.params.clone(),
                };
                hooks.on_checkpoint(&tag, &ckpt)?;
            }
        }
        store.write_back(&genome, model.params())?;
    }
    Ok(())
}

/// Convenience: drive a batch tensor through augmentation-free evaluation.
pub fn clean_error<M: Model>(model: &mut M, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut wrong = 0usize;
    let idxs: Vec<usize> = (0..data.len()).collect();
    for chunk in idxs.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        let mut tape = crate::tensor::Tape::new();
        let input = tape.leaf(x);
        let logits = model.logits(
            &mut tape,
            input,
            crate::tensor::Mode::Eval,
            crate::blocks::ParamReg::Frozen,
        )?;
        wrong += count_wrong(tape.value(logits), &y);
    }
    Ok(100.0 * wrong as f64 / data.len().max(1) as f64)
}

/// Number of argmax mispredictions.
pub fn count_wrong(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = &logits.data()[i * classes..(i + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(j, _)| j)
                .unwrap_or(0);
            pred != y
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::rng::rng_from_seed;
    use crate::space::Preset;
    use crate::supernet::FULL_JOINT_WINDOW;

    #[test]
    fn full_schedule_lr_drops_at_the_stated_epochs() {
        let s = TrainSchedule::full();
        assert_eq!(s.lr_at(Phase::BlockOnly, 0), 0.1);
        assert_eq!(s.lr_at(Phase::BlockOnly, 199), 0.1);
        assert!((s.lr_at(Phase::BlockOnly, 200) - 0.01).abs() < 1e-9);
        assert!((s.lr_at(Phase::BlockOnly, 400) - 0.001).abs() < 1e-9);
        assert!((s.lr_at(Phase::BlockOnly, 450) - 0.0001).abs() < 1e-9);
        // joint milestones sit at global epochs 600/700/800
        assert!((s.lr_at(Phase::Joint, 100) - 0.01).abs() < 1e-9);
        assert!((s.lr_at(Phase::Joint, 300) - 0.0001).abs() < 1e-9);
    }

    #[test]
    fn full_windows_match_the_stated_ranges() {
        assert_eq!(super::super::FULL_BLOCK_WINDOW, (1_823_000, 2_375_000));
        assert_eq!(FULL_JOINT_WINDOW, (1_610_000, 2_370_000));
    }

    struct Recorder {
        genomes: Vec<Genome>,
        losses: Vec<f64>,
    }
    impl TrainHooks for Recorder {
        fn on_period_start(&mut self, _epoch: usize, genome: &Genome) -> Result<()> {
            self.genomes.push(genome.clone());
            Ok(())
        }
        fn on_epoch(&mut self, _epoch: usize, _phase: Phase, mean_loss: f64) -> Result<()> {
            self.losses.push(mean_loss);
            Ok(())
        }
    }

    fn mini_training() -> (WeightStore, Recorder) {
        let preset = Preset::mini();
        let table = ParamTable::build(&preset).unwrap();
        let mut store = WeightStore::init(&preset, &mut rng_from_seed(1)).unwrap();
        let mut sampler = SamplerState::new_block_phase(&preset, &table, 2);
        let schedule = TrainSchedule {
            block_epochs: 2,
            joint_epochs: 2,
            refresh_period: 1,
            widen_period: 1,
            lr: 0.05,
            block_milestones: vec![],
            joint_milestones: vec![],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            checkpoint_every: 0,
        };
        let data = generate_synthetic(&SyntheticSpec {
            samples: 32,
            noise: 0.05,
            ..Default::default()
        })
        .unwrap();
        let trades = TradesConfig::default();
        let attack = AttackSpec::pgd(8.0 / 255.0, 10);
        let mut hooks = Recorder { genomes: vec![], losses: vec![] };
        train_supernet(
            &mut store,
            &mut sampler,
            &schedule,
            &table,
            &data,
            &Augment::none(),
            &trades,
            &attack,
            7,
            &mut hooks,
        )
        .unwrap();
        (store, hooks)
    }

    #[test]
    fn training_touches_only_sampled_paths() {
        let preset = Preset::mini();
        let before = WeightStore::init(&preset, &mut rng_from_seed(1)).unwrap();
        let (store, hooks) = mini_training();
        assert_eq!(hooks.genomes.len(), 4);
        // a (layer, block) pair never sampled must be bit-identical
        for layer in 0..6 {
            for block in 0..18 {
                let sampled = hooks.genomes.iter().any(|g| g.blocks[layer] == block);
                if sampled {
                    continue;
                }
                let name = format!("l{layer}.b{block}.main.conv1.w");
                if let (Some(a), Some(b)) =
                    (store.params.learned.get(&name), before.params.learned.get(&name))
                {
                    assert_eq!(a, b, "unsampled {name} changed");
                }
            }
        }
        // stem always trains
        assert_ne!(store.params.learned["stem.conv.w"], before.params.learned["stem.conv.w"]);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (a, _) = mini_training();
        let (b, _) = mini_training();
        assert_eq!(a.params.learned, b.params.learned);
        assert_eq!(a.params.stats, b.params.stats);
    }
}

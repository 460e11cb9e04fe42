//! Two-phase constrained uniform sampling.
//!
//! Phase one samples block genes only (channels pinned to ratio 1.0); phase
//! two samples blocks and channels jointly, starting from the widest two
//! ratios and prepending one smaller ratio per widening period. Every
//! accepted genome's parameter count lies inside the phase's constraint
//! window; sampling rejects until it does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::space::{Genome, ParamTable, Preset};

/// Block-sampling phase window on the full preset (parameters).
pub const FULL_BLOCK_WINDOW: (u64, u64) = (1_823_000, 2_375_000);
/// Joint-sampling phase window on the full preset (parameters).
pub const FULL_JOINT_WINDOW: (u64, u64) = (1_610_000, 2_370_000);

/// Channel gene used while only blocks are searched (ratio 1.0).
pub const BLOCK_PHASE_CHANNEL: usize = 4;

const SAMPLE_ATTEMPT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    BlockOnly,
    Joint,
}

/// Sampler state; serialized into checkpoints so training resumes and
/// downstream search see exactly the distribution that produced the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub phase: Phase,
    pub epoch: usize,
    /// Channel genes a Joint-phase sample may use, ascending.
    pub active_channels: Vec<usize>,
    /// Inclusive parameter-count window for accepted genomes.
    pub window: (u64, u64),
    pub seed: u64,
    pub draws: u64,
}

/// Scale a full-preset window onto another preset by the ratio of
/// genome-independent (stem + tail) parameter counts.
pub fn scale_window(window: (u64, u64), table: &ParamTable, full_fixed: u64) -> (u64, u64) {
    let ratio = table.fixed as f64 / full_fixed as f64;
    (
        (window.0 as f64 * ratio).round() as u64,
        (window.1 as f64 * ratio).round() as u64,
    )
}

impl SamplerState {
    pub fn new_block_phase(preset: &Preset, table: &ParamTable, seed: u64) -> Self {
        let window = if preset.name == "full" {
            FULL_BLOCK_WINDOW
        } else {
            let full_fixed = ParamTable::build(&Preset::full())
                .map(|t| t.fixed)
                .unwrap_or(FULL_BLOCK_WINDOW.0);
            scale_window(FULL_BLOCK_WINDOW, table, full_fixed)
        };
        SamplerState {
            phase: Phase::BlockOnly,
            epoch: 0,
            active_channels: vec![BLOCK_PHASE_CHANNEL],
            window,
            seed,
            draws: 0,
        }
    }

    /// Transition into the joint phase: the widest two ratios activate.
    pub fn enter_joint_phase(&mut self, preset: &Preset, table: &ParamTable) {
        self.phase = Phase::Joint;
        self.active_channels = vec![8, 9];
        self.window = if preset.name == "full" {
            FULL_JOINT_WINDOW
        } else {
            let full_fixed = ParamTable::build(&Preset::full())
                .map(|t| t.fixed)
                .unwrap_or(FULL_JOINT_WINDOW.0);
            scale_window(FULL_JOINT_WINDOW, table, full_fixed)
        };
    }

    /// Grow the joint-phase channel set: after the first two widening
    /// periods, one smaller ratio joins per period until all ten are active.
    /// No-op during the block phase.
    pub fn widen_channel_space(&mut self, epochs_into_joint: usize, widen_period: usize) {
        if self.phase != Phase::Joint || widen_period == 0 {
            return;
        }
        let additions = (epochs_into_joint / widen_period).saturating_sub(1).min(8);
        let lowest = 8 - additions;
        self.active_channels = (lowest..=9).collect();
    }

    /// Draw one genome uniformly over legal blocks and active channels,
    /// rejecting genomes outside the parameter window.
    pub fn sample_architecture(&mut self, preset: &Preset, table: &ParamTable) -> Result<Genome> {
        let channels: Vec<usize> = match self.phase {
            Phase::BlockOnly => vec![BLOCK_PHASE_CHANNEL],
            Phase::Joint => self.active_channels.clone(),
        };
        let mut rng = rng_from_seed(derive_seed(self.seed, "sample", &[self.draws]));
        self.draws += 1;
        for _ in 0..SAMPLE_ATTEMPT_CAP {
            let genome = Genome::random(preset, &channels, &mut rng);
            let count = table.count(&genome)?;
            if count >= self.window.0 && count <= self.window.1 {
                return Ok(genome);
            }
        }
        let (lo, hi) = table.achievable_range(&channels);
        Err(Error::InfeasibleWindow {
            min: self.window.0,
            max: self.window.1,
            attempts: SAMPLE_ATTEMPT_CAP,
            achievable_min: lo,
            achievable_max: hi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Preset, ParamTable) {
        let p = Preset::full();
        let t = ParamTable::build(&p).unwrap();
        (p, t)
    }

    #[test]
    fn block_phase_pins_channel_gene_to_ratio_one() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 1);
        for _ in 0..10 {
            let g = s.sample_architecture(&p, &t).unwrap();
            assert!(g.channels.iter().all(|&c| c == BLOCK_PHASE_CHANNEL));
        }
    }

    #[test]
    fn joint_phase_starts_with_widest_two_ratios() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 2);
        s.enter_joint_phase(&p, &t);
        assert_eq!(s.active_channels, vec![8, 9]);
        let g = s.sample_architecture(&p, &t).unwrap();
        assert!(g.channels.iter().all(|&c| c == 8 || c == 9));
    }

    #[test]
    fn widening_schedule_matches_paper_epochs() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 3);
        s.enter_joint_phase(&p, &t);
        // joint phase starts at global epoch 500 on the full schedule
        s.widen_channel_space(0, 20); // epoch 500
        assert_eq!(s.active_channels, vec![8, 9]);
        s.widen_channel_space(20, 20); // epoch 520
        assert_eq!(s.active_channels, vec![8, 9]);
        s.widen_channel_space(40, 20); // epoch 540 -> ratio 1.6 joins
        assert_eq!(s.active_channels, vec![7, 8, 9]);
        s.widen_channel_space(180, 20); // epoch 680 -> all ten
        assert_eq!(s.active_channels, (0..10).collect::<Vec<_>>());
        s.widen_channel_space(400, 20); // stays full
        assert_eq!(s.active_channels, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn block_phase_ignores_widening() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 4);
        let before = s.active_channels.clone();
        s.widen_channel_space(100, 20);
        assert_eq!(s.active_channels, before);
    }

    #[test]
    fn accepted_samples_respect_the_window() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 5);
        for _ in 0..200 {
            let g = s.sample_architecture(&p, &t).unwrap();
            let c = t.count(&g).unwrap();
            assert!(c >= s.window.0 && c <= s.window.1, "{c} outside {:?}", s.window);
        }
    }

    #[test]
    fn infeasible_window_reports_achievable_range() {
        let (p, t) = setup();
        let mut s = SamplerState::new_block_phase(&p, &t, 6);
        s.window = (1, 2);
        match s.sample_architecture(&p, &t) {
            Err(Error::InfeasibleWindow { achievable_min, achievable_max, .. }) => {
                assert!(achievable_min > 1_000_000);
                assert!(achievable_max > achievable_min);
            }
            other => panic!("expected infeasible window, got {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed_and_draw() {
        let (p, t) = setup();
        let mut a = SamplerState::new_block_phase(&p, &t, 7);
        let mut b = SamplerState::new_block_phase(&p, &t, 7);
        for _ in 0..5 {
            assert_eq!(
                a.sample_architecture(&p, &t).unwrap(),
                b.sample_architecture(&p, &t).unwrap()
            );
        }
    }

    #[test]
    fn mini_windows_scale_by_fixed_ratio_and_stay_feasible() {
        let p = Preset::mini();
        let t = ParamTable::build(&p).unwrap();
        let mut s = SamplerState::new_block_phase(&p, &t, 8);
        let g = s.sample_architecture(&p, &t).unwrap();
        let c = t.count(&g).unwrap();
        assert!(c >= s.window.0 && c <= s.window.1);
        s.enter_joint_phase(&p, &t);
        let g = s.sample_architecture(&p, &t).unwrap();
        let c = t.count(&g).unwrap();
        assert!(c >= s.window.0 && c <= s.window.1);
    }
}

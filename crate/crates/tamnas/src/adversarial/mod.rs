//! White-box l-infinity attacks and adversarial training: PGD, the TRADES
//! surrogate loss, and the YOPO-accelerated TRADES step that confines most
//! perturbation work to the first layer.

mod pgd;
mod trades;
mod yopo;

pub use pgd::{find_trades_perturbation, pgd_attack};
pub use trades::{trades_loss, trades_loss_graph};
pub use yopo::{yopo_trades_step, YopoStepReport};

use serde::{Deserialize, Serialize};

use crate::blocks::{ForwardTrace, ParamReg, SubnetArch, SubnetParams};
use crate::error::{Error, Result};
use crate::tensor::{Mode, NodeId, Tape, Tensor};

/// l-infinity attack parameters, pixel units in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub epsilon: f32,
    pub steps: usize,
    pub step_size: f32,
    pub random_start: bool,
}

impl AttackSpec {
    /// PGD with the 2.5 * eps / steps step-size convention.
    pub fn pgd(epsilon: f32, steps: usize) -> Self {
        AttackSpec {
            epsilon,
            steps,
            step_size: if steps == 0 { 0.0 } else { 2.5 * epsilon / steps as f32 },
            random_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) || (self.steps > 0 && self.step_size <= 0.0) {
            return Err(Error::InvalidArgument {
                op: "AttackSpec",
                msg: format!("epsilon {} / step size {}", self.epsilon, self.step_size),
            });
        }
        Ok(())
    }
}

/// TRADES-YOPO hyperparameters: consistency balance and loop counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradesConfig {
    pub lambda: f32,
    /// Outer loops (full forward/backward passes per batch).
    pub m: usize,
    /// Inner loops (first-layer-only perturbation updates per outer loop).
    pub n: usize,
}

impl Default for TradesConfig {
    fn default() -> Self {
        TradesConfig { lambda: 1.0, m: 5, n: 3 }
    }
}

impl TradesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 || self.m * self.n == 0 {
            return Err(Error::InvalidArgument {
                op: "TradesConfig",
                msg: format!("lambda {} m {} n {}", self.lambda, self.m, self.n),
            });
        }
        Ok(())
    }
}

/// Anything the attacks and adversarial trainers can drive: a parameter map
/// plus a forward pass that exposes the first layer's output.
pub trait Model {
    fn params(&self) -> &SubnetParams;
    fn params_mut(&mut self) -> &mut SubnetParams;
    fn forward_traced(
        &mut self,
        tape: &mut Tape,
        input: NodeId,
        mode: Mode,
        reg: ParamReg,
    ) -> Result<ForwardTrace>;
    /// First layer only, with frozen weights (the YOPO inner pass).
    fn first_layer(&mut self, tape: &mut Tape, input: NodeId) -> Result<NodeId>;

    fn logits(&mut self, tape: &mut Tape, input: NodeId, mode: Mode, reg: ParamReg) -> Result<NodeId> {
        Ok(self.forward_traced(tape, input, mode, reg)?.logits)
    }
}

/// A genome-built subnet as an attackable/trainable model.
#[derive(Debug, Clone)]
pub struct SubnetModel {
    pub arch: SubnetArch,
    pub params: SubnetParams,
}

impl Model for SubnetModel {
    fn params(&self) -> &SubnetParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut SubnetParams {
        &mut self.params
    }

    fn forward_traced(
        &mut self,
        tape: &mut Tape,
        input: NodeId,
        mode: Mode,
        reg: ParamReg,
    ) -> Result<ForwardTrace> {
        self.arch.forward_traced(tape, &mut self.params, input, mode, reg)
    }

    fn first_layer(&mut self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        self.arch.stem_conv(tape, &mut self.params, input, ParamReg::Frozen)
    }
}

/// Clamp x + delta into the epsilon ball around x intersected with [0, 1],
/// returning the projected adversarial point.
pub(crate) fn project(x: &Tensor, adv: &mut Tensor, epsilon: f32) {
    for (a, &orig) in adv.data_mut().iter_mut().zip(x.data()) {
        *a = a.min(orig + epsilon).max(orig - epsilon).clamp(0.0, 1.0);
    }
}

/// Elementwise max-abs difference, for ball assertions.
pub fn linf_distance(a: &Tensor, b: &Tensor) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

//! The TRADES surrogate objective: clean cross-entropy plus a scaled KL
//! consistency term between clean and perturbed outputs.

use super::Model;
use crate::blocks::{ForwardTrace, ParamReg};
use crate::error::Result;
use crate::tensor::{Mode, NodeId, Tape, Tensor};

/// Build CE(f(x), y) + KL(f(x) || f(x + eta)) / lambda on the tape.
/// Returns the loss node and the adversarial branch's trace (its first-layer
/// output is the YOPO co-state anchor).
pub fn trades_loss_graph<M: Model>(
    tape: &mut Tape,
    model: &mut M,
    x: &Tensor,
    eta: &Tensor,
    labels: &[usize],
    lambda: f32,
    mode: Mode,
    reg: ParamReg,
) -> Result<(NodeId, ForwardTrace)> {
    let x_clean = tape.leaf(x.clone());
    let clean = model.forward_traced(tape, x_clean, mode, reg)?;
    let mut adv = x.clone();
    for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
        *a = (*a + e).clamp(0.0, 1.0);
    }
    let x_adv = tape.leaf(adv);
    let adv_trace = model.forward_traced(tape, x_adv, mode, reg)?;
    let ce = tape.cross_entropy(clean.logits, labels)?;
    let kl = tape.kl_divergence(clean.logits, adv_trace.logits)?;
    let kl_scaled = tape.scale(kl, 1.0 / lambda);
    let loss = tape.add(ce, kl_scaled)?;
    Ok((loss, adv_trace))
}

/// Scalar TRADES loss in eval conditions, with full f64 on the terms.
pub fn trades_loss<M: Model>(
    model: &mut M,
    x: &Tensor,
    eta: &Tensor,
    labels: &[usize],
    lambda: f32,
    mode: Mode,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x_clean = tape.leaf(x.clone());
    let clean = model.logits(&mut tape, x_clean, mode, ParamReg::Frozen)?;
    let mut adv = x.clone();
    for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
        *a = (*a + e).clamp(0.0, 1.0);
    }
    let x_adv = tape.leaf(adv);
    let advl = model.logits(&mut tape, x_adv, mode, ParamReg::Frozen)?;
    let ce = tape.cross_entropy(clean, labels)?;
    let kl = tape.kl_divergence(clean, advl)?;
    Ok(tape.scalar(ce) + tape.scalar(kl) / lambda as f64)
}

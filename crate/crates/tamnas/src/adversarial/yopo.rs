//! TRADES-YOPO-m-n: adversarial training that couples the perturbation to
//! the first layer only. Each batch runs m full forward/backward passes;
//! between them, n cheap first-layer-only passes update the perturbation
//! against a frozen co-state, instead of m*n full attack passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{project, trades_loss_graph, AttackSpec, Model, TradesConfig};
use crate::blocks::ParamReg;
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tape, Tensor};

/// What one optimizer step observed.
#[derive(Debug, Clone)]
pub struct YopoStepReport {
    pub loss: f64,
    pub full_passes: usize,
    pub first_layer_passes: usize,
    /// Parameter gradients from the final full pass, ready for an optimizer.
    pub grads: Vec<(String, Vec<f32>)>,
}

/// One TRADES-YOPO step over a batch. Returns the TRADES loss of the final
/// full pass and its parameter gradients; the caller applies the update.
///
/// Contract: m full passes total. Each computes the TRADES loss at the
/// current perturbation and the co-state p = d(loss)/d(first-layer output on
/// the adversarial branch); p then stays frozen while n first-layer passes
/// ascend the perturbation on <p, first_layer(x + eta)>, projected to the
/// epsilon ball and unit box throughout.
pub fn yopo_trades_step<M: Model>(
    model: &mut M,
    x: &Tensor,
    labels: &[usize],
    cfg: &TradesConfig,
    attack: &AttackSpec,
    rng: &mut ChaCha8Rng,
) -> Result<YopoStepReport> {
    cfg.validate()?;
    attack.validate()?;
    let mut eta = Tensor::zeros(x.shape());
    if attack.random_start && attack.epsilon > 0.0 {
        for v in eta.data_mut() {
            *v = rng.gen_range(-attack.epsilon..attack.epsilon);
        }
    }
    clamp_eta(&mut eta, x, attack.epsilon);

    let mut loss_value = f64::NAN;
    let mut grads = Vec::new();
    let mut first_layer_passes = 0;
    for _ in 0..cfg.m {
        // full pass: TRADES loss, parameter gradients, co-state
        let mut tape = Tape::new();
        let (loss, adv_trace) =
            trades_loss_graph(&mut tape, model, x, &eta, labels, cfg.lambda, Mode::Train, ParamReg::Trainable)?;
        tape.backward(loss)?;
        loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { context: "yopo trades loss".into(), batch_index: None });
        }
        let costate = Tensor::new(
            tape.value(adv_trace.stem_conv).shape().to_vec(),
            tape.grad(adv_trace.stem_conv)
                .expect("first-layer gradient exists on the adversarial branch")
                .to_vec(),
        )?;
        grads = tape.named_grads();

        // n first-layer-only perturbation updates against the frozen co-state
        for _ in 0..cfg.n {
            let mut adv = x.clone();
            for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
                *a = (*a + e).clamp(0.0, 1.0);
            }
            let mut inner = Tape::new();
            let adv_in = inner.var(adv);
            let stem = model.first_layer(&mut inner, adv_in)?;
            let p = inner.leaf(costate.clone());
            let coupled = inner.mul(stem, p)?;
            let objective = inner.sum(coupled);
            inner.backward(objective)?;
            let g = inner.grad(adv_in).expect("perturbation gradient exists");
            for (e, &gv) in eta.data_mut().iter_mut().zip(g) {
                *e += attack.step_size
                    * if gv > 0.0 {
                        1.0
                    } else if gv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
            }
            clamp_eta(&mut eta, x, attack.epsilon);
            first_layer_passes += 1;
        }
    }
    Ok(YopoStepReport { loss: loss_value, full_passes: cfg.m, first_layer_passes, grads })
}

/// Keep eta inside the epsilon ball and x + eta inside the unit box.
fn clamp_eta(eta: &mut Tensor, x: &Tensor, epsilon: f32) {
    let mut adv = x.clone();
    for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
        *a += *e;
    }
    project(x, &mut adv, epsilon);
    for ((e, &a), &orig) in eta.data_mut().iter_mut().zip(adv.data()).zip(x.data()) {
        *e = a - orig;
    }
}

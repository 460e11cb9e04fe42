//! Projected gradient descent in the l-infinity ball: cross-entropy ascent
//! for attacks, KL-consistency ascent for the TRADES inner problem.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{project, AttackSpec, Model};
use crate::blocks::ParamReg;
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tape, Tensor};

fn random_start(x: &Tensor, spec: &AttackSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let mut adv = x.clone();
    if spec.random_start && spec.epsilon > 0.0 {
        for v in adv.data_mut() {
            *v += rng.gen_range(-spec.epsilon..spec.epsilon);
        }
    }
    project(x, &mut adv, spec.epsilon);
    adv
}

fn check_finite(grad: &[f32], batch: usize, context: &str) -> Result<()> {
    if let Some(bad) = grad.iter().position(|v| !v.is_finite()) {
        let stride = grad.len() / batch.max(1);
        return Err(Error::NonFinite {
            context: context.into(),
            batch_index: Some(bad / stride.max(1)),
        });
    }
    Ok(())
}

fn ascend(adv: &mut Tensor, grad: &[f32], step: f32) {
    for (a, &g) in adv.data_mut().iter_mut().zip(grad) {
        // exact sign: zero gradient moves nothing
        *a += step * if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 };
    }
}

/// PGD attack: iterated signed-gradient ascent on cross-entropy, projected
/// onto the epsilon ball and the unit box after every step.
pub fn pgd_attack<M: Model>(
    model: &mut M,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    spec.validate()?;
    if spec.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let mut adv = random_start(x, spec, rng);
    for _ in 0..spec.steps {
        let mut tape = Tape::new();
        let input = tape.var(adv.clone());
        let logits = model.logits(&mut tape, input, Mode::Eval, ParamReg::Frozen)?;
        let loss = tape.cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        let grad = tape.grad(input).expect("input gradient exists after backward");
        check_finite(grad, labels.len(), "pgd_attack input gradient")?;
        ascend(&mut adv, grad, spec.step_size);
        project(x, &mut adv, spec.epsilon);
    }
    Ok(adv)
}

/// Inner maximization of the TRADES objective: signed-gradient ascent on
/// KL(f(x) || f(x + eta)) with the same ball/box contract as `pgd_attack`.
/// Returns the perturbation eta.
pub fn find_trades_perturbation<M: Model>(
    model: &mut M,
    x: &Tensor,
    spec: &AttackSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    spec.validate()?;
    let batch = x.shape()[0];
    if spec.epsilon == 0.0 {
        return Ok(Tensor::zeros(x.shape()));
    }
    // frozen reference distribution f(x)
    let clean_logits = {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let logits = model.logits(&mut tape, input, Mode::Eval, ParamReg::Frozen)?;
        tape.value(logits).clone()
    };
    let mut adv = random_start(x, spec, rng);
    for _ in 0..spec.steps {
        let mut tape = Tape::new();
        let input = tape.var(adv.clone());
        let q = model.logits(&mut tape, input, Mode::Eval, ParamReg::Frozen)?;
        let p = tape.leaf(clean_logits.clone());
        let kl = tape.kl_divergence(p, q)?;
        tape.backward(kl)?;
        let grad = tape.grad(input).expect("input gradient exists after backward");
        check_finite(grad, batch, "trades perturbation gradient")?;
        ascend(&mut adv, grad, spec.step_size);
        project(x, &mut adv, spec.epsilon);
    }
    let mut eta = adv;
    for (e, &orig) in eta.data_mut().iter_mut().zip(x.data()) {
        *e -= orig;
    }
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::linf_distance;
    use crate::blocks::{ForwardTrace, SubnetParams};
    use crate::rng::rng_from_seed;
    use crate::tensor::NodeId;

    /// Two-class linear model: logits = [0, w . x] per sample.
    struct LinearModel {
        params: SubnetParams,
    }

    impl LinearModel {
        fn new(w: Vec<f32>) -> Self {
            let mut params = SubnetParams::default();
            let dim = w.len();
            params
                .learned
                .insert("w".into(), Tensor::new(vec![1, dim], w).unwrap());
            LinearModel { params }
        }
    }

    impl Model for LinearModel {
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
            _mode: Mode,
            reg: ParamReg,
        ) -> Result<ForwardTrace> {
            let w = &self.params.learned["w"];
            let wid = match reg {
                ParamReg::Trainable => tape.param("w", w),
                ParamReg::Frozen => tape.leaf(w.clone()),
            };
            let b = tape.leaf(Tensor::zeros(&[1]));
            let z = tape.fully_connected(input, wid, b)?; // (N,1)
            let zeros = tape.leaf(Tensor::zeros(tape.value(z).shape()));
            let logits = tape.concat(zeros, z, 1)?; // (N,2): class 1 iff w.x > 0
            Ok(ForwardTrace { stem_conv: z, logits })
        }

        fn first_layer(&mut self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
            let w = tape.leaf(self.params.learned["w"].clone());
            let b = tape.leaf(Tensor::zeros(&[1]));
            tape.fully_connected(input, w, b)
        }
    }

    #[test]
    fn zero_epsilon_returns_input_exactly() {
        let mut model = LinearModel::new(vec![0.5, -0.25, 0.125, 1.0]);
        let x = Tensor::uniform(&[2, 4], 0.1, 0.9, &mut rng_from_seed(1));
        let spec = AttackSpec::pgd(0.0, 10);
        let adv = pgd_attack(&mut model, &x, &[0, 1], &spec, &mut rng_from_seed(2)).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn ball_and_box_hold_after_attack() {
        let mut model = LinearModel::new(vec![1.0, -2.0, 0.5, 0.25]);
        let spec = AttackSpec::pgd(0.1, 7);
        for seed in 0..50 {
            let x = Tensor::uniform(&[3, 4], 0.0, 1.0, &mut rng_from_seed(seed));
            let adv =
                pgd_attack(&mut model, &x, &[1, 0, 1], &spec, &mut rng_from_seed(seed + 1))
                    .unwrap();
            assert!(linf_distance(&adv, &x) <= spec.epsilon + 1e-7);
            assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn converged_linear_pgd_matches_closed_form_and_corner_enumeration() {
        // logit w.x for class 1; converged PGD reaches
        // clip(x - y_sign * eps * sign(w)) elementwise
        let w = vec![0.8, -0.6, 0.3, -0.2, 0.9, -0.5, 0.1, 0.7];
        let mut model = LinearModel::new(w.clone());
        let eps = 0.07f32;
        let mut spec = AttackSpec::pgd(eps, 40);
        spec.random_start = false;
        let mut rng = rng_from_seed(3);
        for seed in 0..20 {
            let x = Tensor::uniform(&[1, 8], 0.0, 1.0, &mut rng_from_seed(100 + seed));
            for label in [0usize, 1] {
                let adv =
                    pgd_attack(&mut model, &x, &[label], &spec, &mut rng).unwrap();
                // closed form: label 1 (y=+1) descends the logit, label 0 ascends
                let y_sign = if label == 1 { 1.0f32 } else { -1.0 };
                let expect: Vec<f32> = x
                    .data()
                    .iter()
                    .zip(&w)
                    .map(|(&xv, &wv)| (xv - y_sign * eps * wv.signum()).clamp(0.0, 1.0))
                    .collect();
                assert_eq!(adv.data(), expect.as_slice(), "label {label} seed {seed}");

                // exhaustive corner enumeration: the adversarial optimum of a
                // linear logit lies at a corner of the feasible box
                let mut best_corner = expect.clone();
                let mut best_loss = f64::NEG_INFINITY;
                for mask in 0..(1u32 << 8) {
                    let corner: Vec<f32> = (0..8)
                        .map(|d| {
                            let lo = (x.data()[d] - eps).max(0.0);
                            let hi = (x.data()[d] + eps).min(1.0);
                            if mask & (1 << d) != 0 {
                                hi
                            } else {
                                lo
                            }
                        })
                        .collect();
                    let z: f64 = corner.iter().zip(&w).map(|(&c, &wv)| (c * wv) as f64).sum();
                    // cross-entropy of [0, z] against label
                    let loss = if label == 1 {
                        (1.0 + z.exp()).ln() - z
                    } else {
                        (1.0 + z.exp()).ln()
                    };
                    if loss > best_loss {
                        best_loss = loss;
                        best_corner = corner;
                    }
                }
                for (a, b) in adv.data().iter().zip(&best_corner) {
                    assert!((a - b).abs() < 1e-6, "label {label} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn trades_perturbation_respects_ball_and_increases_kl() {
        let mut model = LinearModel::new(vec![1.5, -1.0, 0.75, -0.25]);
        let mut spec = AttackSpec::pgd(0.08, 12);
        spec.random_start = false;
        let x = Tensor::uniform(&[4, 4], 0.2, 0.8, &mut rng_from_seed(5));
        let eta =
            find_trades_perturbation(&mut model, &x, &spec, &mut rng_from_seed(6)).unwrap();
        let max_eta = eta.data().iter().map(|v| v.abs()).fold(0.0f32, f32::max);
        assert!(max_eta <= spec.epsilon + 1e-7);
        assert!(max_eta > 0.0);

        // KL at the found eta is at least the KL at eta = 0, which is 0
        let kl = {
            let mut tape = Tape::new();
            let xin = tape.leaf(x.clone());
            let clean = model
                .logits(&mut tape, xin, Mode::Eval, ParamReg::Frozen)
                .unwrap();
            let mut adv = x.clone();
            for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
                *a += e;
            }
            let ain = tape.leaf(adv);
            let advl = model
                .logits(&mut tape, ain, Mode::Eval, ParamReg::Frozen)
                .unwrap();
            let kl = tape.kl_divergence(clean, advl).unwrap();
            tape.scalar(kl)
        };
        assert!(kl >= 0.0);
        assert!(kl > 1e-4, "ascent should move the distribution, kl = {kl}");
    }

    #[test]
    fn trades_kl_is_monotone_under_small_steps() {
        // same start, increasing step counts share their trajectory prefix
        let mut model = LinearModel::new(vec![0.9, -0.7, 0.45, -0.3]);
        let x = Tensor::uniform(&[2, 4], 0.3, 0.7, &mut rng_from_seed(7));
        let kl_at = |k: usize, model: &mut LinearModel| -> f64 {
            let spec = AttackSpec {
                epsilon: 0.1,
                steps: k,
                step_size: 0.002,
                random_start: false,
            };
            let eta =
                find_trades_perturbation(model, &x, &spec, &mut rng_from_seed(8)).unwrap();
            let mut tape = Tape::new();
            let xin = tape.leaf(x.clone());
            let clean = model.logits(&mut tape, xin, Mode::Eval, ParamReg::Frozen).unwrap();
            let mut adv = x.clone();
            for (a, e) in adv.data_mut().iter_mut().zip(eta.data()) {
                *a += e;
            }
            let ain = tape.leaf(adv);
            let advl = model.logits(&mut tape, ain, Mode::Eval, ParamReg::Frozen).unwrap();
            let kl = tape.kl_divergence(clean, advl).unwrap();
            tape.scalar(kl)
        };
        let mut prev = 0.0;
        for k in 1..=10 {
            let cur = kl_at(k, &mut model);
            assert!(cur >= prev - 1e-6, "step {k}: {cur} < {prev}");
            prev = cur;
        }
    }
}

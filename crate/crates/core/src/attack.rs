//! L∞ inner maximization: FGSM and projected gradient ascent.
//!
//! Every iterate is clamped to the ε-box around the clean input first and to
//! `[0, 1]` second. `sign(0)` is taken as `0`, so coordinates with a zero
//! gradient stay where they are.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, kl_divergence, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec::cifar()
    }
}

impl AttackSpec {
    /// ε = 8/255, step 2/255, 10 steps, random start.
    pub fn cifar() -> Self {
        AttackSpec {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_start: true,
        }
    }

    pub fn with_steps(self, steps: usize) -> Self {
        AttackSpec { steps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config(format!("step size {} must be > 0", self.step_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn project(v: f64, center: f64, epsilon: f64) -> f64 {
    v.clamp(center - epsilon, center + epsilon).clamp(0.0, 1.0)
}

/// One signed ascent step followed by projection.
fn ascend(current: &mut [f64], grad: &[f64], clean: &[f64], step: f64, epsilon: f64) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("attack gradient is not finite".into()));
    }
    for ((x, g), c) in current.iter_mut().zip(grad).zip(clean) {
        *x = project(*x + step * sign(*g), *c, epsilon);
    }
    Ok(())
}

fn ce_input_grad(model: &Mlp, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let tape = model.forward_tape(x)?;
    let (_, dlogits) = cross_entropy(tape.logits(), y)?;
    Ok(model.input_grad(&tape, &dlogits))
}

/// Single step of size ε along the sign of the cross-entropy input gradient.
pub fn fgsm(model: &Mlp, x: &[f64], y: usize, spec: &AttackSpec) -> Result<Vec<f64>> {
    let grad = ce_input_grad(model, x, y)?;
    let mut adv = x.to_vec();
    ascend(&mut adv, &grad, x, spec.epsilon, spec.epsilon)?;
    Ok(adv)
}

/// Multi-step PGD on the cross-entropy loss. With `random_start` the search
/// begins from a uniform draw in the ε-box.
pub fn pgd<R: Rng + ?Sized>(
    model: &Mlp,
    x: &[f64],
    y: usize,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    projected_ascent(x, spec, rng, |adv| ce_input_grad(model, adv, y))
}

/// PGD against an arbitrary objective whose input gradient is given by
/// `grad`.
pub fn projected_ascent<R, F>(x: &[f64], spec: &AttackSpec, rng: &mut R, mut grad: F) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut adv = x.to_vec();
    if spec.random_start {
        for (a, c) in adv.iter_mut().zip(x) {
            let noise: f64 = rng.gen_range(-spec.epsilon..=spec.epsilon);
            *a = project(c + noise, *c, spec.epsilon);
        }
    }
    for _ in 0..spec.steps {
        let g = grad(&adv)?;
        ascend(&mut adv, &g, x, spec.step_size, spec.epsilon)?;
    }
    Ok(adv)
}

/// PGD that maximizes `KL(p(x) || p(x̃))` against fixed clean logits, as used
/// by TRADES. The search starts from a small Gaussian jitter (σ = 0.001)
/// because the divergence has zero gradient at `x̃ = x`.
pub fn pgd_kl<R: Rng + ?Sized>(
    model: &Mlp,
    x: &[f64],
    clean_logits: &[f64],
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut adv: Vec<f64> = x
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            project(c + 0.001 * z, *c, spec.epsilon)
        })
        .collect();
    for _ in 0..spec.steps {
        let tape = model.forward_tape(&adv)?;
        let (_, _, grad_adv) = kl_divergence(clean_logits, tape.logits());
        let grad = model.input_grad(&tape, &grad_adv);
        ascend(&mut adv, &grad, x, spec.step_size, spec.epsilon)?;
    }
    Ok(adv)
}

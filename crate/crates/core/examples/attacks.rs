//! Train a small classifier, then attack it with FGSM and PGD and check that
//! every adversarial input stays inside the ε-ball and the unit box.
//!
//!     cargo run --release --example attacks

use slackfed::attack::AttackSpec;
use slackfed::data::{make_synthetic, make_synthetic_split, SyntheticSpec};
use slackfed::nn::{sgd_step, SgdState};
use slackfed::rng::{stream, Purpose};
use slackfed::{evaluate, fgsm, pgd, EvalAttack, Mlp, SgdConfig};

fn main() -> slackfed::Result<()> {
    let spec = SyntheticSpec {
        n_per_class: 100,
        classes: 4,
        dim: 8,
        separation: 1.0,
        spread: 0.12,
        seed: 3,
    };
    let train = make_synthetic(&spec)?;
    let test = make_synthetic_split(&spec, 1)?;

    let mut model = Mlp::new(&[8, 16, 4], &mut stream(0, Purpose::Init, &[]))?;
    let mut state = SgdState::new(SgdConfig::default(), model.layout().clone());
    for _ in 0..30 {
        for i in 0..train.len() {
            let (x, y) = train.get(i);
            let (_, grads, _) = model.loss_and_grads(x, y)?;
            sgd_step(&mut model, &grads, &mut state)?;
        }
    }

    let attack = AttackSpec {
        epsilon: 0.1,
        step_size: 0.025,
        steps: 10,
        random_start: true,
    };
    let mut rng = stream(0, Purpose::Attack, &[]);
    let mut worst: f64 = 0.0;
    for i in 0..test.len() {
        let (x, y) = test.get(i);
        for adv in [fgsm(&model, x, y, &attack)?, pgd(&model, x, y, &attack, &mut rng)?] {
            for (a, b) in adv.iter().zip(x) {
                assert!((0.0..=1.0).contains(a));
                worst = worst.max((a - b).abs());
            }
        }
    }
    println!("largest perturbation {worst:.6} (budget {})", attack.epsilon);

    println!("natural accuracy {:.3}", evaluate(&model, &test, EvalAttack::None, 0)?);
    println!("FGSM accuracy    {:.3}", evaluate(&model, &test, EvalAttack::Fgsm(attack), 0)?);
    println!(
        "PGD-20 accuracy  {:.3}",
        evaluate(&model, &test, EvalAttack::Pgd(attack.with_steps(20)), 0)?
    );
    Ok(())
}

use std::time::Instant;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{fgsm_targeted, iterative_attack, AttackLoss, AttackSpec};
use crate::error::Result;
use crate::grad::{Network, OptState, Tape, Tensor};
use crate::model::QueryModel;
use crate::train::objective::outer_loss;
use crate::train::{gather, record, Ctx, Method, RunLog, TrainLoss, TrainOutput};

/// Standard training and adversarial training on FGSM or PGD points.
pub(super) fn run(ctx: &Ctx, mut model: Network, rng: &mut ChaCha8Rng) -> Result<TrainOutput> {
    let spec = ctx.spec;
    let tm = ctx.threat;
    let mut opt = OptState::new(spec.optimizer.clone(), &model.param_shapes());
    let mut log = RunLog::new();
    let started = Instant::now();
    let mut pgd = AttackSpec::pgd(spec.pgd.steps);
    pgd.step_size = Some(spec.pgd.step_fraction * tm.epsilon);
    if let TrainLoss::Trades { .. } = spec.loss {
        pgd.loss = AttackLoss::KlToNatural;
    }
    for epoch in 0..spec.epochs {
        opt.set_lr(ctx.lr_at(epoch));
        for (b, rows) in ctx.batches(rng).iter().enumerate() {
            let (x, y) = gather(ctx.data, rows);
            let delta = match spec.method {
                Method::AtFgsm => {
                    let target = least_likely(&model, &x)?;
                    fgsm_targeted(&model, &x, &target, tm)?
                }
                Method::AtPgd => iterative_attack(&model, &x, &y, tm, &pgd, rng.next_u64())?.delta,
                _ => Tensor::zeros(&[x.rows(), x.cols()]),
            };
            let xa_val = tm.apply(&x, &delta)?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let xa = tape.constant(xa_val);
            let out = outer_loss(&mut tape, &bound, &x, xa, &y, 1, spec.loss)?;
            let j = tape.value(out.total).item();
            let loss = tape.value(out.rows).sum() / y.len() as f64;
            let grads = tape.backward(out.total)?;
            opt.step(&mut model.params_mut(), &bound.grads(&grads))?;
            record(&mut log, epoch, b, j, loss, None, None, started)?;
        }
    }
    Ok(TrainOutput {
        model,
        explicit_generator: None,
        implicit_sampler: None,
        posterior: None,
        log,
    })
}

/// Lowest-logit class per row; ties go to the lower index.
fn least_likely(model: &Network, x: &Tensor) -> Result<Vec<usize>> {
    let z = model.logits(x)?;
    Ok((0..z.rows())
        .map(|i| {
            let row = z.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

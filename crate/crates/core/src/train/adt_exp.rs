use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::dist::{explicit_on_tape, maximize_explicit, TanhGaussianParams};
use crate::error::Result;
use crate::grad::{Network, OptState, Tape};
use crate::model::QueryModel;
use crate::train::objective::{inner_rows, outer_loss, perturbed};
use crate::train::{gather, normal_rows, record, Ctx, RunLog, TrainLoss, TrainOutput};

/// Per batch: fit each example's tanh-Gaussian from its initial state by `T` Adam ascent
/// steps, then take one classifier step on `J` with `k` fresh samples from the fit.
pub(super) fn run(ctx: &Ctx, mut model: Network, rng: &mut ChaCha8Rng) -> Result<TrainOutput> {
    let spec = ctx.spec;
    let tm = ctx.threat;
    let inner = &spec.inner;
    let k = inner.samples;
    let mut opt = OptState::new(spec.optimizer.clone(), &model.param_shapes());
    let mut log = RunLog::new();
    let started = Instant::now();
    for epoch in 0..spec.epochs {
        opt.set_lr(ctx.lr_at(epoch));
        for (b, rows) in ctx.batches(rng).iter().enumerate() {
            let (x, y) = gather(ctx.data, rows);
            let (n, d) = (x.rows(), x.cols());
            let tiled: Vec<usize> = (0..k).flat_map(|_| y.iter().copied()).collect();
            let natural = match spec.loss {
                TrainLoss::Ce => None,
                TrainLoss::Trades { .. } => Some(model.logits(&x)?),
            };
            let mut params = TanhGaussianParams::init(&[n, d]);
            maximize_explicit(
                |tape, xa| inner_rows(tape, &model, natural.as_ref(), xa, &tiled, k),
                &x,
                &mut params,
                tm,
                inner,
                rng,
            )?;
            let sigma = params.sigma();

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mu = tape.constant(params.mu.clone());
            let sv = tape.constant(sigma.clone());
            let mu_t = tape.tile_rows(mu, k)?;
            let s_t = tape.tile_rows(sv, k)?;
            let r = normal_rows(k * n, d, rng);
            let s = explicit_on_tape(&mut tape, mu_t, s_t, &r, tm.epsilon)?;
            let xc = tape.constant(x.clone());
            let xt = tape.tile_rows(xc, k)?;
            let xa = perturbed(&mut tape, xt, s.delta, tm)?;
            let out = outer_loss(&mut tape, &bound, &x, xa, &y, k, spec.loss)?;
            let m = (k * n) as f64;
            let entropy = tape.value(s.nld).sum() / m;
            let j = tape.value(out.total).item() + inner.lambda * entropy;
            let loss = tape.value(out.rows).sum() / m;
            let grads = tape.backward(out.total)?;
            opt.step(&mut model.params_mut(), &bound.grads(&grads))?;
            record(
                &mut log,
                epoch,
                b,
                j,
                loss,
                Some(entropy),
                Some(&sigma),
                started,
            )?;
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

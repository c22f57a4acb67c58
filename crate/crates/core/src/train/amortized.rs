use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::dist::{
    conditioning, explicit_on_tape, sample_z, ExplicitGenerator, ImplicitSampler,
    VariationalPosterior,
};
use crate::error::Result;
use crate::grad::{Network, OptState, Tape};
use crate::train::objective::{outer_loss, perturbed};
use crate::train::{gather, normal_rows, record, Ctx, RunLog, TrainOutput};

/// Simultaneous descent on the classifier and ascent on an explicit generator, one
/// sample per example.
pub(super) fn run_explicit(
    ctx: &Ctx,
    mut model: Network,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutput> {
    let spec = ctx.spec;
    let tm = ctx.threat;
    let lambda = spec.inner.lambda;
    let mut gen = ExplicitGenerator::new(ctx.data.dim(), &spec.generator.hidden, rng)?;
    let mut opt = OptState::new(spec.optimizer.clone(), &model.param_shapes());
    let mut gen_opt = OptState::new(spec.generator.optimizer.clone(), &gen.net.param_shapes());
    let mut log = RunLog::new();
    let started = Instant::now();
    for epoch in 0..spec.epochs {
        opt.set_lr(ctx.lr_at(epoch));
        for (b, rows) in ctx.batches(rng).iter().enumerate() {
            let (x, y) = gather(ctx.data, rows);
            let (n, d) = (x.rows(), x.cols());
            let cond = conditioning(&model, &x, &y, tm)?;

            let mut tape = Tape::new();
            let cb = model.bind(&mut tape);
            let gb = gen.net.bind(&mut tape);
            let c = tape.constant(cond);
            let (mu, sigma) = gen.heads_on_tape(&mut tape, &gb, c)?;
            let r = normal_rows(n, d, rng);
            let s = explicit_on_tape(&mut tape, mu, sigma, &r, tm.epsilon)?;
            let xc = tape.constant(x.clone());
            let xa = perturbed(&mut tape, xc, s.delta, tm)?;
            let out = outer_loss(&mut tape, &cb, &x, xa, &y, 1, spec.loss)?;
            let ent = tape.mean(s.nld)?;
            let reg = tape.scale(ent, lambda)?;
            let obj = tape.add(out.total, reg)?;

            let j = tape.value(obj).item();
            let loss = tape.value(out.rows).sum() / n as f64;
            let entropy = tape.value(ent).item();
            let sig = tape.value(sigma).clone();
            let grads = tape.backward(obj)?;
            opt.step(&mut model.params_mut(), &cb.grads(&grads))?;
            gen_opt.ascend(&mut gen.net.params_mut(), &gb.grads(&grads))?;
            record(
                &mut log,
                epoch,
                b,
                j,
                loss,
                Some(entropy),
                Some(&sig),
                started,
            )?;
        }
    }
    gen.trained = true;
    Ok(TrainOutput {
        model,
        explicit_generator: Some(gen),
        implicit_sampler: None,
        posterior: None,
        log,
    })
}

/// Simultaneous descent on the classifier and ascent on an implicit sampler and its
/// variational posterior; the entropy enters through `λ·log q(z | δ)`.
pub(super) fn run_implicit(
    ctx: &Ctx,
    mut model: Network,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutput> {
    let spec = ctx.spec;
    let tm = ctx.threat;
    let lambda = spec.inner.lambda;
    let d = ctx.data.dim();
    let z_dim = spec.generator.z_dim;
    let mut sampler = ImplicitSampler::new(d, z_dim, &spec.generator.hidden, rng)?;
    let mut q = VariationalPosterior::new(d, z_dim, &spec.posterior.hidden, rng)?;
    let mut opt = OptState::new(spec.optimizer.clone(), &model.param_shapes());
    let mut gen_opt = OptState::new(
        spec.generator.optimizer.clone(),
        &sampler.net.param_shapes(),
    );
    let mut q_opt = OptState::new(spec.posterior.optimizer.clone(), &q.net.param_shapes());
    let mut log = RunLog::new();
    let started = Instant::now();
    for epoch in 0..spec.epochs {
        opt.set_lr(ctx.lr_at(epoch));
        for (b, rows) in ctx.batches(rng).iter().enumerate() {
            let (x, y) = gather(ctx.data, rows);
            let n = x.rows();
            let cond = conditioning(&model, &x, &y, tm)?;

            let mut tape = Tape::new();
            let cb = model.bind(&mut tape);
            let gb = sampler.net.bind(&mut tape);
            let qb = q.net.bind(&mut tape);
            let c = tape.constant(cond);
            let z = tape.constant(sample_z(n, z_dim, rng));
            let delta = sampler.delta_on_tape(&mut tape, &gb, c, z, tm.epsilon)?;
            let xc = tape.constant(x.clone());
            let xa = perturbed(&mut tape, xc, delta, tm)?;
            let out = outer_loss(&mut tape, &cb, &x, xa, &y, 1, spec.loss)?;
            let lq = q.log_q_on_tape(&mut tape, &qb, z, delta, tm.epsilon)?;
            let bound = tape.mean(lq)?;
            let reg = tape.scale(bound, lambda)?;
            let obj = tape.add(out.total, reg)?;

            let j = tape.value(obj).item();
            let loss = tape.value(out.rows).sum() / n as f64;
            let entropy = tape.value(bound).item();
            let grads = tape.backward(obj)?;
            opt.step(&mut model.params_mut(), &cb.grads(&grads))?;
            gen_opt.ascend(&mut sampler.net.params_mut(), &gb.grads(&grads))?;
            q_opt.ascend(&mut q.net.params_mut(), &qb.grads(&grads))?;
            record(&mut log, epoch, b, j, loss, Some(entropy), None, started)?;
        }
    }
    sampler.trained = true;
    Ok(TrainOutput {
        model,
        explicit_generator: None,
        implicit_sampler: Some(sampler),
        posterior: Some(q),
        log,
    })
}

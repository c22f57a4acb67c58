//! Feature-space attack: push the penultimate representation of `x + δ` away from that
//! of a target example of another class.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attacks::{as_matrix, improves, stream_rng, AdvResult, AttackSpec};
use crate::data::Dataset;
use crate::dist::{sign, ThreatModel};
use crate::error::{shape_err, Error, Result};
use crate::grad::{cross_entropy_rows, Tape, Tensor};
use crate::model::GradModel;

/// Runs one signed descent on `cos(φ(x + δ), φ(x'))` per target and keeps, per example,
/// the best outcome by `(misclassified, cross entropy)`.
///
/// Targets for example `i` are a prefix of a permutation of the foreign-class pool drawn
/// from stream `i` of `seed`; run `t` starts from stream `n + t`. Raising `num_targets`
/// therefore only adds runs.
pub fn feature_attack(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    pool: &Dataset,
    tm: &ThreatModel,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AdvResult> {
    if x.rows() != y.len() {
        return shape_err("feature_attack", "row/label count mismatch");
    }
    let x = as_matrix(x)?;
    let (n, d) = (x.rows(), x.cols());
    let cfg = &spec.feature;
    let alpha = cfg.step_size.unwrap_or(tm.epsilon / 8.0);

    let mut targets: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (i, &yi) in y.iter().enumerate() {
        let mut foreign: Vec<usize> = (0..pool.len())
            .filter(|&j| pool.labels()[j] != yi)
            .collect();
        if foreign.is_empty() {
            return Err(Error::NoForeignClass(yi));
        }
        foreign.shuffle(&mut stream_rng(seed, i as u64));
        foreign.truncate(cfg.num_targets);
        targets.push(foreign);
    }

    let mut best_delta = Tensor::zeros(&[n, d]);
    let mut best: Vec<Option<(bool, f64)>> = vec![None; n];
    let mut trace = Vec::new();
    for t in 0..cfg.num_targets {
        let rows: Vec<usize> = (0..n).filter(|&i| t < targets[i].len()).collect();
        if rows.is_empty() {
            break;
        }
        let xs = x.select_rows(&rows);
        let tgt = pool
            .features()
            .select_rows(&rows.iter().map(|&i| targets[i][t]).collect::<Vec<_>>());
        let tgt_feat = {
            let mut tape = Tape::new();
            let tv = tape.constant(tgt);
            let f = model.features_on_tape(&mut tape, tv)?;
            tape.value(f).clone()
        };
        let mut rng = stream_rng(seed, (n + t) as u64);
        let mut delta = if spec.random_start {
            let data = (0..rows.len() * d)
                .map(|_| rng.random_range(-tm.epsilon..=tm.epsilon))
                .collect();
            Tensor::new(vec![rows.len(), d], data)?
        } else {
            Tensor::zeros(&[rows.len(), d])
        };
        tm.project(&xs, &mut delta)?;
        for _ in 0..cfg.steps {
            let mut tape = Tape::new();
            let xv = tape.input(xs.add(&delta)?);
            let f = model.features_on_tape(&mut tape, xv)?;
            let tf = tape.constant(tgt_feat.clone());
            let cos = tape.cosine_rows(f, tf)?;
            let total = tape.sum(cos)?;
            trace.push(tape.value(total).item() / rows.len() as f64);
            let g = tape.backward(total)?.get(xv);
            for (dj, gj) in delta.data_mut().iter_mut().zip(g.data()) {
                *dj -= alpha * sign(*gj);
            }
            tm.project(&xs, &mut delta)?;
        }
        let xa = xs.add(&delta)?;
        let logits = model.logits(&xa)?;
        let pred = logits.argmax_rows();
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let ce = cross_entropy_rows(&logits, &ys)?;
        for (r, &i) in rows.iter().enumerate() {
            let mis = pred[r] != y[i];
            if improves(mis, ce[r], best[i]) {
                best[i] = Some((mis, ce[r]));
                best_delta.row_mut(i).copy_from_slice(delta.row(r));
            }
        }
    }
    Ok(AdvResult {
        delta: best_delta,
        success: best.iter().map(|b| b.is_some_and(|(m, _)| m)).collect(),
        loss_trace: trace,
    })
}

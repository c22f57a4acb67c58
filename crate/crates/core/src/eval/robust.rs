use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::Attack;
use crate::data::Dataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::grad::Tensor;
use crate::model::GradModel;

/// Rows per attack call; keeps tiled distributional batches small.
const CHUNK: usize = 256;

/// Accuracy of one model under one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: String,
    pub accuracy: f64,
    /// Per example: still classified correctly after the attack.
    pub correct: Vec<bool>,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub natural_accuracy: f64,
    /// In suite order.
    pub attacks: Vec<AttackOutcome>,
    pub robust_accuracy: f64,
    /// Per example: correct under every attack of the suite.
    pub worst_case: Vec<bool>,
}

impl EvalReport {
    pub fn accuracy_of(&self, attack: &str) -> Option<f64> {
        self.attacks
            .iter()
            .find(|a| a.attack == attack)
            .map(|a| a.accuracy)
    }
}

/// Example-wise AND of correctness masks and the resulting accuracy.
pub fn aggregate(masks: &[Vec<bool>]) -> Result<(f64, Vec<bool>)> {
    let Some(first) = masks.first() else {
        return invalid("aggregate needs at least one mask");
    };
    let n = first.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if masks.iter().any(|m| m.len() != n) {
        return shape_err("aggregate", "masks of different lengths");
    }
    let worst: Vec<bool> = (0..n).map(|i| masks.iter().all(|m| m[i])).collect();
    Ok((frac(&worst), worst))
}

fn frac(mask: &[bool]) -> f64 {
    mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64
}

/// Runs every attack of `suite` on every example of `data`. An example counts as robust
/// only if it is classified correctly under all of them.
pub fn robust_accuracy(
    model: &dyn GradModel,
    data: &Dataset,
    suite: &[&dyn Attack],
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if suite.is_empty() {
        return invalid("attack suite is empty");
    }
    let x = data.features();
    let y = data.labels();
    let natural: Vec<bool> = model
        .predict(x)?
        .iter()
        .zip(y)
        .map(|(p, t)| p == t)
        .collect();
    let mut attacks = Vec::with_capacity(suite.len());
    for attack in suite {
        let started = Instant::now();
        let correct = attacked_correct(model, x, y, *attack, seed)?;
        attacks.push(AttackOutcome {
            attack: attack.name().to_string(),
            accuracy: frac(&correct),
            correct,
            runtime_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    let masks: Vec<Vec<bool>> = attacks.iter().map(|a| a.correct.clone()).collect();
    let (robust, worst_case) = aggregate(&masks)?;
    Ok(EvalReport {
        natural_accuracy: frac(&natural),
        attacks,
        robust_accuracy: robust,
        worst_case,
    })
}

/// Per-example correctness of `model` on adversarial points crafted by `attack`
/// against `crafter`.
pub(crate) fn correct_under(
    crafter: &dyn GradModel,
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    attack: &dyn Attack,
    seed: u64,
) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(y.len());
    let idx: Vec<usize> = (0..y.len()).collect();
    for (c, rows) in idx.chunks(CHUNK).enumerate() {
        let xs = x.select_rows(rows);
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let r = attack.perturb(crafter, &xs, &ys, seed ^ ((c as u64) << 32))?;
        let pred = model.predict(&xs.add(&r.delta)?)?;
        out.extend(pred.iter().zip(&ys).map(|(p, t)| p == t));
    }
    Ok(out)
}

fn attacked_correct(
    model: &dyn GradModel,
    x: &Tensor,
    y: &[usize],
    attack: &dyn Attack,
    seed: u64,
) -> Result<Vec<bool>> {
    correct_under(model, model, x, y, attack, seed)
}

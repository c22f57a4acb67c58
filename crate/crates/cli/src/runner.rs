//! Stage orchestration and artifact output.
//!
//! Every file a command writes lands under the output directory and is listed in
//! `manifest.json`, which is written last, also when a stage fails.

use std::fs;
use std::path::{Path, PathBuf};

use adt_core::attacks::{AmortizedSource, Attack, AttackSpec, ConfiguredAttack};
use adt_core::data::Dataset;
use adt_core::dist::{ExplicitGenerator, ImplicitSampler, ThreatModel};
use adt_core::eval::{
    dist_samples, diversity_l2, dominant_hessian_eigenvalue, loss_surface_grid, pca_project,
    restart_endpoints, robust_accuracy,
};
use adt_core::grad::{Network, Tensor};
use adt_core::train::{train, Method, TrainOutput};
use serde::Serialize;

use crate::config::{load_config, ExperimentConfig};
use crate::data::load_dataset;
use crate::error::CliError;
use crate::report::{fmt6, write_csv, EvalRow, SummaryTable};

/// Rows per attack call in the `attack` stage.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Train,
    Attack,
    Eval,
    Landscape,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Eval => "eval",
            Stage::Landscape => "landscape",
        }
    }
}

/// Shared flags of the config-driven subcommands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_stage: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    exit_code: u8,
    artifacts: Vec<String>,
}

/// Writes files under one directory and remembers what it wrote.
pub struct Artifacts {
    root: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn finish(
        &mut self,
        command: &str,
        failure: Option<(Stage, &CliError)>,
    ) -> Result<(), CliError> {
        let manifest = Manifest {
            command: command.to_string(),
            status: if failure.is_some() { "failed" } else { "ok" },
            failed_stage: failure.map(|(s, _)| s.as_str()),
            error: failure.map(|(_, e)| e.to_string()),
            exit_code: failure.map_or(0, |(_, e)| e.exit_code()),
            artifacts: self.written.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.root.join("manifest.json");
        fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}

/// A trained or reloaded model with whatever generator its method produced.
struct Trained {
    model: Network,
    source: Option<AmortizedSource>,
}

impl From<TrainOutput> for Trained {
    fn from(t: TrainOutput) -> Self {
        let source = t
            .explicit_generator
            .map(AmortizedSource::Explicit)
            .or(t.implicit_sampler.map(AmortizedSource::Implicit));
        Self {
            model: t.model,
            source,
        }
    }
}

struct Session {
    cfg: ExperimentConfig,
    train_set: Dataset,
    test_set: Dataset,
    threat: ThreatModel,
    art: Artifacts,
    trained: Option<Trained>,
}

/// Loads the config, applies `--seed`/`--out`, and runs `stages` in order.
///
/// Returns the output directory on success.
pub fn execute(command: &str, stages: &[Stage], opts: &RunOptions) -> Result<PathBuf, CliError> {
    let mut cfg = load_config(&opts.config, &opts.overrides)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(o) = &opts.out {
        cfg.output_dir = o.clone();
    }
    execute_config(command, stages, cfg)
}

pub fn execute_config(
    command: &str,
    stages: &[Stage],
    cfg: ExperimentConfig,
) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let mut art = Artifacts::create(&cfg.output_dir)?;
    let first = stages.first().copied().unwrap_or(Stage::Train);
    let prepared = (|| {
        art.write("config.toml", cfg.to_toml().as_bytes())?;
        let (train_set, mut test_set) = load_dataset(&cfg.dataset)?;
        if let Some(m) = cfg.eval.max_examples {
            if m < test_set.len() {
                test_set = test_set.subset(&(0..m).collect::<Vec<_>>())?;
            }
        }
        Ok((train_set, test_set))
    })();
    let (train_set, test_set) = match prepared {
        Ok(v) => v,
        Err(e) => {
            art.finish(command, Some((first, &e)))?;
            return Err(e);
        }
    };
    let mut s = Session {
        threat: cfg.threat_model.model(),
        cfg,
        train_set,
        test_set,
        art,
        trained: None,
    };
    for &stage in stages {
        let result = match stage {
            Stage::Train => s.train(),
            Stage::Attack => s.attack(),
            Stage::Eval => s.eval(),
            Stage::Landscape => s.landscape(),
        };
        if let Err(e) = result {
            s.art.finish(command, Some((stage, &e)))?;
            return Err(e);
        }
    }
    s.art.finish(command, None)?;
    Ok(s.art.root().to_path_buf())
}

fn snapshot(net: &Network) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    net.write_snapshot(&mut buf)?;
    Ok(buf)
}

impl Session {
    fn method(&self) -> Method {
        self.cfg.train.method
    }

    fn train(&mut self) -> Result<(), CliError> {
        let out = train(
            &self.cfg.train,
            &self.threat,
            &self.train_set,
            self.cfg.seed,
        )?;
        let mut log = Vec::new();
        out.log.write_jsonl(&mut log)?;
        self.art.write("run_log.jsonl", &log)?;
        self.art.write("model.snap", &snapshot(&out.model)?)?;
        if let Some(g) = &out.explicit_generator {
            self.art.write("generator.snap", &snapshot(&g.net)?)?;
        }
        if let Some(g) = &out.implicit_sampler {
            self.art.write("generator.snap", &snapshot(&g.net)?)?;
        }
        if let Some(q) = &out.posterior {
            self.art.write("posterior.snap", &snapshot(&q.net)?)?;
        }
        self.trained = Some(out.into());
        Ok(())
    }

    /// The model trained in this session, or the snapshots of an earlier `train`.
    fn trained(&mut self) -> Result<&Trained, CliError> {
        if self.trained.is_none() {
            let root = self.art.root().to_path_buf();
            let read = |name: &str| -> Result<Network, CliError> {
                let path = root.join(name);
                let file = fs::File::open(&path).map_err(|e| {
                    CliError::Io(format!(
                        "cannot open {} (run `train` first): {e}",
                        path.display()
                    ))
                })?;
                Ok(Network::read_snapshot(std::io::BufReader::new(file))?)
            };
            let model = read("model.snap")?;
            let source = match self.method() {
                Method::AdtExpAm => {
                    let mut g = ExplicitGenerator::from_network(read("generator.snap")?)?;
                    g.trained = true;
                    Some(AmortizedSource::Explicit(g))
                }
                Method::AdtImpAm => {
                    let mut g = ImplicitSampler::from_network(
                        read("generator.snap")?,
                        self.cfg.train.generator.z_dim,
                    )?;
                    g.trained = true;
                    Some(AmortizedSource::Implicit(g))
                }
                _ => None,
            };
            self.trained = Some(Trained { model, source });
        }
        Ok(self.trained.as_ref().expect("just set"))
    }

    fn suite(&mut self) -> Result<Vec<ConfiguredAttack>, CliError> {
        let pool = self.train_set.clone();
        let threat = self.threat;
        let specs = self.cfg.attacks.clone();
        let source = self.trained()?.source.clone();
        Ok(specs
            .into_iter()
            .map(|spec| {
                let mut a = ConfiguredAttack::new(spec, &threat);
                a.pool = Some(pool.clone());
                a.source = source.clone();
                a
            })
            .collect())
    }

    fn attack(&mut self) -> Result<(), CliError> {
        let suite = self.suite()?;
        let seed = self.cfg.seed;
        let model = self.method().as_str();
        let x = self.test_set.features().clone();
        let y = self.test_set.labels().to_vec();
        let net = &self.trained()?.model;
        let mut rows = Vec::new();
        for a in &suite {
            let (mut success, mut linf, mut l2) = (0usize, 0.0, 0.0);
            for start in (0..y.len()).step_by(CHUNK) {
                let idx: Vec<usize> = (start..(start + CHUNK).min(y.len())).collect();
                let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
                let r = a.perturb(net, &x.select_rows(&idx), &yb, seed)?;
                if !r.delta.all_finite() {
                    return Err(CliError::Numeric(format!(
                        "attack {} produced a non-finite perturbation",
                        a.name()
                    )));
                }
                success += r.success.iter().filter(|&&s| s).count();
                for i in 0..idx.len() {
                    let row = r.delta.row(i);
                    linf += row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    l2 += row.iter().map(|v| v * v).sum::<f64>().sqrt();
                }
            }
            let n = y.len() as f64;
            rows.push(vec![
                model.to_string(),
                a.name().to_string(),
                fmt6(a.threat.epsilon),
                y.len().to_string(),
                fmt6(success as f64 / n),
                fmt6(linf / n),
                fmt6(l2 / n),
            ]);
        }
        let csv = write_csv(
            &[
                "model",
                "attack",
                "epsilon",
                "examples",
                "success_rate",
                "mean_linf",
                "mean_l2",
            ],
            &rows,
        )?;
        self.art.write("attacks.csv", &csv)
    }

    fn eval(&mut self) -> Result<(), CliError> {
        let suite = self.suite()?;
        let refs: Vec<&dyn Attack> = suite.iter().map(|a| a as &dyn Attack).collect();
        let seed = self.cfg.seed;
        let test = self.test_set.clone();
        let net = self.trained()?.model.clone();
        let report = robust_accuracy(&net, &test, &refs, seed)?;
        let model = self.method().as_str();
        let rows = EvalRow::from_report(model, &report, &suite);
        self.art.write("report.csv", &EvalRow::to_csv(&rows)?)?;
        let mut summary = SummaryTable::new(model, &rows, test.len());
        let mut json = serde_json::json!({
            "model": model,
            "seed": seed,
            "examples": test.len(),
            "natural_accuracy": report.natural_accuracy,
            "robust_accuracy": report.robust_accuracy,
            "attacks": report.attacks.iter().zip(&suite).map(|(o, a)| serde_json::json!({
                "attack": o.attack,
                "epsilon": a.threat.epsilon,
                "accuracy": o.accuracy,
                "runtime_ms": o.runtime_ms,
            })).collect::<Vec<_>>(),
        });
        if self.cfg.eval.hessian {
            let (mean, csv) = self.hessian_probe(&net)?;
            self.art.write("hessian.csv", &csv)?;
            json["hessian_mean_eigenvalue"] = mean.into();
            summary.note(format!("mean dominant Hessian eigenvalue: {}", fmt6(mean)));
        }
        if self.cfg.eval.diversity {
            let e = &self.cfg.eval;
            let (rows, pca, exp, pgd) = diversity_rows(
                &net,
                &test,
                &self.threat,
                e.diversity_points,
                e.diversity_samples,
                seed,
            )?;
            self.art.write(
                "diversity.csv",
                &write_csv(&["index", "dist_exp", "pgd_restarts"], &rows)?,
            )?;
            if !pca.is_empty() {
                self.art
                    .write("pca.csv", &write_csv(&["source", "pc1", "pc2"], &pca)?)?;
            }
            json["diversity_dist_exp"] = exp.into();
            json["diversity_pgd_restarts"] = pgd.into();
            summary.note(format!(
                "mean diversity: dist_exp {} vs pgd restarts {}",
                fmt6(exp),
                fmt6(pgd)
            ));
        }
        self.art.write(
            "report.json",
            (serde_json::to_string_pretty(&json)? + "\n").as_bytes(),
        )?;
        self.art.write("summary.txt", summary.render().as_bytes())
    }

    fn example(&self, i: usize) -> Result<(Tensor, usize), CliError> {
        let x = Tensor::new(
            vec![1, self.test_set.dim()],
            self.test_set.features().row(i).to_vec(),
        )?;
        Ok((x, self.test_set.labels()[i]))
    }

    /// Mean dominant eigenvalue over the first test points and its per-point CSV.
    fn hessian_probe(&self, net: &Network) -> Result<(f64, Vec<u8>), CliError> {
        let e = &self.cfg.eval;
        let n = e.hessian_points.min(self.test_set.len());
        let mut rows = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            let (x, y) = self.example(i)?;
            let est = dominant_hessian_eigenvalue(
                net,
                &x,
                y,
                e.hessian_iters,
                e.hessian_tol,
                self.cfg.seed,
            )?;
            total += est.value;
            rows.push(vec![
                i.to_string(),
                fmt6(est.value),
                est.iterations.to_string(),
                est.converged.to_string(),
            ]);
        }
        let csv = write_csv(&["index", "eigenvalue", "iterations", "converged"], &rows)?;
        Ok((total / n as f64, csv))
    }

    fn landscape(&mut self) -> Result<(), CliError> {
        let e = self.cfg.eval.clone();
        if e.landscape_index >= self.test_set.len() {
            return Err(CliError::Config(format!(
                "eval.landscape_index {} but the test split has {} examples",
                e.landscape_index,
                self.test_set.len()
            )));
        }
        let (x, y) = self.example(e.landscape_index)?;
        let eps = self.threat.epsilon;
        let seed = self.cfg.seed;
        let net = self.trained()?.model.clone();
        let s = loss_surface_grid(&net, &x, y, eps, e.landscape_resolution, seed)?;
        let mut rows = Vec::with_capacity(s.axis.len() * s.axis.len());
        for (i, a) in s.axis.iter().enumerate() {
            for (j, b) in s.axis.iter().enumerate() {
                rows.push(vec![fmt6(*a), fmt6(*b), fmt6(s.values[i][j])]);
            }
        }
        self.art
            .write("landscape.csv", &write_csv(&["a", "b", "loss"], &rows)?)
    }
}

type Rows = Vec<Vec<String>>;

/// Mean pairwise spread of dist_exp samples and of PGD-restart endpoints, plus the PCA
/// coordinates of both clouds around the first point.
fn diversity_rows(
    net: &Network,
    test: &Dataset,
    threat: &ThreatModel,
    points: usize,
    samples: usize,
    seed: u64,
) -> Result<(Rows, Rows, f64, f64), CliError> {
    let dist = AttackSpec::dist_exp().dist;
    let pgd = AttackSpec::pgd(20);
    let n = points.min(test.len());
    let (mut rows, mut pca_rows) = (Vec::with_capacity(n), Vec::new());
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for i in 0..n {
        let x = Tensor::new(vec![1, test.dim()], test.features().row(i).to_vec())?;
        let y = test.labels()[i];
        let a = dist_samples(
            net,
            &x,
            y,
            threat,
            &dist,
            samples,
            seed.wrapping_add(i as u64),
        )?;
        let b = restart_endpoints(
            net,
            &x,
            y,
            threat,
            &pgd,
            samples,
            seed.wrapping_add(i as u64),
        )?;
        let (da, db) = (diversity_l2(&a)?, diversity_l2(&b)?);
        sum_a += da;
        sum_b += db;
        rows.push(vec![i.to_string(), fmt6(da), fmt6(db)]);
        if i == 0 {
            let cloud: Vec<Tensor> = a.iter().chain(&b).cloned().collect();
            if let Ok(p) = pca_project(&cloud) {
                for (k, c) in p.coords.iter().enumerate() {
                    let src = if k < a.len() {
                        "dist_exp"
                    } else {
                        "pgd_restart"
                    };
                    pca_rows.push(vec![src.to_string(), fmt6(c[0]), fmt6(c[1])]);
                }
            }
        }
    }
    Ok((rows, pca_rows, sum_a / n as f64, sum_b / n as f64))
}

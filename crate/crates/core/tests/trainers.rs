use adt_core::data::{make_synthetic, SyntheticKind};
use adt_core::dist::ThreatModel;
use adt_core::model::accuracy;
use adt_core::train::{train, Method, TrainLoss, TrainSpec};

fn spec(method: Method, epochs: usize) -> TrainSpec {
    let mut s = TrainSpec::new(method);
    s.epochs = epochs;
    s.inner.steps = 3;
    s.inner.samples = 2;
    s
}

#[test]
fn standard_separates_blobs() {
    let data = make_synthetic(SyntheticKind::Blobs, 200, 0.1, 0).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    let out = train(&spec(Method::Standard, 20), &tm, &data, 1).unwrap();
    let acc = accuracy(&out.model, data.features(), data.labels()).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn every_method_lowers_its_loss() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 256, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    for method in Method::ALL {
        let out = train(&spec(method, 15), &tm, &data, 7).unwrap();
        let l = out.log.epoch_losses();
        assert!(l.last().unwrap() < &l[0], "{}: {l:?}", method.as_str());
    }
}

#[test]
fn identical_seed_gives_identical_log() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 128, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    for method in Method::ALL {
        let s = spec(method, 2);
        let a = train(&s, &tm, &data, 11).unwrap();
        let b = train(&s, &tm, &data, 11).unwrap();
        assert!(a.log.same_trajectory(&b.log), "{}", method.as_str());
        assert_eq!(a.model, b.model);
        let c = train(&s, &tm, &data, 12).unwrap();
        assert!(!a.log.same_trajectory(&c.log));
    }
}

#[test]
fn explicit_logs_stay_in_bounds() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 128, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    for method in [Method::AdtExp, Method::AdtExpAm] {
        let out = train(&spec(method, 3), &tm, &data, 2).unwrap();
        for r in out.log.records() {
            assert!(r.entropy.unwrap().is_finite());
            assert!(r.sigma_min.unwrap() >= 1e-3 - 1e-12);
            assert!(r.sigma_max.unwrap() <= 4.0 + 1e-12);
        }
    }
}

#[test]
fn trades_variants_run() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 128, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    for method in Method::ALL {
        let mut s = spec(method, 2);
        s.loss = TrainLoss::Trades { beta: 6.0 };
        let out = train(&s, &tm, &data, 4).unwrap();
        assert!(out.log.records().iter().all(|r| r.j.is_finite()));
    }
}

#[test]
fn amortized_outputs_are_marked_trained() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 64, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    let out = train(&spec(Method::AdtExpAm, 1), &tm, &data, 0).unwrap();
    assert!(out.explicit_generator.unwrap().trained);
    let out = train(&spec(Method::AdtImpAm, 1), &tm, &data, 0).unwrap();
    assert!(out.implicit_sampler.unwrap().trained);
    assert!(out.posterior.is_some());
}

#[test]
fn invalid_specs_name_the_field() {
    let data = make_synthetic(SyntheticKind::TwoMoons, 64, 0.1, 3).unwrap();
    let tm = ThreatModel::unit_box(0.05).unwrap();
    let mut s = spec(Method::AdtExp, 1);
    s.inner.lambda = -1.0;
    let e = train(&s, &tm, &data, 0).unwrap_err().to_string();
    assert!(e.contains("train.inner"), "{e}");
    let mut s = spec(Method::Standard, 1);
    s.loss = TrainLoss::Trades { beta: 0.0 };
    let e = train(&s, &tm, &data, 0).unwrap_err().to_string();
    assert!(e.contains("train.loss.beta"), "{e}");
}

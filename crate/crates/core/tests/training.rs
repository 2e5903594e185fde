mod common;

use claimfreq::models::io::to_json;
use claimfreq::models::{build_model, ModelKind};
use claimfreq::training::{
    average_frequency, deviance_percent, ensemble_predict, rebalance, train, train_on, AverageDefinition,
    StopReason,
};
use claimfreq::Error;

use common::{quick_train, small_data, tiny_spec, train_test};

#[test]
fn zero_learning_rate_stops_after_patience_with_weights_untouched() {
    let d = small_data(600, 1);
    for kind in [ModelKind::FnnOhe, ModelKind::Caftt] {
        let mut m = build_model(kind, &tiny_spec(), &d, None, 1).unwrap();
        let before = m.clone();
        let mut cfg = quick_train(kind, 1, 50);
        cfg.optimizer.learning_rate = 0.0;
        cfg.optimizer.weight_decay = 0.0;
        cfg.patience = 4;
        let h = train(&mut m, &d, &cfg).unwrap();
        assert_eq!(h.stop_reason, StopReason::Patience);
        assert_eq!((h.epochs_run(), h.best_epoch), (5, 1), "{kind}");
        assert_eq!(h.best_validation(), h.initial_validation);
        assert_eq!(m, before);
    }
}

#[test]
fn training_from_the_mean_model_reduces_validation_deviance() {
    let d = small_data(10_000, 2);
    for kind in [ModelKind::FnnOhe, ModelKind::FnnEmb, ModelKind::Ftt] {
        let mut m = build_model(kind, &tiny_spec(), &d, None, 3).unwrap();
        let mut cfg = quick_train(kind, 3, 6);
        cfg.optimizer.learning_rate = 1e-3;
        let h = train(&mut m, &d, &cfg).unwrap();
        assert!(h.best_validation() < h.initial_validation, "{kind}: {h:?}");
        assert!(h.train_deviance.iter().all(|t| t.is_finite() && *t > 0.0));
    }
}

#[test]
fn same_seed_gives_identical_models() {
    let d = small_data(800, 3);
    let fit = || {
        let mut m = build_model(ModelKind::LocalGlmFtt, &tiny_spec(), &d, None, 7).unwrap();
        let h = train(&mut m, &d, &quick_train(ModelKind::LocalGlmFtt, 7, 2)).unwrap();
        (to_json(&m).unwrap(), h.validation_deviance)
    };
    assert_eq!(fit(), fit());
}

#[test]
fn best_epoch_weights_are_restored() {
    let d = small_data(1_000, 4);
    let (fit_part, val) = train_test(&d, 0.2);
    let mut m = build_model(ModelKind::FnnEmb, &tiny_spec(), &d, None, 1).unwrap();
    let mut cfg = quick_train(ModelKind::FnnEmb, 1, 8);
    cfg.optimizer.learning_rate = 0.05;
    cfg.patience = 2;
    let h = train_on(&mut m, &fit_part, &val, &cfg).unwrap();
    let now = deviance_percent(&val.response, &m.predict(&val).unwrap()).unwrap();
    assert!((now - h.best_validation()).abs() < 1e-12);
    let min = h.validation_deviance.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(h.best_validation(), min);
}

#[test]
fn glm_kinds_cannot_be_trained() {
    let d = small_data(300, 5);
    for kind in [ModelKind::Mean, ModelKind::Glm1] {
        let mut m = build_model(kind, &tiny_spec(), &d, None, 1).unwrap();
        let err = train(&mut m, &d, &quick_train(kind, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::WrongKind(_)), "{kind}: {err}");
    }
}

#[test]
fn rebalancing_twice_changes_nothing() {
    let d = small_data(1_000, 6);
    let mut m = build_model(ModelKind::Cann, &tiny_spec(), &d, None, 2).unwrap();
    train(&mut m, &d, &quick_train(ModelKind::Cann, 2, 2)).unwrap();
    let f = rebalance(&mut m, &d).unwrap();
    let p = m.predict(&d).unwrap();
    assert_eq!(rebalance(&mut m, &d).unwrap(), f);
    assert_eq!(m.predict(&d).unwrap(), p);
    let def = AverageDefinition::ExposureWeighted;
    let gap = average_frequency(&p, &d.exposure, def) / average_frequency(&d.response, &d.exposure, def) - 1.0;
    assert!(gap.abs() < 1e-12);
}

#[test]
fn ensemble_deviance_is_at_most_the_member_average() {
    let d = small_data(2_000, 7);
    let (tr, te) = train_test(&d, 0.25);
    let members: Vec<_> = (1..=3)
        .map(|s| {
            let mut m = build_model(ModelKind::FnnEmb, &tiny_spec(), &tr, None, s).unwrap();
            train(&mut m, &tr, &quick_train(ModelKind::FnnEmb, s, 3)).unwrap();
            rebalance(&mut m, &tr).unwrap();
            m
        })
        .collect();
    let refs: Vec<_> = members.iter().collect();
    let ens = deviance_percent(&te.response, &ensemble_predict(&refs, &te).unwrap()).unwrap();
    let avg = members
        .iter()
        .map(|m| deviance_percent(&te.response, &m.predict(&te).unwrap()).unwrap())
        .sum::<f64>()
        / 3.0;
    assert!(ens <= avg + 1e-12, "{ens} vs {avg}");
}

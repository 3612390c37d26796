use dbk_core::data::{gen_step1d, split};
use dbk_core::eval::{
    metrics, run_scaling, train_method, Architecture, CellStatus, Method, ScalingConfig, RESULTS_FILE,
};
use dbk_core::{Model, ModelFile, TrainConfig};

fn small_arch() -> Architecture {
    Architecture { rank: 8, hidden: vec![16, 16], residual: false }
}

fn small_cfg() -> TrainConfig {
    TrainConfig { max_iters: 200, eval_every: 20, patience: Some(100), batch_size: 32, ..Default::default() }
}

#[test]
fn train_save_load_predict_for_every_method() {
    let raw = gen_step1d(240, 0.01, 11);
    let splits = split(&raw, (0.7, 0.1, 0.2), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for m in [Method::DbkExact, Method::DbkExactCorrected, Method::DbkSvi, Method::DbkSviCorrected, Method::DenseRbf] {
        let t = train_method(m, &splits.train, Some(&splits.val), &small_arch(), &small_cfg(), 1000).unwrap();
        assert!(t.log.best_val_nll.is_some(), "{m:?}");
        let file = ModelFile::new(t.model, Some(splits.stats.clone()));
        let path = dir.path().join(format!("{}.json", m.tag()));
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(back.model.tag(), file.model.tag());
        // The model file takes raw inputs and answers in raw target units.
        let raw_test = gen_step1d(100, 0.01, 12);
        let a = file.predict(&raw_test.x).unwrap();
        let b = back.predict(&raw_test.x).unwrap();
        for (u, v) in a.mean.iter().chain(&a.variance).zip(b.mean.iter().chain(&b.variance)) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{m:?} changed across a save/load cycle");
        }
        let mt = metrics(&a, &raw_test.y).unwrap();
        assert!(mt.mae <= mt.rmse && mt.nll.is_finite(), "{m:?}: {mt:?}");
        let normalized = file.model.predict(&splits.test.x).unwrap();
        assert!(metrics(&normalized, &splits.test.y).unwrap().nll.is_finite());
    }
}

#[test]
fn exact_training_improves_the_marginal_likelihood() {
    let raw = gen_step1d(300, 0.01, 3);
    let s = split(&raw, (0.8, 0.2, 0.0), 3).unwrap();
    let cfg = TrainConfig { max_iters: 300, eval_every: 50, learn_noise: true, ..Default::default() };
    let t = train_method(Method::DbkExact, &s.train, None, &small_arch(), &cfg, 1000).unwrap();
    assert!(t.log.last_objective().unwrap() > t.log.first_objective().unwrap());
    assert!(matches!(t.model, Model::Exact(_)));
}

#[test]
fn scaling_run_resumes_without_recomputing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScalingConfig {
        sizes: vec![30, 60],
        methods: vec![Method::DbkExact, Method::DenseRbf],
        seeds: vec![0],
        n_test: 50,
        architecture: small_arch(),
        train: TrainConfig { max_iters: 10, eval_every: 5, ..Default::default() },
        dense_cap: 40,
        ..Default::default()
    };
    let first = run_scaling(&cfg, dir.path()).unwrap();
    assert_eq!(first.len(), 4);
    let dense_60 = first.iter().find(|r| r.model_tag == "dense_rbf" && r.n_train == 60).unwrap();
    assert_eq!(dense_60.status, CellStatus::Refused);
    let lines = |p: &std::path::Path| std::fs::read_to_string(p).unwrap().lines().count();
    let results = dir.path().join(RESULTS_FILE);
    assert_eq!(lines(&results), 4);
    let second = run_scaling(&cfg, dir.path()).unwrap();
    assert_eq!(lines(&results), 4);
    assert_eq!(first, second);
}

use auxcnn_core::data::{generate_synthetic_dataset, split_dataset, Dataset, SplitSpec, SyntheticSpec};
use auxcnn_core::networks::ModelBundle;
use auxcnn_core::training::{
    load_checkpoint, read_checkpoint, save_checkpoint, Method, ModelSpec, TrainConfig, Trainer,
};
use auxcnn_core::{Error, OwnerGroup, Tensor};

fn spec() -> ModelSpec {
    let mut s = ModelSpec::new(12, 32);
    s.base_width = 4;
    s.feature_width = 16;
    s.rnet_hidden = 32;
    s.rnet_channels = 16;
    s.dnet_base_channels = 4;
    s
}

fn data(counts: Vec<usize>) -> (Dataset, Dataset, Dataset) {
    let (ds, _) = generate_synthetic_dataset(&SyntheticSpec::new(counts, 32, 6)).unwrap();
    split_dataset(&ds, &SplitSpec { test_per_class: 5, validation_fraction: 0.2, seed: 6 }).unwrap()
}

fn trainer(method: Method, classes: usize, epochs: usize) -> Trainer {
    let mut cfg = TrainConfig::new(method, 32, 9);
    cfg.epochs = epochs;
    cfg.check_freeze = true;
    Trainer::new(spec().bundle_config(method, classes).unwrap(), cfg).unwrap()
}

#[test]
fn step_counters_match_iterations() {
    let (train, val, _) = data(vec![15, 25, 20]);
    for method in [Method::Baseline, Method::RNetDNet] {
        let mut t = trainer(method, 3, 2);
        t.fit(&train, &val, |_| {}).unwrap();
        let per_epoch = train.len().div_ceil(8) as u64;
        assert_eq!(t.iteration() as u64, 2 * per_epoch);
        assert_eq!(t.steps(OwnerGroup::F), 2 * per_epoch);
        assert_eq!(t.steps(OwnerGroup::C), 2 * per_epoch);
        let d = if method.uses_dnet() { 2 * per_epoch } else { 0 };
        assert_eq!(t.steps(OwnerGroup::D), d);
        assert_eq!(t.steps(OwnerGroup::DDisc), d);
        assert_eq!(t.steps(OwnerGroup::R), if method.uses_rnet() { 2 * per_epoch } else { 0 });
        assert_eq!(t.log().len(), t.iteration());
        assert_eq!(t.epochs().len(), 2);
    }
}

#[test]
fn repeated_batch_loss_decreases() {
    let (train, _, _) = data(vec![15, 15]);
    let mut t = trainer(Method::RNetDNet, 2, 1);
    let idx: Vec<usize> = (0..8).collect();
    let x = train.batch_tensor(&idx).unwrap();
    let y: Vec<usize> = idx.iter().map(|&i| train.items()[i].class_label).collect();
    let first = t.train_batch(&x, &y).unwrap().0.cls;
    let mut last = first;
    for _ in 0..30 {
        last = t.train_batch(&x, &y).unwrap().0.cls;
    }
    assert!(last < 0.5 * first, "cls loss {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let (train, val, _) = data(vec![15, 20]);
    let run = || {
        let mut t = trainer(Method::RNetDNet, 2, 1);
        t.fit(&train, &val, |_| {}).unwrap();
        t.log_csv()
    };
    assert_eq!(run(), run());
}

#[test]
fn max_iterations_stops_early() {
    let (train, val, _) = data(vec![15, 20]);
    let mut cfg = TrainConfig::new(Method::Hem, 32, 1);
    cfg.epochs = 5;
    cfg.max_iterations = Some(4);
    let mut t = Trainer::new(spec().bundle_config(Method::Hem, 2).unwrap(), cfg).unwrap();
    let mut seen = 0;
    t.fit(&train, &val, |_| seen += 1).unwrap();
    assert_eq!((t.iteration(), seen), (4, 4));
}

#[test]
fn method_and_networks_must_agree() {
    let cfg = TrainConfig::new(Method::RNet, 32, 1);
    let e = Trainer::new(spec().bundle_config(Method::Baseline, 2).unwrap(), cfg).err().unwrap();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let mut t = trainer(Method::RNetDNet, 3, 1);
    let (train, val, _) = data(vec![12, 12, 12]);
    t.fit(&train, &val, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&t.bundle.store, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap().len(), t.bundle.store.len());

    let mut fresh = ModelBundle::<f32>::build(spec().bundle_config(Method::RNetDNet, 3).unwrap()).unwrap();
    load_checkpoint(&mut fresh.store, &path).unwrap();
    let x = train.batch_tensor(&[0, 1, 2]).unwrap();
    let (pa, a) = t.bundle.predict(&x).unwrap();
    let (pb, b) = fresh.predict(&x).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(a.data(), b.data());

    let mut two = ModelBundle::<f32>::build(spec().bundle_config(Method::RNetDNet, 2).unwrap()).unwrap();
    assert!(matches!(load_checkpoint(&mut two.store, &path), Err(Error::Shape { .. })));
    let mut base = ModelBundle::<f32>::build(spec().bundle_config(Method::Baseline, 3).unwrap()).unwrap();
    assert!(load_checkpoint(&mut base.store, &path).is_err());

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(read_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn non_finite_input_aborts() {
    let mut t = trainer(Method::Baseline, 2, 1);
    let x = Tensor::full(&[2, 1, 32, 32], f32::NAN);
    let e = t.train_batch(&x, &[0, 1]).unwrap_err();
    assert!(matches!(e, Error::NumericAbort { iteration: 1, .. } | Error::Input(_)), "{e}");
}

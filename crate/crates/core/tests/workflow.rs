use permalign::analysis::{barrier, compute_r, interpolate, spectrum, taylor_barrier};
use permalign::data::{make_synthetic, SyntheticKind};
use permalign::matching::{run, MatchConfig, Method};
use permalign::nn::{accuracy, load_checkpoint, save_checkpoint, train, TrainConfig};
use permalign::permutation::Permutation;

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: vec![12, 12],
        epochs: 15,
        batch_size: 32,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn train_match_merge() {
    let ds = make_synthetic(SyntheticKind::Blobs, 400, 6, 3, 5).unwrap();
    let a = train(&config(1), &ds.train, 1).unwrap();
    let b = train(&config(2), &ds.train, 2).unwrap();
    assert!(accuracy(&a, &ds.test).unwrap() > 0.9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.nnpk");
    save_checkpoint(&a, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), a);

    let id = Permutation::identity_for(&a);
    for method in [Method::WmCoord, Method::WmSinkhorn, Method::Am, Method::Ste] {
        let r = run(&a, &b, Some(&ds.train), &MatchConfig::for_method(method)).unwrap();
        assert!(r.l2_after.is_finite(), "{method:?}");
        let pb = r.pi.apply(&b).unwrap();
        assert!((a.distance(&pb) - r.l2_after).abs() < 1e-9, "{method:?}");
        let merged = interpolate(&a, &pb, 0.5).unwrap();
        assert!(accuracy(&merged, &ds.test).unwrap().is_finite());
        let bar = barrier(&a, &pb, &ds.test, 11).unwrap();
        assert!(bar.barrier >= 0.0 && bar.barrier >= bar.barrier_at_half);
        let t = taylor_barrier(&a, &pb, &ds.test, 11).unwrap();
        assert!(t.estimate_at_half.is_finite());
        let rv = compute_r(&a, &pb, &id, 0.3).unwrap().r_value;
        assert!(rv.abs() <= 1.0 + 1e-9);
    }
    // weight matching never increases the distance
    let wm = run(&a, &b, None, &MatchConfig::for_method(Method::WmCoord)).unwrap();
    assert!(wm.l2_after <= wm.l2_before + 1e-12);
    assert_eq!(spectrum(&a).unwrap().len(), a.layers.len());
}

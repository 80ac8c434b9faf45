use tanglefl::fl::{
    fedavg, init_model, local_train, loss_and_gradient, make_synthetic_dataset, ModelParams, ModelShape, SyntheticSpec,
    TrainConfig, WeightedUpdate,
};

fn small_shard() -> tanglefl::fl::DataShard {
    let spec = SyntheticSpec { n_clients: 1, total_samples: 12, validation_samples: 4, input_dim: 3, n_classes: 3, ..SyntheticSpec::default() };
    make_synthetic_dataset(&spec).unwrap().0.remove(0)
}

#[test]
#[allow(clippy::needless_range_loop)]
fn gradient_matches_central_differences() {
    let shard = small_shard();
    let shape = ModelShape::new(3, 4, 3);
    let params = init_model(17, shape).unwrap();
    let batch: Vec<usize> = (0..shard.len()).collect();
    let (_, grad) = loss_and_gradient(&params, &shard, &batch);
    let eps = 1e-4;
    for i in 0..params.weights.len() {
        let mut plus = params.clone();
        plus.weights[i] += eps;
        let mut minus = params.clone();
        minus.weights[i] -= eps;
        let numeric = (loss_and_gradient(&plus, &shard, &batch).0 - loss_and_gradient(&minus, &shard, &batch).0) / (2.0 * eps);
        let scale = grad[i].abs().max(numeric.abs()).max(1e-3);
        assert!((grad[i] - numeric).abs() / scale <= 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
    }
}

#[test]
fn fedavg_three_updates_by_hand() {
    let shape = ModelShape::new(1, 1, 1);
    let mk = |v: f64| ModelParams::new(shape, vec![v; shape.param_count()]).unwrap();
    // Weights 1, 2, 5 over values 0, 4, 8: (0 + 8 + 40) / 8 = 6.
    let updates = vec![
        WeightedUpdate { params: mk(0.0), weight: 1.0 },
        WeightedUpdate { params: mk(4.0), weight: 2.0 },
        WeightedUpdate { params: mk(8.0), weight: 5.0 },
    ];
    let g = fedavg(&updates).unwrap();
    assert!(g.weights.iter().all(|&w| (w - 6.0).abs() <= 1e-12));
}

#[test]
fn training_is_deterministic() {
    let shard = small_shard();
    let params = init_model(2, ModelShape::new(3, 5, 3)).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 11, ..TrainConfig::default() };
    let a = local_train(&params, &shard, &cfg).unwrap();
    let b = local_train(&params, &shard, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    let c = local_train(&params, &shard, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.params, c.params, "the seed drives batch order");
}

use super::*;
use crate::dataio::{generate_synthetic, SyntheticConfig, SyntheticMode};
use crate::tensor::check_gradient;

fn small_world(n: usize, mode: SyntheticMode, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        nodes: 12,
        trajectories: n,
        mean_route_length: 4,
        mode,
        time_slices: 4,
        drivers: 3,
        weather_kinds: 2,
        status_levels: 2,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap().dataset
}

fn small_config() -> TrainConfig {
    TrainConfig {
        d: 3,
        hidden: 3,
        delta: 2,
        fc_widths: [5, 4],
        ..TrainConfig::default()
    }
}

fn spatial_for(n: usize, delta: usize) -> SpatialFeatures {
    let data = (0..n * delta).map(|k| ((k * 7 % 11) as f64 - 5.0) / 10.0).collect();
    SpatialFeatures::new(Tensor::matrix(n, delta, data).unwrap()).unwrap()
}

fn zeroed(mut model: Mvstm) -> Mvstm {
    for t in model.params.values_mut() {
        t.data_mut().fill(0.0);
    }
    model
}

fn value(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

#[test]
fn zero_parameters_encode_to_zero() {
    let data = small_world(3, SyntheticMode::Deterministic, 1);
    let model = zeroed(Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap());
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let t = &data.trajectories[0];
    let links = model.encode_links(&mut tape, &p, &t.links).unwrap();
    assert_eq!(tape.shape(links), &[t.links.len(), 3]);
    assert!(value(&tape, links).iter().all(|v| *v == 0.0));
    let s = model.encode_semantic(&mut tape, &p, &t.head, &t.conditions).unwrap();
    assert_eq!(value(&tape, s), vec![0.0; 3]);
}

#[test]
fn link_encoding_hand_example() {
    let data = small_world(2, SyntheticMode::Deterministic, 1);
    let cfg = TrainConfig {
        d: 2,
        ..small_config()
    };
    let mut model = zeroed(Mvstm::init(&cfg, FeatureSpec::unscaled(data.cardinalities.clone())).unwrap());
    let mut link = data.trajectories[0].links[0].clone();
    link.link_id = 1;
    link.link_time = 3.0;
    model.params.get_mut("link.link_id.emb").unwrap().row_slice_mut(1).copy_from_slice(&[1.0, -2.0]);
    *model.params.get_mut("link.link_time.w").unwrap() = Tensor::row(vec![0.5, 2.0]);
    *model.params.get_mut("link.link_time.b").unwrap() = Tensor::vector(vec![0.25, 0.0]);
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let row = model.encode_links(&mut tape, &p, &[link]).unwrap();
    // [1, -2] + 3·[0.5, 2] + [0.25, 0]
    assert_eq!(value(&tape, row), vec![2.75, 4.0]);
}

#[test]
fn semantic_sums_categorical_rows() {
    let data = small_world(2, SyntheticMode::Deterministic, 1);
    let mut model = zeroed(Mvstm::init(&small_config(), FeatureSpec::unscaled(data.cardinalities.clone())).unwrap());
    let t = &data.trajectories[0];
    let w = t.conditions.weather;
    let d = t.head.driver_id;
    model.params.get_mut("semantic.weather.emb").unwrap().row_slice_mut(w).copy_from_slice(&[1.0, 2.0, 3.0]);
    model.params.get_mut("semantic.driver_id.emb").unwrap().row_slice_mut(d).copy_from_slice(&[0.5, 0.5, -1.0]);
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let s = model.encode_semantic(&mut tape, &p, &t.head, &t.conditions).unwrap();
    assert_eq!(value(&tape, s), vec![1.5, 2.5, 2.0]);
}

#[test]
fn out_of_range_index_is_reported() {
    let data = small_world(2, SyntheticMode::Deterministic, 1);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let mut t = data.trajectories[0].clone();
    t.links[0].link_id = 10_000;
    let err = model.predict_one(&t, &[0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::Index { .. }), "{err}");
}

#[test]
fn channels_are_independent() {
    let data = small_world(2, SyntheticMode::Deterministic, 3);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let mut no_lstm = model.clone();
    for name in LSTM_W.iter().chain(&LSTM_B) {
        no_lstm.params.get_mut(*name).unwrap().data_mut().fill(0.0);
    }
    let t = &data.trajectories[0];
    let run = |m: &Mvstm| {
        let mut tape = Tape::new();
        let p = m.bind(&mut tape).unwrap();
        let (h_l, h_a) = m.encode_trajectory(&mut tape, &p, t).unwrap();
        (value(&tape, h_l), value(&tape, h_a))
    };
    let (l1, a1) = run(&model);
    let (l2, a2) = run(&no_lstm);
    assert_ne!(l1, l2);
    assert_eq!(a1, a2);
}

#[test]
fn single_link_trajectory_runs_base_cases() {
    let data = small_world(2, SyntheticMode::Deterministic, 3);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let mut t = data.trajectories[0].clone();
    t.links.truncate(1);
    t.crossings.clear();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let seq = model.sequence(&mut tape, &p, &t).unwrap();
    assert_eq!(tape.shape(seq), &[1, 3]);
    let (h_l, h_a) = model.encode_trajectory(&mut tape, &p, &t).unwrap();
    assert_eq!(tape.shape(h_l), &[1, 3]);
    // One row attends only to itself, so pooling returns the conv output.
    let conv = nn::conv1d_same(&mut tape, p.get("conv.filters").unwrap(), p.get("conv.bias").unwrap(), seq).unwrap();
    assert!(tape.value(h_a).max_abs_diff(tape.value(conv)) < 1e-15);
}

#[test]
fn rnn_only_variant_zeroes_attention_channel() {
    let data = small_world(2, SyntheticMode::Deterministic, 3);
    let cfg = TrainConfig {
        variant: Variant::RnnOnly,
        ..small_config()
    };
    let model = Mvstm::init(&cfg, FeatureSpec::fit(&data).unwrap()).unwrap();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let (_, h_a) = model.encode_trajectory(&mut tape, &p, &data.trajectories[0]).unwrap();
    assert_eq!(value(&tape, h_a), vec![0.0; 3]);
}

#[test]
fn no_spatial_variant_ignores_spatial_feature() {
    let data = small_world(2, SyntheticMode::Deterministic, 3);
    let cfg = TrainConfig {
        variant: Variant::NoSpatial,
        ..small_config()
    };
    let model = Mvstm::init(&cfg, FeatureSpec::fit(&data).unwrap()).unwrap();
    let t = &data.trajectories[0];
    assert_eq!(model.predict_one(t, &[0.3, -1.0]).unwrap(), model.predict_one(t, &[5.0, 2.0]).unwrap());
    let full = Mvstm { config: small_config(), ..model };
    assert_ne!(full.predict_one(t, &[0.3, -1.0]).unwrap(), full.predict_one(t, &[5.0, 2.0]).unwrap());
}

#[test]
fn loss_gradient_reaches_both_channels() {
    let data = small_world(4, SyntheticMode::Nonlinear, 5);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let spatial = spatial_for(4, 2);
    let batch: Vec<_> = (0..4).map(|i| (&data.trajectories[i], spatial.row(i).unwrap())).collect();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape).unwrap();
    let loss = model.batch_loss(&mut tape, &p, &batch).unwrap();
    let g = tape.backward(loss).unwrap();
    for name in ["lstm.w_i", "lstm.w_g", "conv.filters", "conv.bias"] {
        let grad = g.wrt(p.get(name).unwrap());
        assert!(grad.data().iter().any(|v| *v != 0.0), "{name} received no gradient");
    }
}

#[test]
fn eta_positive_and_deterministic() {
    let data = small_world(5, SyntheticMode::Nonlinear, 2);
    let spec = FeatureSpec::fit(&data).unwrap();
    for seed in 0..20 {
        let cfg = TrainConfig { seed, ..small_config() };
        let model = Mvstm::init(&cfg, spec.clone()).unwrap();
        for t in &data.trajectories {
            let a = model.predict_one(t, &[0.1, 0.2]).unwrap();
            assert!(a > 0.0);
            assert_eq!(a, model.predict_one(t, &[0.1, 0.2]).unwrap());
        }
    }
}

#[test]
fn untrained_model_starts_near_mean_time() {
    let data = small_world(6, SyntheticMode::Deterministic, 2);
    let mut model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    model.params.get_mut("head.out.w").unwrap().data_mut().fill(0.0);
    let eta = model.predict_one(&data.trajectories[0], &[0.0, 0.0]).unwrap();
    assert!((eta - model.spec.target_scale).abs() < 1e-9 * eta);
}

fn mape_of(etas: &[f64], atas: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = etas.iter().map(|e| tape.leaf(Tensor::matrix(1, 1, vec![*e]).unwrap())).collect();
    let loss = mape_loss(&mut tape, &vars, atas)?;
    Ok(tape.value(loss).data()[0])
}

#[test]
fn mape_examples() {
    assert_eq!(mape_of(&[110.0], &[100.0]).unwrap(), 0.1);
    assert_eq!(mape_of(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), 0.0);
    assert!(matches!(mape_of(&[1.0], &[0.0]), Err(Error::Validation { .. })));
    assert!(matches!(mape_of(&[1.0, 2.0], &[1.0]), Err(Error::Contract(_))));
    assert!(matches!(mape_of(&[], &[]), Err(Error::Contract(_))));
}

#[test]
fn mape_subgradient_is_zero_at_exact_prediction() {
    let mut tape = Tape::new();
    let eta = tape.leaf(Tensor::matrix(1, 1, vec![50.0]).unwrap());
    let loss = mape_loss(&mut tape, &[eta], &[50.0]).unwrap();
    assert_eq!(tape.backward(loss).unwrap().wrt(eta).data(), &[0.0]);
}

#[test]
fn end_to_end_gradient_check() {
    let data = small_world(2, SyntheticMode::Nonlinear, 9);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let spatial = spatial_for(2, 2);
    let inputs: Vec<Tensor> = model.params.values().cloned().collect();
    let err = check_gradient(
        |tape, vars| {
            let p = model.bind_vars(tape, vars)?;
            let batch: Vec<_> = (0..2).map(|i| (&data.trajectories[i], spatial.row(i).unwrap())).collect();
            model.batch_loss(tape, &p, &batch)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = small_world(10, SyntheticMode::Nonlinear, 4);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 4,
        ..small_config()
    };
    let spatial = spatial_for(10, 2);
    let start = Mvstm::init(&cfg, FeatureSpec::fit(&data).unwrap()).unwrap();
    let out = train_from(start.clone(), &data, &spatial).unwrap();
    assert_eq!(out.model, start);
    assert_eq!(out.trace.len(), 3);
    assert!(out.trace.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn training_is_deterministic_and_descends() {
    let data = small_world(24, SyntheticMode::Nonlinear, 4);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        learning_rate: 5e-3,
        ..small_config()
    };
    let spatial = spatial_for(24, 2);
    let a = train(&data, &spatial, &cfg).unwrap();
    let b = train(&data, &spatial, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model, b.model);
    assert!(a.trace.last().unwrap() < &a.trace[0], "{:?}", a.trace);
}

#[test]
fn training_requires_actual_times_and_features() {
    let mut data = small_world(4, SyntheticMode::Nonlinear, 4);
    let spatial = spatial_for(4, 2);
    assert!(matches!(
        train(&data, &spatial_for(3, 2), &small_config()),
        Err(Error::Lookup(_))
    ));
    data.trajectories[2].actual_time = None;
    assert!(matches!(train(&data, &spatial, &small_config()), Err(Error::Validation { line: 3, .. })));
}

#[test]
fn predictions_follow_dataset_order() {
    let mut data = small_world(6, SyntheticMode::Nonlinear, 4);
    data.trajectories[5] = data.trajectories[1].clone();
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let mut spatial = spatial_for(6, 2).table;
    let row1 = spatial.row_slice(1).to_vec();
    spatial.row_slice_mut(5).copy_from_slice(&row1);
    let spatial = SpatialFeatures::new(spatial).unwrap();
    let preds = predict(&model, &data, &spatial).unwrap();
    assert_eq!(preds.len(), 6);
    assert!(preds.iter().enumerate().all(|(i, p)| p.trajectory_index == i && p.eta > 0.0));
    assert_eq!(preds[1].eta, preds[5].eta);
    assert!(matches!(
        predict(&model, &data, &spatial_for(4, 2)),
        Err(Error::Lookup(_))
    ));
}

fn preds(etas: &[f64]) -> Vec<Prediction> {
    etas.iter()
        .enumerate()
        .map(|(i, &eta)| Prediction { trajectory_index: i, eta })
        .collect()
}

#[test]
fn ensemble_examples() {
    let a = preds(&[100.0, 37.3, 1e-3]);
    let b = preds(&[200.0, 12.0, 5.0]);
    assert_eq!(ensemble(&a, &b, 1.0).unwrap(), a);
    assert_eq!(ensemble(&a, &b, 0.5).unwrap()[0].eta, 150.0);
    let mut shifted = b.clone();
    shifted[1].trajectory_index = 7;
    assert!(matches!(ensemble(&a, &shifted, 0.9), Err(Error::Contract(_))));
    assert!(matches!(ensemble(&a, &b[..2], 0.9), Err(Error::Contract(_))));
    assert!(matches!(ensemble(&a, &b, 1.5), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let data = small_world(5, SyntheticMode::Nonlinear, 4);
    let spatial = spatial_for(5, 2);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..small_config()
    };
    let model = train(&data, &spatial, &cfg).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, Some("emb.json".into()), &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt.graph2vec_ref.as_deref(), Some("emb.json"));
    assert_eq!(ckpt.config, cfg);
    let restored = ckpt.into_model().unwrap();
    assert_eq!(restored, model);
    assert_eq!(predict(&restored, &data, &spatial).unwrap(), predict(&model, &data, &spatial).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let data = small_world(3, SyntheticMode::Nonlinear, 4);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    let text = Checkpoint::new(&model, None).to_json();

    assert!(matches!(Checkpoint::from_json(&text[..text.len() / 2]), Err(Error::Checkpoint(_))));

    let old = text.replace(CHECKPOINT_VERSION, "mvstm-checkpoint/0");
    let msg = Checkpoint::from_json(&old).unwrap_err().to_string();
    assert!(msg.contains("mvstm-checkpoint/0") && msg.contains(CHECKPOINT_VERSION), "{msg}");

    let mut short = Checkpoint::new(&model, None);
    *short.params.get_mut("conv.bias").unwrap() = Tensor::zeros(&[2]);
    assert!(matches!(Checkpoint::from_json(&short.to_json()), Err(Error::Checkpoint(_))));

    let mut missing = Checkpoint::new(&model, None);
    missing.params.remove("head.fc1.w");
    assert!(matches!(missing.into_model(), Err(Error::Checkpoint(_))));
}

#[test]
fn extra_features_get_parameters() {
    let mut data = small_world(4, SyntheticMode::Nonlinear, 4);
    for (i, t) in data.trajectories.iter_mut().enumerate() {
        t.links[0].extra_cat.insert("lanes".into(), i % 2);
        t.links[0].extra_num.insert("grade".into(), i as f64);
    }
    data.cardinalities.insert("link.lanes".into(), 2);
    let model = Mvstm::init(&small_config(), FeatureSpec::fit(&data).unwrap()).unwrap();
    assert_eq!(model.params["link.lanes.emb"].shape(), &[2, 3]);
    assert!(model.params.contains_key("link.grade.w"));
    let spatial = spatial_for(4, 2);
    assert!(predict(&model, &data, &spatial).unwrap().iter().all(|p| p.eta > 0.0));
}

#[test]
fn spatial_features_from_embeddings() {
    let state = crate::graph2vec::init_embeddings(3, 5, 2, 0).unwrap();
    let s = SpatialFeatures::from_embeddings(&state, 3).unwrap();
    assert_eq!(s.row(2).unwrap(), state.spatial_feature(2).unwrap());
    assert!(matches!(SpatialFeatures::from_embeddings(&state, 4), Err(Error::Lookup(_))));
    let picked = s.select(&[2, 0]).unwrap();
    assert_eq!(picked.row(0).unwrap(), s.row(2).unwrap());
}

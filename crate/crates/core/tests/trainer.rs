mod common;

use std::sync::OnceLock;

use auxspoof::clip::VideoClip;
use auxspoof::face::{FaceBasis, VertexIndexMap};
use auxspoof::net::{is_rnn_param, ModelParams, NetConfig, Variant};
use auxspoof::synthgen::{default_basis, generate, DatasetSpec};
use auxspoof::trainer::*;
use auxspoof::Error;

struct Fixture {
    basis: FaceBasis<f64>,
    clips: Vec<VideoClip>,
    map: VertexIndexMap,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let basis = default_basis();
        let spec = DatasetSpec {
            subjects: 2,
            live_per_subject: 1,
            print_per_subject: 1,
            replay_per_subject: 0,
            frames: 60,
            size: 16,
            seed: 9,
            ..DatasetSpec::default()
        };
        let clips = generate(&basis, &spec).unwrap();
        let map = VertexIndexMap::from_basis(&basis, 32);
        Fixture { basis, clips, map }
    })
}

fn net(variant: Variant) -> NetConfig {
    NetConfig {
        variant,
        input_size: 16,
        block_channels: vec![2, 3],
        branch_channels: 2,
        concat_size: 32,
        map_size: 32,
        lstm_hidden: 4,
        fc_out: 100,
        n_frames: 3,
        ..NetConfig::default()
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_cnn: 4, batch_rnn: 2, seed: 21, ..TrainConfig::default() }
}

fn data() -> TrainData<'static, f64> {
    let f = fixture();
    TrainData { clips: &f.clips, basis: &f.basis, map: &f.map }
}

fn bytes(ck: &Checkpoint<f64>) -> Vec<u8> {
    ck.to_container().unwrap().to_bytes()
}

fn run(cfg: &NetConfig, tc: &TrainConfig, resume: Option<Checkpoint<f64>>) -> Checkpoint<f64> {
    train(&data(), cfg, tc, resume, |_| Ok(())).unwrap()
}

#[test]
fn stream_one_never_touches_rnn_tensors() {
    let cfg = net(Variant::Full);
    let d = data();
    let mut params = init_params::<f64>(&cfg, 0.02, 1);
    let before = params.clone();
    let mut opt = Optimizer::new(&train_cfg(1));
    for step in 0..3 {
        let batch = d.frame_batch(&[(0, step), (1, 5 + step), (2, 7), (3, 30)], &cfg).unwrap();
        cnn_stream_step(&mut params, &mut opt, &cfg, &batch).unwrap();
    }
    let mut changed_cnn = false;
    for (name, t) in &params.tensors {
        if is_rnn_param(name) {
            assert_eq!(t, &before.tensors[name], "{name} changed");
            assert!(!opt.slots.contains_key(name), "{name} has optimizer state");
        } else {
            changed_cnn |= t != &before.tensors[name];
        }
    }
    assert!(changed_cnn);
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let cfg = net(Variant::Full);
    let tc = TrainConfig { lr: 0.0, ..train_cfg(1) };
    let ck = run(&cfg, &tc, None);
    assert_eq!(ck.params.tensors, init_params::<f64>(&cfg, tc.init_std, tc.seed).tensors);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let cfg = net(Variant::Full);
    let a = run(&cfg, &train_cfg(1), None);
    let b = run(&cfg, &train_cfg(1), None);
    assert_eq!(bytes(&a), bytes(&b));
    let c = run(&cfg, &TrainConfig { seed: 22, ..train_cfg(1) }, None);
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let cfg = net(Variant::Full);
    let straight = run(&cfg, &train_cfg(2), None);
    let first = run(&cfg, &train_cfg(1), None);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.axsp");
    first.save(&path).unwrap();
    let resumed = run(&cfg, &train_cfg(2), Some(Checkpoint::load(&path).unwrap()));
    assert_eq!(resumed.epoch, 2);
    assert_eq!(bytes(&straight), bytes(&resumed));
}

#[test]
fn resume_rejects_a_different_configuration() {
    let cfg = net(Variant::Full);
    let first = run(&cfg, &train_cfg(1), None);
    let other = TrainConfig { lr: 1e-2, ..train_cfg(2) };
    let err = train(&data(), &cfg, &other, Some(first), |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn joint_gradient_is_the_sum_of_its_terms() {
    let f = common::model_fixture(4);
    let joint = sequence_gradients(&f.params, &f.cfg, &f.map, &f.batch, Terms::JOINT).unwrap();
    let depth = sequence_gradients(&f.params, &f.cfg, &f.map, &f.batch, Terms { depth: true, rppg: false }).unwrap();
    let rppg = sequence_gradients(&f.params, &f.cfg, &f.map, &f.batch, Terms { depth: false, rppg: true }).unwrap();
    let total = joint.losses.total;
    assert!((total - depth.losses.total - rppg.losses.total).abs() < 1e-12);
    for (name, g) in &joint.grads {
        let zero = auxspoof::tensor::Tensor::zeros(g.shape());
        let a = depth.grads.get(name).unwrap_or(&zero);
        let b = rppg.grads.get(name).unwrap_or(&zero);
        for ((&j, &x), &y) in g.data().iter().zip(a.data()).zip(b.data()) {
            assert!((j - x - y).abs() <= 1e-12 * (1.0 + j.abs()), "{name}");
        }
    }
    assert!(depth.grads.iter().filter(|(n, _)| is_rnn_param(n)).all(|(_, g)| g.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn depth_stream_overfits_a_fixed_batch() {
    let cfg = net(Variant::DepthOnly);
    let d = data();
    let batch = d.frame_batch(&[(0, 10), (1, 20), (2, 10), (3, 20)], &cfg).unwrap();
    let mut params = init_params::<f64>(&cfg, 0.1, 3);
    let mut opt = Optimizer::new(&TrainConfig { lr: 1e-2, ..train_cfg(1) });
    let first = cnn_stream_step(&mut params, &mut opt, &cfg, &batch).unwrap().total;
    let mut last = first;
    for _ in 0..150 {
        last = cnn_stream_step(&mut params, &mut opt, &cfg, &batch).unwrap().total;
    }
    assert!(last < 0.3 * first, "depth loss {first} -> {last}");
}

#[test]
fn sequence_stream_overfits_a_fixed_batch() {
    let cfg = net(Variant::Full);
    let d = data();
    let batch = d.seq_batch(&[(0, 5), (1, 40)], &cfg).unwrap();
    let mut params = init_params::<f64>(&cfg, 0.1, 3);
    let mut opt = Optimizer::new(&TrainConfig { lr: 1e-2, ..train_cfg(1) });
    let first = rnn_stream_step(&mut params, &mut opt, &cfg, &fixture().map, &batch).unwrap();
    let mut last = first;
    for _ in 0..200 {
        last = rnn_stream_step(&mut params, &mut opt, &cfg, &fixture().map, &batch).unwrap();
    }
    assert!(last.total < 0.3 * first.total, "{first:?} -> {last:?}");
    assert!(last.rppg.unwrap() < 0.1 * first.rppg.unwrap(), "{first:?} -> {last:?}");
}

#[test]
fn micro_dataset_reaches_low_depth_loss() {
    let cfg = net(Variant::Full);
    let mut last_epoch = Vec::new();
    train(&data(), &cfg, &train_cfg(10), None, |e| {
        if let TrainEvent::Step(r) = e {
            if r.epoch == 9 && r.stream == "cnn" {
                last_epoch.push(r.losses.depth.unwrap());
            }
        }
        Ok(())
    })
    .unwrap();
    let mean = last_epoch.iter().sum::<f64>() / last_epoch.len() as f64;
    assert!(mean < 0.1, "final-epoch depth loss {mean}");
}

#[test]
fn binary_variant_trains_on_cross_entropy() {
    let cfg = net(Variant::Binary);
    let mut records = Vec::new();
    train(&data(), &cfg, &train_cfg(1), None, |e| {
        if let TrainEvent::Step(r) = e {
            records.push(r.losses);
        }
        Ok(())
    })
    .unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|l| l.cross_entropy.is_some() && l.depth.is_none() && l.rppg.is_none()));
}

#[test]
fn non_finite_weights_trip_the_guard() {
    let cfg = net(Variant::DepthOnly);
    let d = data();
    let batch = d.frame_batch(&[(0, 1), (1, 2), (2, 3), (3, 4)], &cfg).unwrap();
    let mut params = init_params::<f64>(&cfg, 0.02, 3);
    params.tensors.get_mut("cnn.block0.conv0.weight").unwrap().data_mut()[0] = f64::NAN;
    let mut opt = Optimizer::new(&train_cfg(1));
    let err = cnn_stream_step(&mut params, &mut opt, &cfg, &batch).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn initialization_statistics() {
    let cfg = NetConfig::default();
    let params: ModelParams<f64> = init_params(&cfg, 0.02, 0);
    let w = &params.tensors["rnn.lstm.w_ih"];
    assert!(w.len() >= 100_000);
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((0.019..=0.021).contains(&std), "std {std}");
    assert!(mean.abs() < 1e-3);
}

#[test]
fn training_rejects_mismatched_data() {
    let cfg = NetConfig { map_size: 16, concat_size: 32, ..net(Variant::Full) };
    let map = VertexIndexMap::from_basis(&fixture().basis, 16);
    let d = TrainData { clips: &fixture().clips, basis: &fixture().basis, map: &map };
    let err = train(&d, &cfg, &train_cfg(1), None, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

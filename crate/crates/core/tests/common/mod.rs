#![allow(dead_code)]

use auxspoof::face::{FaceBasis, Pose, PosedShape, VertexIndexMap};
use auxspoof::layers::{l1_loss, lstm_step, LstmWeights};
use auxspoof::net::{ModelParams, NetConfig, Variant};
use auxspoof::synthgen::default_basis;
use auxspoof::tensor::Tensor;
use auxspoof::trainer::{init_params, sequence_gradients, SeqBatch, Terms};
use auxspoof::{Graph, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;
const MODEL_STEP: f64 = 1e-6;
const COORDS: usize = 12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
    Tensor::new(shape, data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `||a - n|| / (||a|| + ||n||)` over the sampled coordinates.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `build` with central differences at
/// randomly chosen coordinates of every input. Returns the largest
/// per-input relative error.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    rng: &mut ChaCha8Rng,
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.param(x.clone())).collect();
        let loss = build(&mut g, &ids);
        (g, ids, loss)
    };
    let (g, ids, loss) = eval(inputs);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic_all = grads.get(*id);
        let n = inputs[k].len();
        let coords: Vec<usize> = (0..COORDS.min(n)).map(|_| rng.random_range(0..n)).collect();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &i in &coords {
            let mut bumped = inputs.to_vec();
            bumped[k].data_mut()[i] += STEP;
            let (gp, _, lp) = eval(&bumped);
            bumped[k].data_mut()[i] -= 2.0 * STEP;
            let (gm, _, lm) = eval(&bumped);
            numeric.push((gp.value(lp).item() - gm.value(lm).item()) / (2.0 * STEP));
            analytic.push(analytic_all.data()[i]);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Random scalar projection `sum(out * r)` so every output element matters.
pub fn project(g: &mut Graph<f64>, out: NodeId, r: &Tensor<f64>) -> NodeId {
    let c = g.constant(r.clone());
    let p = g.mul(out, c).unwrap();
    g.sum(p)
}

fn projected(
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    out_shape: &[usize],
    f: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> f64 {
    let mut r = rng(seed ^ 0xfeed);
    let proj = randn(&mut r, out_shape, 1.0);
    gradcheck(&inputs, &mut r, |g, ids| {
        let out = f(g, ids);
        project(g, out, &proj)
    })
}

pub type OpCase = fn(u64) -> f64;

pub fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("add/sub/mul", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 4], 1.0), randn(&mut r, &[3, 4], 1.0)];
            projected(s, xs, &[3, 4], |g, i| {
                let a = g.add(i[0], i[1]).unwrap();
                let b = g.sub(a, i[1]).unwrap();
                let c = g.mul(b, i[1]).unwrap();
                g.scale(c, 0.7)
            })
        }),
        ("abs/square/mean", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 5], 1.0)];
            let mut pr = rng(s ^ 1);
            let w = randn(&mut pr, &[2, 5], 1.0);
            gradcheck(&xs, &mut pr, |g, i| {
                let a = g.abs(i[0]);
                let sq = g.square(i[0]);
                let t = g.add(a, sq).unwrap();
                let p = project(g, t, &w);
                let m = g.row_mean(i[0]);
                let m = g.square(m);
                let m = g.mean(m);
                g.add(p, m).unwrap()
            })
        }),
        ("reshape/narrow/concat", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 3, 4], 1.0), randn(&mut r, &[2, 2, 4], 1.0)];
            projected(s, xs, &[4, 5], |g, i| {
                let c = g.concat(&[i[0], i[1]], 1).unwrap();
                let n = g.narrow(c, 1, 1, 3).unwrap();
                let m = g.reshape(n, &[2, 12]).unwrap();
                let m = g.narrow(m, 1, 2, 10).unwrap();
                g.reshape(m, &[4, 5]).unwrap()
            })
        }),
        ("conv3x3", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 3, 5, 6], 1.0), randn(&mut r, &[4, 3, 3, 3], 0.5), randn(&mut r, &[4], 0.5)];
            projected(s, xs, &[2, 4, 5, 6], |g, i| g.conv2d(i[0], i[1], i[2]).unwrap())
        }),
        ("maxpool2", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 2, 6, 4], 1.0)];
            projected(s, xs, &[2, 2, 3, 2], |g, i| g.max_pool2(i[0]).unwrap())
        }),
        ("resize", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[1, 2, 3, 5], 1.0)];
            projected(s, xs, &[1, 2, 7, 4], |g, i| g.resize(i[0], 7, 4).unwrap())
        }),
        ("elu/sigmoid/tanh", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 7], 2.0)];
            projected(s, xs, &[3, 7], |g, i| {
                let e = g.elu(i[0]);
                let sg = g.sigmoid(i[0]);
                let t = g.tanh(e);
                let a = g.add(sg, t).unwrap();
                g.mul(a, e).unwrap()
            })
        }),
        ("batchnorm-train", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 2, 3, 3], 1.5), randn(&mut r, &[2], 1.0), randn(&mut r, &[2], 1.0)];
            projected(s, xs, &[3, 2, 3, 3], |g, i| g.batch_norm(i[0], i[1], i[2]).unwrap().0)
        }),
        ("batchnorm-eval", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 3, 2, 2], 1.0), randn(&mut r, &[3], 1.0), randn(&mut r, &[3], 1.0)];
            let mean = randn(&mut r, &[3], 1.0).into_data();
            let var = uniform(&mut r, &[3], 0.5, 2.0).into_data();
            projected(s, xs, &[2, 3, 2, 2], move |g, i| g.batch_norm_eval(i[0], i[1], i[2], &mean, &var).unwrap())
        }),
        ("linear", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[4, 6], 1.0), randn(&mut r, &[3, 6], 1.0), randn(&mut r, &[3], 1.0)];
            projected(s, xs, &[4, 3], |g, i| g.linear(i[0], i[1], Some(i[2])).unwrap())
        }),
        ("lstm-step", |s| {
            let (n, input, h) = (2, 5, 3);
            let mut r = rng(s);
            let xs = vec![
                randn(&mut r, &[n, input], 1.0),
                randn(&mut r, &[n, h], 0.5),
                randn(&mut r, &[n, h], 0.5),
                randn(&mut r, &[4 * h, input], 0.5),
                randn(&mut r, &[4 * h, h], 0.5),
                randn(&mut r, &[4 * h], 0.5),
            ];
            let mut pr = rng(s ^ 2);
            let (wh, wc) = (randn(&mut pr, &[n, h], 1.0), randn(&mut pr, &[n, h], 1.0));
            gradcheck(&xs, &mut pr, |g, i| {
                let w = LstmWeights { w_ih: i[3], w_hh: i[4], bias: i[5] };
                let (h1, c1) = lstm_step(g, i[0], i[1], i[2], &w).unwrap();
                let (h2, c2) = lstm_step(g, i[0], h1, c1, &w).unwrap();
                let a = project(g, h2, &wh);
                let b = project(g, c2, &wc);
                g.add(a, b).unwrap()
            })
        }),
        ("dft-magnitude", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 16], 1.0)];
            projected(s, xs, &[3, 8], |g, i| g.dft_magnitude(i[0]).unwrap())
        }),
        ("gather", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 6], 1.0)];
            let index: Vec<Option<usize>> = (0..8).map(|k| if k % 3 == 0 { None } else { Some((k * 5) % 6) }).collect();
            projected(s, xs, &[2, 4], move |g, i| g.gather(i[0], index.clone(), 4).unwrap())
        }),
        ("global-avg-pool", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[2, 3, 2, 4], 1.0)];
            projected(s, xs, &[2, 3], |g, i| g.global_avg_pool(i[0]).unwrap())
        }),
        ("softmax-cross-entropy", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[5, 2], 2.0)];
            let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..2)).collect();
            gradcheck(&xs, &mut r, |g, i| g.softmax_cross_entropy(i[0], &labels).unwrap())
        }),
        ("l1-loss", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 8], 1.0), randn(&mut r, &[3, 8], 1.0)];
            gradcheck(&xs, &mut r, |g, i| l1_loss(g, i[0], i[1], false).unwrap())
        }),
        ("l1-loss-squared", |s| {
            let mut r = rng(s);
            let xs = vec![randn(&mut r, &[3, 8], 1.0), randn(&mut r, &[3, 8], 1.0)];
            gradcheck(&xs, &mut r, |g, i| l1_loss(g, i[0], i[1], true).unwrap())
        }),
    ]
}

/// Smallest layout that exercises every part of the full model.
pub fn tiny_net(variant: Variant) -> NetConfig {
    NetConfig {
        variant,
        input_size: 16,
        block_channels: vec![2, 3],
        branch_channels: 2,
        concat_size: 8,
        map_size: 8,
        lstm_hidden: 4,
        fc_out: 16,
        spectrum_bins: 6,
        n_frames: 3,
        ..NetConfig::default()
    }
}

pub struct ModelFixture {
    pub cfg: NetConfig,
    pub params: ModelParams<f64>,
    pub map: VertexIndexMap,
    pub batch: SeqBatch<f64>,
}

/// Random posed shapes near the canonical pose of a `size`-pixel image.
pub fn jittered_shapes(basis: &FaceBasis<f64>, count: usize, size: usize, r: &mut ChaCha8Rng) -> Vec<PosedShape<f64>> {
    let base = basis.canonical_pose(size, size);
    (0..count)
        .map(|_| {
            let pose: Pose<f64> = base.then_similarity(
                r.random_range(0.9..1.05),
                r.random_range(-0.2..0.2),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            let params = basis.neutral_params();
            let frontal = auxspoof::face::synthesize_shape(basis, &params).unwrap();
            auxspoof::face::pose_transform(&frontal, &pose).unwrap()
        })
        .collect()
}

/// Two-clip sequence batch on random frames for the tiny model, with the
/// registration mask forced on for every face cell.
pub fn model_fixture(seed: u64) -> ModelFixture {
    let cfg = NetConfig { depth_threshold: -1e9, ..tiny_net(Variant::Full) };
    let mut r = rng(seed);
    let basis = default_basis();
    let map = VertexIndexMap::from_basis(&basis, cfg.map_size);
    let params = init_params::<f64>(&cfg, 0.3, seed);
    let (clips, nf, s) = (2, cfg.n_frames, cfg.input_size);
    let rows = clips * nf;
    let batch = SeqBatch {
        frames: uniform(&mut r, &[rows, 3, s, s], 0.0, 1.0),
        depth: uniform(&mut r, &[rows, 1, cfg.map_size, cfg.map_size], 0.0, 1.0),
        shapes: jittered_shapes(&basis, rows, s, &mut r),
        rppg: uniform(&mut r, &[clips, cfg.spectrum_bins], 0.0, 0.5),
        live: vec![true, false],
        width: s,
        height: s,
    };
    ModelFixture { cfg, params, map, batch }
}

/// Central-difference check of the joint CNN-RNN loss with respect to every
/// parameter tensor, at a few random coordinates each.
pub fn model_case(seed: u64, coords_per_tensor: usize) -> f64 {
    let f = model_fixture(seed);
    let loss = |p: &ModelParams<f64>| sequence_gradients(p, &f.cfg, &f.map, &f.batch, Terms::JOINT).unwrap().losses.total;
    let out = sequence_gradients(&f.params, &f.cfg, &f.map, &f.batch, Terms::JOINT).unwrap();
    let mut r = rng(seed ^ 0xabc);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, t) in &f.params.tensors {
        let g = &out.grads[name];
        for _ in 0..coords_per_tensor {
            let i = r.random_range(0..t.len());
            let mut p = f.params.clone();
            p.tensors.get_mut(name).unwrap().data_mut()[i] += MODEL_STEP;
            let up = loss(&p);
            p.tensors.get_mut(name).unwrap().data_mut()[i] -= 2.0 * MODEL_STEP;
            let down = loss(&p);
            numeric.push((up - down) / (2.0 * MODEL_STEP));
            analytic.push(g.data()[i]);
        }
    }
    rel_err(&analytic, &numeric)
}

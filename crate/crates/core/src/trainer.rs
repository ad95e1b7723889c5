//! Two-stream alternating training.
//!
//! Stream one feeds single frames to the CNN under the depth loss and only
//! updates `cnn.*` tensors. Stream two feeds short sequences through the
//! whole network under the rPPG loss plus the depth loss of every frame in
//! the sequence, updating both parts. An epoch alternates one step of each
//! stream until every clip has been used once by stream two.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::face::{FaceBasis, PosedShape, VertexIndexMap};
use crate::graph::Graph;
use crate::io::container::Container;
use crate::net::{
    self, cnn_forward, is_cnn_param, registration_layer, rnn_forward, BnMode, Bound, ModelParams, NetConfig, ParamKind,
    Variant,
};
use crate::ops::batch_norm::BnCache;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_cnn: usize,
    pub batch_rnn: usize,
    pub init_std: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            epochs: 10,
            batch_cnn: 10,
            batch_rnn: 2,
            init_std: 0.02,
            optimizer: OptimizerKind::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.epochs > 0
            && self.batch_cnn >= 2
            && self.batch_rnn > 0
            && self.init_std > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid training configuration: {self:?}")))
        }
    }
}

/// Seeded initialization: weights from `N(0, std^2)`, biases and BN shifts
/// zero, BN scales one.
pub fn init_params<T: Scalar>(cfg: &NetConfig, std: f64, seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("std is positive");
    ModelParams::from_fn(cfg, |s| {
        let n: usize = s.shape.iter().product();
        let data = match s.kind {
            ParamKind::Weight => (0..n).map(|_| lit(normal.sample(&mut rng))).collect(),
            ParamKind::Bias | ParamKind::BnShift => vec![T::zero(); n],
            ParamKind::BnScale => vec![T::one(); n],
        };
        Tensor::new(&s.shape, data).expect("spec shape")
    })
}

/// Per-tensor optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

/// Adam or plain SGD, with one state slot per parameter tensor shared by
/// both streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub slots: BTreeMap<String, Slot<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: lit(cfg.lr),
            beta1: lit(cfg.beta1),
            beta2: lit(cfg.beta2),
            eps: lit(cfg.eps),
            slots: BTreeMap::new(),
        }
    }

    /// Applies one update to every tensor present in `grads`.
    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, grad) in grads {
            let p = params
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != grad.shape() {
                return Err(Error::Contract(format!("gradient shape mismatch for {name}")));
            }
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: vec![T::zero(); grad.len()],
                v: vec![T::zero(); grad.len()],
                step: 0,
            });
            slot.step += 1;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in p.data_mut().iter_mut().zip(grad.data()) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let t = i32::try_from(slot.step).unwrap_or(i32::MAX);
                    let c1 = T::one() - self.beta1.powi(t);
                    let c2 = T::one() - self.beta2.powi(t);
                    for (i, (w, &g)) in p.data_mut().iter_mut().zip(grad.data()).enumerate() {
                        slot.m[i] = self.beta1 * slot.m[i] + (T::one() - self.beta1) * g;
                        slot.v[i] = self.beta2 * slot.v[i] + (T::one() - self.beta2) * g * g;
                        let mhat = slot.m[i] / c1;
                        let vhat = slot.v[i] / c2;
                        *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Single-frame batch for the CNN stream.
#[derive(Clone, Debug)]
pub struct FrameBatch<T> {
    /// `[N, 3, S, S]`
    pub frames: Tensor<T>,
    /// `[N, 1, M, M]`
    pub depth: Tensor<T>,
    pub live: Vec<bool>,
}

/// Sequence batch for the CNN-RNN stream. Frames are ordered time-major:
/// row `t * B + b` is frame `t` of clip `b`.
#[derive(Clone, Debug)]
pub struct SeqBatch<T> {
    /// `[N_f * B, 3, S, S]`
    pub frames: Tensor<T>,
    /// `[N_f * B, 1, M, M]`
    pub depth: Tensor<T>,
    /// Posed shape per row of `frames`.
    pub shapes: Vec<PosedShape<T>>,
    /// `[B, bins]`
    pub rppg: Tensor<T>,
    /// Per clip.
    pub live: Vec<bool>,
    pub width: usize,
    pub height: usize,
}

impl<T> SeqBatch<T> {
    pub fn clips(&self) -> usize {
        self.live.len()
    }
}

/// Loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Losses {
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rppg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_entropy: Option<f64>,
}

/// Which loss terms the sequence stream optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub depth: bool,
    pub rppg: bool,
}

impl Terms {
    pub const JOINT: Terms = Terms { depth: true, rppg: true };
}

/// Losses, parameter gradients and recorded BN batch statistics.
#[derive(Debug)]
pub struct StepOutput<T> {
    pub losses: Losses,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub bn_caches: Vec<(String, BnCache<T>)>,
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn collect_grads<T: Scalar>(g: &Graph<T>, bound: &Bound, loss: crate::graph::NodeId) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut grads = g.backward(loss)?;
    Ok(bound
        .iter()
        .filter(|(_, id)| g.requires_grad(*id))
        .map(|(n, id)| (n.to_string(), grads.take(id)))
        .collect())
}

fn live_labels(live: &[bool]) -> Vec<usize> {
    live.iter().map(|&l| usize::from(l)).collect()
}

/// Stream-one loss and gradients with respect to the CNN part only.
pub fn frame_gradients<T: Scalar>(params: &ModelParams<T>, cfg: &NetConfig, batch: &FrameBatch<T>) -> Result<StepOutput<T>> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, params, is_cnn_param, is_cnn_param);
    let x = g.constant(batch.frames.clone());
    let mut caches = Vec::new();
    let out = cnn_forward(&mut g, &bound, cfg, x, BnMode::Train(&mut caches))?;
    let (loss, losses) = match cfg.variant {
        Variant::Binary => {
            let l = g.softmax_cross_entropy(out.logits.expect("binary logits"), &live_labels(&batch.live))?;
            let v = to_f64(g.value(l).item());
            (l, Losses { total: v, cross_entropy: Some(v), ..Losses::default() })
        }
        Variant::Full | Variant::DepthOnly => {
            let target = g.constant(batch.depth.clone());
            let l = net::depth_loss(&mut g, out.depth.expect("depth head"), target, cfg.squared_l1)?;
            let v = to_f64(g.value(l).item());
            (l, Losses { total: v, depth: Some(v), ..Losses::default() })
        }
    };
    let grads = collect_grads(&g, &bound, loss)?;
    Ok(StepOutput { losses, grads, bn_caches: caches })
}

/// Stream-two loss and gradients with respect to every parameter.
pub fn sequence_gradients<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &NetConfig,
    map: &VertexIndexMap,
    batch: &SeqBatch<T>,
    terms: Terms,
) -> Result<StepOutput<T>> {
    let b = batch.clips();
    let rows = batch.frames.shape().first().copied().unwrap_or(0);
    if b == 0 || rows % b != 0 || batch.shapes.len() != rows {
        return Err(Error::Contract("sequence batch is inconsistent".into()));
    }
    let n_frames = rows / b;
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, params, |_| true, |_| true);
    let x = g.constant(batch.frames.clone());
    let mut caches = Vec::new();
    let out = cnn_forward(&mut g, &bound, cfg, x, BnMode::Train(&mut caches))?;
    let mut losses = Losses::default();
    let mut parts = Vec::new();
    match cfg.variant {
        Variant::Binary => {
            let labels: Vec<usize> = (0..n_frames).flat_map(|_| live_labels(&batch.live)).collect();
            let l = g.softmax_cross_entropy(out.logits.expect("binary logits"), &labels)?;
            losses.cross_entropy = Some(to_f64(g.value(l).item()));
            parts.push(l);
        }
        Variant::Full | Variant::DepthOnly => {
            let depth = out.depth.expect("depth head");
            if terms.depth {
                let target = g.constant(batch.depth.clone());
                let l = net::depth_loss(&mut g, depth, target, cfg.squared_l1)?;
                losses.depth = Some(to_f64(g.value(l).item()));
                parts.push(l);
            }
            if terms.rppg && cfg.variant == Variant::Full {
                let dv = g.value(depth).clone();
                let shapes: Vec<&PosedShape<T>> = batch.shapes.iter().collect();
                let f = registration_layer(
                    &mut g,
                    out.features.expect("feature head"),
                    &dv,
                    &shapes,
                    map,
                    lit(cfg.depth_threshold),
                    batch.width,
                    batch.height,
                )?;
                let steps = (0..n_frames).map(|t| g.narrow(f, 0, t * b, b)).collect::<Result<Vec<_>>>()?;
                let pred = rnn_forward(&mut g, &bound, cfg, &steps)?;
                let target = g.constant(batch.rppg.clone());
                let l = net::rppg_loss(&mut g, pred, target, cfg.squared_l1)?;
                losses.rppg = Some(to_f64(g.value(l).item()));
                parts.push(l);
            }
        }
    }
    let mut loss = *parts.first().ok_or_else(|| Error::Contract("no loss term selected".into()))?;
    for &p in &parts[1..] {
        loss = g.add(loss, p)?;
    }
    losses.total = to_f64(g.value(loss).item());
    let grads = collect_grads(&g, &bound, loss)?;
    Ok(StepOutput { losses, grads, bn_caches: caches })
}

fn guard<T: Scalar>(params: &ModelParams<T>, losses: &Losses, stream: &str) -> Result<()> {
    if !losses.total.is_finite() {
        return Err(Error::Numerical(format!("{stream} stream produced a non-finite loss {losses:?}")));
    }
    if let Some(name) = params.first_non_finite() {
        return Err(Error::Numerical(format!("{stream} stream left {name} non-finite")));
    }
    Ok(())
}

fn finish_step<T: Scalar>(params: &mut ModelParams<T>, opt: &mut Optimizer<T>, out: StepOutput<T>, stream: &str) -> Result<Losses> {
    opt.apply(params, &out.grads)?;
    net::update_bn_stats(&mut params.bn_stats, &out.bn_caches);
    guard(params, &out.losses, stream)?;
    Ok(out.losses)
}

/// One optimizer step of the CNN stream; `rnn.*` tensors are not touched.
pub fn cnn_stream_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut Optimizer<T>,
    cfg: &NetConfig,
    batch: &FrameBatch<T>,
) -> Result<Losses> {
    let out = frame_gradients(params, cfg, batch)?;
    finish_step(params, opt, out, "cnn")
}

/// One optimizer step of the CNN-RNN stream on the joint objective.
pub fn rnn_stream_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut Optimizer<T>,
    cfg: &NetConfig,
    map: &VertexIndexMap,
    batch: &SeqBatch<T>,
) -> Result<Losses> {
    let out = sequence_gradients(params, cfg, map, batch, Terms::JOINT)?;
    finish_step(params, opt, out, "rnn")
}

/// Clips plus what the registration layer needs to use them.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a, T> {
    pub clips: &'a [VideoClip],
    pub basis: &'a FaceBasis<T>,
    pub map: &'a VertexIndexMap,
}

impl<T: Scalar> TrainData<'_, T> {
    /// Checks that every clip carries complete ground truth of the right size.
    pub fn validate(&self, cfg: &NetConfig) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        if self.map.size() != cfg.map_size {
            return Err(Error::Dataset(format!("index map is {0}x{0}, model maps are {1}x{1}", self.map.size(), cfg.map_size)));
        }
        for (i, c) in self.clips.iter().enumerate() {
            c.validate().map_err(|e| Error::Dataset(format!("clip {i}: {e}")))?;
            if c.len() < cfg.n_frames {
                return Err(Error::Dataset(format!("clip {i} has {} frames, need {}", c.len(), cfg.n_frames)));
            }
            if c.gt_depth.iter().any(|d| d.size() != cfg.map_size) {
                return Err(Error::Dataset(format!("clip {i} is missing {0}x{0} depth ground truth", cfg.map_size)));
            }
            if c.gt_rppg.values().len() != cfg.spectrum_bins {
                return Err(Error::Dataset(format!("clip {i} rPPG ground truth has the wrong length")));
            }
            if c.frames.width() != c.frames.height() {
                return Err(Error::Dataset(format!("clip {i} frames are not square")));
            }
        }
        Ok(())
    }

    fn depth_rows(&self, picks: impl Iterator<Item = (usize, usize)>, out: &mut Vec<T>) {
        for (c, t) in picks {
            out.extend(self.clips[c].gt_depth[t].values().iter().map(|&v| lit::<T>(v)));
        }
    }

    /// Frames `(clip, frame)` as a stream-one batch.
    pub fn frame_batch(&self, picks: &[(usize, usize)], cfg: &NetConfig) -> Result<FrameBatch<T>> {
        let first = &self.clips[picks[0].0].frames;
        let (h, w) = (first.height(), first.width());
        let mut frames = Vec::with_capacity(picks.len() * 3 * h * w);
        for &(c, t) in picks {
            frames.extend(self.clips[c].frames.frame_chw::<T>(t));
        }
        let mut depth = Vec::with_capacity(picks.len() * cfg.map_cells());
        self.depth_rows(picks.iter().copied(), &mut depth);
        Ok(FrameBatch {
            frames: Tensor::new(&[picks.len(), 3, h, w], frames)?,
            depth: Tensor::new(&[picks.len(), 1, cfg.map_size, cfg.map_size], depth)?,
            live: picks.iter().map(|&(c, _)| self.clips[c].label.is_live()).collect(),
        })
    }

    /// `n_frames` consecutive frames from each `(clip, start)` as a
    /// stream-two batch.
    pub fn seq_batch(&self, picks: &[(usize, usize)], cfg: &NetConfig) -> Result<SeqBatch<T>> {
        let first = &self.clips[picks[0].0].frames;
        let (h, w) = (first.height(), first.width());
        let nf = cfg.n_frames;
        let rows: Vec<(usize, usize)> = (0..nf).flat_map(|t| picks.iter().map(move |&(c, s)| (c, s + t))).collect();
        let mut frames = Vec::with_capacity(rows.len() * 3 * h * w);
        let mut shapes = Vec::with_capacity(rows.len());
        for &(c, t) in &rows {
            let clip = &self.clips[c];
            frames.extend(clip.frames.frame_chw::<T>(t));
            shapes.push(clip.geometry[t].posed(self.basis)?);
        }
        let mut depth = Vec::with_capacity(rows.len() * cfg.map_cells());
        self.depth_rows(rows.iter().copied(), &mut depth);
        let rppg = picks
            .iter()
            .flat_map(|&(c, _)| self.clips[c].gt_rppg.values().iter().map(|&v| lit::<T>(v)))
            .collect();
        Ok(SeqBatch {
            frames: Tensor::new(&[rows.len(), 3, h, w], frames)?,
            depth: Tensor::new(&[rows.len(), 1, cfg.map_size, cfg.map_size], depth)?,
            shapes,
            rppg: Tensor::new(&[picks.len(), cfg.spectrum_bins], rppg)?,
            live: picks.iter().map(|&(c, _)| self.clips[c].label.is_live()).collect(),
            width: w,
            height: h,
        })
    }
}

/// Hex SHA-256 of the configuration pair, ignoring the epoch budget so a
/// run can be extended from its last checkpoint.
pub fn config_hash(net: &NetConfig, train: &TrainConfig) -> String {
    let train = TrainConfig { epochs: 0, ..train.clone() };
    let json = serde_json::to_string(&(net, &train)).expect("configs serialize");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Complete training state after an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub params: ModelParams<T>,
    pub optimizer: Optimizer<T>,
    /// Number of finished epochs.
    pub epoch: usize,
    pub config_hash: String,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert_text("meta/net_config", &serde_json::to_string(&self.net)?)?;
        c.insert_text("meta/train_config", &serde_json::to_string(&self.train)?)?;
        c.insert_text("meta/config_hash", &self.config_hash)?;
        c.insert_i64("meta/epoch", &[1], vec![self.epoch as i64])?;
        self.params.write_to(&mut c)?;
        for (name, s) in &self.optimizer.slots {
            c.insert_tensor(format!("opt/{name}.m"), &Tensor::new(&[s.m.len()], s.m.clone())?)?;
            c.insert_tensor(format!("opt/{name}.v"), &Tensor::new(&[s.v.len()], s.v.clone())?)?;
            c.insert_i64(format!("opt/{name}.step"), &[1], vec![s.step as i64])?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let net: NetConfig = serde_json::from_str(&c.text("meta/net_config")?)?;
        let train: TrainConfig = serde_json::from_str(&c.text("meta/train_config")?)?;
        let config_hash = c.text("meta/config_hash")?;
        if config_hash != self::config_hash(&net, &train) {
            return Err(Error::Format("checkpoint config hash does not match its stored configuration".into()));
        }
        let epoch = usize::try_from(c.int("meta/epoch")?).map_err(|_| Error::Format("negative epoch".into()))?;
        let params = ModelParams::read_from(c, &net)?;
        let mut optimizer = Optimizer::new(&train);
        for name in params.tensors.keys() {
            let key = format!("opt/{name}.step");
            if !c.contains(&key) {
                continue;
            }
            let step = u64::try_from(c.int(&key)?).map_err(|_| Error::Format("negative step".into()))?;
            let m = c.tensor::<T>(&format!("opt/{name}.m"))?.into_data();
            let v = c.tensor::<T>(&format!("opt/{name}.v"))?.into_data();
            optimizer.slots.insert(name.clone(), Slot { m, v, step });
        }
        Ok(Self { net, train, params, optimizer, epoch, config_hash })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub stream: &'static str,
    #[serde(flatten)]
    pub losses: Losses,
    pub wall_s: f64,
}

pub enum TrainEvent<'a, T> {
    Step(&'a StepRecord),
    Epoch(&'a Checkpoint<T>),
}

/// Shuffling and sampling for `epoch` depend only on `(seed, epoch)`, so a
/// resumed run draws the same batches as an uninterrupted one.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains from scratch, or from `resume`, until `train.epochs` epochs are
/// done. `sink` sees every step record and every end-of-epoch checkpoint.
pub fn train<T: Scalar>(
    data: &TrainData<'_, T>,
    net: &NetConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint<T>>,
    mut sink: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
) -> Result<Checkpoint<T>> {
    net.validate()?;
    train.validate()?;
    data.validate(net)?;
    let hash = config_hash(net, train);
    let mut state = match resume {
        Some(c) => {
            if c.config_hash != hash {
                return Err(Error::Contract("checkpoint was produced with a different configuration".into()));
            }
            Checkpoint { train: train.clone(), ..c }
        }
        None => Checkpoint {
            net: net.clone(),
            train: train.clone(),
            params: init_params(net, train.init_std, train.seed),
            optimizer: Optimizer::new(train),
            epoch: 0,
            config_hash: hash,
        },
    };
    let started = Instant::now();
    let n = data.clips.len();
    let steps = n.div_ceil(train.batch_rnn);
    while state.epoch < train.epochs {
        let epoch = state.epoch;
        let mut rng = epoch_rng(train.seed, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for step in 0..steps {
            let picks: Vec<(usize, usize)> = (0..train.batch_cnn)
                .map(|_| {
                    let c = rng.random_range(0..n);
                    (c, rng.random_range(0..data.clips[c].len()))
                })
                .collect();
            let batch = data.frame_batch(&picks, net)?;
            let losses = cnn_stream_step(&mut state.params, &mut state.optimizer, net, &batch)?;
            let rec = StepRecord { epoch, step, stream: "cnn", losses, wall_s: started.elapsed().as_secs_f64() };
            sink(TrainEvent::Step(&rec))?;

            let chunk = &order[step * train.batch_rnn..((step + 1) * train.batch_rnn).min(n)];
            let picks: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&c| (c, rng.random_range(0..=data.clips[c].len() - net.n_frames)))
                .collect();
            let batch = data.seq_batch(&picks, net)?;
            let losses = rnn_stream_step(&mut state.params, &mut state.optimizer, net, data.map, &batch)?;
            let rec = StepRecord { epoch, step, stream: "rnn", losses, wall_s: started.elapsed().as_secs_f64() };
            sink(TrainEvent::Step(&rec))?;
        }
        state.epoch += 1;
        log::info!("epoch {} done after {:.1}s", state.epoch, started.elapsed().as_secs_f64());
        sink(TrainEvent::Epoch(&state))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetConfig {
        NetConfig {
            input_size: 16,
            block_channels: vec![2, 3],
            branch_channels: 2,
            concat_size: 8,
            map_size: 8,
            lstm_hidden: 4,
            fc_out: 16,
            spectrum_bins: 6,
            n_frames: 2,
            ..NetConfig::default()
        }
    }

    #[test]
    fn init_is_seeded_and_structured() {
        let cfg = tiny();
        let a = init_params::<f64>(&cfg, 0.02, 5);
        assert_eq!(a, init_params::<f64>(&cfg, 0.02, 5));
        assert_ne!(a, init_params::<f64>(&cfg, 0.02, 6));
        for (name, t) in &a.tensors {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with(".gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = tiny();
        let mut p = ModelParams::<f64>::zeros(&cfg);
        let mut opt = Optimizer::new(&TrainConfig { optimizer: OptimizerKind::Adam, ..TrainConfig::default() });
        let name = "rnn.fc.bias".to_string();
        let mut g = BTreeMap::new();
        g.insert(name.clone(), Tensor::full(&[16], 0.5));
        opt.apply(&mut p, &g).unwrap();
        assert!(p.tensors[&name].data().iter().all(|&v| (v + 3e-3).abs() < 1e-9));
        assert_eq!(opt.slots[&name].step, 1);
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let cfg = tiny();
        let mut p = ModelParams::<f64>::zeros(&cfg);
        let mut opt = Optimizer::new(&TrainConfig::default());
        let name = "rnn.fc.bias".to_string();
        let mut g = BTreeMap::new();
        g.insert(name.clone(), Tensor::full(&[16], 0.5));
        opt.apply(&mut p, &g).unwrap();
        assert!(p.tensors[&name].data().iter().all(|&v| v == -1.5e-3));
    }

    #[test]
    fn config_hash_ignores_epoch_budget() {
        let net = NetConfig::default();
        let a = TrainConfig::default();
        let b = TrainConfig { epochs: 99, ..a.clone() };
        let c = TrainConfig { lr: 1e-3, ..a.clone() };
        assert_eq!(config_hash(&net, &a), config_hash(&net, &b));
        assert_ne!(config_hash(&net, &a), config_hash(&net, &c));
        assert_eq!(config_hash(&net, &a).len(), 64);
    }
}

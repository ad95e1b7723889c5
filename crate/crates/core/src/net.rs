//! The CNN-RNN liveness network.
//!
//! The CNN trunk is a stack of blocks (three conv-ELU-BN layers, then a 2x2
//! max pool). Every block's output is resized to `concat_size` and the
//! results are concatenated along channels. Two heads map the concatenation
//! to a depth map and a feature map of side `map_size`.
//!
//! The registration layer masks the feature map with the thresholded depth
//! map and gathers it into a frontal layout through the per-frame 3D shape.
//! The RNN (one LSTM layer, a fully connected layer and a DFT magnitude
//! layer) turns a sequence of frontal maps into a spectrum estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::face::{grid_cell, PosedShape, VertexIndexMap};
use crate::graph::{Graph, NodeId};
use crate::io::container::Container;
use crate::layers::{self, LstmWeights};
use crate::ops::batch_norm::{self, BnCache};
use crate::ops::dims4;
use crate::scalar::{from_usize, lit, Scalar};
use crate::tensor::Tensor;

const CONVS_PER_BLOCK: usize = 3;

/// Which supervision the model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Depth and rPPG supervision with the registration layer and RNN.
    Full,
    /// Depth supervision only; scored by `lambda * |D|^2`.
    DepthOnly,
    /// Global pooling and a two-way softmax on the CNN trunk.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub block_channels: Vec<usize>,
    pub branch_channels: usize,
    pub concat_size: usize,
    pub map_size: usize,
    pub lstm_hidden: usize,
    pub fc_out: usize,
    pub spectrum_bins: usize,
    pub n_frames: usize,
    pub lambda: f64,
    pub depth_threshold: f64,
    /// Square each sample's mean absolute error in the depth and rPPG losses.
    pub squared_l1: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            input_size: 64,
            block_channels: vec![8, 16, 24, 16],
            branch_channels: 16,
            concat_size: 32,
            map_size: 32,
            lstm_hidden: 100,
            fc_out: 128,
            spectrum_bins: 50,
            n_frames: 5,
            lambda: 0.015,
            depth_threshold: 0.1,
            squared_l1: false,
        }
    }
}

impl NetConfig {
    /// Full-resolution layout: 256 input, 64 concatenation size, wider blocks.
    pub fn paper_scale() -> Self {
        Self {
            input_size: 256,
            block_channels: vec![64, 128, 196, 128],
            branch_channels: 64,
            concat_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return bad("block_channels must be non-empty and positive".into());
        }
        let stride = 1usize << self.block_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return bad(format!("input_size {} must be a multiple of {stride}", self.input_size));
        }
        if self.map_size == 0 || self.concat_size == 0 || !self.concat_size.is_multiple_of(self.map_size) {
            return bad(format!("map_size {} must divide concat_size {}", self.map_size, self.concat_size));
        }
        if !self.fc_out.is_multiple_of(2) || self.fc_out / 2 < self.spectrum_bins || self.spectrum_bins == 0 {
            return bad(format!("fc_out {} must be even with fc_out/2 >= spectrum_bins {}", self.fc_out, self.spectrum_bins));
        }
        if self.branch_channels == 0 || self.lstm_hidden == 0 || self.n_frames == 0 {
            return bad("branch_channels, lstm_hidden and n_frames must be positive".into());
        }
        if !(self.lambda >= 0.0) || !self.depth_threshold.is_finite() {
            return bad("lambda must be >= 0 and depth_threshold finite".into());
        }
        Ok(())
    }

    pub fn concat_channels(&self) -> usize {
        self.block_channels.iter().sum()
    }

    pub fn map_cells(&self) -> usize {
        self.map_size * self.map_size
    }

    pub fn uses_rnn(&self) -> bool {
        self.variant == Variant::Full
    }
}

/// Initialization role of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

fn conv_name(prefix: &str, l: usize) -> String {
    format!("{prefix}.conv{l}")
}

fn bn_name(prefix: &str, l: usize) -> String {
    format!("{prefix}.bn{l}")
}

/// Every trainable tensor the configuration needs, in a fixed order.
pub fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, kind| out.push(ParamSpec { name, shape, kind });
    let conv = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind), name: String, cin: usize, cout: usize| {
        push(format!("{name}.weight"), vec![cout, cin, 3, 3], ParamKind::Weight);
        push(format!("{name}.bias"), vec![cout], ParamKind::Bias);
    };
    let bn = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind), name: String, c: usize| {
        push(format!("{name}.gamma"), vec![c], ParamKind::BnScale);
        push(format!("{name}.beta"), vec![c], ParamKind::BnShift);
    };
    let mut cin = 3;
    for (b, &c) in cfg.block_channels.iter().enumerate() {
        let prefix = format!("cnn.block{b}");
        for l in 0..CONVS_PER_BLOCK {
            conv(&mut push, conv_name(&prefix, l), cin, c);
            bn(&mut push, bn_name(&prefix, l), c);
            cin = c;
        }
    }
    let cat = cfg.concat_channels();
    match cfg.variant {
        Variant::Binary => {
            push("cnn.cls.weight".into(), vec![2, cat], ParamKind::Weight);
            push("cnn.cls.bias".into(), vec![2], ParamKind::Bias);
        }
        Variant::Full | Variant::DepthOnly => {
            let heads: &[&str] = if cfg.uses_rnn() { &["cnn.depth", "cnn.feat"] } else { &["cnn.depth"] };
            for head in heads {
                conv(&mut push, conv_name(head, 0), cat, cfg.branch_channels);
                bn(&mut push, bn_name(head, 0), cfg.branch_channels);
                conv(&mut push, conv_name(head, 1), cfg.branch_channels, 1);
            }
        }
    }
    if cfg.uses_rnn() {
        let (h, m) = (cfg.lstm_hidden, cfg.map_cells());
        push("rnn.lstm.w_ih".into(), vec![4 * h, m], ParamKind::Weight);
        push("rnn.lstm.w_hh".into(), vec![4 * h, h], ParamKind::Weight);
        push("rnn.lstm.bias".into(), vec![4 * h], ParamKind::Bias);
        push("rnn.fc.weight".into(), vec![cfg.fc_out, h], ParamKind::Weight);
        push("rnn.fc.bias".into(), vec![cfg.fc_out], ParamKind::Bias);
    }
    out
}

/// Batch-norm layer names with their channel counts.
pub fn bn_layers(cfg: &NetConfig) -> Vec<(String, usize)> {
    param_specs(cfg)
        .into_iter()
        .filter(|p| p.kind == ParamKind::BnScale)
        .map(|p| (p.name.trim_end_matches(".gamma").to_string(), p.shape[0]))
        .collect()
}

pub fn is_cnn_param(name: &str) -> bool {
    name.starts_with("cnn.")
}

pub fn is_rnn_param(name: &str) -> bool {
    name.starts_with("rnn.")
}

/// Running mean and variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Named parameter tensors (`cnn.*` is the CNN part, `rnn.*` the RNN part)
/// plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
    pub bn_stats: BTreeMap<String, BnStats<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Parameters filled by `fill(spec)`, with fresh running statistics.
    pub fn from_fn(cfg: &NetConfig, mut fill: impl FnMut(&ParamSpec) -> Tensor<T>) -> Self {
        let tensors = param_specs(cfg).iter().map(|s| (s.name.clone(), fill(s))).collect();
        let bn_stats = bn_layers(cfg)
            .into_iter()
            .map(|(n, c)| (n, BnStats { mean: vec![T::zero(); c], var: vec![T::one(); c] }))
            .collect();
        Self { tensors, bn_stats }
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        Self::from_fn(cfg, |s| Tensor::zeros(&s.shape))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
            && self.bn_stats.values().all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    /// First non-finite tensor or statistic, for diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n.clone())
            .or_else(|| {
                self.bn_stats
                    .iter()
                    .find(|(_, s)| !s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
                    .map(|(n, _)| format!("{n} running stats"))
            })
    }

    /// Checks the tensor set and shapes against `cfg`.
    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "model has {} tensors, configuration needs {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for s in &specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(shape_err!("{}: shape {:?}, expected {:?}", s.name, t.shape(), s.shape));
            }
        }
        for (n, c) in bn_layers(cfg) {
            match self.bn_stats.get(&n) {
                Some(s) if s.mean.len() == c && s.var.len() == c => {}
                _ => return Err(Error::Contract(format!("missing or malformed running stats for {n}"))),
            }
        }
        Ok(())
    }

    pub fn write_to(&self, c: &mut Container) -> Result<()> {
        for (name, t) in &self.tensors {
            c.insert_tensor(format!("param/{name}"), t)?;
        }
        for (name, s) in &self.bn_stats {
            c.insert_tensor(format!("bn/{name}.running_mean"), &Tensor::new(&[s.mean.len()], s.mean.clone())?)?;
            c.insert_tensor(format!("bn/{name}.running_var"), &Tensor::new(&[s.var.len()], s.var.clone())?)?;
        }
        Ok(())
    }

    pub fn read_from(c: &Container, cfg: &NetConfig) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for s in param_specs(cfg) {
            tensors.insert(s.name.clone(), c.tensor(&format!("param/{}", s.name))?);
        }
        let mut bn_stats = BTreeMap::new();
        for (n, _) in bn_layers(cfg) {
            let mean = c.tensor::<T>(&format!("bn/{n}.running_mean"))?.into_data();
            let var = c.tensor::<T>(&format!("bn/{n}.running_var"))?.into_data();
            bn_stats.insert(n, BnStats { mean, var });
        }
        let p = Self { tensors, bn_stats };
        p.check(cfg)?;
        Ok(p)
    }
}

/// Parameters placed on a graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Adds every tensor to `g`; those selected by `trainable` become
    /// gradient-receiving leaves, the rest constants. Tensors rejected by
    /// `include` are not placed at all.
    pub fn new<T: Scalar>(
        g: &mut Graph<T>,
        params: &ModelParams<T>,
        include: impl Fn(&str) -> bool,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let mut ids = BTreeMap::new();
        for (name, t) in &params.tensors {
            if !include(name) {
                continue;
            }
            let id = if trainable(name) { g.param(t.clone()) } else { g.constant(t.clone()) };
            ids.insert(name.clone(), id);
        }
        Self { ids }
    }

    /// Every tensor as a constant.
    pub fn frozen<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> Self {
        Self::new(g, params, |_| true, |_| false)
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// How batch norm layers normalize during a forward pass.
pub enum BnMode<'a, T> {
    /// Batch statistics; each layer's statistics are recorded for the
    /// running-average update.
    Train(&'a mut Vec<(String, BnCache<T>)>),
    /// Running statistics.
    Eval(&'a BTreeMap<String, BnStats<T>>),
}

struct Ctx<'a, 'b, T> {
    bound: &'a Bound,
    bn: BnMode<'b, T>,
}

impl<T: Scalar> Ctx<'_, '_, T> {
    fn conv(&self, g: &mut Graph<T>, x: NodeId, name: &str) -> Result<NodeId> {
        g.conv2d(x, self.bound.get(&format!("{name}.weight"))?, self.bound.get(&format!("{name}.bias"))?)
    }

    fn bn(&mut self, g: &mut Graph<T>, x: NodeId, name: &str) -> Result<NodeId> {
        let gamma = self.bound.get(&format!("{name}.gamma"))?;
        let beta = self.bound.get(&format!("{name}.beta"))?;
        match &mut self.bn {
            BnMode::Train(caches) => {
                let (y, cache) = g.batch_norm(x, gamma, beta)?;
                caches.push((name.to_string(), cache));
                Ok(y)
            }
            BnMode::Eval(stats) => {
                let s = stats
                    .get(name)
                    .ok_or_else(|| Error::Contract(format!("missing running stats for {name}")))?;
                g.batch_norm_eval(x, gamma, beta, &s.mean, &s.var)
            }
        }
    }

    fn conv_elu_bn(&mut self, g: &mut Graph<T>, x: NodeId, prefix: &str, l: usize) -> Result<NodeId> {
        let y = self.conv(g, x, &conv_name(prefix, l))?;
        let y = g.elu(y);
        self.bn(g, y, &bn_name(prefix, l))
    }

    fn head(&mut self, g: &mut Graph<T>, cat: NodeId, prefix: &str, map_size: usize) -> Result<NodeId> {
        let h = self.conv_elu_bn(g, cat, prefix, 0)?;
        let out = self.conv(g, h, &conv_name(prefix, 1))?;
        let side = g.value(out).shape()[2];
        if side == map_size {
            Ok(out)
        } else {
            g.resize(out, map_size, map_size)
        }
    }
}

/// Graph outputs of the CNN part.
#[derive(Clone, Copy, Debug)]
pub struct CnnOutput {
    /// `[N, 1, M, M]` depth estimate (absent for the binary variant).
    pub depth: Option<NodeId>,
    /// `[N, 1, M, M]` feature map (full variant only).
    pub features: Option<NodeId>,
    /// `[N, 2]` live/spoof logits (binary variant only; class 1 is live).
    pub logits: Option<NodeId>,
}

/// CNN over a `[N, 3, S, S]` batch of frames with values in `[0, 1]`.
pub fn cnn_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    cfg: &NetConfig,
    x: NodeId,
    bn: BnMode<'_, T>,
) -> Result<CnnOutput> {
    let (_, c, h, w) = dims4(g.value(x).shape()).ok_or_else(|| shape_err!("frames must be [N, 3, S, S]"))?;
    if c != 3 || h != w {
        return Err(shape_err!("frames must be square RGB, got {:?}", g.value(x).shape()));
    }
    let stride = 1usize << cfg.block_channels.len();
    if h % stride != 0 {
        return Err(shape_err!("input side {h} must be a multiple of {stride}"));
    }
    let mut ctx = Ctx { bound, bn };
    let mut hcur = x;
    let mut pieces = Vec::with_capacity(cfg.block_channels.len());
    for b in 0..cfg.block_channels.len() {
        let prefix = format!("cnn.block{b}");
        for l in 0..CONVS_PER_BLOCK {
            hcur = ctx.conv_elu_bn(g, hcur, &prefix, l)?;
        }
        hcur = g.max_pool2(hcur)?;
        let side = g.value(hcur).shape()[2];
        pieces.push(if side == cfg.concat_size {
            hcur
        } else {
            g.resize(hcur, cfg.concat_size, cfg.concat_size)?
        });
    }
    let cat = g.concat(&pieces, 1)?;
    match cfg.variant {
        Variant::Binary => {
            let pooled = g.global_avg_pool(cat)?;
            let logits = g.linear(pooled, bound.get("cnn.cls.weight")?, Some(bound.get("cnn.cls.bias")?))?;
            Ok(CnnOutput { depth: None, features: None, logits: Some(logits) })
        }
        Variant::DepthOnly => {
            let depth = ctx.head(g, cat, "cnn.depth", cfg.map_size)?;
            Ok(CnnOutput { depth: Some(depth), features: None, logits: None })
        }
        Variant::Full => {
            let depth = ctx.head(g, cat, "cnn.depth", cfg.map_size)?;
            let features = ctx.head(g, cat, "cnn.feat", cfg.map_size)?;
            Ok(CnnOutput { depth: Some(depth), features: Some(features), logits: None })
        }
    }
}

/// Registration of `N` feature maps.
///
/// `features` is an `[N, 1, M, M]` node, `depth` the matching depth values
/// (only compared against `threshold`, so no gradient flows through them).
/// Each output cell `(i, j)` with a frontal vertex `m_ij` samples the masked
/// feature map at that vertex's image position in the frame's posed shape,
/// scaled onto the `M x M` grid. Output is `[N, M * M]`.
#[allow(clippy::too_many_arguments)]
pub fn registration_layer<T: Scalar>(
    g: &mut Graph<T>,
    features: NodeId,
    depth: &Tensor<T>,
    shapes: &[&PosedShape<T>],
    map: &VertexIndexMap,
    threshold: T,
    width: usize,
    height: usize,
) -> Result<NodeId> {
    let fshape = g.value(features).shape().to_vec();
    let (n, c, m, m2) = dims4(&fshape).ok_or_else(|| shape_err!("feature map must be [N, 1, M, M]"))?;
    if c != 1 || m != m2 || depth.shape() != fshape.as_slice() || map.size() != m || shapes.len() != n {
        return Err(shape_err!(
            "registration inputs disagree: features {:?}, depth {:?}, map {}, {} shapes",
            fshape,
            depth.shape(),
            map.size(),
            shapes.len()
        ));
    }
    let mask = depth.map(|d| if d >= threshold { T::one() } else { T::zero() });
    let mask = g.constant(mask);
    let masked = g.mul(features, mask)?;
    let flat = g.reshape(masked, &[n, m * m])?;
    let mut index = Vec::with_capacity(n * m * m);
    for shape in shapes {
        for entry in map.entries() {
            index.push(entry.and_then(|v| {
                let p = shape.vertices.get(v)?;
                grid_cell(p[0], p[1], m, width, height).map(|(r, c)| r * m + c)
            }));
        }
    }
    g.gather(flat, index, m * m)
}

/// RNN over `steps` (each `[B, M * M]`), returning the `[B, spectrum_bins]`
/// spectrum estimate from the last hidden state.
pub fn rnn_forward<T: Scalar>(g: &mut Graph<T>, bound: &Bound, cfg: &NetConfig, steps: &[NodeId]) -> Result<NodeId> {
    let first = *steps.first().ok_or_else(|| Error::Contract("rnn_forward needs at least one step".into()))?;
    let batch = g.value(first).shape()[0];
    let weights = LstmWeights {
        w_ih: bound.get("rnn.lstm.w_ih")?,
        w_hh: bound.get("rnn.lstm.w_hh")?,
        bias: bound.get("rnn.lstm.bias")?,
    };
    let mut h = g.constant(Tensor::zeros(&[batch, cfg.lstm_hidden]));
    let mut c = g.constant(Tensor::zeros(&[batch, cfg.lstm_hidden]));
    for &x in steps {
        (h, c) = layers::lstm_step(g, x, h, c, &weights)?;
    }
    let fc = g.linear(h, bound.get("rnn.fc.weight")?, Some(bound.get("rnn.fc.bias")?))?;
    let mags = g.dft_magnitude(fc)?;
    g.narrow(mags, 1, 0, cfg.spectrum_bins)
}

fn flatten_rows<T: Scalar>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let n = shape[0];
    g.reshape(x, &[n, shape[1..].iter().product()])
}

/// Mean over the batch of each map's mean absolute error.
pub fn depth_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId, squared: bool) -> Result<NodeId> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(shape_err!("depth_loss: {:?} vs {:?}", g.value(pred).shape(), g.value(target).shape()));
    }
    let p = flatten_rows(g, pred)?;
    let t = flatten_rows(g, target)?;
    layers::l1_loss(g, p, t, squared)
}

/// Mean over the batch of each spectrum's mean absolute error.
pub fn rppg_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId, squared: bool) -> Result<NodeId> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(shape_err!("rppg_loss: {:?} vs {:?}", g.value(pred).shape(), g.value(target).shape()));
    }
    layers::l1_loss(g, pred, target, squared)
}

/// Liveness score `|f|^2 + lambda * |D|^2`; higher means more live.
pub fn score<T: Scalar>(depth: &[T], rppg: &[T], lambda: T) -> T {
    let sq = |v: &[T]| v.iter().map(|&x| x * x).sum::<T>();
    sq(rppg) + lambda * sq(depth)
}

/// Registered feature map of one frame; cells without a frontal vertex are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontalMap<T> {
    pub size: usize,
    pub values: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub score: T,
    /// Row-major `map_size x map_size` depth estimate of the last frame
    /// (zeros for the binary variant). Not clamped to `[0, 1]`.
    pub depth: Vec<T>,
    /// Spectrum estimate (zeros unless the full variant).
    pub rppg: Vec<T>,
    pub frontal: Vec<FrontalMap<T>>,
}

/// Stacks frames `range` of `frames` into an `[N, 3, H, W]` tensor.
pub fn frames_tensor<T: Scalar>(frames: &crate::clip::Frames, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
    let (h, w) = (frames.height(), frames.width());
    let n = range.len();
    let mut data = Vec::with_capacity(n * 3 * h * w);
    for t in range {
        data.extend(frames.frame_chw::<T>(t));
    }
    Tensor::new(&[n, 3, h, w], data)
}

/// Scores a clip from its last `n_frames` frames with running BN statistics.
///
/// `shapes` holds the posed shape of every frame of the clip.
pub fn infer_clip<T: Scalar>(
    frames: &crate::clip::Frames,
    shapes: &[PosedShape<T>],
    params: &ModelParams<T>,
    cfg: &NetConfig,
    map: &VertexIndexMap,
) -> Result<Inference<T>> {
    let len = frames.count();
    if len < cfg.n_frames {
        return Err(Error::Contract(format!("clip has {len} frames, need at least {}", cfg.n_frames)));
    }
    if shapes.len() != len {
        return Err(Error::Contract(format!("{} shapes for {len} frames", shapes.len())));
    }
    let start = len - cfg.n_frames;
    let mut g = Graph::new();
    let bound = Bound::frozen(&mut g, params);
    let x = g.constant(frames_tensor(frames, start..len)?);
    let out = cnn_forward(&mut g, &bound, cfg, x, BnMode::Eval(&params.bn_stats))?;
    let m = cfg.map_size;
    let last_depth = |g: &Graph<T>, d: NodeId| {
        let v = g.value(d).data();
        v[v.len() - m * m..].to_vec()
    };
    match cfg.variant {
        Variant::Binary => {
            let logits = out.logits.expect("binary variant has logits");
            let lv = g.value(logits).data();
            let p_live = lv
                .chunks(2)
                .map(|r| {
                    let mx = r[0].max(r[1]);
                    let (a, b) = ((r[0] - mx).exp(), (r[1] - mx).exp());
                    b / (a + b)
                })
                .sum::<T>()
                / from_usize(cfg.n_frames);
            Ok(Inference {
                score: p_live,
                depth: vec![T::zero(); m * m],
                rppg: vec![T::zero(); cfg.spectrum_bins],
                frontal: Vec::new(),
            })
        }
        Variant::DepthOnly => {
            let depth = last_depth(&g, out.depth.expect("depth head"));
            let s = score(&depth, &[], lit(cfg.lambda));
            Ok(Inference { score: s, depth, rppg: vec![T::zero(); cfg.spectrum_bins], frontal: Vec::new() })
        }
        Variant::Full => {
            let d = out.depth.expect("depth head");
            let feats = out.features.expect("feature head");
            let dv = g.value(d).clone();
            let seq: Vec<&PosedShape<T>> = shapes[start..].iter().collect();
            let f = registration_layer(&mut g, feats, &dv, &seq, map, lit(cfg.depth_threshold), frames.width(), frames.height())?;
            let steps = (0..cfg.n_frames).map(|t| g.narrow(f, 0, t, 1)).collect::<Result<Vec<_>>>()?;
            let rppg_node = rnn_forward(&mut g, &bound, cfg, &steps)?;
            let rppg = g.value(rppg_node).data().to_vec();
            let depth = last_depth(&g, d);
            let frontal = g
                .value(f)
                .data()
                .chunks(m * m)
                .map(|c| FrontalMap { size: m, values: c.to_vec() })
                .collect();
            let s = score(&depth, &rppg, lit(cfg.lambda));
            Ok(Inference { score: s, depth, rppg, frontal })
        }
    }
}

/// Folds recorded batch statistics into the running averages.
pub fn update_bn_stats<T: Scalar>(stats: &mut BTreeMap<String, BnStats<T>>, caches: &[(String, BnCache<T>)]) {
    for (name, cache) in caches {
        if let Some(s) = stats.get_mut(name) {
            let count = cache.xhat.len() / cache.mean.len().max(1);
            batch_norm::update_running(&mut s.mean, &mut s.var, cache, count);
        }
    }
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use auxspoof::clip::VideoClip;
use auxspoof::face::{normalize_depth, pose_transform, render_depth as rasterize_depth, synthesize_shape, FaceBasis, Pose, ShapeParams, VertexIndexMap};
use auxspoof::io::clipdir::{read_clip, read_dataset, read_meta, write_dataset};
use auxspoof::io::container::{write_atomic, Container};
use auxspoof::io::image::{normalize_range, write_pgm};
use auxspoof::metrics::{
    attribute_failures, eer_threshold, estimation_mse, frontal_map_stats, rates_at_threshold, roc, tdr_at_fdr,
    ClipEstimate, MapStats, ScoredEntry, ScoredSet,
};
use auxspoof::net::{infer_clip, Inference, Variant};
use auxspoof::rppg::{bin_frequency, extract_detailed};
use auxspoof::synthgen::{default_basis, generate, DatasetSpec};
use auxspoof::trainer::{train as run_training, Checkpoint, TrainData, TrainEvent};
use auxspoof::tensor::Tensor;
use auxspoof::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{echo, RunConfig};
use crate::error::CliError;
use crate::{Analyze, Common, Eval, ExtractRppg, GenData, RenderDepth, Score, Train};

const TDR_FDR_TARGETS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

fn load_basis(path: Option<&Path>) -> Result<FaceBasis<f64>, CliError> {
    Ok(match path {
        Some(p) => FaceBasis::from_container(&Container::load(p)?)?,
        None => default_basis(),
    })
}

fn run_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    RunConfig::load(c.config.as_deref(), &overrides)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn dir_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn gen_data(a: &GenData) -> Result<(), CliError> {
    let spec = DatasetSpec {
        subjects: a.subjects,
        first_subject: a.first_subject,
        live_per_subject: a.clips,
        print_per_subject: a.clips,
        replay_per_subject: a.clips,
        frames: a.frames,
        fps: a.fps,
        size: a.size,
        seed: a.seed,
    };
    if spec.total_clips() == 0 {
        return Err(CliError::Usage("--subjects and --clips must be positive".into()));
    }
    spec.clip_shape().validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let clips = generate(&default_basis(), &spec)?;
    let manifest = write_dataset(&a.out, &clips)?;
    echo(&a.out, &spec)?;
    let live = clips.iter().filter(|c| c.label.is_live()).count();
    println!("wrote {} clips ({live} live, {} spoof) to {}", manifest.clips.len(), clips.len() - live, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RenderEcho<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<&'a Path>,
    frame: usize,
    alpha_id: Vec<f64>,
    alpha_exp: Vec<f64>,
    pose: Pose<f64>,
    image_width: usize,
    image_height: usize,
    map_size: usize,
}

fn padded(values: &[f64], n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    if values.len() > n {
        return Err(CliError::Usage(format!("{} {what} coefficients given, basis has {n}", values.len())));
    }
    let mut v = values.to_vec();
    v.resize(n, 0.0);
    Ok(v)
}

/// Pose rotating the mean shape about its centre, which sits at the image centre.
fn centred_pose(basis: &FaceBasis<f64>, size: usize, yaw: f64, pitch: f64, roll: f64) -> Pose<f64> {
    let canonical = basis.canonical_pose(size, size);
    let mean = basis.mean_shape();
    let mut c = [0.0; 3];
    for a in 0..2 {
        let lo = mean.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min);
        let hi = mean.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max);
        c[a] = (lo + hi) / 2.0;
    }
    let r = Pose::rotation_from_euler(yaw.to_radians(), pitch.to_radians(), roll.to_radians());
    let s = canonical.scale;
    let half = size as f64 / 2.0;
    let rc: Vec<f64> = (0..3).map(|i| (0..3).map(|j| r[i][j] * c[j]).sum()).collect();
    Pose { scale: s, rotation: r, translation: [half - s * rc[0], half - s * rc[1], -s * rc[2]] }
}

pub fn render_depth(a: &RenderDepth) -> Result<(), CliError> {
    let basis = load_basis(a.basis.as_deref())?;
    let (params, pose, w, h) = match &a.clip {
        Some(dir) => {
            let meta = read_meta(dir)?;
            let g = meta.geometry.get(a.frame).ok_or_else(|| {
                CliError::Usage(format!("frame {} out of range for a {}-frame clip", a.frame, meta.frames))
            })?;
            (g.params.clone(), g.pose.clone(), meta.width, meta.height)
        }
        None => {
            let params = ShapeParams {
                alpha_id: padded(&a.alpha_id, basis.id_count(), "identity")?,
                alpha_exp: padded(&a.alpha_exp, basis.exp_count(), "expression")?,
            };
            let pose = centred_pose(&basis, a.image_size, a.yaw, a.pitch, a.roll);
            (params, pose, a.image_size, a.image_size)
        }
    };
    if a.map_size == 0 {
        return Err(CliError::Usage("--map-size must be positive".into()));
    }
    let posed = normalize_depth(&pose_transform(&synthesize_shape(&basis, &params)?, &pose)?)?;
    let depth = rasterize_depth(&posed, a.map_size, w, h);
    fs::create_dir_all(&a.out)?;
    write_pgm(&a.out.join("depth.pgm"), a.map_size, a.map_size, depth.values())?;
    let mut c = Container::new();
    c.insert_tensor("depth", &depth.to_tensor())?;
    c.save(&a.out.join("depth.axsp"))?;
    let covered = depth.values().iter().filter(|&&v| v > 0.0).count();
    echo(
        &a.out,
        &RenderEcho {
            clip: a.clip.as_deref(),
            frame: a.frame,
            alpha_id: params.alpha_id,
            alpha_exp: params.alpha_exp,
            pose,
            image_width: w,
            image_height: h,
            map_size: a.map_size,
        },
    )?;
    println!("depth map {0}x{0}: {covered} face cells, max {1:.4}", a.map_size, depth.max());
    Ok(())
}

#[derive(Serialize)]
struct ExtractEcho<'a> {
    clip: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    basis: Option<&'a Path>,
}

pub fn extract_rppg(a: &ExtractRppg) -> Result<(), CliError> {
    let basis = load_basis(a.basis.as_deref())?;
    let clip = read_clip(&a.clip)?;
    let shapes = clip.posed_shapes(&basis)?;
    let ex = extract_detailed(&clip.frames, &shapes, basis.forehead(), clip.fps)?;
    let peak = ex.spectrum.peak_bin();
    let peak_hz = bin_frequency(peak, clip.len(), clip.fps);
    let summary = json!({
        "clip": dir_id(&a.clip),
        "label": clip.label,
        "peak_bin": peak,
        "peak_hz": peak_hz,
        "peak_bpm": peak_hz * 60.0,
        "heart_rate_hz": clip.heart_rate_hz,
        "raw_energy": ex.raw_energy(),
        "chrom_gamma": ex.chrom.gamma,
        "spectrum": ex.spectrum.values(),
    });
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("rppg.json"), &summary)?;
        let mut c = Container::new();
        c.insert_tensor("rppg", &Tensor::new(&[ex.spectrum.values().len()], ex.spectrum.values().to_vec())?)?;
        c.save(&out.join("rppg.axsp"))?;
        echo(out, &ExtractEcho { clip: &a.clip, basis: a.basis.as_deref() })?;
    }
    match clip.heart_rate_hz {
        Some(hr) => println!("peak bin {peak} at {peak_hz:.3} Hz ({:.1} bpm); true rate {hr:.3} Hz", peak_hz * 60.0),
        None => println!("peak bin {peak} at {peak_hz:.3} Hz ({:.1} bpm)", peak_hz * 60.0),
    }
    Ok(())
}

fn data_path(flag: &Option<PathBuf>, cfg: &mut Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        *cfg = Some(p.clone());
    }
    cfg.clone().ok_or_else(|| CliError::Usage(format!("no {what} dataset: pass --data or set data.{what}")))
}

pub fn train(a: &Train) -> Result<(), CliError> {
    let mut cfg = run_config(&a.common)?;
    let data_dir = data_path(&a.data, &mut cfg.data.train, "train")?;
    let basis = load_basis(cfg.data.basis.as_deref())?;
    let (_, clips) = read_dataset(&data_dir)?;
    let resume = a.resume.as_deref().map(Checkpoint::<f64>::load).transpose()?;
    let out = &a.common.out;
    echo(out, &cfg)?;

    let map = VertexIndexMap::from_basis(&basis, cfg.net.map_size);
    let data = TrainData { clips: &clips, basis: &basis, map: &map };
    let mut log = BufWriter::new(File::create(out.join("train.log"))?);
    let final_ck = run_training(&data, &cfg.net, &cfg.train, resume, |event| {
        match event {
            TrainEvent::Step(rec) => {
                serde_json::to_writer(&mut log, rec)?;
                writeln!(log)?;
            }
            TrainEvent::Epoch(ck) => {
                let path = out.join(format!("checkpoint_{:03}.axsp", ck.epoch));
                ck.save(&path)?;
                serde_json::to_writer(&mut log, &json!({ "epoch_done": ck.epoch, "checkpoint": dir_id(&path) }))?;
                writeln!(log)?;
                log.flush()?;
                log::info!("epoch {} saved to {}", ck.epoch, path.display());
            }
        }
        Ok::<(), Error>(())
    })?;
    log.flush()?;
    final_ck.save(&out.join("model.axsp"))?;
    println!("trained {} epochs; model written to {}", final_ck.epoch, out.join("model.axsp").display());
    Ok(())
}

struct Evaluated {
    id: String,
    clip: VideoClip,
    inference: Inference<f64>,
}

fn evaluate(ck: &Checkpoint<f64>, data: &Path, basis: &FaceBasis<f64>) -> Result<Vec<Evaluated>, CliError> {
    let (dirs, clips) = read_dataset(data)?;
    let map = VertexIndexMap::from_basis(basis, ck.net.map_size);
    let mut out = Vec::with_capacity(clips.len());
    for (dir, clip) in dirs.iter().zip(clips) {
        let shapes = clip.posed_shapes(basis)?;
        let inference = infer_clip(&clip.frames, &shapes, &ck.params, &ck.net, &map)?;
        out.push(Evaluated { id: dir_id(dir), clip, inference });
    }
    Ok(out)
}

fn scored_set(results: &[Evaluated]) -> ScoredSet {
    ScoredSet::new(
        results
            .iter()
            .map(|r| ScoredEntry { id: r.id.clone(), live: r.clip.label.is_live(), score: r.inference.score })
            .collect(),
    )
}

fn roc_csv(set: &ScoredSet) -> Result<String, CliError> {
    let mut s = String::from("threshold,fdr,tdr\n");
    for p in roc(set)? {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.fdr, p.tdr));
    }
    Ok(s)
}

pub fn eval(a: &Eval) -> Result<(), CliError> {
    let mut cfg = run_config(&a.common)?;
    let set = match (&a.scores, &a.model) {
        (Some(path), _) => ScoredSet::from_csv(&fs::read_to_string(path)?)?,
        (None, Some(model)) => {
            let ck = Checkpoint::<f64>::load(model)?;
            let data = data_path(&a.data, &mut cfg.data.eval, "eval")?;
            cfg.net = ck.net.clone();
            scored_set(&evaluate(&ck, &data, &load_basis(cfg.data.basis.as_deref())?)?)
        }
        (None, None) => return Err(CliError::Usage("eval needs --scores or --model with --data".into())),
    };
    let threshold = match a.threshold {
        Some(t) => t,
        None => eer_threshold(&set)?,
    };
    let report = rates_at_threshold(&set, threshold)?;
    let (live, spoof) = set.counts();
    let tdr = TDR_FDR_TARGETS
        .iter()
        .map(|&f| Ok(json!({ "fdr": f, "tdr": tdr_at_fdr(&set, f)? })))
        .collect::<Result<Vec<_>, Error>>()?;
    let doc = json!({
        "live_clips": live,
        "spoof_clips": spoof,
        "threshold_source": if a.threshold.is_some() { "given" } else { "equal-error" },
        "report": report,
        "tdr_at_fdr": tdr,
    });
    let out = &a.common.out;
    echo(out, &cfg)?;
    write_json(&out.join("report.json"), &doc)?;
    write_atomic(&out.join("roc.csv"), roc_csv(&set)?.as_bytes())?;
    write_atomic(&out.join("scores.csv"), set.to_csv().as_bytes())?;
    println!(
        "APCER {:.2}%  BPCER {:.2}%  ACER {:.2}%  HTER {:.2}%  (threshold {:.6}, {live} live / {spoof} spoof)",
        report.apcer, report.bpcer, report.acer, report.hter, report.threshold
    );
    Ok(())
}

pub fn score(a: &Score) -> Result<(), CliError> {
    let ck = Checkpoint::<f64>::load(&a.model)?;
    let basis = load_basis(a.basis.as_deref())?;
    let clip = read_clip(&a.clip)?;
    let map = VertexIndexMap::from_basis(&basis, ck.net.map_size);
    let inf = infer_clip(&clip.frames, &clip.posed_shapes(&basis)?, &ck.params, &ck.net, &map)?;
    println!("{}", inf.score);
    Ok(())
}

fn stats_images(out: &Path, prefix: &str, size: usize, live: &MapStats, spoof: &MapStats, c: &mut Container) -> Result<(), CliError> {
    for (class, s) in [("live", live), ("spoof", spoof)] {
        for (kind, v) in [("mean", &s.mean), ("std", &s.std)] {
            let name = format!("{prefix}_{class}_{kind}");
            write_pgm(&out.join(format!("{name}.pgm")), size, size, &normalize_range(v))?;
            c.insert_tensor(name, &Tensor::new(&[size, size], v.clone())?)?;
        }
    }
    Ok(())
}

pub fn analyze(a: &Analyze) -> Result<(), CliError> {
    let mut cfg = run_config(&a.common)?;
    let ck = Checkpoint::<f64>::load(&a.model)?;
    cfg.net = ck.net.clone();
    let data = data_path(&a.data, &mut cfg.data.eval, "eval")?;
    let results = evaluate(&ck, &data, &load_basis(cfg.data.basis.as_deref())?)?;
    let out = &a.common.out;
    echo(out, &cfg)?;

    let labels: Vec<bool> = results.iter().map(|r| r.clip.label.is_live()).collect();
    let m = ck.net.map_size;
    let mut tensors = Container::new();

    let depth_pred: Vec<Vec<f64>> = results.iter().map(|r| r.inference.depth.clone()).collect();
    let depth_gt: Vec<Vec<f64>> = results
        .iter()
        .map(|r| r.clip.gt_depth.last().map(|d| d.values().to_vec()).unwrap_or_default())
        .collect();
    let rppg_pred: Vec<Vec<f64>> = results.iter().map(|r| r.inference.rppg.clone()).collect();
    let rppg_gt: Vec<Vec<f64>> = results.iter().map(|r| r.clip.gt_rppg.values().to_vec()).collect();
    let depth_mse = estimation_mse(&depth_pred, &depth_gt, &labels)?;
    let rppg_mse = estimation_mse(&rppg_pred, &rppg_gt, &labels)?;

    let (dl, ds) = frontal_map_stats(&depth_pred, &labels)?;
    stats_images(out, "depth", m, &dl, &ds, &mut tensors)?;
    if ck.net.variant == Variant::Full {
        let frontal: Vec<Vec<f64>> = results
            .iter()
            .map(|r| r.inference.frontal.last().map(|f| f.values.clone()).unwrap_or_default())
            .collect();
        let (fl, fs_) = frontal_map_stats(&frontal, &labels)?;
        stats_images(out, "frontal", m, &fl, &fs_, &mut tensors)?;
    }
    tensors.save(&out.join("maps.axsp"))?;

    let set = scored_set(&results);
    let threshold = match a.threshold {
        Some(t) => t,
        None => eer_threshold(&set)?,
    };
    let report = rates_at_threshold(&set, threshold)?;
    let failures = if ck.net.variant == Variant::Binary {
        None
    } else {
        let estimates: Vec<ClipEstimate> = results
            .iter()
            .map(|r| ClipEstimate {
                id: r.id.clone(),
                live: r.clip.label.is_live(),
                depth_score: ck.net.lambda * r.inference.depth.iter().map(|v| v * v).sum::<f64>(),
                rppg_score: r.inference.rppg.iter().map(|v| v * v).sum(),
            })
            .collect();
        Some(attribute_failures(&estimates, threshold)?)
    };
    let doc = json!({
        "variant": ck.net.variant,
        "report": report,
        "mse": { "depth": depth_mse, "rppg": rppg_mse },
        "failures": failures,
    });
    write_json(&out.join("analysis.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

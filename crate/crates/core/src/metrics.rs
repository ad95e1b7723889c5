//! Presentation attack detection metrics.
//!
//! Scores are "higher is more live": a clip is accepted as live when its
//! score is at least the threshold. Rates are reported as percentages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub id: String,
    pub live: bool,
    pub score: f64,
}

/// Per-clip scores with their true class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Self {
        Self { entries }
    }

    pub fn from_scores(live: &[f64], spoof: &[f64]) -> Self {
        let mk = |p: &str, l: bool, v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(i, &score)| ScoredEntry { id: format!("{p}{i}"), live: l, score })
                .collect::<Vec<_>>()
        };
        let mut entries = mk("live", true, live);
        entries.extend(mk("spoof", false, spoof));
        Self { entries }
    }

    pub fn counts(&self) -> (usize, usize) {
        let live = self.entries.iter().filter(|e| e.live).count();
        (live, self.entries.len() - live)
    }

    fn check(&self) -> Result<(usize, usize)> {
        let (l, s) = self.counts();
        if l == 0 || s == 0 {
            return Err(Error::Metrics(format!("need both classes, got {l} live and {s} spoof")));
        }
        if self.entries.iter().any(|e| e.score.is_nan()) {
            return Err(Error::Metrics("scores must not be NaN".into()));
        }
        Ok((l, s))
    }

    /// Parses `id,label,score` lines; `label` is `live` or any spoof name.
    /// A header line starting with `id` is skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("id")) {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, label, score] = parts[..] else {
                return Err(Error::Format(format!("line {}: expected id,label,score", n + 1)));
            };
            let score: f64 = score
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad score '{score}'", n + 1)))?;
            let live = match label {
                "live" | "1" => true,
                "spoof" | "print-spoof" | "replay-spoof" | "0" => false,
                other => return Err(Error::Format(format!("line {}: unknown label '{other}'", n + 1))),
            };
            entries.push(ScoredEntry { id: id.to_string(), live, score });
        }
        Ok(Self { entries })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,label,score\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.id, if e.live { "live" } else { "spoof" }, e.score));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub hter: f64,
    pub threshold: f64,
}

fn pct(n: usize, d: usize) -> f64 {
    100.0 * n as f64 / d as f64
}

/// Error rates when clips scoring at least `threshold` are accepted as live.
pub fn rates_at_threshold(set: &ScoredSet, threshold: f64) -> Result<ErrorReport> {
    if !threshold.is_finite() {
        return Err(Error::Metrics("threshold must be finite".into()));
    }
    let (nl, ns) = set.check()?;
    let accepted_spoof = set.entries.iter().filter(|e| !e.live && e.score >= threshold).count();
    let rejected_live = set.entries.iter().filter(|e| e.live && e.score < threshold).count();
    let apcer = pct(accepted_spoof, ns);
    let bpcer = pct(rejected_live, nl);
    Ok(ErrorReport { apcer, bpcer, acer: (apcer + bpcer) / 2.0, hter: (bpcer + apcer) / 2.0, threshold })
}

fn distinct_scores(set: &ScoredSet) -> Vec<f64> {
    let mut s: Vec<f64> = set.entries.iter().map(|e| e.score).filter(|v| v.is_finite()).collect();
    s.sort_by(|a, b| a.total_cmp(b));
    s.dedup();
    s
}

/// Threshold where APCER and BPCER are closest (ties broken by lower ACER,
/// then by the lower threshold). Candidates are the observed scores and a
/// value just above the maximum.
pub fn eer_threshold(set: &ScoredSet) -> Result<f64> {
    set.check()?;
    let mut cands = distinct_scores(set);
    let top = cands.last().copied().unwrap_or(0.0);
    cands.push(top + top.abs().max(1.0) * 1e-9);
    let mut best: Option<(f64, f64, f64)> = None;
    for &t in &cands {
        let r = rates_at_threshold(set, t)?;
        let key = ((r.apcer - r.bpcer).abs(), r.acer, t);
        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    best.map(|b| b.2).ok_or_else(|| Error::Metrics("no finite scores".into()))
}

/// Report at the equal-error threshold of `set` itself.
pub fn report_at_eer(set: &ScoredSet) -> Result<ErrorReport> {
    rates_at_threshold(set, eer_threshold(set)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Fraction of spoof clips accepted.
    pub fdr: f64,
    /// Fraction of live clips accepted.
    pub tdr: f64,
    /// Accept when `score >= threshold`; `+inf` accepts nothing.
    pub threshold: f64,
}

/// ROC staircase from the accept-nothing point through every distinct score
/// in decreasing order, ending at `(1, 1)`.
pub fn roc(set: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (nl, ns) = set.check()?;
    let mut sorted: Vec<&ScoredEntry> = set.entries.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = vec![RocPoint { fdr: 0.0, tdr: 0.0, threshold: f64::INFINITY }];
    let (mut tl, mut ts) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].live {
                tl += 1;
            } else {
                ts += 1;
            }
            i += 1;
        }
        out.push(RocPoint { fdr: ts as f64 / ns as f64, tdr: tl as f64 / nl as f64, threshold: t });
    }
    Ok(out)
}

/// Largest TDR over thresholds whose FDR does not exceed `fdr_target`.
pub fn tdr_at_fdr(set: &ScoredSet, fdr_target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fdr_target) {
        return Err(Error::Metrics(format!("FDR target {fdr_target} outside [0, 1]")));
    }
    Ok(roc(set)?
        .iter()
        .filter(|p| p.fdr <= fdr_target + 1e-12)
        .map(|p| p.tdr)
        .fold(0.0, f64::max))
}

/// Per-pixel mean and population standard deviation of a set of maps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn map_stats(maps: &[&[f64]]) -> Result<MapStats> {
    let first = maps.first().ok_or_else(|| Error::Metrics("empty class".into()))?;
    let n = first.len();
    if maps.iter().any(|m| m.len() != n) {
        return Err(Error::Metrics("maps differ in size".into()));
    }
    let k = maps.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| maps.iter().map(|m| m[i]).sum::<f64>() / k).collect();
    let std = (0..n)
        .map(|i| (maps.iter().map(|m| (m[i] - mean[i]).powi(2)).sum::<f64>() / k).sqrt())
        .collect();
    Ok(MapStats { count: maps.len(), mean, std })
}

/// Mean and std maps for the live and the spoof class.
pub fn frontal_map_stats(maps: &[Vec<f64>], live: &[bool]) -> Result<(MapStats, MapStats)> {
    if maps.len() != live.len() {
        return Err(Error::Metrics("one label per map required".into()));
    }
    let pick = |want: bool| -> Vec<&[f64]> {
        maps.iter().zip(live).filter(|(_, &l)| l == want).map(|(m, _)| m.as_slice()).collect()
    };
    Ok((map_stats(&pick(true))?, map_stats(&pick(false))?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMse {
    pub live: Option<f64>,
    pub spoof: Option<f64>,
}

/// Mean squared error per element, separately for each class.
pub fn estimation_mse(pred: &[Vec<f64>], truth: &[Vec<f64>], live: &[bool]) -> Result<ClassMse> {
    if pred.len() != truth.len() || pred.len() != live.len() {
        return Err(Error::Metrics("predictions, ground truth and labels must align".into()));
    }
    let mut acc = [(0.0, 0usize); 2];
    for ((p, t), &l) in pred.iter().zip(truth).zip(live) {
        if p.len() != t.len() {
            return Err(Error::Shape(format!("prediction length {} vs truth {}", p.len(), t.len())));
        }
        let slot = &mut acc[usize::from(l)];
        slot.0 += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        slot.1 += p.len();
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(ClassMse { live: mean(acc[1]), spoof: mean(acc[0]) })
}

/// Sub-scores of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEstimate {
    pub id: String,
    pub live: bool,
    /// `lambda * |D|^2`
    pub depth_score: f64,
    /// `|f|^2`
    pub rppg_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FailureCounts {
    /// Clips misclassified by the fused score.
    pub failed: usize,
    /// Failed clips the depth sub-score alone also gets wrong.
    pub depth_fail: usize,
    /// Failed clips the rPPG sub-score alone also gets wrong.
    pub rppg_fail: usize,
    /// Failed clips both sub-scores get wrong.
    pub both: usize,
    /// Failed clips both sub-scores get right on their own.
    pub both_pass: usize,
    pub depth_threshold: f64,
    pub rppg_threshold: f64,
}

impl FailureCounts {
    /// Failed clips blamed on at least one sub-score.
    pub fn attributed(&self) -> usize {
        self.depth_fail + self.rppg_fail - self.both
    }
}

/// Attributes fused-score failures at `threshold` to the depth and rPPG
/// sub-scores, each thresholded at its own equal-error point.
pub fn attribute_failures(clips: &[ClipEstimate], threshold: f64) -> Result<FailureCounts> {
    let set = |f: &dyn Fn(&ClipEstimate) -> f64| {
        ScoredSet::new(clips.iter().map(|c| ScoredEntry { id: c.id.clone(), live: c.live, score: f(c) }).collect())
    };
    let td = eer_threshold(&set(&|c| c.depth_score))?;
    let tr = eer_threshold(&set(&|c| c.rppg_score))?;
    let mut out = FailureCounts { depth_threshold: td, rppg_threshold: tr, ..FailureCounts::default() };
    for c in clips {
        if (c.depth_score + c.rppg_score >= threshold) == c.live {
            continue;
        }
        out.failed += 1;
        let dw = (c.depth_score >= td) != c.live;
        let rw = (c.rppg_score >= tr) != c.live;
        out.depth_fail += usize::from(dw);
        out.rppg_fail += usize::from(rw);
        out.both += usize::from(dw && rw);
        out.both_pass += usize::from(!dw && !rw);
    }
    Ok(out)
}

mod common;

use auxspoof::face::{pose_transform, render_depth, synthesize_shape, FrontalShape, Pose, PosedShape, ShapeParams};
use auxspoof::io::container::{Container, Entry, EntryData};
use auxspoof::metrics::*;
use auxspoof::net::{depth_loss, infer_clip, score};
use auxspoof::ops::dft;
use auxspoof::rppg::spectrum;
use auxspoof::synthgen::default_basis;
use auxspoof::tensor::Tensor;
use auxspoof::Graph;
use proptest::prelude::*;

fn brute_dft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let a = -std::f64::consts::TAU * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn scored_set() -> impl Strategy<Value = ScoredSet> {
    (prop::collection::vec(-50i32..50, 1..40), prop::collection::vec(-50i32..50, 1..40)).prop_map(|(l, s)| {
        let to = |v: Vec<i32>| v.into_iter().map(|x| x as f64 / 10.0).collect::<Vec<_>>();
        ScoredSet::from_scores(&to(l), &to(s))
    })
}

/// Every (FDR, TDR) pair reachable by an accept-if-at-least threshold.
fn brute_roc(set: &ScoredSet) -> Vec<(f64, f64)> {
    let (nl, ns) = set.counts();
    let mut ts: Vec<f64> = set.entries.iter().map(|e| e.score).collect();
    ts.push(f64::INFINITY);
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    ts.iter()
        .map(|&t| {
            let fa = set.entries.iter().filter(|e| !e.live && e.score >= t).count();
            let ta = set.entries.iter().filter(|e| e.live && e.score >= t).count();
            (fa as f64 / ns as f64, ta as f64 / nl as f64)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn dft_matches_brute_force(half in 1usize..=32, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let x = common::randn(&mut r, &[2 * half], 1.0);
        let (mags, _) = dft::forward(&x).unwrap();
        for (a, b) in mags.data().iter().zip(brute_dft(x.data())) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_input_conv_gives_bias_and_pool_gives_zero(c_in in 1usize..4, c_out in 1usize..4, side in 1usize..5, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, c_in, 2 * side, 2 * side]));
        let w = g.constant(common::randn(&mut r, &[c_out, c_in, 3, 3], 1.0));
        let bias = common::randn(&mut r, &[c_out], 1.0);
        let b = g.constant(bias.clone());
        let y = g.conv2d(x, w, b).unwrap();
        for (i, v) in g.value(y).data().iter().enumerate() {
            prop_assert_eq!(*v, bias.data()[(i / (4 * side * side)) % c_out]);
        }
        let p = g.max_pool2(x).unwrap();
        prop_assert!(g.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rendered_depth_stays_in_range(n in 1usize..200, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let pts = common::uniform(&mut r, &[n, 3], -8.0, 72.0);
        let z = common::uniform(&mut r, &[n], -0.5, 1.5);
        let vertices: Vec<[f64; 3]> = (0..n).map(|i| [pts.data()[3 * i], pts.data()[3 * i + 1], z.data()[i]]).collect();
        let map = render_depth(&PosedShape { vertices: vertices.clone() }, 32, 64, 64);
        let mut covered = vec![false; 32 * 32];
        for v in &vertices {
            if (0.0..64.0).contains(&v[0]) && (0.0..64.0).contains(&v[1]) {
                covered[(v[1] / 2.0).floor() as usize * 32 + (v[0] / 2.0).floor() as usize] = true;
            }
        }
        for (i, &d) in map.values().iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&d));
            if !covered[i] {
                prop_assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn one_cell_translation_shifts_the_map(n in 1usize..200, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let pts = common::uniform(&mut r, &[n, 3], 0.0, 1.0);
        let vertices: Vec<[f64; 3]> = pts.data().chunks(3).map(|p| [p[0] * 60.0, p[1] * 64.0, p[2]]).collect();
        let shifted: Vec<[f64; 3]> = vertices.iter().map(|v| [v[0] + 2.0, v[1], v[2]]).collect();
        let a = render_depth(&PosedShape { vertices }, 32, 64, 64);
        let b = render_depth(&PosedShape { vertices: shifted }, 32, 64, 64);
        for row in 0..32 {
            for col in 1..32 {
                prop_assert_eq!(b.get(row, col), a.get(row, col - 1));
            }
            prop_assert_eq!(b.get(row, 0), 0.0);
        }
    }

    #[test]
    fn synthesis_is_linear(a in -3.0f64..3.0, seed in any::<u64>()) {
        let basis = default_basis();
        let mut r = common::rng(seed);
        let alpha = ShapeParams {
            alpha_id: common::randn(&mut r, &[basis.id_count()], 1.0).into_data(),
            alpha_exp: common::randn(&mut r, &[basis.exp_count()], 1.0).into_data(),
        };
        let scaled = ShapeParams {
            alpha_id: alpha.alpha_id.iter().map(|v| a * v).collect(),
            alpha_exp: alpha.alpha_exp.iter().map(|v| a * v).collect(),
        };
        let s0 = basis.mean_shape();
        let f = synthesize_shape(&basis, &alpha).unwrap();
        let fa = synthesize_shape(&basis, &scaled).unwrap();
        for ((x, y), m) in fa.vertices.iter().zip(&f.vertices).zip(s0) {
            for k in 0..3 {
                prop_assert!(((x[k] - m[k]) - a * (y[k] - m[k])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pose_preserves_scaled_distances(yaw in -3.0f64..3.0, pitch in -1.5f64..1.5, roll in -3.0f64..3.0, s in 0.1f64..10.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let pts = common::randn(&mut r, &[20, 3], 5.0);
        let frontal = FrontalShape { vertices: pts.data().chunks(3).map(|p| [p[0], p[1], p[2]]).collect() };
        let pose = Pose::new(s, Pose::rotation_from_euler(yaw, pitch, roll), [1.0, -2.0, 3.0]).unwrap();
        let posed = pose_transform(&frontal, &pose).unwrap();
        let dist = |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        for i in 0..20 {
            for j in 0..i {
                let d0 = dist(&frontal.vertices[i], &frontal.vertices[j]);
                let d1 = dist(&posed.vertices[i], &posed.vertices[j]);
                prop_assert!((d1 - s * d0).abs() <= 1e-9 * (1.0 + s * d0));
            }
        }
    }

    #[test]
    fn spectrum_norm_is_zero_or_one(len in 50usize..200, zero in any::<bool>(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let p = if zero { vec![0.0; len] } else { common::randn(&mut r, &[len], 1.0).into_data() };
        let s = spectrum(&p).unwrap();
        let n = s.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        prop_assert_eq!(n == 0.0, zero);
    }

    #[test]
    fn depth_loss_is_nonnegative_and_zero_on_equality(n in 1usize..64, squared in any::<bool>(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = common::randn(&mut r, &[n], 1.0);
        let b = common::randn(&mut r, &[n], 1.0);
        let mut g = Graph::new();
        let (pa, pb) = (g.constant(a.clone()), g.constant(b));
        let l = depth_loss(&mut g, pa, pb, squared).unwrap();
        prop_assert!(g.value(l).item() > 0.0);
        let pa2 = g.constant(a);
        let same = depth_loss(&mut g, pa, pa2, squared).unwrap();
        prop_assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn score_is_monotone(k in 1.0f64..5.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d = common::randn(&mut r, &[16], 1.0).into_data();
        let f = common::randn(&mut r, &[8], 1.0).into_data();
        let grow = |v: &[f64]| v.iter().map(|x| k * x).collect::<Vec<_>>();
        let base = score(&d, &f, 0.015);
        prop_assert!(score(&grow(&d), &f, 0.015) >= base);
        prop_assert!(score(&d, &grow(&f), 0.015) >= base);
    }

    #[test]
    fn lambda_rescaling_keeps_depth_only_ranking(l1 in 0.001f64..10.0, l2 in 0.001f64..10.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let maps: Vec<Vec<f64>> = (0..10).map(|_| common::randn(&mut r, &[9], 1.0).into_data()).collect();
        let order = |lambda: f64| {
            let s: Vec<f64> = maps.iter().map(|d| score(d, &[], lambda)).collect();
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
            idx
        };
        prop_assert_eq!(order(l1), order(l2));
    }

    #[test]
    fn acer_is_the_mean_of_the_two_rates(set in scored_set(), t in -6.0f64..6.0) {
        let r = rates_at_threshold(&set, t).unwrap();
        prop_assert_eq!(r.acer, (r.apcer + r.bpcer) / 2.0);
        prop_assert_eq!(r.hter, r.acer);
    }

    #[test]
    fn tdr_is_nondecreasing_in_the_fdr_target(set in scored_set(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(tdr_at_fdr(&set, lo).unwrap() <= tdr_at_fdr(&set, hi).unwrap());
    }

    #[test]
    fn roc_matches_a_threshold_sweep(set in scored_set(), target in 0.0f64..1.0) {
        let got: Vec<(f64, f64)> = roc(&set).unwrap().iter().map(|p| (p.fdr, p.tdr)).collect();
        let want = brute_roc(&set);
        prop_assert_eq!(&got, &want);
        let best = want.iter().filter(|p| p.0 <= target).map(|p| p.1).fold(0.0, f64::max);
        prop_assert_eq!(tdr_at_fdr(&set, target).unwrap(), best);
    }

    #[test]
    fn rates_ignore_entry_order(set in scored_set(), t in -6.0f64..6.0, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = set.clone();
        shuffled.entries.shuffle(&mut common::rng(seed));
        prop_assert_eq!(rates_at_threshold(&set, t).unwrap(), rates_at_threshold(&shuffled, t).unwrap());
        prop_assert_eq!(report_at_eer(&set).unwrap(), report_at_eer(&shuffled).unwrap());
    }

    #[test]
    fn monotone_score_transforms_keep_the_rates(set in scored_set()) {
        let mut warped = set.clone();
        for e in &mut warped.entries {
            e.score = e.score.exp();
        }
        let a = report_at_eer(&set).unwrap();
        let b = report_at_eer(&warped).unwrap();
        prop_assert_eq!((a.apcer, a.bpcer), (b.apcer, b.bpcer));
        let pa: Vec<(f64, f64)> = roc(&set).unwrap().iter().map(|p| (p.fdr, p.tdr)).collect();
        let pb: Vec<(f64, f64)> = roc(&warped).unwrap().iter().map(|p| (p.fdr, p.tdr)).collect();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn container_round_trip(n in 0usize..6, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut c = Container::new();
        for i in 0..n {
            let t = common::randn(&mut r, &[i + 1, 3], 1.0);
            c.insert_tensor(format!("f64.{i}"), &t).unwrap();
            c.insert_tensor(format!("f32.{i}"), &t.cast::<f32>()).unwrap();
            c.insert(format!("i64.{i}"), Entry { dims: vec![2], data: EntryData::I64(vec![i as i64, -7]) }).unwrap();
        }
        c.insert_text("note", "round trip").unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes(), c.to_bytes());
    }
}

#[test]
fn forward_pass_is_deterministic() {
    let basis = default_basis();
    let f = common::model_fixture(2);
    let cfg = f.cfg.clone();
    let spec = auxspoof::synthgen::DatasetSpec {
        subjects: 1,
        live_per_subject: 1,
        print_per_subject: 0,
        replay_per_subject: 0,
        frames: 50,
        size: 16,
        ..Default::default()
    };
    let clip = &auxspoof::synthgen::generate(&basis, &spec).unwrap()[0];
    let shapes = clip.posed_shapes(&basis).unwrap();
    let a = infer_clip(&clip.frames, &shapes, &f.params, &cfg, &f.map).unwrap();
    let b = infer_clip(&clip.frames, &shapes, &f.params, &cfg, &f.map).unwrap();
    assert_eq!(a.score.to_bits(), b.score.to_bits());
    assert_eq!(a.depth, b.depth);
    assert_eq!(a.rppg, b.rppg);
}

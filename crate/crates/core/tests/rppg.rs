use auxspoof::clip::Frames;
use auxspoof::face::PosedShape;
use auxspoof::rppg::*;
use auxspoof::synthgen::{default_basis, gen_live, gen_spoof, motion_free_twin, ClipShape, MotionProfile, SpoofKind, SubjectSpec};
use auxspoof::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shapes_of(geom: &[auxspoof::clip::FrameGeometry]) -> Vec<PosedShape<f64>> {
    let basis = default_basis();
    geom.iter().map(|g| g.posed(&basis).unwrap()).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn subject_with_rate(id: usize, hr: f64) -> SubjectSpec {
    SubjectSpec { heart_rate_hz: hr, ..SubjectSpec::sample(3, id) }
}

fn shape(frames: usize) -> ClipShape {
    ClipShape { frames, fps: 30.0, size: 64 }
}

#[test]
fn uniform_frames_give_a_constant_trace() {
    let colour = [0.25f32, 0.5, 0.75];
    let (t, size) = (40, 16);
    let data: Vec<f32> = (0..t * size * size).flat_map(|_| colour).collect();
    let frames = Frames::new(t, size, size, data).unwrap();
    let shapes: Vec<PosedShape<f64>> = (0..t).map(|i| PosedShape { vertices: vec![[3.5, 4.5 + i as f64 * 0.1, 0.0], [9.0, 2.0, 1.0]] }).collect();
    let trace = track_region(&frames, &shapes, &[0, 1], 30.0).unwrap();
    for (ch, want) in [(&trace.r, 0.25), (&trace.g, 0.5), (&trace.b, 0.75)] {
        assert!(ch.iter().all(|&v| v == want));
    }
}

#[test]
fn patch_outside_the_frame_is_an_error() {
    let frames = Frames::new(2, 8, 8, vec![0.5; 2 * 8 * 8 * 3]).unwrap();
    let shapes = vec![PosedShape { vertices: vec![[-3.0, 2.0, 0.0], [20.0, 2.0, 0.0]] }; 2];
    assert!(matches!(track_region(&frames, &shapes, &[0, 1], 30.0), Err(Error::Rppg(_))));
}

#[test]
fn trace_follows_the_rendered_pulse() {
    let basis = default_basis();
    let subject = subject_with_rate(0, 1.3);
    let (frames, geom) = motion_free_twin(&basis, &subject, shape(150)).unwrap();
    let trace = track_region(&frames, &shapes_of(&geom), basis.forehead(), 30.0).unwrap();
    let pulse: Vec<f64> = (0..150)
        .map(|t| (std::f64::consts::TAU * subject.heart_rate_hz * t as f64 / 30.0 + subject.pulse_phase).sin())
        .collect();
    let c = correlation(&trace.g, &pulse);
    assert!(c > 0.99, "correlation {c}");
}

#[test]
fn bandpass_matches_the_filter_response() {
    let taps = design_bandpass(30.0).unwrap();
    for (f, expect_pass) in [(1.2, true), (6.0, false)] {
        let x: Vec<f64> = (0..300).map(|t| (std::f64::consts::TAU * f * t as f64 / 30.0).sin()).collect();
        let y = bandpass(&x, 30.0).unwrap();
        let steady = &y[FILTER_TAPS..300 - FILTER_TAPS];
        let amp = steady.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let predicted = frequency_response(&taps, f, 30.0);
        assert!((amp - predicted).abs() < 0.02, "{f} Hz: {amp} vs {predicted}");
        if expect_pass {
            assert!((amp - 1.0).abs() < 0.1, "{f} Hz gain {amp}");
        } else {
            assert!(amp < 0.1, "{f} Hz gain {amp}");
        }
    }
}

#[test]
fn six_cycles_peak_at_bin_six() {
    for len in [50, 64, 100, 150, 300] {
        let p: Vec<f64> = (0..len).map(|t| (std::f64::consts::TAU * 6.0 * t as f64 / len as f64).sin()).collect();
        let s = spectrum(&p).unwrap();
        assert_eq!(s.peak_bin(), 6, "len {len}");
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn heart_rate_sweep_peaks_within_one_bin() {
    let basis = default_basis();
    for (i, k) in (0..12).enumerate() {
        let hr = 0.8 + 2.2 * k as f64 / 11.0;
        let subject = subject_with_rate(i, hr);
        let (frames, geom) = motion_free_twin(&basis, &subject, shape(150)).unwrap();
        let s = extract(&frames, &shapes_of(&geom), basis.forehead(), 30.0).unwrap();
        let expected = hr * 150.0 / 30.0;
        assert!((s.peak_bin() as f64 - expected).abs() <= 1.0 + 1e-9, "{hr} Hz: bin {} vs {expected}", s.peak_bin());
    }
}

#[test]
fn ten_second_clip_at_72_bpm() {
    let basis = default_basis();
    let subject = subject_with_rate(4, 1.2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clip = gen_live(&basis, &subject, &MotionProfile::sample(&mut rng), shape(300), 8).unwrap();
    let s = extract(&clip.frames, &clip.posed_shapes::<f64>(&basis).unwrap(), basis.forehead(), 30.0).unwrap();
    assert!((s.peak_bin() as i64 - 12).abs() <= 1, "bin {}", s.peak_bin());
}

#[test]
fn print_spoofs_carry_almost_no_pulse_energy() {
    let basis = default_basis();
    for id in 0..4 {
        let subject = SubjectSpec::sample(5, id);
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        let live = gen_live(&basis, &subject, &MotionProfile::sample(&mut rng), shape(150), 10 + id as u64).unwrap();
        let print = gen_spoof(&basis, &subject, SpoofKind::Print, shape(150), 20 + id as u64).unwrap();
        let energy = |c: &auxspoof::clip::VideoClip| {
            extract_detailed(&c.frames, &c.posed_shapes::<f64>(&basis).unwrap(), basis.forehead(), 30.0)
                .unwrap()
                .raw_energy()
        };
        let (l, p) = (energy(&live), energy(&print));
        assert!(p < 0.05 * l, "subject {id}: print {p} vs live {l}");
    }
}

#[test]
fn same_pulse_under_different_motion_gives_matching_spectra() {
    let basis = default_basis();
    for id in 0..3 {
        let subject = SubjectSpec::sample(6, id);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + id as u64);
        let spectra: Vec<RppgSpectrum<f64>> = (0..2)
            .map(|k| {
                let clip = gen_live(&basis, &subject, &MotionProfile::sample(&mut rng), shape(150), 200 + k).unwrap();
                extract(&clip.frames, &clip.posed_shapes::<f64>(&basis).unwrap(), basis.forehead(), 30.0).unwrap()
            })
            .collect();
        let c = correlation(spectra[0].values(), spectra[1].values());
        assert!(c > 0.9, "subject {id}: correlation {c}");
    }
}

#[test]
fn brightness_scaling_does_not_change_the_spectrum() {
    let basis = default_basis();
    let subject = SubjectSpec::sample(7, 0);
    let (frames, geom) = motion_free_twin(&basis, &subject, shape(150)).unwrap();
    let shapes = shapes_of(&geom);
    let dim = Frames::new(150, 64, 64, frames.data().iter().map(|v| v * 0.5).collect()).unwrap();
    let a = extract(&frames, &shapes, basis.forehead(), 30.0).unwrap();
    let b = extract(&dim, &shapes, basis.forehead(), 30.0).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}

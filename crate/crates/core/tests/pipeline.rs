use f0dg::pipeline::*;
use f0dg::wavelet::CoefficientPlane;
use f0dg::Error;
use proptest::prelude::*;

fn track(f0: Vec<f64>, syl: &[(f64, f64)], att: &str) -> F0Track {
    let voicing = f0.iter().map(|&v| v > 0.0).collect();
    F0Track {
        f0_hz: f0,
        voicing,
        syllables: syl.iter().map(|&(s, e)| Syllable { start_ms: s, end_ms: e }).collect(),
        attitude: att.into(),
        utterance_id: "u1".into(),
        speaker_id: "s1".into(),
    }
}

#[test]
fn constant_track_prepares_to_log_value() {
    let t = track(vec![100.0; 1000], &[], "a");
    let m = prepare(&t).unwrap();
    assert_eq!(m.valid_length, 1000);
    assert_eq!(m.signal.len(), SIGNAL_LEN);
    assert!(m.signal[..1000].iter().all(|&v| (v - 100f64.ln()).abs() < 1e-15));
    assert!(m.signal[1000..].iter().all(|&v| v == 0.0));
    assert!(m.voicing_mask[1000..].iter().all(|&v| v == 0.0));
    assert!((m.mean_logf0 - 100f64.ln()).abs() < 1e-12);
}

#[test]
fn interior_gap_is_a_linear_ramp() {
    let mut f0 = vec![100.0; 20];
    f0.extend(vec![0.0; 10]);
    f0.extend(vec![200.0; 20]);
    let m = prepare(&track(f0, &[], "a")).unwrap();
    let (a, b) = (100f64.ln(), 200f64.ln());
    for k in 20..30 {
        let expected = a + (b - a) * (k - 19) as f64 / 11.0;
        assert!((m.signal[k] - expected).abs() < 1e-12, "frame {k}");
        assert_eq!(m.voicing_mask[k], 0.0);
    }
}

#[test]
fn full_length_track_has_no_padding() {
    let m = prepare(&track(vec![150.0; 4000], &[], "a")).unwrap();
    assert_eq!(m.valid_length, 4000);
    assert!(m.voicing_mask.iter().all(|&v| v == 1.0));
    assert!(matches!(prepare(&track(vec![150.0; 4001], &[], "a")), Err(Error::Pipeline(_))));
    assert!(matches!(prepare(&track(vec![0.0; 50], &[], "a")), Err(Error::Pipeline(_))));
}

fn pair(src: F0Track, tgt: F0Track) -> ParallelPair {
    ParallelPair::new(src, tgt).unwrap()
}

#[test]
fn identical_boundaries_leave_source_unchanged() {
    let f0: Vec<f64> = (0..300).map(|k| if (100..120).contains(&k) { 0.0 } else { 100.0 + k as f64 }).collect();
    let syl = [(0.0, 150.0), (150.0, 300.0)];
    let p = pair(track(f0.clone(), &syl, "a"), track(vec![120.0; 300], &syl, "b"));
    let al = align_pair(&p).unwrap();
    assert_eq!(al.source.f0_hz, p.source.f0_hz);
    assert_eq!(al.source.voicing, p.source.voicing);
}

#[test]
fn single_syllable_is_stretched_twice() {
    let src: Vec<f64> = (0..100).map(|k| 100.0 + k as f64).collect();
    let p = pair(track(src, &[(0.0, 100.0)], "a"), track(vec![150.0; 200], &[(0.0, 200.0)], "b"));
    let al = align_pair(&p).unwrap();
    assert_eq!(al.source.len(), 200);
    for n in 0..198 {
        assert!((al.source.f0_hz[n] - (100.0 + n as f64 / 2.0)).abs() < 1e-12, "frame {n}");
    }
}

#[test]
fn two_factor_warp_matches_target_duration() {
    let src = track(vec![120.0; 300], &[(0.0, 100.0), (100.0, 300.0)], "a");
    let tgt = track(vec![130.0; 300], &[(0.0, 200.0), (200.0, 300.0)], "b");
    let al = align_pair(&pair(src, tgt.clone())).unwrap();
    assert_eq!(al.source.len(), tgt.len());
    assert_eq!(al.source.syllables, tgt.syllables);
}

#[test]
fn mismatched_syllable_counts_fail_alignment() {
    let a = track(vec![120.0; 100], &[(0.0, 100.0)], "a");
    let b = track(vec![120.0; 100], &[(0.0, 50.0), (50.0, 100.0)], "b");
    assert!(matches!(ParallelPair::new(a.clone(), b.clone()), Err(Error::Alignment(_))));
    let bad = ParallelPair { source: a, target: b };
    assert!(matches!(align_pair(&bad), Err(Error::Alignment(_))));
}

#[test]
fn slicing_boundaries() {
    let plane = |len: usize| CoefficientPlane {
        n_scales: 32,
        len,
        coeffs: (0..32 * len).map(|k| k as f64).collect(),
        signal_mean: 0.0,
        scales: (1..=32).map(|s| s as f64).collect(),
    };
    let b = slice_windows(&plane(1024), 1024).unwrap();
    assert_eq!(b.len(), 2);
    assert!(b.iter().all(|x| x.width == 512 && x.data.len() == 32 * 512));
    let p = plane(1025);
    let b = slice_windows(&p, 1025).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b[2].width, 1);
    assert_eq!(unslice(&b, 1025).unwrap(), p.coeffs);
}

#[test]
fn csv_round_trip_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = track(vec![100.0, 0.0, 101.5], &[(0.0, 3.0)], "a");
    let f = dir.path().join("t.csv");
    write_f0_csv(&f, &t).unwrap();
    assert_eq!(read_f0_csv(&f).unwrap(), (t.f0_hz.clone(), t.voicing.clone()));
    let s = dir.path().join("s.csv");
    write_syllables_csv(&s, &t.syllables).unwrap();
    assert_eq!(read_syllables_csv(&s).unwrap(), t.syllables);

    std::fs::write(&f, "time_ms,f0_hz,voiced\n0,100,1\n1,abc,1\n").unwrap();
    match read_f0_csv(&f) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    std::fs::write(&f, "time_ms,f0_hz,voiced\n0,100,1\n5,100,1\n").unwrap();
    assert!(matches!(read_f0_csv(&f), Err(Error::Parse { line: 3, .. })));
    assert_eq!(Error::Parse { path: f.clone(), line: 3, msg: String::new() }.exit_code(), 1);
}

fn voiced_track() -> impl Strategy<Value = F0Track> {
    (20usize..400, prop::collection::vec((60.0f64..300.0, prop::bool::weighted(0.8)), 8)).prop_map(|(len, segs)| {
        let seg = len.div_ceil(segs.len());
        let mut f0: Vec<f64> = (0..len).map(|k| {
            let (hz, v) = segs[k / seg];
            if v { hz * (1.0 + 0.1 * (k as f64 / 7.0).sin()) } else { 0.0 }
        }).collect();
        f0[len / 2] = 150.0;
        track(f0, &[], "a")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_of_prepared_signal_recovers_voiced_f0(t in voiced_track()) {
        let m = prepare(&t).unwrap();
        for k in 0..t.len() {
            if t.voicing[k] {
                prop_assert!((m.signal[k].exp() - t.f0_hz[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prepare_is_idempotent_on_voiced_frames(t in voiced_track()) {
        let m = prepare(&t).unwrap();
        let again = F0Track {
            f0_hz: (0..t.len()).map(|k| if t.voicing[k] { m.signal[k].exp() } else { 0.0 }).collect(),
            ..t.clone()
        };
        let m2 = prepare(&again).unwrap();
        prop_assert_eq!(&m.voicing_mask, &m2.voicing_mask);
        for k in 0..SIGNAL_LEN {
            prop_assert!((m.signal[k] - m2.signal[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_unslice_is_identity(rows in 1usize..6, cols in 1usize..1400, width in 1usize..600, cut in 0.0f64..1.0) {
        let valid = ((cols as f64 * cut) as usize).max(1);
        let data: Vec<f64> = (0..rows * cols).map(|k| k as f64 * 0.5).collect();
        let blocks = slice_with_width(&data, rows, cols, valid, width).unwrap();
        prop_assert_eq!(blocks.len(), valid.div_ceil(width));
        let back = unslice(&blocks, valid).unwrap();
        for r in 0..rows {
            prop_assert_eq!(&back[r * valid..(r + 1) * valid], &data[r * cols..r * cols + valid]);
        }
    }

    /// Syllables whose voicing is all-or-nothing keep their voiced share after warping,
    /// up to one frame per syllable boundary.
    #[test]
    fn alignment_preserves_voiced_frames(
        src_d in prop::collection::vec(20usize..120, 1..6),
        ratio in prop::collection::vec(0.5f64..2.0, 6),
        voiced in prop::collection::vec(prop::bool::weighted(0.7), 6),
    ) {
        let n = src_d.len();
        let tgt_d: Vec<usize> = (0..n).map(|i| ((src_d[i] as f64 * ratio[i]).round() as usize).max(1)).collect();
        let mut voiced = voiced[..n].to_vec();
        voiced[0] = true;
        let build = |d: &[usize], att: &str| {
            let mut f0 = Vec::new();
            let mut syl = Vec::new();
            for (i, &len) in d.iter().enumerate() {
                syl.push((f0.len() as f64, (f0.len() + len) as f64));
                f0.extend((0..len).map(|k| if voiced[i] { 120.0 + k as f64 } else { 0.0 }));
            }
            track(f0, &syl, att)
        };
        let al = align_pair(&pair(build(&src_d, "a"), build(&tgt_d, "b"))).unwrap();
        let expected: usize = (0..n).filter(|&i| voiced[i]).map(|i| tgt_d[i]).sum();
        let got = al.source.voiced_count();
        prop_assert!((got as i64 - expected as i64).unsigned_abs() as usize <= n + 1, "{got} vs {expected}");
    }
}

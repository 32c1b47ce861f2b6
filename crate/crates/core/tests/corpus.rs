use f0dg::corpus::*;
use f0dg::pipeline::{prepare, write_f0_csv, write_syllables_csv, F0Track, Syllable};
use f0dg::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["f0", "syl"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest.json".into(), std::fs::read(dir.join("manifest.json")).unwrap()));
    out.sort();
    out
}

#[test]
fn ten_utterances_split_eight_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(10, &CorpusSpec::preset("separable").unwrap(), 3, dir.path()).unwrap();
    assert_eq!(m.utterances.len(), 20);
    assert_eq!(std::fs::read_dir(dir.path().join("f0")).unwrap().count(), 20);
    let c = import_corpus(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(c.pairs.len(), 10);
    assert_eq!((c.split(Split::Train).len(), c.split(Split::Valid).len()), (8, 2));
    assert_eq!(c.attitudes, ["neutral".to_string(), "dominant".to_string()]);
    for p in &c.pairs {
        prepare(&p.pair.source).unwrap();
        prepare(&p.pair.target).unwrap();
    }
    let u = c.units;
    assert!(u.phone.unwrap() < u.syllable.unwrap() && u.syllable.unwrap() < u.word.unwrap() && u.word.unwrap() < u.sentence.unwrap());
}

#[test]
fn same_seed_gives_identical_files() {
    let spec = CorpusSpec::preset("range20").unwrap();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(6, &spec, 11, a.path()).unwrap();
    generate_corpus(6, &spec, 11, b.path()).unwrap();
    generate_corpus(6, &spec, 12, c.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert_ne!(files(a.path()), files(c.path()));
}

#[test]
fn zero_utterances_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(generate_corpus(0, &CorpusSpec::preset("range20").unwrap(), 0, dir.path()), Err(Error::Contract(_))));
    assert!(CorpusSpec::preset("nope").is_err());
}

fn flat_skeleton() -> UtteranceSkeleton {
    UtteranceSkeleton {
        syllable_durations_ms: vec![200, 150, 250],
        accent_positions: vec![],
        voicing_gaps: vec![(200, 30), (350, 40)],
        melody: vec![0.0; 3],
        phones_per_syllable: vec![3; 3],
        word_sizes: vec![1, 2],
    }
}

fn profile(name: &str) -> AttitudeProfile {
    AttitudeProfile {
        name: name.into(),
        base_hz: 140.0,
        range_semitones: 6.0,
        declination_st_per_s: -3.0,
        accent_amplitude_st: 4.0,
        accent_width_ms: 50.0,
        jitter_st: 0.0,
    }
}

#[test]
fn identical_profiles_give_identical_tracks() {
    let mut skel = flat_skeleton();
    skel.accent_positions = vec![1];
    skel.melody = vec![0.3, -0.5, 1.0];
    let mut p = profile("x");
    p.jitter_st = 0.5;
    let a = synth_track(&skel, &p, 42, "u", "s").unwrap();
    let b = synth_track(&skel, &p, 42, "u", "s").unwrap();
    assert_eq!(a, b);
    let q = AttitudeProfile { name: "y".into(), ..p.clone() };
    let pair = synth_pair(&skel, &p, &q, 42, "u").unwrap();
    assert_eq!(pair.source.f0_hz, pair.target.f0_hz);
    assert_eq!(pair.source.syllables, pair.target.syllables);
}

#[test]
fn flat_profile_is_a_declination_line_with_gaps() {
    let skel = flat_skeleton();
    let t = synth_track(&skel, &profile("x"), 1, "u", "s").unwrap();
    assert_eq!(t.len(), 600);
    for k in 0..600 {
        let in_gap = (200..230).contains(&k) || (350..390).contains(&k);
        assert_eq!(t.voicing[k], !in_gap, "frame {k}");
        if in_gap {
            assert_eq!(t.f0_hz[k], 0.0);
        } else {
            let expected = 140.0 * 2f64.powf(-3.0 * (k as f64 / 1000.0) / 12.0);
            assert!((t.f0_hz[k] - expected).abs() < 1e-9, "frame {k}");
        }
    }
    let too_long = UtteranceSkeleton { syllable_durations_ms: vec![1300; 3], ..skel };
    assert!(matches!(synth_track(&too_long, &profile("x"), 1, "u", "s"), Err(Error::Contract(_))));
}

#[test]
fn random_skeletons_respect_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = SkeletonSpec { min_syllables: 3, max_syllables: 20, min_syllable_ms: 120, max_syllable_ms: 260 };
    for _ in 0..200 {
        let s = random_skeleton(&spec, &mut rng).unwrap();
        assert!((3..=20).contains(&s.syllable_count()));
        assert!(s.duration_ms() <= 3800);
    }
}

fn write_track(dir: &Path, uid: &str, att: &str, syl: &[(f64, f64)]) -> serde_json::Value {
    let n = syl.last().unwrap().1 as usize;
    let t = F0Track {
        f0_hz: vec![120.0; n],
        voicing: vec![true; n],
        syllables: syl.iter().map(|&(s, e)| Syllable { start_ms: s, end_ms: e }).collect(),
        attitude: att.into(),
        utterance_id: uid.into(),
        speaker_id: "s".into(),
    };
    let (f, s) = (format!("{uid}_{att}.csv"), format!("{uid}_{att}.syl.csv"));
    write_f0_csv(&dir.join(&f), &t).unwrap();
    write_syllables_csv(&dir.join(&s), &t.syllables).unwrap();
    serde_json::json!({"utterance_id": uid, "speaker_id": "s", "attitude": att, "f0_path": f, "syl_path": s})
}

#[test]
fn import_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    std::fs::write(&m, "[]").unwrap();
    assert!(import_corpus(&m).unwrap().pairs.is_empty());

    let two = [(0.0, 100.0), (100.0, 200.0)];
    let entries = vec![
        write_track(dir.path(), "u1", "a", &two),
        write_track(dir.path(), "u1", "b", &two),
        write_track(dir.path(), "u2", "a", &two),
        write_track(dir.path(), "u2", "b", &[(0.0, 200.0)]),
        write_track(dir.path(), "u3", "a", &two),
    ];
    std::fs::write(&m, serde_json::to_string(&serde_json::json!({ "utterances": entries })).unwrap()).unwrap();
    let c = import_corpus(&m).unwrap();
    assert_eq!(c.pairs.len(), 1);
    assert_eq!(c.pairs[0].pair.source.utterance_id, "u1");
    assert_eq!(c.units.syllable, Some(100.0));

    std::fs::write(dir.path().join("u1_a.csv"), "time_ms,f0_hz,voiced\n0,120,1\n1,x,1\n").unwrap();
    match import_corpus(&m) {
        Err(Error::Parse { path, line, .. }) => {
            assert!(path.ends_with("u1_a.csv"));
            assert_eq!(line, 3);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn mean_log_f0(t: &F0Track) -> f64 {
    let v: Vec<f64> = t.f0_hz.iter().filter(|&&f| f > 0.0).map(|f| f.ln()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn nearest_centroid_accuracy(c: &Corpus) -> f64 {
    let train = c.split(Split::Train);
    let centroid = |side: usize| {
        train.iter().map(|p| mean_log_f0(if side == 0 { &p.source } else { &p.target })).sum::<f64>() / train.len() as f64
    };
    let (ca, cb) = (centroid(0), centroid(1));
    let mut correct = 0;
    for p in &c.pairs {
        let (ma, mb) = (mean_log_f0(&p.pair.source), mean_log_f0(&p.pair.target));
        correct += usize::from((ma - ca).abs() < (ma - cb).abs());
        correct += usize::from((mb - cb).abs() < (mb - ca).abs());
    }
    correct as f64 / (2 * c.pairs.len()) as f64
}

#[test]
fn separable_preset_is_separable_on_mean_log_f0() {
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(100, &CorpusSpec::preset("separable").unwrap(), seed, dir.path()).unwrap();
        let acc = nearest_centroid_accuracy(&import_corpus(&dir.path().join("manifest.json")).unwrap());
        assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Profiles that differ by at least 4 semitones in base are told apart by a
    /// nearest-centroid rule on mean log-F0.
    #[test]
    fn base_shift_makes_classes_separable(
        base in 80.0f64..200.0,
        gap in 4.0f64..8.0,
        range in 2.0f64..8.0,
        decl in -4.0f64..0.0,
        acc in 1.0f64..5.0,
        jit in 0.0f64..0.6,
        seed in 0u64..1000,
    ) {
        let mut spec = CorpusSpec::preset("separable").unwrap();
        for (p, hz) in spec.profiles.iter_mut().zip([base, base * 2f64.powf(gap / 12.0)]) {
            p.base_hz = hz;
            p.range_semitones = range;
            p.declination_st_per_s = decl;
            p.accent_amplitude_st = acc;
            p.accent_width_ms = 50.0;
            p.jitter_st = jit;
        }
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(50, &spec, seed, dir.path()).unwrap();
        let acc = nearest_centroid_accuracy(&import_corpus(&dir.path().join("manifest.json")).unwrap());
        prop_assert!(acc >= 0.95, "accuracy {acc}");
    }
}

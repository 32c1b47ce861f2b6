//! Synthetic parallel F0 corpora and manifest import.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{read_f0_csv, read_syllables_csv, write_f0_csv, write_syllables_csv, F0Track, ParallelPair, Syllable};

/// Longest synthetic utterance, leaving headroom under the padded length.
pub const MAX_SYNTH_MS: usize = 3800;

/// Correlation width of the jitter component.
const JITTER_SMOOTH_MS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeProfile {
    pub name: String,
    pub base_hz: f64,
    pub range_semitones: f64,
    pub declination_st_per_s: f64,
    pub accent_amplitude_st: f64,
    pub accent_width_ms: f64,
    pub jitter_st: f64,
}

impl AttitudeProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_hz, self.range_semitones, self.accent_amplitude_st, self.accent_width_ms];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite())
            || !(self.jitter_st >= 0.0)
            || !self.declination_st_per_s.is_finite()
        {
            return Err(Error::Contract(format!("invalid attitude profile {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSkeleton {
    pub syllable_durations_ms: Vec<usize>,
    pub accent_positions: Vec<usize>,
    /// `(start_ms, len_ms)` unvoiced stretches.
    pub voicing_gaps: Vec<(usize, usize)>,
    /// Melodic target per syllable in [-1, 1], scaled by half the profile range.
    pub melody: Vec<f64>,
    pub phones_per_syllable: Vec<usize>,
    /// Syllables per word, in order.
    pub word_sizes: Vec<usize>,
}

impl UtteranceSkeleton {
    pub fn syllable_count(&self) -> usize {
        self.syllable_durations_ms.len()
    }

    pub fn duration_ms(&self) -> usize {
        self.syllable_durations_ms.iter().sum()
    }

    pub fn syllables(&self) -> Vec<Syllable> {
        let mut t = 0;
        self.syllable_durations_ms
            .iter()
            .map(|&d| {
                let s = Syllable { start_ms: t as f64, end_ms: (t + d) as f64 };
                t += d;
                s
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.syllable_count();
        if !(1..=20).contains(&n)
            || self.melody.len() != n
            || self.phones_per_syllable.len() != n
            || self.word_sizes.iter().sum::<usize>() != n
            || self.accent_positions.iter().any(|&a| a >= n)
            || self.syllable_durations_ms.contains(&0)
        {
            return Err(Error::Contract("inconsistent utterance skeleton".into()));
        }
        if self.duration_ms() > MAX_SYNTH_MS {
            return Err(Error::Contract(format!("skeleton lasts {} ms, limit is {MAX_SYNTH_MS}", self.duration_ms())));
        }
        Ok(())
    }
}

/// Ranges for random skeletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub min_syllable_ms: usize,
    pub max_syllable_ms: usize,
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        SkeletonSpec { min_syllables: 3, max_syllables: 12, min_syllable_ms: 120, max_syllable_ms: 260 }
    }
}

pub fn random_skeleton(spec: &SkeletonSpec, rng: &mut ChaCha8Rng) -> Result<UtteranceSkeleton> {
    if spec.min_syllables < 1 || spec.min_syllables > spec.max_syllables || spec.min_syllable_ms > spec.max_syllable_ms {
        return Err(Error::Contract(format!("invalid skeleton spec {spec:?}")));
    }
    let mut n = rng.random_range(spec.min_syllables..=spec.max_syllables.min(20));
    n = n.min(MAX_SYNTH_MS / spec.max_syllable_ms.max(1)).max(1);
    let durations: Vec<usize> = (0..n).map(|_| rng.random_range(spec.min_syllable_ms..=spec.max_syllable_ms)).collect();
    let mut word_sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let w = rng.random_range(1..=3usize).min(left);
        word_sizes.push(w);
        left -= w;
    }
    let mut accents = Vec::new();
    let mut first = 0;
    for &w in &word_sizes {
        if rng.random_bool(0.6) {
            accents.push(first + rng.random_range(0..w));
        }
        first += w;
    }
    let melody = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phones = (0..n).map(|_| rng.random_range(2..=4usize)).collect();
    let mut gaps = Vec::new();
    let mut t = 0;
    for &d in &durations {
        if t > 0 && rng.random_bool(0.5) {
            gaps.push((t, rng.random_range(20..=50usize).min(d / 3)));
        }
        t += d;
    }
    let skel = UtteranceSkeleton {
        syllable_durations_ms: durations,
        accent_positions: accents,
        voicing_gaps: gaps,
        melody,
        phones_per_syllable: phones,
        word_sizes,
    };
    skel.validate()?;
    Ok(skel)
}

/// Unit-variance noise smoothed over roughly `JITTER_SMOOTH_MS`.
fn smooth_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let half = (3.0 * JITTER_SMOOTH_MS) as i64;
    let raw: Vec<f64> = (0..n as i64 + 2 * half).map(|_| rng.sample(StandardNormal)).collect();
    let kernel: Vec<f64> =
        (-half..=half).map(|k| (-0.5 * (k as f64 / JITTER_SMOOTH_MS).powi(2)).exp()).collect();
    let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..n).map(|t| kernel.iter().enumerate().map(|(j, w)| w * raw[t + j]).sum::<f64>() / norm).collect()
}

/// Contour in semitones relative to the profile base, before voicing.
fn contour_st(skel: &UtteranceSkeleton, prof: &AttitudeProfile, noise: &[f64]) -> Vec<f64> {
    let syl = skel.syllables();
    let centers: Vec<f64> = syl.iter().map(|s| 0.5 * (s.start_ms + s.end_ms)).collect();
    let n = skel.duration_ms();
    (0..n)
        .map(|t| {
            let tf = t as f64;
            let j = centers.partition_point(|&c| c <= tf);
            let melody = if j == 0 {
                skel.melody[0]
            } else if j == centers.len() {
                skel.melody[centers.len() - 1]
            } else {
                let u = (tf - centers[j - 1]) / (centers[j] - centers[j - 1]);
                let w = 0.5 - 0.5 * (std::f64::consts::PI * u).cos();
                skel.melody[j - 1] * (1.0 - w) + skel.melody[j] * w
            };
            let accents: f64 = skel
                .accent_positions
                .iter()
                .map(|&a| {
                    let z = (tf - centers[a]) / prof.accent_width_ms;
                    prof.accent_amplitude_st * (-0.5 * z * z).exp()
                })
                .sum();
            prof.declination_st_per_s * tf / 1000.0 + 0.5 * prof.range_semitones * melody + accents + prof.jitter_st * noise[t]
        })
        .collect()
}

pub fn synth_track(skel: &UtteranceSkeleton, prof: &AttitudeProfile, seed: u64, utterance_id: &str, speaker_id: &str) -> Result<F0Track> {
    skel.validate()?;
    prof.validate()?;
    let n = skel.duration_ms();
    let noise = smooth_noise(n, &mut ChaCha8Rng::seed_from_u64(seed));
    let st = contour_st(skel, prof, &noise);
    let mut voicing = vec![true; n];
    for &(start, len) in &skel.voicing_gaps {
        for v in voicing.iter_mut().skip(start).take(len) {
            *v = false;
        }
    }
    let f0_hz = st.iter().zip(&voicing).map(|(s, &v)| if v { prof.base_hz * 2f64.powf(s / 12.0) } else { 0.0 }).collect();
    let track = F0Track {
        f0_hz,
        voicing,
        syllables: skel.syllables(),
        attitude: prof.name.clone(),
        utterance_id: utterance_id.to_string(),
        speaker_id: speaker_id.to_string(),
    };
    track.validate()?;
    Ok(track)
}

/// Renders one skeleton under two attitudes; both share the same jitter realisation.
pub fn synth_pair(
    skel: &UtteranceSkeleton,
    prof_a: &AttitudeProfile,
    prof_b: &AttitudeProfile,
    seed: u64,
    utterance_id: &str,
) -> Result<ParallelPair> {
    let a = synth_track(skel, prof_a, seed, utterance_id, "spk0")?;
    let b = synth_track(skel, prof_b, seed, utterance_id, "spk0")?;
    ParallelPair::new(a, b)
}

/// Two attitude profiles plus the skeleton ranges used to draw utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub profiles: [AttitudeProfile; 2],
    #[serde(default)]
    pub skeleton: SkeletonSpec,
}

impl CorpusSpec {
    /// Named presets: `separable` (classes differ in base, range and accents) and
    /// `range20` (attitude b is attitude a with every excursion scaled by 1.2).
    pub fn preset(name: &str) -> Result<Self> {
        let p = |name: &str, base, range, decl, acc, width, jit| AttitudeProfile {
            name: name.into(),
            base_hz: base,
            range_semitones: range,
            declination_st_per_s: decl,
            accent_amplitude_st: acc,
            accent_width_ms: width,
            jitter_st: jit,
        };
        match name {
            "separable" => Ok(CorpusSpec {
                profiles: [p("neutral", 120.0, 3.0, -1.5, 2.0, 60.0, 0.3), p("dominant", 175.0, 8.0, -3.0, 5.0, 40.0, 0.6)],
                skeleton: SkeletonSpec::default(),
            }),
            "range20" => Ok(CorpusSpec {
                profiles: [p("plain", 130.0, 5.0, -1.0, 2.5, 60.0, 0.4), p("wide", 130.0, 6.0, -1.2, 3.0, 60.0, 0.48)],
                skeleton: SkeletonSpec { min_syllables: 3, max_syllables: 6, min_syllable_ms: 120, max_syllable_ms: 200 },
            }),
            _ => Err(Error::Contract(format!("unknown corpus preset {name:?}"))),
        }
    }

    /// A preset name or a path to a JSON file holding a `CorpusSpec`.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Ok(spec) = Self::preset(name_or_path) {
            return Ok(spec);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::Contract(format!("{name_or_path:?} is neither a corpus preset nor a spec file")));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: CorpusSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.profiles {
            p.validate()?;
        }
        if self.profiles[0].name == self.profiles[1].name {
            return Err(Error::Contract("the two profiles need distinct names".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

/// Mean durations of linguistic units, used as reference markers on scale plots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitDurations {
    pub phone: Option<f64>,
    pub syllable: Option<f64>,
    pub word: Option<f64>,
    pub sentence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub attitude: String,
    pub f0_path: PathBuf,
    pub syl_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub utterances: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_durations_ms: Option<UnitDurations>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<AttitudeProfile>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Full(Manifest),
    Bare(Vec<ManifestEntry>),
}

pub fn corpus_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Number of training utterances under an 80/20 split.
pub fn train_count(n: usize) -> usize {
    ((n as f64) * 0.8).round() as usize
}

/// Writes `n` synthetic pairs as CSV files plus `manifest.json` under `out`.
pub fn generate_corpus(n: usize, spec: &CorpusSpec, seed: u64, out: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::Contract("corpus needs at least one utterance".into()));
    }
    spec.validate()?;
    for dir in [out.to_path_buf(), out.join("f0"), out.join("syl")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::new();
    let (mut syl_ms, mut syl_n, mut phone_ms, mut phone_n, mut word_ms, mut word_n, mut sent_ms) =
        (0.0, 0usize, 0.0, 0usize, 0.0, 0usize, 0.0);
    let n_train = train_count(n);
    for i in 0..n {
        let useed = corpus_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(useed);
        let skel = random_skeleton(&spec.skeleton, &mut rng)?;
        let uid = format!("utt{i:04}");
        let pair = synth_pair(&skel, &spec.profiles[0], &spec.profiles[1], rng.random(), &uid)?;
        let split = if i < n_train { Split::Train } else { Split::Valid };
        for track in [&pair.source, &pair.target] {
            let f0_rel = PathBuf::from("f0").join(format!("{uid}_{}.csv", track.attitude));
            let syl_rel = PathBuf::from("syl").join(format!("{uid}_{}.csv", track.attitude));
            write_f0_csv(&out.join(&f0_rel), track)?;
            write_syllables_csv(&out.join(&syl_rel), &track.syllables)?;
            entries.push(ManifestEntry {
                utterance_id: uid.clone(),
                speaker_id: track.speaker_id.clone(),
                attitude: track.attitude.clone(),
                f0_path: f0_rel,
                syl_path: syl_rel,
                split: Some(split),
            });
        }
        for (d, p) in skel.syllable_durations_ms.iter().zip(&skel.phones_per_syllable) {
            syl_ms += *d as f64;
            syl_n += 1;
            phone_ms += *d as f64;
            phone_n += p;
        }
        let mut k = 0;
        for &w in &skel.word_sizes {
            word_ms += skel.syllable_durations_ms[k..k + w].iter().sum::<usize>() as f64;
            word_n += 1;
            k += w;
        }
        sent_ms += skel.duration_ms() as f64;
    }
    let manifest = Manifest {
        utterances: entries,
        unit_durations_ms: Some(UnitDurations {
            phone: Some(phone_ms / phone_n as f64),
            syllable: Some(syl_ms / syl_n as f64),
            word: Some(word_ms / word_n as f64),
            sentence: Some(sent_ms / n as f64),
        }),
        profiles: Some(spec.profiles.to_vec()),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    pub pair: ParallelPair,
    pub split: Split,
}

/// Parallel pairs grouped by utterance; `attitudes[0]` is the source side of every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub attitudes: [String; 2],
    pub pairs: Vec<CorpusPair>,
    pub units: UnitDurations,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&ParallelPair> {
        self.pairs.iter().filter(|p| p.split == split).map(|p| &p.pair).collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line() as u64, msg: e.to_string() })?;
    Ok(match parsed {
        ManifestFile::Full(m) => m,
        ManifestFile::Bare(utterances) => Manifest { utterances, ..Manifest::default() },
    })
}

pub fn import_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut attitudes: Vec<String> = Vec::new();
    for e in &manifest.utterances {
        if !attitudes.contains(&e.attitude) {
            attitudes.push(e.attitude.clone());
        }
    }
    if attitudes.len() > 2 {
        return Err(Error::Contract(format!("corpus holds {} attitudes, expected two: {attitudes:?}", attitudes.len())));
    }
    let mut groups: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.utterances {
        groups.entry(e.utterance_id.as_str()).or_default().push(e);
    }
    let complete: Vec<&str> = groups.iter().filter(|(_, g)| g.len() == 2 && g[0].attitude != g[1].attitude).map(|(k, _)| *k).collect();
    let n_train = train_count(complete.len());
    let mut pairs = Vec::new();
    for (uid, group) in &groups {
        let Some(rank) = complete.iter().position(|c| c == uid) else {
            log::warn!("skipping utterance {uid}: expected one track per attitude, found {}", group.len());
            continue;
        };
        let load = |e: &ManifestEntry| -> Result<F0Track> {
            let (f0_hz, voicing) = read_f0_csv(&root.join(&e.f0_path))?;
            let syllables = read_syllables_csv(&root.join(&e.syl_path))?;
            let t = F0Track {
                f0_hz,
                voicing,
                syllables,
                attitude: e.attitude.clone(),
                utterance_id: e.utterance_id.clone(),
                speaker_id: e.speaker_id.clone(),
            };
            t.validate()?;
            Ok(t)
        };
        let (ea, eb) = if group[0].attitude == attitudes[0] { (group[0], group[1]) } else { (group[1], group[0]) };
        let (a, b) = (load(ea)?, load(eb)?);
        let split = ea.split.or(eb.split).unwrap_or(if rank < n_train { Split::Train } else { Split::Valid });
        match ParallelPair::new(a, b) {
            Ok(pair) => pairs.push(CorpusPair { pair, split }),
            Err(e @ (Error::Alignment(_) | Error::Contract(_))) => log::warn!("skipping utterance {uid}: {e}"),
            Err(e) => return Err(e),
        }
    }
    let mut units = manifest.unit_durations_ms.clone().unwrap_or_default();
    if !pairs.is_empty() {
        let tracks = pairs.iter().map(|p| &p.pair.source);
        if units.sentence.is_none() {
            units.sentence = Some(tracks.clone().map(|t| t.len() as f64).sum::<f64>() / pairs.len() as f64);
        }
        if units.syllable.is_none() {
            let (sum, n) = tracks
                .flat_map(|t| t.syllables.iter())
                .fold((0.0, 0usize), |(s, n), y| (s + y.end_ms - y.start_ms, n + 1));
            if n > 0 {
                units.syllable = Some(sum / n as f64);
            }
        }
    }
    let mut it = attitudes.into_iter();
    let a = it.next().unwrap_or_default();
    let b = it.next().unwrap_or_default();
    Ok(Corpus { attitudes: [a, b], pairs, units })
}

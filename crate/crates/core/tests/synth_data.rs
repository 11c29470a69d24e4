use vidalign::data::cache::{self, load_or_generate, CacheStatus};
use vidalign::data::{
    batch_iterator, generate_split, motion_template_class, Dataset, Domain, ShiftLevel, ShiftSpec, Split, SynthConfig,
};
use vidalign::Error;

fn small(level: ShiftLevel) -> SynthConfig {
    SynthConfig {
        train_per_class: 20,
        test_per_class: 20,
        shift_level: level,
        seed: 3,
        ..SynthConfig::default()
    }
}

fn template_accuracy(cfg: &SynthConfig, data: &Dataset) -> f64 {
    let hits = data
        .samples
        .iter()
        .filter(|s| motion_template_class(cfg, &s.frames) == s.label)
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn generation_is_bit_identical_per_seed() {
    let cfg = small(ShiftLevel::Severe);
    for domain in [Domain::Source, Domain::Target] {
        let a = generate_split(&cfg, domain, Split::Train).unwrap();
        let b = generate_split(&cfg, domain, Split::Train).unwrap();
        assert_eq!(a, b);
    }
    let other = SynthConfig { seed: 4, ..cfg.clone() };
    assert_ne!(
        generate_split(&cfg, Domain::Source, Split::Test).unwrap(),
        generate_split(&other, Domain::Source, Split::Test).unwrap()
    );
    assert_ne!(
        generate_split(&cfg, Domain::Source, Split::Test).unwrap().samples[0].frames,
        generate_split(&cfg, Domain::Source, Split::Train).unwrap().samples[0].frames
    );
}

#[test]
fn samples_are_well_formed() {
    let cfg = small(ShiftLevel::Severe);
    let d = generate_split(&cfg, Domain::Target, Split::Test).unwrap();
    assert_eq!(d.len(), 6 * 20);
    for (i, s) in d.samples.iter().enumerate() {
        assert_eq!(s.id, i);
        assert!(s.label < 6);
        assert_eq!(s.domain, Domain::Target);
        assert_eq!(s.frames.len(), cfg.video_len());
        assert!(s.frames.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let counts = (0..6).map(|c| d.labels().iter().filter(|&&l| l == c).count());
    assert!(counts.into_iter().all(|n| n == 20));
}

#[test]
fn shift_preserves_the_motion_class() {
    // Identity and severe target splits share their per-sample streams, so
    // sample i has the same motion in both and differs only by the shift.
    let severe = SynthConfig { test_per_class: 17, ..small(ShiftLevel::Severe) };
    let clean = SynthConfig { shift: Some(ShiftSpec::preset(ShiftLevel::None)), ..severe.clone() };
    let shifted = generate_split(&severe, Domain::Target, Split::Test).unwrap();
    let plain = generate_split(&clean, Domain::Target, Split::Test).unwrap();
    for (a, b) in plain.samples.iter().zip(&shifted.samples).take(100) {
        assert_ne!(a.frames, b.frames);
        assert_eq!(motion_template_class(&clean, &a.frames), motion_template_class(&severe, &b.frames), "sample {}", a.id);
    }
}

#[test]
fn motion_template_recovers_labels_in_both_domains() {
    for level in [ShiftLevel::Mild, ShiftLevel::Severe] {
        let cfg = small(level);
        for domain in [Domain::Source, Domain::Target] {
            let acc = template_accuracy(&cfg, &generate_split(&cfg, domain, Split::Test).unwrap());
            assert!(acc > 0.9, "{level:?} {domain:?}: {acc}");
        }
    }
}

/// Nearest class centroid over per-frame mean intensities.
fn mean_intensity_accuracy(cfg: &SynthConfig, train: &Dataset, test: &Dataset) -> f64 {
    let profile = |frames: &[f32]| -> Vec<f64> {
        frames
            .chunks(cfg.frame_len())
            .map(|f| f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64)
            .collect()
    };
    let k = cfg.num_classes;
    let mut centroids = vec![vec![0.0; cfg.frames]; k];
    let mut counts = vec![0usize; k];
    for s in &train.samples {
        for (c, v) in centroids[s.label].iter_mut().zip(profile(&s.frames)) {
            *c += v;
        }
        counts[s.label] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let hits = test
        .samples
        .iter()
        .filter(|s| {
            let p = profile(&s.frames);
            let dist = |c: &Vec<f64>| c.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == s.label
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn appearance_alone_does_not_reveal_the_class() {
    let cfg = SynthConfig { train_per_class: 60, test_per_class: 40, ..small(ShiftLevel::Severe) };
    for domain in [Domain::Source, Domain::Target] {
        let train = generate_split(&cfg, domain, Split::Train).unwrap();
        let test = generate_split(&cfg, domain, Split::Test).unwrap();
        let acc = mean_intensity_accuracy(&cfg, &train, &test);
        assert!(acc <= 1.0 / 6.0 + 0.1, "{domain:?}: {acc}");
    }
}

#[test]
fn identity_shift_makes_domains_exchangeable() {
    let cfg = SynthConfig { shift: Some(ShiftSpec::preset(ShiftLevel::None)), ..small(ShiftLevel::Severe) };
    let s = generate_split(&cfg, Domain::Source, Split::Test).unwrap();
    let t = generate_split(&cfg, Domain::Target, Split::Test).unwrap();
    assert_ne!(s.samples[0].frames, t.samples[0].frames);
    let mean = |d: &Dataset| {
        let n: usize = d.samples.iter().map(|x| x.frames.len()).sum();
        d.samples.iter().flat_map(|x| x.frames.iter()).map(|&v| v as f64).sum::<f64>() / n as f64
    };
    assert!((mean(&s) - mean(&t)).abs() < 0.01);
    assert!((template_accuracy(&cfg, &s) - template_accuracy(&cfg, &t)).abs() < 0.05);
    // The severe preset moves the pixel statistics.
    let sev = small(ShiftLevel::Severe);
    let shifted = generate_split(&sev, Domain::Target, Split::Test).unwrap();
    assert!((mean(&s) - mean(&shifted)).abs() > 0.02);
}

#[test]
fn presets_carry_their_documented_values() {
    let mild = ShiftSpec::preset(ShiftLevel::Mild);
    assert_eq!((mild.intensity_scale, mild.noise_sigma, mild.translation_bias), (0.9, 0.02, 0.0));
    let severe = ShiftSpec::preset(ShiftLevel::Severe);
    assert_eq!(severe.intensity_scale, 0.6);
    assert_eq!(severe.intensity_offset, 0.1);
    assert_eq!(severe.noise_sigma, 0.08);
    assert_eq!(severe.translation_bias, 2.0);
    assert!(severe.texture_swap);
    assert_eq!(severe.temporal_jitter, 1);
    assert!(ShiftSpec::preset(ShiftLevel::None).is_identity());
}

#[test]
fn out_of_range_shift_is_a_config_error() {
    let bad = [
        ShiftSpec { intensity_scale: 0.0, ..ShiftSpec::default() },
        ShiftSpec { noise_sigma: 1.5, ..ShiftSpec::default() },
        ShiftSpec { temporal_jitter: 9, ..ShiftSpec::default() },
    ];
    for spec in bad {
        let cfg = SynthConfig { shift: Some(spec), ..small(ShiftLevel::Mild) };
        assert!(matches!(generate_split(&cfg, Domain::Target, Split::Test), Err(Error::Config(_))));
    }
}

#[test]
fn batches_cover_the_dataset_once() {
    for (len, bs) in [(23, 8), (8, 8), (5, 64)] {
        let batches = batch_iterator(len, bs, 11, 3, 0);
        assert!(batches.iter().all(|b| b.len() <= bs));
        let mut all = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..len).collect::<Vec<_>>());
    }
    assert_eq!(batch_iterator(5, 64, 11, 3, 0).len(), 1);
}

#[test]
fn cache_round_trips_and_regenerates_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ShiftLevel::Mild);
    let (first, st) = load_or_generate(dir.path(), &cfg, Domain::Source, Split::Test).unwrap();
    assert_eq!(st, CacheStatus::Regenerated);
    let (second, st) = load_or_generate(dir.path(), &cfg, Domain::Source, Split::Test).unwrap();
    assert_eq!(st, CacheStatus::Valid);
    assert_eq!(first, second);

    // A different config hash invalidates the file.
    let other = SynthConfig { seed: 9, ..cfg.clone() };
    let (regen, st) = load_or_generate(dir.path(), &other, Domain::Source, Split::Test).unwrap();
    assert_eq!(st, CacheStatus::Regenerated);
    assert_eq!(regen, generate_split(&other, Domain::Source, Split::Test).unwrap());

    // Tampered header and truncated body are both rejected.
    let path = cache::split_path(dir.path(), Domain::Source, Split::Test);
    let bytes = std::fs::read(&path).unwrap();
    let text = String::from_utf8_lossy(&bytes[16..80]).to_string();
    assert!(text.contains("config_hash") || text.contains("format_version"));
    let mut tampered = bytes.clone();
    let at = bytes.windows(4).position(|w| w == b"seed").unwrap() + 6;
    tampered[at] = if tampered[at] == b'1' { b'2' } else { b'1' };
    assert!(cache::decode(&other, Domain::Source, Split::Test, &tampered).is_none());
    assert!(cache::decode(&other, Domain::Source, Split::Test, &bytes[..bytes.len() - 1]).is_none());
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let (_, st) = load_or_generate(dir.path(), &other, Domain::Source, Split::Test).unwrap();
    assert_eq!(st, CacheStatus::Regenerated);
    let header = cache::read_header(&std::fs::read(&path).unwrap()).unwrap().0;
    assert_eq!(header.config_hash, other.hash());
    assert_eq!(header.count, 120);
}

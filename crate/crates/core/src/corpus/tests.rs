use super::*;
use crate::losses::si_sdr;

fn small_cfg() -> SynthConfig {
    SynthConfig { n_examples: 6, seg_len_s: 4.0, ..SynthConfig::default() }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn noiseless_informative_channels_track_the_target_envelope() {
    let cfg = SynthConfig { eeg_snr_db: f64::INFINITY, ..small_cfg() };
    for i in 0..3 {
        let ex = generate_example(&cfg, i).unwrap();
        let env = target_envelope(&ex.target, ex.eeg.n_samples(), ex.eeg.fs()).unwrap();
        let interf = target_envelope(&ex.interferer, ex.eeg.n_samples(), ex.eeg.fs()).unwrap();
        let margin = 64;
        let cut = |x: &[f64]| x[margin..x.len() - margin].to_vec();
        for c in 0..cfg.q_channels {
            let r = pearson(&cut(ex.eeg.channel(c)), &cut(&env));
            if cfg.informative_channels.contains(&c) {
                assert!(r > 0.9, "example {i} channel {c}: r = {r}");
                assert!(pearson(&cut(ex.eeg.channel(c)), &cut(&interf)).abs() < 0.5);
            } else {
                assert!(r.abs() < 0.2, "example {i} channel {c}: r = {r}");
            }
        }
    }
}

#[test]
fn generation_is_deterministic_per_example() {
    let cfg = small_cfg();
    let a = generate_example(&cfg, 3).unwrap();
    let b = generate_example(&cfg, 3).unwrap();
    assert_eq!(a, b);
    let all = generate_dataset(&cfg).unwrap();
    assert_eq!(all[3], a);
    let other = generate_example(&SynthConfig { seed: 1, ..cfg }, 3).unwrap();
    assert_ne!(other.mixture, a.mixture);
}

#[test]
fn empty_informative_set_gives_pure_noise_eeg() {
    let cfg = SynthConfig { informative_channels: vec![], ..small_cfg() };
    let ex = generate_example(&cfg, 0).unwrap();
    let env = target_envelope(&ex.target, ex.eeg.n_samples(), ex.eeg.fs()).unwrap();
    for c in 0..cfg.q_channels {
        assert!(pearson(ex.eeg.channel(c), &env).abs() < 0.2);
    }
}

#[test]
fn mixture_is_the_sum_at_zero_db() {
    let cfg = small_cfg();
    for i in 0..cfg.n_examples {
        let ex = generate_example(&cfg, i).unwrap();
        for ((m, t), n) in ex.mixture.samples().iter().zip(ex.target.samples()).zip(ex.interferer.samples()) {
            assert!((m - (t + n)).abs() < 1e-5);
        }
        let s = si_sdr(ex.mixture.samples(), ex.target.samples()).unwrap();
        assert!(s.abs() < 1.5, "example {i}: mixture SI-SDR {s}");
    }
}

#[test]
fn invalid_configs_name_the_keys() {
    let cfg = SynthConfig { informative_channels: vec![3, 40], n_examples: 0, ..SynthConfig::default() };
    match cfg.validate() {
        Err(Error::Config(keys)) => {
            assert!(keys.iter().any(|k| k.starts_with("synth.informative_channels")));
            assert!(keys.iter().any(|k| k.starts_with("synth.n_examples")));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn snr_accepts_inf_string() {
    let cfg: SynthConfig = serde_json::from_str(r#"{"eeg_snr_db": "inf"}"#).unwrap();
    assert!(cfg.eeg_snr_db.is_infinite());
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains(r#""eeg_snr_db":"inf""#));
    assert!(serde_json::from_str::<SynthConfig>(r#"{"eeg_snr": 0}"#).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SynthConfig { n_examples: 3, ..small_cfg() }).unwrap();
    write_dataset(dir.path(), &data).unwrap();
    std::fs::write(dir.path().join("README.txt"), "ignored").unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
}

#[test]
fn empty_directory_reads_as_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn truncated_file_is_a_format_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SynthConfig { n_examples: 1, ..small_cfg() }).unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let path = dir.path().join(&data[0].example_id).join("eeg.f32");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Format { file, msg }) => {
            assert_eq!(file, path);
            assert!(msg.contains(&bytes.len().to_string()), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn lagged_decoder_prefers_informative_channels() {
    let cfg = SynthConfig { n_examples: 20, ..small_cfg() };
    let data = generate_dataset(&cfg).unwrap();
    let rep = identifiability_check(&data, &cfg.informative_channels, 7).unwrap();
    assert!(rep.ratio > 1.5, "{rep:?}");
    assert!(rep.random_channels.iter().all(|c| !cfg.informative_channels.contains(c)));
}

#[test]
fn preprocessing_segments_audio_and_eeg_in_step() {
    let cfg = SynthConfig { n_examples: 1, seg_len_s: 6.0, ..small_cfg() };
    let ex = generate_example(&cfg, 0).unwrap();
    let segs = preprocess_example(&ex, 2.0, 1.0, 1.0).unwrap();
    assert_eq!(segs.len(), 3);
    for (k, s) in segs.iter().enumerate() {
        assert_eq!(s.mixture.len(), 2000);
        assert_eq!(s.eeg.n_samples(), 256);
        assert_eq!(s.eeg.stage(), EegStage::Mua);
        assert_eq!(s.example_id, format!("ex00000_s{k:02}"));
        assert_eq!(s.mixture.samples(), &ex.mixture.samples()[k * 2000..(k + 1) * 2000]);
    }
}

//! On-disk dataset layout: one directory per example holding little-endian `f32` arrays
//! (`audio_mix.f32`, `audio_target.f32`, `audio_interf.f32`, channel-major `eeg.f32`) and a
//! `meta.json` describing shapes and rates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MixtureExample;
use crate::error::{Error, Result};
use crate::signal::{AudioWaveform, EegStage, EegTrial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub example_id: String,
    pub subject_id: String,
    pub fs_audio: f64,
    pub fs_eeg: f64,
    pub n_samples_audio: usize,
    pub q_channels: usize,
    pub n_samples_eeg: usize,
    pub labels: Vec<String>,
    pub stage: EegStage,
    #[serde(default)]
    pub informative_channels: Option<Vec<usize>>,
}

const META: &str = "meta.json";
const AUDIO_FILES: [&str; 3] = ["audio_mix.f32", "audio_target.f32", "audio_interf.f32"];
const EEG_FILE: &str = "eeg.f32";

fn write_f32(path: &Path, x: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = x.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            file: path.to_path_buf(),
            msg: format!("expected {} bytes ({expected} f32 values), found {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
}

/// Writes every example under `dir/<example_id>/`, creating directories as needed.
pub fn write_dataset(dir: &Path, examples: &[MixtureExample]) -> Result<()> {
    for ex in examples {
        let d = dir.join(&ex.example_id);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let meta = ExampleMeta {
            example_id: ex.example_id.clone(),
            subject_id: ex.subject_id.clone(),
            fs_audio: ex.mixture.fs(),
            fs_eeg: ex.eeg.fs(),
            n_samples_audio: ex.mixture.len(),
            q_channels: ex.eeg.n_channels(),
            n_samples_eeg: ex.eeg.n_samples(),
            labels: ex.eeg.labels().to_vec(),
            stage: ex.eeg.stage(),
            informative_channels: ex.informative_channels.clone(),
        };
        let path = d.join(META);
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        for (name, w) in AUDIO_FILES.iter().zip([&ex.mixture, &ex.target, &ex.interferer]) {
            write_f32(&d.join(name), w.samples())?;
        }
        write_f32(&d.join(EEG_FILE), ex.eeg.data())?;
    }
    Ok(())
}

fn read_example(d: &Path) -> Result<MixtureExample> {
    let path = d.join(META);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ExampleMeta =
        serde_json::from_slice(&text).map_err(|e| Error::Format { file: path.clone(), msg: e.to_string() })?;
    let mut audio = AUDIO_FILES
        .iter()
        .map(|name| AudioWaveform::new(read_f32(&d.join(name), meta.n_samples_audio)?, meta.fs_audio))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let eeg_data = read_f32(&d.join(EEG_FILE), meta.q_channels * meta.n_samples_eeg)?;
    let eeg = EegTrial::from_channel_major(meta.q_channels, eeg_data, meta.fs_eeg, meta.labels, meta.stage)?;
    Ok(MixtureExample {
        mixture: audio.next().expect("three waveforms"),
        target: audio.next().expect("three waveforms"),
        interferer: audio.next().expect("three waveforms"),
        eeg,
        subject_id: meta.subject_id,
        example_id: meta.example_id,
        informative_channels: meta.informative_channels,
    })
}

/// Reads every example directory under `dir`, sorted by name. Plain files are ignored and an
/// empty directory yields an empty list.
pub fn read_dataset(dir: &Path) -> Result<Vec<MixtureExample>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(META).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(|d| read_example(d)).collect()
}

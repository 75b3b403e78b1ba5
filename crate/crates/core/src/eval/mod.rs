//! Evaluation over datasets: per-example SI-SDR and SI-SDRi, aggregate statistics, duplicate
//! diagnostics and channel maps.

mod map;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use map::{render_channel_map, render_quartile_plot, ChannelLayout, ChannelMap, ChannelMarker, ChannelPosition, MarkerClass};

use crate::corpus::MixtureExample;
use crate::error::{Error, Result};
use crate::losses::si_sdr;
use crate::model::{BrainModel, SelectMode};
use crate::signal::AudioWaveform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub example_id: String,
    pub subject_id: String,
    pub si_sdr_db: f64,
    pub mixture_si_sdr_db: f64,
    pub si_sdri_db: f64,
}

/// Order statistics use linear interpolation between ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty set of values"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Aggregate {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Sorted by example id.
    pub examples: Vec<ExampleMetrics>,
    pub si_sdr: Aggregate,
    pub si_sdri: Aggregate,
    /// SI-SDRi per subject.
    pub per_subject: BTreeMap<String, Aggregate>,
    /// Channels kept during inference, if a subset was applied.
    pub subset: Option<Vec<usize>>,
}

/// Scores target estimates (aligned with `examples`) against the clean targets.
pub fn summarize(examples: &[MixtureExample], estimates: &[AudioWaveform], subset: Option<Vec<usize>>) -> Result<EvalSummary> {
    if examples.len() != estimates.len() {
        return Err(Error::shape(format!("{} examples but {} estimates", examples.len(), estimates.len())));
    }
    let mut rows = examples
        .iter()
        .zip(estimates)
        .map(|(ex, est)| {
            let sdr = si_sdr(est.samples(), ex.target.samples())?;
            let mix = si_sdr(ex.mixture.samples(), ex.target.samples())?;
            Ok(ExampleMetrics {
                example_id: ex.example_id.clone(),
                subject_id: ex.subject_id.clone(),
                si_sdr_db: sdr,
                mixture_si_sdr_db: mix,
                si_sdri_db: sdr - mix,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut by_subject: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_subject.entry(r.subject_id.clone()).or_default().push(r.si_sdri_db);
    }
    let per_subject = by_subject.into_iter().map(|(s, v)| Ok((s, Aggregate::of(&v)?))).collect::<Result<_>>()?;
    Ok(EvalSummary {
        si_sdr: Aggregate::of(&rows.iter().map(|r| r.si_sdr_db).collect::<Vec<_>>())?,
        si_sdri: Aggregate::of(&rows.iter().map(|r| r.si_sdri_db).collect::<Vec<_>>())?,
        examples: rows,
        per_subject,
        subset,
    })
}

/// Runs `model` on every example. With a subset, channels outside it are zeroed before
/// inference; an attached selector runs in its inference mode.
pub fn evaluate(model: &BrainModel, examples: &[MixtureExample], subset: Option<&[usize]>) -> Result<EvalSummary> {
    if let Some(&bad) = subset.and_then(|s| s.iter().find(|&&c| c >= model.q())) {
        return Err(Error::invalid(format!("subset channel {bad} out of range for a {}-channel model", model.q())));
    }
    let mode = SelectMode::for_selector(model.selector_config());
    let estimates = examples
        .iter()
        .map(|ex| {
            let eeg = match subset {
                Some(keep) => ex.eeg.zero_except(keep)?,
                None => ex.eeg.clone(),
            };
            Ok(model.separate(&ex.mixture, &eeg, mode)?.swap_remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept = subset.map(|s| {
        let mut u = s.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    });
    summarize(examples, &estimates, kept)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateReport {
    /// Channels chosen exactly once, ascending.
    pub unique: Vec<usize>,
    /// Channels chosen more than once, ascending.
    pub duplicated: Vec<usize>,
}

pub fn duplicate_report(indices: &[usize]) -> DuplicateReport {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in indices {
        *counts.entry(i).or_default() += 1;
    }
    let mut r = DuplicateReport::default();
    for (c, n) in counts {
        if n == 1 {
            r.unique.push(c);
        } else {
            r.duplicated.push(c);
        }
    }
    r
}

//! Optimization schedules and the BASEN, GCS, ResGS and ConvRS training pipelines.

mod run;
mod schedule;

use std::collections::HashMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use run::{MetricRecord, RunLog, Split};
pub use schedule::{lr_at, tau_at, ScheduleConfig, TemperatureSchedule};

use crate::corpus::MixtureExample;
use crate::error::{Error, Result};
use crate::losses::{discretization_loss_var, si_sdr, si_sdr_var, sparsity_loss_var, LossBreakdown, LossWeights};
use crate::model::{BrainModel, ModelConfig, SelectMode, SelectorConfig, SELECTOR_PREFIX};
use crate::nn::{clip_global_norm, global_norm, Adam, Graph, ParamId, Tensor, Var};
use crate::selection::{aggregate_selection, sample_gumbel, ChannelSubset, PaddingPlacement};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResgsConfig {
    pub k: usize,
    /// Residual blend weight `a` of the first stage.
    pub residual: f64,
    pub padding: PaddingPlacement,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// BASEN learning rate in the first stage.
    pub stage1_lr: f64,
    pub selector_lr: f64,
    pub stage2_lr: f64,
    /// Start the second stage with fresh optimizer moments.
    pub fresh_optimizer: bool,
}

impl Default for ResgsConfig {
    fn default() -> Self {
        ResgsConfig {
            k: 4,
            residual: 0.1,
            padding: PaddingPlacement::Leading,
            stage1_epochs: 5,
            stage2_epochs: 60,
            stage1_lr: 2e-4,
            selector_lr: 0.005,
            stage2_lr: 2e-4,
            fresh_optimizer: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcsConfig {
    pub k: usize,
    pub padding: PaddingPlacement,
    pub epochs: usize,
    pub selector_lr: f64,
}

impl Default for GcsConfig {
    fn default() -> Self {
        GcsConfig { k: 4, padding: PaddingPlacement::Leading, epochs: 60, selector_lr: 0.005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvrsConfig {
    /// Sparsity weights, ascending and starting at 0.
    pub gammas: Vec<f64>,
    pub n1: usize,
    /// Joint training epochs of the `gamma = 0` model.
    pub scratch_epochs: usize,
    /// Selector learning rate of the `gamma = 0` model; BASEN uses `schedule.max_lr`.
    pub scratch_selector_lr: f64,
    /// Epochs over which the discretization weight ramps linearly from 0 to `loss.beta` while
    /// the `gamma = 0` model trains.
    pub beta_warmup_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    /// Channels whose mean validation probability reaches this value are selected.
    pub threshold: f64,
}

impl Default for ConvrsConfig {
    fn default() -> Self {
        ConvrsConfig {
            gammas: crate::losses::GAMMA_GRID.to_vec(),
            n1: 3,
            scratch_epochs: 60,
            scratch_selector_lr: 2e-4,
            beta_warmup_epochs: 0,
            stage1_epochs: 5,
            stage2_epochs: 60,
            stage1_lr: 0.005,
            stage2_lr: 2e-4,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossWeights,
    pub schedule: ScheduleConfig,
    pub temperature: TemperatureSchedule,
    pub resgs: ResgsConfig,
    pub gcs: GcsConfig,
    pub convrs: ConvrsConfig,
    /// Trailing fraction of the dataset held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossWeights::default(),
            schedule: ScheduleConfig::default(),
            temperature: TemperatureSchedule::default(),
            resgs: ResgsConfig::default(),
            gcs: GcsConfig::default(),
            convrs: ConvrsConfig::default(),
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedules for the desk-scale corpus with `q` channels. The discretization weight
    /// `k1` is scaled by `q / 128` so the per-channel balance against the sparsity term matches
    /// a 128-channel montage.
    pub fn desk(q: usize) -> Self {
        let d = TrainConfig::default();
        TrainConfig {
            loss: LossWeights { k1: d.loss.k1 * q as f64 / 128.0, ..d.loss },
            schedule: ScheduleConfig { max_lr: 1e-2, total_epochs: 20, ..d.schedule },
            temperature: TemperatureSchedule { total_epochs: 5, ..d.temperature },
            resgs: ResgsConfig { stage1_epochs: 5, stage2_epochs: 5, stage2_lr: 1e-3, ..d.resgs },
            gcs: GcsConfig { epochs: 5, ..d.gcs },
            convrs: ConvrsConfig {
                scratch_epochs: 20,
                scratch_selector_lr: 5e-3,
                beta_warmup_epochs: 10,
                stage2_epochs: 5,
                stage2_lr: 1e-3,
                ..d.convrs
            },
            ..d
        }
    }

    /// Every violated key, prefixed with `prefix` (e.g. `"train"`).
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut bad = Vec::new();
        if let Err(Error::Config(keys)) = self.loss.validate() {
            bad.extend(keys.into_iter().map(|k| format!("{prefix}.{k}")));
        }
        bad.extend(self.schedule.problems(&format!("{prefix}.schedule")));
        bad.extend(self.temperature.problems(&format!("{prefix}.temperature")));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bad.push(format!("{prefix}.val_fraction: must lie in (0, 1)"));
        }
        let r = &self.resgs;
        if r.k == 0 {
            bad.push(format!("{prefix}.resgs.k: must be >= 1"));
        }
        if !(r.residual > 0.0 && r.residual <= 1.0) {
            bad.push(format!("{prefix}.resgs.residual: must lie in (0, 1]"));
        }
        for (key, v) in [("stage1_lr", r.stage1_lr), ("selector_lr", r.selector_lr), ("stage2_lr", r.stage2_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{prefix}.resgs.{key}: must be positive"));
            }
        }
        if self.gcs.k == 0 {
            bad.push(format!("{prefix}.gcs.k: must be >= 1"));
        }
        if !(self.gcs.selector_lr > 0.0) {
            bad.push(format!("{prefix}.gcs.selector_lr: must be positive"));
        }
        let c = &self.convrs;
        if let Err(msg) = check_gammas(&c.gammas) {
            bad.push(format!("{prefix}.convrs.gammas: {msg}"));
        }
        if c.n1 == 0 {
            bad.push(format!("{prefix}.convrs.n1: must be >= 1"));
        }
        for (key, v) in [("scratch_selector_lr", c.scratch_selector_lr), ("stage1_lr", c.stage1_lr), ("stage2_lr", c.stage2_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{prefix}.convrs.{key}: must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&c.threshold) {
            bad.push(format!("{prefix}.convrs.threshold: must lie in [0, 1]"));
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems("train");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn check_gammas(g: &[f64]) -> std::result::Result<(), String> {
    if g.first() != Some(&0.0) {
        return Err("must be non-empty and start at 0".into());
    }
    if g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err("must be strictly ascending".into());
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err("must be finite".into());
    }
    Ok(())
}

/// One example as tensors, plus the mixture's own SI-SDR.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub mix: Tensor,
    pub target: Vec<f64>,
    pub eeg: Tensor,
    pub mix_si_sdr: f64,
}

pub fn prepare(examples: &[MixtureExample]) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            Ok(Prepared {
                mix: ex.mixture.to_tensor(),
                target: ex.target.samples().to_vec(),
                eeg: ex.eeg.to_tensor(),
                mix_si_sdr: si_sdr(ex.mixture.samples(), ex.target.samples())?,
            })
        })
        .collect()
}

/// Leading examples train, the trailing `val_fraction` (at least one) validates.
pub fn split_train_val(n: usize, val_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 examples to train, got {n}")));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    Ok(((0..n - n_val).collect(), (n - n_val..n).collect()))
}

/// Inference mode of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    Bypass,
    GumbelSoft,
    GumbelHard,
    Mask,
}

/// Which parameter groups a stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Basen,
    Selector,
    Both,
}

#[derive(Clone, Debug)]
pub struct StageSpec {
    pub name: String,
    pub epochs: usize,
    pub mode: StageMode,
    pub trainable: Trainable,
    pub basen_lr: f64,
    pub selector_lr: f64,
    pub loss: LossWeights,
    /// Epochs over which `loss.beta` ramps up from 0 during training (validation uses the full value).
    pub beta_warmup_epochs: usize,
}

/// Validation summary after one epoch (entry 0 is before any update).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub si_sdri_db: f64,
    /// Mean `|s - 0.5|` of ConvRS selection vectors, when a mask selector ran.
    pub selection_spread: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub val: Vec<ValPoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BrainModel,
    pub subset: Option<ChannelSubset>,
    pub stages: Vec<StageReport>,
}

impl TrainOutcome {
    pub fn final_val(&self) -> Option<&ValPoint> {
        self.stages.last().and_then(|s| s.val.last())
    }
}

/// Mean validation metrics of `model` under `mode`; also returns ConvRS vectors when present.
pub fn validate(
    model: &BrainModel,
    data: &[Prepared],
    idx: &[usize],
    mode: StageMode,
    tau: f64,
    w: &LossWeights,
) -> Result<(LossBreakdown, f64, Vec<Vec<f64>>)> {
    let mut acc = LossBreakdown { si_sdr_db: 0.0, l_d: 0.0, l_reg: 0.0, total: 0.0 };
    let mut sdri = 0.0;
    let mut vectors = Vec::new();
    for &i in idx {
        let ex = &data[i];
        let mut g = Graph::inference();
        let (_, b, s) = example_loss_var(model, &mut g, ex, select_mode(mode, tau, None), w)?;
        acc.si_sdr_db += b.si_sdr_db;
        acc.l_d += b.l_d;
        acc.l_reg += b.l_reg;
        acc.total += b.total;
        sdri += b.si_sdr_db - ex.mix_si_sdr;
        if let Some(s) = s {
            vectors.push(g.value(s).data().to_vec());
        }
    }
    let n = idx.len().max(1) as f64;
    let mean = LossBreakdown {
        si_sdr_db: acc.si_sdr_db / n,
        l_d: acc.l_d / n,
        l_reg: acc.l_reg / n,
        total: acc.total / n,
    };
    Ok((mean, sdri / n, vectors))
}

fn select_mode(mode: StageMode, tau: f64, noise: Option<&Tensor>) -> SelectMode<'_> {
    match mode {
        StageMode::Bypass => SelectMode::Bypass,
        StageMode::GumbelSoft => SelectMode::GumbelSoft { tau, noise },
        StageMode::GumbelHard => SelectMode::GumbelHard,
        StageMode::Mask => SelectMode::Mask,
    }
}

/// Builds the per-example loss; returns the total, its parts and the ConvRS selection handle.
fn example_loss_var(
    model: &BrainModel,
    g: &mut Graph,
    ex: &Prepared,
    mode: SelectMode<'_>,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown, Option<Var>)> {
    let mix = g.constant(ex.mix.clone());
    let eeg = g.constant(ex.eeg.clone());
    let out = model.forward(g, mix, eeg, mode)?;
    let sdr = si_sdr_var(g, out.sources[0], &ex.target)?;
    let mut total = g.scale(sdr, -w.alpha);
    let (mut l_d, mut l_reg) = (0.0, 0.0);
    if let Some(s) = out.selection {
        let d = discretization_loss_var(g, s, w);
        let r = sparsity_loss_var(g, s, w);
        l_d = g.value(d).item();
        l_reg = g.value(r).item();
        let d = g.scale(d, w.beta);
        let r = g.scale(r, w.gamma);
        total = g.add(total, d);
        total = g.add(total, r);
    }
    let b = LossBreakdown { si_sdr_db: g.value(sdr).item(), l_d, l_reg, total: g.value(total).item() };
    Ok((total, b, out.selection))
}

fn spread(vectors: &[Vec<f64>]) -> Option<f64> {
    let n: usize = vectors.iter().map(Vec::len).sum();
    (n > 0).then(|| vectors.iter().flatten().map(|v| (v - 0.5).abs()).sum::<f64>() / n as f64)
}

/// Runs one training stage in place. Frozen groups stay bit-identical; a non-finite loss or
/// gradient aborts with [`Error::Divergence`] after saving the last good parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    model: &mut BrainModel,
    data: &[Prepared],
    split: &(Vec<usize>, Vec<usize>),
    spec: &StageSpec,
    cfg: &TrainConfig,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
    log: &mut RunLog,
) -> Result<StageReport> {
    let (train_idx, val_idx) = split;
    model.set_basen_frozen(spec.trainable == Trainable::Selector);
    model.set_selector_frozen(spec.trainable == Trainable::Basen);
    let bs = cfg.schedule.batch_size;
    let steps_per_epoch = train_idx.len().div_ceil(bs);
    let total_steps = steps_per_epoch * spec.epochs;
    let gumbel_shape = match model.selector_config() {
        SelectorConfig::Gcs { k, .. } => Some((*k, model.q())),
        _ => None,
    };
    let tau_of = |epoch: f64| tau_at(epoch, &cfg.temperature);
    let uses_tau = spec.mode == StageMode::GumbelSoft;

    let mut report = StageReport { name: spec.name.clone(), val: Vec::new() };
    let mut record_val = |model: &BrainModel, epoch: usize, step: usize, log: &mut RunLog| -> Result<()> {
        let tau = tau_of(epoch as f64);
        let (b, sdri, vectors) = validate(model, data, val_idx, spec.mode, tau, &spec.loss)?;
        let point = ValPoint {
            epoch,
            loss: b.clone(),
            si_sdri_db: sdri,
            selection_spread: spread(&vectors),
            tau: uses_tau.then_some(tau),
        };
        info!("{} epoch {epoch}: val total {:.4} si-sdri {:.2} dB", spec.name, b.total, sdri);
        log.push(MetricRecord::new(&spec.name, Split::Val, epoch, step, &b, 0.0, point.tau).with_si_sdri(sdri))?;
        report.val.push(point);
        Ok(())
    };
    record_val(model, 0, 0, log)?;

    let selector_ids: Vec<bool> = model.store.iter().map(|(_, p)| p.name.starts_with(SELECTOR_PREFIX)).collect();
    let mut order = train_idx.clone();
    let mut step = 0;
    for epoch in 0..spec.epochs {
        order.shuffle(rng);
        for (bi, batch) in order.chunks(bs).enumerate() {
            let frac_epoch = epoch as f64 + bi as f64 / steps_per_epoch as f64;
            let tau = tau_of(frac_epoch);
            let unit = lr_at(step + 1, total_steps + 1, &cfg.schedule) / cfg.schedule.max_lr;
            let ramp = if spec.beta_warmup_epochs > 0 { (frac_epoch / spec.beta_warmup_epochs as f64).min(1.0) } else { 1.0 };
            let weights = LossWeights { beta: spec.loss.beta * ramp, ..spec.loss.clone() };
            let mut grads: HashMap<ParamId, Tensor> = HashMap::new();
            let mut mean = LossBreakdown { si_sdr_db: 0.0, l_d: 0.0, l_reg: 0.0, total: 0.0 };
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let noise = gumbel_shape.filter(|_| uses_tau).map(|(k, q)| sample_gumbel(k, q, rng));
                let mut g = Graph::new();
                let (total, b, _) = example_loss_var(model, &mut g, &data[i], select_mode(spec.mode, tau, noise.as_ref()), &weights)?;
                let scaled = g.scale(total, inv);
                for (id, t) in g.backward(scaled).into_params() {
                    match grads.get_mut(&id) {
                        Some(acc) => acc.add_assign(&t),
                        None => {
                            grads.insert(id, t);
                        }
                    }
                }
                mean.si_sdr_db += b.si_sdr_db * inv;
                mean.l_d += b.l_d * inv;
                mean.l_reg += b.l_reg * inv;
                mean.total += b.total * inv;
            }
            let norm = global_norm(&grads);
            if !mean.total.is_finite() || !norm.is_finite() {
                let path = log.save_checkpoint(model, &format!("{}_last_good", spec.name), serde_json::json!({"step": step}))?;
                return Err(Error::Divergence {
                    step,
                    msg: format!(
                        "{}: loss {} gradient norm {norm}; last good parameters{}",
                        spec.name,
                        mean.total,
                        path.map(|p| format!(" saved to {}", p.display())).unwrap_or_else(|| " kept in memory".into())
                    ),
                });
            }
            clip_global_norm(&mut grads, cfg.schedule.clip_norm);
            let (lb, ls) = (unit * spec.basen_lr, unit * spec.selector_lr);
            opt.step_with(&mut model.store, &grads, |id| if selector_ids[id.0] { ls } else { lb });
            let lr = if spec.trainable == Trainable::Selector { ls } else { lb };
            log.push(MetricRecord::new(&spec.name, Split::Train, epoch + 1, step, &mean, lr, uses_tau.then_some(tau)))?;
            step += 1;
        }
        record_val(model, epoch + 1, step, log)?;
    }
    log.save_checkpoint(model, &spec.name, serde_json::json!({"stage": spec.name, "steps": step}))?;
    model.set_basen_frozen(false);
    model.set_selector_frozen(false);
    Ok(report)
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stage);
    r
}

fn check_data(examples: &[MixtureExample]) -> Result<usize> {
    let first = examples.first().ok_or_else(|| Error::invalid("dataset is empty"))?;
    let (q, t, l) = (first.eeg.n_channels(), first.eeg.n_samples(), first.mixture.len());
    if let Some(ex) = examples.iter().find(|e| e.eeg.n_channels() != q || e.eeg.n_samples() != t || e.mixture.len() != l) {
        return Err(Error::shape(format!("example {} differs in shape from {}", ex.example_id, first.example_id)));
    }
    Ok(q)
}

/// Trains BASEN alone (no selector) from scratch.
pub fn train_basen(model_cfg: &ModelConfig, cfg: &TrainConfig, examples: &[MixtureExample], log: &mut RunLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    let q = check_data(examples)?;
    let data = prepare(examples)?;
    let split = split_train_val(data.len(), cfg.val_fraction)?;
    let mut model = BrainModel::new(model_cfg, q, &SelectorConfig::None, cfg.seed)?;
    let spec = StageSpec {
        name: "basen".into(),
        epochs: cfg.schedule.total_epochs,
        mode: StageMode::Bypass,
        trainable: Trainable::Basen,
        basen_lr: cfg.schedule.max_lr,
        selector_lr: 0.0,
        loss: LossWeights { gamma: 0.0, ..cfg.loss.clone() },
        beta_warmup_epochs: 0,
    };
    let mut opt = Adam::new(cfg.schedule.beta1, cfg.schedule.beta2);
    let report = run_stage(&mut model, &data, &split, &spec, cfg, &mut opt, &mut stage_rng(cfg.seed, 1), log)?;
    Ok(TrainOutcome { model, subset: None, stages: vec![report] })
}

/// Plain Gumbel channel selection trained jointly with a fresh BASEN under the temperature
/// schedule, without residual blending.
pub fn train_gcs(model_cfg: &ModelConfig, cfg: &TrainConfig, examples: &[MixtureExample], log: &mut RunLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    let q = check_data(examples)?;
    let data = prepare(examples)?;
    let split = split_train_val(data.len(), cfg.val_fraction)?;
    let sel = SelectorConfig::Gcs { k: cfg.gcs.k, residual: None, padding: cfg.gcs.padding };
    let mut model = BrainModel::new(model_cfg, q, &sel, cfg.seed)?;
    let spec = StageSpec {
        name: "gcs".into(),
        epochs: cfg.gcs.epochs,
        mode: StageMode::GumbelSoft,
        trainable: Trainable::Both,
        basen_lr: cfg.schedule.max_lr,
        selector_lr: cfg.gcs.selector_lr,
        loss: LossWeights { gamma: 0.0, ..cfg.loss.clone() },
        beta_warmup_epochs: 0,
    };
    let mut opt = Adam::new(cfg.schedule.beta1, cfg.schedule.beta2);
    let report = run_stage(&mut model, &data, &split, &spec, cfg, &mut opt, &mut stage_rng(cfg.seed, 2), log)?;
    let subset = model.gumbel_subset();
    if let Some(s) = &subset {
        log.write_json("subset.json", s)?;
    }
    Ok(TrainOutcome { model, subset, stages: vec![report] })
}

/// Residual Gumbel selection on top of a pretrained BASEN: a joint residual stage under
/// temperature annealing, then a fine-tuning stage with the selector frozen at its argmax.
pub fn train_resgs(
    pretrained: &BrainModel,
    cfg: &TrainConfig,
    examples: &[MixtureExample],
    log: &mut RunLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let q = check_data(examples)?;
    if q != pretrained.q() {
        return Err(Error::shape(format!("pretrained model expects {} channels, dataset has {q}", pretrained.q())));
    }
    let data = prepare(examples)?;
    let split = split_train_val(data.len(), cfg.val_fraction)?;
    let r = &cfg.resgs;
    let mut model = pretrained.clone();
    let sel = SelectorConfig::Gcs { k: r.k, residual: Some(r.residual), padding: r.padding };
    model.attach_selector(&sel, cfg.seed)?;
    let loss = LossWeights { gamma: 0.0, ..cfg.loss.clone() };
    let stage1 = StageSpec {
        name: "resgs_stage1".into(),
        epochs: r.stage1_epochs,
        mode: StageMode::GumbelSoft,
        trainable: Trainable::Both,
        basen_lr: r.stage1_lr,
        selector_lr: r.selector_lr,
        loss: loss.clone(),
        beta_warmup_epochs: 0,
    };
    let mut opt = Adam::new(cfg.schedule.beta1, cfg.schedule.beta2);
    let rep1 = run_stage(&mut model, &data, &split, &stage1, cfg, &mut opt, &mut stage_rng(cfg.seed, 3), log)?;
    let stage2 = StageSpec {
        name: "resgs_stage2".into(),
        epochs: r.stage2_epochs,
        mode: StageMode::GumbelHard,
        trainable: Trainable::Basen,
        basen_lr: r.stage2_lr,
        selector_lr: 0.0,
        loss,
        beta_warmup_epochs: 0,
    };
    if r.fresh_optimizer {
        opt = Adam::new(cfg.schedule.beta1, cfg.schedule.beta2);
    }
    let rep2 = run_stage(&mut model, &data, &split, &stage2, cfg, &mut opt, &mut stage_rng(cfg.seed, 4), log)?;
    let subset = model.gumbel_subset();
    if let Some(s) = &subset {
        log.write_json("subset.json", s)?;
    }
    Ok(TrainOutcome { model, subset, stages: vec![rep1, rep2] })
}

/// One entry of a progressive ConvRS sweep.
#[derive(Clone, Debug)]
pub struct GammaOutcome {
    pub gamma: f64,
    pub outcome: TrainOutcome,
}

/// ConvRS selection vectors of the validation examples, aggregated into a subset.
pub fn convrs_subset(model: &BrainModel, data: &[Prepared], idx: &[usize], threshold: f64, gamma: f64) -> Result<ChannelSubset> {
    let (_, _, vectors) = validate(model, data, idx, StageMode::Mask, 1.0, &LossWeights::default())?;
    aggregate_selection(&vectors, threshold, gamma)
}

/// Progressive sweep over ascending sparsity weights. The `gamma = 0` model trains jointly
/// from scratch; every later weight starts from the previous model, first training only the
/// selector, then only BASEN.
pub fn train_convrs_progressive(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    examples: &[MixtureExample],
    log: &mut RunLog,
) -> Result<Vec<GammaOutcome>> {
    cfg.validate()?;
    let q = check_data(examples)?;
    let data = prepare(examples)?;
    let split = split_train_val(data.len(), cfg.val_fraction)?;
    let c = &cfg.convrs;
    let sel = SelectorConfig::Convrs { n1: c.n1, in_len: examples[0].eeg.n_samples() };
    let mut model = BrainModel::new(model_cfg, q, &sel, cfg.seed)?;
    let mut out: Vec<GammaOutcome> = Vec::new();
    let mut subsets = Vec::new();
    for (gi, &gamma) in c.gammas.iter().enumerate() {
        let tag = format!("convrs_g{gamma:.3}");
        let loss = LossWeights { gamma, ..cfg.loss.clone() };
        let stages = if gi == 0 {
            vec![StageSpec {
                name: format!("{tag}_scratch"),
                epochs: c.scratch_epochs,
                mode: StageMode::Mask,
                trainable: Trainable::Both,
                basen_lr: cfg.schedule.max_lr,
                selector_lr: c.scratch_selector_lr,
                loss,
                beta_warmup_epochs: c.beta_warmup_epochs,
            }]
        } else {
            vec![
                StageSpec {
                    name: format!("{tag}_stage1"),
                    epochs: c.stage1_epochs,
                    mode: StageMode::Mask,
                    trainable: Trainable::Selector,
                    basen_lr: 0.0,
                    selector_lr: c.stage1_lr,
                    loss: loss.clone(),
                    beta_warmup_epochs: 0,
                },
                StageSpec {
                    name: format!("{tag}_stage2"),
                    epochs: c.stage2_epochs,
                    mode: StageMode::Mask,
                    trainable: Trainable::Basen,
                    basen_lr: c.stage2_lr,
                    selector_lr: 0.0,
                    loss,
                    beta_warmup_epochs: 0,
                },
            ]
        };
        let mut reports = Vec::new();
        for (si, spec) in stages.iter().enumerate() {
            let mut opt = Adam::new(cfg.schedule.beta1, cfg.schedule.beta2);
            let mut rng = stage_rng(cfg.seed, 100 + 2 * gi as u64 + si as u64);
            reports.push(run_stage(&mut model, &data, &split, spec, cfg, &mut opt, &mut rng, log)?);
        }
        let subset = convrs_subset(&model, &data, &split.1, c.threshold, gamma)?;
        info!("gamma {gamma}: {} channels selected", subset.indices.len());
        log.write_json(&format!("subsets/{tag}.json"), &subset)?;
        subsets.push(subset.clone());
        out.push(GammaOutcome { gamma, outcome: TrainOutcome { model: model.clone(), subset: Some(subset), stages: reports } });
    }
    log.write_json("subsets.json", &subsets)?;
    Ok(out)
}

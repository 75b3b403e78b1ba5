use std::fs;
use std::path::{Path, PathBuf};

use basen_core::config::{parse_overrides, Paths, RunConfig};
use basen_core::corpus::{generate_dataset, preprocess_example, read_dataset, write_dataset, MixtureExample};
use basen_core::eval::{duplicate_report, evaluate, render_channel_map, render_quartile_plot, ChannelLayout};
use basen_core::model::load_checkpoint;
use basen_core::selection::{ChannelSubset, GammaOrK};
use basen_core::training::{
    split_train_val, train_basen, train_convrs_progressive, train_gcs, train_resgs, RunLog, StageReport, TrainOutcome,
    ValPoint,
};
use basen_core::{Error, Result};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{Cli, Command, EvalArgs, GlobalArgs, Method, ReportArgs, SelectArgs, TrainArgs, RUN_ROOT_ENV};

/// Written to `<run>/summary.json` after training.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub final_checkpoint: PathBuf,
    pub final_val: Option<ValPoint>,
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub gamma: Option<f64>,
    pub checkpoint: PathBuf,
    pub subset: Option<ChannelSubset>,
    pub stages: Vec<StageReport>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format { file: path.to_path_buf(), msg: e.to_string() })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(io_err(path))
}

fn emit(value: Value) {
    println!("{value}");
}

pub fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut base = RunConfig::default();
    if let Some(root) = std::env::var_os(RUN_ROOT_ENV) {
        base.paths = Paths::under(Path::new(&root));
    }
    let doc = g.config.as_deref().map(RunConfig::read_document).transpose()?;
    let mut overrides = parse_overrides(&g.set)?;
    if let Some(seed) = g.seed {
        overrides.push(("synth.seed".into(), seed.to_string()));
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    if let Some(dir) = &g.run_dir {
        overrides.push(("paths.run_dir".into(), serde_json::to_string(dir)?));
    }
    RunConfig::resolve_over(base, doc, &overrides)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth => synth(&load_config(&cli.global)?),
        Command::Preprocess => preprocess(&load_config(&cli.global)?),
        Command::Train(a) => train(&load_config(&cli.global)?, &a),
        Command::Select(a) => select(&a),
        Command::Eval(a) => eval(&load_config(&cli.global)?, &a),
        Command::Report(a) => report(&a),
    }
}

/// Removes example directories left by an earlier write so the dataset holds only new examples.
fn clear_examples(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() && path.join("meta.json").exists() {
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let examples = generate_dataset(&cfg.synth)?;
    let dir = &cfg.paths.data_dir;
    clear_examples(dir)?;
    write_dataset(dir, &examples)?;
    write_json(&dir.join("synth.json"), &cfg.synth)?;
    emit(json!({"command": "synth", "dir": dir, "examples": examples.len()}));
    Ok(())
}

fn load_examples(dir: &Path) -> Result<Vec<MixtureExample>> {
    let examples = read_dataset(dir)?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(format!("no examples found in {}", dir.display())));
    }
    Ok(examples)
}

fn preprocess(cfg: &RunConfig) -> Result<()> {
    let raw = load_examples(&cfg.paths.data_dir)?;
    let p = &cfg.preprocess;
    let mut out = Vec::new();
    for ex in &raw {
        out.extend(preprocess_example(ex, p.seg_len_s, p.a_gamma, p.a_delta)?);
    }
    let dir = &cfg.paths.preprocessed_dir;
    clear_examples(dir)?;
    write_dataset(dir, &out)?;
    write_json(&dir.join("preprocess.json"), p)?;
    emit(json!({"command": "preprocess", "dir": dir, "examples": out.len()}));
    Ok(())
}

fn checkpoint_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{stage}.ckpt"))
}

fn single_entry(dir: &Path, out: TrainOutcome) -> SummaryEntry {
    let last = out.stages.last().map(|s| s.name.clone()).unwrap_or_default();
    SummaryEntry { gamma: None, checkpoint: checkpoint_path(dir, &last), subset: out.subset, stages: out.stages }
}

fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let data = load_examples(&cfg.paths.preprocessed_dir)?;
    let dir = cfg.paths.run_dir.join(a.method.name());
    let mut log = RunLog::create(&dir, cfg)?;
    let (model_cfg, tc) = (&cfg.model, &cfg.train);
    let mut entries = match a.method {
        Method::Basen => vec![single_entry(&dir, train_basen(model_cfg, tc, &data, &mut log)?)],
        Method::Gcs => vec![single_entry(&dir, train_gcs(model_cfg, tc, &data, &mut log)?)],
        Method::Resgs => {
            let mut entries = Vec::new();
            let base = match &a.pretrained {
                Some(p) => load_checkpoint(p)?.0,
                None => {
                    let out = train_basen(model_cfg, tc, &data, &mut log)?;
                    let model = out.model.clone();
                    entries.push(single_entry(&dir, out));
                    model
                }
            };
            entries.push(single_entry(&dir, train_resgs(&base, tc, &data, &mut log)?));
            entries
        }
        Method::Convrs => train_convrs_progressive(model_cfg, tc, &data, &mut log)?
            .into_iter()
            .map(|g| {
                let mut e = single_entry(&dir, g.outcome);
                e.gamma = Some(g.gamma);
                e
            })
            .collect(),
    };
    let last = entries.last_mut().expect("every method trains at least one model");
    let summary = RunSummary {
        method: a.method.name().into(),
        final_checkpoint: last.checkpoint.clone(),
        final_val: last.stages.last().and_then(|s| s.val.last()).cloned(),
        entries,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    info!("run written to {}", dir.display());
    emit(json!({
        "command": "train",
        "method": summary.method,
        "run": dir,
        "checkpoint": summary.final_checkpoint,
        "val_si_sdri_db": summary.final_val.as_ref().map(|v| v.si_sdri_db),
    }));
    Ok(())
}

fn pick_subset(run: &Path, gamma: Option<f64>) -> Result<ChannelSubset> {
    let single = run.join("subset.json");
    if single.exists() {
        return read_json(&single);
    }
    let sweep = run.join("subsets.json");
    if !sweep.exists() {
        return Err(Error::InvalidArgument(format!("{} holds no channel subset", run.display())));
    }
    let all: Vec<ChannelSubset> = read_json(&sweep)?;
    let gamma_of = |s: &ChannelSubset| match s.gamma_or_k {
        GammaOrK::Gamma(g) => g,
        GammaOrK::K(_) => f64::NAN,
    };
    match gamma {
        Some(g) => all.into_iter().find(|s| (gamma_of(s) - g).abs() < 1e-9).ok_or_else(|| {
            Error::InvalidArgument(format!("no subset for gamma {g} in {}", sweep.display()))
        }),
        None => all
            .iter()
            .rev()
            .find(|s| !s.indices.is_empty())
            .or(all.last())
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("{} is empty", sweep.display()))),
    }
}

fn select(a: &SelectArgs) -> Result<()> {
    let subset = pick_subset(&a.run, a.gamma)?;
    write_json(&a.run.join("selection.json"), &subset)?;
    emit(json!({"subset": subset, "duplicates": duplicate_report(&subset.indices)}));
    Ok(())
}

fn read_subset_file(path: &Path) -> Result<Vec<usize>> {
    let v: Value = read_json(path)?;
    if v.is_array() {
        serde_json::from_value(v).map_err(|e| Error::Format { file: path.to_path_buf(), msg: e.to_string() })
    } else {
        let s: ChannelSubset =
            serde_json::from_value(v).map_err(|e| Error::Format { file: path.to_path_buf(), msg: e.to_string() })?;
        Ok(s.indices)
    }
}

fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.ckpt)?;
    let data = load_examples(a.data.as_deref().unwrap_or(&cfg.paths.preprocessed_dir))?;
    let subset = a.subset.as_deref().map(read_subset_file).transpose()?;
    let summary = evaluate(&model, &data, subset.as_deref())?;
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    emit(serde_json::to_value(&summary)?);
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let cfg = RunConfig::resolve(Some(read_json(&a.run.join("config.json"))?), &[])?;
    let summary: RunSummary = read_json(&a.run.join("summary.json"))?;
    let out = a.run.join("report");
    let (model, _) = load_checkpoint(&summary.final_checkpoint)?;
    let data = load_examples(&cfg.paths.preprocessed_dir)?;
    let (_, val) = split_train_val(data.len(), cfg.train.val_fraction)?;
    let val_examples: Vec<_> = val.iter().map(|&i| data[i].clone()).collect();
    let eval = evaluate(&model, &val_examples, None)?;
    write_json(&out.join("eval.json"), &eval)?;
    render_quartile_plot(&eval, &out.join("si_sdri_quartiles.svg"))?;

    let layout = match &cfg.paths.layout_csv {
        Some(p) => ChannelLayout::from_csv(p)?,
        None => ChannelLayout::grid(model.q()),
    };
    let mut maps = Vec::new();
    for e in &summary.entries {
        if let Some(s) = &e.subset {
            let name = match e.gamma {
                Some(g) => format!("channel_map_g{g:.3}.svg"),
                None => "channel_map.svg".to_string(),
            };
            let path = out.join(&name);
            render_channel_map(&s.indices, model.q(), &layout, &path)?;
            maps.push(path);
        }
    }
    let selection = a.run.join("selection.json");
    if selection.exists() {
        let s: ChannelSubset = read_json(&selection)?;
        let path = out.join("channel_map_selection.svg");
        render_channel_map(&s.indices, model.q(), &layout, &path)?;
        maps.push(path);
    }

    let stages: Vec<Value> = summary
        .entries
        .iter()
        .flat_map(|e| {
            e.stages.iter().map(move |s| {
                let last = s.val.last();
                json!({
                    "gamma": e.gamma,
                    "stage": s.name,
                    "epochs": s.val.len().saturating_sub(1),
                    "val_total": last.map(|v| v.loss.total),
                    "val_si_sdri_db": last.map(|v| v.si_sdri_db),
                    "subset_size": e.subset.as_ref().map(|s| s.indices.len()),
                    "duplicate_count": e.subset.as_ref().map(|s| s.duplicate_count),
                })
            })
        })
        .collect();
    let metrics = json!({
        "method": summary.method,
        "stages": stages,
        "val_si_sdri_median_db": eval.si_sdri.median,
        "val_si_sdri_mean_db": eval.si_sdri.mean,
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    emit(json!({"command": "report", "dir": out, "channel_maps": maps, "val_si_sdri_median_db": eval.si_sdri.median}));
    Ok(())
}

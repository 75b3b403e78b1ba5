//! One JSON document configuring a whole run. Loading layers explicit values over the
//! defaults, rejects unknown keys and reports every invalid key at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub seg_len_s: f64,
    pub a_gamma: f64,
    pub a_delta: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { seg_len_s: 2.0, a_gamma: 0.5, a_delta: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Raw synthetic dataset.
    pub data_dir: PathBuf,
    /// Filtered, MUA-transformed and segmented dataset used for training.
    pub preprocessed_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Optional `channel_index,label,x,y` electrode layout; a grid is used otherwise.
    pub layout_csv: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths::under(Path::new("runs"))
    }
}

impl Paths {
    /// Default locations below `root`.
    pub fn under(root: &Path) -> Self {
        Paths {
            data_dir: root.join("data/raw"),
            preprocessed_dir: root.join("data/mua"),
            run_dir: root.join("run"),
            layout_csv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    /// Desk scale: 16 channels, the small model and short schedules.
    fn default() -> Self {
        let synth = SynthConfig::default();
        RunConfig {
            train: TrainConfig::desk(synth.q_channels),
            synth,
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::desk(),
            paths: Paths::default(),
        }
    }
}

/// Removes keys of `user` absent from `reference`, recording their dotted paths.
fn strip_unknown(user: &mut Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(r)) = (user, reference) {
        u.retain(|k, v| {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                Some(rv) => {
                    strip_unknown(v, rv, &key, out);
                    true
                }
                None => {
                    out.push(format!("{key}: unknown key"));
                    false
                }
            }
        });
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn lookup_mut<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(root, |v, part| v.as_object_mut()?.get_mut(part))
}

fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, sub) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(sub, &key, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    /// Defaults overlaid with `doc`, then `overrides` (`key=value`, value parsed as JSON and
    /// otherwise taken as a string). The result is validated.
    pub fn resolve(doc: Option<Value>, overrides: &[(String, String)]) -> Result<Self> {
        Self::resolve_over(RunConfig::default(), doc, overrides)
    }

    /// Like [`RunConfig::resolve`] with `base` in place of the defaults.
    pub fn resolve_over(base: RunConfig, doc: Option<Value>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = serde_json::to_value(base)?;
        let reference = tree.clone();
        let mut bad = Vec::new();
        if let Some(mut doc) = doc {
            if !doc.is_object() {
                return Err(Error::Config(vec!["<root>: config must be a JSON object".into()]));
            }
            strip_unknown(&mut doc, &reference, "", &mut bad);
            merge(&mut tree, doc);
        }
        for (key, raw) in overrides {
            let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let Some(slot_ref) = key.split('.').try_fold(&reference, |v, part| v.get(part)) else {
                bad.push(format!("{key}: unknown key"));
                continue;
            };
            if slot_ref.is_object() && !value.is_object() {
                bad.push(format!("{key}: is a section, set one of its keys"));
                continue;
            }
            strip_unknown(&mut value, slot_ref, key, &mut bad);
            if let Some(slot) = lookup_mut(&mut tree, key) {
                merge(slot, value);
            }
        }
        match Self::from_tree(tree) {
            Ok(cfg) => {
                bad.extend(cfg.problems());
                if bad.is_empty() {
                    Ok(cfg)
                } else {
                    Err(Error::Config(bad))
                }
            }
            Err(Error::Config(keys)) => {
                bad.extend(keys);
                Err(Error::Config(bad))
            }
            Err(e) => Err(e),
        }
    }

    fn from_tree(tree: Value) -> Result<Self> {
        let mut bad = Vec::new();
        if let Value::Object(m) = &tree {
            for (section, v) in m {
                let res = match section.as_str() {
                    "synth" => serde_json::from_value::<SynthConfig>(v.clone()).map(drop),
                    "preprocess" => serde_json::from_value::<PreprocessConfig>(v.clone()).map(drop),
                    "model" => serde_json::from_value::<ModelConfig>(v.clone()).map(drop),
                    "train" => serde_json::from_value::<TrainConfig>(v.clone()).map(drop),
                    "paths" => serde_json::from_value::<Paths>(v.clone()).map(drop),
                    _ => Ok(()),
                };
                if let Err(e) = res {
                    bad.push(format!("{section}: {e}"));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Reads a JSON document without resolving it.
    pub fn read_document(path: &Path) -> Result<Value> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::Format { file: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::resolve(Some(Self::read_document(path)?), overrides)
    }

    /// Every invalid key across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for r in [self.synth.validate(), self.model.validate()] {
            if let Err(Error::Config(keys)) = r {
                bad.extend(keys);
            }
        }
        bad.extend(self.train.problems("train"));
        let p = &self.preprocess;
        if !(p.seg_len_s > 0.0 && p.seg_len_s <= self.synth.seg_len_s) {
            bad.push("preprocess.seg_len_s: must lie in (0, synth.seg_len_s]".into());
        }
        for (k, v) in [("a_gamma", p.a_gamma), ("a_delta", p.a_delta)] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("preprocess.{k}: must be finite and >= 0"));
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Sets the seed of both the corpus generator and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Every leaf key with its default value, in document order.
    pub fn default_keys() -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten(&serde_json::to_value(RunConfig::default()).expect("serializable"), "", &mut out);
        out
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// Parses `key=value` pairs.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(vec![format!("{s}: expected key=value")]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_round_trip_and_are_explicit() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let keys = RunConfig::default_keys();
        assert!(keys.iter().any(|(k, v)| k == "train.loss.k1" && v == "12.5"));
        assert!(keys.iter().any(|(k, _)| k == "synth.seed"));
        assert!(keys.iter().any(|(k, v)| k == "paths.layout_csv" && v == "null"));
    }

    #[test]
    fn file_values_then_overrides() {
        let doc = json!({"train": {"schedule": {"max_lr": 0.5}}, "synth": {"n_examples": 7}});
        let o = vec![("train.schedule.max_lr".to_string(), "0.25".to_string()), ("paths.run_dir".into(), "x/y".into())];
        let cfg = RunConfig::resolve(Some(doc), &o).unwrap();
        assert_eq!(cfg.train.schedule.max_lr, 0.25);
        assert_eq!(cfg.synth.n_examples, 7);
        assert_eq!(cfg.train.schedule.total_epochs, 20);
        assert_eq!(cfg.paths.run_dir, PathBuf::from("x/y"));
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let doc = json!({"synth": {"q": 3}, "bogus": 1, "train": {"schedule": {"lr": 2}}});
        match RunConfig::resolve(Some(doc), &[("model.widht".into(), "3".into())]) {
            Err(Error::Config(keys)) => {
                assert_eq!(keys.len(), 4, "{keys:?}");
                for k in ["synth.q", "bogus", "train.schedule.lr", "model.widht"] {
                    assert!(keys.iter().any(|x| x.starts_with(&format!("{k}:"))), "{k} missing from {keys:?}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_all_listed() {
        let doc = json!({
            "synth": {"n_examples": 0},
            "train": {"convrs": {"gammas": [0.0, 0.2, 0.1]}, "schedule": {"batch_size": 0}},
            "preprocess": {"a_gamma": -1.0}
        });
        match RunConfig::resolve(Some(doc), &[]) {
            Err(Error::Config(keys)) => {
                for k in ["synth.n_examples", "train.convrs.gammas", "train.schedule.batch_size", "preprocess.a_gamma"] {
                    assert!(keys.iter().any(|x| x.starts_with(k)), "{k} missing from {keys:?}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_invalid_keys_are_reported_together() {
        let doc = json!({"extra": true, "train": {"convrs": {"gammas": [0.0, 0.2, 0.1]}}});
        match RunConfig::resolve(Some(doc), &[]) {
            Err(Error::Config(keys)) => {
                assert!(keys.iter().any(|k| k.starts_with("extra:")), "{keys:?}");
                assert!(keys.iter().any(|k| k.starts_with("train.convrs.gammas:")), "{keys:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_errors_name_the_section() {
        match RunConfig::resolve(Some(json!({"model": {"embed_dim": "wide"}})), &[]) {
            Err(Error::Config(keys)) => assert!(keys[0].starts_with("model:"), "{keys:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_applies_to_both_generators() {
        let c = RunConfig::default().with_seed(7);
        assert_eq!((c.synth.seed, c.train.seed), (7, 7));
        assert!(parse_overrides(&["a=b".into()]).is_ok());
        assert!(parse_overrides(&["ab".into()]).is_err());
    }
}

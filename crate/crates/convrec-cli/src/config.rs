//! Flat key-value configuration with `[section]` headers, merged as
//! defaults <- file <- `--set section.key=value` flags.

use anyhow::{bail, Context, Result};
use convrec_core::corpus::GenConfig;
use convrec_core::dialogue::{DialogueConfig, DialogueTrainConfig, GenConfig as DecodeConfig};
use convrec_core::rec::{Ablation, ModelConfig, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<(String, String), String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))?;
            entries.insert((section.clone(), key.trim().to_string()), value.trim().to_string());
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("cannot parse config {}", path.display()))
    }

    /// Applies one `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .with_context(|| format!("expected section.key=value, got {assignment:?}"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .with_context(|| format!("expected section.key on the left of `=`, got {path:?}"))?;
        self.entries
            .insert((section.trim().to_string(), key.trim().to_string()), value.trim().to_string());
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|s| s.as_str())
    }

    /// Renders the resolved configuration back to the flat format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for ((section, key), value) in &self.entries {
            if current != Some(section) {
                if current.is_some() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = Some(section);
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Unknown keys are configuration errors; every section consumer
    /// registers the keys it understands.
    pub fn check_known(&self, known: &[(&str, &[&str])]) -> Result<()> {
        for (section, key) in self.entries.keys() {
            let ok = known
                .iter()
                .any(|(s, keys)| s == section && keys.contains(&key.as_str()));
            if !ok {
                bail!("unknown config key [{section}] {key}");
            }
        }
        Ok(())
    }
}

fn field<T: std::str::FromStr>(map: &ConfigMap, section: &str, key: &str, target: &mut T) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(raw) = map.get(section, key) {
        *target = raw
            .parse()
            .map_err(|e| anyhow::anyhow!("bad value for [{section}] {key}: {e}"))?;
    }
    Ok(())
}

pub const MODEL_KEYS: &[&str] = &[
    "dim",
    "gnn_layers",
    "entity_temp",
    "item_temp",
    "entity_divisor",
    "word_divisor",
    "word_threshold",
    "entity_threshold",
    "entity_aspect_scale",
    "word_aspect_scale",
    "alignment_weight",
    "alignment_loss_weight",
    "include_system_mentions",
    "ablation",
];

pub const TRAIN_KEYS: &[&str] = &["learning_rate", "batch_size", "epochs", "mapper_pretrain_epochs", "seed"];

pub const DIALOGUE_KEYS: &[&str] =
    &["dim", "n_heads", "enc_layers", "dec_layers", "ff_dim", "max_context_len"];

pub const DIALOGUE_TRAIN_KEYS: &[&str] = &["learning_rate", "batch_size", "epochs", "seed"];

pub const GEN_KEYS: &[&str] = &[
    "n_users",
    "sessions_per_user",
    "turns_per_session",
    "n_entities",
    "n_items",
    "n_words",
    "n_clusters",
    "history_weight",
    "short_user_fraction",
    "short_user_sessions",
];

pub const DECODE_KEYS: &[&str] = &["max_len", "beam"];

pub fn model_config(map: &ConfigMap) -> Result<ModelConfig> {
    let mut c = ModelConfig::default();
    field(map, "model", "dim", &mut c.dim)?;
    field(map, "model", "gnn_layers", &mut c.gnn_layers)?;
    field(map, "model", "entity_temp", &mut c.entity_temp)?;
    field(map, "model", "item_temp", &mut c.item_temp)?;
    field(map, "model", "entity_divisor", &mut c.entity_divisor)?;
    field(map, "model", "word_divisor", &mut c.word_divisor)?;
    field(map, "model", "word_threshold", &mut c.word_threshold)?;
    field(map, "model", "entity_threshold", &mut c.entity_threshold)?;
    field(map, "model", "entity_aspect_scale", &mut c.entity_aspect_scale)?;
    field(map, "model", "word_aspect_scale", &mut c.word_aspect_scale)?;
    field(map, "model", "alignment_weight", &mut c.alignment_weight)?;
    field(map, "model", "alignment_loss_weight", &mut c.alignment_loss_weight)?;
    field(map, "model", "include_system_mentions", &mut c.include_system_mentions)?;
    if let Some(raw) = map.get("model", "ablation") {
        c.ablation = Ablation::parse(raw).map_err(|e| anyhow::anyhow!(e))?;
    }
    if c.dim == 0 || c.gnn_layers == 0 {
        bail!("[model] dim and gnn_layers must be positive");
    }
    if c.entity_temp <= 0.0 || c.item_temp <= 0.0 {
        bail!("[model] temperatures must be positive");
    }
    if c.entity_divisor <= 0.0 || c.word_divisor <= 0.0 {
        bail!("[model] divisors must be positive");
    }
    if !(-1.0..=1.0).contains(&c.word_threshold) || !(-1.0..=1.0).contains(&c.entity_threshold) {
        bail!("[model] thresholds must lie in [-1, 1]");
    }
    if c.alignment_weight < 0.0 || c.alignment_loss_weight < 0.0 {
        bail!("[model] alignment weights must be nonnegative");
    }
    Ok(c)
}

pub fn train_config(map: &ConfigMap) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    field(map, "train", "learning_rate", &mut c.learning_rate)?;
    field(map, "train", "batch_size", &mut c.batch_size)?;
    field(map, "train", "epochs", &mut c.epochs)?;
    field(map, "train", "mapper_pretrain_epochs", &mut c.mapper_pretrain_epochs)?;
    field(map, "train", "seed", &mut c.seed)?;
    Ok(c)
}

/// `vocab_size` and `user_dim` come from data and the rec checkpoint, not
/// the file.
pub fn dialogue_config(map: &ConfigMap, vocab_size: usize, user_dim: usize) -> Result<DialogueConfig> {
    let mut c = DialogueConfig { vocab_size, user_dim, ..DialogueConfig::default() };
    field(map, "dialogue", "dim", &mut c.dim)?;
    field(map, "dialogue", "n_heads", &mut c.n_heads)?;
    field(map, "dialogue", "enc_layers", &mut c.enc_layers)?;
    field(map, "dialogue", "dec_layers", &mut c.dec_layers)?;
    field(map, "dialogue", "ff_dim", &mut c.ff_dim)?;
    field(map, "dialogue", "max_context_len", &mut c.max_context_len)?;
    Ok(c)
}

pub fn dialogue_train_config(map: &ConfigMap) -> Result<DialogueTrainConfig> {
    let mut c = DialogueTrainConfig::default();
    field(map, "dialogue_train", "learning_rate", &mut c.learning_rate)?;
    field(map, "dialogue_train", "batch_size", &mut c.batch_size)?;
    field(map, "dialogue_train", "epochs", &mut c.epochs)?;
    field(map, "dialogue_train", "seed", &mut c.seed)?;
    Ok(c)
}

pub fn gen_config(map: &ConfigMap) -> Result<GenConfig> {
    let mut c = GenConfig::default();
    field(map, "gen", "n_users", &mut c.n_users)?;
    field(map, "gen", "sessions_per_user", &mut c.sessions_per_user)?;
    field(map, "gen", "turns_per_session", &mut c.turns_per_session)?;
    field(map, "gen", "n_entities", &mut c.n_entities)?;
    field(map, "gen", "n_items", &mut c.n_items)?;
    field(map, "gen", "n_words", &mut c.n_words)?;
    field(map, "gen", "n_clusters", &mut c.n_clusters)?;
    field(map, "gen", "history_weight", &mut c.history_weight)?;
    field(map, "gen", "short_user_fraction", &mut c.short_user_fraction)?;
    field(map, "gen", "short_user_sessions", &mut c.short_user_sessions)?;
    Ok(c)
}

pub fn decode_config(map: &ConfigMap) -> Result<DecodeConfig> {
    let mut c = DecodeConfig::default();
    field(map, "decode", "max_len", &mut c.max_len)?;
    if let Some(raw) = map.get("decode", "beam") {
        c.beam = if raw == "none" || raw == "0" {
            None
        } else {
            Some(raw.parse().map_err(|e| anyhow::anyhow!("bad value for [decode] beam: {e}"))?)
        };
    }
    Ok(c)
}

pub fn check_all_known(map: &ConfigMap) -> Result<()> {
    map.check_known(&[
        ("model", MODEL_KEYS),
        ("train", TRAIN_KEYS),
        ("dialogue", DIALOGUE_KEYS),
        ("dialogue_train", DIALOGUE_TRAIN_KEYS),
        ("gen", GEN_KEYS),
        ("decode", DECODE_KEYS),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_merge() {
        let mut map = ConfigMap::parse("[model]\ndim = 64\n# comment\n[train]\nepochs = 7\n").unwrap();
        map.set("model.dim=32").unwrap();
        let model = model_config(&map).unwrap();
        assert_eq!(model.dim, 32);
        let train = train_config(&map).unwrap();
        assert_eq!(train.epochs, 7);
        check_all_known(&map).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let map = ConfigMap::parse("[model]\nnope = 3\n").unwrap();
        assert!(check_all_known(&map).is_err());
    }

    #[test]
    fn render_round_trips() {
        let map = ConfigMap::parse("[gen]\nn_users = 5\n[model]\ndim = 16\n").unwrap();
        let rendered = map.render();
        let reparsed = ConfigMap::parse(&rendered).unwrap();
        assert_eq!(map.render(), reparsed.render());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let mut map = ConfigMap::default();
        map.set("model.entity_temp=-0.5").unwrap();
        assert!(model_config(&map).is_err());
        let mut map = ConfigMap::default();
        map.set("model.word_threshold=2.0").unwrap();
        assert!(model_config(&map).is_err());
    }

    #[test]
    fn ablation_strings_parse() {
        let mut map = ConfigMap::default();
        map.set("model.ablation=no_entity+no_lookalike").unwrap();
        let model = model_config(&map).unwrap();
        assert!(model.ablation.no_entity && model.ablation.no_lookalike);
        assert!(model_config(&{
            let mut m = ConfigMap::default();
            m.set("model.ablation=bogus").unwrap();
            m
        })
        .is_err());
    }
}

//! Model and training hyperparameters with their grid-searched defaults.

use serde::{Deserialize, Serialize};

/// Aspect/view switches for ablation runs. Disabling a view zeroes its
/// representations (the computation is not built at all, so no gradient
/// flows through the corresponding parameters).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_entity: bool,
    pub no_word: bool,
    pub no_item: bool,
    pub no_historical: bool,
    pub no_lookalike: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        no_entity: false,
        no_word: false,
        no_item: false,
        no_historical: false,
        no_lookalike: false,
    };

    /// Current-session-only model: no historical and no look-alike aspect.
    pub const CURRENT_ONLY: Ablation = Ablation {
        no_entity: false,
        no_word: false,
        no_item: false,
        no_historical: true,
        no_lookalike: true,
    };

    pub fn parse(switches: &str) -> Result<Ablation, String> {
        let mut ablation = Ablation::default();
        for part in switches.split('+').map(str::trim).filter(|s| !s.is_empty()) {
            match part {
                "baseline" | "full" => {}
                "no_entity" => ablation.no_entity = true,
                "no_word" => ablation.no_word = true,
                "no_item" => ablation.no_item = true,
                "no_historical" => ablation.no_historical = true,
                "no_lookalike" => ablation.no_lookalike = true,
                other => return Err(format!("unknown ablation switch {other:?}")),
            }
        }
        Ok(ablation)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_entity {
            parts.push("no_entity");
        }
        if self.no_word {
            parts.push("no_word");
        }
        if self.no_item {
            parts.push("no_item");
        }
        if self.no_historical {
            parts.push("no_historical");
        }
        if self.no_lookalike {
            parts.push("no_lookalike");
        }
        if parts.is_empty() {
            "baseline".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding dimension of the recommendation side.
    pub dim: usize,
    /// Graph convolution depth for both encoders.
    pub gnn_layers: usize,
    /// Temperature of the historical session attention, entity view.
    pub entity_temp: f64,
    /// Temperature of the historical session attention, item view.
    pub item_temp: f64,
    /// Divisor bounding the historical coefficient of the entity view.
    pub entity_divisor: f64,
    /// Divisor bounding the historical coefficient of the word view.
    pub word_divisor: f64,
    /// Clip threshold of the word-view look-alike similarity.
    pub word_threshold: f64,
    /// Clip threshold of the entity-view look-alike similarity; also the
    /// item-view intent-similarity threshold.
    pub entity_threshold: f64,
    /// Scale of the look-alike aspect in the entity view.
    pub entity_aspect_scale: f64,
    /// Scale of the look-alike aspect in the word view.
    pub word_aspect_scale: f64,
    /// Negative-pair weight inside the alignment loss.
    pub alignment_weight: f64,
    /// Weight of the summed alignment losses in the joint objective.
    pub alignment_loss_weight: f64,
    /// Whether system-side mentions count toward contexts.
    pub include_system_mentions: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            gnn_layers: 1,
            entity_temp: 0.1,
            item_temp: 0.1,
            entity_divisor: 6.0,
            word_divisor: 6.0,
            word_threshold: 0.85,
            entity_threshold: 0.85,
            entity_aspect_scale: 1.0,
            word_aspect_scale: 1.0,
            alignment_weight: 0.1,
            alignment_loss_weight: 0.025,
            include_system_mentions: true,
            ablation: Ablation::NONE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mapper_pretrain_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 25,
            mapper_pretrain_epochs: 3,
            seed: 17,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_switch_parsing() {
        assert_eq!(Ablation::parse("baseline").unwrap(), Ablation::NONE);
        let a = Ablation::parse("no_lookalike+no_historical").unwrap();
        assert!(a.no_lookalike && a.no_historical && !a.no_entity);
        assert_eq!(a, Ablation::CURRENT_ONLY);
        assert!(Ablation::parse("no_such_switch").is_err());
        assert_eq!(a.label(), "no_historical+no_lookalike");
    }
}

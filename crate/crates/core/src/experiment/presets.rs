use super::config::{ConfigFormat, ExperimentConfig};
use crate::error::Result;

/// A bundled configuration.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

impl Preset {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(self.text, ConfigFormat::Toml)
    }
}

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "thm21_decay",
        summary: "exponential decay of bumped-weight solutions, Gaussian shell, n = 1",
        text: include_str!("../../presets/thm21_decay.toml"),
    },
    Preset {
        name: "thm22_avoid",
        summary: "support avoidance for a (0,2)-form, n = 2, N = 16",
        text: include_str!("../../presets/thm22_avoid.toml"),
    },
    Preset {
        name: "thm31_approx",
        summary: "approximation of slowly decaying data, n = 1",
        text: include_str!("../../presets/thm31_approx.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn presets_parse_validate_and_have_distinct_kinds() {
        let mut kinds = HashSet::new();
        for p in &PRESETS {
            let cfg = p.config().unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert!(kinds.insert(cfg.experiment.theorem()), "{} repeats a theorem", p.name);
        }
        assert!(find("thm21_decay").is_some());
        assert!(find("nope").is_none());
    }

    #[test]
    fn decay_preset_has_seven_ks() {
        let cfg = find("thm21_decay").unwrap().config().unwrap();
        assert_eq!(cfg.geometry.ks, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }
}

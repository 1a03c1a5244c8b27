//! Experiment configuration: one JSON document, optionally overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use plver_core::model::{TopologyParams, TraceParams};
use plver_core::simulator::{DispatchMode, Strategy};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    /// A topology JSON file.
    File(PathBuf),
    /// Synthesized; server bandwidth is sized to the trace's mean demand, so
    /// `target_demand` is ignored.
    Synth(TopologyParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    /// A line-delimited JSON trace.
    File(PathBuf),
    Synth(TraceParams),
}

/// How a group's placement is scored in the rank histograms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    /// Locality level of the assigned cluster (same ISP and city = 1, ...).
    #[default]
    TableLevel,
    /// Position of the assigned cluster in the group's own list, capped at 6.
    ListPosition,
}

/// `seed` and `window_secs` are authoritative: they replace the
/// corresponding fields of any synthesized source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_topology")]
    pub topology: TopologySource,
    #[serde(default = "default_trace")]
    pub trace: TraceSource,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_fluctuations")]
    pub fluctuations: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_window_secs")]
    pub window_secs: u64,
    /// Segment duration. Recorded for reference; traffic accounting counts
    /// whole windows and does not depend on it.
    #[serde(default = "default_segment_secs")]
    pub segment_secs: u64,
    /// Replay only the first `windows` windows of the trace.
    #[serde(default)]
    pub windows: Option<usize>,
    #[serde(default)]
    pub rank_metric: RankMetric,
    #[serde(default)]
    pub dispatch: DispatchMode,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_topology() -> TopologySource {
    TopologySource::Synth(TopologyParams { groups: 80, clusters: 40, ..TopologyParams::default() })
}

fn default_trace() -> TraceSource {
    TraceSource::Synth(TraceParams { channels: 60, windows: 12, mean_total_viewers: 3000.0, ..TraceParams::default() })
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_alphas() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}

fn default_fluctuations() -> Vec<f64> {
    vec![0.0]
}

fn default_window_secs() -> u64 {
    300
}

fn default_segment_secs() -> u64 {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: default_topology(),
            trace: default_trace(),
            strategies: default_strategies(),
            alphas: default_alphas(),
            fluctuations: default_fluctuations(),
            seed: 0,
            window_secs: default_window_secs(),
            segment_secs: default_segment_secs(),
            windows: None,
            rank_metric: RankMetric::default(),
            dispatch: DispatchMode::default(),
            out: default_out(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alphas: Option<Vec<f64>>,
    pub strategies: Option<Vec<Strategy>>,
    pub fluctuations: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config json: {e}")))
    }

    /// Reads `path`. Relative source and output paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let TopologySource::File(p) = &mut cfg.topology {
            *p = base.join(&*p);
        }
        if let TraceSource::File(p) = &mut cfg.trace {
            *p = base.join(&*p);
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(a) = o.alphas {
            self.alphas = a;
        }
        if let Some(s) = o.strategies {
            self.strategies = s;
        }
        if let Some(f) = o.fluctuations {
            self.fluctuations = f;
        }
        if let Some(out) = o.out {
            self.out = out;
        }
    }

    /// Checks every field; the error names the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: String, why: String| Err(CliError::Config(format!("{field}: {why}")));
        if self.strategies.is_empty() {
            return bad("strategies".into(), "at least one strategy is required".into());
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return bad(format!("strategies[{i}]"), format!("{s} is listed twice"));
            }
        }
        if self.alphas.is_empty() {
            return bad("alphas".into(), "at least one value is required".into());
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("alphas[{i}]"), format!("{a} is outside (0, 1]"));
            }
        }
        if self.fluctuations.is_empty() {
            return bad("fluctuations".into(), "at least one value is required (use 0 for none)".into());
        }
        for (i, &f) in self.fluctuations.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("fluctuations[{i}]"), format!("{f} is outside [0, 1]"));
            }
        }
        if self.window_secs == 0 {
            return bad("window_secs".into(), "must be positive".into());
        }
        if self.segment_secs == 0 || self.segment_secs > self.window_secs {
            return bad("segment_secs".into(), format!("must be in 1..={}", self.window_secs));
        }
        if self.windows == Some(0) {
            return bad("windows".into(), "must be positive when set".into());
        }
        if let TopologySource::Synth(p) = &self.topology {
            if p.groups == 0 || p.clusters == 0 {
                return bad("topology.synth".into(), "groups and clusters must be positive".into());
            }
            if p.clusters > p.groups {
                return bad("topology.synth.clusters".into(), "must not exceed groups".into());
            }
        }
        if let TraceSource::Synth(p) = &self.trace {
            if p.channels == 0 || p.windows == 0 {
                return bad("trace.synth".into(), "channels and windows must be positive".into());
            }
        }
        Ok(())
    }

    /// Synthesis parameters with the config-wide seed and window applied.
    pub(crate) fn topology_params(&self, p: &TopologyParams) -> TopologyParams {
        TopologyParams { seed: self.seed, window_secs: self.window_secs, ..p.clone() }
    }

    pub(crate) fn trace_params(&self, p: &TraceParams) -> TraceParams {
        TraceParams { seed: self.seed, window_secs: self.window_secs, ..p.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 4}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig { seed: 4, ..ExperimentConfig::default() });
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(ExperimentConfig::from_json("{}"), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"seed": 1, "alpha": [0.5]}"#).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
    }

    #[test]
    fn sources_parse_in_both_forms() {
        let cfg = ExperimentConfig::from_json(
            r#"{"seed": 1, "topology": {"file": "t.json"}, "trace": {"synth": {"channels": 5}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.topology, TopologySource::File("t.json".into()));
        assert!(matches!(cfg.trace, TraceSource::Synth(TraceParams { channels: 5, windows: 12, .. })));
    }

    #[test]
    fn load_resolves_paths_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "topology": {"file": "t.json"}, "out": "res"}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.topology, TopologySource::File(dir.path().join("t.json")));
        assert_eq!(cfg.out, dir.path().join("res"));
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig { alphas: vec![0.5, 1.5], ..ExperimentConfig::default() };
        assert_eq!(cfg.validate().unwrap_err().to_string(), "config error: alphas[1]: 1.5 is outside (0, 1]");
        cfg.alphas = vec![0.5];
        cfg.strategies.clear();
        assert!(cfg.validate().unwrap_err().to_string().contains("strategies"));
        cfg.strategies = vec![Strategy::Abr];
        cfg.segment_secs = 301;
        assert!(cfg.validate().unwrap_err().to_string().contains("segment_secs"));
        cfg.segment_secs = 10;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = ExperimentConfig { seed: 1, alphas: vec![0.2], ..ExperimentConfig::default() };
        cfg.apply(Overrides { seed: Some(9), alphas: Some(vec![0.6]), ..Overrides::default() });
        assert_eq!((cfg.seed, cfg.alphas.as_slice()), (9, &[0.6][..]));
        assert_eq!(cfg.strategies, Strategy::ALL.to_vec());
    }
}

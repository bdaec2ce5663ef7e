use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyParams;
use crate::data_io::SyntheticConfig;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_RUNS;
use crate::model::{Ablation, ModelConfig};
use crate::training::{CpMode, SplitFractions, TrainOptions};

/// Input tables on disk. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub stations: PathBuf,
    pub counts: PathBuf,
    /// Optional: without it the crash-free base adjacency is built.
    #[serde(default)]
    pub crashes: Option<PathBuf>,
    /// Optional `from_id,to_id,minutes` table overriding distance-based times.
    #[serde(default)]
    pub travel_times: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub sigma_sq: f64,
    pub rho_max: f64,
    pub eps: f64,
    /// Log-normal draws averaged per bank cell.
    pub samples_per_edge: usize,
    pub speed_mph: f64,
    /// Bank seed; derived from the root seed when absent.
    pub seed: Option<u64>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        let a = AdjacencyParams::default();
        Self {
            sigma_sq: a.sigma_sq,
            rho_max: a.rho_max,
            eps: a.eps,
            samples_per_edge: 8,
            speed_mph: 45.0,
            seed: None,
        }
    }
}

impl GraphConfig {
    pub fn adjacency_params(&self) -> AdjacencyParams {
        AdjacencyParams {
            sigma_sq: self.sigma_sq,
            rho_max: self.rho_max,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adjacency_params().validate()?;
        if self.samples_per_edge == 0 {
            return Err(Error::Config("samples_per_edge must be at least 1".into()));
        }
        if !(self.speed_mph > 0.0 && self.speed_mph.is_finite()) {
            return Err(Error::Config(format!("speed_mph must be positive, got {}", self.speed_mph)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    #[serde(flatten)]
    pub options: TrainOptions,
    pub splits: SplitFractions,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            options: TrainOptions::default(),
            splits: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RouteSource {
    /// Distance-based mean times, same at every hour.
    Prior,
    /// Incident-aware effective times of the hour.
    #[default]
    Effective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouteConfig {
    /// Station ids in travel order; the first two stations when empty.
    pub stations: Vec<String>,
    pub start_hour: usize,
    pub runs: usize,
    pub source: RouteSource,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            stations: Vec::new(),
            start_hour: 8,
            runs: DEFAULT_RUNS,
            source: RouteSource::Effective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Emit forecast-vs-truth SVG plots during `evaluate`.
    pub plot: bool,
    /// Hours written by `delta`; all 24 when empty.
    pub hours: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            plot: true,
            hours: Vec::new(),
        }
    }
}

/// Everything a run consumes. Serialized verbatim into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Skip crash data and build the crash-free adjacency.
    pub no_crash: bool,
    pub data: Option<DataPaths>,
    pub synthetic: Option<SyntheticConfig>,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub route: RouteConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            no_crash: false,
            data: None,
            synthetic: None,
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            route: RouteConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub hours: Option<Vec<usize>>,
    pub ablation: Option<Ablation>,
    pub no_crash: bool,
    pub cp_mode: Option<CpMode>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut d.stations);
            fix(&mut d.counts);
            if let Some(c) = d.crashes.as_mut() {
                fix(c);
            }
            if let Some(t) = d.travel_times.as_mut() {
                fix(t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.alpha {
            self.training.options.alpha = a;
        }
        if let Some(h) = &o.hours {
            self.output.hours = h.clone();
            if let Some(&first) = h.first() {
                self.route.start_hour = first;
            }
        }
        if let Some(a) = o.ablation {
            self.model.ablation = a;
        }
        if o.no_crash {
            self.no_crash = true;
        }
        if let Some(m) = o.cp_mode {
            self.training.options.cp_mode = m;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.data.is_some() && self.synthetic.is_some() {
            return Err(Error::Config("set either [data] or [synthetic], not both".into()));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        self.graph.validate()?;
        self.model.validate()?;
        self.training.options.validate()?;
        self.training.splits.validate()?;
        if let Some(h) = self.output.hours.iter().find(|h| **h >= 24) {
            return Err(Error::Config(format!("hour {h} outside 0..23")));
        }
        if self.route.start_hour >= 24 {
            return Err(Error::Config(format!("route start_hour {} outside 0..23", self.route.start_hour)));
        }
        if self.route.runs == 0 {
            return Err(Error::Config("route runs must be at least 1".into()));
        }
        Ok(())
    }

    /// Synthetic settings in effect (defaults when no data paths are set).
    pub fn synthetic_or_default(&self) -> Option<SyntheticConfig> {
        match (&self.data, &self.synthetic) {
            (Some(_), _) => None,
            (None, Some(s)) => Some(s.clone()),
            (None, None) => Some(SyntheticConfig::default()),
        }
    }
}

/// Parses `--hours` values such as `8`, `7,8,17` or `6-9,16-18`.
pub fn parse_hours(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad hour list `{spec}`"));
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>().map_err(|_| bad())?, b.trim().parse::<usize>().map_err(|_| bad())?),
            None => {
                let h = part.parse::<usize>().map_err(|_| bad())?;
                (h, h)
            }
        };
        if a > b || b >= 24 {
            return Err(Error::Config(format!("hour range `{part}` must lie within 0..23")));
        }
        out.extend(a..=b);
    }
    if out.is_empty() {
        return Err(Error::Config("empty hour list".into()));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("seed = 1\nbogus = 2\n"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[graph]\nsigma = 0.1\n").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig {
            synthetic: Some(SyntheticConfig::default()),
            ..Default::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            r#"
seed = 7
[graph]
sigma_sq = 0.2
[model]
d_model = 16
heads = 2
ablation = "NoPatch"
[training]
lr = 0.005
cp_mode = "split"
[training.splits]
train = 0.6
cal = 0.2
test = 0.2
"#,
        )
        .unwrap();
        assert_eq!(cfg.graph.sigma_sq, 0.2);
        assert_eq!(cfg.model.ablation, Ablation::NoPatch);
        assert_eq!(cfg.training.options.cp_mode, CpMode::Split);
        assert_eq!(cfg.training.splits.cal, 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(9),
            alpha: Some(0.2),
            ablation: Some(Ablation::NoCrossAttn),
            no_crash: true,
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.training.options.alpha, 0.2);
        assert_eq!(cfg.model.ablation, Ablation::NoCrossAttn);
        assert!(cfg.no_crash);
    }

    #[test]
    fn invalid_sigma_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.graph.sigma_sq = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hour_lists() {
        assert_eq!(parse_hours("8").unwrap(), vec![8]);
        assert_eq!(parse_hours("17,6-8").unwrap(), vec![6, 7, 8, 17]);
        assert!(parse_hours("23-25").is_err());
        assert!(parse_hours("x").is_err());
    }
}

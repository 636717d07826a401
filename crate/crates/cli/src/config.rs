use std::path::{Path, PathBuf};

use mediaflow::clustering::SilhouetteOrientation;
use mediaflow::interactions::{IdeologyFold, Scheme};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cutoffs: Cutoffs,
    pub clustering: Option<ClusterConfig>,
    #[serde(default)]
    pub pairs: Vec<PairConfig>,
    pub regression: Option<RegressionConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub tweets: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Search results and redirects used to find outlet handles.
    pub handle_fixture: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutoffs {
    /// Fraction of the most active users removed before building matrices.
    pub percentile: f64,
    /// Minimum interactions for a user to enter clustering.
    pub threshold: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs {
            percentile: 0.02,
            threshold: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub fold: IdeologyFold,
    #[serde(default)]
    pub silhouette: SilhouetteOrientation,
}

fn default_k() -> usize {
    25
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_k_min() -> usize {
    2
}
fn default_k_max() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub local: String,
    pub foreign: String,
    pub k_sg: usize,
    pub k_tg: usize,
    /// Extra seeds for robustness runs.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Share a leaning needs in the predominant-consumption comparison.
    #[serde(default = "default_predominant")]
    pub predominant_threshold: f64,
    /// Outlet removed before grouping, if any.
    pub ablate: Option<String>,
}

fn default_predominant() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub country: String,
    #[serde(default = "default_top_n")]
    pub top_n: Vec<usize>,
    pub media_country: Option<String>,
    #[serde(default)]
    pub log_scale: bool,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub gbdt: mediaflow::regression::GbdtParams,
    #[serde(default)]
    pub forest: mediaflow::regression::ForestParams,
}

fn default_top_n() -> Vec<usize> {
    vec![20, 30, 50, 70, 100, 120]
}
fn default_folds() -> usize {
    5
}
fn default_lambdas() -> Vec<f64> {
    vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub out: Option<PathBuf>,
}

impl Config {
    /// Read a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::new("config", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(s) = overrides.scheme {
            cfg.scheme = s;
        }
        if let Some(o) = &overrides.out {
            cfg.paths.output = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::new("config", msg));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.cutoffs.percentile) {
            return bad(format!(
                "percentile {} outside [0, 1)",
                self.cutoffs.percentile
            ));
        }
        if self.cutoffs.threshold < 0.0 {
            return bad("threshold must be >= 0".into());
        }
        if let Some(c) = &self.clustering {
            if c.k == 0 || c.k_min == 0 || c.k_min > c.k_max {
                return bad("clustering k values must be >= 1 and k_min <= k_max".into());
            }
            if c.seeds.len() < 2 {
                return bad("clustering needs at least two seeds".into());
            }
        }
        for p in &self.pairs {
            if p.k_sg == 0 || p.k_tg == 0 || p.k_sg > 8 || p.k_tg > 8 {
                return bad(format!(
                    "pair {}-{}: group counts must be in 1..=8",
                    p.local, p.foreign
                ));
            }
        }
        if let Some(r) = &self.regression
            && (r.folds < 2 || r.top_n.is_empty())
        {
            return bad("regression needs folds >= 2 and at least one media set size".into());
        }
        for (name, p) in self.paths.inputs() {
            if !p.exists() {
                return Err(CliError::new(
                    "missing_input",
                    format!("{name} file {} does not exist", p.display()),
                ));
            }
        }
        Ok(())
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.tweets,
            &mut self.gazetteer,
            &mut self.aliases,
            &mut self.registry,
            &mut self.handle_fixture,
            &mut self.votes,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        [
            ("tweets", &self.tweets),
            ("gazetteer", &self.gazetteer),
            ("aliases", &self.aliases),
            ("registry", &self.registry),
            ("handle_fixture", &self.handle_fixture),
            ("votes", &self.votes),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.as_deref().map(|p| (n, p)))
        .collect()
    }

    pub fn require(&self, name: &'static str) -> Result<&Path, CliError> {
        self.inputs()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| CliError::new("missing_input", format!("no `{name}` path configured")))
    }
}

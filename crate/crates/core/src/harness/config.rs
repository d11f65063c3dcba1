//! Scenario configuration, read from TOML.
//!
//! The schema is documented field-by-field in `paper.cfg` at the repository
//! root and in the guide's experiments chapter.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controllers::cloud::CloudSettings;
use crate::controllers::edge::EdgeSettings;
use crate::controllers::onboard::OnboardLaw;
use crate::costs::TaskSpec;
use crate::dynamics::Bicycle;
use crate::error::{Error, Result};
use crate::network::{DelayDistribution, DelayFamily};

/// Which closed loop to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The buffered selection policy over the enabled tiers.
    Proposed,
    /// Cloud MPC applied instantly at every tick, no network.
    IdealCloud,
    /// The on-board law alone, no buffer.
    OnboardLaw,
}

/// Run-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub ticks: u64,
    pub runs: usize,
    pub seed: u64,
    /// Prediction horizon `N`.
    pub horizon: usize,
    pub initial_state: [f64; 4],
    /// Length of the on-board tail in the terminal cost.  When absent the
    /// tail runs to the end of the simulation (`ticks + horizon`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_steps: Option<usize>,
    pub mode: Mode,
}

/// Additive uniform disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub enabled: bool,
    pub bounds: [f64; 4],
}

/// Delay law of one link, either explicit or from a target loss probability.
///
/// With `loss`, the law is the member of `family` whose probability of
/// exceeding the tier's depth `D` equals `loss`, with `spread` as its fixed
/// `σ`.  `loss = 0` means a perfect link and `loss = 1` a dead one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<DelayFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayDistribution>,
}

impl LinkSection {
    pub fn with_loss(family: DelayFamily, loss: f64, spread: f64) -> Self {
        Self {
            loss: Some(loss),
            family: Some(family),
            spread: Some(spread),
            delay: None,
        }
    }

    /// The delay law, or `None` for a link that never delivers.
    pub fn resolve(&self, depth: u64) -> Result<Option<DelayDistribution>> {
        match (self.delay, self.loss) {
            (Some(_), Some(_)) => Err(Error::Config("give either `delay` or `loss`, not both".into())),
            (Some(d), None) => {
                d.validate()?;
                Ok(Some(d))
            }
            (None, Some(p)) if p == 0.0 => Ok(Some(DelayDistribution::Degenerate { ticks: 0.0 })),
            (None, Some(p)) if p == 1.0 => Ok(None),
            (None, Some(p)) => {
                let family = self
                    .family
                    .ok_or_else(|| Error::Config("`loss` needs a `family`".into()))?;
                let spread = self.spread.unwrap_or(1.0);
                DelayDistribution::with_loss_probability(family, p, depth, spread).map(Some)
            }
            (None, None) => Err(Error::Config("link needs `delay` or `loss`".into())),
        }
    }
}

/// One remote tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSection<S> {
    pub enabled: bool,
    /// Prediction depth `D`.
    pub depth: u64,
    pub link: LinkSection,
    pub solver: S,
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub name: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Cloud link loss; a disabled tier when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_loss: Option<f64>,
    /// Edge link loss; a disabled tier when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_loss: Option<f64>,
    /// Overrides `disturbance.enabled` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<bool>,
}

fn default_mode() -> Mode {
    Mode::Proposed
}

/// Complete description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub model: Bicycle,
    pub task: TaskSpec,
    pub onboard: OnboardLaw,
    pub disturbance: DisturbanceSection,
    pub cloud: TierSection<CloudSettings>,
    pub edge: TierSection<EdgeSettings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepCell>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            run: RunSection {
                ticks: 500,
                runs: 100,
                seed: 1,
                horizon: 25,
                initial_state: [0.0; 4],
                terminal_steps: None,
                mode: Mode::Proposed,
            },
            model: Bicycle::default(),
            task: TaskSpec::default(),
            onboard: OnboardLaw::default(),
            disturbance: DisturbanceSection {
                enabled: false,
                bounds: [0.5, 0.5, 0.1, 0.1],
            },
            cloud: TierSection {
                enabled: true,
                depth: 4,
                link: LinkSection::with_loss(DelayFamily::LogNormal, 0.8, 0.5),
                solver: CloudSettings::default(),
            },
            edge: TierSection {
                enabled: true,
                depth: 2,
                link: LinkSection::with_loss(DelayFamily::Normal, 0.8, 1.0),
                solver: EdgeSettings::default(),
            },
            sweep: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.ticks == 0 || r.runs == 0 || r.horizon == 0 {
            return Err(Error::Config("ticks, runs and horizon must be at least 1".into()));
        }
        if !r.initial_state.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }
        self.model.validate()?;
        self.task.validate()?;
        if !(self.onboard.gain > 0.0 && self.onboard.margin_ratio >= 0.0 && self.onboard.arc_advance > 0.0) {
            return Err(Error::Config("on-board gain and arc advance must be positive".into()));
        }
        if self.disturbance.bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("disturbance bounds must be non-negative".into()));
        }
        for (name, depth) in [("cloud", self.cloud.depth), ("edge", self.edge.depth)] {
            if depth == 0 || depth as usize > r.horizon {
                return Err(Error::Config(format!("{name} depth must lie in 1..=N")));
            }
        }
        self.cloud.link.resolve(self.cloud.depth)?;
        self.edge.link.resolve(self.edge.depth)?;
        let b = self.cloud.solver.budget;
        let e = self.edge.solver.budget;
        if b.max_iterations == 0 || e.max_iterations == 0 || !(b.step_tolerance > 0.0 && e.step_tolerance > 0.0) {
            return Err(Error::Config("solver budgets must be positive".into()));
        }
        if !(self.cloud.solver.max_slip > 0.0) {
            return Err(Error::Config("cloud max_slip must be positive".into()));
        }
        Ok(())
    }

    /// Short, stable fingerprint of the configuration.
    ///
    /// `run.seed` and `run.runs` are left out: every output records its seed
    /// separately, and runs of one batch should share a fingerprint.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.seed = 0;
        c.run.runs = 1;
        let canonical = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The configuration for one sweep cell.
    pub fn with_cell(&self, cell: &SweepCell) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.run.mode = cell.mode;
        cfg.sweep.clear();
        let set = |tier_enabled: &mut bool, link: &mut LinkSection, loss: Option<f64>| match loss {
            None => *tier_enabled = false,
            Some(p) => {
                *tier_enabled = true;
                link.delay = None;
                link.loss = Some(p);
            }
        };
        set(&mut cfg.cloud.enabled, &mut cfg.cloud.link, cell.cloud_loss);
        set(&mut cfg.edge.enabled, &mut cfg.edge.link, cell.edge_loss);
        if let Some(d) = cell.disturbance {
            cfg.disturbance.enabled = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

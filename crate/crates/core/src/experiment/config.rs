use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BeamSpec, Quantity, ReferenceFrame};
use crate::ukf::{Algorithm, Integrator, SigmaSpec};

/// A complete experiment: structure, excitation, sensors, filter and
/// baselines. DOF, node and member numbers are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Simulated record length, s.
    pub duration: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub excitation: ExcitationSpec,
    pub input: InputSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub filter: FilterSpec,
    #[serde(default)]
    pub baselines: Option<BaselineSpec>,
    #[serde(default)]
    pub report: ReportSpec,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    ShearFrame {
        masses: Vec<f64>,
        stiffnesses: Vec<f64>,
        dampings: Vec<f64>,
    },
    /// The four-bay reference Pratt truss with per-class areas.
    Truss {
        elastic_modulus: f64,
        density: f64,
        /// Areas of top, bottom, diagonal and vertical members, m².
        areas: [f64; 4],
        bay_width: f64,
        height: f64,
        /// One lumped mass per free DOF, kg.
        lumped_masses: Vec<f64>,
        damping_ratio: f64,
        damping_modes: usize,
    },
    Beam(BeamSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationSpec {
    GroundMotion,
    /// Force on a free DOF, or on the translation of a beam node.
    NodalForce {
        #[serde(default)]
        dof: Option<usize>,
        #[serde(default)]
        node: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    SyntheticGroundMotion {
        rate: f64,
        peak: f64,
    },
    WhiteNoise {
        rate: f64,
        std: f64,
    },
    HalfSine {
        rate: f64,
        onset: f64,
        width: f64,
        peak: f64,
    },
    /// Two-column CSV `time,value`; relative paths resolve against the config file.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Truth integration rate, Hz; by default high enough to resolve the
    /// highest mode and at least ten times the fastest channel.
    #[serde(default)]
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub id: String,
    pub quantity: Quantity,
    #[serde(default)]
    pub dof: Option<usize>,
    /// Beam node whose translation is measured.
    #[serde(default)]
    pub node: Option<usize>,
    /// Truss member or beam element.
    #[serde(default)]
    pub member: Option<usize>,
    /// Gauge location along a beam element, 0..1.
    #[serde(default = "half")]
    pub position: f64,
    #[serde(default)]
    pub frame: ReferenceFrame,
    pub rate: f64,
    /// Noise standard deviation as a fraction of the clean signal RMS.
    pub noise: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// The variance actually injected.
    #[default]
    Exact,
    /// Sample variance over the leading quiet window.
    PreEvent,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub variance: VarianceSource,
    /// Length of the quiet window, s.
    #[serde(default)]
    pub pre_event_window: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Parameter names to estimate; all when absent.
    #[serde(default)]
    pub estimate: Option<Vec<String>>,
    #[serde(default)]
    pub estimate_input: bool,
    /// Initial guess as a multiple of the true parameters.
    #[serde(default = "default_initial_factor")]
    pub initial_parameter_factor: f64,
    /// Initial parameter standard deviation as a fraction of the guess.
    #[serde(default = "default_initial_std")]
    pub initial_parameter_std: f64,
    /// Per-step parameter random-walk standard deviation as a fraction of the guess.
    #[serde(default = "default_parameter_process")]
    pub parameter_process_std: f64,
    /// Fractions of the peak response used for state noise.
    #[serde(default = "default_initial_state")]
    pub initial_state_std: f64,
    #[serde(default = "default_state_process")]
    pub state_process_std: f64,
    /// Fractions of the input peak used for an estimated input.
    #[serde(default = "default_initial_input")]
    pub initial_input_std: f64,
    #[serde(default = "default_input_process")]
    pub input_process_std: f64,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    /// Lower bound zero on estimated parameters (CGUKF only).
    #[serde(default = "default_true")]
    pub non_negative_parameters: bool,
}

fn default_initial_factor() -> f64 {
    1.3
}
fn default_initial_std() -> f64 {
    0.3
}
fn default_parameter_process() -> f64 {
    1e-8
}
fn default_initial_state() -> f64 {
    1e-3
}
fn default_state_process() -> f64 {
    1e-6
}
fn default_initial_input() -> f64 {
    0.05
}
fn default_input_process() -> f64 {
    0.05
}
fn default_integrator() -> Integrator {
    Integrator::Exact
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub acceleration: String,
    pub displacement: String,
    #[serde(default = "default_true")]
    pub df1: bool,
    #[serde(default = "default_true")]
    pub df2: bool,
    #[serde(default = "default_memory")]
    pub memory_length: usize,
    /// Multiplier on the acceleration noise variance used as kinematic process noise.
    #[serde(default = "one")]
    pub process_variance_scale: f64,
}

fn default_memory() -> usize {
    crate::baselines::DEFAULT_MEMORY_LENGTH
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Write the merged timeline for inspection.
    #[serde(default)]
    pub timeline: bool,
}

fn field(name: impl Into<String>, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {reason}", name.into()))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be non-negative, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let InputSpec::File { path: p } = &mut cfg.input {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that need no model assembly.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(field("name", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        positive("duration", self.duration)?;
        if self.channels.is_empty() {
            return Err(field("channels", "at least one channel is required"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            let at = |f: &str| format!("channels[{i}].{f}");
            if c.id.trim().is_empty() {
                return Err(field(at("id"), "must not be empty"));
            }
            if self.channels[..i].iter().any(|o| o.id == c.id) {
                return Err(field(at("id"), format!("`{}` is used twice", c.id)));
            }
            positive(&at("rate"), c.rate)?;
            non_negative(&at("noise"), c.noise)?;
            if !(0.0..=1.0).contains(&c.position) {
                return Err(field(at("position"), "must lie in [0, 1]"));
            }
            let targets = [c.dof, c.node, c.member].iter().filter(|t| t.is_some()).count();
            if targets != 1 {
                return Err(field(at("dof"), "exactly one of dof, node or member is required"));
            }
            if [c.dof, c.node, c.member].contains(&Some(0)) && c.node.is_none() {
                return Err(field(at("dof"), "DOF and member numbers start at 1"));
            }
        }
        if let Some(r) = self.simulation.rate {
            positive("simulation.rate", r)?;
            let fastest = self.channels.iter().map(|c| c.rate).fold(0.0, f64::max);
            if r < fastest {
                return Err(field("simulation.rate", "must not be below the fastest channel rate"));
            }
        }
        match &self.input {
            InputSpec::SyntheticGroundMotion { rate, peak } => {
                positive("input.rate", *rate)?;
                non_negative("input.peak", *peak)?;
            }
            InputSpec::WhiteNoise { rate, std } => {
                positive("input.rate", *rate)?;
                non_negative("input.std", *std)?;
            }
            InputSpec::HalfSine {
                rate,
                onset,
                width,
                peak,
            } => {
                positive("input.rate", *rate)?;
                non_negative("input.onset", *onset)?;
                positive("input.width", *width)?;
                if !peak.is_finite() {
                    return Err(field("input.peak", "must be finite"));
                }
            }
            InputSpec::File { path } => {
                if !path.is_file() {
                    return Err(field("input.path", format!("{} does not exist", path.display())));
                }
            }
        }
        if self.noise.variance == VarianceSource::PreEvent {
            match self.noise.pre_event_window {
                Some(w) => positive("noise.pre_event_window", w)?,
                None => return Err(field("noise.pre_event_window", "required for pre-event variances")),
            }
        }
        let f = &self.filter;
        positive("filter.initial_parameter_factor", f.initial_parameter_factor)?;
        non_negative("filter.initial_parameter_std", f.initial_parameter_std)?;
        non_negative("filter.parameter_process_std", f.parameter_process_std)?;
        non_negative("filter.initial_state_std", f.initial_state_std)?;
        non_negative("filter.state_process_std", f.state_process_std)?;
        non_negative("filter.initial_input_std", f.initial_input_std)?;
        non_negative("filter.input_process_std", f.input_process_std)?;
        f.sigma.validate().map_err(|e| field("filter.sigma", e))?;
        if let Integrator::Newmark { substeps: 0 } = f.integrator {
            return Err(field("filter.integrator.substeps", "must be at least 1"));
        }
        if let Some(names) = &f.estimate {
            if names.is_empty() {
                return Err(field("filter.estimate", "list must not be empty when given"));
            }
        }
        if let Some(b) = &self.baselines {
            for (name, id) in [
                ("baselines.acceleration", &b.acceleration),
                ("baselines.displacement", &b.displacement),
            ] {
                if !self.channels.iter().any(|c| &c.id == id) {
                    return Err(field(name, format!("no channel `{id}`")));
                }
            }
            if b.memory_length == 0 {
                return Err(field("baselines.memory_length", "must be at least 1"));
            }
            non_negative("baselines.process_variance_scale", b.process_variance_scale)?;
        }
        Ok(())
    }
}

/// Built-in experiment definitions.
pub const PRESETS: [(&str, &str); 5] = [
    ("frame_500_50", include_str!("../../presets/frame_500_50.toml")),
    ("frame_500_30", include_str!("../../presets/frame_500_30.toml")),
    ("truss_fused", include_str!("../../presets/truss_fused.toml")),
    ("truss_acc_only", include_str!("../../presets/truss_acc_only.toml")),
    (
        "beam_input_estimation",
        include_str!("../../presets/beam_input_estimation.toml"),
    ),
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    ExperimentConfig::from_toml(text)
}

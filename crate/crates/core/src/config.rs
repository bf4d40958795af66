//! Experiment configuration: one TOML document covering the vehicle file,
//! simulation settings, problems, HLAS bounds, network, trainer and named
//! variants (per-variant trainer overrides are merged over `[trainer]`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{
    ChannelKind, Ellipse, InitialConditions, ObstacleMap, ProblemKind, ProblemSpec,
};
use crate::error::{Error, Result};
use crate::hlas::HlasConfig;
use crate::policy::{Activation, NetArch};
use crate::trainer::TrainerConfig;
use crate::vehicle::{VehicleParams, VehicleState, DEG};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    /// Vehicle parameter file, relative to the experiment file.
    vehicle: String,
    simulation: SimulationFile,
    hlas: HlasFile,
    problems: BTreeMap<String, ProblemFile>,
    network: NetworkFile,
    trainer: toml::Table,
    variants: BTreeMap<String, VariantFile>,
    cli: CliDefaults,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationFile {
    dt: f64,
    max_action_steps: usize,
    obs_scales: [f64; 8],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelBounds {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HlasFile {
    continuity: bool,
    /// `(alpha_cmd, sigma_cmd)` node bounds, degrees.
    control_deg: ChannelBounds,
    /// `(gamma_dot, psi_dot)` node bounds, degrees per second.
    desired_dynamics_deg_s: ChannelBounds,
}

/// State with angles in degrees.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDeg {
    h: f64,
    v: f64,
    theta: f64,
    phi: f64,
    gamma: f64,
    psi: f64,
    alpha: f64,
    sigma: f64,
}

impl StateDeg {
    fn to_state(self) -> VehicleState {
        VehicleState {
            h: self.h,
            v: self.v,
            theta: self.theta * DEG,
            phi: self.phi * DEG,
            gamma: self.gamma * DEG,
            psi: self.psi * DEG,
            alpha: self.alpha * DEG,
            sigma: self.sigma * DEG,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipseDeg {
    theta: f64,
    phi: f64,
    semi_theta: f64,
    semi_phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum ProblemFile {
    LatitudeMax {
        /// `(h m, v m/s, gamma deg)`
        target: [f64; 3],
        scales: [f64; 3],
        tolerances: [f64; 3],
        terminal_weight: f64,
        ic_nominal: StateDeg,
        ic_halfwidths: StateDeg,
    },
    DebrisAvoidance {
        /// `(h m, theta deg, phi deg)`
        target: [f64; 3],
        scales: [f64; 3],
        tolerances: [f64; 3],
        terminal_weight: f64,
        ring_radius_deg: f64,
        ring_halfwidth_deg: f64,
        heading_error_deg: f64,
        /// `(center, half-width)` pairs.
        h0: [f64; 2],
        v0: [f64; 2],
        gamma0_deg: [f64; 2],
        obstacles: Vec<EllipseDeg>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    shared_layers: Vec<usize>,
    head_hidden: usize,
    activation: Activation,
    log_std_init: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    channels: ChannelKind,
    p: usize,
    /// `(tau_min, tau_max)` seconds.
    tau: [f64; 2],
    #[serde(default)]
    trainer: toml::Table,
}

/// Defaults for command-line runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliDefaults {
    pub problem: String,
    pub variant: String,
    pub seed: u64,
    pub n_episodes: usize,
    pub ic_scale: f64,
    /// Environment steps per training run.
    pub budget_steps: usize,
    pub out: PathBuf,
}

/// Validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    file: ExperimentFile,
    pub vehicle: VehicleParams,
    digest: String,
}

fn parse_err(e: toml::de::Error) -> Error {
    let field = e
        .span()
        .map(|s| format!("byte {}..{}", s.start, s.end))
        .unwrap_or_else(|| "<document>".into());
    Error::config(field, e.message().to_string())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(path.display().to_string(), format!("cannot read: {e}"))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Parse a document whose vehicle path is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(parse_err)?;
        let vehicle_path = base_dir.join(&file.vehicle);
        let vehicle = VehicleParams::load(&vehicle_path).map_err(|e| match e {
            Error::Io(io) => Error::config("vehicle", format!("{}: {io}", vehicle_path.display())),
            other => other,
        })?;
        let digest = {
            let canonical = serde_json::to_string(&(&file, &vehicle))
                .map_err(|e| Error::config("<document>", e.to_string()))?;
            Sha256::digest(canonical.as_bytes())
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect()
        };
        let cfg = Self {
            file,
            vehicle,
            digest,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.file.problems.is_empty() {
            return Err(Error::config("problems", "at least one problem is required"));
        }
        if self.file.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        for p in self.file.problems.keys() {
            for v in self.file.variants.keys() {
                self.problem(p, v)?;
            }
        }
        for v in self.file.variants.keys() {
            self.trainer(v)?;
        }
        self.network(5)?;
        let cli = &self.file.cli;
        if !self.file.problems.contains_key(&cli.problem) {
            return Err(Error::config("cli.problem", format!("unknown problem `{}`", cli.problem)));
        }
        if !self.file.variants.contains_key(&cli.variant) {
            return Err(Error::config("cli.variant", format!("unknown variant `{}`", cli.variant)));
        }
        if cli.n_episodes == 0 {
            return Err(Error::config("cli.n_episodes", "must be >= 1"));
        }
        if !(cli.ic_scale >= 0.0 && cli.ic_scale.is_finite()) {
            return Err(Error::config("cli.ic_scale", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialized configuration (vehicle
    /// included).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn cli(&self) -> &CliDefaults {
        &self.file.cli
    }

    pub fn problem_names(&self) -> impl Iterator<Item = &str> {
        self.file.problems.keys().map(String::as_str)
    }

    pub fn variant_names(&self) -> impl Iterator<Item = &str> {
        self.file.variants.keys().map(String::as_str)
    }

    pub fn obs_scales(&self) -> [f64; 8] {
        self.file.simulation.obs_scales
    }

    pub fn log_std_init(&self) -> f64 {
        self.file.network.log_std_init
    }

    fn variant(&self, name: &str) -> Result<&VariantFile> {
        self.file
            .variants
            .get(name)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{name}`")))
    }

    pub fn hlas(&self, variant: &str) -> Result<HlasConfig> {
        let v = self.variant(variant)?;
        let (bounds, unit) = match v.channels {
            ChannelKind::Control => (&self.file.hlas.control_deg, DEG),
            ChannelKind::DesiredDynamics => (&self.file.hlas.desired_dynamics_deg_s, DEG),
        };
        let cfg = HlasConfig {
            p: v.p,
            tau_min: v.tau[0],
            tau_max: v.tau[1],
            z_min: bounds.min.iter().map(|x| x * unit).collect(),
            z_max: bounds.max.iter().map(|x| x * unit).collect(),
            continuity: self.file.hlas.continuity,
        };
        cfg.validate().map_err(|e| prefix(e, &format!("variants.{variant}")))?;
        Ok(cfg)
    }

    pub fn problem(&self, problem: &str, variant: &str) -> Result<ProblemSpec> {
        let pf = self
            .file
            .problems
            .get(problem)
            .ok_or_else(|| Error::config("problem", format!("unknown problem `{problem}`")))?;
        let sim = &self.file.simulation;
        let hlas = self.hlas(variant)?;
        let channels = self.variant(variant)?.channels;
        let spec = match pf {
            ProblemFile::LatitudeMax {
                target,
                scales,
                tolerances,
                terminal_weight,
                ic_nominal,
                ic_halfwidths,
            } => ProblemSpec {
                kind: ProblemKind::LatitudeMax,
                channels,
                hlas,
                target: [target[0], target[1], target[2] * DEG],
                terminal_scales: [scales[0], scales[1], scales[2] * DEG],
                terminal_tolerances: [tolerances[0], tolerances[1], tolerances[2] * DEG],
                terminal_weight: *terminal_weight,
                initial: InitialConditions::Box {
                    nominal: ic_nominal.to_state(),
                    halfwidths: ic_halfwidths.to_state().to_array(),
                },
                max_action_steps: sim.max_action_steps,
                dt: sim.dt,
                obs_scales: sim.obs_scales,
                obstacles: ObstacleMap::default(),
            },
            ProblemFile::DebrisAvoidance {
                target,
                scales,
                tolerances,
                terminal_weight,
                ring_radius_deg,
                ring_halfwidth_deg,
                heading_error_deg,
                h0,
                v0,
                gamma0_deg,
                obstacles,
            } => ProblemSpec {
                kind: ProblemKind::DebrisAvoidance,
                channels,
                hlas,
                target: [target[0], target[1] * DEG, target[2] * DEG],
                terminal_scales: [scales[0], scales[1] * DEG, scales[2] * DEG],
                terminal_tolerances: [tolerances[0], tolerances[1] * DEG, tolerances[2] * DEG],
                terminal_weight: *terminal_weight,
                initial: InitialConditions::Ring {
                    theta_c: target[1] * DEG,
                    phi_c: target[2] * DEG,
                    radius: ring_radius_deg * DEG,
                    radius_halfwidth: ring_halfwidth_deg * DEG,
                    heading_error: heading_error_deg * DEG,
                    h: h0[0],
                    h_halfwidth: h0[1],
                    v: v0[0],
                    v_halfwidth: v0[1],
                    gamma: gamma0_deg[0] * DEG,
                    gamma_halfwidth: gamma0_deg[1] * DEG,
                },
                max_action_steps: sim.max_action_steps,
                dt: sim.dt,
                obs_scales: sim.obs_scales,
                obstacles: ObstacleMap {
                    ellipses: obstacles
                        .iter()
                        .map(|e| Ellipse {
                            center_theta: e.theta * DEG,
                            center_phi: e.phi * DEG,
                            semi_axis_theta: e.semi_theta * DEG,
                            semi_axis_phi: e.semi_phi * DEG,
                        })
                        .collect(),
                },
            },
        };
        spec.validate()
            .map_err(|e| prefix(e, &format!("problems.{problem}")))?;
        Ok(spec)
    }

    /// `[trainer]` with the variant's overrides applied.
    pub fn trainer(&self, variant: &str) -> Result<TrainerConfig> {
        let v = self.variant(variant)?;
        let mut merged = self.file.trainer.clone();
        for (k, val) in &v.trainer {
            merged.insert(k.clone(), val.clone());
        }
        let field = format!("variants.{variant}.trainer");
        let cfg: TrainerConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(&field, e.message().to_string()))?;
        cfg.validate().map_err(|e| prefix(e, &field))?;
        Ok(cfg)
    }

    pub fn network(&self, action_dim: usize) -> Result<NetArch> {
        let n = &self.file.network;
        let arch = NetArch {
            input_dim: VehicleState::DIM,
            shared_layers: n.shared_layers.clone(),
            head_hidden: n.head_hidden,
            action_dim,
            activation: n.activation,
        };
        arch.validate()?;
        Ok(arch)
    }
}

fn prefix(e: Error, scope: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{scope}.{field}"),
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{experiment, experiment_text, repo_configs};

    #[test]
    fn shipped_config_loads() {
        let cfg = experiment();
        assert_eq!(cfg.digest().len(), 64);
        let names: Vec<_> = cfg.variant_names().collect();
        for v in [
            "baseline",
            "hlas-control",
            "hlas-dynamics",
            "hlas-fixed-tau",
            "hlas-dynamics-no-antiwindup",
        ] {
            assert!(names.contains(&v), "{v}");
        }
    }

    #[test]
    fn table_one_rows() {
        let cfg = experiment();
        let b = cfg.trainer("baseline").unwrap();
        assert_eq!((b.vf_coef, b.ent_coef, b.antiwindup), (100.0, 0.001, false));
        assert_eq!((b.steps_per_env, b.minibatch), (8192, 256));
        let hb = cfg.hlas("baseline").unwrap();
        assert_eq!((hb.p, hb.tau_min, hb.tau_max), (0, 2.0, 2.0));

        for v in ["hlas-control", "hlas-dynamics"] {
            let t = cfg.trainer(v).unwrap();
            assert_eq!((t.vf_coef, t.ent_coef, t.antiwindup), (0.5, 0.0, true));
            assert_eq!((t.steps_per_env, t.minibatch), (4096, 128));
            let h = cfg.hlas(v).unwrap();
            assert_eq!((h.p, h.tau_min, h.tau_max), (1, 2.0, 30.0));
        }
        assert!(!cfg.trainer("hlas-dynamics-no-antiwindup").unwrap().antiwindup);
        let f = cfg.trainer("hlas-fixed-tau").unwrap();
        assert_eq!((f.ent_coef, f.antiwindup), (0.001, true));
        let h = cfg.hlas("hlas-fixed-tau").unwrap();
        assert_eq!((h.tau_min, h.tau_max), (4.0, 4.0));

        let t = cfg.trainer("hlas-control").unwrap();
        assert_eq!((t.gamma, t.lr, t.clip_eps, t.n_envs), (0.9999, 5e-5, 0.2, 6));
    }

    #[test]
    fn problem_targets() {
        let cfg = experiment();
        let p1 = cfg.problem("latitude-max", "hlas-control").unwrap();
        assert_eq!(p1.target[..2], [24384.0, 762.0]);
        assert!((p1.target[2] + 5.0 * DEG).abs() < 1e-15);
        assert_eq!(p1.terminal_weight, 5.0);
        assert_eq!(p1.max_action_steps, 500);
        let p2 = cfg.problem("debris-avoidance", "hlas-control").unwrap();
        assert_eq!(p2.terminal_scales[0], 1000.0);
        assert!(!p2.obstacles.ellipses.is_empty());
    }

    #[test]
    fn shipped_obstacles_match_generator() {
        let cfg = experiment();
        let p2 = cfg.problem("debris-avoidance", "hlas-control").unwrap();
        let generated = ObstacleMap::generate(
            7,
            12,
            (0.0, 50.0 * DEG),
            (12.0 * DEG, 38.0 * DEG),
            (1.5 * DEG, 3.5 * DEG),
        );
        assert_eq!(p2.obstacles.ellipses.len(), generated.ellipses.len());
        for (a, b) in p2.obstacles.ellipses.iter().zip(&generated.ellipses) {
            for (x, y) in [
                (a.center_theta, b.center_theta),
                (a.center_phi, b.center_phi),
                (a.semi_axis_theta, b.semi_axis_theta),
                (a.semi_axis_phi, b.semi_axis_phi),
            ] {
                assert!((x - y).abs() < 1e-9 * DEG, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn digest_tracks_content() {
        let text = experiment_text();
        let base = repo_configs();
        let a = ExperimentConfig::from_toml_str(&text, &base).unwrap();
        let b = ExperimentConfig::from_toml_str(&text, &base).unwrap();
        assert_eq!(a.digest(), b.digest());
        let changed = text.replace("lr = 5e-5", "lr = 6e-5");
        assert_ne!(changed, text);
        let c = ExperimentConfig::from_toml_str(&changed, &base).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    fn config_error(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text, &repo_configs()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        let text = experiment_text();
        let bad = text.replace("minibatch = 256", "minibatch = 300");
        assert_eq!(config_error(&bad), "variants.baseline.trainer.minibatch");

        let bad = text.replace("tau = [2.0, 30.0]", "tau = [30.0, 2.0]");
        assert!(config_error(&bad).starts_with("variants."));

        let bad = text.replace("max_action_steps = 500", "max_action_steps = 0");
        assert!(config_error(&bad).ends_with("simulation.max_action_steps"));

        let bad = text.replace("[cli]", "[cli]\nbogus = 1");
        assert!(config_error(&bad).starts_with("byte"));

        let bad = text.replace("vehicle = \"vehicle/shuttle.toml\"", "vehicle = \"missing.toml\"");
        assert_eq!(config_error(&bad), "vehicle");
    }
}

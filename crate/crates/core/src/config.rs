//! Run configuration read from TOML. Lengths are in millimetres and angles in
//! degrees here; everything is converted to metres and radians on the way in.
//! Every key is optional and falls back to the library defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{ConvergenceSetup, ExperimentSpec, KnotSetup, StitchSetup};
use crate::knot::{load_keyframes, KnotConfig, TensionConfig};
use crate::servo::{CameraMount, ServoConfig};
use crate::sim::{NoiseConfig, WorldConfig};
use crate::stitch::StitchMode;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "SEWBOT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("bad keyframe recording {path}: {message}")]
    Keyframes { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// Flat fabric sheet under the camera.
    #[default]
    Flat,
    /// Graft wrapped on the cylindrical mandrel.
    Mandrel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub world: WorldSection,
    pub noise: NoiseSection,
    pub servo: ServoSection,
    pub stitch: StitchSection,
    pub knot: KnotSection,
    pub convergence: ConvergenceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// Surface used by the stitch experiment; knot tying always uses the mandrel.
    pub surface: Surface,
    pub dt_s: f64,
    /// Added to every measured stitch size.
    pub jaw_press_bias_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub pixel_sigma_px: f64,
    pub depth_sigma_mm: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub gain: f64,
    pub epsilon: f64,
    pub max_linear_mm_s: f64,
    pub max_angular_deg_s: f64,
    pub min_features: usize,
    pub condition_limit: f64,
    pub mount: CameraMount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchSection {
    pub mode: StitchMode,
    pub sizes_mm: Vec<f64>,
    pub trials: usize,
    pub targets: usize,
    pub needle_radius_mm: f64,
    pub tilt_deg: f64,
    pub normal_radius_mm: f64,
    pub target_radius_mm: f64,
    pub target_spacing_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnotSection {
    pub thread_length_mm: f64,
    pub stiffness_n_per_m: f64,
    pub consumption_per_knot_mm: f64,
    pub setpoint_n: f64,
    pub secure_threshold_n: f64,
    /// Tension gain, mm/(s·N).
    pub tension_gain: f64,
    pub max_follower_speed_mm_s: f64,
    pub pull_speed_mm_s: f64,
    pub phase_timeout_s: f64,
    pub force_rate_hz: f64,
    pub stitch_size_mm: f64,
    /// Keyframe recording; the built-in demonstration is used when absent.
    pub keyframes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub trials: usize,
    pub max_iterations: usize,
    pub max_offset_mm: f64,
    pub max_rotation_deg: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            world: WorldSection::default(),
            noise: NoiseSection::default(),
            servo: ServoSection::default(),
            stitch: StitchSection::default(),
            knot: KnotSection::default(),
            convergence: ConvergenceSection::default(),
        }
    }
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            surface: Surface::Flat,
            dt_s: WorldConfig::default().dt,
            jaw_press_bias_mm: 0.0,
        }
    }
}

impl Default for ServoSection {
    fn default() -> Self {
        let s = ServoConfig::default();
        Self {
            gain: s.gain,
            epsilon: s.epsilon,
            max_linear_mm_s: s.max_linear * 1e3,
            max_angular_deg_s: s.max_angular.to_degrees(),
            min_features: s.min_features,
            condition_limit: s.condition_limit,
            mount: s.mount,
        }
    }
}

impl Default for StitchSection {
    fn default() -> Self {
        let s = StitchSetup::default();
        Self {
            mode: s.options.mode,
            sizes_mm: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            trials: 1,
            targets: 6,
            needle_radius_mm: s.needle_radius * 1e3,
            tilt_deg: s.tilt.to_degrees(),
            normal_radius_mm: s.options.normal_radius * 1e3,
            target_radius_mm: s.target_radius * 1e3,
            target_spacing_mm: s.target_spacing * 1e3,
        }
    }
}

impl Default for KnotSection {
    fn default() -> Self {
        let s = KnotSetup::default();
        let t = s.knot.tension;
        Self {
            thread_length_mm: s.thread_length * 1e3,
            stiffness_n_per_m: s.stiffness,
            consumption_per_knot_mm: s.knot.consumption_per_knot * 1e3,
            setpoint_n: t.setpoint,
            secure_threshold_n: t.secure_threshold,
            tension_gain: t.gain * 1e3,
            max_follower_speed_mm_s: t.max_speed * 1e3,
            pull_speed_mm_s: s.knot.pull_speed * 1e3,
            phase_timeout_s: s.knot.phase_timeout,
            force_rate_hz: s.force_rate,
            stitch_size_mm: s.stitch_size * 1e3,
            keyframes: None,
        }
    }
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        let s = ConvergenceSetup::default();
        Self {
            trials: 50,
            max_iterations: s.max_iterations,
            max_offset_mm: s.max_offset * 1e3,
            max_rotation_deg: s.max_rotation.to_degrees(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            source: Box::new(e),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            source: e,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn servo_config(&self) -> ServoConfig {
        let s = &self.servo;
        ServoConfig {
            gain: s.gain,
            epsilon: s.epsilon,
            max_linear: s.max_linear_mm_s * 1e-3,
            max_angular: s.max_angular_deg_s.to_radians(),
            min_features: s.min_features,
            condition_limit: s.condition_limit,
            mount: s.mount,
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            pixel_sigma: self.noise.pixel_sigma_px,
            depth_sigma: self.noise.depth_sigma_mm * 1e-3,
            dropout: self.noise.dropout,
        }
    }

    pub fn world_config(&self, surface: Surface) -> WorldConfig {
        let base = match surface {
            Surface::Flat => WorldConfig::default(),
            Surface::Mandrel => WorldConfig::mandrel(),
        };
        WorldConfig {
            noise: self.noise(),
            dt: self.world.dt_s,
            jaw_press_bias: self.world.jaw_press_bias_mm * 1e-3,
            ..base
        }
    }

    pub fn stitch_setup(&self) -> StitchSetup {
        let s = &self.stitch;
        let mut setup = StitchSetup::default().with_mode(s.mode);
        setup.needle_radius = s.needle_radius_mm * 1e-3;
        setup.tilt = s.tilt_deg.to_radians();
        setup.options.normal_radius = s.normal_radius_mm * 1e-3;
        setup.target_radius = s.target_radius_mm * 1e-3;
        setup.target_spacing = s.target_spacing_mm * 1e-3;
        setup.servo = self.servo_config();
        setup
    }

    pub fn stitch_spec(&self) -> ExperimentSpec {
        let mut spec = ExperimentSpec::running_stitch(
            self.stitch.sizes_mm.clone(),
            self.stitch.trials,
            self.seed,
        );
        spec.targets = self.stitch.targets;
        spec
    }

    pub fn knot_setup(&self) -> Result<KnotSetup, ConfigError> {
        let k = &self.knot;
        let defaults = KnotSetup::default();
        let keyframes = match &k.keyframes {
            None => defaults.keyframes.clone(),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    source: e,
                })?;
                load_keyframes(&text).map_err(|e| ConfigError::Keyframes {
                    path: path.clone(),
                    message: e.to_string(),
                })?
            }
        };
        let mut stitch = defaults.stitch.clone();
        stitch.servo = self.servo_config();
        stitch.options.mode = self.stitch.mode;
        Ok(KnotSetup {
            knot: KnotConfig {
                tension: TensionConfig {
                    setpoint: k.setpoint_n,
                    secure_threshold: k.secure_threshold_n,
                    gain: k.tension_gain * 1e-3,
                    max_speed: k.max_follower_speed_mm_s * 1e-3,
                    ..defaults.knot.tension
                },
                consumption_per_knot: k.consumption_per_knot_mm * 1e-3,
                phase_timeout: k.phase_timeout_s,
                pull_speed: k.pull_speed_mm_s * 1e-3,
            },
            thread_length: k.thread_length_mm * 1e-3,
            stiffness: k.stiffness_n_per_m,
            keyframes,
            force_rate: k.force_rate_hz,
            stitch,
            stitch_size: k.stitch_size_mm * 1e-3,
            ..defaults
        })
    }

    pub fn convergence_setup(&self) -> ConvergenceSetup {
        let c = &self.convergence;
        ConvergenceSetup {
            servo: self.servo_config(),
            max_iterations: c.max_iterations,
            max_offset: c.max_offset_mm * 1e-3,
            max_rotation: c.max_rotation_deg.to_radians(),
            ..ConvergenceSetup::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg = Config::from_toml("", Path::new("empty.toml")).unwrap();
        assert_eq!(cfg.servo_config(), ServoConfig::default());
        assert_eq!(cfg.world_config(Surface::Flat), WorldConfig::default());
        assert_eq!(cfg.world_config(Surface::Mandrel), WorldConfig::mandrel());
        assert_eq!(cfg.convergence_setup(), ConvergenceSetup::default());

        let stitch = cfg.stitch_setup();
        let reference = StitchSetup::default();
        assert!(approx(stitch.needle_radius, reference.needle_radius));
        assert!(approx(stitch.tilt, reference.tilt));
        assert!(approx(
            stitch.options.normal_radius,
            reference.options.normal_radius
        ));

        let knot = cfg.knot_setup().unwrap();
        let reference = KnotSetup::default();
        assert!(approx(knot.thread_length, reference.thread_length));
        assert!(approx(knot.knot.tension.gain, reference.knot.tension.gain));
        assert!(approx(
            knot.knot.consumption_per_knot,
            reference.knot.consumption_per_knot
        ));
        assert_eq!(knot.keyframes, reference.keyframes);
    }

    #[test]
    fn units_are_converted() {
        let text = r#"
            seed = 9
            [world]
            surface = "mandrel"
            jaw_press_bias_mm = 1.0
            [noise]
            pixel_sigma_px = 0.5
            depth_sigma_mm = 1.0
            [servo]
            max_angular_deg_s = 90.0
            mount = "eye_in_hand"
            [stitch]
            mode = "arc"
            sizes_mm = [2.0, 3.0]
            tilt_deg = 45.0
        "#;
        let cfg = Config::from_toml(text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.world.surface, Surface::Mandrel);
        let world = cfg.world_config(cfg.world.surface);
        assert!(approx(world.jaw_press_bias, 1e-3));
        assert!(approx(world.noise.depth_sigma, 1e-3));
        assert!(approx(world.noise.pixel_sigma, 0.5));
        let servo = cfg.servo_config();
        assert!(approx(servo.max_angular, std::f64::consts::FRAC_PI_2));
        assert_eq!(servo.mount, CameraMount::EyeInHand);
        let stitch = cfg.stitch_setup();
        assert_eq!(stitch.options.mode, StitchMode::Arc);
        assert!(approx(stitch.tilt, std::f64::consts::FRAC_PI_4));
        assert_eq!(cfg.stitch_spec().sizes_mm, vec![2.0, 3.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            Config::from_toml("[noise]\npixel_sigma = 1.0\n", Path::new("bad.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }
}

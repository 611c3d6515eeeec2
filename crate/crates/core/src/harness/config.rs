//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{KrfConfig, Method, TalsConfig};
use crate::hardware::{HardwareProfile, IqImbalance, PaModel};
use crate::pilots::PilotKind;
use crate::scene::{ArrayGeometry, PathSet, SceneSpec};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub carrier_hz: f64,
    pub antennas: usize,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
    pub blocks: usize,
    pub snapshots: usize,
    #[serde(default = "one")]
    pub noise_var: f64,
    #[serde(default)]
    pub noiseless: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub doas_deg: Vec<f64>,
    /// Symmetric I/Q gain mismatch ε (ε_I = −ε_Q = ε).
    pub iq_gain: f64,
    /// Symmetric I/Q phase mismatch β in degrees.
    pub iq_phase_deg: f64,
    /// PA coefficients λ_1 … λ_L, even-order entries included.
    pub pa_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub amplitude_scales: Vec<f64>,
    pub phase_scales: Vec<f64>,
    /// SNR of the imbalance sweeps.
    pub fixed_snr_db: f64,
    pub convergence_snr_db: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            snr_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            amplitude_scales: vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            phase_scales: vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            fixed_snr_db: 20.0,
            convergence_snr_db: vec![0.0, 10.0, 20.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub crlb: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { trials: 200, seed: 1, methods: Method::ALL.to_vec(), crlb: true, out: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSection,
    #[serde(default)]
    pub pilots: PilotKind,
    #[serde(rename = "device")]
    pub devices: Vec<DeviceSection>,
    #[serde(default)]
    pub tals: TalsConfig,
    #[serde(default)]
    pub krf: KrfConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::Config("at least one [[device]] is required".into()));
        }
        let order = self.devices[0].pa_row.len();
        if self.devices.iter().any(|d| d.pa_row.len() != order) {
            return Err(Error::Config("every pa_row must have the same length".into()));
        }
        if self.run.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.run.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if !(self.scene.carrier_hz > 0.0) {
            return Err(Error::Config("carrier_hz must be positive".into()));
        }
        self.tals.validate()?;
        self.scene_spec().and_then(|s| s.validate())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.scene.carrier_hz
    }

    pub fn scene_spec(&self) -> Result<SceneSpec> {
        self.scene_spec_scaled(1.0, 1.0)
    }

    /// Scene with every device's ε multiplied by `amp` and β by `phase`.
    pub fn scene_spec_scaled(&self, amp: f64, phase: f64) -> Result<SceneSpec> {
        let s = &self.scene;
        let profiles = self
            .devices
            .iter()
            .map(|d| {
                Ok(HardwareProfile::new(
                    IqImbalance::symmetric(d.iq_gain * amp, (d.iq_phase_deg * phase).to_radians())?,
                    PaModel::from_full_row(&d.pa_row)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let doas = self
            .devices
            .iter()
            .map(|d| d.doas_deg.iter().map(|t| t.to_radians()).collect())
            .collect();
        Ok(SceneSpec {
            geometry: ArrayGeometry::ula(s.antennas, s.spacing_wavelengths, self.wavelength())?,
            paths: PathSet::new(doas)?,
            profiles,
            pilot_kind: self.pilots,
            blocks: s.blocks,
            snapshots: s.snapshots,
            noise_var: s.noise_var,
            noiseless: s.noiseless,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scene]
carrier_hz = 2.4e9
antennas = 4
spacing_wavelengths = 0.5
blocks = 3
snapshots = 16

[[device]]
doas_deg = [10.0]
iq_gain = 0.01
iq_phase_deg = 0.5
pa_row = [1.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.run.trials, 200);
        assert_eq!(cfg.run.methods, Method::ALL.to_vec());
        assert_eq!(cfg.sweep.snr_db, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(cfg.tals, TalsConfig::default());
        assert_eq!(cfg.pilots, PilotKind::default());
        let spec = cfg.scene_spec().unwrap();
        assert_eq!(spec.geometry.antennas(), 4);
        assert!((spec.geometry.spacings()[1] - 0.5 * cfg.wavelength()).abs() < 1e-15);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = MINIMAL.replace("blocks = 3", "blocks = 3\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
        let empty_pa = MINIMAL.replace("pa_row = [1.0]", "pa_row = []");
        assert!(ExperimentConfig::from_toml(&empty_pa).is_err());
        let crowded = MINIMAL.replace("doas_deg = [10.0]", "doas_deg = [1.0, 2.0, 3.0, 4.0]");
        assert!(ExperimentConfig::from_toml(&crowded).is_err());
        let no_methods = format!("{MINIMAL}\n[run]\nmethods = []\n");
        assert!(ExperimentConfig::from_toml(&no_methods).is_err());
        let bad_method = format!("{MINIMAL}\n[run]\nmethods = [\"ML\"]\n");
        assert!(ExperimentConfig::from_toml(&bad_method).is_err());
    }

    #[test]
    fn imbalance_scaling() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let spec = cfg.scene_spec_scaled(3.0, 0.0).unwrap();
        let iq = spec.profiles[0].iq;
        assert!((iq.eps_i - 0.03).abs() < 1e-15);
        assert_eq!(iq.beta_i, 0.0);
    }
}

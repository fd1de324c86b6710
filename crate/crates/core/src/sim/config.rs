use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beamformer::BeamMode;
use crate::channel::{ArrayGeometry, ChannelConfig, SPEED_OF_LIGHT};
use crate::detector::{Constellation, DetectorConfig};
use crate::error::{Error, Result};
use crate::modem::FrameParams;

/// OTFS frame geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    /// Subcarriers (delay bins).
    pub m: usize,
    /// OFDM symbols per frame (Doppler bins).
    pub n: usize,
    pub subcarrier_spacing_hz: f64,
    /// Prefix duration; the prefix is lengthened to cover `channel.max_delay`.
    pub cp_duration_s: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self {
            m: 32,
            n: 16,
            subcarrier_spacing_hz: 15e3,
            cp_duration_s: 5e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub taps: usize,
    pub paths_per_tap: usize,
    /// Largest tap delay in samples.
    pub max_delay: usize,
    pub speed_kmh: f64,
    pub carrier_hz: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            taps: 6,
            paths_per_tap: 8,
            max_delay: 10,
            speed_kmh: 240.0,
            carrier_hz: 4e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub antennas: usize,
    pub spacing_wavelengths: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            antennas: 8,
            spacing_wavelengths: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    /// Number of branches; one per antenna when absent.
    pub count: Option<usize>,
    pub mode: BeamMode,
}

impl Default for BeamSection {
    fn default() -> Self {
        Self {
            count: None,
            mode: BeamMode::UniformSine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Received SNR per antenna in dB; `inf` means noise-free.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            snr_db: vec![10.0, 12.5, 15.0, 17.5, 20.0],
            trials: 500,
            seed: 20200,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSection {
    /// Array sizes compared in the BER experiment.
    pub antennas: Vec<usize>,
}

impl Default for BerSection {
    fn default() -> Self {
        Self { antennas: vec![8, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsitySection {
    pub antennas: Vec<usize>,
    pub trials: usize,
    /// Largest Doppler offset as a fraction of the subcarrier spacing.
    pub normalized_max_dfo: f64,
    pub threshold: f64,
}

impl Default for SparsitySection {
    fn default() -> Self {
        Self {
            antennas: vec![1, 8, 32],
            trials: 20,
            normalized_max_dfo: 0.1,
            threshold: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub snr_db: Vec<f64>,
    pub trials: usize,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            snr_db: vec![10.0, 12.5, 15.0, 17.5, 20.0],
            trials: 300,
        }
    }
}

/// Every knob of the three experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub modulation: String,
    pub frame: FrameSection,
    pub channel: ChannelSection,
    pub array: ArraySection,
    pub beams: BeamSection,
    pub detector: DetectorConfig,
    pub run: RunSection,
    pub ber: BerSection,
    pub sparsity: SparsitySection,
    pub convergence: ConvergenceSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            modulation: "16qam".into(),
            frame: FrameSection::default(),
            channel: ChannelSection::default(),
            array: ArraySection::default(),
            beams: BeamSection::default(),
            detector: DetectorConfig::default(),
            run: RunSection::default(),
            ber: BerSection::default(),
            sparsity: SparsitySection::default(),
            convergence: ConvergenceSection::default(),
        }
    }
}

fn check_snr_grid(field: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(field, "SNR grid is empty"));
    }
    if grid.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
        return Err(Error::config(field, "SNR values must be numbers or +inf"));
    }
    Ok(())
}

fn check_antennas(field: &'static str, list: &[usize]) -> Result<()> {
    if list.is_empty() || list.contains(&0) {
        return Err(Error::config(field, "needs at least one positive antenna count"));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "config",
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation()?;
        self.frame_params()?;
        self.channel_config(self.array.antennas)?.validate()?;
        if self.channel.max_delay >= self.frame.m {
            return Err(Error::config(
                "channel.max_delay",
                format!("must be below frame.m = {}", self.frame.m),
            ));
        }
        if self.beams.count == Some(0) {
            return Err(Error::config("beams.count", "must be at least 1"));
        }
        self.detector.validate()?;
        check_snr_grid("run.snr_db", &self.run.snr_db)?;
        check_snr_grid("convergence.snr_db", &self.convergence.snr_db)?;
        if self.run.trials == 0 {
            return Err(Error::config("run.trials", "must be at least 1"));
        }
        if self.convergence.trials == 0 {
            return Err(Error::config("convergence.trials", "must be at least 1"));
        }
        if self.sparsity.trials == 0 {
            return Err(Error::config("sparsity.trials", "must be at least 1"));
        }
        check_antennas("ber.antennas", &self.ber.antennas)?;
        check_antennas("sparsity.antennas", &self.sparsity.antennas)?;
        if !(self.sparsity.normalized_max_dfo >= 0.0 && self.sparsity.normalized_max_dfo.is_finite()) {
            return Err(Error::config("sparsity.normalized_max_dfo", "must be non-negative"));
        }
        if !(self.sparsity.threshold > 0.0) {
            return Err(Error::config("sparsity.threshold", "must be positive"));
        }
        Ok(())
    }

    pub fn constellation(&self) -> Result<Constellation> {
        self.modulation.parse()
    }

    pub fn frame_params(&self) -> Result<FrameParams> {
        let f = &self.frame;
        FrameParams::with_cp_duration(
            f.m,
            f.n,
            f.subcarrier_spacing_hz,
            f.cp_duration_s,
            self.channel.max_delay,
        )
    }

    pub fn speed_mps(&self) -> f64 {
        self.channel.speed_kmh / 3.6
    }

    pub fn array_geometry(&self, antennas: usize) -> Result<ArrayGeometry> {
        ArrayGeometry::new(antennas, self.array.spacing_wavelengths)
    }

    /// Channel drawing parameters for an array of `antennas` elements.
    pub fn channel_config(&self, antennas: usize) -> Result<ChannelConfig> {
        let params = self.frame_params()?;
        Ok(ChannelConfig {
            taps: self.channel.taps,
            paths_per_tap: self.channel.paths_per_tap,
            max_delay: self.channel.max_delay,
            speed_mps: self.speed_mps(),
            carrier_hz: self.channel.carrier_hz,
            sample_interval_s: params.sample_interval_s(),
            array: self.array_geometry(antennas)?,
        })
    }

    /// Branch count for an array of `antennas` elements.
    pub fn beam_count(&self, antennas: usize) -> usize {
        self.beams.count.unwrap_or(antennas)
    }

    /// The sparsity scenario: `N = M` and a speed giving the configured
    /// normalized maximum Doppler offset.
    pub fn sparsity_scenario(&self) -> SimConfig {
        let mut cfg = self.clone();
        cfg.frame.n = cfg.frame.m;
        let max_dfo_hz = self.sparsity.normalized_max_dfo * self.frame.subcarrier_spacing_hz;
        cfg.channel.speed_kmh = max_dfo_hz * SPEED_OF_LIGHT / self.channel.carrier_hz * 3.6;
        cfg
    }
}

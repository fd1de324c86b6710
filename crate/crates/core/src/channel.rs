//! Time-variant multipath channel seen by a uniform linear array.
//!
//! Each tap `i` has an integer delay `d_i` and is the superposition of `N_q`
//! propagation paths. A path carries a complex gain, a Doppler frequency
//! offset `f = v f_c cos(beta) / c` and an angle of arrival that sets the
//! per-antenna phase through the array steering vector. The tap gain seen by
//! antenna `a` at sample `n` is
//!
//! ```text
//! g_{a,i}(n) = sum_q alpha_{i,q} exp(j [2 pi f_{i,q} n T_s + phi_a(theta_{i,q})])
//! ```
//!
//! The channel object holds every parameter exactly and doubles as the ideal
//! channel-state information handed to the receiver.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Speed of light used to convert speed into Doppler offset.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Uniform linear array at the base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    num_antennas: usize,
    spacing_wavelengths: f64,
}

impl ArrayGeometry {
    pub fn new(num_antennas: usize, spacing_wavelengths: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::config("array.antennas", "must be at least 1"));
        }
        if !(spacing_wavelengths > 0.0 && spacing_wavelengths.is_finite()) {
            return Err(Error::config(
                "array.spacing_wavelengths",
                format!("must be positive, got {spacing_wavelengths}"),
            ));
        }
        Ok(Self {
            num_antennas,
            spacing_wavelengths,
        })
    }

    /// Half-wavelength array with `num_antennas` elements.
    pub fn half_wavelength(num_antennas: usize) -> Result<Self> {
        Self::new(num_antennas, 0.5)
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn spacing_wavelengths(&self) -> f64 {
        self.spacing_wavelengths
    }

    /// Phase of element `a` (zero-based) for a plane wave arriving at `theta`.
    pub fn element_phase(&self, antenna: usize, theta: f64) -> f64 {
        antenna as f64 * 2.0 * PI * self.spacing_wavelengths * theta.sin()
    }
}

/// `[1, e^{j 2 pi (d/lambda) sin theta}, ..., e^{j (N_r-1) 2 pi (d/lambda) sin theta}]`.
pub fn steering_vector(array: &ArrayGeometry, theta: f64) -> Vec<Complex64> {
    (0..array.num_antennas)
        .map(|a| Complex64::cis(array.element_phase(a, theta)))
        .collect()
}

/// One propagation path inside a tap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPath {
    pub gain: Complex64,
    pub dfo_hz: f64,
    pub aoa_rad: f64,
    pub departure_rad: f64,
}

impl PropagationPath {
    /// Builds a path whose Doppler offset follows from the vehicle geometry.
    pub fn from_geometry(gain: Complex64, aoa_rad: f64, departure_rad: f64, speed_mps: f64, carrier_hz: f64) -> Self {
        Self {
            gain,
            dfo_hz: speed_mps * carrier_hz * departure_rad.cos() / SPEED_OF_LIGHT,
            aoa_rad,
            departure_rad,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTap {
    pub delay: usize,
    pub paths: Vec<PropagationPath>,
}

/// Parameters for drawing random channel realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub taps: usize,
    pub paths_per_tap: usize,
    pub max_delay: usize,
    pub speed_mps: f64,
    pub carrier_hz: f64,
    pub sample_interval_s: f64,
    pub array: ArrayGeometry,
}

impl ChannelConfig {
    /// Largest Doppler offset any path can take, `v f_c / c`.
    pub fn max_dfo_hz(&self) -> f64 {
        self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::config("channel.taps", "must be at least 1"));
        }
        if self.paths_per_tap == 0 {
            return Err(Error::config("channel.paths_per_tap", "must be at least 1"));
        }
        if self.taps - 1 > self.max_delay {
            return Err(Error::config(
                "channel.max_delay",
                format!(
                    "{} taps need at least {} distinct delays, max delay is {}",
                    self.taps, self.taps, self.max_delay
                ),
            ));
        }
        // v = 0 is allowed: it yields the time-invariant reference channel.
        if !(self.speed_mps >= 0.0 && self.speed_mps.is_finite()) {
            return Err(Error::config("channel.speed", "must be finite and non-negative"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::config("channel.carrier_hz", "must be positive"));
        }
        if !(self.sample_interval_s > 0.0 && self.sample_interval_s.is_finite()) {
            return Err(Error::config("frame.sample_interval", "must be positive"));
        }
        Ok(())
    }
}

/// A fully specified channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricChannel {
    taps: Vec<ChannelTap>,
    array: ArrayGeometry,
    sample_interval_s: f64,
    carrier_hz: f64,
}

impl GeometricChannel {
    pub fn new(taps: Vec<ChannelTap>, array: ArrayGeometry, sample_interval_s: f64, carrier_hz: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::config("channel.taps", "must be at least 1"));
        }
        let mut delays: Vec<usize> = taps.iter().map(|t| t.delay).collect();
        delays.sort_unstable();
        if delays.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("channel.taps", "tap delays must be distinct"));
        }
        if !(sample_interval_s > 0.0) {
            return Err(Error::config("frame.sample_interval", "must be positive"));
        }
        Ok(Self {
            taps,
            array,
            sample_interval_s,
            carrier_hz,
        })
    }

    pub fn taps(&self) -> &[ChannelTap] {
        &self.taps
    }

    pub fn array(&self) -> &ArrayGeometry {
        &self.array
    }

    pub fn sample_interval_s(&self) -> f64 {
        self.sample_interval_s
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn num_paths(&self) -> usize {
        self.taps.iter().map(|t| t.paths.len()).sum()
    }

    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|t| t.delay).max().unwrap_or(0)
    }

    pub fn paths(&self) -> impl Iterator<Item = &PropagationPath> {
        self.taps.iter().flat_map(|t| t.paths.iter())
    }

    /// Same paths seen by a different array (e.g. only the first antenna).
    pub fn with_array(&self, array: ArrayGeometry) -> Self {
        Self { array, ..self.clone() }
    }

    /// `g_{a,i}(n)` for antenna `a`, tap `i` and sample `n`, all zero-based.
    pub fn tap_gain(&self, antenna: usize, tap: usize, sample: usize) -> Complex64 {
        self.tap_gain_at(antenna, tap, sample as f64)
    }

    /// Tap gain at a possibly fractional sample time.
    pub fn tap_gain_at(&self, antenna: usize, tap: usize, time_samples: f64) -> Complex64 {
        self.taps[tap]
            .paths
            .iter()
            .map(|p| {
                let phase = 2.0 * PI * p.dfo_hz * time_samples * self.sample_interval_s
                    + self.array.element_phase(antenna, p.aoa_rad);
                p.gain * Complex64::cis(phase)
            })
            .sum()
    }

    /// Tabulates `g_{a,i}(n)` for `n < len`.
    pub fn tap_gains(&self, len: usize) -> TapGainTable {
        let num_ant = self.array.num_antennas;
        let num_taps = self.taps.len();
        let mut values = vec![Complex64::new(0.0, 0.0); len * num_ant * num_taps];
        let mut steer = vec![Complex64::new(0.0, 0.0); num_ant];
        for (i, tap) in self.taps.iter().enumerate() {
            for path in &tap.paths {
                for (a, s) in steer.iter_mut().enumerate() {
                    *s = path.gain * Complex64::cis(self.array.element_phase(a, path.aoa_rad));
                }
                let step = 2.0 * PI * path.dfo_hz * self.sample_interval_s;
                for n in 0..len {
                    let doppler = Complex64::cis(step * n as f64);
                    let base = n * num_ant * num_taps;
                    for (a, s) in steer.iter().enumerate() {
                        values[base + a * num_taps + i] += s * doppler;
                    }
                }
            }
        }
        TapGainTable {
            len,
            num_antennas: num_ant,
            delays: self.taps.iter().map(|t| t.delay).collect(),
            values,
        }
    }

    /// Plain-text record: two `#` header lines, then one path per line as
    /// `tap delay re(alpha) im(alpha) dfo_hz aoa_rad departure_rad`.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# antennas={} spacing_wavelengths={:e}",
            self.array.num_antennas, self.array.spacing_wavelengths
        );
        let _ = writeln!(
            out,
            "# sample_interval_s={:e} carrier_hz={:e}",
            self.sample_interval_s, self.carrier_hz
        );
        for (i, tap) in self.taps.iter().enumerate() {
            for p in &tap.paths {
                let _ = writeln!(
                    out,
                    "{} {} {:e} {:e} {:e} {:e} {:e}",
                    i, tap.delay, p.gain.re, p.gain.im, p.dfo_hz, p.aoa_rad, p.departure_rad
                );
            }
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Parse {
            what: "channel record",
            reason,
        };
        let mut header = std::collections::HashMap::new();
        let mut taps: Vec<ChannelTap> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        header.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 7 {
                return Err(bad(format!("line {}: expected 7 fields", lineno + 1)));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            let idx = |k: usize| -> Result<usize> {
                fields[k]
                    .parse::<usize>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            let (tap, delay) = (idx(0)?, idx(1)?);
            let path = PropagationPath {
                gain: Complex64::new(num(2)?, num(3)?),
                dfo_hz: num(4)?,
                aoa_rad: num(5)?,
                departure_rad: num(6)?,
            };
            if tap == taps.len() {
                taps.push(ChannelTap {
                    delay,
                    paths: Vec::new(),
                });
            } else if tap + 1 != taps.len() || taps[tap].delay != delay {
                return Err(bad(format!("line {}: taps must be contiguous", lineno + 1)));
            }
            taps[tap].paths.push(path);
        }
        let get = |k: &str| -> Result<String> {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| bad(format!("missing header field {k}")))
        };
        let parse_f = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|e| bad(format!("{k}: {e}"))) };
        let antennas = get("antennas")?
            .parse::<usize>()
            .map_err(|e| bad(format!("antennas: {e}")))?;
        let array = ArrayGeometry::new(antennas, parse_f("spacing_wavelengths")?)?;
        Self::new(taps, array, parse_f("sample_interval_s")?, parse_f("carrier_hz")?)
    }
}

/// `g_{a,i}(n)` tabulated over a frame.
#[derive(Debug, Clone)]
pub struct TapGainTable {
    len: usize,
    num_antennas: usize,
    delays: Vec<usize>,
    values: Vec<Complex64>,
}

impl TapGainTable {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    #[inline]
    pub fn get(&self, sample: usize, antenna: usize, tap: usize) -> Complex64 {
        self.values[(sample * self.num_antennas + antenna) * self.delays.len() + tap]
    }
}

/// Draws one channel realization.
///
/// Path gains are `CN(0, 1/(N_tap N_q))`, departure angles uniform on
/// `[0, pi)`, arrival angles uniform on `[-pi/2, pi/2)`. The first tap has
/// delay 0 and the remaining delays are distinct draws from `1..=max_delay`.
pub fn sample_geometry<R: Rng + ?Sized>(rng: &mut R, cfg: &ChannelConfig) -> Result<GeometricChannel> {
    cfg.validate()?;
    let mut delays = vec![0usize];
    if cfg.taps > 1 {
        let mut rest: Vec<usize> = index::sample(rng, cfg.max_delay, cfg.taps - 1)
            .into_iter()
            .map(|d| d + 1)
            .collect();
        rest.sort_unstable();
        delays.extend(rest);
    }
    let scale = (1.0 / (2.0 * (cfg.taps * cfg.paths_per_tap) as f64)).sqrt();
    let taps = delays
        .into_iter()
        .map(|delay| {
            let paths = (0..cfg.paths_per_tap)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    let departure = rng.random_range(0.0..PI);
                    let aoa = rng.random_range(-PI / 2.0..PI / 2.0);
                    PropagationPath::from_geometry(
                        Complex64::new(re, im) * scale,
                        aoa,
                        departure,
                        cfg.speed_mps,
                        cfg.carrier_hz,
                    )
                })
                .collect();
            ChannelTap { delay, paths }
        })
        .collect();
    GeometricChannel::new(taps, cfg.array, cfg.sample_interval_s, cfg.carrier_hz)
}

/// Passes `signal` through the channel: column `a` of the result is
/// `r_a(n) = sum_i g_{a,i}(n) s(n - d_i)` with `s(n) = 0` for `n < 0`.
/// Noise is not added.
pub fn apply_channel(chan: &GeometricChannel, signal: &[Complex64]) -> Result<Array2<Complex64>> {
    let len = signal.len();
    if chan.max_delay() >= len.max(1) {
        return Err(Error::config(
            "channel.max_delay",
            format!("delay {} exceeds frame length {len}", chan.max_delay()),
        ));
    }
    let gains = chan.tap_gains(len);
    Ok(apply_tap_gains(&gains, signal))
}

/// Same as [`apply_channel`] with pre-tabulated gains.
pub fn apply_tap_gains(gains: &TapGainTable, signal: &[Complex64]) -> Array2<Complex64> {
    let len = signal.len().min(gains.len());
    let num_ant = gains.num_antennas();
    let mut out = Array2::zeros((signal.len(), num_ant));
    for n in 0..len {
        for a in 0..num_ant {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &d) in gains.delays().iter().enumerate() {
                if n >= d {
                    acc += gains.get(n, a, i) * signal[n - d];
                }
            }
            out[[n, a]] = acc;
        }
    }
    out
}

/// `rows x cols` matrix of i.i.d. `CN(0, noise_variance)` samples.
pub fn awgn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, noise_variance: f64) -> Result<Array2<Complex64>> {
    if !(noise_variance >= 0.0) {
        return Err(Error::config(
            "noise_variance",
            format!("must be non-negative, got {noise_variance}"),
        ));
    }
    let sd = (noise_variance / 2.0).sqrt();
    Ok(Array2::from_shape_simple_fn((rows, cols), || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * sd, im * sd)
    }))
}

/// Adds i.i.d. circularly-symmetric Gaussian noise of variance `noise_variance`.
pub fn add_awgn<R: Rng + ?Sized>(
    received: &Array2<Complex64>,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    let (rows, cols) = received.dim();
    if noise_variance == 0.0 {
        return Ok(received.clone());
    }
    Ok(received + &awgn(rng, rows, cols, noise_variance)?)
}

/// Per-sample noise variance for a given SNR in dB; `+inf` maps to zero.
pub fn noise_variance_for_snr(snr_db: f64, symbol_energy: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        symbol_energy / 10f64.powf(snr_db / 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_i(antennas: usize) -> ChannelConfig {
        ChannelConfig {
            taps: 6,
            paths_per_tap: 8,
            max_delay: 10,
            speed_mps: 240.0 / 3.6,
            carrier_hz: 4.0e9,
            sample_interval_s: 1.0 / (32.0 * 15.0e3),
            array: ArrayGeometry::half_wavelength(antennas).unwrap(),
        }
    }

    fn single_path(delay: usize, dfo: f64, antennas: usize) -> GeometricChannel {
        GeometricChannel::new(
            vec![ChannelTap {
                delay,
                paths: vec![PropagationPath {
                    gain: Complex64::new(1.0, 0.0),
                    dfo_hz: dfo,
                    aoa_rad: 0.3,
                    departure_rad: 0.0,
                }],
            }],
            ArrayGeometry::half_wavelength(antennas).unwrap(),
            10e-6,
            4e9,
        )
        .unwrap()
    }

    #[test]
    fn dfo_bounded_by_speed() {
        // 66.667 m/s * 4e9 Hz / 3e8 m/s = 888.9 Hz
        let cfg = table_i(8);
        assert!((cfg.max_dfo_hz() - 888.888_888_9).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let chan = sample_geometry(&mut rng, &cfg).unwrap();
            for p in chan.paths() {
                assert!(p.dfo_hz.abs() <= 888.9);
                assert!((0.0..PI).contains(&p.departure_rad));
                assert!((-PI / 2.0..PI / 2.0).contains(&p.aoa_rad));
            }
        }
    }

    #[test]
    fn broadside_departure_has_zero_dfo() {
        let p = PropagationPath::from_geometry(Complex64::new(1.0, 0.0), 0.1, PI / 2.0, 66.7, 4e9);
        assert!(p.dfo_hz.abs() < 1e-9);
        let p = PropagationPath::from_geometry(Complex64::new(1.0, 0.0), 0.1, 0.0, 0.0, 4e9);
        assert_eq!(p.dfo_hz, 0.0);
    }

    #[test]
    fn table_i_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let chan = sample_geometry(&mut rng, &table_i(4)).unwrap();
            assert_eq!(chan.num_paths(), 48);
            let delays: Vec<usize> = chan.taps().iter().map(|t| t.delay).collect();
            assert_eq!(delays.len(), 6);
            assert_eq!(delays[0], 0);
            assert!(delays.windows(2).all(|w| w[0] < w[1]));
            assert!(*delays.last().unwrap() <= 10);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = table_i(1);
        cfg.taps = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = table_i(1);
        cfg.carrier_hz = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = table_i(1);
        cfg.speed_mps = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = table_i(1);
        cfg.sample_interval_s = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = table_i(1);
        cfg.taps = 11;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn steering_vector_values() {
        let a = steering_vector(&ArrayGeometry::half_wavelength(5).unwrap(), 0.0);
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let a = steering_vector(&ArrayGeometry::half_wavelength(2).unwrap(), PI / 2.0);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);

        let a = steering_vector(&ArrayGeometry::half_wavelength(4).unwrap(), PI / 6.0);
        for (k, z) in a.iter().enumerate() {
            let expected = Complex64::cis(k as f64 * PI / 2.0);
            assert!((z - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_vector_unit_modulus() {
        let array = ArrayGeometry::new(7, 0.37).unwrap();
        for k in 0..50 {
            let theta = -PI / 2.0 + k as f64 * PI / 50.0;
            let a = steering_vector(&array, theta);
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
            let energy: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert!((energy - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tap_gain_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = table_i(3);
        cfg.speed_mps = 0.0;
        let chan = sample_geometry(&mut rng, &cfg).unwrap();
        for i in 0..6 {
            let sum: Complex64 = chan.taps()[i].paths.iter().map(|p| p.gain).sum();
            for n in [0, 17, 400] {
                assert!((chan.tap_gain(0, i, n) - sum).norm() < 1e-14);
            }
        }

        let chan = single_path(0, 100.0, 1);
        assert_eq!(chan.tap_gain(0, 0, 0), Complex64::new(1.0, 0.0));
        for n in [0usize, 5, 99] {
            let step = (chan.tap_gain(0, 0, n + 1) / chan.tap_gain(0, 0, n)).arg();
            assert!((step - 2.0 * PI * 1e-3).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_table_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chan = sample_geometry(&mut rng, &table_i(4)).unwrap();
        let table = chan.tap_gains(100);
        for n in [0, 1, 50, 99] {
            for a in 0..4 {
                for i in 0..6 {
                    assert!((table.get(n, a, i) - chan.tap_gain(a, i, n)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_and_delay_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<Complex64> = (0..40).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let r = apply_channel(&single_path(0, 0.0, 1), &s).unwrap();
        for (n, z) in s.iter().enumerate() {
            assert_eq!(r[[n, 0]], *z);
        }

        let chan = single_path(2, 250.0, 3);
        let r = apply_channel(&chan, &s).unwrap();
        for a in 0..3 {
            assert_eq!(r[[0, a]], Complex64::new(0.0, 0.0));
            assert_eq!(r[[1, a]], Complex64::new(0.0, 0.0));
            for n in 2..40 {
                let expected = chan.tap_gain(a, 0, n) * s[n - 2];
                assert!((r[[n, a]] - expected).norm() < 1e-14);
            }
        }
        assert!(apply_channel(&chan, &s[..2]).is_err());
    }

    #[test]
    fn apply_channel_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chan = sample_geometry(&mut rng, &table_i(4)).unwrap();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
            (0..300)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect()
        };
        let s1 = draw(&mut rng);
        let s2 = draw(&mut rng);
        let sum: Vec<Complex64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let r = apply_channel(&chan, &sum).unwrap();
        let r12 = apply_channel(&chan, &s1).unwrap() + apply_channel(&chan, &s2).unwrap();
        let err = (&r - &r12).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let norm = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-12);
    }

    #[test]
    fn awgn_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let zero = Array2::<Complex64>::zeros((1000, 1));
        assert_eq!(add_awgn(&zero, 0.0, &mut rng).unwrap(), zero);
        assert!(add_awgn(&zero, -1.0, &mut rng).is_err());

        let noise = awgn(&mut rng, 1_000_000, 1, 1.0).unwrap();
        let var = noise.iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e6;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");

        assert!((noise_variance_for_snr(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(noise_variance_for_snr(f64::INFINITY, 1.0), 0.0);
    }

    /// J0 by its power series; adequate for |x| < 5.
    fn bessel_j0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            term *= -(x * x / 4.0) / (k * k) as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn channel_power_and_jakes_correlation() {
        let mut cfg = table_i(3);
        cfg.paths_per_tap = 64;
        cfg.taps = 1;
        let realizations = 10_000;
        // lag chosen so that 2 pi f_max tau = 1.5
        let lag = (1.5 / (2.0 * PI * cfg.max_dfo_hz() * cfg.sample_interval_s)).round() as usize;
        let x = 2.0 * PI * cfg.max_dfo_hz() * lag as f64 * cfg.sample_interval_s;

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut p0, mut corr) = (0.0, Complex64::new(0.0, 0.0));
        for _ in 0..realizations {
            let chan = sample_geometry(&mut rng, &cfg).unwrap();
            let g0 = chan.tap_gain(0, 0, 0);
            let gl = chan.tap_gain(0, 0, lag);
            p0 += g0.norm_sqr();
            corr += gl * g0.conj();
        }
        p0 /= realizations as f64;
        corr /= realizations as f64;
        assert!((p0 - 1.0).abs() < 0.02, "lag-0 power {p0}");
        assert!((corr.re - bessel_j0(x)).abs() < 0.03, "corr {corr} vs {}", bessel_j0(x));

        let cfg = table_i(4);
        let mut totals = vec![0.0; 4 * 3];
        for _ in 0..realizations {
            let chan = sample_geometry(&mut rng, &cfg).unwrap();
            for a in 0..4 {
                for (k, n) in [0usize, 300, 671].into_iter().enumerate() {
                    totals[a * 3 + k] += (0..6).map(|i| chan.tap_gain(a, i, n).norm_sqr()).sum::<f64>();
                }
            }
        }
        for t in totals {
            let mean = t / realizations as f64;
            assert!((mean - 1.0).abs() < 0.02, "total power {mean}");
        }
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chan = sample_geometry(&mut rng, &table_i(8)).unwrap();
        let text = chan.to_record();
        assert_eq!(text.lines().count(), 2 + 48);
        assert_eq!(GeometricChannel::from_record(&text).unwrap(), chan);
        assert!(GeometricChannel::from_record("0 0 1 2 3").is_err());
    }
}

//! OTFS as pre/post-processed OFDM.
//!
//! Grids are stored column-major with the delay (or subcarrier) index
//! fastest: entry `(m, k)` of an `M x N` grid lives at `m + M k`. All DFTs
//! are unitary (`1/sqrt(M)`, `1/sqrt(N)`), so every stage except the cyclic
//! prefix preserves energy.
//!
//! ```text
//! s = (I_N (x) A_cp) (I_N (x) F_M^H) W_T (F_N^H (x) F_M) x
//! y = (F_N (x) F_M^H) W_R (I_N (x) F_M) (I_N (x) R_cp) r
//! ```

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Frame dimensions and timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    m: usize,
    n: usize,
    cp_len: usize,
    subcarrier_spacing_hz: f64,
}

impl FrameParams {
    pub fn new(m: usize, n: usize, cp_len: usize, subcarrier_spacing_hz: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::config("frame.m", format!("must be at least 2, got {m}")));
        }
        if n < 2 {
            return Err(Error::config("frame.n", format!("must be at least 2, got {n}")));
        }
        if cp_len > m {
            return Err(Error::config(
                "frame.cp",
                format!("cyclic prefix {cp_len} longer than the {m}-sample symbol"),
            ));
        }
        if !(subcarrier_spacing_hz > 0.0 && subcarrier_spacing_hz.is_finite()) {
            return Err(Error::config("frame.subcarrier_spacing_hz", "must be positive"));
        }
        Ok(Self {
            m,
            n,
            cp_len,
            subcarrier_spacing_hz,
        })
    }

    /// Picks `N_cp = max(ceil(cp_duration / T_s), max_delay)` so the prefix
    /// always covers the delay spread.
    pub fn with_cp_duration(
        m: usize,
        n: usize,
        subcarrier_spacing_hz: f64,
        cp_duration_s: f64,
        max_delay: usize,
    ) -> Result<Self> {
        if !(cp_duration_s >= 0.0 && cp_duration_s.is_finite()) {
            return Err(Error::config("frame.cp_duration_s", "must be non-negative"));
        }
        let ts = 1.0 / (m as f64 * subcarrier_spacing_hz);
        // Guard against 5e-6 / ts landing a hair above an integer.
        let from_duration = (cp_duration_s / ts - 1e-9).ceil().max(0.0) as usize;
        Self::new(m, n, from_duration.max(max_delay), subcarrier_spacing_hz)
    }

    /// Number of delay bins / subcarriers.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of Doppler bins / OFDM symbols.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.subcarrier_spacing_hz
    }

    /// `T_s = 1 / (M Δf)`.
    pub fn sample_interval_s(&self) -> f64 {
        1.0 / (self.m as f64 * self.subcarrier_spacing_hz)
    }

    pub fn grid_len(&self) -> usize {
        self.m * self.n
    }

    pub fn block_len(&self) -> usize {
        self.m + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.block_len() * self.n
    }
}

macro_rules! grid_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<Complex64>);

        impl $name {
            pub fn new(values: Vec<Complex64>, params: &FrameParams) -> Result<Self> {
                Error::check_len(stringify!($name), params.grid_len(), values.len())?;
                Ok(Self(values))
            }

            pub fn zeros(params: &FrameParams) -> Self {
                Self(vec![Complex64::new(0.0, 0.0); params.grid_len()])
            }

            pub fn as_slice(&self) -> &[Complex64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
                &mut self.0
            }

            pub fn into_vec(self) -> Vec<Complex64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            /// Interleaved little-endian `f64` pairs `re, im, re, im, ...`.
            pub fn to_le_bytes(&self) -> Vec<u8> {
                self.0
                    .iter()
                    .flat_map(|z| z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()))
                    .collect()
            }

            pub fn from_le_bytes(bytes: &[u8], params: &FrameParams) -> Result<Self> {
                Error::check_len(stringify!($name), params.grid_len() * 16, bytes.len())?;
                let values = bytes
                    .chunks_exact(16)
                    .map(|c| {
                        let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                        let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                        Complex64::new(re, im)
                    })
                    .collect();
                Ok(Self(values))
            }
        }
    };
}

grid_newtype!(
    /// The vectorized `M x N` delay-Doppler symbol grid `x = vec(X)`.
    DelayDopplerFrame
);
grid_newtype!(
    /// `M x N` time-frequency grid; column `n` holds the subcarriers of OFDM symbol `n`.
    TimeFrequencyGrid
);

/// Diagonal time-frequency windows `W_T` and `W_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    transmit: Option<Vec<Complex64>>,
    receive: Option<Vec<Complex64>>,
}

impl WindowPair {
    /// Rectangular windows.
    pub fn identity() -> Self {
        Self {
            transmit: None,
            receive: None,
        }
    }

    /// Arbitrary unit-modulus windows.
    pub fn new(transmit: Vec<Complex64>, receive: Vec<Complex64>) -> Result<Self> {
        Error::check_len("WindowPair", transmit.len(), receive.len())?;
        if transmit.iter().chain(&receive).any(|w| (w.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::config("window", "diagonal entries must have unit modulus"));
        }
        Ok(Self {
            transmit: Some(transmit),
            receive: Some(receive),
        })
    }

    /// Transmit window `w` with the receive window set to its conjugate.
    pub fn matched(transmit: Vec<Complex64>) -> Result<Self> {
        let receive = transmit.iter().map(|w| w.conj()).collect();
        Self::new(transmit, receive)
    }

    pub fn is_identity(&self) -> bool {
        self.transmit.is_none() && self.receive.is_none()
    }

    fn check(&self, params: &FrameParams) -> Result<()> {
        if let Some(w) = &self.transmit {
            Error::check_len("WindowPair", params.grid_len(), w.len())?;
        }
        Ok(())
    }
}

impl Default for WindowPair {
    fn default() -> Self {
        Self::identity()
    }
}

fn apply_diagonal(values: &mut [Complex64], window: &Option<Vec<Complex64>>) {
    if let Some(w) = window {
        for (v, w) in values.iter_mut().zip(w) {
            *v *= w;
        }
    }
}

/// OTFS/OFDM modem for one frame geometry, with planned transforms.
#[derive(Clone)]
pub struct Modem {
    params: FrameParams,
    fft_m: Arc<dyn Fft<f64>>,
    ifft_m: Arc<dyn Fft<f64>>,
    fft_n: Arc<dyn Fft<f64>>,
    ifft_n: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Modem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Modem").field("params", &self.params).finish()
    }
}

impl Modem {
    pub fn new(params: FrameParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params,
            fft_m: planner.plan_fft_forward(params.m),
            ifft_m: planner.plan_fft_inverse(params.m),
            fft_n: planner.plan_fft_forward(params.n),
            ifft_n: planner.plan_fft_inverse(params.n),
        }
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    /// Unitary transform of every contiguous `M`-long column.
    fn columns(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        fft.process(data);
        let scale = 1.0 / (self.params.m as f64).sqrt();
        data.iter_mut().for_each(|z| *z *= scale);
    }

    /// Unitary transform along the second (stride-`M`) axis.
    fn rows(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let (m, n) = (self.params.m, self.params.n);
        let mut t = vec![Complex64::new(0.0, 0.0); m * n];
        for k in 0..n {
            for i in 0..m {
                t[i * n + k] = data[i + m * k];
            }
        }
        fft.process(&mut t);
        let scale = 1.0 / (n as f64).sqrt();
        for k in 0..n {
            for i in 0..m {
                data[i + m * k] = t[i * n + k] * scale;
            }
        }
    }

    /// `(F_N^H (x) F_M) x`: DFT along delay, IDFT along Doppler.
    pub fn isfft(&self, grid: &DelayDopplerFrame) -> Result<TimeFrequencyGrid> {
        Error::check_len("isfft", self.params.grid_len(), grid.len())?;
        let mut v = grid.0.clone();
        self.columns(&mut v, &self.fft_m);
        self.rows(&mut v, &self.ifft_n);
        Ok(TimeFrequencyGrid(v))
    }

    /// `(F_N (x) F_M^H) v`, the exact inverse of [`Modem::isfft`].
    pub fn sfft(&self, tf: &TimeFrequencyGrid) -> Result<DelayDopplerFrame> {
        Error::check_len("sfft", self.params.grid_len(), tf.len())?;
        let mut v = tf.0.clone();
        self.columns(&mut v, &self.ifft_m);
        self.rows(&mut v, &self.fft_n);
        Ok(DelayDopplerFrame(v))
    }

    /// Per-symbol IDFT followed by cyclic-prefix insertion.
    pub fn ofdm_modulate(&self, tf: &TimeFrequencyGrid) -> Result<Vec<Complex64>> {
        Error::check_len("ofdm_modulate", self.params.grid_len(), tf.len())?;
        let (m, cp) = (self.params.m, self.params.cp_len);
        let mut body = tf.0.clone();
        self.columns(&mut body, &self.ifft_m);
        let mut out = Vec::with_capacity(self.params.frame_len());
        for block in body.chunks_exact(m) {
            out.extend_from_slice(&block[m - cp..]);
            out.extend_from_slice(block);
        }
        Ok(out)
    }

    /// Cyclic-prefix removal followed by a per-symbol DFT.
    pub fn ofdm_demodulate(&self, received: &[Complex64]) -> Result<TimeFrequencyGrid> {
        Error::check_len("ofdm_demodulate", self.params.frame_len(), received.len())?;
        let (m, cp) = (self.params.m, self.params.cp_len);
        let mut body: Vec<Complex64> = received
            .chunks_exact(self.params.block_len())
            .flat_map(|block| block[cp..cp + m].iter().copied())
            .collect();
        self.columns(&mut body, &self.fft_m);
        Ok(TimeFrequencyGrid(body))
    }

    pub fn otfs_modulate(&self, x: &DelayDopplerFrame, window: &WindowPair) -> Result<Vec<Complex64>> {
        window.check(&self.params)?;
        let mut tf = self.isfft(x)?;
        apply_diagonal(&mut tf.0, &window.transmit);
        self.ofdm_modulate(&tf)
    }

    pub fn otfs_demodulate(&self, received: &[Complex64], window: &WindowPair) -> Result<DelayDopplerFrame> {
        window.check(&self.params)?;
        let mut tf = self.ofdm_demodulate(received)?;
        apply_diagonal(&mut tf.0, &window.receive);
        self.sfft(&tf)
    }
}

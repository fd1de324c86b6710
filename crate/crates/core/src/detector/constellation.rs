use num_complex::Complex64;

use crate::error::{Error, Result};

/// A unit-energy, zero-mean symbol alphabet with Gray bit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    name: String,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    bits_per_symbol: u32,
    /// Per-axis amplitudes of a square QAM grid: point `i * L + k` is `levels[i] + j levels[k]`.
    levels: Option<Vec<f64>>,
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl Constellation {
    /// Square Gray-mapped QAM; `order` must be a power of 4.
    pub fn qam(order: usize) -> Result<Self> {
        let bits = order.trailing_zeros();
        if order < 4 || !order.is_power_of_two() || bits & 1 == 1 {
            return Err(Error::config(
                "modulation",
                format!("square QAM order must be a power of 4, got {order}"),
            ));
        }
        let side = 1usize << (bits / 2);
        let norm = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
        let level = |i: usize| (2 * i) as f64 - (side - 1) as f64;
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for i in 0..side {
            for q in 0..side {
                points.push(Complex64::new(level(i), level(q)) / norm);
                labels.push((gray(i as u32) << (bits / 2)) | gray(q as u32));
            }
        }
        Ok(Self {
            name: format!("{order}qam"),
            points,
            labels,
            bits_per_symbol: bits,
            levels: Some((0..side).map(|i| level(i) / norm).collect()),
        })
    }

    /// Gray-mapped PSK with `order` points (a power of two, at least 2).
    pub fn psk(order: usize) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::config(
                "modulation",
                format!("PSK order must be a power of two >= 2, got {order}"),
            ));
        }
        let step = 2.0 * std::f64::consts::PI / order as f64;
        Ok(Self {
            name: format!("{order}psk"),
            points: (0..order).map(|k| Complex64::cis(step * k as f64)).collect(),
            labels: (0..order as u32).map(gray).collect(),
            bits_per_symbol: order.trailing_zeros(),
            levels: None,
        })
    }

    pub fn qpsk() -> Self {
        Self::qam(4).unwrap()
    }

    pub fn qam16() -> Self {
        Self::qam(16).unwrap()
    }

    pub fn bpsk() -> Self {
        Self::psk(2).unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Per-axis amplitudes when the alphabet is a square QAM grid.
    pub fn square_levels(&self) -> Option<&[f64]> {
        self.levels.as_deref()
    }

    pub fn average_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Index of the point closest to `z`.
    pub fn nearest(&self, z: Complex64) -> usize {
        self.points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - z).norm_sqr().total_cmp(&(b.1 - z).norm_sqr()))
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Number of differing label bits between two symbol indices.
    pub fn bit_errors(&self, sent: usize, decided: usize) -> u32 {
        (self.labels[sent] ^ self.labels[decided]).count_ones()
    }
}

impl std::str::FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "");
        match lower.as_str() {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" => Ok(Self::qpsk()),
            _ => {
                if let Some(order) = lower.strip_suffix("qam") {
                    let order = order
                        .parse()
                        .map_err(|_| Error::config("modulation", format!("unknown constellation `{s}`")))?;
                    Self::qam(order)
                } else if let Some(order) = lower.strip_suffix("psk") {
                    let order = order
                        .parse()
                        .map_err(|_| Error::config("modulation", format!("unknown constellation `{s}`")))?;
                    Self::psk(order)
                } else {
                    Err(Error::config("modulation", format!("unknown constellation `{s}`")))
                }
            }
        }
    }
}

use std::f64::consts::PI;

use num_complex::Complex64;

use super::Constellation;
use crate::channel::GeometricChannel;
use crate::error::{Error, Result};
use crate::modem::{FrameParams, TimeFrequencyGrid};

/// Per-antenna frequency response sampled at the middle of every OFDM
/// symbol body: `H_a[m, n] = sum_i g_{a,i}(t_n) exp(-j 2 pi m d_i / M)` with
/// `t_n = n (M + cp) + cp + (M - 1) / 2`.
pub fn midpoint_frequency_response(chan: &GeometricChannel, params: &FrameParams) -> Vec<TimeFrequencyGrid> {
    let (m, n, cp) = (params.m(), params.n(), params.cp_len());
    (0..chan.array().num_antennas())
        .map(|a| {
            let mut h = vec![Complex64::new(0.0, 0.0); m * n];
            for k in 0..n {
                let t = (k * (m + cp) + cp) as f64 + (m as f64 - 1.0) / 2.0;
                for (i, tap) in chan.taps().iter().enumerate() {
                    let g = chan.tap_gain_at(a, i, t);
                    for (sc, hv) in h[k * m..(k + 1) * m].iter_mut().enumerate() {
                        *hv += g * Complex64::cis(-2.0 * PI * (sc * tap.delay) as f64 / m as f64);
                    }
                }
            }
            TimeFrequencyGrid::new(h, params).expect("grid length matches params")
        })
        .collect()
}

/// Per-resource-element MMSE combining across antennas followed by
/// nearest-point quantization: `x = Q(sum_a h_a^* y_a / (sum_a |h_a|^2 + sigma^2))`.
pub fn mmse_mrc_ofdm(
    received: &[TimeFrequencyGrid],
    response: &[TimeFrequencyGrid],
    noise_variance: f64,
    constellation: &Constellation,
) -> Result<Vec<usize>> {
    Error::check_len("mmse_mrc_ofdm antennas", received.len(), response.len())?;
    let len = received
        .first()
        .ok_or_else(|| Error::config("array.antennas", "at least one antenna is required"))?
        .len();
    for (y, h) in received.iter().zip(response) {
        Error::check_len("mmse_mrc_ofdm received grid", len, y.len())?;
        Error::check_len("mmse_mrc_ofdm response grid", len, h.len())?;
    }
    Ok((0..len)
        .map(|re| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = noise_variance;
            for (y, h) in received.iter().zip(response) {
                let hv = h.as_slice()[re];
                num += hv.conj() * y.as_slice()[re];
                den += hv.norm_sqr();
            }
            let est = if den > 0.0 { num / den } else { Complex64::new(0.0, 0.0) };
            constellation.nearest(est)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, ArrayGeometry, ChannelTap, PropagationPath};
    use crate::modem::Modem;

    #[test]
    fn two_equal_antennas_noise_free() {
        let c = Constellation::qam16();
        let params = FrameParams::new(4, 4, 0, 15e3).unwrap();
        let sent: Vec<usize> = (0..16).collect();
        let x = TimeFrequencyGrid::new(sent.iter().map(|&s| c.point(s)).collect(), &params).unwrap();
        let ones = TimeFrequencyGrid::new(vec![Complex64::new(1.0, 0.0); 16], &params).unwrap();
        let out = mmse_mrc_ofdm(&[x.clone(), x], &[ones.clone(), ones], 0.0, &c).unwrap();
        assert_eq!(out, sent);
    }

    #[test]
    fn static_channel_exact_recovery() {
        let c = Constellation::qam16();
        let params = FrameParams::new(8, 4, 3, 15e3).unwrap();
        let path = |g: f64, phi: f64| PropagationPath {
            gain: Complex64::from_polar(g, phi),
            dfo_hz: 0.0,
            aoa_rad: 0.2,
            departure_rad: 0.0,
        };
        let taps = vec![
            ChannelTap {
                delay: 0,
                paths: vec![path(0.8, 0.3)],
            },
            ChannelTap {
                delay: 2,
                paths: vec![path(0.5, -1.0), path(0.2, 2.0)],
            },
            ChannelTap {
                delay: 3,
                paths: vec![path(0.3, 0.7)],
            },
        ];
        let chan = GeometricChannel::new(
            taps,
            ArrayGeometry::half_wavelength(1).unwrap(),
            params.sample_interval_s(),
            4e9,
        )
        .unwrap();
        let modem = Modem::new(params);
        let sent: Vec<usize> = (0..32).map(|i| (i * 7) % 16).collect();
        let x = TimeFrequencyGrid::new(sent.iter().map(|&s| c.point(s)).collect(), &params).unwrap();
        let r = apply_channel(&chan, &modem.ofdm_modulate(&x).unwrap()).unwrap();
        let y = modem.ofdm_demodulate(&r.column(0).to_vec()).unwrap();
        let h = midpoint_frequency_response(&chan, &params);
        let out = mmse_mrc_ofdm(&[y], &h, 0.0, &c).unwrap();
        assert_eq!(out, sent);
    }

    #[test]
    fn mismatched_antennas_rejected() {
        let c = Constellation::qpsk();
        let params = FrameParams::new(2, 2, 0, 15e3).unwrap();
        let g = TimeFrequencyGrid::zeros(&params);
        assert!(mmse_mrc_ofdm(std::slice::from_ref(&g), &[g.clone(), g.clone()], 0.1, &c).is_err());
    }
}

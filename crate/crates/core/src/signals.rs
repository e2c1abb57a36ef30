//! Fourier-method resampling and band-power featurization of raw epochs.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Features are `log10` of the mean band power; silence maps to this value.
pub const LOG_FLOOR: f64 = -12.0;

/// Frequency bands `[lo, hi)` in Hz: delta, theta, alpha, sigma, beta.
pub const BANDS: [(f64, f64); 5] = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (12.0, 16.0), (16.0, 30.0)];

pub const BAND_NAMES: [&str; 5] = ["delta", "theta", "alpha", "sigma", "beta"];

/// Lowest rate at which every band sits below Nyquist with margin.
pub const MIN_FEATURE_RATE_HZ: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignalError {
    #[error("invalid sampling rate {0} Hz")]
    InvalidRate(u32),
    #[error("epoch has {0} samples, need at least 2")]
    TooShort(usize),
    #[error("sampling rate {0} Hz is below the {MIN_FEATURE_RATE_HZ} Hz needed for band powers")]
    RateTooLow(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Vec<f64>,
    pub rate_hz: u32,
}

impl Epoch {
    pub fn new(samples: Vec<f64>, rate_hz: u32) -> Self {
        Epoch { samples, rate_hz }
    }
}

fn forward(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Resample `epoch` to `target_rate_hz` by truncating or zero-padding its
/// spectrum.
///
/// The output has `round(len * target / source)` samples. The half-spectrum
/// is copied up to the smaller Nyquist limit. When the shorter length is
/// even its Nyquist bin is doubled on the way down (the two mirrored bins
/// fold together) and halved on the way up (it splits into two). The result
/// is scaled so a pure in-band sinusoid keeps its amplitude.
pub fn fourier_resample(epoch: &Epoch, target_rate_hz: u32) -> Result<Epoch, SignalError> {
    if epoch.rate_hz == 0 {
        return Err(SignalError::InvalidRate(epoch.rate_hz));
    }
    if target_rate_hz == 0 {
        return Err(SignalError::InvalidRate(target_rate_hz));
    }
    let n = epoch.samples.len();
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    let m = ((n as f64) * target_rate_hz as f64 / epoch.rate_hz as f64).round() as usize;
    if m == n {
        return Ok(Epoch::new(epoch.samples.clone(), target_rate_hz));
    }
    if m == 0 {
        return Err(SignalError::InvalidRate(target_rate_hz));
    }

    let spectrum = forward(&epoch.samples);
    let shorter = n.min(m);
    let mut half = vec![Complex64::new(0.0, 0.0); m / 2 + 1];
    let copy = shorter / 2 + 1;
    half[..copy].copy_from_slice(&spectrum[..copy]);
    if shorter % 2 == 0 {
        let nyq = shorter / 2;
        if m < n {
            half[nyq] *= 2.0;
        } else {
            half[nyq] *= 0.5;
        }
    }

    // Rebuild a Hermitian spectrum of length m; DC and an even-length Nyquist
    // bin must be real.
    let mut full = vec![Complex64::new(0.0, 0.0); m];
    full[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..=(m - 1) / 2 {
        full[k] = half[k];
        full[m - k] = half[k].conj();
    }
    if m % 2 == 0 {
        full[m / 2] = Complex64::new(half[m / 2].re, 0.0);
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut full);

    // Unnormalized inverse divided by m, then times m/n for amplitude.
    let scale = 1.0 / n as f64;
    Ok(Epoch::new(full.iter().map(|c| c.re * scale).collect(), target_rate_hz))
}

/// One-sided Hann-windowed periodogram (power spectral density).
///
/// Returns `(frequencies, density)`; integrating the density over frequency
/// gives the mean square of the windowed-and-renormalized signal.
pub fn periodogram(samples: &[f64], rate_hz: u32) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let fs = rate_hz as f64;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let windowed: Vec<f64> = samples.iter().zip(&window).map(|(x, w)| x * w).collect();
    let spec = forward(&windowed);

    let bins = n / 2 + 1;
    let freqs = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    let psd = (0..bins)
        .map(|k| {
            let p = spec[k].norm_sqr() / (fs * wss);
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    (freqs, psd)
}

/// `log10` mean periodogram power in each of the five [`BANDS`].
pub fn bandpower_features(epoch: &Epoch) -> Result<[f64; 5], SignalError> {
    if epoch.rate_hz < MIN_FEATURE_RATE_HZ {
        return Err(SignalError::RateTooLow(epoch.rate_hz));
    }
    if epoch.samples.len() < 2 {
        return Err(SignalError::TooShort(epoch.samples.len()));
    }
    let (freqs, psd) = periodogram(&epoch.samples, epoch.rate_hz);
    let mut out = [LOG_FLOOR; 5];
    for (slot, &(lo, hi)) in out.iter_mut().zip(BANDS.iter()) {
        let (sum, count) = freqs
            .iter()
            .zip(&psd)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .fold((0.0, 0usize), |(s, c), (_, p)| (s + p, c + 1));
        if count > 0 {
            let mean = sum / count as f64;
            if mean > 0.0 {
                *slot = mean.log10().max(LOG_FLOOR);
            }
        }
    }
    Ok(out)
}

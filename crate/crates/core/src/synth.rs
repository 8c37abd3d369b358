//! Forward simulator: sensor spectra from a scenario with the true
//! attenuation law, exact fractional delays, multipath, noise, and optional
//! per-sensor synchronization offsets.
//!
//! Delays are applied in the frequency domain, so the synthesized spectra
//! satisfy the model equation bin for bin. Per-sensor noise and clock
//! offsets come from dedicated RNG streams derived from `noise_seed`, which
//! keeps results independent of any parallel execution order.

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::Float;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::attenuation::true_model_eval;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::scene::{range_matrix, MultipathChannel, Scenario, SignalConfig};

/// One source waveform: `n_t` real samples and the `n_f`-point DFT of the
/// zero-padded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal<T: Scalar> {
    pub samples: Vec<T>,
    pub spectrum: Vec<Complex<T>>,
}

/// Observed half-spectra: rows are sensors, columns are bins 0..=n_f/2.
/// `noise_variance_freq` is the per-bin complex noise variance `n_t σ²`
/// (`None` for noiseless data).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumData<T: Scalar> {
    pub x: DMatrix<Complex<T>>,
    pub noise_variance_freq: Option<T>,
}

impl<T: Scalar> SpectrumData<T> {
    pub fn n_sensors(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.x.ncols()
    }
}

pub(crate) fn fft<T: Scalar>(buf: &mut [Complex<T>]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

pub(crate) fn ifft<T: Scalar>(buf: &mut [Complex<T>]) {
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
    let scale = T::one() / T::cast(buf.len() as f64);
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Band-limited unit-RMS source waveform, deterministic per seed.
///
/// White Gaussian samples are brick-wall masked to the configured band in
/// the `n_t`-point DFT domain, transformed back, and RMS-normalized. The
/// returned spectrum is the `n_f`-point DFT of the zero-padded result.
pub fn generate_source_signal<T: Scalar>(
    cfg: &SignalConfig<T>,
    seed: u64,
) -> Result<SourceSignal<T>> {
    cfg.validate()?;
    let n_t = cfg.n_t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<T>> = (0..n_t)
        .map(|_| Complex::new(T::std_normal(&mut rng), T::zero()))
        .collect();
    fft(&mut buf);

    let lo = cfg.center_freq - cfg.bandwidth / T::cast(2.0);
    let hi = cfg.center_freq + cfg.bandwidth / T::cast(2.0);
    for (k, v) in buf.iter_mut().enumerate() {
        // two-sided mask: bin k aliases to |freq| = min(k, n_t-k) * N_s / n_t
        let idx = k.min(n_t - k);
        let freq = T::cast(idx as f64) * cfg.sample_rate / T::cast(n_t as f64);
        if freq < lo || freq > hi {
            *v = Complex::new(T::zero(), T::zero());
        }
    }
    ifft(&mut buf);

    let mut samples: Vec<T> = buf.iter().map(|v| v.re).collect();
    let energy = pairwise_sum(&samples.iter().map(|&s| s * s).collect::<Vec<_>>());
    let rms = Float::sqrt(energy / T::cast(n_t as f64));
    if rms <= T::zero() {
        return Err(Error::Numerical("degenerate source waveform".into()));
    }
    for s in samples.iter_mut() {
        *s /= rms;
    }

    let mut padded: Vec<Complex<T>> = samples
        .iter()
        .map(|&s| Complex::new(s, T::zero()))
        .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())).take(cfg.n_f - n_t))
        .collect();
    fft(&mut padded);
    Ok(SourceSignal {
        samples,
        spectrum: padded,
    })
}

/// Frequency response of the (cluster, source) channel at bin `f`:
/// `Σ_p γ_p exp(-j2πf τ̂_p / n_f)`.
pub fn multipath_response<T: Scalar>(
    channel: &MultipathChannel<T>,
    cluster: usize,
    source: usize,
    f: usize,
    n_f: usize,
) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for tap in channel.taps_for(cluster, source) {
        let phase = -T::two_pi() * T::cast(f as f64) * tap.delay / T::cast(n_f as f64);
        acc += Complex::from_polar(tap.gain, phase);
    }
    acc
}

/// Per-bin multipath contribution `Σ_p γ_p exp(-j2πf τ̂_p/n_f) S(f)` for one
/// (cluster, source) pair applied to the whole spectrum.
pub fn apply_multipath_profile<T: Scalar>(
    channel: &MultipathChannel<T>,
    cluster: usize,
    source: usize,
    spectrum: &[Complex<T>],
) -> Result<Vec<Complex<T>>> {
    for tap in channel.taps_for(cluster, source) {
        if tap.delay < T::zero() {
            return Err(Error::Config("negative multipath delay".into()));
        }
    }
    let n_f = spectrum.len();
    Ok(spectrum
        .iter()
        .enumerate()
        .map(|(f, s)| multipath_response(channel, cluster, source, f, n_f) * s)
        .collect())
}

/// Per-sensor clock offsets ζ_m in seconds: uniform on `[-√3 s, √3 s]` so the
/// standard deviation equals `sync_error_std`, drawn once per sensor from a
/// dedicated stream. All zeros when the feature is disabled.
pub fn sync_offsets<T: Scalar>(scenario: &Scenario<T>) -> Vec<T> {
    let m = scenario.n_sensors();
    let std = scenario.signal.sync_error_std;
    if std <= T::zero() {
        return vec![T::zero(); m];
    }
    let half_width = Float::sqrt(T::cast(3.0)) * std;
    (0..m)
        .map(|sensor| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise_seed);
            rng.set_stream(2 * sensor as u64 + 1);
            rng.random_range(-half_width..half_width)
        })
        .collect()
}

struct HalfSynthesis<T: Scalar> {
    /// M × (n_f/2 + 1) sensor spectra (noise included when configured).
    half: DMatrix<Complex<T>>,
    signals: Vec<SourceSignal<T>>,
    sigma2: Option<T>,
}

/// Full-spectrum energy of one half-spectrum row, using conjugate symmetry.
fn row_energy<T: Scalar>(row: &[Complex<T>], n_f: usize) -> T {
    let half = n_f / 2;
    let terms: Vec<T> = row
        .iter()
        .enumerate()
        .map(|(f, v)| {
            let double = f != 0 && !(n_f % 2 == 0 && f == half);
            if double {
                T::cast(2.0) * v.norm_sqr()
            } else {
                v.norm_sqr()
            }
        })
        .collect();
    pairwise_sum(&terms)
}

fn synthesize_impl<T: Scalar>(scenario: &Scenario<T>) -> Result<HalfSynthesis<T>> {
    scenario.validate()?;
    let cfg = &scenario.signal;
    let m_count = scenario.n_sensors();
    let n_f = cfg.n_f;
    let half = n_f / 2;

    let signals: Vec<SourceSignal<T>> = scenario
        .sources
        .iter()
        .map(|src| generate_source_signal(cfg, src.seed))
        .collect::<Result<_>>()?;

    let positions: Vec<_> = scenario.sources.iter().map(|s| s.position).collect();
    let ranges = range_matrix(&scenario.array, &positions)?;
    let zeta = sync_offsets(scenario);

    let mut rows: Vec<Vec<Complex<T>>> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let cluster = scenario.array.cluster_of(m);
            let mut row = vec![Complex::new(T::zero(), T::zero()); half + 1];
            for (n, signal) in signals.iter().enumerate() {
                let rho = ranges[(m, n)];
                let gain = true_model_eval(rho)?;
                // effective delay in samples, shifted by the sensor clock offset
                let tau = rho * cfg.sample_rate / cfg.propagation_speed
                    - zeta[m] * cfg.sample_rate;
                for (f, out) in row.iter_mut().enumerate() {
                    let phase = -T::two_pi() * T::cast(f as f64) * tau / T::cast(n_f as f64);
                    let direct = Complex::from_polar(gain, phase);
                    let indirect = multipath_response(&scenario.channels, cluster, n, f, n_f);
                    *out += (direct + indirect) * signal.spectrum[f];
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    // Noise level from the sensor-averaged received power over the
    // observation window: σ² = mean_m(E_m / n_t) / 10^(SNR/10).
    let sigma2 = match cfg.snr_db {
        None => None,
        Some(snr_db) => {
            let powers: Vec<T> = rows
                .iter()
                .map(|row| row_energy(row, n_f) / T::cast((n_f * cfg.n_t) as f64))
                .collect();
            let mean_power = pairwise_sum(&powers) / T::cast(m_count as f64);
            Some(mean_power / Float::powf(T::cast(10.0), snr_db / T::cast(10.0)))
        }
    };

    if let Some(s2) = sigma2 {
        let sigma = Float::sqrt(s2);
        rows.par_iter_mut().enumerate().for_each(|(m, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise_seed);
            rng.set_stream(2 * m as u64);
            let mut buf: Vec<Complex<T>> = (0..cfg.n_t)
                .map(|_| Complex::new(sigma * T::std_normal(&mut rng), T::zero()))
                .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())).take(n_f - cfg.n_t))
                .collect();
            fft(&mut buf);
            for (f, v) in row.iter_mut().enumerate() {
                *v += buf[f];
            }
        });
    }

    // Real time-domain signals: the DC bin (and Nyquist, for even n_f) is
    // real. Band masking keeps the source spectra numerically zero there, so
    // this only strips rounding-level imaginary parts.
    for row in rows.iter_mut() {
        row[0].im = T::zero();
        if n_f % 2 == 0 {
            row[half].im = T::zero();
        }
    }

    let mut half_matrix = DMatrix::zeros(m_count, half + 1);
    for (m, row) in rows.into_iter().enumerate() {
        for (f, v) in row.into_iter().enumerate() {
            half_matrix[(m, f)] = v;
        }
    }

    Ok(HalfSynthesis {
        half: half_matrix,
        signals,
        sigma2,
    })
}

/// Simulate the scenario and return the observed half-spectra together with
/// the ground-truth source signals.
pub fn synthesize<T: Scalar>(
    scenario: &Scenario<T>,
) -> Result<(SpectrumData<T>, Vec<SourceSignal<T>>)> {
    let out = synthesize_impl(scenario)?;
    Ok((
        SpectrumData {
            x: out.half,
            noise_variance_freq: out
                .sigma2
                .map(|s2| s2 * T::cast(scenario.signal.n_t as f64)),
        },
        out.signals,
    ))
}

/// Full-spectrum variant (all `n_f` bins, upper half mirrored) for symmetry
/// and energy checks.
pub fn synthesize_full<T: Scalar>(
    scenario: &Scenario<T>,
) -> Result<(DMatrix<Complex<T>>, Vec<SourceSignal<T>>)> {
    let out = synthesize_impl(scenario)?;
    let n_f = scenario.signal.n_f;
    let m_count = scenario.n_sensors();
    let mut full = DMatrix::zeros(m_count, n_f);
    for m in 0..m_count {
        for f in 0..out.half.ncols() {
            full[(m, f)] = out.half[(m, f)];
        }
        for f in 1..=(n_f - 1) / 2 {
            full[(m, n_f - f)] = out.half[(m, f)].conj();
        }
    }
    Ok((full, out.signals))
}

/// Noise variance σ² implied by the configured SNR (`None` when noiseless).
pub fn noise_sigma2<T: Scalar>(scenario: &Scenario<T>) -> Result<Option<T>> {
    Ok(synthesize_impl(scenario)?.sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{spiral_array, ChannelTap, OptimizerSettings, SourceSpec};

    fn cfg(n_t: usize, snr_db: Option<f64>) -> SignalConfig<f64> {
        SignalConfig {
            center_freq: 500.0,
            bandwidth: 200.0,
            sample_rate: 4000.0,
            n_t,
            n_f: n_t + 100,
            propagation_speed: 345.0,
            snr_db,
            sync_error_std: 0.0,
        }
    }

    fn scenario(n_t: usize, snr_db: Option<f64>) -> Scenario<f64> {
        Scenario {
            array: spiral_array(
                12,
                [4.0, 4.0],
                (2.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI),
            )
            .unwrap(),
            sources: vec![SourceSpec {
                position: [12.0, 10.0],
                seed: 5,
            }],
            signal: cfg(n_t, snr_db),
            channels: MultipathChannel::empty(),
            noise_seed: 11,
            attenuation_order: 2,
            model_paths: 0,
            optimizer: OptimizerSettings::default(),
            band_mask: None,
        }
    }

    /// Measured SNR in dB: sensor-averaged signal power vs realized noise
    /// power, both over the observation window.
    fn measured_snr_db(sc: &Scenario<f64>, sensor: usize) -> f64 {
        let (noisy, _) = synthesize(sc).unwrap();
        let mut clean_sc = sc.clone();
        clean_sc.signal.snr_db = None;
        let (clean, _) = synthesize(&clean_sc).unwrap();
        let n_f = sc.signal.n_f;
        let n_t = sc.signal.n_t as f64;
        let m_total = sc.n_sensors();
        let mean_sig_power: f64 = (0..m_total)
            .map(|m| {
                let row: Vec<Complex<f64>> = (0..clean.n_bins()).map(|f| clean.x[(m, f)]).collect();
                row_energy(&row, n_f) / (n_f as f64 * n_t)
            })
            .sum::<f64>()
            / m_total as f64;
        let noise_row: Vec<Complex<f64>> = (0..noisy.n_bins())
            .map(|f| noisy.x[(sensor, f)] - clean.x[(sensor, f)])
            .collect();
        let noise_power = row_energy(&noise_row, n_f) / (n_f as f64 * n_t);
        10.0 * (mean_sig_power / noise_power).log10()
    }

    #[test]
    fn band_energy_ratio_from_periodogram() {
        // Oracle: in-band share of the n_t-point periodogram.
        let cfg = cfg(4000, None);
        let signal = generate_source_signal(&cfg, 3).unwrap();
        let mut buf: Vec<Complex<f64>> = signal
            .samples
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .collect();
        fft(&mut buf);
        let total: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        let in_band: f64 = buf
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let freq = (*k).min(cfg.n_t - *k) as f64 * cfg.sample_rate / cfg.n_t as f64;
                (400.0..=600.0).contains(&freq)
            })
            .map(|(_, v)| v.norm_sqr())
            .sum();
        assert!(in_band / total >= 0.99, "in-band share {}", in_band / total);
    }

    #[test]
    fn signal_unit_rms_and_determinism() {
        let cfg = cfg(1000, None);
        let a = generate_source_signal(&cfg, 42).unwrap();
        let b = generate_source_signal(&cfg, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        let rms = (a.samples.iter().map(|s| s * s).sum::<f64>() / 1000.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        let c = generate_source_signal(&cfg, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rejects_degenerate_band() {
        let mut bad = cfg(1000, None);
        bad.bandwidth = 0.0;
        assert!(generate_source_signal(&bad, 1).is_err());
    }

    #[test]
    fn spectrum_is_dft_of_padded_samples() {
        let cfg = cfg(500, None);
        let signal = generate_source_signal(&cfg, 9).unwrap();
        let mut padded: Vec<Complex<f64>> = signal
            .samples
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)).take(cfg.n_f - cfg.n_t))
            .collect();
        fft(&mut padded);
        for (a, b) in padded.iter().zip(signal.spectrum.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
        // real samples: conjugate symmetry of the source spectrum
        for f in 1..cfg.n_f / 2 {
            let err = (signal.spectrum[cfg.n_f - f] - signal.spectrum[f].conj()).norm();
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn noiseless_single_source_matches_model_identity() {
        let sc = scenario(1000, None);
        let (data, signals) = synthesize(&sc).unwrap();
        let ranges = range_matrix(
            &sc.array,
            &sc.sources.iter().map(|s| s.position).collect::<Vec<_>>(),
        )
        .unwrap();
        let n_f = sc.signal.n_f as f64;
        for m in 0..sc.n_sensors() {
            let rho = ranges[(m, 0)];
            let gain = true_model_eval(rho).unwrap();
            let tau = rho * sc.signal.sample_rate / sc.signal.propagation_speed;
            for f in (1..data.n_bins() - 1).step_by(97) {
                let phase = -2.0 * std::f64::consts::PI * f as f64 * tau / n_f;
                let expected = Complex::from_polar(gain, phase) * signals[0].spectrum[f];
                let err = (data.x[(m, f)] - expected).norm();
                assert!(err < 1e-12 * expected.norm().max(1.0), "m={m} f={f} err={err}");
            }
        }
    }

    #[test]
    fn parseval_consistency() {
        let sc = scenario(1000, None);
        let (full, _) = synthesize_full(&sc).unwrap();
        let n_f = sc.signal.n_f;
        for m in 0..sc.n_sensors() {
            let mut buf: Vec<Complex<f64>> = (0..n_f).map(|f| full[(m, f)]).collect();
            ifft(&mut buf);
            let time_energy: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
            let spec_energy: f64 =
                (0..n_f).map(|f| full[(m, f)].norm_sqr()).sum::<f64>() / n_f as f64;
            assert!(
                (time_energy - spec_energy).abs() <= 1e-9 * spec_energy,
                "sensor {m}: {time_energy} vs {spec_energy}"
            );
            // and the signal is genuinely real in the time domain
            let max_im = buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
            let scale = (spec_energy / n_f as f64).sqrt();
            assert!(max_im < 1e-10 * scale.max(1.0), "sensor {m}: im {max_im}");
        }
    }

    #[test]
    fn full_spectra_conjugate_symmetric_with_noise() {
        let mut sc = scenario(800, Some(10.0));
        sc.signal.sync_error_std = 5e-4;
        sc.channels = MultipathChannel {
            taps: vec![ChannelTap {
                cluster: 0,
                source: 0,
                gain: 0.4,
                delay: 35.0,
            }],
        };
        let (full, _) = synthesize_full(&sc).unwrap();
        let n_f = sc.signal.n_f;
        let scale = full.row(0).iter().map(|v| v.norm()).fold(0.0, f64::max);
        for m in 0..sc.n_sensors() {
            for f in 1..n_f / 2 {
                let err = (full[(m, n_f - f)] - full[(m, f)].conj()).norm();
                assert!(err < 1e-12 * scale, "m={m} f={f}");
            }
            assert_eq!(full[(m, 0)].im, 0.0);
            assert_eq!(full[(m, n_f / 2)].im, 0.0);
        }
    }

    #[test]
    fn measured_snr_matches_request() {
        let sc = scenario(4000, Some(20.0));
        for m in [0, 5, 11] {
            let snr = measured_snr_db(&sc, m);
            assert!((snr - 20.0).abs() < 0.5, "sensor {m}: {snr} dB");
        }
    }

    #[test]
    fn halving_sigma_raises_snr_six_db() {
        let lo = scenario(2000, Some(14.0));
        let hi = scenario(2000, Some(14.0 + 6.020599913279624));
        let s_lo = noise_sigma2(&lo).unwrap().unwrap().sqrt();
        let s_hi = noise_sigma2(&hi).unwrap().unwrap().sqrt();
        assert!((s_lo / s_hi - 2.0).abs() < 1e-9, "sigma ratio {}", s_lo / s_hi);
        let diff = measured_snr_db(&hi, 3) - measured_snr_db(&lo, 3);
        assert!((diff - 6.02).abs() < 0.1, "measured SNR difference {diff}");
    }

    #[test]
    fn sync_offsets_match_requested_std() {
        // statistical check over many sensors: sample std of ζ·N_s ≈ 2.0
        let mut sc = scenario(400, None);
        sc.array = spiral_array(
            4000,
            [4.0, 4.0],
            (2.0 * std::f64::consts::PI, 20.0 * std::f64::consts::PI),
        )
        .unwrap();
        sc.signal.sync_error_std = 0.5e-3;
        let offsets = sync_offsets(&sc);
        let n = offsets.len() as f64;
        let mean: f64 = offsets.iter().sum::<f64>() / n;
        let var: f64 = offsets.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        let sample_std = var.sqrt() * sc.signal.sample_rate;
        assert!((sample_std - 2.0).abs() < 0.1, "sample-unit std {sample_std}");
        assert!(mean.abs() * sc.signal.sample_rate < 0.1);
    }

    #[test]
    fn sync_disabled_is_exact_zero() {
        let sc = scenario(400, None);
        assert!(sync_offsets(&sc).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn multipath_profile_trivials() {
        let empty = MultipathChannel::<f64>::empty();
        let spectrum = vec![Complex::new(1.0, 2.0); 8];
        let out = apply_multipath_profile(&empty, 0, 0, &spectrum).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));

        let identity = MultipathChannel {
            taps: vec![ChannelTap {
                cluster: 0,
                source: 0,
                gain: 1.0,
                delay: 0.0,
            }],
        };
        let out = apply_multipath_profile(&identity, 0, 0, &spectrum).unwrap();
        for (a, b) in out.iter().zip(spectrum.iter()) {
            assert!((a - b).norm() < 1e-15);
        }

        let two = MultipathChannel {
            taps: vec![
                ChannelTap { cluster: 0, source: 0, gain: 0.4, delay: 80.0 },
                ChannelTap { cluster: 0, source: 0, gain: 0.2, delay: 200.0 },
            ],
        };
        let out = apply_multipath_profile(&two, 0, 0, &spectrum).unwrap();
        let expected = spectrum[0] * 0.6;
        assert!((out[0] - expected).norm() < 1e-15);
    }
}

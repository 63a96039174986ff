//! Base-layer log-spectrogram and the MFCC baseline.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::signal_io::{frame_samples, AudioClip, FrameGeometry};

pub const DEFAULT_LOG_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Hann,
    /// No tapering; used to check transform identities.
    Rectangular,
}

impl WindowKind {
    /// Periodic window coefficients of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Optional reduction of the frequency axis before log compression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyReduction {
    None,
    /// Averages magnitudes over `bins` contiguous, equally sized groups.
    Linear {
        bins: usize,
    },
    /// Averages magnitudes inside `bins` bands equally spaced on the mel scale.
    Mel {
        bins: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    /// Defaults to the smallest power of two holding two windows, so every
    /// frame is zero-padded at least twofold.
    pub fft_size: Option<usize>,
    pub log_floor: f64,
    pub window: WindowKind,
    pub reduction: FrequencyReduction,
    /// Bins above this frequency are discarded before reduction. Warping a
    /// window slower stretches its spectrum downward and leaves the top of
    /// the band at the log floor; capping the band keeps those empty bins
    /// from dominating distances between frames.
    pub max_freq_hz: Option<f64>,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_ms: 370.0,
            hop_ms: 185.0,
            fft_size: None,
            log_floor: DEFAULT_LOG_FLOOR,
            window: WindowKind::Hann,
            reduction: FrequencyReduction::Linear { bins: 512 },
            max_freq_hz: Some(6000.0),
        }
    }
}

impl SpectrogramConfig {
    pub fn geometry(&self, sample_rate: u32) -> Result<FrameGeometry> {
        FrameGeometry::from_ms(self.window_ms, self.hop_ms, sample_rate)
    }

    pub fn fft_size_for(&self, window_len: usize) -> usize {
        self.fft_size.unwrap_or_else(|| (2 * window_len).next_power_of_two())
    }
}

/// Log-magnitude spectrogram, frames by frequency bins, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeFreqMatrix {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub bin_freqs: Vec<f64>,
    pub frame_times: Vec<f64>,
}

impl TimeFreqMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Windowed, zero-padded DFT magnitudes with a cached FFT plan.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    taper: Vec<f64>,
    fft_size: usize,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("window_len", &self.taper.len())
            .field("fft_size", &self.fft_size)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(window_len: usize, fft_size: usize, window: WindowKind) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidParameter("window length must be positive".into()));
        }
        if !fft_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "FFT size {fft_size} is not a power of two"
            )));
        }
        if fft_size < window_len {
            return Err(Error::InvalidParameter(format!(
                "FFT size {fft_size} is smaller than the {window_len}-sample window"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(Self {
            fft,
            taper: window.coefficients(window_len),
            fft_size,
        })
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn bin_count(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window_len(&self) -> usize {
        self.taper.len()
    }

    /// Complex spectrum of the first `fft_size/2 + 1` bins.
    pub fn spectrum(&self, window: &[f64]) -> Result<Vec<Complex<f64>>> {
        if window.len() != self.taper.len() {
            return Err(Error::DimensionMismatch {
                expected: self.taper.len(),
                found: window.len(),
            });
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(window).zip(&self.taper) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        buf.truncate(self.bin_count());
        Ok(buf)
    }

    pub fn magnitudes(&self, window: &[f64]) -> Result<Vec<f64>> {
        Ok(self.spectrum(window)?.iter().map(|c| c.norm()).collect())
    }
}

/// Magnitudes of the first `fft_size/2 + 1` DFT bins of the tapered,
/// zero-padded window.
pub fn power_spectrum(window: &[f64], fft_size: usize, kind: WindowKind) -> Result<Vec<f64>> {
    SpectrumAnalyzer::new(window.len(), fft_size, kind)?.magnitudes(window)
}

/// Elementwise `ln(m + floor)`.
pub fn log_compress(magnitudes: &[f64], floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidParameter(format!("log floor {floor} must be positive")));
    }
    magnitudes
        .iter()
        .map(|&m| {
            if !m.is_finite() {
                Err(Error::NonFinite("magnitudes"))
            } else if m < 0.0 {
                Err(Error::InvalidParameter(format!("negative magnitude {m}")))
            } else {
                Ok((m + floor).ln())
            }
        })
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Averaging groups over the frequency bins of a spectrum.
#[derive(Clone, Debug)]
struct BinReducer {
    groups: Vec<(usize, usize)>,
    freqs: Vec<f64>,
}

impl BinReducer {
    fn new(
        reduction: FrequencyReduction,
        bin_count: usize,
        sample_rate: u32,
        fft_size: usize,
        max_freq_hz: Option<f64>,
    ) -> Result<Self> {
        let hz = |b: usize| b as f64 * sample_rate as f64 / fft_size as f64;
        let bin_count = match max_freq_hz {
            None => bin_count,
            Some(f) if f > 0.0 && f.is_finite() => {
                bin_count.min((f * fft_size as f64 / sample_rate as f64).floor() as usize + 1)
            }
            Some(f) => {
                return Err(Error::InvalidParameter(format!(
                    "maximum frequency {f} Hz must be positive"
                )))
            }
        };
        let groups: Vec<(usize, usize)> = match reduction {
            FrequencyReduction::None => (0..bin_count).map(|b| (b, b + 1)).collect(),
            FrequencyReduction::Linear { bins } => {
                if bins == 0 || bins > bin_count {
                    return Err(Error::InvalidParameter(format!(
                        "cannot reduce {bin_count} bins to {bins}"
                    )));
                }
                (0..bins)
                    .map(|j| (j * bin_count / bins, (j + 1) * bin_count / bins))
                    .collect()
            }
            FrequencyReduction::Mel { bins } => {
                if bins == 0 || bins > bin_count {
                    return Err(Error::InvalidParameter(format!(
                        "cannot reduce {bin_count} bins to {bins} mel bands"
                    )));
                }
                let top = hz_to_mel(hz(bin_count - 1));
                let edge_bin = |j: usize| {
                    let f = mel_to_hz(top * j as f64 / bins as f64);
                    ((f * fft_size as f64 / sample_rate as f64).round() as usize).min(bin_count)
                };
                let mut groups = Vec::with_capacity(bins);
                for j in 0..bins {
                    let lo = edge_bin(j).min(bin_count - 1);
                    let hi = if j + 1 == bins { bin_count } else { edge_bin(j + 1) };
                    // bands narrower than one bin take the nearest bin
                    groups.push((lo, hi.max(lo + 1)));
                }
                groups
            }
        };
        let freqs = groups
            .iter()
            .map(|&(lo, hi)| (lo..hi).map(hz).sum::<f64>() / (hi - lo) as f64)
            .collect();
        Ok(Self { groups, freqs })
    }

    fn reduce(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|&(lo, hi)| magnitudes[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
            .collect()
    }
}

/// Reusable log-spectrogram front end for clips at one sample rate.
#[derive(Clone, Debug)]
pub struct LogSpectrogram {
    config: SpectrogramConfig,
    geometry: FrameGeometry,
    sample_rate: u32,
    analyzer: SpectrumAnalyzer,
    reducer: BinReducer,
}

impl LogSpectrogram {
    pub fn new(config: &SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        let geometry = config.geometry(sample_rate)?;
        let fft_size = config.fft_size_for(geometry.window);
        let analyzer = SpectrumAnalyzer::new(geometry.window, fft_size, config.window)?;
        if !(config.log_floor > 0.0) {
            return Err(Error::InvalidParameter("log floor must be positive".into()));
        }
        let reducer = BinReducer::new(
            config.reduction,
            analyzer.bin_count(),
            sample_rate,
            fft_size,
            config.max_freq_hz,
        )?;
        Ok(Self {
            config: config.clone(),
            geometry,
            sample_rate,
            analyzer,
            reducer,
        })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Number of values per output frame.
    pub fn dim(&self) -> usize {
        self.reducer.groups.len()
    }

    pub fn bin_freqs(&self) -> &[f64] {
        &self.reducer.freqs
    }

    pub fn log_floor(&self) -> f64 {
        self.config.log_floor
    }

    /// One log-spectral frame for a window of exactly `geometry().window`
    /// samples.
    pub fn frame(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mags = self.analyzer.magnitudes(window)?;
        log_compress(&self.reducer.reduce(&mags), self.config.log_floor)
    }

    pub fn compute_with(&self, samples: &[f64], exec: Exec) -> Result<TimeFreqMatrix> {
        let windows = frame_samples(samples, self.geometry)?;
        let rows = exec.try_map(&windows, |w| self.frame(w))?;
        let cols = self.dim();
        let hop_secs = self.geometry.hop as f64 / self.sample_rate as f64;
        Ok(TimeFreqMatrix {
            rows: rows.len(),
            cols,
            frame_times: (0..rows.len()).map(|i| i as f64 * hop_secs).collect(),
            values: rows.concat(),
            bin_freqs: self.reducer.freqs.clone(),
        })
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<TimeFreqMatrix> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "clip sample rate {} differs from analyzer rate {}",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        self.compute_with(clip.samples(), Exec::default())
    }
}

pub fn log_spectrogram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<TimeFreqMatrix> {
    LogSpectrogram::new(config, clip.sample_rate())?.compute(clip)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub n_filters: usize,
    pub n_coeffs: usize,
    /// Keep the 0th (energy) coefficient as the first output.
    pub include_c0: bool,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_filters: 40,
            n_coeffs: 13,
            include_c0: false,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfccVector {
    pub coeffs: Vec<f64>,
}

/// Triangular mel filter bank from 0 Hz to Nyquist followed by a DCT-II.
#[derive(Clone, Debug)]
pub struct MfccExtractor {
    analyzer: SpectrumAnalyzer,
    filters: Vec<Vec<(usize, f64)>>,
    config: MfccConfig,
}

impl MfccExtractor {
    pub fn new(window_len: usize, sample_rate: u32, config: &MfccConfig) -> Result<Self> {
        if config.n_filters == 0 {
            return Err(Error::InvalidParameter("mel filter count must be positive".into()));
        }
        if window_len < config.n_filters {
            return Err(Error::InvalidParameter(format!(
                "window of {window_len} samples is shorter than the {} mel filters",
                config.n_filters
            )));
        }
        let first = usize::from(!config.include_c0);
        if config.n_coeffs == 0 || first + config.n_coeffs > config.n_filters {
            return Err(Error::InvalidParameter(format!(
                "{} coefficients do not fit {} mel filters",
                config.n_coeffs, config.n_filters
            )));
        }
        let fft_size = window_len.next_power_of_two();
        let analyzer = SpectrumAnalyzer::new(window_len, fft_size, WindowKind::Hann)?;
        let bins = analyzer.bin_count();
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..config.n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (config.n_filters + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(config.n_filters);
        for m in 0..config.n_filters {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let taps: Vec<(usize, f64)> = (0..bins)
                .filter_map(|b| {
                    let f = b as f64 * sample_rate as f64 / fft_size as f64;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((b, w))
                })
                .collect();
            if taps.is_empty() {
                return Err(Error::DegenerateFilterBank(m));
            }
            filters.push(taps);
        }
        Ok(Self {
            analyzer,
            filters,
            config: config.clone(),
        })
    }

    pub fn log_mel_energies(&self, window: &[f64]) -> Result<Vec<f64>> {
        let spectrum = self.analyzer.spectrum(window)?;
        Ok(self
            .filters
            .iter()
            .map(|taps| {
                let e: f64 = taps.iter().map(|&(b, w)| w * spectrum[b].norm_sqr()).sum();
                (e + self.config.log_floor).ln()
            })
            .collect())
    }

    pub fn compute(&self, window: &[f64]) -> Result<MfccVector> {
        let energies = self.log_mel_energies(window)?;
        let n = energies.len() as f64;
        let first = usize::from(!self.config.include_c0);
        let coeffs = (first..first + self.config.n_coeffs)
            .map(|k| {
                energies
                    .iter()
                    .enumerate()
                    .map(|(i, e)| e * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                    .sum()
            })
            .collect();
        Ok(MfccVector { coeffs })
    }
}

pub fn mfcc(window: &[f64], sample_rate: u32, config: &MfccConfig) -> Result<MfccVector> {
    MfccExtractor::new(window.len(), sample_rate, config)?.compute(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N^2) DFT magnitude, independent of the FFT path.
    fn dft_magnitudes(x: &[f64], n: usize) -> Vec<f64> {
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn spectrum_examples() {
        assert!(power_spectrum(&[0.0; 100], 128, WindowKind::Hann)
            .unwrap()
            .iter()
            .all(|&m| m == 0.0));

        let mut impulse = vec![0.0; 64];
        impulse[0] = 1.0;
        let mags = power_spectrum(&impulse, 64, WindowKind::Rectangular).unwrap();
        assert_eq!(mags.len(), 33);
        assert!(mags.iter().all(|&m| (m - 1.0).abs() < 1e-12));

        let k = 5;
        let tone: Vec<f64> = (0..64).map(|t| (2.0 * PI * (k * t) as f64 / 64.0).cos()).collect();
        let mags = power_spectrum(&tone, 64, WindowKind::Rectangular).unwrap();
        for (b, m) in mags.iter().enumerate() {
            if b == k {
                assert!((m - 32.0).abs() < 1e-9);
            } else {
                assert!(m.abs() < 1e-9, "bin {b} = {m}");
            }
        }
        assert!(power_spectrum(&[0.0; 100], 64, WindowKind::Hann).is_err());
        assert!(power_spectrum(&[0.0; 100], 100, WindowKind::Hann).is_err());
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = power_spectrum(&x, 64, WindowKind::Rectangular).unwrap();
        let slow = dft_magnitudes(&x, 64);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn parseval_holds_in_rectangular_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [17usize, 100, 256] {
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = len.next_power_of_two();
            let mags = power_spectrum(&x, n, WindowKind::Rectangular).unwrap();
            let half = n / 2;
            let spectral: f64 =
                mags[0].powi(2) + mags[half].powi(2) + 2.0 * mags[1..half].iter().map(|m| m * m).sum::<f64>();
            let temporal: f64 = n as f64 * x.iter().map(|v| v * v).sum::<f64>();
            assert!(((spectral - temporal) / temporal).abs() < 1e-9);
        }
    }

    #[test]
    fn log_compress_examples() {
        let floor = 1e-6;
        assert!((log_compress(&[0.0], floor).unwrap()[0] - (-13.815510557964274)).abs() < 1e-12);
        assert_eq!(log_compress(&[1.0 - floor], floor).unwrap()[0], 0.0);
        let sorted = [0.0, 0.1, 0.5, 2.0, 100.0];
        let out = log_compress(&sorted, floor).unwrap();
        assert!(out.windows(2).all(|w| w[0] < w[1]));
        assert!(log_compress(&[f64::INFINITY], floor).is_err());
        assert!(log_compress(&[-1.0], floor).is_err());
    }

    fn fast_config() -> SpectrogramConfig {
        SpectrogramConfig {
            window_ms: 20.0,
            hop_ms: 10.0,
            reduction: FrequencyReduction::Linear { bins: 64 },
            ..Default::default()
        }
    }

    #[test]
    fn default_config_shape_on_long_clip() {
        let clip = AudioClip::new(vec![0.0; 30 * 22050], 22050).unwrap();
        let config = SpectrogramConfig {
            reduction: FrequencyReduction::None,
            max_freq_hz: None,
            ..Default::default()
        };
        let capped = SpectrogramConfig {
            max_freq_hz: Some(6000.0),
            ..config.clone()
        };
        // floor(6000 * 16384 / 22050) + 1
        assert_eq!(LogSpectrogram::new(&capped, 22050).unwrap().dim(), 4459);
        let front = LogSpectrogram::new(&config, 22050).unwrap();
        assert_eq!(front.geometry().window, 8158);
        assert_eq!(front.dim(), 8193);
        let m = front.compute(&clip).unwrap();
        assert_eq!((m.rows, m.cols), (161, 8193));
        let floor = DEFAULT_LOG_FLOOR.ln();
        assert!(m.values.iter().all(|&v| v == floor));
        assert!((m.frame_times[1] - 4079.0 / 22050.0).abs() < 1e-12);
        assert!(m.bin_freqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn doubling_amplitude_shifts_by_at_most_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let config = fast_config();
        let a = log_spectrogram(&AudioClip::new(x, 8000).unwrap(), &config).unwrap();
        let b = log_spectrogram(&AudioClip::new(doubled, 8000).unwrap(), &config).unwrap();
        let ln2 = 2f64.ln();
        for (u, v) in a.values.iter().zip(&b.values) {
            let d = v - u;
            assert!(d >= -1e-12 && d <= ln2 + 1e-12);
            // magnitudes here sit far above the floor
            if *u > 0.0 {
                assert!((d - ln2).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn reductions_keep_frequency_order() {
        for reduction in [
            FrequencyReduction::Linear { bins: 100 },
            FrequencyReduction::Mel { bins: 100 },
        ] {
            let config = SpectrogramConfig {
                reduction,
                ..Default::default()
            };
            let front = LogSpectrogram::new(&config, 22050).unwrap();
            assert_eq!(front.dim(), 100);
            assert!(front.bin_freqs().windows(2).all(|w| w[0] <= w[1]));
        }
        let bad = SpectrogramConfig {
            reduction: FrequencyReduction::Linear { bins: 0 },
            ..Default::default()
        };
        assert!(LogSpectrogram::new(&bad, 22050).is_err());
    }

    #[test]
    fn mfcc_of_silence_is_constant_dct() {
        let config = MfccConfig {
            include_c0: true,
            ..Default::default()
        };
        let v = mfcc(&[0.0; 2048], 22050, &config).unwrap();
        assert_eq!(v.coeffs.len(), 13);
        assert!((v.coeffs[0] - 40.0 * DEFAULT_LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(v.coeffs[1..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn mfcc_scale_moves_only_c0() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = MfccConfig {
            include_c0: true,
            ..Default::default()
        };
        let ex = MfccExtractor::new(4096, 22050, &config).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..4096).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let c = rng.gen_range(0.2..5.0);
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let a = ex.compute(&x).unwrap();
            let b = ex.compute(&scaled).unwrap();
            assert!((b.coeffs[0] - a.coeffs[0] - 40.0 * 2.0 * f64::ln(c)).abs() < 1e-3);
            for k in 1..13 {
                assert!((a.coeffs[k] - b.coeffs[k]).abs() < 1e-6, "k={k}");
            }
        }
    }

    #[test]
    fn mfcc_noise_and_periodic_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f64> = (0..8158).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = mfcc(&noise, 22050, &MfccConfig::default()).unwrap();
        assert_eq!(v.coeffs.len(), 13);
        assert!(v.coeffs.iter().all(|c| c.is_finite()));

        let period = 50;
        let signal = |t: usize| {
            let p = (t % period) as f64 / period as f64;
            (2.0 * PI * p).sin() + 0.3 * (6.0 * PI * p).cos()
        };
        let a: Vec<f64> = (0..2000).map(signal).collect();
        let b: Vec<f64> = (period..period + 2000).map(signal).collect();
        let ma = mfcc(&a, 22050, &MfccConfig::default()).unwrap();
        let mb = mfcc(&b, 22050, &MfccConfig::default()).unwrap();
        for (x, y) in ma.coeffs.iter().zip(&mb.coeffs) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mfcc_rejects_degenerate_banks() {
        assert!(matches!(
            MfccExtractor::new(64, 22050, &MfccConfig::default()),
            Err(Error::DegenerateFilterBank(_))
        ));
        assert!(mfcc(&[0.0; 10], 22050, &MfccConfig::default()).is_err());
    }
}

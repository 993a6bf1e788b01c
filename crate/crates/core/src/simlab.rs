//! Time-domain verification of a cancellation-carrier design: symbol
//! synthesis, cyclic-suffix windowing, a Rapp power amplifier, averaged
//! periodogram PSD and PAPR statistics.
//!
//! Random data is drawn from a counter-based stream keyed by
//! `(seed, symbol index)`, and aggregates are reduced over fixed-size chunks
//! in index order, so results do not depend on the rayon worker count.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::spectral::{CMatrix, CarrierAllocation, FrequencyGrid, SystemGeometry};

/// Symbols per work unit in parallel loops.
const CHUNK: usize = 64;

/// Power of one subcarrier at its own frequency, `(N + N_CP)²`: the 0 dB
/// reference shared by design-side and measured out-of-band levels.
pub fn reference_power(geom: &SystemGeometry) -> f64 {
    let len = geom.symbol_len() as f64;
    len * len
}

pub fn oob_db(p_oob: f64, geom: &SystemGeometry) -> f64 {
    10.0 * (p_oob / reference_power(geom)).log10()
}

/// SNR lost to cancellation-carrier power, `10 log10(1 + β/α)`.
pub fn snr_loss(alpha: usize, beta: usize) -> Result<f64> {
    if alpha == 0 {
        return Err(Error::Contract("snr loss needs at least one data carrier".into()));
    }
    Ok(10.0 * (1.0 + beta as f64 / alpha as f64).log10())
}

/// Random stream for symbol `index` under `seed`.
pub fn symbol_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Gray-mapped unit-energy QPSK.
pub fn qpsk_symbols<R: Rng>(rng: &mut R, count: usize) -> Vec<Complex64> {
    (0..count)
        .map(|_| {
            let bits: u8 = rng.random();
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub oversample: usize,
}

impl Waveform {
    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn papr(&self) -> f64 {
        let peak = self.samples.iter().map(Complex64::norm_sqr).fold(0.0, f64::max);
        peak / self.mean_power()
    }

    pub fn papr_db(&self) -> f64 {
        10.0 * self.papr().log10()
    }
}

/// NC-OFDM modulator for a fixed allocation and cancellation map.
#[derive(Clone)]
pub struct Transmitter {
    geom: SystemGeometry,
    alloc: CarrierAllocation,
    w: CMatrix,
    oversample: usize,
    ifft: Arc<dyn Fft<f64>>,
}

impl Transmitter {
    pub fn new(geom: SystemGeometry, alloc: CarrierAllocation, w: CMatrix, oversample: usize) -> Result<Self> {
        if oversample == 0 {
            return Err(Error::Contract("oversampling factor must be positive".into()));
        }
        alloc.check_range(&geom)?;
        if w.shape() != (alloc.beta(), alloc.alpha()) {
            return Err(Error::Contract(format!(
                "W is {}x{}, allocation needs {}x{}",
                w.nrows(),
                w.ncols(),
                alloc.beta(),
                alloc.alpha()
            )));
        }
        let ifft = FftPlanner::new().plan_fft_inverse(geom.n() * oversample);
        Ok(Self { geom, alloc, w, oversample, ifft })
    }

    pub fn geometry(&self) -> &SystemGeometry {
        &self.geom
    }

    pub fn allocation(&self) -> &CarrierAllocation {
        &self.alloc
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    /// Cancellation values `W d_DC`.
    pub fn cancellation(&self, d_dc: &[Complex64]) -> Vec<Complex64> {
        if self.alloc.beta() == 0 {
            return Vec::new();
        }
        let d = CMatrix::from_column_slice(d_dc.len(), 1, d_dc);
        (&self.w * d).iter().copied().collect()
    }

    /// One cyclic-prefixed symbol, `oversample · (N + N_CP)` samples, with
    /// `y[m] = (1/√N) Σ_k d_k exp(j2πkm / (N·oversample))`.
    pub fn symbol(&self, d_dc: &[Complex64]) -> Result<Waveform> {
        if d_dc.len() != self.alloc.alpha() {
            return Err(Error::Contract(format!(
                "{} data symbols for {} data carriers",
                d_dc.len(),
                self.alloc.alpha()
            )));
        }
        let size = self.geom.n() * self.oversample;
        let mut bins = vec![Complex64::new(0.0, 0.0); size];
        let slot = |k: i32| k.rem_euclid(size as i32) as usize;
        for (&k, &d) in self.alloc.dc().iter().zip(d_dc) {
            bins[slot(k)] = d;
        }
        for (&k, d) in self.alloc.cc().iter().zip(self.cancellation(d_dc)) {
            bins[slot(k)] = d;
        }
        self.ifft.process(&mut bins);
        let scale = (self.geom.n() as f64).sqrt().recip();
        let cp = self.geom.n_cp() * self.oversample;
        let mut samples = Vec::with_capacity(size + cp);
        samples.extend_from_slice(&bins[size - cp..]);
        samples.extend_from_slice(&bins);
        samples.iter_mut().for_each(|s| *s *= scale);
        Ok(Waveform { samples, oversample: self.oversample })
    }

    pub fn random_data(&self, seed: u64, index: u64) -> Vec<Complex64> {
        qpsk_symbols(&mut symbol_rng(seed, index), self.alloc.alpha())
    }

    pub fn random_symbol(&self, seed: u64, index: u64) -> Waveform {
        self.symbol(&self.random_data(seed, index)).expect("allocation-sized data")
    }
}

pub fn synthesize_symbol(
    geom: &SystemGeometry,
    alloc: &CarrierAllocation,
    d_dc: &[Complex64],
    w: &CMatrix,
    oversample: usize,
) -> Result<Waveform> {
    Transmitter::new(*geom, alloc.clone(), w.clone(), oversample)?.symbol(d_dc)
}

/// Rising half of a raised-cosine ramp; `1 - ramp[i]` is the matching fall.
pub fn raised_cosine_ramp(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (PI * (i as f64 + 0.5) / len as f64).cos()))
        .collect()
}

/// Appends `n_cs` samples of cyclic suffix and tapers the first and last
/// `n_cs` samples (scaled by the oversampling factor). Consecutive windowed
/// symbols are meant to overlap by the ramp length, see [`overlap_add`].
pub fn apply_window(wave: &Waveform, geom: &SystemGeometry, n_cs: usize) -> Result<Waveform> {
    if n_cs == 0 || n_cs >= geom.n() {
        return Err(Error::Contract(format!("cyclic suffix {n_cs} must be in 1..{}", geom.n())));
    }
    let os = wave.oversample;
    if wave.samples.len() != os * geom.symbol_len() {
        return Err(Error::Contract(format!(
            "expected a {}-sample symbol, got {}",
            os * geom.symbol_len(),
            wave.samples.len()
        )));
    }
    let cp = geom.n_cp() * os;
    let ramp_len = n_cs * os;
    let mut samples = wave.samples.clone();
    samples.extend_from_within(cp..cp + ramp_len);
    let ramp = raised_cosine_ramp(ramp_len);
    let total = samples.len();
    for (i, &r) in ramp.iter().enumerate() {
        samples[i] *= r;
        samples[total - ramp_len + i] *= 1.0 - r;
    }
    Ok(Waveform { samples, oversample: os })
}

/// Places segments `stride` samples apart and sums overlapping parts.
pub fn overlap_add(segments: &[Waveform], stride: usize) -> Vec<Complex64> {
    let Some(last) = segments.last() else {
        return Vec::new();
    };
    let len = stride * (segments.len() - 1) + last.samples.len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (i, seg) in segments.iter().enumerate() {
        for (o, s) in out[i * stride..].iter_mut().zip(&seg.samples) {
            *o += s;
        }
    }
    out
}

/// Memoryless Rapp AM/AM amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaModel {
    pub p: f64,
    pub ibo_db: f64,
    pub a_sat: f64,
}

impl PaModel {
    /// Saturation set so that `a_sat² = mean_input_power · 10^(ibo/10)`.
    pub fn calibrated(p: f64, ibo_db: f64, mean_input_power: f64) -> Result<Self> {
        if p.is_nan() || p <= 0.0 {
            return Err(Error::Contract(format!("Rapp smoothness {p} must be positive")));
        }
        if mean_input_power.is_nan() || mean_input_power <= 0.0 {
            return Err(Error::Contract("input power must be positive".into()));
        }
        let a_sat = (mean_input_power * 10f64.powf(ibo_db / 10.0)).sqrt();
        Ok(Self { p, ibo_db, a_sat })
    }

    pub fn gain(&self, amplitude: f64) -> f64 {
        let two_p = 2.0 * self.p;
        (1.0 + (amplitude / self.a_sat).powf(two_p)).powf(-1.0 / two_p)
    }
}

pub fn rapp_amplifier(wave: &Waveform, pa: &PaModel) -> Waveform {
    let samples = wave.samples.iter().map(|&s| s * pa.gain(s.norm())).collect();
    Waveform { samples, oversample: wave.oversample }
}

/// Averaged per-symbol periodogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    /// Bin frequencies in subcarrier spacings, ascending.
    pub freq: Vec<f64>,
    /// Relative to the largest bin.
    pub psd_db: Vec<f64>,
    /// Linear level on the design reference: the mean of `|S(v)|²` divided
    /// by `(N + N_CP)²`, comparable with the closed-form out-of-band power.
    pub level: Vec<f64>,
    pub n_symbols: usize,
}

impl PsdEstimate {
    fn bin_of(&self, v: f64) -> Option<usize> {
        let step = self.freq[1] - self.freq[0];
        let idx = ((v - self.freq[0]) / step).round();
        if idx < 0.0 || idx as usize >= self.freq.len() {
            return None;
        }
        let i = idx as usize;
        ((self.freq[i] - v).abs() <= 1e-9 * step.max(1.0)).then_some(i)
    }

    /// Mean linear level at the grid frequencies, in dB on the design reference.
    pub fn mean_level_db(&self, grid: &FrequencyGrid) -> Result<f64> {
        let mut sum = 0.0;
        for &v in grid.points() {
            let i = self
                .bin_of(v)
                .ok_or_else(|| Error::Contract(format!("frequency {v} is not on the PSD bin grid")))?;
            sum += self.level[i];
        }
        Ok(10.0 * (sum / grid.len() as f64).log10())
    }

    /// Mean of the peak-normalized PSD at the grid frequencies, in dB.
    pub fn mean_relative_db(&self, grid: &FrequencyGrid) -> Result<f64> {
        let peak = self.level.iter().copied().fold(0.0, f64::max);
        Ok(self.mean_level_db(grid)? - 10.0 * peak.log10())
    }
}

/// Running sum of per-symbol periodograms.
pub struct PsdAccumulator {
    nfft: usize,
    oversample: usize,
    fft: Arc<dyn Fft<f64>>,
    sum: Vec<f64>,
    count: usize,
}

impl PsdAccumulator {
    pub fn new(nfft: usize, oversample: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Self { nfft, oversample, fft, sum: vec![0.0; nfft], count: 0 }
    }

    pub fn add(&mut self, wave: &Waveform) -> Result<()> {
        if wave.samples.len() > self.nfft {
            return Err(Error::Contract(format!(
                "segment of {} samples exceeds nfft {}",
                wave.samples.len(),
                self.nfft
            )));
        }
        if wave.oversample != self.oversample {
            return Err(Error::Contract("mixed oversampling factors".into()));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        buf[..wave.samples.len()].copy_from_slice(&wave.samples);
        self.fft.process(&mut buf);
        for (acc, x) in self.sum.iter_mut().zip(&buf) {
            *acc += x.norm_sqr();
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &PsdAccumulator) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn finish(&self, geom: &SystemGeometry) -> Result<PsdEstimate> {
        if self.count == 0 {
            return Err(Error::Contract("no symbols to estimate a PSD from".into()));
        }
        let os = self.oversample as f64;
        let n = geom.n() as f64;
        // an oversampled sum approximates os · S(v); S(v) carries 1/√N
        let scale = n / (os * os * self.count as f64 * reference_power(geom));
        let spacing = n * os / self.nfft as f64;
        let half = self.nfft / 2;
        // reorder from FFT layout to ascending frequency
        let order: Vec<usize> = (half..self.nfft).chain(0..half).collect();
        let freq: Vec<f64> = order
            .iter()
            .map(|&b| if b >= half { b as f64 - self.nfft as f64 } else { b as f64 } * spacing)
            .collect();
        let level: Vec<f64> = order.iter().map(|&b| self.sum[b] * scale).collect();
        let peak = level.iter().copied().fold(0.0, f64::max);
        let psd_db = level.iter().map(|&l| 10.0 * (l / peak).log10()).collect();
        Ok(PsdEstimate { freq, psd_db, level, n_symbols: self.count })
    }
}

pub fn estimate_psd(stream: &[Waveform], nfft: usize, geom: &SystemGeometry) -> Result<PsdEstimate> {
    let Some(first) = stream.first() else {
        return Err(Error::Contract("empty symbol stream".into()));
    };
    let mut acc = PsdAccumulator::new(nfft, first.oversample);
    for wave in stream {
        acc.add(wave)?;
    }
    acc.finish(geom)
}

/// Empirical PAPR distribution. `prob[i]` is the fraction of symbols whose
/// PAPR is at least `papr_db[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcdfCurve {
    pub papr_db: Vec<f64>,
    pub prob: Vec<f64>,
}

impl CcdfCurve {
    pub fn from_papr_db(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("no PAPR samples".into()));
        }
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let prob = (0..values.len()).map(|i| (values.len() - i) as f64 / n).collect();
        Ok(Self { papr_db: values, prob })
    }

    /// Fraction of symbols with PAPR strictly above `x_db`.
    pub fn ccdf_at(&self, x_db: f64) -> f64 {
        let above = self.papr_db.len() - self.papr_db.partition_point(|&v| v <= x_db);
        above as f64 / self.papr_db.len() as f64
    }

    /// Smallest sampled PAPR whose exceedance fraction is at most `prob`.
    pub fn papr_at(&self, prob: f64) -> f64 {
        let n = self.papr_db.len();
        let allowed = ((prob * n as f64).floor() as usize).min(n - 1);
        self.papr_db[n - 1 - allowed]
    }

    /// Curve resampled on a fixed PAPR axis, for export.
    pub fn resample(&self, axis_db: &[f64]) -> Vec<(f64, f64)> {
        axis_db.iter().map(|&x| (x, self.ccdf_at(x))).collect()
    }
}

pub fn papr_ccdf(stream: &[Waveform]) -> Result<CcdfCurve> {
    CcdfCurve::from_papr_db(stream.iter().map(Waveform::papr_db).collect())
}

/// A transmitter with optional windowing and amplifier, generating symbol
/// `i` of a stream on demand.
#[derive(Clone)]
pub struct Link {
    tx: Transmitter,
    n_cs: usize,
    pa: Option<PaModel>,
}

impl Link {
    /// Windowing is applied when the geometry has a cyclic suffix.
    pub fn new(tx: Transmitter) -> Self {
        let n_cs = tx.geometry().n_cs();
        Self { tx, n_cs, pa: None }
    }

    pub fn transmitter(&self) -> &Transmitter {
        &self.tx
    }

    /// Calibrates a Rapp amplifier on the mean power of the first
    /// `n_symbols` symbols of the `seed` stream.
    pub fn with_pa(mut self, p: f64, ibo_db: f64, n_symbols: usize, seed: u64) -> Result<Self> {
        self.pa = None;
        let power = self.mean_power(n_symbols, seed)?;
        self.pa = Some(PaModel::calibrated(p, ibo_db, power)?);
        Ok(self)
    }

    pub fn pa(&self) -> Option<&PaModel> {
        self.pa.as_ref()
    }

    /// Distance between consecutive symbol starts.
    pub fn stride(&self) -> usize {
        self.tx.geometry().symbol_len() * self.tx.oversample()
    }

    pub fn segment(&self, seed: u64, index: u64) -> Waveform {
        let mut wave = self.tx.random_symbol(seed, index);
        if self.n_cs > 0 {
            wave = apply_window(&wave, self.tx.geometry(), self.n_cs).expect("validated suffix");
        }
        match &self.pa {
            Some(pa) => rapp_amplifier(&wave, pa),
            None => wave,
        }
    }

    fn chunked<T: Send>(&self, n_symbols: usize, f: impl Fn(std::ops::Range<u64>) -> T + Sync + Send) -> Vec<T> {
        let chunks: Vec<_> = (0..n_symbols.div_ceil(CHUNK))
            .map(|c| (c * CHUNK) as u64..((c + 1) * CHUNK).min(n_symbols) as u64)
            .collect();
        chunks.into_par_iter().map(f).collect()
    }

    /// Long-run mean power per sample of the (pre-amplifier when no PA is
    /// set) stream, counting each symbol over one stride.
    pub fn mean_power(&self, n_symbols: usize, seed: u64) -> Result<f64> {
        if n_symbols == 0 {
            return Err(Error::Contract("need at least one symbol".into()));
        }
        let energies = self.chunked(n_symbols, |r| r.map(|i| self.segment(seed, i).energy()).sum::<f64>());
        Ok(energies.iter().sum::<f64>() / (n_symbols * self.stride()) as f64)
    }

    pub fn psd(&self, n_symbols: usize, seed: u64, nfft: usize) -> Result<PsdEstimate> {
        if n_symbols == 0 {
            return Err(Error::Contract("empty symbol stream".into()));
        }
        let os = self.tx.oversample();
        let parts = self.chunked(n_symbols, |r| {
            let mut acc = PsdAccumulator::new(nfft, os);
            for i in r {
                acc.add(&self.segment(seed, i))?;
            }
            Ok::<_, Error>(acc)
        });
        let mut total = PsdAccumulator::new(nfft, os);
        for part in parts {
            total.merge(&part?);
        }
        total.finish(self.tx.geometry())
    }

    pub fn papr_db(&self, n_symbols: usize, seed: u64) -> Vec<f64> {
        self.chunked(n_symbols, |r| r.map(|i| self.segment(seed, i).papr_db()).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn papr_ccdf(&self, n_symbols: usize, seed: u64) -> Result<CcdfCurve> {
        CcdfCurve::from_papr_db(self.papr_db(n_symbols, seed))
    }

    /// Sample mean of `‖W d‖²` over the stream's data.
    pub fn measured_cc_power(&self, n_symbols: usize, seed: u64) -> f64 {
        let sums = self.chunked(n_symbols, |r| {
            r.map(|i| {
                let d = self.tx.random_data(seed, i);
                self.tx.cancellation(&d).iter().map(Complex64::norm_sqr).sum::<f64>()
            })
            .sum::<f64>()
        });
        sums.iter().sum::<f64>() / n_symbols as f64
    }
}

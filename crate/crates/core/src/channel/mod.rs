//! PON upstream link simulator.
//!
//! Chain: PAM4 symbols -> NRZ drive -> driver lowpass -> EAM ->
//! dispersive fiber -> VOA ->
//! SOA -> photodiode + thermal noise -> receiver lowpass -> ideal clock
//! recovery -> 2 sps, standardized [`WaveformFrame`].
//!
//! All spectral operations act on the whole frame and are therefore
//! circular; the simulated symbol stream behaves as a periodic pattern, as a
//! looping transmit memory would.

mod frame;

pub use frame::WaveformFrame;

use std::f64::consts::{LN_10, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{pam4, seed, Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const PLANCK: f64 = 6.626_070_15e-34;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Electro-absorption modulator power transmission curve
/// `T(v) = T_min + (1 - T_min) * (1 - tanh(slope * (v - knee))) / 2`
/// with `T_min = 10^(-extinction/10)`. `v` is the reverse-bias voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EamCurve {
    /// V
    pub knee_voltage: f64,
    /// 1/V
    pub slope: f64,
    /// dB
    pub extinction: f64,
    /// V
    pub bias: f64,
}

impl Default for EamCurve {
    fn default() -> Self {
        Self {
            knee_voltage: 1.5,
            slope: 1.6,
            extinction: 12.0,
            bias: 1.5,
        }
    }
}

impl EamCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::config(format!(
                "EAM slope must be positive for a monotone curve, got {}",
                self.slope
            )));
        }
        if !(self.extinction.is_finite() && self.extinction >= 0.0) {
            return Err(Error::config(format!(
                "EAM extinction must be a non-negative dB value, got {}",
                self.extinction
            )));
        }
        if !(self.knee_voltage.is_finite() && self.bias.is_finite()) {
            return Err(Error::config("EAM voltages must be finite"));
        }
        Ok(())
    }

    fn floor(&self) -> f64 {
        10f64.powf(-self.extinction / 10.0)
    }

    pub fn transmission(&self, v: f64) -> f64 {
        let floor = self.floor();
        floor + (1.0 - floor) * 0.5 * (1.0 - (self.slope * (v - self.knee_voltage)).tanh())
    }

    /// Reverse-bias drive voltage for a symbol index; symbol 3 gets the
    /// least absorption.
    pub fn drive_voltage(&self, symbol: u8, vpp: f64) -> f64 {
        self.bias - vpp * (symbol as f64 / 3.0 - 0.5)
    }
}

/// Saturable SOA gain `G = G0 * exp(-(G - 1) * P_in / P_s)`. The configured
/// `saturation_power` is the input power at which the gain is 3 dB below
/// `small_signal_gain`; `P_s` is solved from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoaCurve {
    /// dB
    pub small_signal_gain: f64,
    /// dBm, input-referred 3-dB compression point
    pub saturation_power: f64,
}

impl Default for SoaCurve {
    fn default() -> Self {
        Self {
            small_signal_gain: 20.0,
            saturation_power: -6.0,
        }
    }
}

impl SoaCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.small_signal_gain.is_finite() && self.small_signal_gain > 3.0) {
            return Err(Error::config(
                "SOA small-signal gain must exceed 3 dB for the 3-dB saturation point to exist",
            ));
        }
        if !self.saturation_power.is_finite() {
            return Err(Error::config("SOA saturation power must be finite"));
        }
        Ok(())
    }

    fn g0(&self) -> f64 {
        10f64.powf(self.small_signal_gain / 10.0)
    }

    /// Internal saturation power `P_s` in watts.
    pub fn internal_saturation(&self) -> f64 {
        let g0 = self.g0();
        let ratio = 10f64.powf(-0.3);
        (g0 * ratio - 1.0) * dbm_to_watts(self.saturation_power) / (0.3 * LN_10)
    }

    /// Linear power gain at input power `p_in` (watts).
    pub fn gain(&self, p_in: f64) -> f64 {
        self.gain_with(p_in, self.g0(), self.internal_saturation())
    }

    fn gain_with(&self, p_in: f64, g0: f64, p_s: f64) -> f64 {
        if p_in <= 0.0 {
            return g0;
        }
        // Newton on h(g) = ln g - ln g0 + (g - 1) r, increasing and concave:
        // after the first step the iterates approach the root from below.
        let r = p_in / p_s;
        let ln_g0 = g0.ln();
        let mut g = g0;
        for _ in 0..100 {
            let h = g.ln() - ln_g0 + (g - 1.0) * r;
            let dh = 1.0 / g + r;
            let next = (g - h / dh).max(1.0);
            if (next - g).abs() <= 1e-15 * g {
                return next;
            }
            g = next;
        }
        g
    }
}

/// Receiver noise: thermal photocurrent noise and SOA spontaneous emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// One-sided thermal current noise PSD, A^2/Hz.
    pub thermal_psd: f64,
    /// SOA spontaneous-emission factor n_sp.
    pub ase_nsp: f64,
    /// Photodiode responsivity, A/W.
    pub responsivity: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            thermal_psd: DEFAULT_THERMAL_PSD,
            ase_nsp: 2.0,
            responsivity: 1.0,
        }
    }
}

/// Calibrated so that the slicer BER of the linear channel
/// ([`LinkConfig::linear`]) at -20 dBm is about 1e-2.
pub const DEFAULT_THERMAL_PSD: f64 = 3.52e-23;

/// Switches for the individual impairments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Impairments {
    /// EAM tanh curve; when off, transmission is linear in the drive level.
    pub eam_nonlinear: bool,
    /// Transmitter (driver + modulator) bandwidth limit ahead of the EAM.
    pub tx_filter: bool,
    pub dispersion: bool,
    pub soa: bool,
    pub noise: bool,
    pub rx_filter: bool,
}

impl Default for Impairments {
    fn default() -> Self {
        Self {
            eam_nonlinear: true,
            tx_filter: true,
            dispersion: true,
            soa: true,
            noise: true,
            rx_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// symbols/s
    pub baud_rate: f64,
    pub sps_sim: usize,
    pub sps_out: usize,
    /// m
    pub wavelength: f64,
    /// m
    pub fiber_length: f64,
    /// ps/(nm km)
    pub dispersion_coeff: f64,
    /// dBm
    pub launch_power: f64,
    /// dBm
    pub rop: f64,
    /// Peak-to-peak drive voltage, V.
    pub vpp: f64,
    /// First-order transmitter lowpass corner, Hz.
    pub tx_bandwidth: f64,
    /// First-order receiver lowpass corner, Hz.
    pub rx_bandwidth: f64,
    pub eam: EamCurve,
    pub soa: SoaCurve,
    pub noise: NoiseModel,
    pub impairments: Impairments,
    pub rng_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            baud_rate: 56e9,
            sps_sim: 8,
            sps_out: 2,
            wavelength: 1540e-9,
            fiber_length: 2200.0,
            dispersion_coeff: 16.3,
            launch_power: 4.1,
            rop: -2.0,
            vpp: 2.0,
            tx_bandwidth: 25e9,
            rx_bandwidth: 25e9,
            eam: EamCurve::default(),
            soa: SoaCurve::default(),
            noise: NoiseModel::default(),
            impairments: Impairments::default(),
            rng_seed: 0,
        }
    }
}

impl LinkConfig {
    /// Linear AWGN reference channel: linear modulator, no dispersion, no
    /// SOA, receiver filter and thermal noise only.
    pub fn linear() -> Self {
        Self {
            impairments: Impairments {
                eam_nonlinear: false,
                tx_filter: false,
                dispersion: false,
                soa: false,
                noise: true,
                rx_filter: true,
            },
            ..Self::default()
        }
    }

    /// Every impairment switched off.
    pub fn clean() -> Self {
        Self {
            impairments: Impairments {
                eam_nonlinear: false,
                tx_filter: false,
                dispersion: false,
                soa: false,
                noise: false,
                rx_filter: false,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sps_out == 0 || self.sps_sim < 4 || !self.sps_sim.is_multiple_of(self.sps_out) {
            return Err(Error::config(format!(
                "sps_sim ({}) must be >= 4 and an integer multiple of sps_out ({})",
                self.sps_sim, self.sps_out
            )));
        }
        if !(self.baud_rate.is_finite() && self.baud_rate > 0.0) {
            return Err(Error::config("baud_rate must be positive"));
        }
        if !(self.fiber_length.is_finite() && self.fiber_length >= 0.0) {
            return Err(Error::config("fiber_length must be non-negative"));
        }
        if !self.dispersion_coeff.is_finite() {
            return Err(Error::config("dispersion_coeff must be finite"));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::config("wavelength must be positive"));
        }
        if !(self.rx_bandwidth.is_finite() && self.rx_bandwidth > 0.0) {
            return Err(Error::config("rx_bandwidth must be positive"));
        }
        if !(self.tx_bandwidth.is_finite() && self.tx_bandwidth > 0.0) {
            return Err(Error::config("tx_bandwidth must be positive"));
        }
        if !(self.noise.thermal_psd >= 0.0 && self.noise.ase_nsp >= 0.0) {
            return Err(Error::config("noise PSD and n_sp must be non-negative"));
        }
        if self.noise.responsivity.is_nan() || self.noise.responsivity <= 0.0 {
            return Err(Error::config("responsivity must be positive"));
        }
        if !(self.vpp.is_finite() && self.vpp > 0.0) {
            return Err(Error::config("vpp must be positive"));
        }
        self.eam.validate()?;
        if self.impairments.soa {
            self.soa.validate()?;
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.baud_rate * self.sps_sim as f64
    }

    /// Accumulated chromatic dispersion in ps/nm.
    pub fn accumulated_dispersion(&self) -> f64 {
        self.dispersion_coeff * self.fiber_length / 1000.0
    }

    /// Group-velocity dispersion beta_2 in s^2/m.
    pub fn beta2(&self) -> f64 {
        let d_si = self.dispersion_coeff * 1e-6;
        -d_si * self.wavelength * self.wavelength / (2.0 * PI * SPEED_OF_LIGHT)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn hash(&self) -> [u8; 32] {
        crate::io::sha256(self.to_toml().expect("config serializes").as_bytes())
    }
}

pub fn generate_symbols(n: usize, seed: u64) -> Vec<u8> {
    pam4::generate_symbols(n, &mut seed::rng(seed))
}

/// NRZ drive through the modulator. Returns a real-valued complex baseband
/// field at `sps_sim` whose nominal average power is `launch_power`.
pub fn modulate(symbols: &[u8], cfg: &LinkConfig) -> Result<Vec<Complex64>> {
    cfg.eam.validate()?;
    let levels = level_transmissions(cfg);
    let mean_t = levels.iter().sum::<f64>() / 4.0;
    let p_launch = dbm_to_watts(cfg.launch_power);
    let amplitudes = levels.map(|t| Complex64::new((p_launch * t / mean_t).sqrt(), 0.0));
    if !cfg.impairments.tx_filter {
        let mut field = Vec::with_capacity(symbols.len() * cfg.sps_sim);
        for &s in symbols {
            field.extend(std::iter::repeat_n(amplitudes[s as usize], cfg.sps_sim));
        }
        return Ok(field);
    }
    let mut drive = Vec::with_capacity(symbols.len() * cfg.sps_sim);
    for &s in symbols {
        drive.extend(std::iter::repeat_n(cfg.eam.drive_voltage(s, cfg.vpp), cfg.sps_sim));
    }
    lowpass(&mut drive, cfg.tx_bandwidth, cfg.sample_rate());
    Ok(drive
        .iter()
        .map(|&v| {
            let t = transmission_at(cfg, v).max(0.0);
            Complex64::new((p_launch * t / mean_t).sqrt(), 0.0)
        })
        .collect())
}

/// Modulator transmission at drive voltage `v`; the linear variant maps the
/// drive span onto `[T_min, 1]`.
fn transmission_at(cfg: &LinkConfig, v: f64) -> f64 {
    let eam = &cfg.eam;
    if cfg.impairments.eam_nonlinear {
        eam.transmission(v)
    } else {
        let floor = eam.floor();
        let frac = (eam.bias - v) / cfg.vpp + 0.5;
        floor + (1.0 - floor) * frac
    }
}

/// Power transmission of each of the four drive levels.
pub fn level_transmissions(cfg: &LinkConfig) -> [f64; 4] {
    [0u8, 1, 2, 3].map(|s| transmission_at(cfg, cfg.eam.drive_voltage(s, cfg.vpp)))
}

/// All-pass chromatic dispersion `H(w) = exp(j beta2/2 w^2 L)`.
pub fn propagate_fiber(field: &mut [Complex64], cfg: &LinkConfig) {
    if field.len() < 2 || cfg.fiber_length == 0.0 {
        return;
    }
    let n = field.len();
    let fs = cfg.sample_rate();
    let half_beta2_l = 0.5 * cfg.beta2() * cfg.fiber_length;
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(field);
    for (k, x) in field.iter_mut().enumerate() {
        let w = 2.0 * PI * signed_frequency(k, n, fs);
        *x *= Complex64::from_polar(1.0 / n as f64, half_beta2_l * w * w);
    }
    planner.plan_fft_inverse(n).process(field);
}

fn signed_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * fs / n as f64
}

pub fn mean_power(field: &[Complex64]) -> f64 {
    field.iter().map(|x| x.norm_sqr()).sum::<f64>() / field.len().max(1) as f64
}

/// Variable optical attenuator: scale the field to an average power of
/// `rop` dBm.
pub fn attenuate_to_rop(field: &mut [Complex64], rop: f64) {
    let p = mean_power(field);
    if p <= 0.0 {
        return;
    }
    let scale = (dbm_to_watts(rop) / p).sqrt();
    field.iter_mut().for_each(|x| *x *= scale);
}

/// Instantaneous saturable gain plus ASE field noise.
pub fn amplify_soa<R: Rng + ?Sized>(field: &mut [Complex64], cfg: &LinkConfig, rng: &mut R) {
    let soa = &cfg.soa;
    let g0 = soa.g0();
    let p_s = soa.internal_saturation();
    for x in field.iter_mut() {
        let g = soa.gain_with(x.norm_sqr(), g0, p_s);
        *x *= g.sqrt();
    }
    if cfg.impairments.noise && cfg.noise.ase_nsp > 0.0 {
        let g_avg = soa.gain(mean_power(field) / g0.max(1.0));
        let photon = PLANCK * SPEED_OF_LIGHT / cfg.wavelength;
        let ase_power = cfg.noise.ase_nsp * (g_avg - 1.0).max(0.0) * photon * cfg.sample_rate();
        let normal = Normal::new(0.0, (0.5 * ase_power).sqrt()).expect("finite sigma");
        for x in field.iter_mut() {
            *x += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
}

/// Square-law detection, thermal noise and the receiver lowpass.
pub fn detect_and_frontend<R: Rng + ?Sized>(
    field: &[Complex64],
    cfg: &LinkConfig,
    rng: &mut R,
) -> Vec<f64> {
    let r = cfg.noise.responsivity;
    let mut current: Vec<f64> = field.iter().map(|x| r * x.norm_sqr()).collect();
    if cfg.impairments.noise && cfg.noise.thermal_psd > 0.0 {
        let sigma = (cfg.noise.thermal_psd * cfg.sample_rate() / 2.0).sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        current.iter_mut().for_each(|x| *x += normal.sample(rng));
    }
    if cfg.impairments.rx_filter {
        lowpass(&mut current, cfg.rx_bandwidth, cfg.sample_rate());
    }
    current
}

/// First-order lowpass `1 / (1 + j f / fc)`, applied circularly.
pub fn lowpass(signal: &mut [f64], fc: f64, fs: f64) {
    let n = signal.len();
    if n < 2 {
        return;
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, x) in buf.iter_mut().enumerate() {
        let f = signed_frequency(k, n, fs);
        *x /= Complex64::new(n as f64, n as f64 * f / fc);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (s, x) in signal.iter_mut().zip(buf) {
        *s = x.re;
    }
}

/// Whole transmit/receive chain at `sps_sim`, before resampling.
pub fn simulate_waveform(symbols: &[u8], cfg: &LinkConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive_seed(seed, "channel-noise"));
    let mut field = modulate(symbols, cfg)?;
    if cfg.impairments.dispersion {
        propagate_fiber(&mut field, cfg);
    }
    attenuate_to_rop(&mut field, cfg.rop);
    if cfg.impairments.soa {
        amplify_soa(&mut field, cfg, &mut rng);
    }
    Ok(detect_and_frontend(&field, cfg, &mut rng))
}

/// Ideal clock recovery: the symbol-center offset (in `sps_sim` samples,
/// relative to the nominal center) that maximizes correlation with the
/// transmitted levels.
pub fn ideal_sampling_offset(waveform: &[f64], symbols: &[u8], sps_sim: usize) -> isize {
    let n = symbols.len().min(20_000);
    let total = waveform.len() as isize;
    let half = (sps_sim / 2) as isize;
    let levels: Vec<f64> = symbols[..n].iter().map(|&s| pam4::level(s)).collect();
    let mut best = (f64::NEG_INFINITY, 0isize);
    for d in -half..half {
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let idx = (i as isize * sps_sim as isize + half + d).rem_euclid(total);
                waveform[idx as usize]
            })
            .collect();
        let c = correlation(&xs, &levels);
        if c > best.0 {
            best = (c, d);
        }
    }
    best.1
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Full chain: symbols, link, ideal synchronization and resampling to
/// `sps_out`, per-frame standardization. Sample `sps_out * i` sits at the
/// center of symbol `i`.
pub fn build_frame(cfg: &LinkConfig, n_symbols: usize, seed: u64) -> Result<WaveformFrame> {
    if n_symbols == 0 {
        return Err(Error::config("a frame needs at least one symbol"));
    }
    cfg.validate()?;
    let symbols = generate_symbols(n_symbols, seed::derive_seed(seed, "symbols"));
    let waveform = simulate_waveform(&symbols, cfg, seed)?;

    let sps = cfg.sps_sim;
    let step = sps / cfg.sps_out;
    let offset = ideal_sampling_offset(&waveform, &symbols, sps);
    let total = waveform.len() as isize;
    let center = (sps / 2) as isize + offset;
    let raw: Vec<f64> = (0..n_symbols * cfg.sps_out)
        .map(|j| {
            let idx = (j as isize * step as isize + center).rem_euclid(total);
            waveform[idx as usize]
        })
        .collect();

    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let samples = raw.iter().map(|x| ((x - mean) / std) as f32).collect();

    Ok(WaveformFrame {
        samples,
        bits: pam4::gray_bits(&symbols),
        symbols,
        sps: cfg.sps_out,
        rop: cfg.rop,
        seed,
        mean,
        std,
        accumulated_dispersion: if cfg.impairments.dispersion {
            cfg.accumulated_dispersion()
        } else {
            0.0
        },
        config_hash: cfg.hash(),
    })
}

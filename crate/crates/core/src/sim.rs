//! Synthetic multi-condition gearbox vibration.
//!
//! Two sensor locations each see a source waveform built from gear-mesh
//! harmonics; six channels (x/y/z per location) are fixed linear mixtures of
//! the two sources plus independent white noise. Speed moves every spectral
//! line and scales amplitude; torque scales amplitude only.
//!
//! Fault signatures:
//! - gear wear: extra energy in the higher mesh harmonics;
//! - teeth break: a decaying structural-resonance impulse once per shaft turn;
//! - teeth crack: a short mesh-amplitude dip each time the cracked tooth
//!   engages, i.e. amplitude modulation at shaft frequency whose sidebands
//!   `f_m ± k f_r` fill the gaps between mesh harmonics, plus a weaker
//!   impulse ringing at a lower resonance than the break impulse.
//!
//! The mesh waveform shape (harmonic phases) and the position of the damaged
//! tooth belong to the rig; a recording draws its starting shaft angle, a
//! slow random wander of the shaft speed around its nominal value, and
//! noise. Transitions between conditions are not modeled inside a
//! recording.

use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{write_mcc5_csv, MultichannelSignal, SAMPLE_RATE_HZ, VIBRATION_CHANNELS};
use crate::tensor::Tensor;

/// A steady operating condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub speed_rpm: f64,
    pub torque_nm: f64,
}

impl ConditionSpec {
    pub fn new(speed_rpm: f64, torque_nm: f64) -> Result<Self> {
        let c = Self { speed_rpm, torque_nm };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_rpm > 0.0 && self.speed_rpm.is_finite())
            || !(self.torque_nm > 0.0 && self.torque_nm.is_finite())
        {
            return Err(Error::Invalid(format!(
                "speed and torque must be positive, got {} rpm / {} Nm",
                self.speed_rpm, self.torque_nm
            )));
        }
        Ok(())
    }

    /// Shaft rotation frequency in Hz.
    pub fn shaft_hz(&self) -> f64 {
        self.speed_rpm / 60.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    Healthy,
    GearWear,
    TeethBreak,
    TeethCrack,
}

impl FaultClass {
    pub const ALL: [FaultClass; 4] = [
        FaultClass::Healthy,
        FaultClass::GearWear,
        FaultClass::TeethBreak,
        FaultClass::TeethCrack,
    ];

    pub const FAULTS: [FaultClass; 3] = [FaultClass::GearWear, FaultClass::TeethBreak, FaultClass::TeethCrack];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short name used on the command line and in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            FaultClass::Healthy => "healthy",
            FaultClass::GearWear => "wear",
            FaultClass::TeethBreak => "break",
            FaultClass::TeethCrack => "crack",
        }
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(FaultClass::Healthy),
            "wear" | "gear_wear" => Ok(FaultClass::GearWear),
            "break" | "teeth_break" => Ok(FaultClass::TeethBreak),
            "crack" | "teeth_crack" => Ok(FaultClass::TeethCrack),
            other => Err(Error::Invalid(format!("unknown fault class `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub teeth_count: u32,
    pub mesh_harmonics: usize,
    /// Mesh amplitude at the reference speed and torque.
    pub base_amplitude: f64,
    /// Per-channel additive white noise (absolute, condition independent).
    pub noise_std: f64,
    /// Relative boost of mesh harmonics 2.. under gear wear.
    pub wear_harmonic_gain: f64,
    /// Impulse peak relative to the mesh amplitude under teeth break.
    pub break_impulse_amplitude: f64,
    /// Depth of the once-per-turn mesh amplitude dip under teeth crack.
    pub crack_modulation_depth: f64,
    /// Width of the dip in tooth pitches.
    pub crack_width_teeth: f64,
    /// Impulse peak relative to the mesh amplitude under teeth crack.
    pub crack_impulse_amplitude: f64,
    /// Resonance excited by the cracked tooth's stiffness drop.
    pub crack_resonance_hz: f64,
    pub resonance_hz: f64,
    /// Relative std of the slow random shaft-speed wander.
    pub speed_fluctuation: f64,
    /// Correlation time of the speed wander.
    pub speed_fluctuation_tau_s: f64,
    pub resonance_decay_s: f64,
    pub reference_speed_rpm: f64,
    pub reference_torque_nm: f64,
    /// Mesh amplitude grows as `(speed / reference)^exponent`.
    pub speed_amplitude_exponent: f64,
    /// Fixes sensor placement (mixing matrix, per-location gains).
    pub rig_seed: u64,
    /// Phases, impulse timing and noise.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            teeth_count: 24,
            mesh_harmonics: 3,
            base_amplitude: 1.0,
            noise_std: 0.25,
            wear_harmonic_gain: 0.8,
            break_impulse_amplitude: 3.5,
            crack_modulation_depth: 0.8,
            crack_width_teeth: 1.5,
            crack_impulse_amplitude: 3.5,
            crack_resonance_hz: 1_000.0,
            resonance_hz: 2_900.0,
            speed_fluctuation: 0.005,
            speed_fluctuation_tau_s: 0.05,
            resonance_decay_s: 0.0025,
            reference_speed_rpm: 1_000.0,
            reference_torque_nm: 20.0,
            speed_amplitude_exponent: 1.0,
            rig_seed: 0x5EED_0F_61A5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.teeth_count < 2 {
            return Err(Error::Invalid(format!(
                "teeth_count must be >= 2, got {}",
                self.teeth_count
            )));
        }
        if self.mesh_harmonics == 0 {
            return Err(Error::Invalid("mesh_harmonics must be >= 1".into()));
        }
        let nonneg = [
            ("noise_std", self.noise_std),
            ("base_amplitude", self.base_amplitude),
            ("wear_harmonic_gain", self.wear_harmonic_gain),
            ("break_impulse_amplitude", self.break_impulse_amplitude),
            ("crack_modulation_depth", self.crack_modulation_depth),
            ("crack_impulse_amplitude", self.crack_impulse_amplitude),
            ("speed_fluctuation", self.speed_fluctuation),
            ("speed_amplitude_exponent", self.speed_amplitude_exponent),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let pos = [
            ("resonance_hz", self.resonance_hz),
            ("resonance_decay_s", self.resonance_decay_s),
            ("crack_width_teeth", self.crack_width_teeth),
            ("crack_resonance_hz", self.crack_resonance_hz),
            ("speed_fluctuation_tau_s", self.speed_fluctuation_tau_s),
            ("reference_speed_rpm", self.reference_speed_rpm),
            ("reference_torque_nm", self.reference_torque_nm),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Gear-mesh frequency for a condition.
    pub fn mesh_hz(&self, cond: &ConditionSpec) -> f64 {
        cond.shaft_hz() * self.teeth_count as f64
    }
}

/// Sensor placement and gear geometry, drawn once per rig.
struct Rig {
    /// `mixing[ch][loc]`
    mixing: [[f64; 2]; VIBRATION_CHANNELS],
    /// Per-location, per-harmonic transfer gain.
    harmonic_gain: [Vec<f64>; 2],
    /// Per-location harmonic phases; the mesh waveform shape.
    harmonic_phase: [Vec<f64>; 2],
    /// Shaft angle of the damaged tooth.
    damage_angle: f64,
    /// How strongly each location sees the broken-tooth impulses.
    impulse_gain: [f64; 2],
}

impl Rig {
    fn new(cfg: &SimConfig, harmonics: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rig_seed);
        let mut mixing = [[0.0; 2]; VIBRATION_CHANNELS];
        for (ch, row) in mixing.iter_mut().enumerate() {
            let own = ch / 3;
            row[own] = rng.random_range(0.7..1.3);
            row[1 - own] = rng.random_range(0.05..0.3);
        }
        let mut gains = || (0..harmonics).map(|_| rng.random_range(0.6..1.2)).collect::<Vec<_>>();
        let harmonic_gain = [gains(), gains()];
        let mut phases = || (0..harmonics).map(|_| rng.random_range(0.0..TAU)).collect::<Vec<_>>();
        let harmonic_phase = [phases(), phases()];
        Self {
            mixing,
            harmonic_gain,
            harmonic_phase,
            damage_angle: rng.random_range(0.0..TAU),
            impulse_gain: [1.0, 0.5],
        }
    }
}

/// Generates `duration_s` seconds of six-channel vibration at 12.8 kHz.
pub fn synth_signal(
    cond: &ConditionSpec,
    fault: FaultClass,
    duration_s: f64,
    cfg: &SimConfig,
) -> Result<MultichannelSignal> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Invalid(format!("duration must be positive, got {duration_s}")));
    }
    let len = ((duration_s * SAMPLE_RATE_HZ).round() as usize).max(1);
    synth_samples(cond, fault, len, cfg)
}

/// Same as [`synth_signal`] with an explicit sample count.
pub fn synth_samples(
    cond: &ConditionSpec,
    fault: FaultClass,
    len: usize,
    cfg: &SimConfig,
) -> Result<MultichannelSignal> {
    cond.validate()?;
    cfg.validate()?;
    if len == 0 {
        return Err(Error::Invalid("signal length must be positive".into()));
    }
    let wear = fault == FaultClass::GearWear;
    // Wear also excites two harmonics above the configured ones.
    let harmonics = cfg.mesh_harmonics + if wear { 2 } else { 0 };
    let rig = Rig::new(cfg, cfg.mesh_harmonics + 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let f_r = cond.shaft_hz();
    let amp = cfg.base_amplitude
        * (cond.torque_nm / cfg.reference_torque_nm)
        * (cond.speed_rpm / cfg.reference_speed_rpm).powf(cfg.speed_amplitude_exponent);

    let mut amps = [vec![0.0; harmonics], vec![0.0; harmonics]];
    for loc in 0..2 {
        for h in 0..harmonics {
            let nominal = 0.5f64.powi(h as i32);
            let a = if h < cfg.mesh_harmonics {
                if wear && h > 0 {
                    nominal * (1.0 + cfg.wear_harmonic_gain)
                } else {
                    nominal
                }
            } else {
                // extra wear harmonics, tied to the strength of the boost
                2.0 * cfg.wear_harmonic_gain * nominal
            };
            amps[loc][h] = amp * a * rig.harmonic_gain[loc][h];
        }
    }
    // Shaft angle at the first sample; every signature is locked to it.
    let start_angle = rng.random_range(0.0..TAU);
    let crack_depth = if fault == FaultClass::TeethCrack {
        cfg.crack_modulation_depth
    } else {
        0.0
    };
    let (impulse_amp, impulse_hz) = match fault {
        FaultClass::TeethBreak => (cfg.break_impulse_amplitude * amp, cfg.resonance_hz),
        FaultClass::TeethCrack => (cfg.crack_impulse_amplitude * amp, cfg.crack_resonance_hz),
        _ => (0.0, cfg.resonance_hz),
    };
    let teeth = cfg.teeth_count as f64;
    let pitch = TAU / teeth;

    let dt = 1.0 / SAMPLE_RATE_HZ;
    let period = 1.0 / f_r;
    // Ornstein-Uhlenbeck wander of the relative shaft speed, on its own stream
    let mut wander_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    wander_rng.set_stream(1);
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let decay = (-dt / cfg.speed_fluctuation_tau_s).exp();
    let kick = cfg.speed_fluctuation * (1.0 - decay * decay).sqrt();
    let mut wander = cfg.speed_fluctuation * unit.sample(&mut wander_rng);
    let mut angle = start_angle;
    let mut sources = [vec![0.0; len], vec![0.0; len]];
    for i in 0..len {
        if i > 0 {
            angle += TAU * f_r * (1.0 + wander) * dt;
            wander = decay * wander + kick * unit.sample(&mut wander_rng);
        }
        let rel = (angle - rig.damage_angle).rem_euclid(TAU);
        // Gaussian dip centred on the damaged tooth, in tooth pitches
        let off = rel.min(TAU - rel) / pitch / cfg.crack_width_teeth;
        let envelope = 1.0 - crack_depth * (-off * off).exp();
        // time since the damaged tooth last engaged
        let since = rel / TAU * period;
        let impulse = if impulse_amp > 0.0 {
            impulse_amp * (-since / cfg.resonance_decay_s).exp() * (TAU * impulse_hz * since).sin()
        } else {
            0.0
        };
        for loc in 0..2 {
            let mut mesh = 0.0;
            for h in 0..harmonics {
                mesh += amps[loc][h] * ((h + 1) as f64 * teeth * angle + rig.harmonic_phase[loc][h]).sin();
            }
            sources[loc][i] = envelope * mesh + rig.impulse_gain[loc] * impulse;
        }
    }

    let normal = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(VIBRATION_CHANNELS * len);
    for ch in 0..VIBRATION_CHANNELS {
        let [m0, m1] = rig.mixing[ch];
        for i in 0..len {
            let noise = if cfg.noise_std > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            data.push(m0 * sources[0][i] + m1 * sources[1][i] + noise);
        }
    }
    MultichannelSignal::new(
        SAMPLE_RATE_HZ,
        crate::signal::DEFAULT_COLUMN_NAMES[2..]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        Tensor::new(vec![VIBRATION_CHANNELS, len], data)?,
    )
}

/// Writes a generated recording in the eight-column CSV layout.
pub fn synth_csv<W: Write>(
    cond: &ConditionSpec,
    fault: FaultClass,
    duration_s: f64,
    cfg: &SimConfig,
    out: &mut W,
) -> Result<()> {
    let s = synth_signal(cond, fault, duration_s, cfg)?;
    write_mcc5_csv(&s, cond.speed_rpm, cond.torque_nm, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{parse_mcc5_csv, ColumnMap};
    use rustfft::{num_complex::Complex, FftPlanner};

    fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2].iter().map(|c| c.norm()).collect()
    }

    fn peak_bin(x: &[f64]) -> usize {
        let s = magnitude_spectrum(x);
        (1..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn cfg() -> SimConfig {
        SimConfig {
            seed: 42,
            ..SimConfig::default()
        }
    }

    #[test]
    fn healthy_peak_at_mesh_frequency() {
        let c = ConditionSpec::new(1000.0, 20.0).unwrap();
        // one second: 1 Hz bins
        let s = synth_signal(&c, FaultClass::Healthy, 1.0, &cfg()).unwrap();
        assert_eq!(s.len(), 12_800);
        for ch in 0..6 {
            assert_eq!(peak_bin(s.channel(ch)), 400, "channel {ch}");
        }
    }

    #[test]
    fn same_seed_same_signal() {
        let c = ConditionSpec::new(1500.0, 20.0).unwrap();
        for f in FaultClass::ALL {
            let a = synth_signal(&c, f, 0.2, &cfg()).unwrap();
            let b = synth_signal(&c, f, 0.2, &cfg()).unwrap();
            assert_eq!(a, b);
        }
        let other = synth_signal(&c, FaultClass::Healthy, 0.2, &cfg().with_seed(43)).unwrap();
        assert_ne!(other, synth_signal(&c, FaultClass::Healthy, 0.2, &cfg()).unwrap());
    }

    #[test]
    fn torque_scales_amplitude_only() {
        let hi = synth_signal(
            &ConditionSpec::new(1000.0, 20.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &cfg(),
        )
        .unwrap();
        let lo = synth_signal(
            &ConditionSpec::new(1000.0, 15.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &cfg(),
        )
        .unwrap();
        for ch in 0..6 {
            let ratio = rms(lo.channel(ch)) / rms(hi.channel(ch));
            assert!((ratio / 0.75 - 1.0).abs() < 0.10, "channel {ch}: ratio {ratio}");
            assert_eq!(peak_bin(lo.channel(ch)), peak_bin(hi.channel(ch)));
        }
        // spectral support: with a steady shaft, bins far above the noise
        // floor coincide
        let still = SimConfig {
            speed_fluctuation: 0.0,
            ..cfg()
        };
        let hi = synth_signal(
            &ConditionSpec::new(1000.0, 20.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &still,
        )
        .unwrap();
        let lo = synth_signal(
            &ConditionSpec::new(1000.0, 15.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &still,
        )
        .unwrap();
        for ch in 0..6 {
            let (sh, sl) = (magnitude_spectrum(hi.channel(ch)), magnitude_spectrum(lo.channel(ch)));
            let floor = |s: &[f64]| {
                let mut v = s.to_vec();
                v.sort_by(f64::total_cmp);
                v[v.len() / 2]
            };
            let support = |s: &[f64]| {
                let f = floor(s);
                (0..s.len()).filter(|&i| s[i] > 20.0 * f).collect::<Vec<_>>()
            };
            assert_eq!(support(&sh), support(&sl), "channel {ch}");
        }
    }

    #[test]
    fn speed_moves_the_peak() {
        let a = synth_signal(
            &ConditionSpec::new(2000.0, 20.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &cfg(),
        )
        .unwrap();
        let b = synth_signal(
            &ConditionSpec::new(1500.0, 20.0).unwrap(),
            FaultClass::Healthy,
            1.0,
            &cfg(),
        )
        .unwrap();
        // the slow speed wander may shift the peak by a bin or two
        assert!(peak_bin(a.channel(0)).abs_diff(800) <= 3);
        assert!(peak_bin(b.channel(0)).abs_diff(600) <= 3);
    }

    #[test]
    fn finite_for_every_class_and_condition() {
        for (rpm, nm) in [(2000.0, 20.0), (1500.0, 20.0), (1000.0, 15.0), (30.0, 0.5)] {
            let c = ConditionSpec::new(rpm, nm).unwrap();
            for f in FaultClass::ALL {
                let s = synth_signal(&c, f, 0.1, &cfg()).unwrap();
                assert!(s.samples().all_finite());
                assert_eq!(s.channels(), 6);
            }
        }
    }

    #[test]
    fn preconditions_enforced() {
        let c = ConditionSpec::new(1000.0, 20.0).unwrap();
        assert!(synth_signal(&c, FaultClass::Healthy, 0.0, &cfg()).is_err());
        assert!(ConditionSpec::new(0.0, 20.0).is_err());
        assert!(ConditionSpec::new(1000.0, -1.0).is_err());
        let bad = SimConfig {
            teeth_count: 1,
            ..cfg()
        };
        assert!(synth_signal(&c, FaultClass::Healthy, 0.1, &bad).is_err());
        let bad = SimConfig {
            noise_std: -0.1,
            ..cfg()
        };
        assert!(synth_signal(&c, FaultClass::Healthy, 0.1, &bad).is_err());
    }

    #[test]
    fn csv_emission_round_trips_through_the_loader() {
        let c = ConditionSpec::new(1500.0, 20.0).unwrap();
        let mut buf = Vec::new();
        synth_csv(&c, FaultClass::TeethCrack, 0.01, &cfg(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let direct = synth_signal(&c, FaultClass::TeethCrack, 0.01, &cfg()).unwrap();
        let loaded = parse_mcc5_csv(&text, "sim", true, &ColumnMap::default()).unwrap();
        assert_eq!(loaded.samples().data(), direct.samples().data());
        let all = parse_mcc5_csv(&text, "sim", false, &ColumnMap::default()).unwrap();
        assert!(all.channel(0).iter().all(|&v| v == 1500.0));
        assert!(all.channel(1).iter().all(|&v| v == 20.0));
    }

    /// Log band energies around the mesh lines, sidebands, the high-frequency
    /// band and the crack resonance, plus kurtosis.
    fn spectral_features(x: &[f64], cond: &ConditionSpec, cfg: &SimConfig) -> Vec<f64> {
        let n = x.len();
        let spec = magnitude_spectrum(x);
        let bin = |hz: f64| ((hz * n as f64 / SAMPLE_RATE_HZ).round() as usize).min(spec.len() - 1);
        let band = |lo: f64, hi: f64| {
            let (a, b) = (bin(lo), bin(hi).max(bin(lo) + 1));
            (spec[a..b].iter().map(|v| v * v).sum::<f64>() + 1e-12).ln()
        };
        let fm = cfg.mesh_hz(cond);
        let fr = cond.shaft_hz();
        let mut f = Vec::new();
        for h in 1..=5 {
            let c = fm * h as f64;
            f.push(band(c - 15.0, c + 15.0));
        }
        f.push(band(fm - fr - 12.0, fm - fr + 12.0) + band(fm + fr - 12.0, fm + fr + 12.0));
        f.push(band(2_000.0, 4_000.0));
        f.push(band(cfg.crack_resonance_hz - 150.0, cfg.crack_resonance_hz + 150.0));
        let m = x.iter().sum::<f64>() / n as f64;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
        let k = x.iter().map(|a| (a - m).powi(4)).sum::<f64>() / n as f64 / (v * v);
        f.push(k);
        f
    }

    #[test]
    fn each_fault_separable_from_healthy_by_spectral_features() {
        let c = ConditionSpec::new(1500.0, 20.0).unwrap();
        let cfg = cfg();
        let windows = |fault: FaultClass, seed: u64| -> Vec<Vec<f64>> {
            // 100 windows of 1024 samples at stride 64
            let len = 99 * 64 + 1024;
            let s = synth_samples(&c, fault, len, &cfg.with_seed(seed)).unwrap();
            (0..100)
                .map(|i| spectral_features(&s.channel(0)[i * 64..i * 64 + 1024], &c, &cfg))
                .collect()
        };
        let centroid = |rows: &[Vec<f64>]| -> Vec<f64> {
            let d = rows[0].len();
            (0..d)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let healthy_train = centroid(&windows(FaultClass::Healthy, 1));
        let healthy_test = windows(FaultClass::Healthy, 2);
        for fault in FaultClass::FAULTS {
            let fault_train = centroid(&windows(fault, 3));
            let fault_test = windows(fault, 4);
            let mut correct = 0;
            for w in &healthy_test {
                correct += (dist(w, &healthy_train) < dist(w, &fault_train)) as usize;
            }
            for w in &fault_test {
                correct += (dist(w, &fault_train) < dist(w, &healthy_train)) as usize;
            }
            let acc = correct as f64 / 200.0;
            assert!(acc > 0.9, "{fault}: accuracy {acc}");
        }
    }

    #[test]
    fn fault_names_parse() {
        for f in FaultClass::ALL {
            assert_eq!(f.short_name().parse::<FaultClass>().unwrap(), f);
            assert_eq!(FaultClass::from_index(f.index()), Some(f));
        }
        assert!("bogus".parse::<FaultClass>().is_err());
    }
}

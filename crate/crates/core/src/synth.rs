//! Seeded synthetic cohorts with plantable group differences.
//!
//! Each channel is a sum of shared latent oscillators (one per coupled pair),
//! its own background oscillator and white noise, scaled by a per-participant
//! gain. Planted effects add extra latents to a node set inside a time range
//! of every epoch of the target group.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64:
//! participant `p` uses `mix(seed, p)` and its epoch `e` uses
//! `mix(mix(seed, p), e)`, so any subset can be regenerated independently.
//! Uniforms are `(next_u64 >> 11) · 2⁻⁵³`; normals use the cosine branch of
//! Box–Muller.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Epoch, Group, ParticipantRecording};

/// Sinusoids summed per latent oscillator.
pub const LATENT_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectStructure {
    PairwiseEdge,
    Triangle,
    Loop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub target_group: Group,
    /// `[start, end)` as fractions of the epoch.
    pub window_range: (f64, f64),
    pub structure: EffectStructure,
    /// Two nodes for an edge, three for a triangle, the cycle in order for a loop.
    pub node_set: Vec<usize>,
    pub amplitude_delta: f64,
    #[serde(default = "default_effect_band")]
    pub band_hz: (f64, f64),
}

fn default_effect_band() -> (f64, f64) {
    (4.0, 8.0)
}

fn default_latent_band() -> (f64, f64) {
    (1.0, 20.0)
}

fn default_background() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    pub n_participants_per_group: usize,
    pub n_epochs_per_participant: usize,
    #[serde(default)]
    pub base_coupling: Vec<Coupling>,
    #[serde(default)]
    pub planted_effects: Vec<PlantedEffect>,
    pub noise_sd: f64,
    pub seed: u64,
    /// Amplitude of each channel's private oscillator.
    #[serde(default = "default_background")]
    pub background_amplitude: f64,
    /// Log-normal spread of the per-participant gain (0 = every gain is 1).
    #[serde(default)]
    pub participant_gain_sd: f64,
    /// Frequency range of base and background oscillators.
    #[serde(default = "default_latent_band")]
    pub latent_band_hz: (f64, f64),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_channels < 2 || self.n_samples < 2 {
            return bad(format!(
                "need at least 2 channels and 2 samples, got {} and {}",
                self.n_channels, self.n_samples
            ));
        }
        if self.n_participants_per_group == 0 || self.n_epochs_per_participant == 0 {
            return bad("participant and epoch counts must be positive".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        if !(self.background_amplitude.is_finite() && self.background_amplitude >= 0.0) {
            return bad("background_amplitude must be non-negative".into());
        }
        if !(self.participant_gain_sd.is_finite() && self.participant_gain_sd >= 0.0) {
            return bad("participant_gain_sd must be non-negative".into());
        }
        self.check_band(self.latent_band_hz, "latent_band_hz")?;
        for c in &self.base_coupling {
            if c.i == c.j || c.i >= self.n_channels || c.j >= self.n_channels {
                return bad(format!("coupling ({}, {}) invalid for {} channels", c.i, c.j, self.n_channels));
            }
            if !(0.0..=1.0).contains(&c.strength) {
                return bad(format!("coupling ({}, {}) strength {} outside [0, 1]", c.i, c.j, c.strength));
            }
        }
        for (k, e) in self.planted_effects.iter().enumerate() {
            let n = e.node_set.len();
            let ok = match e.structure {
                EffectStructure::PairwiseEdge => n == 2,
                EffectStructure::Triangle => n == 3,
                EffectStructure::Loop => n >= 4,
            };
            if !ok {
                return bad(format!("effect {k}: {:?} cannot use {n} nodes", e.structure));
            }
            let mut nodes = e.node_set.clone();
            nodes.sort_unstable();
            nodes.dedup();
            if nodes.len() != n || nodes.iter().any(|&v| v >= self.n_channels) {
                return bad(format!("effect {k}: nodes must be distinct channel indices"));
            }
            let (s, t) = e.window_range;
            if !(0.0 <= s && s < t && t <= 1.0) {
                return bad(format!("effect {k}: window range [{s}, {t}) must satisfy 0 ≤ start < end ≤ 1"));
            }
            if !e.amplitude_delta.is_finite() {
                return bad(format!("effect {k}: amplitude must be finite"));
            }
            self.check_band(e.band_hz, "effect band_hz")?;
        }
        Ok(())
    }

    fn check_band(&self, (lo, hi): (f64, f64), what: &str) -> Result<()> {
        if !(lo > 0.0 && lo < hi && hi < self.sample_rate_hz / 2.0) {
            return Err(Error::Validation(format!(
                "{what} ({lo}, {hi}) must satisfy 0 < low < high < Nyquist"
            )));
        }
        Ok(())
    }

    /// Participant id and group for global index `p` (controls first).
    pub fn participant(&self, p: usize) -> (String, Group) {
        let n = self.n_participants_per_group;
        if p < n {
            (format!("control-{p:03}"), Group::Control)
        } else {
            (format!("patient-{:03}", p - n), Group::Patient)
        }
    }
}

/// SplitMix64 finaliser applied to `a ^ splitmix(b)`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(a ^ splitmix(b))
}

struct Source(Xoshiro256PlusPlus);

impl Source {
    fn new(seed: u64) -> Self {
        Source(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Unit-variance sum of random sinusoids with frequencies in `band`.
    fn oscillator(&mut self, n: usize, fs: f64, (lo, hi): (f64, f64)) -> Vec<f64> {
        let amp = (2.0 / LATENT_COMPONENTS as f64).sqrt();
        let params: Vec<(f64, f64)> = (0..LATENT_COMPONENTS)
            .map(|_| {
                let f = lo + (hi - lo) * self.uniform();
                let phase = 2.0 * PI * self.uniform();
                (f, phase)
            })
            .collect();
        (0..n)
            .map(|t| {
                let time = t as f64 / fs;
                params.iter().map(|(f, ph)| amp * (2.0 * PI * f * time + ph).sin()).sum()
            })
            .collect()
    }
}

fn generate_epoch(config: &SynthConfig, group: Group, gain: f64, seed: u64) -> Result<Epoch> {
    let (nc, ns, fs) = (config.n_channels, config.n_samples, config.sample_rate_hz);
    let mut src = Source::new(seed);
    let mut x = Array2::<f64>::zeros((nc, ns));

    for c in &config.base_coupling {
        let z = src.oscillator(ns, fs, config.latent_band_hz);
        for node in [c.i, c.j] {
            for (v, zt) in x.row_mut(node).iter_mut().zip(&z) {
                *v += c.strength * zt;
            }
        }
    }
    for ch in 0..nc {
        let z = src.oscillator(ns, fs, config.latent_band_hz);
        for (v, zt) in x.row_mut(ch).iter_mut().zip(&z) {
            *v += config.background_amplitude * zt;
        }
    }
    // effect latents are drawn for both groups so the streams stay aligned
    for e in &config.planted_effects {
        let start = (e.window_range.0 * ns as f64).round() as usize;
        let end = ((e.window_range.1 * ns as f64).round() as usize).min(ns);
        let active = e.target_group == group;
        match e.structure {
            EffectStructure::PairwiseEdge | EffectStructure::Triangle => {
                let z = src.oscillator(ns, fs, e.band_hz);
                if active {
                    for &node in &e.node_set {
                        for t in start..end {
                            x[[node, t]] += e.amplitude_delta * z[t];
                        }
                    }
                }
            }
            EffectStructure::Loop => {
                let len = e.node_set.len();
                let links: Vec<Vec<f64>> = (0..len).map(|_| src.oscillator(ns, fs, e.band_hz)).collect();
                if active {
                    // node k carries the links to its predecessor and successor
                    for (k, &node) in e.node_set.iter().enumerate() {
                        let (prev, next) = (&links[(k + len - 1) % len], &links[k]);
                        for t in start..end {
                            x[[node, t]] += e.amplitude_delta * (prev[t] + next[t]) / std::f64::consts::SQRT_2;
                        }
                    }
                }
            }
        }
    }
    for v in x.iter_mut() {
        *v += config.noise_sd * src.normal();
    }
    x *= gain;
    Epoch::new(x, fs)
}

/// Generates the full cohort; output depends only on `config`.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<ParticipantRecording>> {
    config.validate()?;
    (0..2 * config.n_participants_per_group)
        .into_par_iter()
        .map(|p| generate_participant(config, p))
        .collect()
}

/// Generates participant `p` alone (controls are `0..n`, patients `n..2n`).
pub fn generate_participant(config: &SynthConfig, p: usize) -> Result<ParticipantRecording> {
    let (id, group) = config.participant(p);
    let pseed = mix_seed(config.seed, p as u64);
    let gain = (config.participant_gain_sd * Source::new(pseed).normal()).exp();
    let epochs = (0..config.n_epochs_per_participant)
        .map(|e| generate_epoch(config, group, gain, mix_seed(pseed, e as u64)))
        .collect::<Result<Vec<_>>>()?;
    ParticipantRecording::new(id, group, epochs)
}

//! Epochs, cohorts, band-pass filtering and analysis windows.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low edge used in place of a 0 Hz band edge so the kernel does not pass DC.
pub const MIN_LOW_EDGE_HZ: f64 = 0.5;

/// One trial: `n_channels × n_samples` samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    data: Array2<f64>,
    sample_rate_hz: f64,
}

impl Epoch {
    pub fn new(data: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let (channels, samples) = data.dim();
        if channels < 2 || samples < 2 {
            return Err(Error::Validation(format!(
                "epoch needs at least 2 channels and 2 samples, got {channels}×{samples}"
            )));
        }
        if let Some(((c, t), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {v} at channel {c}, sample {t}"
            )));
        }
        Ok(Epoch {
            data,
            sample_rate_hz,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn channel(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Control,
    Patient,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Patient => "patient",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        match s {
            "control" => Some(Group::Control),
            "patient" => Some(Group::Patient),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All epochs recorded for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantRecording {
    pub participant_id: String,
    pub group: Group,
    pub epochs: Vec<Epoch>,
}

impl ParticipantRecording {
    pub fn new(participant_id: impl Into<String>, group: Group, epochs: Vec<Epoch>) -> Result<Self> {
        let participant_id = participant_id.into();
        let first = epochs.first().ok_or_else(|| {
            Error::Validation(format!("participant {participant_id} has no epochs"))
        })?;
        let shape = (first.n_channels(), first.n_samples());
        let rate = first.sample_rate_hz();
        for (k, e) in epochs.iter().enumerate() {
            if (e.n_channels(), e.n_samples()) != shape {
                return Err(Error::Validation(format!(
                    "participant {participant_id}, epoch {k}: shape {}×{} differs from {}×{}",
                    e.n_channels(),
                    e.n_samples(),
                    shape.0,
                    shape.1
                )));
            }
            if e.sample_rate_hz() != rate {
                return Err(Error::Validation(format!(
                    "participant {participant_id}, epoch {k}: sample rate {} differs from {rate}",
                    e.sample_rate_hz()
                )));
            }
        }
        Ok(ParticipantRecording {
            participant_id,
            group,
            epochs,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.epochs[0].n_channels()
    }

    pub fn n_samples(&self) -> usize {
        self.epochs[0].n_samples()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.epochs[0].sample_rate_hz()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Self {
        BandSpec {
            name: name.into(),
            low_hz,
            high_hz,
        }
    }

    /// Delta, theta, alpha and beta as used for the encoding-phase analysis.
    pub fn standard_bands() -> Vec<BandSpec> {
        vec![
            BandSpec::new("Delta", 0.0, 4.0),
            BandSpec::new("Theta", 4.0, 8.0),
            BandSpec::new("Alpha", 8.0, 12.0),
            BandSpec::new("Beta", 12.0, 16.0),
        ]
    }

    /// Low edge actually used by the kernel (0 Hz is raised to [`MIN_LOW_EDGE_HZ`]).
    pub fn effective_low_hz(&self) -> f64 {
        self.low_hz.max(MIN_LOW_EDGE_HZ)
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let fail = |reason: &str| Error::InvalidBand {
            name: self.name.clone(),
            low_hz: self.low_hz,
            high_hz: self.high_hz,
            sample_rate_hz,
            reason: reason.to_string(),
        };
        if !(self.low_hz.is_finite() && self.high_hz.is_finite()) || self.low_hz < 0.0 {
            return Err(fail("edges must be finite and non-negative"));
        }
        if self.high_hz <= self.effective_low_hz() {
            return Err(fail("high edge must exceed low edge"));
        }
        if self.high_hz >= sample_rate_hz / 2.0 {
            return Err(fail("high edge must be below Nyquist"));
        }
        Ok(())
    }
}

/// Symmetric windowed-sinc band-pass kernel.
///
/// Hamming-windowed difference of two low-pass sincs. The taps are then
/// corrected to sum to exactly zero (DC null) and scaled to unit gain at the
/// band centre.
pub fn bandpass_kernel(band: &BandSpec, sample_rate_hz: f64, n_taps: usize) -> Result<Vec<f64>> {
    if n_taps == 0 || n_taps.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "n_taps must be a positive odd integer, got {n_taps}"
        )));
    }
    band.validate(sample_rate_hz)?;
    let lo = band.effective_low_hz() / sample_rate_hz;
    let hi = band.high_hz / sample_rate_hz;
    let half = (n_taps / 2) as f64;

    // evaluate the left half and mirror it so the kernel is exactly symmetric
    let mirror = |n: usize| n.min(n_taps - 1 - n);
    let window: Vec<f64> = (0..n_taps)
        .map(|n| {
            if n_taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * mirror(n) as f64 / (n_taps - 1) as f64).cos()
            }
        })
        .collect();
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let m = mirror(n) as f64 - half;
            (2.0 * hi * sinc(2.0 * hi * m) - 2.0 * lo * sinc(2.0 * lo * m)) * window[n]
        })
        .collect();

    let dc: f64 = taps.iter().sum();
    let wsum: f64 = window.iter().sum();
    for (t, w) in taps.iter_mut().zip(&window) {
        *t -= dc / wsum * w;
    }

    let centre = 0.5 * (lo + hi);
    let gain: f64 = taps
        .iter()
        .enumerate()
        .map(|(n, t)| t * (2.0 * PI * centre * (n as f64 - half)).cos())
        .sum();
    if gain.abs() < 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "{n_taps} taps cannot resolve band {} at {sample_rate_hz} Hz",
            band.name
        )));
    }
    for t in taps.iter_mut() {
        *t /= gain;
    }
    Ok(taps)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Centered convolution with reflection padding (edge sample not repeated).
///
/// `kernel.len()` must be odd and `kernel.len() / 2 < x.len()`.
pub fn convolve_reflect(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let half = (kernel.len() / 2) as isize;
    debug_assert!(half < n);
    let mut padded = Vec::with_capacity(x.len() + 2 * half as usize);
    for i in -half..n + half {
        let idx = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        padded.push(x[idx as usize]);
    }
    (0..x.len())
        .map(|t| {
            padded[t..t + kernel.len()]
                .iter()
                .zip(kernel.iter().rev())
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Band-pass filters every channel of `epoch` with the same zero-phase kernel.
pub fn bandpass_filter(epoch: &Epoch, band: &BandSpec, n_taps: usize) -> Result<Epoch> {
    if n_taps >= epoch.n_samples() {
        return Err(Error::InvalidParameter(format!(
            "n_taps ({n_taps}) must be smaller than the epoch length ({})",
            epoch.n_samples()
        )));
    }
    let kernel = bandpass_kernel(band, epoch.sample_rate_hz(), n_taps)?;
    Ok(apply_kernel(epoch, &kernel))
}

/// Filters with a precomputed kernel; used when the same band is applied to many epochs.
pub fn apply_kernel(epoch: &Epoch, kernel: &[f64]) -> Epoch {
    let mut out = Array2::zeros(epoch.data.raw_dim());
    for (src, mut dst) in epoch
        .data
        .axis_iter(Axis(0))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let row: Vec<f64> = src.iter().copied().collect();
        for (d, v) in dst.iter_mut().zip(convolve_reflect(&row, kernel)) {
            *d = v;
        }
    }
    Epoch {
        data: out,
        sample_rate_hz: epoch.sample_rate_hz,
    }
}

/// Sample ranges over which windowed flows are averaged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    n_samples: usize,
    bounds: Vec<Range<usize>>,
}

impl WindowSpec {
    pub fn n_windows(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn bounds(&self) -> &[Range<usize>] {
        &self.bounds
    }

    /// True when the windows are disjoint, contiguous and cover every sample.
    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for b in &self.bounds {
            if b.start != next || b.end <= b.start {
                return false;
            }
            next = b.end;
        }
        next == self.n_samples
    }

    /// Overlapping windows of `width` samples every `stride` samples.
    pub fn sliding(n_samples: usize, width: usize, stride: usize) -> Result<WindowSpec> {
        if width == 0 || stride == 0 || width > n_samples {
            return Err(Error::InvalidParameter(format!(
                "sliding windows need 0 < width ≤ {n_samples} and stride > 0, got width {width}, stride {stride}"
            )));
        }
        let bounds = (0..)
            .map(|k| k * stride)
            .take_while(|s| s + width <= n_samples)
            .map(|s| s..s + width)
            .collect();
        Ok(WindowSpec { n_samples, bounds })
    }
}

/// Splits `n_samples` into `n_windows` contiguous blocks.
///
/// Window `k` is `[round(k·n/w), round((k+1)·n/w))`, rounding halves up.
pub fn partition_windows(n_samples: usize, n_windows: usize) -> Result<WindowSpec> {
    if n_windows == 0 || n_windows > n_samples {
        return Err(Error::InvalidParameter(format!(
            "n_windows must be in 1..={n_samples}, got {n_windows}"
        )));
    }
    let edge = |k: usize| (2 * k * n_samples + n_windows) / (2 * n_windows);
    let bounds = (0..n_windows).map(|k| edge(k)..edge(k + 1)).collect();
    Ok(WindowSpec { n_samples, bounds })
}

/// A cohort whose participants agree on shape and rate and cover both groups.
#[derive(Debug, Clone)]
pub struct Cohort {
    participants: Vec<ParticipantRecording>,
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: f64,
}

impl Cohort {
    pub fn participants(&self) -> &[ParticipantRecording] {
        &self.participants
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn group_size(&self, group: Group) -> usize {
        self.participants.iter().filter(|p| p.group == group).count()
    }
}

pub fn validate_cohort(recordings: Vec<ParticipantRecording>) -> Result<Cohort> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Validation("cohort is empty".into()))?;
    let (channels, samples, rate) = (first.n_channels(), first.n_samples(), first.sample_rate_hz());
    let mut seen = std::collections::HashSet::new();
    for p in &recordings {
        if !seen.insert(p.participant_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate participant id {}",
                p.participant_id
            )));
        }
        for (k, e) in p.epochs.iter().enumerate() {
            if e.n_channels() != channels {
                return Err(Error::Validation(format!(
                    "participant {}, epoch {k}: {} channels, expected {channels}",
                    p.participant_id,
                    e.n_channels()
                )));
            }
            if e.n_samples() != samples {
                return Err(Error::Validation(format!(
                    "participant {}, epoch {k}: {} samples, expected {samples}",
                    p.participant_id,
                    e.n_samples()
                )));
            }
            if e.sample_rate_hz() != rate {
                return Err(Error::Validation(format!(
                    "participant {}, epoch {k}: sample rate {} Hz, expected {rate} Hz",
                    p.participant_id,
                    e.sample_rate_hz()
                )));
            }
            if let Some(((c, t), _)) = e.data().indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "participant {}, epoch {k}: non-finite value at channel {c}, sample {t}",
                    p.participant_id
                )));
            }
        }
    }
    for g in [Group::Control, Group::Patient] {
        if !recordings.iter().any(|p| p.group == g) {
            return Err(Error::Validation(format!("cohort has no {g} participants")));
        }
    }
    Ok(Cohort {
        participants: recordings,
        n_channels: channels,
        n_samples: samples,
        sample_rate_hz: rate,
    })
}

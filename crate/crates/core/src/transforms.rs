//! Signal and feature transformations whose orbits the template banks sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    /// `t[n] -> t[(1+eps) n]` on a time-domain signal.
    TimeWarp,
    /// Rotation by an integer number of samples; an exact finite group.
    CyclicShift,
    /// Translation of a log-spectral frame along the frequency axis.
    PitchShift,
}

/// A transformation family and the sampled parameters `g_1..g_M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub parameters: Vec<f64>,
    /// Value written into bins vacated by a pitch shift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<f64>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, parameters: Vec<f64>) -> Result<Self> {
        let spec = Self {
            kind,
            parameters,
            fill: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `count` warp factors evenly spaced on `[lo, hi]`.
    pub fn time_warp_grid(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("warp grid needs at least one value".into()));
        }
        let params = if count == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    let v = lo + step * i as f64;
                    // snap the centre of symmetric grids onto exact zero
                    if v.abs() < 1e-12 {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        Self::new(TransformKind::TimeWarp, params)
    }

    /// Every rotation of a length-`len` vector.
    pub fn full_cyclic(len: usize) -> Result<Self> {
        Self::new(TransformKind::CyclicShift, (0..len).map(|k| k as f64).collect())
    }

    pub fn pitch_shifts(shifts: impl IntoIterator<Item = i64>, fill: f64) -> Result<Self> {
        let mut spec = Self::new(
            TransformKind::PitchShift,
            shifts.into_iter().map(|s| s as f64).collect(),
        )?;
        spec.fill = Some(fill);
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(Error::InvalidParameter("transform parameter list is empty".into()));
        }
        for (i, &p) in self.parameters.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite("transform parameters"));
            }
            if self.parameters[..i].contains(&p) {
                return Err(Error::InvalidParameter(format!("duplicate transform parameter {p}")));
            }
            match self.kind {
                TransformKind::TimeWarp if p <= -1.0 => {
                    return Err(Error::InvalidParameter(format!("warp factor {p} must exceed -1")));
                }
                TransformKind::CyclicShift | TransformKind::PitchShift if p.fract() != 0.0 => {
                    return Err(Error::InvalidParameter(format!("shift {p} is not an integer")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Linear interpolation of `signal` at fractional `pos`, zero beyond the last
/// sample.
fn sample_at(signal: &[f64], pos: f64) -> f64 {
    let last = (signal.len() - 1) as f64;
    if pos > last || pos < 0.0 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        signal[i]
    } else {
        signal[i] * (1.0 - frac) + signal[i + 1] * frac
    }
}

/// `output[n] = signal((1+epsilon) n)` by linear interpolation, zero-extended
/// past the end; the output keeps the input length.
pub fn time_warp(signal: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !epsilon.is_finite() {
        return Err(Error::NonFinite("warp factor"));
    }
    if epsilon <= -1.0 {
        return Err(Error::InvalidParameter(format!("warp factor {epsilon} must exceed -1")));
    }
    if signal.is_empty() {
        return Err(Error::Empty("signal to warp"));
    }
    let rate = 1.0 + epsilon;
    Ok((0..signal.len()).map(|n| sample_at(signal, rate * n as f64)).collect())
}

/// `output[n] = input[(n - k) mod len]`.
pub fn cyclic_shift(vector: &[f64], k: i64) -> Vec<f64> {
    let len = vector.len();
    if len == 0 {
        return Vec::new();
    }
    let k = k.rem_euclid(len as i64) as usize;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&vector[len - k..]);
    out.extend_from_slice(&vector[..len - k]);
    out
}

/// Translates a frequency-bin frame by `shift_bins` (positive moves energy
/// up); vacated bins take `fill`.
pub fn pitch_shift_frame(frame: &[f64], shift_bins: i64, fill: f64) -> Result<Vec<f64>> {
    let len = frame.len() as i64;
    if shift_bins.abs() >= len {
        return Err(Error::InvalidParameter(format!(
            "pitch shift {shift_bins} out of range for {len} bins"
        )));
    }
    Ok((0..len)
        .map(|i| {
            let src = i - shift_bins;
            if (0..len).contains(&src) {
                frame[src as usize]
            } else {
                fill
            }
        })
        .collect())
}

/// Applies one transformation of `spec` to `signal`.
pub fn apply_one(signal: &[f64], spec: &TransformSpec, parameter: f64) -> Result<Vec<f64>> {
    match spec.kind {
        TransformKind::TimeWarp => time_warp(signal, parameter),
        TransformKind::CyclicShift => Ok(cyclic_shift(signal, parameter as i64)),
        TransformKind::PitchShift => {
            let fill = spec.fill.unwrap_or(0.0);
            pitch_shift_frame(signal, parameter as i64, fill)
        }
    }
}

/// One transformed copy of `signal` per parameter, in parameter order.
pub fn apply_orbit(signal: &[f64], spec: &TransformSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.parameters.iter().map(|&p| apply_one(signal, spec, p)).collect()
}

/// Linear-interpolation sample-rate conversion. The last input sample is held
/// for output positions that fall between it and the end of the clip.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::InvalidParameter("sample rates must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Empty("signal to resample"));
    }
    if from_rate == to_rate {
        return Ok(samples.to_vec());
    }
    let out_len = ((samples.len() as u64 * to_rate as u64) / from_rate as u64).max(1) as usize;
    let step = from_rate as f64 / to_rate as f64;
    let last = samples.len() - 1;
    Ok((0..out_len)
        .map(|i| {
            let pos = (i as f64 * step).min(last as f64);
            sample_at(samples, pos)
        })
        .collect())
}

//! Projection of an input onto stored template orbits followed by pooling of
//! the projection distribution.
//!
//! For each template the module computes the normalized inner products with
//! all of its transformed copies and summarizes them with a uniform average
//! of a nonlinearity: powers (raw moments) or shifted logistic steps (a
//! smoothed cumulative histogram). Because the average runs over the whole
//! sampled orbit, transforming the input by an element of a closed group only
//! permutes the projections and leaves the pooled values unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::template_bank::{TemplateBank, TemplateOrbit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolingSpec {
    /// Raw moments `(1/M) sum p^n` for each order `n`.
    Moments { orders: Vec<u32> },
    /// `(1/M) sum sigmoid(slope * (p + n * step))` for `n = 1..=bins`.
    SigmoidCdf { bins: usize, step: f64, slope: f64 },
}

impl Default for PoolingSpec {
    fn default() -> Self {
        PoolingSpec::Moments { orders: vec![1, 2, 3] }
    }
}

impl std::fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolingSpec::Moments { orders } => write!(f, "moments{orders:?}"),
            PoolingSpec::SigmoidCdf { bins, slope, .. } => write!(f, "sigmoid-cdf(N={bins}, slope={slope})"),
        }
    }
}

impl PoolingSpec {
    /// Sigmoid bins with thresholds `-n * 2/(bins+1)` spread over `[-1, 1]`.
    pub fn sigmoid_cdf(bins: usize, slope: f64) -> Self {
        PoolingSpec::SigmoidCdf {
            bins,
            step: 2.0 / (bins + 1) as f64,
            slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PoolingSpec::Moments { orders } => {
                if orders.is_empty() || orders.contains(&0) {
                    return Err(Error::InvalidParameter(
                        "moment orders must be non-empty and at least 1".into(),
                    ));
                }
            }
            PoolingSpec::SigmoidCdf { bins, step, slope } => {
                if *bins == 0 || !(*step > 0.0) || !(*slope > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "sigmoid pooling needs bins >= 1, step > 0, slope > 0 (got {bins}, {step}, {slope})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Statistics produced per template.
    pub fn width(&self) -> usize {
        match self {
            PoolingSpec::Moments { orders } => orders.len(),
            PoolingSpec::SigmoidCdf { bins, .. } => *bins,
        }
    }

    pub fn pool(&self, projections: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        self.pool_into(projections, &mut out)?;
        Ok(out)
    }

    fn pool_into(&self, projections: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if projections.is_empty() {
            return Err(Error::Empty("projection vector"));
        }
        match self {
            PoolingSpec::Moments { orders } => moments_into(projections, orders, out),
            PoolingSpec::SigmoidCdf { bins, step, slope } => sigmoid_cdf_into(projections, *bins, *step, *slope, out),
        }
        Ok(())
    }
}

fn moments_into(projections: &[f64], orders: &[u32], out: &mut Vec<f64>) {
    let m = projections.len() as f64;
    for &n in orders {
        let sum: f64 = projections.iter().map(|&p| p.powi(n as i32)).sum();
        out.push(sum / m);
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn sigmoid_cdf_into(projections: &[f64], bins: usize, step: f64, slope: f64, out: &mut Vec<f64>) {
    let m = projections.len() as f64;
    for n in 1..=bins {
        let shift = n as f64 * step;
        let sum: f64 = projections.iter().map(|&p| logistic(slope * (p + shift))).sum();
        out.push(sum / m);
    }
}

/// Raw moments of the projections, one per requested order.
pub fn pool_moments(projections: &[f64], orders: &[u32]) -> Result<Vec<f64>> {
    if projections.is_empty() {
        return Err(Error::Empty("projection vector"));
    }
    let mut out = Vec::with_capacity(orders.len());
    moments_into(projections, orders, &mut out);
    Ok(out)
}

/// Smoothed cumulative histogram of the projections at thresholds `-n*step`.
pub fn pool_sigmoid_cdf(projections: &[f64], bins: usize, step: f64, slope: f64) -> Result<Vec<f64>> {
    PoolingSpec::SigmoidCdf { bins, step, slope }.validate()?;
    if projections.is_empty() {
        return Err(Error::Empty("projection vector"));
    }
    let mut out = Vec::with_capacity(bins);
    sigmoid_cdf_into(projections, bins, step, slope, &mut out);
    Ok(out)
}

/// Inner product with a fixed four-lane summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn project_normalized_into(unit: &[f64], orbit: &TemplateOrbit, out: &mut Vec<f64>) {
    out.clear();
    out.extend(orbit.members().map(|m| dot(unit, m).clamp(-1.0, 1.0)));
}

/// Normalized inner products `<x/|x|, g_m t>` for every orbit member.
pub fn project(x: &[f64], orbit: &TemplateOrbit) -> Result<Vec<f64>> {
    if x.len() != orbit.dim() {
        return Err(Error::DimensionMismatch {
            expected: orbit.dim(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input"));
    }
    let n = norm(x);
    if n == 0.0 {
        return Err(Error::ZeroInput);
    }
    let unit: Vec<f64> = x.iter().map(|v| v / n).collect();
    let mut out = Vec::with_capacity(orbit.len());
    project_normalized_into(&unit, orbit, &mut out);
    Ok(out)
}

/// Pooled statistics for every template, concatenated in bank order.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub values: Vec<f64>,
    /// `(template_id, statistic index)` for each coordinate.
    pub layout: Vec<(usize, usize)>,
}

impl Signature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_input(x: &[f64], bank: &TemplateBank, spec: &PoolingSpec) -> Result<()> {
    spec.validate()?;
    if x.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signature input"));
    }
    Ok(())
}

fn signature_values_unit(unit: &[f64], bank: &TemplateBank, spec: &PoolingSpec, exec: Exec) -> Vec<f64> {
    let per_template = exec.map(bank.orbits(), |orbit| {
        let mut proj = Vec::with_capacity(orbit.len());
        project_normalized_into(unit, orbit, &mut proj);
        let mut out = Vec::with_capacity(spec.width());
        spec.pool_into(&proj, &mut out).expect("orbits are non-empty");
        out
    });
    per_template.concat()
}

/// Signature values only. An all-zero input (digital silence) maps to the
/// all-zero signature instead of failing.
pub fn signature_values(x: &[f64], bank: &TemplateBank, spec: &PoolingSpec, exec: Exec) -> Result<Vec<f64>> {
    check_input(x, bank, spec)?;
    let n = norm(x);
    if n == 0.0 {
        return Ok(vec![0.0; bank.len() * spec.width()]);
    }
    let unit: Vec<f64> = x.iter().map(|v| v / n).collect();
    Ok(signature_values_unit(&unit, bank, spec, exec))
}

/// Concatenated pooled projection statistics of `x` over every orbit.
pub fn signature(x: &[f64], bank: &TemplateBank, spec: &PoolingSpec) -> Result<Signature> {
    check_input(x, bank, spec)?;
    if norm(x) == 0.0 {
        return Err(Error::ZeroInput);
    }
    let values = signature_values(x, bank, spec, Exec::default())?;
    let layout = bank
        .orbits()
        .iter()
        .flat_map(|o| (0..spec.width()).map(move |s| (o.template_id(), s)))
        .collect();
    Ok(Signature { values, layout })
}

//! Gaussian kernel densities `Ŷ(x) = Σ α^l φ(x | X̂^l, λ^l)` and the
//! Parzen–Rosenblatt estimator with its MSE-optimal bandwidth.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Anything that can be evaluated as a (possibly unnormalized) density.
pub trait DensityFn: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> DensityFn for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Unnormalized Gaussian kernel `exp(−‖x − c‖² / λ²)`.
#[inline]
pub fn phi(x: &[f64], center: &[f64], lambda: f64) -> f64 {
    (-sq_dist(x, center) / (lambda * lambda)).exp()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelDensity {
    dim: usize,
    centers: Vec<f64>,
    weights: Vec<f64>,
    bandwidths: Vec<f64>,
}

impl KernelDensity {
    /// `centers` is row-major, `L × dim`.
    pub fn new(dim: usize, centers: Vec<f64>, weights: Vec<f64>, bandwidths: Vec<f64>) -> Result<Self> {
        let l = weights.len();
        if dim == 0 || l == 0 {
            return Err(Error::config("kernel density needs dim >= 1 and at least one component"));
        }
        if centers.len() != l * dim || bandwidths.len() != l {
            return Err(Error::config(format!(
                "kernel density: {} center coords, {} weights, {} bandwidths for dim {dim}",
                centers.len(),
                l,
                bandwidths.len()
            )));
        }
        if let Some(b) = bandwidths.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::config(format!("bandwidths must be positive and finite, got {b}")));
        }
        if centers.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::config("kernel density parameters must be finite"));
        }
        Ok(Self {
            dim,
            centers,
            weights,
            bandwidths,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn center(&self, l: usize) -> &[f64] {
        &self.centers[l * self.dim..(l + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bandwidths)
    }

    pub fn with_weights_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|a| *a *= factor);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|l| self.weights[l] * phi(x, self.center(l), self.bandwidths[l]))
            .sum()
    }

    /// `∫ φ(x | c, λ) dx = (λ √π)^d`.
    pub fn component_mass(&self, l: usize) -> f64 {
        (self.bandwidths[l] * PI.sqrt()).powi(self.dim as i32)
    }

    /// Closed-form integral `Σ α^l (λ^l √π)^d`.
    pub fn mass(&self) -> f64 {
        (0..self.len()).map(|l| self.weights[l] * self.component_mass(l)).sum()
    }

    pub fn positive_mass(&self) -> f64 {
        (0..self.len())
            .map(|l| self.weights[l].max(0.0) * self.component_mass(l))
            .sum()
    }

    /// `|negative mass| / |total absolute mass|`.
    pub fn negative_mass_fraction(&self) -> f64 {
        let (mut neg, mut abs) = (0.0, 0.0);
        for l in 0..self.len() {
            let m = self.weights[l] * self.component_mass(l);
            abs += m.abs();
            if m < 0.0 {
                neg -= m;
            }
        }
        if abs > 0.0 {
            neg / abs
        } else {
            0.0
        }
    }

    /// Mean of the mixture with signed weights, normalized by `mass()`.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let total = self.mass();
        if !(total.abs() > 0.0) {
            return None;
        }
        let mut mean = vec![0.0; self.dim];
        for l in 0..self.len() {
            let w = self.weights[l] * self.component_mass(l);
            for (m, c) in mean.iter_mut().zip(self.center(l)) {
                *m += w * c;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        Some(mean)
    }

    /// Per-dimension variance of the normalized mixture (components have
    /// variance `λ²/2`).
    pub fn variance(&self) -> Option<Vec<f64>> {
        let total = self.mass();
        let mean = self.mean()?;
        let mut var = vec![0.0; self.dim];
        for l in 0..self.len() {
            let w = self.weights[l] * self.component_mass(l);
            let s2 = 0.5 * self.bandwidths[l] * self.bandwidths[l];
            for ((v, c), m) in var.iter_mut().zip(self.center(l)).zip(&mean) {
                *v += w * (s2 + (c - m) * (c - m));
            }
        }
        var.iter_mut().for_each(|v| *v /= total);
        Some(var)
    }

    /// Draws from the positive part of the mixture. Component `l` is chosen with
    /// probability ∝ `max(α^l, 0)(λ^l √π)^d`, then `N(X̂^l, (λ^l)²/2 · I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let total = self.positive_mass();
        if !(total > 0.0) {
            return Err(Error::EmptyDensity);
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for l in 0..self.len() {
            if self.weights[l] <= 0.0 {
                continue;
            }
            acc += self.weights[l] * self.component_mass(l);
            pick = Some(l);
            if u < acc {
                break;
            }
        }
        let l = pick.expect("positive mass implies a positive component");
        let sd = self.bandwidths[l] / std::f64::consts::SQRT_2;
        Ok(self
            .center(l)
            .iter()
            .map(|c| c + sd * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// Flat record text: a header line, then one line per component holding
    /// the center coordinates, α and λ, comma-separated.
    pub fn to_records(&self) -> String {
        let mut out = format!("# kernel-density dim={} components={}\n", self.dim, self.len());
        for l in 0..self.len() {
            for c in self.center(l) {
                write!(out, "{c},").expect("string write");
            }
            writeln!(out, "{},{}", self.weights[l], self.bandwidths[l]).expect("string write");
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let mut dim = None;
        let (mut centers, mut weights, mut bandwidths) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for tok in header.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("dim=") {
                        dim = Some(v.parse::<usize>().map_err(|e| Error::Parse {
                            line: line_no,
                            message: format!("bad dim: {e}"),
                        })?);
                    }
                }
                continue;
            }
            let fields = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let d = *dim.get_or_insert(fields.len().saturating_sub(2));
            if fields.len() != d + 2 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", d + 2, fields.len()),
                });
            }
            centers.extend_from_slice(&fields[..d]);
            weights.push(fields[d]);
            bandwidths.push(fields[d + 1]);
        }
        Self::new(dim.unwrap_or(0), centers, weights, bandwidths)
    }
}

impl DensityFn for KernelDensity {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

/// Constants of the MSE-optimal Parzen bandwidth
/// `h = [B d / (2 m n M² A)]^{1/(2m+d)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthSpec {
    /// Kernel order (2 for the Gaussian kernel).
    pub order: u32,
    pub dim: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// Sobolev bound `‖f^{(m)}‖_p ≤ M`.
    pub sobolev_bound: f64,
    /// `sup_x f(x) ≤ Λ`.
    pub sup_bound: f64,
}

impl BandwidthSpec {
    /// Gaussian kernel constants with `p = q = 2`:
    /// `A = (∫|K(y)| |y|^2 dy)² / 3` where `|y|` is the L1 norm, and
    /// `B = Λ ∫ K² = Λ (4π)^{−d/2}`.
    pub fn gaussian(dim: usize, n: usize, sup_bound: f64, sobolev_bound: f64) -> Self {
        let d = dim as f64;
        let second_moment = d + d * (d - 1.0) * 2.0 / PI;
        Self {
            order: 2,
            dim,
            n,
            a: second_moment * second_moment / 3.0,
            b: sup_bound * (4.0 * PI).powf(-0.5 * d),
            sobolev_bound,
            sup_bound,
        }
    }

    /// Plug-in defaults: `Λ̂` is the largest observed density value and `M = 1`.
    /// A heuristic; the true constants are not observable.
    pub fn plug_in(dim: usize, n: usize, max_observed_density: f64) -> Self {
        Self::gaussian(dim, n, max_observed_density, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.a, self.b, self.sobolev_bound, self.sup_bound]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.order == 0 || self.dim == 0 || self.n == 0 {
            return Err(Error::config("bandwidth constants must all be positive"));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        let (m, d, n) = (self.order as f64, self.dim as f64, self.n as f64);
        let m2 = self.sobolev_bound * self.sobolev_bound;
        (self.b * d / (2.0 * m * n * m2 * self.a)).powf(1.0 / (2.0 * m + d))
    }

    /// `2m / (2m + d)`: the MSE decays like `n^{−rate}`.
    pub fn rate_exponent(&self) -> f64 {
        let (m, d) = (self.order as f64, self.dim as f64);
        2.0 * m / (2.0 * m + d)
    }

    /// Leading-order MSE bound `D n^{−2m/(2m+d)}`.
    pub fn mse_bound(&self) -> f64 {
        let (m, d, n) = (self.order as f64, self.dim as f64, self.n as f64);
        let e = 2.0 * m + d;
        let theta = e / ((2.0 * m).powf(2.0 * m / e) * d.powf(d / e));
        let m2a = self.sobolev_bound * self.sobolev_bound * self.a;
        theta * m2a.powf(d / e) * self.b.powf(2.0 * m / e) * n.powf(-self.rate_exponent())
    }
}

/// Parzen–Rosenblatt estimate `(1/(n h^d)) Σ K((x − x_i)/h)` with the standard
/// normal kernel. `samples` is row-major `n × dim`; `h` comes from `spec`.
pub fn parzen_estimate(samples: &[f64], spec: &BandwidthSpec, x: &[f64]) -> Result<f64> {
    spec.validate()?;
    let d = spec.dim;
    if x.len() != d || samples.is_empty() || samples.len() % d != 0 {
        return Err(Error::config("parzen_estimate: sample/query dimensions disagree"));
    }
    let h = spec.bandwidth();
    let n = samples.len() / d;
    let norm = (2.0 * PI).powf(-0.5 * d as f64);
    let inv_h2 = 1.0 / (h * h);
    let sum: f64 = samples
        .chunks_exact(d)
        .map(|s| (-0.5 * sq_dist(x, s) * inv_h2).exp())
        .sum();
    Ok(norm * sum / (n as f64 * h.powi(d as i32)))
}

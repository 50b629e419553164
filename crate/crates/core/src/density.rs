//! Mixture of product histograms on `[0,1]^N`:
//! `p(x) = Σ_s w_s Π_n p_{n,s}(x_n)`, each `p_{n,s}` piecewise constant on
//! equal-width bins with unit mass.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{BinSink, BinSource, FieldSink, FieldSource};
use crate::model::ModelError;
use crate::scalar::Scalar;
use crate::spline::SplineSpace;

pub const DENSITY_MAGIC: &[u8; 4] = b"TPDF";
pub const DENSITY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("number of components must be at least 1")]
    NoComponents,
    #[error("{components} components requested for {points} points")]
    TooManyComponents { components: usize, points: usize },
    #[error("bin count must be positive in every dimension")]
    NoBins,
    #[error("point {index} is outside [0, 1]^{dim} or has the wrong length")]
    BadPoint { index: usize, dim: usize },
    #[error("invalid density: {0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    weights: Vec<f64>,
    /// `bins[n]` is the bin count of dimension `n`.
    bins: Vec<usize>,
    /// `values[n][s][b]`: height of bin `b` of `p_{n,s}`.
    values: Vec<Vec<Vec<f64>>>,
}

#[inline]
fn bin_index(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

impl DensityModel {
    /// Validates weights on the simplex and unit-mass, nonnegative bins.
    pub fn new(weights: Vec<f64>, values: Vec<Vec<Vec<f64>>>) -> Result<Self, DensityError> {
        let s = weights.len();
        if s == 0 {
            return Err(DensityError::NoComponents);
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DensityError::Invalid("weights must be nonnegative and sum to 1".into()));
        }
        if values.is_empty() {
            return Err(DensityError::Invalid("density needs at least one dimension".into()));
        }
        let mut bins = Vec::with_capacity(values.len());
        for (n, per_dim) in values.iter().enumerate() {
            if per_dim.len() != s {
                return Err(DensityError::Invalid(format!("dimension {n} has {} components, expected {s}", per_dim.len())));
            }
            let k = per_dim[0].len();
            if k == 0 {
                return Err(DensityError::NoBins);
            }
            for (c, h) in per_dim.iter().enumerate() {
                if h.len() != k {
                    return Err(DensityError::Invalid(format!("dimension {n}: ragged bin arrays")));
                }
                let mass = h.iter().sum::<f64>() / k as f64;
                if h.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (mass - 1.0).abs() > 1e-9 {
                    return Err(DensityError::Invalid(format!(
                        "p[{n}][{c}] must be nonnegative with unit mass, mass is {mass}"
                    )));
                }
            }
            bins.push(k);
        }
        Ok(DensityModel { weights, bins, values })
    }

    /// The uniform density on `[0,1]^dim` (one component, one bin).
    pub fn uniform(dim: usize) -> Self {
        DensityModel {
            weights: vec![1.0],
            bins: vec![1; dim],
            values: vec![vec![vec![1.0]]; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bins(&self, n: usize) -> usize {
        self.bins[n]
    }

    /// Bin heights of `p_{n,s}`.
    pub fn marginal(&self, n: usize, s: usize) -> &[f64] {
        &self.values[n][s]
    }

    /// `p_{n,s}(t)`.
    pub fn marginal_value(&self, n: usize, s: usize, t: f64) -> f64 {
        self.values[n][s][bin_index(t, self.bins[n])]
    }

    /// `Σ_s w_s Π_n p_{n,s}(x_n)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_partial(x, &vec![true; self.dim()])
    }

    /// Density of the observed coordinates only (`observed[n] == true`),
    /// the others integrated out.
    pub fn eval_partial(&self, x: &[f64], observed: &[bool]) -> f64 {
        let mut total = 0.0;
        for (s, &w) in self.weights.iter().enumerate() {
            let mut prod = w;
            for n in 0..self.dim() {
                if observed[n] {
                    prod *= self.marginal_value(n, s, x[n]);
                }
            }
            total += prod;
        }
        total
    }

    pub fn log_likelihood<P: AsRef<[f64]> + Sync>(&self, points: &[P]) -> f64 {
        let logs: Vec<f64> = points.par_iter().map(|x| self.eval(x.as_ref()).ln()).collect();
        logs.into_iter().sum()
    }

    /// `⟨B_k, p_{n,s}⟩` for every basis function of `space`.
    pub fn cross_gram<T: Scalar>(&self, space: &SplineSpace<T>, n: usize, s: usize) -> Vec<T> {
        let h: Vec<T> = self.values[n][s].iter().map(|&v| T::of(v)).collect();
        space.project_piecewise_constant(&h)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut sink = BinSink::default();
        sink.0.extend_from_slice(DENSITY_MAGIC);
        sink.u32(DENSITY_VERSION);
        sink.u32(self.dim() as u32);
        sink.u32(self.num_components() as u32);
        for &w in &self.weights {
            sink.f64(w);
        }
        for n in 0..self.dim() {
            sink.u32(self.bins[n] as u32);
            for h in &self.values[n] {
                for &v in h {
                    sink.f64(v);
                }
            }
        }
        sink.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DensityError> {
        if !bytes.starts_with(DENSITY_MAGIC) {
            return Err(ModelError::BadMagic { expected: "TPDF density" }.into());
        }
        let mut src = BinSource { bytes, pos: 4 };
        let version = src.u32("version")?;
        if version != DENSITY_VERSION {
            return Err(ModelError::UnsupportedVersion {
                found: version,
                expected: DENSITY_VERSION,
            }
            .into());
        }
        let dim = src.u32("dimension")? as usize;
        let s = src.u32("component count")? as usize;
        let weights = (0..s).map(|_| src.f64("weight")).collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let k = src.u32("bin count")? as usize;
            let mut per_dim = Vec::with_capacity(s);
            for _ in 0..s {
                per_dim.push((0..k).map(|_| src.f64("bin value")).collect::<Result<Vec<_>, _>>()?);
            }
            values.push(per_dim);
        }
        src.finish()?;
        Self::new(weights, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), DensityError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DensityError> {
        Self::decode(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityFitConfig {
    pub components: usize,
    /// Bins in every dimension.
    pub bins: usize,
    pub em_iters: usize,
    /// Pseudo-count added to every bin after EM.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for DensityFitConfig {
    fn default() -> Self {
        DensityFitConfig {
            components: 1,
            bins: 100,
            em_iters: 100,
            smoothing: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityFit {
    pub model: DensityModel,
    /// Log-likelihood of the unsmoothed estimate before the first EM
    /// iteration and after each one.
    pub log_likelihood: Vec<f64>,
}

/// Weighted histograms and mixture weights from responsibilities
/// (`resp[i * S + s]`). A component with no mass keeps its previous
/// histograms.
fn m_step(
    points: &[&[f64]],
    resp: &[f64],
    s_count: usize,
    bins: usize,
    prev: Option<&[Vec<Vec<f64>>]>,
    smoothing: f64,
) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let dim = points[0].len();
    let m = points.len();
    let mut mass = vec![0.0; s_count];
    let mut counts = vec![vec![vec![0.0; bins]; s_count]; dim];
    for (i, x) in points.iter().enumerate() {
        for s in 0..s_count {
            let r = resp[i * s_count + s];
            if r == 0.0 {
                continue;
            }
            mass[s] += r;
            for n in 0..dim {
                counts[n][s][bin_index(x[n], bins)] += r;
            }
        }
    }
    let weights: Vec<f64> = mass.iter().map(|&v| v / m as f64).collect();
    let k = bins as f64;
    let mut values = counts;
    for n in 0..dim {
        for s in 0..s_count {
            let denom = mass[s] + smoothing * k;
            if denom > 0.0 {
                for v in values[n][s].iter_mut() {
                    *v = k * (*v + smoothing) / denom;
                }
            } else {
                values[n][s] = match prev {
                    Some(p) => p[n][s].clone(),
                    None => vec![1.0; bins],
                };
            }
        }
    }
    (weights, values)
}

/// Log of each component's weighted density at `x`.
fn component_logs(weights: &[f64], values: &[Vec<Vec<f64>>], bins: usize, x: &[f64], out: &mut [f64]) {
    for (s, &w) in weights.iter().enumerate() {
        let mut l = w.ln();
        for (n, &xn) in x.iter().enumerate() {
            l += values[n][s][bin_index(xn, bins)].ln();
        }
        out[s] = l;
    }
}

/// Log-likelihood and, if requested, responsibilities.
fn e_step(points: &[&[f64]], weights: &[f64], values: &[Vec<Vec<f64>>], bins: usize, resp: Option<&mut [f64]>) -> f64 {
    let s_count = weights.len();
    let rows: Vec<(f64, Vec<f64>)> = points
        .par_iter()
        .map(|x| {
            let mut logs = vec![0.0; s_count];
            component_logs(weights, values, bins, x, &mut logs);
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|&l| (l - top).exp()).sum();
            let lse = top + sum.ln();
            let r = logs.iter().map(|&l| (l - lse).exp()).collect();
            (lse, r)
        })
        .collect();
    let mut ll = 0.0;
    let mut out = resp;
    for (i, (lse, r)) in rows.into_iter().enumerate() {
        ll += lse;
        if let Some(o) = out.as_deref_mut() {
            o[i * s_count..(i + 1) * s_count].copy_from_slice(&r);
        }
    }
    ll
}

/// Hard initial assignment to `S` centers seeded k-means++ style.
fn seed_responsibilities(points: &[&[f64]], s_count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = points.len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers: Vec<usize> = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = points.iter().map(|x| dist2(x, points[centers[0]])).collect();
    while centers.len() < s_count {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // All remaining points coincide with a center.
            (0..m).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(next);
        for (i, x) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(x, points[next]));
        }
    }
    let mut resp = vec![0.0; m * s_count];
    for (i, x) in points.iter().enumerate() {
        let best = (0..s_count)
            .min_by(|&a, &b| dist2(x, points[centers[a]]).total_cmp(&dist2(x, points[centers[b]])))
            .expect("at least one center");
        resp[i * s_count + best] = 1.0;
    }
    resp
}

/// Maximum-likelihood EM for the histogram mixture, followed by additive
/// smoothing of every bin with `cfg.smoothing` pseudo-counts.
///
/// EM itself runs without smoothing, so the recorded log-likelihood is
/// nondecreasing.
pub fn fit_density<P: AsRef<[f64]>>(points: &[P], cfg: &DensityFitConfig) -> Result<DensityFit, DensityError> {
    let s_count = cfg.components;
    if s_count == 0 {
        return Err(DensityError::NoComponents);
    }
    if cfg.bins == 0 {
        return Err(DensityError::NoBins);
    }
    if s_count > points.len() {
        return Err(DensityError::TooManyComponents {
            components: s_count,
            points: points.len(),
        });
    }
    if !(cfg.smoothing >= 0.0) {
        return Err(DensityError::Invalid(format!("smoothing must be >= 0, got {}", cfg.smoothing)));
    }
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let dim = pts[0].len();
    if dim == 0 {
        return Err(DensityError::Invalid("points have no coordinates".into()));
    }
    for (index, x) in pts.iter().enumerate() {
        if x.len() != dim || x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(DensityError::BadPoint { index, dim });
        }
    }
    let bins = cfg.bins;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut resp = seed_responsibilities(&pts, s_count, &mut rng);
    let (mut weights, mut values) = m_step(&pts, &resp, s_count, bins, None, 0.0);
    let mut trace = Vec::with_capacity(cfg.em_iters + 1);
    for _ in 0..cfg.em_iters {
        trace.push(e_step(&pts, &weights, &values, bins, Some(&mut resp)));
        let (w, v) = m_step(&pts, &resp, s_count, bins, Some(&values), 0.0);
        weights = w;
        values = v;
    }
    let final_ll = e_step(&pts, &weights, &values, bins, Some(&mut resp));
    trace.push(final_ll);
    if cfg.smoothing > 0.0 {
        let (w, v) = m_step(&pts, &resp, s_count, bins, Some(&values), cfg.smoothing);
        weights = w;
        values = v;
    }
    Ok(DensityFit {
        model: DensityModel {
            weights,
            bins: vec![bins; dim],
            values,
        },
        log_likelihood: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin_is_uniform() {
        let pts = vec![vec![0.1, 0.9], vec![0.3, 0.2]];
        let cfg = DensityFitConfig {
            components: 1,
            bins: 1,
            em_iters: 5,
            ..Default::default()
        };
        let fit = fit_density(&pts, &cfg).unwrap();
        assert_eq!(fit.model.eval(&[0.5, 0.5]), 1.0);
        assert!(fit.log_likelihood.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn raw_histogram_before_smoothing() {
        let pts = vec![vec![0.1], vec![0.2], vec![0.45]];
        let cfg = DensityFitConfig {
            components: 1,
            bins: 2,
            em_iters: 3,
            smoothing: 0.0,
            seed: 1,
        };
        let fit = fit_density(&pts, &cfg).unwrap();
        assert_eq!(fit.model.marginal(0, 0), &[2.0, 0.0]);
        let smoothed = fit_density(&pts, &DensityFitConfig { smoothing: 1.0, ..cfg }).unwrap();
        let h = smoothed.model.marginal(0, 0);
        assert!((h[0] - 1.6).abs() < 1e-15 && (h[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_too_many_components() {
        let pts = vec![vec![0.5]];
        let cfg = DensityFitConfig {
            components: 2,
            ..Default::default()
        };
        assert!(matches!(fit_density(&pts, &cfg), Err(DensityError::TooManyComponents { .. })));
    }

    #[test]
    fn file_round_trip() {
        let d = DensityModel::new(
            vec![0.25, 0.75],
            vec![vec![vec![1.5, 0.5], vec![0.2, 1.8]], vec![vec![1.0, 1.0, 1.0], vec![3.0, 0.0, 0.0]]],
        )
        .unwrap();
        let back = DensityModel::decode(&d.encode()).unwrap();
        assert_eq!(back, d);
        assert!(matches!(DensityModel::decode(b"TPBS"), Err(DensityError::Format(_))));
    }

    #[test]
    fn product_of_bin_values() {
        let d = DensityModel::new(vec![1.0], vec![vec![vec![1.5, 0.5]], vec![vec![0.5, 1.5]]]).unwrap();
        assert_eq!(d.eval(&[0.2, 0.7]), 1.5 * 1.5);
        assert_eq!(d.eval(&[0.7, 0.2]), 0.5 * 0.5);
    }

    #[test]
    fn rejects_non_unit_mass() {
        assert!(DensityModel::new(vec![1.0], vec![vec![vec![1.0, 2.0]]]).is_err());
        assert!(DensityModel::new(vec![0.5, 0.4], vec![vec![vec![1.0], vec![1.0]]]).is_err());
    }
}

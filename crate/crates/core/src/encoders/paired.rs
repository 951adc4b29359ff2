use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::{Domain, FeatureSet, Provenance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim` covariances.
    pub covariances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn single(mean: Vec<f64>, cov: Vec<f64>) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![cov],
        }
    }

    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Self {
        let d = means.first().map_or(0, Vec::len);
        let cov: Vec<f64> = (0..d * d)
            .map(|i| if i / d == i % d { std * std } else { 0.0 })
            .collect();
        Self {
            covariances: vec![cov; means.len()],
            weights,
            means,
        }
    }

    fn validate(&self, dim: usize) -> Result<Vec<DMatrix<f64>>> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::invalid(
                "mixture needs matching, non-empty weights/means/covariances",
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be non-negative and sum to 1"));
        }
        self.means
            .iter()
            .zip(&self.covariances)
            .map(|(m, c)| {
                if m.len() != dim || c.len() != dim * dim {
                    return Err(Error::invalid(format!("mixture component is not {dim}-dimensional")));
                }
                let cov = DMatrix::from_row_slice(dim, dim, c);
                if (&cov - cov.transpose()).abs().max() > 1e-9 {
                    return Err(Error::invalid("mixture covariance is not symmetric"));
                }
                Cholesky::new(cov)
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::invalid("mixture covariance is not positive definite"))
            })
            .collect()
    }

    fn component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Row `i` of both sides comes from one shared draw.
    Index,
    /// Sides drawn independently; each clip row is matched greedily to its
    /// nearest unused vgg row.
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDistributionSpec {
    pub clip_side: GaussianMixture,
    pub vgg_side: GaussianMixture,
    pub pairing: Pairing,
    pub dim: usize,
    pub seed: u64,
    /// Correlation between the two sides' standard-normal latents under index
    /// pairing (1 = fully shared).
    pub coupling: f64,
}

/// Draws `m` paired rows. Under index pairing both sides share one uniform
/// (choosing each side's component by inverse CDF) and a latent `z`, so
/// identical sides give identical rows.
pub fn sample_paired(spec: &PairedDistributionSpec, m: usize) -> Result<(FeatureSet, FeatureSet)> {
    if m == 0 {
        return Err(Error::invalid("sample_paired needs m >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.coupling) {
        return Err(Error::invalid("coupling must lie in [0, 1]"));
    }
    let d = spec.dim;
    let lc = spec.clip_side.validate(d)?;
    let lv = spec.vgg_side.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let draw = |mix: &GaussianMixture, l: &[DMatrix<f64>], u: f64, z: &DVector<f64>| -> Vec<f32> {
        let k = mix.component(u);
        let x = DVector::from_column_slice(&mix.means[k]) + &l[k] * z;
        x.iter().map(|&v| v as f32).collect()
    };
    let rho = spec.coupling;
    let mut clip = Vec::with_capacity(m * d);
    let mut vgg_rows: Vec<Vec<f32>> = Vec::with_capacity(m);
    for _ in 0..m {
        let u: f64 = rng.random();
        let z = normal(&mut rng);
        clip.extend(draw(&spec.clip_side, &lc, u, &z));
        match spec.pairing {
            Pairing::Index => {
                let zv = if rho < 1.0 {
                    &z * rho + normal(&mut rng) * (1.0 - rho * rho).sqrt()
                } else {
                    z
                };
                vgg_rows.push(draw(&spec.vgg_side, &lv, u, &zv));
            }
            Pairing::Nearest => {
                let u2: f64 = rng.random();
                let z2 = normal(&mut rng);
                vgg_rows.push(draw(&spec.vgg_side, &lv, u2, &z2));
            }
        }
    }
    if spec.pairing == Pairing::Nearest {
        let mut used = vec![false; m];
        let mut ordered = Vec::with_capacity(m);
        for i in 0..m {
            let c = &clip[i * d..(i + 1) * d];
            let best = (0..m)
                .filter(|&j| !used[j])
                .min_by(|&a, &b| {
                    sq_dist(c, &vgg_rows[a])
                        .total_cmp(&sq_dist(c, &vgg_rows[b]))
                        .then(a.cmp(&b))
                })
                .expect("m rows available");
            used[best] = true;
            ordered.push(std::mem::take(&mut vgg_rows[best]));
        }
        vgg_rows = ordered;
    }
    Ok((
        FeatureSet::new(Domain::ClipLike, d, clip, Provenance::SyntheticPair)?,
        FeatureSet::new(Domain::VggLike, d, vgg_rows.concat(), Provenance::SyntheticPair)?,
    ))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

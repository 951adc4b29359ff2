//! Evaluation: cosine SIM, Frechet distance between Gaussian fits, and
//! depth-warp masked RMSE for multi-view consistency.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::features::FeatureSet;
use crate::flow::FlowRoundReport;
use crate::image::Image;
use crate::render::{render, warp_map, RenderOutput, WarpMap};
use crate::scene::{view_pairs, Camera, GaussianScene, PairRange};
use crate::{Error, Result};

/// Mean row-wise cosine similarity of two row-paired sets; zero rows count as 0.
pub fn cosine_sim(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.len() != b.len() || a.dim != b.dim {
        return Err(Error::invalid(format!(
            "cosine_sim needs paired sets, got {}x{} and {}x{}",
            a.len(),
            a.dim,
            b.len(),
            b.dim
        )));
    }
    let total: f64 = a.rows().zip(b.rows()).map(|(x, y)| cosine(x, y)).sum();
    Ok(total / a.len() as f64)
}

pub fn cosine(x: &[f32], y: &[f32]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &q) in x.iter().zip(y) {
        let (p, q) = (p as f64, q as f64);
        xy += p * q;
        xx += p * p;
        yy += q * q;
    }
    if xx == 0.0 || yy == 0.0 {
        0.0
    } else {
        xy / (xx.sqrt() * yy.sqrt())
    }
}

/// Mean and unbiased covariance of a feature set, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianFit {
    pub fn fit(set: &FeatureSet) -> Self {
        let (m, d) = (set.len(), set.dim);
        let mut mean = DVector::zeros(d);
        for r in set.rows() {
            for j in 0..d {
                mean[j] += r[j] as f64;
            }
        }
        mean /= m as f64;
        let mut cov = DMatrix::zeros(d, d);
        if m > 1 {
            for r in set.rows() {
                let c = DVector::from_iterator(d, r.iter().map(|&v| v as f64)) - &mean;
                cov.ger(1.0, &c, &c, 1.0);
            }
            cov /= (m - 1) as f64;
        }
        Self { mean, covariance: cov }
    }
}

const NEG_EIG_TOL: f64 = 1e-8;

/// PSD square root by eigendecomposition; eigenvalues slightly below zero are
/// floored, clearly negative ones are an error.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -NEG_EIG_TOL * scale {
            return Err(Error::numeric(format!(
                "matrix is not positive semi-definite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Frechet distance between Gaussian fits of two sets.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::invalid(format!(
            "frechet_distance dims differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    frechet_of_fits(&GaussianFit::fit(a), &GaussianFit::fit(b))
}

pub fn frechet_of_fits(fa: &GaussianFit, fb: &GaussianFit) -> Result<f64> {
    let mean_term = (&fa.mean - &fb.mean).norm_squared();
    let sa = psd_sqrt(&fa.covariance)?;
    let inner = &sa * &fb.covariance * &sa;
    let cross = psd_sqrt(&inner)?.trace();
    let d = mean_term + fa.covariance.trace() + fb.covariance.trace() - 2.0 * cross;
    // Round-off can leave a tiny negative on identical inputs.
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub range: PairRange,
    pub masked_rmse: f64,
    pub valid_pixel_fraction: f64,
}

/// RMSE over valid pixels between `img_a(p)` and `img_b` bilinearly sampled at
/// `warp(p)`. Squared differences are averaged over pixels and channels.
pub fn masked_rmse(img_a: &Image, img_b: &Image, warp: &WarpMap, range: PairRange) -> Result<ConsistencyReport> {
    let (sse, count) = masked_sse(img_a, img_b, warp)?;
    if count == 0 {
        return Err(Error::invalid("masked RMSE has no valid pixels"));
    }
    Ok(ConsistencyReport {
        range,
        masked_rmse: (sse / (count * img_a.channels) as f64).sqrt(),
        valid_pixel_fraction: count as f64 / img_a.pixels() as f64,
    })
}

fn masked_sse(img_a: &Image, img_b: &Image, warp: &WarpMap) -> Result<(f64, usize)> {
    if img_a.channels != img_b.channels || warp.width != img_a.width || warp.height != img_a.height {
        return Err(Error::invalid("masked RMSE image/warp sizes disagree"));
    }
    let mut sample = vec![0.0f32; img_b.channels];
    let (mut sse, mut count) = (0.0f64, 0usize);
    for p in 0..img_a.pixels() {
        if !warp.valid[p] {
            continue;
        }
        let [u, v] = warp.coords[p];
        img_b.sample_bilinear(u, v, &mut sample);
        for (c, &s) in sample.iter().enumerate() {
            sse += ((img_a.data[c * img_a.pixels() + p] - s) as f64).powi(2);
        }
        count += 1;
    }
    Ok((sse, count))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConsistency {
    pub src: usize,
    pub dst: usize,
    pub report: ConsistencyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySummary {
    pub pairs: Vec<PairConsistency>,
    /// Pixel-weighted RMSE over all short-range pairs.
    pub short_rmse: f64,
    pub long_rmse: f64,
}

impl ConsistencySummary {
    pub fn mean(&self, range: PairRange) -> f64 {
        match range {
            PairRange::Short => self.short_rmse,
            PairRange::Long => self.long_rmse,
        }
    }
}

/// Renders every camera and scores short- and long-range pairs. Pairs with no
/// valid pixel are reported with rmse 0 and fraction 0 and carry no weight in
/// the aggregates.
pub fn eval_consistency<F>(scene: &GaussianScene, cams: &[Camera], render_fn: F) -> Result<ConsistencySummary>
where
    F: Fn(&GaussianScene, &Camera) -> Result<RenderOutput>,
{
    if cams.len() < 4 {
        return Err(Error::invalid(format!(
            "consistency needs at least 4 cameras, got {}",
            cams.len()
        )));
    }
    let renders = cams.iter().map(|c| render_fn(scene, c)).collect::<Result<Vec<_>>>()?;
    let images: Vec<Image> = renders.iter().map(RenderOutput::rgb_image).collect();
    let mut pairs = Vec::new();
    let mut acc = [(0.0f64, 0usize); 2];
    for (i, j, range) in view_pairs(cams.len()) {
        let warp = warp_map(&cams[i], &cams[j], &renders[i].depth, Some(&renders[j].depth));
        let (sse, count) = masked_sse(&images[i], &images[j], &warp)?;
        let slot = &mut acc[(range == PairRange::Long) as usize];
        slot.0 += sse;
        slot.1 += count * 3;
        let report = ConsistencyReport {
            range,
            masked_rmse: if count > 0 {
                (sse / (count * 3) as f64).sqrt()
            } else {
                0.0
            },
            valid_pixel_fraction: count as f64 / images[i].pixels() as f64,
        };
        pairs.push(PairConsistency { src: i, dst: j, report });
    }
    let agg = |(sse, n): (f64, usize)| if n > 0 { (sse / n as f64).sqrt() } else { 0.0 };
    Ok(ConsistencySummary {
        pairs,
        short_rmse: agg(acc[0]),
        long_rmse: agg(acc[1]),
    })
}

/// [`eval_consistency`] with the standard renderer.
pub fn eval_consistency_default(scene: &GaussianScene, cams: &[Camera]) -> Result<ConsistencySummary> {
    eval_consistency(scene, cams, render)
}

/// `metric,range_or_round,value` rows.
pub fn metrics_csv(rows: &[(&str, String, f64)]) -> String {
    let mut out = String::from("metric,range_or_round,value\n");
    for (metric, key, value) in rows {
        out.push_str(&format!("{metric},{key},{value:.8}\n"));
    }
    out
}

/// SIM/FID before the first round and after every round.
pub fn alignment_rows(reports: &[FlowRoundReport]) -> Vec<(&'static str, String, f64)> {
    let mut rows = Vec::with_capacity(2 * reports.len() + 2);
    if let Some(first) = reports.first() {
        rows.push(("sim", "0".to_string(), first.sim_before));
        rows.push(("fid", "0".to_string(), first.fid_before));
    }
    for r in reports {
        rows.push(("sim", r.round.to_string(), r.sim_after));
        rows.push(("fid", r.round.to_string(), r.fid_after));
    }
    rows
}

/// Aggregate rows per range followed by one row per pair (`src-dst`).
pub fn consistency_rows(summary: &ConsistencySummary) -> Vec<(&'static str, String, f64)> {
    let mut rows = vec![
        ("masked_rmse", "short".to_string(), summary.short_rmse),
        ("masked_rmse", "long".to_string(), summary.long_rmse),
    ];
    for p in &summary.pairs {
        let key = format!("{}:{}-{}", p.report.range.name(), p.src, p.dst);
        rows.push(("pair_rmse", key.clone(), p.report.masked_rmse));
        rows.push(("pair_valid_fraction", key, p.report.valid_pixel_fraction));
    }
    rows
}

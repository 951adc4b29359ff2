use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{
    integrate_rows, integrate_set, train_mapping, train_velocity_seeded, FlowConfig, MappingConfig, MappingNet,
    VelocityField,
};
use crate::diff::checkpoint::{load_params, save_params};
use crate::diff::{Activation, DiffTensor};
use crate::features::{Domain, FeatureSet};
use crate::metrics::{cosine_sim, frechet_distance};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRoundReport {
    /// 1-based.
    pub round: usize,
    pub sim_before: f64,
    pub sim_after: f64,
    pub fid_before: f64,
    pub fid_after: f64,
    /// Mean Euclidean distance between a row's start and end point.
    pub displacement: f64,
    /// Regression loss of the last training step, in normalised units.
    pub final_loss: f32,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub aligned: FeatureSet,
    pub reports: Vec<FlowRoundReport>,
    pub fields: Vec<VelocityField>,
    pub losses: Vec<Vec<f32>>,
}

fn mean_displacement(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let total: f64 = a
        .rows()
        .zip(b.rows())
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&p, &q)| ((p - q) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Runs `cfg.rounds` rounds starting from `F_c(clip)`; round `k > 1` restarts
/// from the endpoints of round `k - 1`. Each round trains a fresh field.
pub fn run_subdivisive_flow(
    clip: &FeatureSet,
    vgg: &FeatureSet,
    mapping: &MappingNet,
    cfg: &FlowConfig,
) -> Result<FlowRun> {
    cfg.validate()?;
    if !mapping.is_trained() {
        return Err(Error::invalid("run_subdivisive_flow: mapping has not been trained"));
    }
    if mapping.style_dim() != vgg.dim {
        return Err(Error::invalid(format!(
            "mapping outputs {}-dim features but the style set is {}-dim",
            mapping.style_dim(),
            vgg.dim
        )));
    }
    let mut start = mapping.apply(clip)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut fields = Vec::with_capacity(cfg.rounds);
    let mut losses = Vec::with_capacity(cfg.rounds);
    for k in 0..cfg.rounds {
        let (field, loss) = train_velocity_seeded(&start, vgg, cfg, cfg.round_seed(k))?;
        let end = integrate_set(&field, &start, cfg.euler_steps)?;
        reports.push(FlowRoundReport {
            round: k + 1,
            sim_before: cosine_sim(&start, vgg)?,
            sim_after: cosine_sim(&end, vgg)?,
            fid_before: frechet_distance(&start, vgg)?,
            fid_after: frechet_distance(&end, vgg)?,
            displacement: mean_displacement(&start, &end),
            final_loss: loss.last().copied().unwrap_or(f32::NAN),
        });
        fields.push(field);
        losses.push(loss);
        start = end;
    }
    Ok(FlowRun {
        aligned: start,
        reports,
        fields,
        losses,
    })
}

pub fn rounds_csv(reports: &[FlowRoundReport]) -> String {
    let mut out = String::from("round,sim_before,sim_after,fid_before,fid_after,displacement\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{:.8},{:.8}",
            r.round, r.sim_before, r.sim_after, r.fid_before, r.fid_after, r.displacement
        );
    }
    out
}

pub fn parse_rounds_csv(text: &str) -> Result<Vec<FlowRoundReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("round,sim_before,sim_after,fid_before,fid_after,displacement") => {}
        _ => return Err(Error::invalid("rounds csv: unexpected header")),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::invalid(format!("rounds csv line {}: expected 6 columns", i + 2)));
            }
            let f = |j: usize| {
                cols[j]
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("rounds csv line {}: bad number '{}'", i + 2, cols[j])))
            };
            Ok(FlowRoundReport {
                round: cols[0]
                    .parse()
                    .map_err(|_| Error::invalid(format!("rounds csv line {}: bad round", i + 2)))?,
                sim_before: f(1)?,
                sim_after: f(2)?,
                fid_before: f(3)?,
                fid_after: f(4)?,
                displacement: f(5)?,
                final_loss: f32::NAN,
            })
        })
        .collect()
}

/// `F_c` plus one velocity field per round.
#[derive(Debug, Clone)]
pub struct AlignmentPipeline {
    pub mapping: MappingNet,
    pub mapping_cfg: MappingConfig,
    pub flow_cfg: FlowConfig,
    pub fields: Vec<VelocityField>,
    /// Regression loss at the end of the last round's training.
    pub flow_loss: f32,
}

const MANIFEST: &str = "manifest.txt";
const MAPPING_FILE: &str = "mapping.prms";

fn field_file(k: usize) -> String {
    format!("velocity_{}.prms", k + 1)
}

fn widths_str(w: &[usize]) -> String {
    w.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad width list '{s}'")))
        })
        .collect()
}

impl AlignmentPipeline {
    /// Fits `F_c` on the pairs, then runs the flow rounds from its outputs.
    pub fn train(
        clip: &FeatureSet,
        vgg: &FeatureSet,
        mapping_cfg: &MappingConfig,
        flow_cfg: &FlowConfig,
    ) -> Result<(Self, FlowRun)> {
        flow_cfg.validate()?;
        let (mapping, _) = train_mapping(clip, vgg, mapping_cfg)?;
        let run = run_subdivisive_flow(clip, vgg, &mapping, flow_cfg)?;
        let pipeline = Self {
            mapping,
            mapping_cfg: mapping_cfg.clone(),
            flow_cfg: flow_cfg.clone(),
            fields: run.fields.clone(),
            flow_loss: run.reports.last().map_or(0.0, |r| r.final_loss),
        };
        Ok((pipeline, run))
    }

    pub fn clip_dim(&self) -> usize {
        self.mapping.clip_dim()
    }

    pub fn style_dim(&self) -> usize {
        self.mapping.style_dim()
    }

    fn check_ready(&self) -> Result<()> {
        if !self.mapping.is_trained() || self.fields.is_empty() {
            return Err(Error::invalid("alignment pipeline has not been trained"));
        }
        Ok(())
    }

    pub fn align_rows(&self, x: &[f32], rows: usize) -> Result<Vec<f32>> {
        self.check_ready()?;
        if x.len() != rows * self.clip_dim() {
            return Err(Error::invalid(format!(
                "alignment expects {}-dim input, got {} values for {rows} rows",
                self.clip_dim(),
                x.len()
            )));
        }
        let mut cur = self.mapping.map_rows(x, rows);
        for field in &self.fields {
            cur = integrate_rows(field, &cur, self.flow_cfg.euler_steps)?;
        }
        Ok(cur)
    }

    /// Per-round SIM/FID of a held-out paired set pushed through the trained
    /// mapping and fields. `final_loss` is not measured here and is NaN.
    pub fn evaluate(&self, clip: &FeatureSet, vgg: &FeatureSet) -> Result<Vec<FlowRoundReport>> {
        self.check_ready()?;
        if clip.len() != vgg.len() || vgg.dim != self.style_dim() {
            return Err(Error::invalid(format!(
                "evaluation needs paired sets with {}-dim style features",
                self.style_dim()
            )));
        }
        let mut start = self.mapping.apply(clip)?;
        let mut reports = Vec::with_capacity(self.fields.len());
        for (k, field) in self.fields.iter().enumerate() {
            let end = integrate_set(field, &start, self.flow_cfg.euler_steps)?;
            reports.push(FlowRoundReport {
                round: k + 1,
                sim_before: cosine_sim(&start, vgg)?,
                sim_after: cosine_sim(&end, vgg)?,
                fid_before: frechet_distance(&start, vgg)?,
                fid_after: frechet_distance(&end, vgg)?,
                displacement: mean_displacement(&start, &end),
                final_loss: f32::NAN,
            });
            start = end;
        }
        Ok(reports)
    }

    pub fn align_set(&self, set: &FeatureSet) -> Result<FeatureSet> {
        let out = self.align_rows(&set.data, set.len())?;
        FeatureSet::new(Domain::ClipMapped, self.style_dim(), out, set.provenance)
    }

    pub fn manifest(&self) -> String {
        let m = &self.mapping_cfg;
        let f = &self.flow_cfg;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("clip_dim", self.clip_dim().to_string());
        kv("style_dim", self.style_dim().to_string());
        kv("euler_steps", f.euler_steps.to_string());
        kv("rounds", self.fields.len().to_string());
        kv("flow_train_steps", f.train_steps.to_string());
        kv("flow_batch", f.batch.to_string());
        kv("flow_learning_rate", f.learning_rate.to_string());
        kv("flow_seed", f.seed.to_string());
        kv("flow_hidden", widths_str(&f.hidden));
        kv("flow_activation", f.activation.name().to_string());
        kv("mapping_steps", m.steps.to_string());
        kv("mapping_batch", m.batch.to_string());
        kv("mapping_learning_rate", m.learning_rate.to_string());
        kv("mapping_seed", m.seed.to_string());
        kv("mapping_hidden", widths_str(&m.hidden));
        kv("mapping_activation", m.activation.name().to_string());
        kv("flow_loss", self.flow_loss.to_string());
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check_ready()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.manifest()).map_err(|e| Error::io(&path, e))?;
        let tensors = self.mapping.checkpoint_tensors();
        save_params(&dir.join(MAPPING_FILE), &tensors.iter().collect::<Vec<_>>())?;
        for (k, field) in self.fields.iter().enumerate() {
            let tensors = field.checkpoint_tensors();
            save_params(&dir.join(field_file(k)), &tensors.iter().collect::<Vec<_>>())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("{}: line {} is not key=value", path.display(), i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("{}: missing key '{k}'", path.display())))
        };
        fn num<T: std::str::FromStr>(path: &Path, k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("{}: bad value '{v}' for '{k}'", path.display())))
        }
        let act = |k: &str| -> Result<Activation> {
            get(k)?
                .parse()
                .map_err(|e: String| Error::invalid(format!("{}: {e}", path.display())))
        };
        let clip_dim: usize = num(&path, "clip_dim", get("clip_dim")?)?;
        let style_dim: usize = num(&path, "style_dim", get("style_dim")?)?;
        let rounds: usize = num(&path, "rounds", get("rounds")?)?;
        let flow_cfg = FlowConfig {
            euler_steps: num(&path, "euler_steps", get("euler_steps")?)?,
            rounds,
            train_steps: num(&path, "flow_train_steps", get("flow_train_steps")?)?,
            batch: num(&path, "flow_batch", get("flow_batch")?)?,
            learning_rate: num(&path, "flow_learning_rate", get("flow_learning_rate")?)?,
            seed: num(&path, "flow_seed", get("flow_seed")?)?,
            hidden: parse_widths(get("flow_hidden")?)?,
            activation: act("flow_activation")?,
        };
        let mapping_cfg = MappingConfig {
            hidden: parse_widths(get("mapping_hidden")?)?,
            activation: act("mapping_activation")?,
            steps: num(&path, "mapping_steps", get("mapping_steps")?)?,
            batch: num(&path, "mapping_batch", get("mapping_batch")?)?,
            learning_rate: num(&path, "mapping_learning_rate", get("mapping_learning_rate")?)?,
            seed: num(&path, "mapping_seed", get("mapping_seed")?)?,
        };
        let flow_loss: f32 = num(&path, "flow_loss", get("flow_loss")?)?;
        flow_cfg.validate()?;
        mapping_cfg.validate()?;
        let with_file = |e: Error, file: &str| match e {
            Error::Invalid(msg) => Error::invalid(format!("{}: {msg}", dir.join(file).display())),
            Error::Diff(d) => Error::invalid(format!("{}: {d}", dir.join(file).display())),
            other => other,
        };
        let tensors: Vec<DiffTensor> = load_params(&dir.join(MAPPING_FILE))?;
        let mapping = MappingNet::from_checkpoint(mapping_cfg.spec(clip_dim, style_dim), tensors)
            .map_err(|e| with_file(e, MAPPING_FILE))?;
        let mut fields = Vec::with_capacity(rounds);
        for k in 0..rounds {
            let file = field_file(k);
            let tensors = load_params(&dir.join(&file))?;
            let spec = flow_cfg.velocity_spec(style_dim, flow_cfg.round_seed(k));
            fields.push(VelocityField::from_checkpoint(spec, tensors).map_err(|e| with_file(e, &file))?);
        }
        Ok(Self {
            mapping,
            mapping_cfg,
            flow_cfg,
            fields,
            flow_loss,
        })
    }
}

/// Inference path for one CLIP-like (image or text) vector.
pub fn align_feature(x: &[f32], pipeline: &AlignmentPipeline) -> Result<Vec<f32>> {
    pipeline.align_rows(x, 1).map_err(|e| match e {
        Error::Invalid(msg) if x.len() != pipeline.clip_dim() => Error::invalid(format!("align_feature: {msg}")),
        other => other,
    })
}

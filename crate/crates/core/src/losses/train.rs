use std::fmt::Write as _;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bind_frozen, disc_loss_tape, frozen_taps, gen_signal_tape, observation_loss_tape, style_loss, style_loss_tape,
    DiscriminatorNet, Generator2d, LossWeights, TapStats,
};
use crate::diff::{finite_diff_check_sampled, AdamState, DiffError, Module, Objective, Real, SparseRows, Tape, Var};
use crate::encoders::{concept_params, PseudoClip, PseudoVgg, CONCEPT_SIZE};
use crate::flow::{align_feature, AlignmentPipeline};
use crate::image::Image;
use crate::render::{compositing_weights, render};
use crate::scene::{Camera, GaussianScene};
use crate::transfer::{adain, stats_from_vector, stylize_scene, DecoderNet, StyleStats};
use crate::{Error, Result};

/// What a stylization run is steered by: AdaIN statistics for the scene
/// embeddings and per-tap reference statistics for the style loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleGuide {
    pub adain: StyleStats,
    pub tap_refs: TapStats,
}

impl StyleGuide {
    /// Image style: its CLIP-like feature is aligned by the pipeline; the
    /// loss references are the image's own tap statistics.
    pub fn from_image(img: &Image, vgg: &PseudoVgg, clip: &PseudoClip, pipeline: &AlignmentPipeline) -> Result<Self> {
        let aligned = align_feature(&clip.embed(img)?, pipeline)?;
        Ok(Self {
            adain: stats_from_vector(&aligned)?,
            tap_refs: vgg.tap_stats(img)?,
        })
    }

    /// Text style: the aligned text feature drives AdaIN; loss references
    /// average the tap statistics of the tokens' concept textures.
    pub fn from_text(
        tokens: &[String],
        vgg: &PseudoVgg,
        clip: &PseudoClip,
        pipeline: &AlignmentPipeline,
    ) -> Result<Self> {
        let text = crate::encoders::encode_text(clip, tokens)?;
        let aligned = align_feature(&text.data, pipeline)?;
        let mut refs: Option<TapStats> = None;
        for t in tokens {
            let stats = vgg.tap_stats(&concept_params(t).render(CONCEPT_SIZE, CONCEPT_SIZE))?;
            refs = Some(match refs {
                None => stats,
                Some(mut acc) => {
                    for ((am, asd), (m, s)) in acc.iter_mut().zip(stats) {
                        am.iter_mut().zip(m).for_each(|(a, v)| *a += v);
                        asd.iter_mut().zip(s).for_each(|(a, v)| *a += v);
                    }
                    acc
                }
            });
        }
        let k = tokens.len() as f32;
        let mut tap_refs = refs.expect("encode_text rejects empty input");
        for (m, s) in &mut tap_refs {
            m.iter_mut().chain(s.iter_mut()).for_each(|v| *v /= k);
        }
        Ok(Self {
            adain: stats_from_vector(&aligned)?,
            tap_refs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizationConfig {
    pub steps: usize,
    pub learning_rate: f32,
    pub disc_learning_rate: f32,
    pub seed: u64,
}

impl Default for StylizationConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            learning_rate: 2e-3,
            disc_learning_rate: 2e-3,
            seed: 23,
        }
    }
}

/// Per-camera data fixed for the whole run.
pub struct StylizationView {
    pub map: Rc<SparseRows>,
    pub height: usize,
    pub width: usize,
    pub content_deep: Vec<f32>,
    pub prior: Option<(Image, Vec<Vec<f32>>)>,
}

impl StylizationView {
    pub fn new(
        scene: &GaussianScene,
        cam: &Camera,
        enc: &PseudoVgg,
        generator: Option<&Generator2d>,
        guide: &StyleGuide,
    ) -> Result<Self> {
        let content = render(scene, cam)?.rgb_image();
        let content_deep = enc.tap_features(&content)?.pop().expect("encoder has taps").data;
        let prior = match generator {
            Some(g) => {
                let img = g.generate_with_stats(&content, &guide.tap_refs[0], enc)?;
                let taps = enc.tap_features(&img)?.into_iter().map(|f| f.data).collect();
                Some((img, taps))
            }
            None => None,
        };
        Ok(Self {
            map: Rc::new(compositing_weights(scene, cam)?),
            height: cam.height,
            width: cam.width,
            content_deep,
            prior,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub content: f64,
    pub style: f64,
    pub obs: f64,
    pub flow: f64,
    pub sup_disc: f64,
    pub sup_gen: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Stylization {
    pub decoder: DecoderNet,
    pub discriminator: Option<DiscriminatorNet>,
    pub log: Vec<StepLog>,
}

pub fn stylization_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,content,style,obs,flow,sup_disc,sup_gen,total\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            r.step, r.content, r.style, r.obs, r.flow, r.sup_disc, r.sup_gen, r.total
        );
    }
    out
}

/// Decoded colors of the AdaIN-moved embeddings composited into one view,
/// as a `[3, H, W]` variable.
pub fn render_on_tape<T: Real>(
    tape: &mut Tape<T>,
    decoder: &DecoderNet,
    bound: &[Var],
    moved: Var,
    view: &StylizationView,
) -> Result<Var, DiffError> {
    let colors = decoder.forward(tape, bound, moved)?;
    let img = tape.sparse_apply(colors, view.map.clone())?;
    tape.reshape(img, &[3, view.height, view.width])
}

fn stats_const<T: Real>(tape: &mut Tape<T>, refs: &TapStats) -> Result<Vec<Var>, DiffError> {
    refs.iter()
        .map(|(m, s)| tape.constant(&[2, m.len()], m.iter().chain(s).copied().collect()))
        .collect()
}

/// Per-step terms recorded on a tape; `sup_gen` is absent when the
/// discriminator is disabled.
pub(crate) struct Terms {
    pub content: Var,
    pub style: Var,
    pub obs: Option<Var>,
    pub sup_gen: Option<Var>,
    pub image: Var,
}

/// Builds `L_stylized + w_sup * gen_signal` for one view. Works in any
/// precision so the gradient check can drive it.
#[allow(clippy::too_many_arguments)]
fn stylized_objective<T: Real>(
    tape: &mut Tape<T>,
    decoder: &DecoderNet,
    bound: &[Var],
    moved: &[f32],
    view: &StylizationView,
    enc: &PseudoVgg,
    guide: &StyleGuide,
    disc: Option<&DiscriminatorNet>,
    weights: &LossWeights,
    flow_loss: f64,
) -> Result<(Var, Terms), DiffError> {
    let d = decoder.embed_dim();
    let e = tape.constant(&[moved.len() / d, d], moved.to_vec())?;
    let img = render_on_tape(tape, decoder, bound, e, view)?;
    let taps = frozen_taps(tape, enc, img)?;
    let deep_shape = tape.shape(*taps.last().expect("encoder has taps")).to_vec();
    let deep = tape.constant(&deep_shape, view.content_deep.clone())?;
    let content = super::content_loss_tape(tape, &taps, deep)?;
    let refs = stats_const(tape, &guide.tap_refs)?;
    let style = style_loss_tape(tape, &taps, &refs)?;
    let mut total = content;
    let ws = tape.scale(style, weights.lambda_style)?;
    total = tape.add(total, ws)?;
    let flow = tape.constant(&[], vec![(weights.lambda_flow as f64 * flow_loss) as f32])?;
    total = tape.add(total, flow)?;

    let mut obs = None;
    if let Some((_, prior_taps)) = &view.prior {
        let targets = taps
            .iter()
            .zip(prior_taps)
            .map(|(&t, p)| {
                let shape = tape.shape(t).to_vec();
                tape.constant(&shape, p.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let o = observation_loss_tape(tape, &taps, &targets)?;
        if weights.lambda_obs > 0.0 {
            let wo = tape.scale(o, weights.lambda_obs)?;
            total = tape.add(total, wo)?;
        }
        obs = Some(o);
    }
    let mut sup_gen = None;
    if let Some(disc) = disc {
        let bound_d = bind_frozen(tape, disc)?;
        let probs = disc.forward(tape, &bound_d, img)?;
        let g = gen_signal_tape(tape, &probs)?;
        let wg = tape.scale(g, weights.suppression)?;
        total = tape.add(total, wg)?;
        sup_gen = Some(g);
    }
    Ok((
        total,
        Terms {
            content,
            style,
            obs,
            sup_gen,
            image: img,
        },
    ))
}

/// Everything a stylization run reads but never changes.
pub struct StylizationTask<'a> {
    pub scene: &'a GaussianScene,
    pub cams: &'a [Camera],
    pub encoder: &'a PseudoVgg,
    /// Needed for the observation and suppression terms.
    pub generator: Option<&'a Generator2d>,
    pub guide: &'a StyleGuide,
    /// Current flow regression loss; enters the total as a constant.
    pub flow_loss: f64,
}

impl StylizationTask<'_> {
    pub fn moved_embeddings(&self) -> Result<Vec<f32>> {
        if !self.scene.is_distilled() {
            return Err(Error::invalid("train_stylization: the scene has no trained embeddings"));
        }
        if self.guide.adain.dim() != self.scene.embed_dim {
            return Err(Error::invalid(format!(
                "style statistics have {} channels but the scene has D = {}",
                self.guide.adain.dim(),
                self.scene.embed_dim
            )));
        }
        Ok(adain(&self.scene.embedding_matrix(), self.scene.embed_dim, &self.guide.adain)?.data)
    }

    pub fn views(&self) -> Result<Vec<StylizationView>> {
        self.cams
            .iter()
            .map(|c| StylizationView::new(self.scene, c, self.encoder, self.generator, self.guide))
            .collect()
    }

    /// Stylizes with `decoder` and returns the mean style loss over the
    /// task's cameras.
    pub fn mean_style_loss(&self, decoder: &DecoderNet) -> Result<f64> {
        let styled = stylize_scene(self.scene, &self.guide.adain, decoder)?;
        let mut total = 0.0;
        for cam in self.cams {
            total += style_loss(&render(&styled, cam)?.rgb_image(), &self.guide.tap_refs, self.encoder)?;
        }
        Ok(total / self.cams.len() as f64)
    }

    /// Finite-difference check of the decoder objective on camera `view`,
    /// with a fresh discriminator seeded by `disc_seed` when suppression is
    /// on. Returns the max relative error.
    pub fn gradient_check(
        &self,
        decoder: &DecoderNet,
        weights: &LossWeights,
        view: usize,
        disc_seed: u64,
        h: f64,
        per_tensor: usize,
    ) -> Result<f64> {
        weights.validate()?;
        let cam = self
            .cams
            .get(view)
            .ok_or_else(|| Error::invalid(format!("no camera {view} among {}", self.cams.len())))?;
        let view = StylizationView::new(self.scene, cam, self.encoder, self.generator, self.guide)?;
        let disc = if weights.suppression > 0.0 {
            Some(DiscriminatorNet::new(disc_seed)?)
        } else {
            None
        };
        let obj = DecoderObjective {
            moved: self.moved_embeddings()?,
            view: &view,
            enc: self.encoder,
            guide: self.guide,
            disc: disc.as_ref(),
            weights,
            flow_loss: self.flow_loss,
        };
        Ok(finite_diff_check_sampled(decoder, &obj, h, per_tensor)?)
    }
}

struct DecoderObjective<'a> {
    moved: Vec<f32>,
    view: &'a StylizationView,
    enc: &'a PseudoVgg,
    guide: &'a StyleGuide,
    disc: Option<&'a DiscriminatorNet>,
    weights: &'a LossWeights,
    flow_loss: f64,
}

impl Objective<DecoderNet> for DecoderObjective<'_> {
    fn eval<T: Real>(&self, dec: &DecoderNet, tape: &mut Tape<T>, params: &[Var]) -> Result<Var, DiffError> {
        let (total, _) = stylized_objective(
            tape,
            dec,
            params,
            &self.moved,
            self.view,
            self.enc,
            self.guide,
            self.disc,
            self.weights,
            self.flow_loss,
        )?;
        Ok(total)
    }
}

/// Alternating decoder / discriminator updates. Each step renders the
/// currently stylized scene from one random training camera.
pub fn train_stylization(
    task: &StylizationTask,
    decoder: &DecoderNet,
    weights: &LossWeights,
    cfg: &StylizationConfig,
) -> Result<Stylization> {
    weights.validate()?;
    if task.cams.is_empty() {
        return Err(Error::invalid("train_stylization needs at least one camera"));
    }
    if !task.flow_loss.is_finite() {
        return Err(Error::numeric("loss part 'flow' is not finite"));
    }
    let needs_prior = weights.lambda_obs > 0.0 || weights.suppression > 0.0;
    if needs_prior && task.generator.is_none() {
        return Err(Error::invalid("observation and suppression terms need a 2D generator"));
    }
    let moved = task.moved_embeddings()?;
    let views = task.views()?;
    let mut decoder = decoder.clone();
    let mut disc = if weights.suppression > 0.0 {
        Some(DiscriminatorNet::new(cfg.seed ^ 0xD15C)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut adam_d = AdamState::new(cfg.disc_learning_rate);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let view = &views[rng.random_range(0..views.len())];
        decoder.zero_grad();
        let mut tape: Tape = Tape::new();
        let bound = decoder.bind(&mut tape);
        let (total, terms) = stylized_objective(
            &mut tape,
            &decoder,
            &bound,
            &moved,
            view,
            task.encoder,
            task.guide,
            disc.as_ref(),
            weights,
            task.flow_loss,
        )?;
        let mut row = StepLog {
            step,
            content: tape.scalar(terms.content) as f64,
            style: tape.scalar(terms.style) as f64,
            obs: terms.obs.map_or(0.0, |o| tape.scalar(o) as f64),
            flow: task.flow_loss,
            sup_disc: 0.0,
            sup_gen: terms.sup_gen.map_or(0.0, |g| tape.scalar(g) as f64),
            total: tape.scalar(total) as f64,
        };
        for (name, v) in [
            ("content", row.content),
            ("style", row.style),
            ("obs", row.obs),
            ("sup_gen", row.sup_gen),
        ] {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "stylization step {step}: loss part '{name}' is not finite"
                )));
            }
        }
        let fake = tape.value_f32(terms.image);
        tape.backward(total)?;
        tape.accumulate_into(&bound, decoder.params_mut())?;
        adam.step(decoder.params_mut())?;

        if let (Some(d), Some((prior, _))) = (disc.as_mut(), &view.prior) {
            d.zero_grad();
            let mut tape: Tape = Tape::new();
            let bound = d.bind(&mut tape);
            let shape = [3, view.height, view.width];
            let real = tape.constant(&shape, prior.data.clone())?;
            let fake = tape.constant(&shape, fake)?;
            let pr = d.forward(&mut tape, &bound, real)?;
            let pf = d.forward(&mut tape, &bound, fake)?;
            let loss = disc_loss_tape(&mut tape, &pr, &pf)?;
            row.sup_disc = tape.scalar(loss) as f64;
            if !row.sup_disc.is_finite() {
                return Err(Error::numeric(format!(
                    "stylization step {step}: loss part 'sup_disc' is not finite"
                )));
            }
            tape.backward(loss)?;
            tape.accumulate_into(&bound, d.params_mut())?;
            adam_d.step(d.params_mut())?;
        }
        log.push(row);
    }
    Ok(Stylization {
        decoder,
        discriminator: disc,
        log,
    })
}

/// Mean of `total` over the first and last `window` steps.
pub fn moving_average_ends(log: &[StepLog], window: usize) -> Option<(f64, f64)> {
    if log.is_empty() {
        return None;
    }
    let w = window.min(log.len()).max(1);
    let mean = |rows: &[StepLog]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
    Some((mean(&log[..w]), mean(&log[log.len() - w..])))
}

//! `key=value` run configuration. Every key is listed in [`RunConfig::KEYS`];
//! unknown keys are rejected.

use std::path::PathBuf;

use subflow::diff::Activation;
use subflow::encoders::{CLIP_DIM, DEFAULT_CLIP_SEED, DEFAULT_VGG_SEED};
use subflow::flow::{FlowConfig, MappingConfig};
use subflow::losses::{GeneratorConfig, LossWeights, StylizationConfig};
use subflow::scene::{SceneKind, MAX_EMBED_DIM, MIN_EMBED_DIM};
use subflow::transfer::DistillConfig;
use subflow::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RingSpec {
    pub count: usize,
    pub radius: f32,
    pub elevation_deg: f32,
    pub focal: f32,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub textures: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene_kind: SceneKind,
    pub scene_n: usize,
    pub embed_dim: usize,
    pub clip_dim: usize,
    pub vgg_seed: u64,
    pub clip_seed: u64,
    pub ring: RingSpec,
    pub distill: DistillConfig,
    pub corpus: CorpusSpec,
    pub eval_corpus: CorpusSpec,
    pub mapping: MappingConfig,
    pub flow: FlowConfig,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub style: StylizationConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scene_kind: SceneKind::TexturedSlab,
            scene_n: 242,
            embed_dim: 32,
            clip_dim: CLIP_DIM,
            vgg_seed: DEFAULT_VGG_SEED,
            clip_seed: DEFAULT_CLIP_SEED,
            ring: RingSpec {
                count: 8,
                radius: 4.0,
                elevation_deg: 50.0,
                focal: 128.0,
                width: 64,
                height: 64,
            },
            distill: DistillConfig {
                steps: 400,
                learning_rate: 1e-2,
                ..DistillConfig::default()
            },
            corpus: CorpusSpec {
                textures: 400,
                size: 32,
                seed: 5,
            },
            eval_corpus: CorpusSpec {
                textures: 100,
                size: 32,
                seed: 6,
            },
            mapping: MappingConfig {
                steps: 1000,
                ..MappingConfig::default()
            },
            flow: FlowConfig {
                train_steps: 600,
                ..FlowConfig::default()
            },
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            style: StylizationConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

trait ConfigValue: Sized {
    fn show(&self) -> String;
    fn parse(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn show(&self) -> String {
                self.to_string()
            }
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
        }
    )*};
}

from_str_value!(usize, u64, f32);

impl ConfigValue for Vec<usize> {
    fn show(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|w| w.trim().parse().map_err(|e| format!("{e}")))
            .collect()
    }
}

impl ConfigValue for Activation {
    fn show(&self) -> String {
        self.name().to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl ConfigValue for SceneKind {
    fn show(&self) -> String {
        self.name().to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
}

impl ConfigValue for PathBuf {
    fn show(&self) -> String {
        self.display().to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.show()),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse(value)
                            .map_err(|e| Error::invalid(format!("config key '{key}': bad value '{value}': {e}")))?;
                    })*
                    _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
                }
                Ok(())
            }
        }
    };
}

config_keys! {
    "seed" => seed,
    "scene.kind" => scene_kind,
    "scene.n" => scene_n,
    "embed_dim" => embed_dim,
    "clip_dim" => clip_dim,
    "vgg_seed" => vgg_seed,
    "clip_seed" => clip_seed,
    "ring.count" => ring.count,
    "ring.radius" => ring.radius,
    "ring.elevation_deg" => ring.elevation_deg,
    "ring.focal" => ring.focal,
    "ring.width" => ring.width,
    "ring.height" => ring.height,
    "distill.steps" => distill.steps,
    "distill.learning_rate" => distill.learning_rate,
    "distill.feature_weight" => distill.feature_weight,
    "distill.hidden" => distill.decoder_hidden,
    "distill.seed" => distill.seed,
    "corpus.textures" => corpus.textures,
    "corpus.size" => corpus.size,
    "corpus.seed" => corpus.seed,
    "eval.textures" => eval_corpus.textures,
    "eval.size" => eval_corpus.size,
    "eval.seed" => eval_corpus.seed,
    "mapping.hidden" => mapping.hidden,
    "mapping.activation" => mapping.activation,
    "mapping.steps" => mapping.steps,
    "mapping.batch" => mapping.batch,
    "mapping.learning_rate" => mapping.learning_rate,
    "mapping.seed" => mapping.seed,
    "flow.euler_steps" => flow.euler_steps,
    "flow.rounds" => flow.rounds,
    "flow.train_steps" => flow.train_steps,
    "flow.batch" => flow.batch,
    "flow.learning_rate" => flow.learning_rate,
    "flow.seed" => flow.seed,
    "flow.hidden" => flow.hidden,
    "flow.activation" => flow.activation,
    "loss.lambda_style" => weights.lambda_style,
    "loss.lambda_obs" => weights.lambda_obs,
    "loss.lambda_flow" => weights.lambda_flow,
    "loss.suppression" => weights.suppression,
    "generator.textures" => generator.textures,
    "generator.size" => generator.size,
    "generator.steps" => generator.steps,
    "generator.learning_rate" => generator.learning_rate,
    "generator.seed" => generator.seed,
    "style.steps" => style.steps,
    "style.learning_rate" => style.learning_rate,
    "style.disc_learning_rate" => style.disc_learning_rate,
    "style.seed" => style.seed,
    "out" => out,
}

impl RunConfig {
    /// Applies `key=value` lines over `self`. Blank lines and `#` comments are
    /// skipped; a key may appear once.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("{origin}:{}: expected key=value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::invalid(format!("{origin}:{}: duplicate key '{k}'", i + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| Error::invalid(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "config")?;
        Ok(cfg)
    }

    pub fn dump(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(MIN_EMBED_DIM..=MAX_EMBED_DIM).contains(&self.embed_dim) {
            return bad(format!(
                "embed_dim must be in {MIN_EMBED_DIM}..={MAX_EMBED_DIM}, got {}",
                self.embed_dim
            ));
        }
        if self.clip_dim != CLIP_DIM {
            return bad(format!(
                "clip_dim must be {CLIP_DIM} (the CLIP-like encoder's width), got {}",
                self.clip_dim
            ));
        }
        if self.scene_n == 0 {
            return bad("scene.n must be positive".into());
        }
        let r = &self.ring;
        if r.count < 4 {
            return bad(format!("ring.count must be at least 4, got {}", r.count));
        }
        if !(r.radius > 0.0 && r.focal > 0.0 && r.radius.is_finite() && r.focal.is_finite()) {
            return bad("ring.radius and ring.focal must be positive".into());
        }
        if !(-89.0..=89.0).contains(&r.elevation_deg) {
            return bad("ring.elevation_deg must be within -89..=89".into());
        }
        if r.width == 0 || r.height == 0 {
            return bad("ring.width and ring.height must be positive".into());
        }
        for (name, c) in [("corpus", &self.corpus), ("eval", &self.eval_corpus)] {
            if c.textures < 2 || c.size < 8 {
                return bad(format!("{name}.textures must be >= 2 and {name}.size >= 8"));
            }
        }
        if self.distill.decoder_hidden.contains(&0) {
            return bad("distill.hidden widths must be positive".into());
        }
        self.mapping.validate()?;
        self.flow.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips_byte_identically() {
        let d = RunConfig::default();
        let text = d.dump();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, d);
        assert_eq!(parsed.dump(), text);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        d.validate().unwrap();
    }

    #[test]
    fn non_default_values_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text(
            "flow.hidden=16\nloss.lambda_obs=0.25\nmapping.activation=relu\nscene.kind=lattice\n# note\n\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.flow.hidden, vec![16]);
        assert_eq!(RunConfig::parse(&c.dump()).unwrap(), c);
    }

    #[test]
    fn bad_input_is_rejected_with_the_key() {
        let err = RunConfig::parse("flow.round=3").unwrap_err().to_string();
        assert!(err.contains("unknown config key 'flow.round'"), "{err}");
        let err = RunConfig::parse("flow.rounds=three").unwrap_err().to_string();
        assert!(err.contains("flow.rounds"), "{err}");
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("seed=1\nseed=2").is_err());
        assert!(RunConfig::parse("embed_dim=4").unwrap().validate().is_err());
        assert!(RunConfig::parse("clip_dim=32").unwrap().validate().is_err());
        assert!(RunConfig::parse("flow.rounds=0").unwrap().validate().is_err());
    }
}

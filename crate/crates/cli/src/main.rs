mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subflow::diff::checkpoint::save_params;
use subflow::diff::Module;
use subflow::encoders::{procedural_texture, PseudoClip, PseudoVgg};
use subflow::features::{export_features, import_features, Domain};
use subflow::flow::{rounds_csv, AlignmentPipeline};
use subflow::image::Image;
use subflow::losses::{stylization_csv, train_stylization, Generator2d, StyleGuide, StylizationTask};
use subflow::metrics::{alignment_rows, consistency_rows, eval_consistency_default, metrics_csv};
use subflow::render::{decode_ppm, render, save_ppm};
use subflow::scene::{camera_ring, generate_toy_scene, load_scene, save_scene, Camera, GaussianScene, Intrinsics};
use subflow::transfer::{distill_embeddings, stats_from_vector, stylize_scene, DecoderNet, StyleStats};
use subflow::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "subflow", version, about = "Multi-modal 3D Gaussian style transfer pipeline")]
struct Cli {
    /// key=value config file applied over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Single config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (config key `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scene seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct StyleSource {
    /// Style image (binary PPM).
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    /// Style text, split on whitespace.
    #[arg(long, value_name = "WORDS")]
    text: Option<String>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct StylizeSource {
    #[arg(long, value_name = "PATH")]
    image: Option<PathBuf>,
    #[arg(long, value_name = "WORDS")]
    text: Option<String>,
    /// FEAT file; clip rows are aligned first, vgg/mapped rows are used as is.
    #[arg(long, value_name = "PATH")]
    feat: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy scene -> scene.gscn.
    GenScene,
    /// Write a procedural texture as a PPM, e.g. a style image.
    GenTexture {
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, value_name = "PATH")]
        path: PathBuf,
    },
    /// Distill color embeddings -> distilled.gscn, decoder.prms, distill.csv.
    Embed {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_name = "PATH")]
        scene: Option<PathBuf>,
    },
    /// Train the alignment pipeline -> pipeline/, rounds.csv, clip.feat, vgg.feat.
    TrainFlow {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Train the stylization decoder -> style_decoder.prms, discriminator.prms,
    /// generator.prms, train_style.csv.
    TrainStyle {
        #[command(flatten)]
        source: StyleSource,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Restyle the distilled scene -> stylized.gscn.
    Stylize {
        #[command(flatten)]
        source: StylizeSource,
        /// Decoder checkpoint; defaults to style_decoder.prms, else decoder.prms.
        #[arg(long, value_name = "PATH")]
        decoder: Option<PathBuf>,
    },
    /// Render every ring camera -> renders/view_NN.ppm.
    Render {
        #[arg(long, value_name = "PATH")]
        scene: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
    },
    /// Per-round SIM/FID on a held-out corpus -> align.csv.
    EvalAlign,
    /// Short/long-range masked RMSE -> consistency.csv.
    EvalConsistency {
        #[arg(long, value_name = "PATH")]
        scene: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration.
    DumpConfig,
}

struct Ctx {
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn cams(&self) -> Result<Vec<Camera>> {
        let r = &self.cfg.ring;
        let intr = Intrinsics {
            focal: r.focal,
            width: r.width,
            height: r.height,
            ..Intrinsics::default()
        };
        camera_ring([0.0; 3], r.radius, r.count, r.elevation_deg.to_radians(), &intr)
    }

    fn vgg(&self) -> Result<PseudoVgg> {
        PseudoVgg::new(self.cfg.vgg_seed, self.cfg.embed_dim)
    }

    fn clip(&self) -> Result<PseudoClip> {
        PseudoClip::new(self.cfg.clip_seed)
    }

    fn out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| Error::io(&self.cfg.out, e))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn scene(&self, explicit: Option<&PathBuf>, default: &str, producer: &str) -> Result<GaussianScene> {
        let path = explicit.cloned().unwrap_or_else(|| self.path(default));
        require(&path, producer)?;
        load_scene(&path)
    }

    fn pipeline(&self) -> Result<AlignmentPipeline> {
        let dir = self.path("pipeline");
        require(&dir, "train-flow")?;
        AlignmentPipeline::load(&dir)
    }

    fn corpus(&self, spec: &config::CorpusSpec) -> Vec<Image> {
        (0..spec.textures as u64)
            .map(|i| procedural_texture(spec.seed, i, spec.size, spec.size))
            .collect()
    }
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "missing input {} (produced by `subflow {producer}`)",
            path.display()
        )))
    }
}

fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn guide(ctx: &Ctx, image: Option<&PathBuf>, text: Option<&String>) -> Result<StyleGuide> {
    let (vgg, clip, pipeline) = (ctx.vgg()?, ctx.clip()?, ctx.pipeline()?);
    match (image, text) {
        (Some(path), None) => StyleGuide::from_image(&load_image(path)?, &vgg, &clip, &pipeline),
        (None, Some(t)) => StyleGuide::from_text(&tokens(t), &vgg, &clip, &pipeline),
        _ => Err(Error::invalid("exactly one of --image and --text is required")),
    }
}

fn feat_stats(ctx: &Ctx, path: &Path) -> Result<StyleStats> {
    let set = import_features(path)?;
    if set.is_empty() {
        return Err(Error::invalid(format!("{}: no feature rows", path.display())));
    }
    let aligned = match set.domain {
        Domain::ClipLike => ctx.pipeline()?.align_set(&set)?,
        Domain::VggLike | Domain::ClipMapped => set,
    };
    let n = aligned.len() as f32;
    let mut mean = vec![0.0f32; aligned.dim];
    for row in aligned.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    stats_from_vector(&mean).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Embed { steps: Some(s), .. } => cfg.distill.steps = *s,
        Command::TrainFlow { steps, rounds } => {
            if let Some(s) = steps {
                cfg.flow.train_steps = *s;
            }
            if let Some(r) = rounds {
                cfg.flow.rounds = *r;
            }
        }
        Command::TrainStyle { steps: Some(s), .. } => cfg.style.steps = *s,
        _ => {}
    }
    cfg.validate()?;
    let ctx = Ctx { cfg };

    match cli.command {
        Command::DumpConfig => {
            print!("{}", ctx.cfg.dump());
        }
        Command::GenScene => {
            ctx.out_dir()?;
            let c = &ctx.cfg;
            let scene = generate_toy_scene(c.scene_kind, c.scene_n, c.seed, c.embed_dim)?;
            let path = ctx.path("scene.gscn");
            save_scene(&scene, &path)?;
            eprintln!("wrote {} ({} gaussians)", path.display(), scene.len());
        }
        Command::GenTexture { index, size, path } => {
            if size < 8 {
                return Err(Error::invalid("--size must be at least 8"));
            }
            save_ppm(&procedural_texture(ctx.cfg.seed, index, size, size), &path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Embed { scene, .. } => {
            let scene = ctx.scene(scene.as_ref(), "scene.gscn", "gen-scene")?;
            if scene.embed_dim != ctx.cfg.embed_dim {
                return Err(Error::invalid(format!(
                    "scene embeddings are {}-dim but embed_dim={}",
                    scene.embed_dim, ctx.cfg.embed_dim
                )));
            }
            ctx.out_dir()?;
            let d = distill_embeddings(&scene, &ctx.cams()?, &ctx.vgg()?, &ctx.cfg.distill)?;
            save_scene(&d.scene, &ctx.path("distilled.gscn"))?;
            d.decoder.save(&ctx.path("decoder.prms"))?;
            let mut csv = String::from("step,recon,projection\n");
            for (i, (r, p)) in d.recon_history.iter().zip(&d.projection_history).enumerate() {
                csv.push_str(&format!("{i},{r:.8},{p:.8}\n"));
            }
            ctx.write("distill.csv", &csv)?;
            eprintln!("distilled: reconstruction error {:.3e}", d.reconstruction_error()?);
        }
        Command::TrainFlow { .. } => {
            ctx.out_dir()?;
            let images = ctx.corpus(&ctx.cfg.corpus);
            let clip_set = ctx.clip()?.encode(&images)?;
            let vgg_set = ctx.vgg()?.encode(&images)?;
            export_features(&clip_set, &ctx.path("clip.feat"))?;
            export_features(&vgg_set, &ctx.path("vgg.feat"))?;
            let (pipeline, run) = AlignmentPipeline::train(&clip_set, &vgg_set, &ctx.cfg.mapping, &ctx.cfg.flow)?;
            pipeline.save(&ctx.path("pipeline"))?;
            let csv = rounds_csv(&run.reports);
            ctx.write("rounds.csv", &csv)?;
            eprint!("{csv}");
        }
        Command::TrainStyle { source, .. } => {
            let scene = ctx.scene(None, "distilled.gscn", "embed")?;
            let decoder_path = ctx.path("decoder.prms");
            require(&decoder_path, "embed")?;
            let decoder = DecoderNet::load(&decoder_path)?;
            let guide = guide(&ctx, source.image.as_ref(), source.text.as_ref())?;
            let vgg = ctx.vgg()?;
            let w = ctx.cfg.weights;
            let generator = if w.lambda_obs > 0.0 || w.suppression > 0.0 {
                let (g, _) = Generator2d::pretrain(&vgg, &ctx.cfg.generator)?;
                g.save(&ctx.path("generator.prms"))?;
                Some(g)
            } else {
                None
            };
            let cams = ctx.cams()?;
            let task = StylizationTask {
                scene: &scene,
                cams: &cams,
                encoder: &vgg,
                generator: generator.as_ref(),
                guide: &guide,
                flow_loss: ctx.pipeline()?.flow_loss as f64,
            };
            let out = train_stylization(&task, &decoder, &w, &ctx.cfg.style)?;
            out.decoder.save(&ctx.path("style_decoder.prms"))?;
            if let Some(disc) = &out.discriminator {
                save_params(&ctx.path("discriminator.prms"), &disc.params())?;
            }
            ctx.write("train_style.csv", &stylization_csv(&out.log))?;
            if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
                eprintln!("style loss {:.4} -> {:.4}", first.style, last.style);
            }
        }
        Command::Stylize { source, decoder } => {
            let scene = ctx.scene(None, "distilled.gscn", "embed")?;
            let decoder_path = decoder.unwrap_or_else(|| {
                let trained = ctx.path("style_decoder.prms");
                if trained.exists() {
                    trained
                } else {
                    ctx.path("decoder.prms")
                }
            });
            require(&decoder_path, "embed")?;
            let decoder = DecoderNet::load(&decoder_path)?;
            let stats = match &source.feat {
                Some(path) => feat_stats(&ctx, path)?,
                None => guide(&ctx, source.image.as_ref(), source.text.as_ref())?.adain,
            };
            let stylized = stylize_scene(&scene, &stats, &decoder)?;
            let path = ctx.path("stylized.gscn");
            save_scene(&stylized, &path)?;
            eprintln!("wrote {} using {}", path.display(), decoder_path.display());
        }
        Command::Render { scene, dir } => {
            let scene = ctx.scene(scene.as_ref(), "stylized.gscn", "stylize")?;
            let dir = dir.unwrap_or_else(|| ctx.path("renders"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, cam) in ctx.cams()?.iter().enumerate() {
                save_ppm(&render(&scene, cam)?.rgb_image(), &dir.join(format!("view_{i:02}.ppm")))?;
            }
            eprintln!("wrote {} views to {}", ctx.cfg.ring.count, dir.display());
        }
        Command::EvalAlign => {
            let pipeline = ctx.pipeline()?;
            let images = ctx.corpus(&ctx.cfg.eval_corpus);
            let reports = pipeline.evaluate(&ctx.clip()?.encode(&images)?, &ctx.vgg()?.encode(&images)?)?;
            ctx.out_dir()?;
            let csv = metrics_csv(&alignment_rows(&reports));
            ctx.write("align.csv", &csv)?;
            eprint!("{csv}");
        }
        Command::EvalConsistency { scene, csv } => {
            let scene = ctx.scene(scene.as_ref(), "stylized.gscn", "stylize")?;
            let summary = eval_consistency_default(&scene, &ctx.cams()?)?;
            ctx.out_dir()?;
            let path = csv.unwrap_or_else(|| ctx.path("consistency.csv"));
            std::fs::write(&path, metrics_csv(&consistency_rows(&summary))).map_err(|e| Error::io(&path, e))?;
            eprintln!(
                "short-range {:.4}, long-range {:.4}",
                summary.short_rmse, summary.long_rmse
            );
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SUBFLOW_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("SUBFLOW_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

use crate::manifest::RunManifest;
use clap::{Parser, Subcommand};
use emov2v_core::config::RunConfig;
use emov2v_core::eval::{aggregate_report, fid, frame_features, MetricReport, PairKey, VideoRecord};
use emov2v_core::facegen::{load_corpus, utterance_dir, write_corpus, make_corpus, Corpus, EmotionLabel, Split, UtteranceMeta};
use emov2v_core::masking::MaskStrategy;
use emov2v_core::media::{AudioFeatures, Frame};
use emov2v_core::model::init_params;
use emov2v_core::scorers::Scorer;
use emov2v_core::train::{
    infer, pairing_table, pretrain, score_translation, train, Checkpoint, TrainState, VariantConfig,
};
use emov2v_core::{container, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "emov2v", version, about = "Emotion translation for talking-face video")]
pub struct Cli {
    /// Pipeline config (JSON); missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train the generator on neutral self-reconstruction.
    Pretrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Fine-tune (half masking) or train from scratch (full masking) one variant.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `masking:strategy`, e.g. `half:l1_emo`.
        #[arg(long)]
        variant: Option<String>,
        /// `source:destination`, e.g. `sad:happy`.
        #[arg(long)]
        pair: Option<String>,
        /// Checkpoint to start from (required for half masking).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Translate every source clip of a split.
    Infer {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score translated clips against the corpus ground truth.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the micro-averaged rows of several evaluation reports.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Metadata of one translated clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationMeta {
    pub actor: u32,
    pub utterance: u32,
    pub source: EmotionLabel,
    pub destination: EmotionLabel,
    pub variant: String,
    pub fps: u32,
    pub frames: usize,
    pub steps_per_frame: usize,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub config_hash: String,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        // fails only when a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(n) = cli.workers {
        cfg.workers = n;
    }
    let ctx = Ctx {
        config_path: cli.config.clone(),
        force: cli.force,
    };
    match cli.command {
        Command::Synth { out } => synth(&ctx, cfg.resolve()?, out),
        Command::Pretrain { corpus, out, steps } => {
            if let Some(s) = steps {
                cfg.pretrain.steps = s;
            }
            let (cfg, corpus) = with_corpus(cfg, corpus)?;
            cmd_pretrain(&ctx, &cfg, &corpus, &out)
        }
        Command::Train {
            corpus,
            out,
            variant,
            pair,
            init,
            steps,
        } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let cfg = with_variant_flags(cfg, variant.as_deref(), pair.as_deref())?;
            let (cfg, corpus) = with_corpus(cfg, corpus)?;
            cmd_train(&ctx, &cfg, &corpus, &out, init.as_deref())
        }
        Command::Infer {
            corpus,
            checkpoint,
            out,
            variant,
            pair,
            split,
        } => {
            let cfg = with_variant_flags(cfg, variant.as_deref(), pair.as_deref())?;
            let (cfg, corpus) = with_corpus(cfg, corpus)?;
            cmd_infer(&ctx, &cfg, &corpus, &checkpoint, &out, parse_split(&split)?)
        }
        Command::Eval { generated, corpus, out } => {
            let (cfg, corpus) = with_corpus(cfg, corpus)?;
            cmd_eval(&ctx, &cfg, &corpus, &generated, &out)
        }
        Command::Report { inputs, out } => cmd_report(&ctx, &cfg.resolve()?, &inputs, &out),
    }
}

struct Ctx {
    config_path: Option<PathBuf>,
    force: bool,
}

impl Ctx {
    fn manifest(&self, command: &str, cfg: &RunConfig, out: &Path) -> RunManifest {
        RunManifest::start(command, self.config_path.as_deref(), cfg.hash(), cfg.seed, out)
    }

    /// Create `dir`, refusing to reuse a non-empty one unless forced.
    fn prepare_out(&self, dir: &Path) -> Result<()> {
        let populated = dir.exists() && std::fs::read_dir(dir)?.next().is_some();
        if populated {
            if !self.force {
                return Err(Error::invalid(format!("{} is not empty; pass --force to replace it", dir.display())));
            }
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::create_dir_all(dir)?;
        Ok(())
    }
}

fn with_variant_flags(mut cfg: RunConfig, variant: Option<&str>, pair: Option<&str>) -> Result<RunConfig> {
    let reject = |e: Error| {
        eprintln!("valid variants:\n{}", pairing_table());
        Error::Config(e.to_string())
    };
    if let Some(v) = variant {
        let (m, s) = VariantConfig::parse_variant(v).map_err(reject)?;
        cfg.variant.masking = m;
        cfg.variant.strategy = s;
    }
    if let Some(p) = pair {
        let (s, d) = VariantConfig::parse_pair(p).map_err(reject)?;
        cfg.variant.source = s;
        cfg.variant.destination = d;
    }
    if cfg.variant.source == cfg.variant.destination {
        return Err(reject(Error::Config("source and destination emotions must differ".into())));
    }
    Ok(cfg)
}

/// Load the corpus and take frame and audio shapes from it.
fn with_corpus(mut cfg: RunConfig, dir: Option<PathBuf>) -> Result<(RunConfig, Corpus)> {
    let dir = dir.unwrap_or_else(|| cfg.corpus_dir.clone());
    let corpus = load_corpus(&dir)?;
    cfg.corpus_dir = dir;
    cfg.corpus = corpus.config.clone();
    let cfg = cfg.resolve()?;
    Ok((cfg, corpus))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?} (train, val, test)"))),
    }
}

fn with_sidecar(p: PathBuf) -> [PathBuf; 2] {
    let s = Checkpoint::sidecar_path(&p);
    [p, s]
}

fn synth(ctx: &Ctx, cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| cfg.corpus_dir.clone());
    ctx.prepare_out(&out)?;
    let manifest = ctx.manifest("synth", &cfg, &out);
    let corpus = make_corpus(&cfg.corpus)?;
    write_corpus(&corpus, &out)?;
    let s = &corpus.splits;
    println!(
        "wrote {} utterances to {} (actors train/val/test {}/{}/{})",
        corpus.utterances.len(),
        out.display(),
        s.train_actors.len(),
        s.val_actors.len(),
        s.test_actors.len()
    );
    manifest.finish(vec![out.join("splits.json"), out.join("corpus.json")])?;
    Ok(())
}

fn cmd_pretrain(ctx: &Ctx, cfg: &RunConfig, corpus: &Corpus, out: &Path) -> Result<()> {
    ctx.prepare_out(out)?;
    let manifest = ctx.manifest("pretrain", cfg, out);
    let scorer = Scorer::for_corpus(&cfg.scorer, corpus)?;
    let (_, report) = pretrain(corpus, &cfg.model, &scorer, &cfg.pretrain, Some(out))?;
    println!(
        "pre-trained {} steps: final L_total {:.5}, validation sync cosine {:.4}",
        report.steps, report.final_loss.l_total, report.sync_cosine
    );
    let loss = out.join("loss.csv");
    report.check(&loss)?;
    let mut artifacts = vec![loss, out.join("pretrain_report.json")];
    artifacts.extend(with_sidecar(out.join("pretrain.ckpt")));
    manifest.finish(artifacts)?;
    Ok(())
}

/// Accept a start checkpoint with the same model layout and, when it was
/// fine-tuned, the same masking.
fn check_init(ckpt: &Checkpoint, cfg: &RunConfig, variant: &VariantConfig) -> Result<()> {
    match &ckpt.meta.variant {
        Some(_) => ckpt.check_compatible(&cfg.model, Some(variant)),
        None => ckpt.check_compatible(&cfg.model, None),
    }
}

fn cmd_train(ctx: &Ctx, cfg: &RunConfig, corpus: &Corpus, out: &Path, init: Option<&Path>) -> Result<()> {
    let variant = cfg.variant()?;
    let state = match init {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            check_init(&ckpt, cfg, &variant)?;
            ckpt.state
        }
        None if variant.masking == MaskStrategy::Half => {
            return Err(Error::Config(
                "half masking fine-tunes a pre-trained generator: run `emov2v pretrain --out DIR` first and pass --init DIR/pretrain.ckpt"
                    .into(),
            ))
        }
        None => {
            let (g, d) = init_params(&cfg.model, cfg.train.seed)?;
            TrainState::new(g, d, cfg.train.adam)
        }
    };
    ctx.prepare_out(out)?;
    let manifest = ctx.manifest("train", cfg, out);
    let scorer = Scorer::for_corpus(&cfg.scorer, corpus)?;
    let outcome = train(corpus, &variant, &scorer, state, &cfg.train, Some(out))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        variant: String,
        steps: u64,
        initial: &'a emov2v_core::train::MetricPoint,
        best: Option<&'a emov2v_core::train::MetricPoint>,
        history: &'a [emov2v_core::train::MetricPoint],
    }
    let summary = Summary {
        variant: variant.name(),
        steps: outcome.last.step,
        initial: &outcome.initial,
        best: outcome.best.as_ref().map(|(m, _)| m),
        history: &outcome.history,
    };
    let summary_path = out.join("train_summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    let last = outcome.losses.last().copied().unwrap_or_default();
    println!("trained {} to step {}: final L_total {:.5}", variant.name(), outcome.last.step, last.l_total);
    if let Some((m, _)) = &outcome.best {
        println!("best validation: step {} dValence {:?} LSE-D {:.4}", m.step, m.d_valence, m.lse_d);
    }
    let mut artifacts = vec![out.join("loss.csv"), out.join("metrics.csv"), summary_path];
    artifacts.extend(with_sidecar(out.join("last.ckpt")));
    artifacts.extend(with_sidecar(out.join("best.ckpt")));
    manifest.finish(artifacts)?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn translation_dir(root: &Path, actor: u32, source: EmotionLabel, destination: EmotionLabel, utterance: u32) -> PathBuf {
    root.join(format!("{actor:03}"))
        .join(format!("{}_to_{}", source.dir_name(), destination.dir_name()))
        .join(format!("{utterance:03}"))
}

fn cmd_infer(ctx: &Ctx, cfg: &RunConfig, corpus: &Corpus, ckpt_path: &Path, out: &Path, split: Split) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let expected = cfg.variant()?;
    ckpt.check_compatible(&cfg.model, Some(&expected))?;
    let variant = ckpt
        .meta
        .variant
        .clone()
        .ok_or_else(|| Error::Config("pre-training checkpoints carry no variant; pass a fine-tuned checkpoint".into()))?;
    ctx.prepare_out(out)?;
    let manifest = ctx.manifest("infer", cfg, out);
    let ckpt_hash = sha256_file(ckpt_path)?;
    let mask = variant.mask_spec();
    let (src, dst) = (variant.source, variant.destination);
    let mut artifacts = Vec::new();
    for &actor in corpus.splits.actors(split) {
        for u in corpus.utterance_ids(actor, src.name) {
            let clip = corpus.get(actor, src.name, u).expect("listed utterance");
            let input_dir = utterance_dir(&cfg.corpus_dir, actor, clip.emotion, u);
            let input_meta: UtteranceMeta = serde_json::from_slice(&std::fs::read(input_dir.join("meta.json"))?)?;
            let video = infer(&clip.frames, &clip.audio, Some(&clip.landmarks), &ckpt.state.gen, &mask, corpus.synth().window)?;
            let dir = translation_dir(out, actor, clip.emotion, dst, u);
            std::fs::create_dir_all(&dir)?;
            let f0 = &video.frames[0];
            let data: Vec<f32> = video.frames.iter().flat_map(|f| f.data.iter().copied()).collect();
            container::write(&dir.join("frames.bin"), &[video.frames.len(), f0.height, f0.width, f0.channels], &data)?;
            // the soundtrack is the input file, byte for byte
            std::fs::copy(input_dir.join("audio.bin"), dir.join("audio.bin"))?;
            let meta = TranslationMeta {
                actor,
                utterance: u,
                source: clip.emotion,
                destination: dst,
                variant: variant.name(),
                fps: input_meta.fps,
                frames: video.frames.len(),
                steps_per_frame: input_meta.steps_per_frame,
                checkpoint: ckpt_path.to_path_buf(),
                checkpoint_sha256: ckpt_hash.clone(),
                config_hash: ckpt.meta.config_hash.clone(),
            };
            let meta_path = dir.join("meta.json");
            std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
            artifacts.push(meta_path);
        }
    }
    println!("translated {} clips with {} into {}", artifacts.len(), variant.name(), out.display());
    manifest.finish(artifacts)?;
    Ok(())
}

/// A translated clip read back from disk.
pub struct GeneratedClip {
    pub meta: TranslationMeta,
    pub frames: Vec<Frame>,
    pub audio: AudioFeatures,
}

pub fn read_translation(dir: &Path) -> Result<GeneratedClip> {
    let meta: TranslationMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
    let (dims, data) = container::read(&dir.join("frames.bin"))?;
    if dims.len() != 4 {
        return Err(Error::Format {
            path: dir.join("frames.bin"),
            reason: format!("expected [T, H, W, C], got {dims:?}"),
        });
    }
    let per = dims[1] * dims[2] * dims[3];
    let frames = data
        .chunks_exact(per)
        .map(|c| Frame::from_data(dims[1], dims[2], dims[3], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (adims, adata) = container::read(&dir.join("audio.bin"))?;
    if adims.len() != 2 {
        return Err(Error::Format {
            path: dir.join("audio.bin"),
            reason: format!("expected [steps, bands], got {adims:?}"),
        });
    }
    Ok(GeneratedClip {
        meta,
        frames,
        audio: AudioFeatures {
            steps: adims[0],
            bands: adims[1],
            data: adata,
        },
    })
}

/// Every directory below `root` holding a translation `meta.json`, sorted.
fn translation_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                if p.join("meta.json").exists() && p.join("frames.bin").exists() {
                    out.push(p);
                } else {
                    stack.push(p);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

fn features<'a>(frames: impl IntoIterator<Item = &'a Frame>) -> Vec<Vec<f64>> {
    frames.into_iter().map(frame_features).collect()
}

fn cmd_eval(ctx: &Ctx, cfg: &RunConfig, corpus: &Corpus, generated: &Path, out: &Path) -> Result<()> {
    let dirs = translation_dirs(generated)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no translated clips under {}", generated.display())));
    }
    ctx.prepare_out(out)?;
    let manifest = ctx.manifest("eval", cfg, out);
    let scorer = Scorer::for_corpus(&cfg.scorer, corpus)?;
    let mut records: Vec<VideoRecord> = Vec::new();
    // per pair: generated, source and destination ground-truth features
    let mut feats: BTreeMap<PairKey, [Vec<Vec<f64>>; 3]> = BTreeMap::new();
    for dir in &dirs {
        let clip = read_translation(dir)?;
        let m = &clip.meta;
        let src = corpus
            .get(m.actor, m.source.name, m.utterance)
            .ok_or_else(|| Error::invalid(format!("{}: source clip not in corpus", dir.display())))?;
        let Some(dst) = corpus.get(m.actor, m.destination.name, m.utterance) else {
            log::warn!("{}: no {} ground truth; pair marked missing", dir.display(), m.destination);
            continue;
        };
        if clip.frames.len() != src.frames.len() {
            return Err(Error::invalid(format!(
                "{}: {} frames, source has {}",
                dir.display(),
                clip.frames.len(),
                src.frames.len()
            )));
        }
        records.push(score_translation(&clip.frames, &clip.audio, src, dst, &scorer)?);
        let key = PairKey {
            source: m.source.name,
            destination: m.destination.name,
        };
        let e = feats.entry(key).or_default();
        e[0].extend(features(&clip.frames));
        e[1].extend(features(&src.frames));
        e[2].extend(features(&dst.frames));
    }
    let mut fids = BTreeMap::new();
    let mut gt = Vec::new();
    for (k, [g, s, d]) in &feats {
        match (fid(g, d), fid(s, d)) {
            (Ok(a), Ok(b)) => {
                fids.insert(*k, a);
                gt.push(b);
            }
            (Err(Error::InvalidInput(msg)), _) | (_, Err(Error::InvalidInput(msg))) => {
                log::warn!("{}->{}: FID skipped: {msg}", k.source, k.destination)
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let mut report = aggregate_report(&records, &fids);
    report.ground_truth_fid = (!gt.is_empty()).then(|| gt.iter().sum::<f64>() / gt.len() as f64);
    let json = out.join(REPORT_JSON);
    let table = out.join(REPORT_TABLE);
    std::fs::write(&json, serde_json::to_string_pretty(&report)?)?;
    let text = report.to_table();
    std::fs::write(&table, &text)?;
    let records_path = out.join("records.json");
    std::fs::write(&records_path, serde_json::to_string_pretty(&records)?)?;
    print!("{text}");
    manifest.finish(vec![json, table, records_path])?;
    Ok(())
}

fn cmd_report(ctx: &Ctx, cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for dir in inputs {
        let path = if dir.is_dir() { dir.join(REPORT_JSON) } else { dir.clone() };
        let report: MetricReport = serde_json::from_slice(&std::fs::read(&path)?)?;
        let label = path
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((label, report));
    }
    ctx.prepare_out(out)?;
    let manifest = ctx.manifest("report", cfg, out);
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut text = String::new();
    let mut csv = String::from("run,videos,lse_d,lse_c,fid,d_valence,d_arousal\n");
    let _ = writeln!(
        text,
        "{:<24} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "run", "videos", "LSE-D", "LSE-C", "FID", "dValence", "dArousal"
    );
    for (label, r) in &rows {
        let m = &r.micro;
        let _ = writeln!(
            text,
            "{:<24} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}",
            label,
            m.videos,
            f(m.lse_d),
            f(m.lse_c),
            f(m.fid),
            f(m.d_valence),
            f(m.d_arousal)
        );
        let c = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9e}"));
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{},{}",
            m.videos,
            c(m.lse_d),
            c(m.lse_c),
            c(m.fid),
            c(m.d_valence),
            c(m.d_arousal)
        );
    }
    let table = out.join("comparison.txt");
    let csv_path = out.join("comparison.csv");
    std::fs::write(&table, &text)?;
    std::fs::write(&csv_path, csv)?;
    print!("{text}");
    manifest.finish(vec![table, csv_path])?;
    Ok(())
}

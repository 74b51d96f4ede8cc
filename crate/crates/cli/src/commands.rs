use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use penet::evalkit::{
    ablation_csv, comparison_grid, pose_eval, region_metrics, run_ablation, sample_draws, sample_images, to_images, EstimatorConfig,
    PoseEstimator, RegionScores, ABLATION_ROWS, DEFAULT_HIT_THRESHOLD, POSE_REGIONS, SAMPLES_PER_POSE,
};
use penet::imageops::{save_png, tile, Rgb};
use penet::pevae::sample_prior;
use penet::posekit::{render_skeleton, Palette, NUM_KEYPOINTS};
use penet::synthdata::{generate_corpus, read_corpus, render_frame, write_corpus, Corpus, CorpusConfig, FrameRecord};
use penet::trainer::{run, Batch, TrainConfig, TrainData, TrainState};
use penet::Error;

use crate::Global;

/// Usage errors exit with 2, everything else with 1.
pub enum Outcome {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        Outcome::Runtime(e)
    }
}

type Res = std::result::Result<(), Outcome>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Outcome {
    Outcome::Runtime(Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Res {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn png(img: &Rgb, path: &Path) -> Res {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    Ok(save_png(img, path)?)
}

fn rng(g: &Global, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(g.seed());
    r.set_stream(stream);
    r
}

fn created(g: &Global) -> serde_json::Value {
    if g.deterministic {
        serde_json::Value::Null
    } else {
        json!(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    }
}

/// First `limit` frames of the corpus at `dir`.
fn frames(dir: &Path, limit: Option<usize>) -> std::result::Result<Vec<FrameRecord>, Outcome> {
    let corpus = read_corpus(dir)?;
    let n = limit.unwrap_or(corpus.len()).min(corpus.len());
    if n == 0 {
        return Err(Outcome::Usage(format!("no frames selected from {}", dir.display())));
    }
    Ok(corpus.frames.into_iter().take(n).collect())
}

fn skeleton(frame: &FrameRecord, config: &TrainConfig) -> std::result::Result<Rgb, Outcome> {
    Ok(render_skeleton(&frame.pose, &Palette::default(), config.stroke_width)?.pixels)
}

/// Loads `path`, applies `--seed`, and resolves a relative corpus path
/// against the config file's directory.
fn load_config(path: &Path, g: &Global) -> std::result::Result<TrainConfig, Outcome> {
    let mut config = TrainConfig::load(path)?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if config.corpus.is_empty() {
        return Err(Outcome::Usage(format!("{} does not name a corpus", path.display())));
    }
    let corpus = PathBuf::from(&config.corpus);
    if corpus.is_relative() {
        if let Some(dir) = path.parent() {
            config.corpus = dir.join(corpus).to_string_lossy().into_owned();
        }
    }
    config.validate()?;
    Ok(config)
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    signers: usize,
    /// Frames per signer.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Square canvas side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Motion amplitude, 1 is the default signing range.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
}

impl GenData {
    pub fn run(self, g: &Global) -> Res {
        let corpus = generate_corpus(&CorpusConfig {
            signers: self.signers,
            frames: self.frames,
            size: self.size,
            seed: g.seed(),
            amplitude: self.amplitude,
        })?;
        write_corpus(&corpus, &self.out)?;
        eprintln!("wrote {} frames to {}", corpus.len(), self.out.display());
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Train {
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Continue from this checkpoint; its config must hash identically.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, default_value = "penet.ckpt")]
    out: PathBuf,
    /// JSON-lines loss log; defaults to the checkpoint path with `.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Stop after this many total steps instead of the config's `steps`.
    #[arg(long)]
    until: Option<u64>,
}

impl Train {
    pub fn run(self, g: &Global) -> Res {
        let config = load_config(&self.config, g)?;
        let corpus = read_corpus(Path::new(&config.corpus))?;
        let data = TrainData::new(&corpus, &config)?;
        let mut state = match &self.resume {
            Some(p) => TrainState::load(p, Some(&config))?,
            None => TrainState::new(&config, &data, tch::Kind::Float)?,
        };
        let log = self.log.unwrap_or_else(|| self.out.with_extension("jsonl"));
        if self.resume.is_none() && log.exists() {
            std::fs::remove_file(&log).map_err(|e| io_err(&log, e))?;
        }
        let until = self.until.unwrap_or(config.steps).min(config.steps);
        if until < state.step {
            return Err(Outcome::Usage(format!("--until {until} is before the checkpoint's step {}", state.step)));
        }
        run(&mut state, &data, until, Some(&log))?;
        if let Some(p) = self.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
        }
        state.save(&self.out)?;
        if let Some(last) = state.history.last() {
            eprintln!("step {}: total {:.4}, d_loss {:.4}", state.step, last.total, last.d_loss);
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Sample {
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus directory whose poses and attributes condition the samples.
    #[arg(long)]
    poses: PathBuf,
    /// Prior draws per pose.
    #[arg(long, default_value_t = SAMPLES_PER_POSE)]
    n: usize,
    /// Use only the first poses.
    #[arg(long)]
    limit: Option<usize>,
    /// Output directory for per-sample PNGs and `grid.png`.
    #[arg(long)]
    out: PathBuf,
}

impl Sample {
    pub fn run(self, g: &Global) -> Res {
        if self.n == 0 {
            return Err(Outcome::Usage("--n must be at least 1".into()));
        }
        let state = TrainState::load(&self.ckpt, None)?;
        let frames = frames(&self.poses, self.limit)?;
        let draws = sample_draws(&state, &frames, self.n, &mut rng(g, 1))?;
        let mut sheet = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            sheet.push(skeleton(f, &state.config)?);
            for (j, draw) in draws.iter().enumerate() {
                png(&draw[i], &self.out.join(format!("pose{i:03}_sample{j}.png")))?;
                sheet.push(draw[i].clone());
            }
        }
        png(&tile(&sheet, self.n + 1, 2)?, &self.out.join("grid.png"))
    }
}

#[derive(Args, Debug)]
pub struct Evaluate {
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluation corpus; the pose estimator is fitted on its ground truth.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = SAMPLES_PER_POSE)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_HIT_THRESHOLD)]
    hit_threshold: f64,
    #[arg(long, default_value_t = EstimatorConfig::default().steps)]
    estimator_steps: usize,
    /// Directory for `metrics.json`, `regions.csv` and `pose.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn score_cells(s: &RegionScores) -> String {
    [s.ssim, s.psnr, s.fid]
        .iter()
        .map(|v| v.map(|v| format!("{:.4},{:.4}", v.mean, v.std)).unwrap_or_else(|| ",".into()))
        .collect::<Vec<_>>()
        .join(",")
}

impl Evaluate {
    pub fn run(self, g: &Global) -> Res {
        if self.n == 0 || !(0.0..=1.0).contains(&self.hit_threshold) {
            return Err(Outcome::Usage("--n must be positive and --hit-threshold within [0, 1]".into()));
        }
        let state = TrainState::load(&self.ckpt, None)?;
        let frames = frames(&self.corpus, self.limit)?;
        let draws = sample_draws(&state, &frames, self.n, &mut rng(g, 1))?;
        let regions = region_metrics(&frames, &draws, &state.models.extractor)?;

        let mut estimator = PoseEstimator::new(g.seed());
        let est_cfg = EstimatorConfig {
            steps: self.estimator_steps,
            seed: g.seed(),
            ..EstimatorConfig::default()
        };
        let train_error = estimator.train(&frames, &est_cfg)?;
        let mut r = rng(g, 2);
        let pose = pose_eval(&frames, |batch, _| sample_images(&state, batch, &mut r), &estimator, self.n, self.hit_threshold)?;

        let report = json!({
            "checkpoint_step": state.step,
            "config_hash": state.config.hash(),
            "frames": frames.len(),
            "samples_per_pose": self.n,
            "regions": regions,
            "pose": pose,
            "estimator_train_error_px": train_error,
            "created_unix": created(g),
        });
        let text = serde_json::to_string_pretty(&report).map_err(|e| io_err(&self.out, e))?;
        write(&self.out.join("metrics.json"), text.as_bytes())?;

        let mut csv = String::from("region,ssim_mean,ssim_std,psnr_mean,psnr_std,fid_mean,fid_std\n");
        for (name, s) in [("composite", &regions.composite), ("head", &regions.head), ("hand", &regions.hand), ("torso", &regions.torso)] {
            csv.push_str(&format!("{name},{}\n", score_cells(s)));
        }
        write(&self.out.join("regions.csv"), csv.as_bytes())?;

        let mut csv = String::from("region,l2_mean,l2_std,hit_rate,hits,total\n");
        for r in &pose.regions {
            let l2 = r.l2.map(|s| format!("{:.4},{:.4}", s.mean, s.std)).unwrap_or_else(|| ",".into());
            csv.push_str(&format!("{},{l2},{:.2},{},{}\n", r.region, r.hit_rate, r.hits, r.total));
        }
        write(&self.out.join("pose.csv"), csv.as_bytes())
    }
}

#[derive(Args, Debug)]
pub struct Ablate {
    /// Base config; each row overrides its own switches.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated row indices (0-10); all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    rows: Vec<usize>,
    /// Evaluation corpus; defaults to the training corpus.
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Directory for `ablation.csv` and `grid.png`.
    #[arg(long)]
    out: PathBuf,
}

impl Ablate {
    pub fn run(self, g: &Global) -> Res {
        let rows: Vec<usize> = if self.rows.is_empty() { (0..ABLATION_ROWS.len()).collect() } else { self.rows };
        if let Some(r) = rows.iter().find(|&&r| r >= ABLATION_ROWS.len()) {
            return Err(Outcome::Usage(format!("row {r} does not exist; rows are 0-{}", ABLATION_ROWS.len() - 1)));
        }
        if self.n == 0 {
            return Err(Outcome::Usage("--n must be at least 1".into()));
        }
        let base = load_config(&self.config, g)?;
        let train: Corpus = read_corpus(Path::new(&base.corpus))?;
        let eval = match &self.eval_corpus {
            Some(p) => frames(p, self.limit)?,
            None => train.frames.iter().take(self.limit.unwrap_or(train.len())).cloned().collect(),
        };
        if eval.is_empty() {
            return Err(Outcome::Usage("no evaluation frames".into()));
        }
        let results = run_ablation(&base, &train, &eval, &rows, self.n, |r| match &r.error {
            None => eprintln!("row {}: done", r.name),
            Some(e) => eprintln!("row {}: failed: {e}", r.name),
        });
        write(&self.out.join("ablation.csv"), ablation_csv(&results).as_bytes())?;
        png(&comparison_grid(&eval[0].image, &results)?, &self.out.join("grid.png"))
    }
}

/// Keypoint indices for a region name, `all`, or a comma-separated list.
fn joint_group(spec: &str) -> std::result::Result<Vec<usize>, Outcome> {
    if spec == "all" {
        return Ok((0..NUM_KEYPOINTS).collect());
    }
    if spec == "torso" {
        return joint_group("clothes");
    }
    if let Some((_, j)) = POSE_REGIONS.iter().find(|(n, _)| *n == spec) {
        return Ok(j.to_vec());
    }
    spec.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(j) if j < NUM_KEYPOINTS => Ok(j),
            _ => Err(Outcome::Usage(format!(
                "unknown joint group `{spec}`; use head, r_hand, l_hand, clothes, all or indices below {NUM_KEYPOINTS}"
            ))),
        })
        .collect()
}

#[derive(Args, Debug)]
pub struct PoseEdit {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Frame index within the corpus.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Joint group to move: head, r_hand, l_hand, clothes, all or indices.
    #[arg(long, default_value = "head")]
    joints: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    dx: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    dy: f64,
    /// Output PNG: original skeleton and synthesis, then the edited pair.
    #[arg(long)]
    out: PathBuf,
}

impl PoseEdit {
    pub fn run(self, g: &Global) -> Res {
        let joints = joint_group(&self.joints)?;
        let state = TrainState::load(&self.ckpt, None)?;
        let corpus = read_corpus(&self.corpus)?;
        let f = corpus
            .frames
            .get(self.frame)
            .ok_or_else(|| Outcome::Usage(format!("frame {} is out of range ({} frames)", self.frame, corpus.len())))?;
        let spec = corpus
            .manifest
            .signer(&f.signer_id)
            .ok_or_else(|| Outcome::Runtime(Error::Param(format!("signer {} missing from manifest", f.signer_id))))?;
        let edited_pose = f.pose.translated(&joints, self.dx, self.dy)?;
        let edited = render_frame(spec, &edited_pose, &f.signer_id)?;
        let batch = Batch::from_frames(&[f, &edited], &state.config)?;
        // one latent for both poses
        let z = sample_prior(&mut rng(g, 3), 1, state.config.latent, state.kind())?.repeat([2, 1]);
        let images = to_images(&state.synthesize(&batch, &z)?.1)?;
        let sheet = vec![
            skeleton(f, &state.config)?,
            images[0].clone(),
            skeleton(&edited, &state.config)?,
            images[1].clone(),
        ];
        png(&tile(&sheet, 4, 2)?, &self.out)
    }
}

#[derive(Args, Debug)]
pub struct Grid {
    /// Checkpoints to compare, one column each.
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// Number of poses, one row each.
    #[arg(long, default_value_t = 4)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
}

impl Grid {
    pub fn run(self, g: &Global) -> Res {
        let frames = frames(&self.corpus, Some(self.limit))?;
        let refs: Vec<&FrameRecord> = frames.iter().collect();
        let mut columns = Vec::with_capacity(self.ckpts.len());
        for p in &self.ckpts {
            let state = TrainState::load(p, None)?;
            // same draws for every checkpoint
            columns.push(to_images(&sample_images(&state, &refs, &mut rng(g, 4))?)?);
        }
        let mut sheet = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            sheet.push(f.image.clone());
            sheet.extend(columns.iter().map(|c| c[i].clone()));
        }
        png(&tile(&sheet, self.ckpts.len() + 1, 2)?, &self.out)
    }
}

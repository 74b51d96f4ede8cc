use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{region_metrics, sample_draws, RegionMetrics, RegionScores};
use crate::error::{param, Result};
use crate::generator::PartDecoders;
use crate::imageops::{tile, Rgb};
use crate::nn::{PsiKind, SkipMode};
use crate::pevae::{FuseKind, FusionScheme};
use crate::synthdata::{Corpus, FrameRecord};
use crate::trainer::{run, TrainConfig, TrainData, TrainState};

/// The PENet block of the comparison table, in order.
pub const ABLATION_ROWS: [&str; 11] = [
    "w/o L_edge",
    "L_edge",
    "f_xy (Conv)",
    "PE (concat)",
    "PE (shared)",
    "PE (separate)",
    "w/o f_skip",
    "w/o f_skip & Psi",
    "Psi (Conv)",
    "w/o m_hand",
    "full model",
];

/// Rows reported by other systems; emitted empty.
pub const EXTERNAL_BASELINES: [&str; 2] = ["Libras", "Anonysign"];

/// Configuration of ablation row `row` on top of `base`. Rows before the
/// last two use one decoder for all parts.
pub fn ablation_config(base: &TrainConfig, row: usize) -> Result<TrainConfig> {
    let mut c = TrainConfig {
        fusion: FusionScheme::Separate,
        fuse: FuseKind::Mha,
        pose_in_posterior: true,
        skip: SkipMode::Full,
        psi: PsiKind::Modulate,
        parts: PartDecoders::Single,
        ..base.clone()
    };
    match row {
        0 => {
            c.pose_in_posterior = false;
            c.weights.lambda_edge = 0.0;
        }
        1 => c.pose_in_posterior = false,
        2 => c.fuse = FuseKind::Conv,
        3 => c.fusion = FusionScheme::Early,
        4 => c.fusion = FusionScheme::Shared,
        5 => {}
        6 => c.skip = SkipMode::NoSkip,
        7 => c.skip = SkipMode::NoSkipNoPsi,
        8 => c.psi = PsiKind::Conv,
        9 => c.parts = PartDecoders::HeadTorso,
        10 => c.parts = PartDecoders::Full,
        _ => return Err(param(format!("ablation row {row} does not exist"))),
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub name: String,
    pub metrics: Option<RegionMetrics>,
    pub error: Option<String>,
    /// First draw for the first evaluation frame.
    pub preview: Option<Rgb>,
}

fn train_and_evaluate(config: &TrainConfig, train: &Corpus, eval: &[FrameRecord], n_samples: usize) -> Result<(RegionMetrics, Rgb)> {
    let data = TrainData::new(train, config)?;
    let mut state = TrainState::new(config, &data, tch::Kind::Float)?;
    run(&mut state, &data, config.steps, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0xab1a);
    let draws = sample_draws(&state, eval, n_samples, &mut rng)?;
    let metrics = region_metrics(eval, &draws, &state.models.extractor)?;
    Ok((metrics, draws[0][0].clone()))
}

/// Trains and evaluates each requested row with the base seed. A failing
/// row is recorded and the remaining rows still run.
pub fn run_ablation(
    base: &TrainConfig,
    train: &Corpus,
    eval: &[FrameRecord],
    rows: &[usize],
    n_samples: usize,
    mut on_row: impl FnMut(&AblationResult),
) -> Vec<AblationResult> {
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let name = ABLATION_ROWS.get(row).copied().unwrap_or("unknown").to_string();
        let outcome = ablation_config(base, row).and_then(|cfg| {
            catch_unwind(AssertUnwindSafe(|| train_and_evaluate(&cfg, train, eval, n_samples)))
                .unwrap_or_else(|p| Err(param(format!("row panicked: {}", panic_text(&p)))))
        });
        let result = match outcome {
            Ok((m, preview)) => AblationResult {
                name,
                metrics: Some(m),
                error: None,
                preview: Some(preview),
            },
            Err(e) => AblationResult {
                name,
                metrics: None,
                error: Some(e.to_string()),
                preview: None,
            },
        };
        on_row(&result);
        out.push(result);
    }
    out
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn cell(s: Option<super::Summary>) -> String {
    s.map(|s| format!("{:.4},{:.4}", s.mean, s.std)).unwrap_or_else(|| ",".into())
}

/// Table-shaped CSV: SSIM, PSNR and FID for head, hand and torso, then the
/// composite SSIM and PSNR. External baselines come first with empty cells.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("model");
    for metric in ["ssim", "psnr", "fid"] {
        for region in ["head", "hand", "torso"] {
            let _ = write!(s, ",{metric}_{region},{metric}_{region}_std");
        }
    }
    s.push_str(",ssim_composite,ssim_composite_std,psnr_composite,psnr_composite_std,status\n");
    let empty = ",".repeat(2 * 9 + 4);
    for b in EXTERNAL_BASELINES {
        let _ = writeln!(s, "{b}{empty},external");
    }
    for r in results {
        let _ = write!(s, "{}", r.name.replace(',', ";"));
        match &r.metrics {
            Some(m) => {
                let regions: [&RegionScores; 3] = [&m.head, &m.hand, &m.torso];
                for pick in [|r: &RegionScores| r.ssim, |r: &RegionScores| r.psnr, |r: &RegionScores| r.fid] {
                    for reg in regions {
                        let _ = write!(s, ",{}", cell(pick(reg)));
                    }
                }
                let _ = writeln!(s, ",{},{},ok", cell(m.composite.ssim), cell(m.composite.psnr));
            }
            None => {
                let msg = r.error.clone().unwrap_or_default().replace([',', '\n'], ";");
                let _ = writeln!(s, "{empty},failed: {msg}");
            }
        }
    }
    s
}

/// Ground truth followed by each row's preview; failed rows are black.
pub fn comparison_grid(ground_truth: &Rgb, results: &[AblationResult]) -> Result<Rgb> {
    let mut images = vec![ground_truth.clone()];
    images.extend(results.iter().map(|r| r.preview.clone().unwrap_or_else(|| Rgb::zeros(ground_truth.dim()))));
    tile(&images, images.len(), 2)
}

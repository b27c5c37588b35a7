use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::CommandFactory;
use psvh_core::datagen::{generate_dataset, load_dataset, rotate_pose, PoseFile, Sample, Split};
use psvh_core::eval::{
    aggregate, bucket_table, evaluate, hull_containment, spearman, write_aggregate_csv, write_eval_csv, PoseSource,
    Refinement, SilhouetteSource, HULL_THRESHOLD,
};
use psvh_core::geometry::{pose_rotation_error, Pose};
use psvh_core::psvh::{gradcheck as run_gradcheck, psvh_forward, GradcheckPath};
use psvh_core::refine::{pose_fit, rnet_train, write_train_log, RefineSample, RefinerParams};
use psvh_core::silhouette::{box_blur, degrade_silhouette, load_pgm, render_silhouette, save_pgm, DegradeParams};
use psvh_core::voxelgrid::{iou, load_grid, save_grid, VoxelGrid, IOU_THRESHOLD};
use psvh_core::CameraIntrinsics;
use serde::Serialize;

use crate::config::{RunConfig, TrainPhase};
use crate::exit::{tolerance, usage};
use crate::{
    Baseline, Cli, DegradeArgs, EvalArgs, GenArgs, GradcheckArgs, HullArgs, PoseArg, PosefitArgs, RefineArgs,
    RenderArgs, SplitArg, TrainArgs, WhichPose,
};

pub const REFINE_HEADER: &str = "sample_id,iou_coarse,iou_refined,iou_gain";

/// Output path, or a usage error naming the subcommand.
fn require_out(cfg: &RunConfig, sub: &str) -> PathBuf {
    match &cfg.out {
        Some(p) => p.clone(),
        None => Cli::command()
            .error(ErrorKind::MissingRequiredArgument, format!("`{sub}` needs an output path: pass --out <PATH>"))
            .exit(),
    }
}

fn require_path(p: Option<PathBuf>, flag: &str, sub: &str) -> PathBuf {
    match p {
        Some(p) => p,
        None => {
            Cli::command().error(ErrorKind::MissingRequiredArgument, format!("`{sub}` needs --{flag} <PATH>")).exit()
        }
    }
}

fn apply_degrade(d: &mut DegradeParams, a: &DegradeArgs) {
    if let Some(v) = a.blur {
        d.blur_radius = v;
    }
    if let Some(v) = a.dilate {
        d.dilate_px = v;
    }
    if let Some(v) = a.erode {
        d.erode_px = v;
    }
    if let Some(v) = a.flip {
        d.flip_rate = v;
    }
}

fn read_pose_file(path: &Path) -> anyhow::Result<PoseFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn pick(p: &PoseFile, which: WhichPose) -> Pose {
    match which {
        WhichPose::Gt => p.gt,
        WhichPose::Est => p.est,
    }
}

fn load_grid_at(path: &Path) -> anyhow::Result<VoxelGrid> {
    load_grid(path).with_context(|| format!("reading grid {}", path.display()))
}

pub fn gen(cfg: &mut RunConfig, a: GenArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "gen");
    let d = &mut cfg.dataset;
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(a.shapes, d.n_shapes);
    set!(a.views, d.views_per_shape);
    set!(a.dim, d.dim);
    set!(a.image_size, d.image_size);
    set!(a.focal, d.focal);
    set!(a.test_fraction, d.test_fraction);
    set!(a.rot_sigma, d.noise.rot_sigma_deg);
    set!(a.trans_sigma, d.noise.trans_sigma);
    set!(a.drop, d.noise.corrupt.drop_components);
    set!(a.blobs, d.noise.corrupt.blobs);
    set!(a.noise_sigma, d.noise.corrupt.noise_sigma);
    if let Some(kinds) = a.kinds {
        d.kinds = kinds.iter().map(|k| k.parse()).collect::<Result<_, _>>().map_err(usage)?;
    }
    apply_degrade(&mut d.noise.degrade, &a.degrade);
    d.validate().map_err(usage)?;
    let t = Instant::now();
    let m = generate_dataset(&out, d).with_context(|| format!("writing dataset to {}", out.display()))?;
    eprintln!(
        "generated {} samples ({} train, {} test) in {:.1}s",
        m.samples.len(),
        m.count(Split::Train),
        m.count(Split::Test),
        t.elapsed().as_secs_f64()
    );
    println!("{}", out.join(psvh_core::datagen::MANIFEST_FILE).display());
    Ok(())
}

pub fn hull(cfg: &RunConfig, a: HullArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "hull");
    let sil = load_pgm(&a.sil).with_context(|| format!("reading silhouette {}", a.sil.display()))?;
    let poses = read_pose_file(&a.pose)?;
    let mut pose = pick(&poses, a.which);
    if a.rotate_deg != 0.0 {
        pose = rotate_pose(&pose, a.rotate_deg, cfg.seed());
    }
    if sil.values().iter().all(|&v| v == 0.0) {
        eprintln!("warning: silhouette is empty; the hull will be empty");
    }
    let h = psvh_forward(&sil, &pose, &poses.intrinsics, a.dim)?;
    save_grid(&out, &h.hull).with_context(|| format!("writing {}", out.display()))?;
    println!("off_image_fraction,{:.6}", h.off_image as f64 / h.hull.len() as f64);
    if let Some(gt) = a.gt {
        let v = load_grid_at(&gt)?;
        println!("containment,{:.6}", hull_containment(&h.hull, &v, HULL_THRESHOLD)?);
    }
    Ok(())
}

pub fn refine(cfg: &RunConfig, a: RefineArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "refine");
    let coarse = load_grid_at(&a.coarse)?;
    let hull = load_grid_at(&a.hull)?;
    let params;
    let refinement = match (a.baseline, a.model.as_ref().or(cfg.model.as_ref())) {
        (Some(Baseline::Carve), _) => Refinement::Carve(a.tau),
        (Some(Baseline::Identity), _) => Refinement::Identity,
        (None, Some(m)) => {
            params = RefinerParams::load(m).with_context(|| format!("loading model {}", m.display()))?;
            Refinement::Network(&params)
        }
        (None, None) => return Err(usage(anyhow::anyhow!("pass --model or --baseline"))),
    };
    let refined = refinement.apply(&coarse, &hull)?;
    save_grid(&out, &refined).with_context(|| format!("writing {}", out.display()))?;
    if let Some(gt) = a.gt {
        let v = load_grid_at(&gt)?;
        let (c, r) = (iou(&coarse, &v, IOU_THRESHOLD)?, iou(&refined, &v, IOU_THRESHOLD)?);
        let row = format!("{},{c:.6},{r:.6},{:.6}", a.id, r - c);
        println!("{REFINE_HEADER}\n{row}");
        if let Some(csv) = a.csv {
            let fresh = !csv.exists() || std::fs::metadata(&csv)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(&csv)?;
            if fresh {
                writeln!(f, "{REFINE_HEADER}")?;
            }
            writeln!(f, "{row}")?;
        }
    }
    Ok(())
}

fn load_data(cfg: &RunConfig, data: Option<PathBuf>, sub: &str) -> anyhow::Result<(CameraIntrinsics, Vec<Sample>)> {
    let dir = require_path(data.or_else(|| cfg.data.clone()), "data", sub);
    let (m, samples) = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok((m.intrinsics, samples))
}

fn refine_samples(
    samples: &[Sample],
    k: &CameraIntrinsics,
    split: Split,
    noisy: bool,
) -> anyhow::Result<Vec<RefineSample>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .filter(|s| s.split == split)
        .map(|s| {
            let hull = if noisy { s.noisy_hull(k)? } else { s.gt_hull(k)? };
            Ok(RefineSample { coarse: s.v_coarse.clone(), hull, target: s.v_gt.clone() })
        })
        .collect()
}

pub fn train(cfg: &mut RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "train");
    let r = &mut cfg.refiner;
    if let Some(v) = a.epochs {
        r.epochs = v;
    }
    if let Some(v) = a.lr {
        r.lr = v;
    }
    if let Some(v) = a.batch_size {
        r.batch_size = v;
    }
    if let Some(v) = a.phase {
        cfg.train.phase = v;
    }
    if let Some(v) = a.noisy_epochs {
        cfg.train.noisy_epochs = v;
    }
    cfg.refiner.validate().map_err(usage)?;
    let (k, samples) = load_data(cfg, a.data, "train")?;
    let mut params = match &a.init {
        Some(p) => Some(RefinerParams::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    std::fs::create_dir_all(&out)?;
    let phases: &[(TrainPhase, bool)] = match cfg.train.phase {
        TrainPhase::Gt => &[(TrainPhase::Gt, false)],
        TrainPhase::Noisy => &[(TrainPhase::Noisy, true)],
        TrainPhase::Both => &[(TrainPhase::Gt, false), (TrainPhase::Noisy, true)],
    };
    for &(phase, noisy) in phases {
        let t = Instant::now();
        let train = refine_samples(&samples, &k, Split::Train, noisy)?;
        let holdout = refine_samples(&samples, &k, Split::Test, noisy)?;
        let mut rc = cfg.refiner.clone();
        if noisy && cfg.train.phase == TrainPhase::Both {
            rc.epochs = cfg.train.noisy_epochs;
        }
        let (p, log) = rnet_train(&train, &holdout, &rc, params.take())?;
        let name = match phase {
            TrainPhase::Gt => "train_log_gt.csv",
            _ => "train_log_noisy.csv",
        };
        write_train_log(std::fs::File::create(out.join(name))?, &log)?;
        if let Some(last) = log.last() {
            eprintln!(
                "{name}: {} epochs in {:.1}s, loss {:.5}, holdout IoU {:.4} -> {:.4}",
                log.len(),
                t.elapsed().as_secs_f64(),
                last.loss,
                last.holdout_iou_coarse,
                last.holdout_iou_refined
            );
        }
        params = Some(p);
    }
    let model = out.join("model.params");
    params.expect("at least one phase ran").save(&model)?;
    println!("{}", model.display());
    Ok(())
}

pub fn eval(cfg: &mut RunConfig, a: EvalArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "eval");
    let e = &mut cfg.eval;
    if let Some(p) = a.pose {
        e.pose = match p {
            PoseArg::Gt => PoseSource::Gt,
            PoseArg::Est => PoseSource::Estimated,
            PoseArg::Sweep => PoseSource::Sweep,
        };
    }
    if let Some(s) = a.silhouette {
        e.silhouette = match s {
            WhichPose::Gt => SilhouetteSource::Gt,
            WhichPose::Est => SilhouetteSource::Estimated,
        };
    }
    if let Some(b) = a.buckets {
        e.rot_buckets_deg = b;
    }
    e.validate().map_err(usage)?;
    let params;
    let refinement = match (a.baseline, a.model.or_else(|| cfg.model.clone())) {
        (Some(Baseline::Carve), _) => Refinement::Carve(psvh_core::refine::DEFAULT_CARVE_TAU),
        (Some(Baseline::Identity), _) => Refinement::Identity,
        (None, Some(m)) => {
            params = RefinerParams::load(&m).with_context(|| format!("loading model {}", m.display()))?;
            if a.no_hull {
                Refinement::NetworkNoHull(&params)
            } else {
                Refinement::Network(&params)
            }
        }
        (None, None) => return Err(usage(anyhow::anyhow!("pass --model or --baseline"))),
    };
    let (k, mut samples) = load_data(cfg, a.data, "eval")?;
    match a.split {
        SplitArg::Train => samples.retain(|s| s.split == Split::Train),
        SplitArg::Test => samples.retain(|s| s.split == Split::Test),
        SplitArg::All => {}
    }
    let rows = evaluate(&samples, &k, &refinement, &cfg.eval)?;
    let refs: Vec<_> = rows.iter().collect();
    let all = aggregate("all", &refs)?;
    let buckets = bucket_table(&rows)?;
    std::fs::create_dir_all(&out)?;
    write_eval_csv(std::fs::File::create(out.join("eval_rows.csv"))?, &rows)?;
    write_aggregate_csv(std::fs::File::create(out.join("eval_buckets.csv"))?, &buckets)?;
    write_aggregate_csv(std::fs::File::create(out.join("eval_summary.csv"))?, std::slice::from_ref(&all))?;
    println!(
        "rows {} | iou coarse {:.4} refined {:.4} gain {:+.4} | containment {:.4}",
        all.n, all.iou_coarse, all.iou_refined, all.iou_gain, all.hull_containment
    );
    for b in &buckets {
        println!("{:>12}: n {:4} gain {:+.4} containment {:.4}", b.label, b.n, b.iou_gain, b.hull_containment);
    }
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.rotation_error_deg).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.iou_gain).collect();
        println!("spearman(gain, rotation error) {:.4}", spearman(&x, &y)?);
    }
    Ok(())
}

pub fn gradcheck(cfg: &mut RunConfig, a: GradcheckArgs) -> anyhow::Result<()> {
    let c = &mut cfg.gradcheck;
    if let Some(v) = a.dim {
        c.dim = v;
    }
    if let Some(v) = a.blur {
        c.blur_radius = v;
    }
    if let Some(v) = a.pose_tol {
        c.pose_tol = v;
    }
    if let Some(v) = a.silhouette_tol {
        c.silhouette_tol = v;
    }
    c.binarize |= a.binarize;
    c.validate().map_err(usage)?;
    let mut csv = match &cfg.out {
        Some(p) => Some(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    let paths = [GradcheckPath::Pose, GradcheckPath::Silhouette];
    let mut failures = Vec::new();
    let (mut worst_pose, mut worst_sil) = (0.0f64, 0.0f64);
    for seed in cfg.seed()..cfg.seed() + a.cases {
        let report = run_gradcheck(&cfg.gradcheck, seed, &paths)?;
        if let Some(f) = csv.as_mut() {
            report.write_csv(f)?;
        }
        worst_sil = worst_sil.max(report.max_rel_silhouette);
        match (report.max_rel_pose, &report.pose_ineligible) {
            (Some(e), _) => worst_pose = worst_pose.max(e),
            (None, Some(why)) => eprintln!("seed {seed}: pose path skipped: {why}"),
            (None, None) => {}
        }
        if !report.passed() {
            failures.push(seed);
        }
    }
    println!("max_rel_error_pose,{worst_pose:.3e}\nmax_rel_error_silhouette,{worst_sil:.3e}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(tolerance(format!("gradient check exceeded tolerance for seeds {failures:?}")))
    }
}

#[derive(Serialize)]
struct PosefitReport {
    start: Pose,
    fitted: Pose,
    gt: Pose,
    start_error_deg: f64,
    final_error_deg: f64,
    loss: f64,
    trace: Vec<f64>,
}

pub fn posefit(cfg: &mut RunConfig, a: PosefitArgs) -> anyhow::Result<()> {
    let (grid, sil, pose) = match (&a.sample, &a.grid) {
        (Some(dir), _) => (dir.join("vgt.grid"), dir.join("sil.pgm"), dir.join("pose.json")),
        (None, Some(g)) => {
            (g.clone(), a.sil.clone().expect("required by clap"), a.pose.clone().expect("required by clap"))
        }
        (None, None) => return Err(usage(anyhow::anyhow!("pass --sample or --grid/--sil/--pose"))),
    };
    if let Some(v) = a.blur {
        cfg.posefit.blur_radius = v;
    }
    if let Some(v) = a.steps {
        cfg.posefit.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.posefit.lr = v;
    }
    cfg.posefit.fit_translation |= a.fit_translation;
    let v = load_grid_at(&grid)?;
    let mut s = load_pgm(&sil).with_context(|| format!("reading silhouette {}", sil.display()))?;
    if a.binarize {
        s = s.map(|x| if x >= 0.5 { 1.0 } else { 0.0 });
    }
    let poses = read_pose_file(&pose)?;
    let observed = box_blur(&s, cfg.posefit.blur_radius);
    let start = rotate_pose(&poses.gt, a.perturb_deg, cfg.seed());
    let fit = pose_fit(&v, &observed, &poses.intrinsics, &start, &cfg.posefit)?;
    let report = PosefitReport {
        start,
        fitted: fit.pose,
        gt: poses.gt,
        start_error_deg: pose_rotation_error(&start, &poses.gt),
        final_error_deg: pose_rotation_error(&fit.pose, &poses.gt),
        loss: fit.loss,
        trace: fit.trace,
    };
    println!("start_error_deg,{:.4}\nfinal_error_deg,{:.4}", report.start_error_deg, report.final_error_deg);
    if let Some(out) = &cfg.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    match a.max_error_deg {
        Some(tol) if report.final_error_deg > tol => {
            Err(tolerance(format!("final rotation error {:.4}° exceeds {tol}°", report.final_error_deg)))
        }
        _ => Ok(()),
    }
}

pub fn render(cfg: &RunConfig, a: RenderArgs) -> anyhow::Result<()> {
    let out = require_out(cfg, "render");
    let v = load_grid_at(&a.grid)?;
    let poses = read_pose_file(&a.pose)?;
    let s = render_silhouette(&v, &pick(&poses, a.which), &poses.intrinsics, a.image_size, a.image_size)?;
    let mut d = DegradeParams::default();
    apply_degrade(&mut d, &a.degrade);
    let s = degrade_silhouette(&s, cfg.seed(), &d)?;
    save_pgm(&out, &s).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

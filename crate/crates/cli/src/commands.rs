//! One function per subcommand. Results print to stdout as JSON; every file
//! written gets a provenance sidecar naming the command, config hash, and
//! seed that produced it.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rppg_core::attention::MhsaTrace;
use rppg_core::io::{read_bvp, read_clip, write_bvp, write_clip, write_sidecar, Provenance};
use rppg_core::losses::{loss_gradients, overall_loss, LossWeights};
use rppg_core::model::{load_checkpoint, model_forward, model_forward_traced, model_summary, ModelParams};
use rppg_core::signal::{
    butterworth_bandpass, estimate_hr, green_baseline, hr_metrics, pos_baseline, snr_metric, FilterSpec,
};
use rppg_core::video::{crop_window, generate_synthetic_clip, HrTrajectory, Rect, SyntheticSceneSpec};
use rppg_core::{BvpSignal64, VideoClip64, HR_BAND_HZ};

use crate::config::{hash_str, RunConfig};
use crate::{AttnDumpArgs, BaselineArgs, BaselineMethod, CliError, EvalArgs, ForwardArgs, HrArgs, LossArgs, SummaryArgs, SynthArgs};

fn provenance(command: &str, config_sha256: String, seed: u64) -> Provenance {
    Provenance { command: command.to_string(), config_sha256, seed }
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let hr = match a.hr_end {
        Some(end) => HrTrajectory::Linear { start_bpm: a.hr, end_bpm: end },
        None => HrTrajectory::Constant(a.hr),
    };
    let scene = SyntheticSceneSpec {
        t: a.frames,
        h: a.height,
        w: a.width,
        fps: a.fps,
        hr,
        pulse_amplitude: a.amplitude,
        channel_weights: [0.4, 1.0, 0.6],
        noise_sigma: a.noise,
        motion_amplitude_px: a.motion,
        seed: a.seed,
    };
    let (clip, bvp) = generate_synthetic_clip::<f64>(&scene)?;
    let (header, _) = write_clip(&a.out, &a.name, &clip)?;
    let bvp_path = a.out.join(format!("{}_bvp.csv", a.name));
    write_bvp(&bvp_path, &bvp)?;

    let prov = provenance("synth", hash_str(&format!("{scene:?}")), a.seed);
    write_sidecar(&header, &prov)?;
    write_sidecar(&bvp_path, &prov)?;
    emit(serde_json::json!({
        "clip": header,
        "bvp": bvp_path,
        "frames": a.frames,
        "hr_bpm": a.hr,
    }));
    Ok(())
}

/// Loads the clip and matches it to the configured geometry, resizing
/// spatially through the same bilinear window used for dataset crops.
fn conform_clip(clip: VideoClip64, run: &RunConfig) -> Result<VideoClip64, CliError> {
    let (h, w) = (run.input.height, run.input.width);
    if clip.height() == h && clip.width() == w {
        return Ok(clip);
    }
    let full = Rect::full(clip.height(), clip.width());
    Ok(crop_window(&clip, full, (h, w))?)
}

fn model_params(run: &RunConfig, weights: &Option<PathBuf>) -> Result<ModelParams<f64>, CliError> {
    let cfg = run.model_config();
    match weights {
        Some(path) => Ok(load_checkpoint(path, &cfg)?),
        None => Ok(ModelParams::init(&cfg)?),
    }
}

pub fn forward(a: ForwardArgs) -> Result<(), CliError> {
    let run = RunConfig::load(&a.config)?;
    let cfg = run.model_config();
    let params = model_params(&run, &a.weights)?;
    let clip = conform_clip(read_clip::<f64>(&a.clip)?, &run)?;
    let bvp = model_forward(&clip, &cfg, &params)?;

    let bvp_path = a.out.join(format!("{}_bvp.csv", a.name));
    write_bvp(&bvp_path, &bvp)?;
    write_sidecar(&bvp_path, &provenance("forward", run.sha256(), cfg.seed))?;
    emit(serde_json::json!({ "bvp": bvp_path, "frames": bvp.samples().len() }));
    Ok(())
}

pub fn loss(a: LossArgs) -> Result<(), CliError> {
    let pred: BvpSignal64 = read_bvp(&a.pred)?;
    let gt: BvpSignal64 = read_bvp(&a.gt)?;
    let weights = LossWeights { time: a.w_time, freq: a.w_freq, hr: a.w_hr };
    let breakdown = overall_loss(&pred, &gt, &weights, a.sigma)?;

    if let Some(grad_path) = &a.grad_out {
        let grad = loss_gradients(&pred, &gt, &weights)?;
        if let Some(parent) = grad_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(grad_path)?);
        writeln!(w, "index,gradient")?;
        for (i, g) in grad.iter().enumerate() {
            writeln!(w, "{i},{g:.12e}")?;
        }
        w.flush()?;
        let knobs = format!("w=({},{},{}) sigma={}", a.w_time, a.w_freq, a.w_hr, a.sigma);
        write_sidecar(grad_path, &provenance("loss", hash_str(&knobs), 0))?;
    }
    emit(serde_json::json!({
        "time": breakdown.time,
        "freq": breakdown.freq,
        "hr": breakdown.hr,
        "total": breakdown.total,
        "constant_pred": breakdown.constant_pred,
    }));
    Ok(())
}

pub fn hr(a: HrArgs) -> Result<(), CliError> {
    let mut bvp: BvpSignal64 = read_bvp(&a.bvp)?;
    if a.filter {
        bvp = butterworth_bandpass(&bvp, &FilterSpec::default_hr(bvp.fs()))?;
    }
    let est = estimate_hr(&bvp, [a.band_lo, a.band_hi])?;
    emit(serde_json::json!({ "bpm": est.bpm, "freq_hz": est.freq_hz, "bin_hz": est.bin_hz }));
    Ok(())
}

struct PairOutcome {
    pred_bpm: f64,
    gt_bpm: f64,
    snr_db: f64,
    snr_clamped: bool,
}

fn eval_pair(pred_path: &Path, gt_path: &Path, filter: bool) -> Result<PairOutcome, CliError> {
    let mut pred: BvpSignal64 = read_bvp(pred_path)?;
    let gt: BvpSignal64 = read_bvp(gt_path)?;
    if filter {
        pred = butterworth_bandpass(&pred, &FilterSpec::default_hr(pred.fs()))?;
    }
    let gt_bpm = estimate_hr(&gt, HR_BAND_HZ)?.bpm;
    let pred_bpm = estimate_hr(&pred, HR_BAND_HZ)?.bpm;
    let snr = snr_metric(&pred, gt_bpm)?;
    Ok(PairOutcome { pred_bpm, gt_bpm, snr_db: snr.db, snr_clamped: snr.clamped })
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let pairs: Vec<(PathBuf, PathBuf)> = a
        .pairs
        .iter()
        .map(|p| {
            p.split_once(',')
                .map(|(x, y)| (PathBuf::from(x), PathBuf::from(y)))
                .ok_or_else(|| CliError::new("usage", format!("--pair wants pred.csv,gt.csv, got {p}")))
        })
        .collect::<Result<_, _>>()?;
    if a.jobs == 0 {
        return Err(CliError::new("usage", "--jobs must be at least 1"));
    }

    let outcomes: Mutex<Vec<Option<Result<PairOutcome, CliError>>>> =
        Mutex::new((0..pairs.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.min(pairs.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= pairs.len() {
                    break;
                }
                let res = eval_pair(&pairs[i].0, &pairs[i].1, a.filter);
                outcomes.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let mut pred_hrs = Vec::with_capacity(pairs.len());
    let mut gt_hrs = Vec::with_capacity(pairs.len());
    let mut rows = Vec::with_capacity(pairs.len());
    for slot in outcomes.into_inner().unwrap() {
        let o = slot.expect("every pair visited")?;
        pred_hrs.push(o.pred_bpm);
        gt_hrs.push(o.gt_bpm);
        rows.push(o);
    }

    let mut metrics = hr_metrics(&pred_hrs, &gt_hrs)?;
    metrics.snr_db = Some(rows.iter().map(|r| r.snr_db).sum::<f64>() / rows.len() as f64);

    std::fs::create_dir_all(&a.out)?;
    let prov = provenance("eval", hash_str(&a.pairs.join(";")), 0);

    let clips_path = a.out.join("clips.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&clips_path)?);
        writeln!(w, "pred,gt,pred_bpm,gt_bpm,snr_db,snr_clamped")?;
        for ((pred, gt), o) in pairs.iter().zip(&rows) {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{}",
                pred.display(),
                gt.display(),
                o.pred_bpm,
                o.gt_bpm,
                o.snr_db,
                o.snr_clamped
            )?;
        }
        w.flush()?;
    }
    write_sidecar(&clips_path, &prov)?;

    let ba_path = a.out.join("bland_altman.csv");
    {
        let points = rppg_core::signal::bland_altman(&pred_hrs, &gt_hrs)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&ba_path)?);
        writeln!(w, "mean_bpm,diff_bpm")?;
        for (mean, diff) in points {
            writeln!(w, "{mean:.6},{diff:.6}")?;
        }
        w.flush()?;
    }
    write_sidecar(&ba_path, &prov)?;

    let metrics_json = serde_json::json!({
        "clips": pairs.len(),
        "mae_bpm": metrics.mae,
        "rmse_bpm": metrics.rmse,
        "mape_percent": metrics.mape,
        "pearson_rho": metrics.pearson_rho,
        "snr_db": metrics.snr_db,
    });
    let metrics_path = a.out.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&metrics_json)?)?;
    write_sidecar(&metrics_path, &prov)?;
    emit(metrics_json);
    Ok(())
}

fn parse_roi(arg: &Option<String>, clip: &VideoClip64) -> Result<Rect, CliError> {
    match arg {
        None => Ok(Rect::full(clip.height(), clip.width())),
        Some(text) => {
            let parts: Vec<f64> = text.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>()
                .map_err(|_| CliError::new("usage", format!("--roi wants x,y,w,h, got {text}")))?;
            if parts.len() != 4 {
                return Err(CliError::new("usage", format!("--roi wants four numbers, got {text}")));
            }
            Ok(Rect { x: parts[0], y: parts[1], w: parts[2], h: parts[3] })
        }
    }
}

pub fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    let clip: VideoClip64 = read_clip(&a.clip)?;
    let roi = parse_roi(&a.roi, &clip)?;
    let bvp = match a.method {
        BaselineMethod::Pos => pos_baseline(&clip, roi)?,
        BaselineMethod::Green => green_baseline(&clip, roi)?,
    };
    let est = estimate_hr(&bvp, HR_BAND_HZ)?;

    let bvp_path = a.out.join(format!("{}_bvp.csv", a.name));
    write_bvp(&bvp_path, &bvp)?;
    let knobs = format!("method={:?} roi={roi:?}", a.method);
    write_sidecar(&bvp_path, &provenance("baseline", hash_str(&knobs), 0))?;
    emit(serde_json::json!({ "bvp": bvp_path, "bpm": est.bpm }));
    Ok(())
}

pub fn attn_dump(a: AttnDumpArgs) -> Result<(), CliError> {
    let run = RunConfig::load(&a.config)?;
    let cfg = run.model_config();
    let params = model_params(&run, &a.weights)?;
    let clip = conform_clip(read_clip::<f64>(&a.clip)?, &run)?;

    let mut traces: Vec<MhsaTrace<f64>> = Vec::new();
    model_forward_traced(&clip, &cfg, &params, Some(&mut traces))?;
    if a.stage >= traces.len() {
        return Err(CliError::new("usage", format!("stage {} beyond the {}-block schedule", a.stage, traces.len())));
    }
    let trace = &traces[a.stage];
    let scores = trace.pre_scores.as_ref().expect("trace captured scores");
    let routes = trace.routes.as_ref().expect("trace captured routes");
    let grid = trace.grid.as_ref().expect("trace captured the grid");
    let tokens = grid.token_count();
    if a.query >= tokens {
        return Err(CliError::new("usage", format!("query token {} beyond the {tokens}-token grid", a.query)));
    }

    std::fs::create_dir_all(&a.out)?;
    let knobs = format!("stage={} query={}", a.stage, a.query);
    let prov = provenance("attn-dump", format!("{}:{}", run.sha256(), hash_str(&knobs)), cfg.seed);

    let regions = grid.region_count();
    let scores_path = a.out.join("pre_scores.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&scores_path)?);
        writeln!(w, "query_region,key_region,score")?;
        for q in 0..regions {
            for k in 0..regions {
                writeln!(w, "{q},{k},{:.12e}", scores.at(&[q, k]))?;
            }
        }
        w.flush()?;
    }
    write_sidecar(&scores_path, &prov)?;

    let routing_path = a.out.join("routing.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&routing_path)?);
        writeln!(w, "query_region,rank,key_region")?;
        for (q, row) in routes.rows.iter().enumerate() {
            for (rank, k) in row.iter().enumerate() {
                writeln!(w, "{q},{rank},{k}")?;
            }
        }
        w.flush()?;
    }
    write_sidecar(&routing_path, &prov)?;

    // gathered key tokens for the query's region, in route-then-member order
    let query_region = grid
        .members
        .iter()
        .position(|m| m.contains(&a.query))
        .expect("every token belongs to a region");
    let gathered: Vec<usize> = routes.rows[query_region]
        .iter()
        .flat_map(|&r| grid.members[r].iter().copied())
        .collect();

    let refined_path = a.out.join("refined_weights.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&refined_path)?);
        writeln!(w, "head,rank,key_token,weight")?;
        for (head, rows) in trace.refined_rows.iter().enumerate() {
            let weights = &rows[a.query];
            for (rank, (&token, weight)) in gathered.iter().zip(weights).enumerate() {
                writeln!(w, "{head},{rank},{token},{weight:.12e}")?;
            }
        }
        w.flush()?;
    }
    write_sidecar(&refined_path, &prov)?;

    emit(serde_json::json!({
        "pre_scores": scores_path,
        "routing": routing_path,
        "refined_weights": refined_path,
        "regions": regions,
        "tokens": tokens,
        "k": routes.rows.first().map_or(0, |r| r.len()),
        "query_region": query_region,
    }));
    Ok(())
}

pub fn summary(a: SummaryArgs) -> Result<(), CliError> {
    let run = RunConfig::load(&a.config)?;
    let cfg = run.model_config();
    let shape = [run.input.frames, run.input.height, run.input.width];
    let s = model_summary(&cfg, shape)?;
    emit(serde_json::json!({
        "params": s.params,
        "macs": s.macs,
        "input": { "frames": shape[0], "height": shape[1], "width": shape[2] },
    }));
    Ok(())
}

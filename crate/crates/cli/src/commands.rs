use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use traphic::dataset::{self, split_by_time};
use traphic::eval::{
    format_table, plot_csv, run_ablation, run_eval, ConstantVelocity, KalmanBaseline, MetricReport,
};
use traphic::ingest::{assemble_tracks, parse_tracks, SceneWindow};
use traphic::model::{PredictMode, Variant};
use traphic::scene::{build_state_space, from_ego_frame, StateSpace};
use traphic::synthgen::{generate, write_dataset};
use traphic::train::{load_checkpoint, save_checkpoint, train, Checkpoint};
use traphic::{gradcheck, Error};

use crate::settings::Settings;
use crate::{CliError, Command};

pub fn dispatch(command: Command, s: &Settings) -> Result<(), CliError> {
    match command {
        Command::Synth { out } => synth(s, &out),
        Command::Ingest { input, out } => ingest(s, &input, out.as_deref()),
        Command::Inspect { data, window, ego } => inspect(s, &data, window, ego),
        Command::Train {
            data,
            out,
            report,
            json,
        } => train_cmd(s, &data, &out, report, json),
        Command::Predict {
            checkpoint,
            data,
            window,
            ego,
            sample,
        } => predict(s, &checkpoint, &data, window, ego, sample),
        Command::Eval {
            checkpoint,
            data,
            plot_data,
            report,
        } => eval_cmd(s, &checkpoint, &data, plot_data, report),
        Command::Ablate {
            data,
            test_data,
            plot_data,
            report,
            out_dir,
        } => ablate(s, &data, test_data.as_deref(), plot_data, report, out_dir),
        Command::Gradcheck => gradcheck_cmd(s),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)?)
}

fn load_samples(s: &Settings, path: &Path) -> Result<Vec<StateSpace>, CliError> {
    let cfg = s.dataset()?;
    let tracks = dataset::load_tracks(path, s.format()?, cfg.frame_rate, s.homography()?.as_ref())?;
    let samples = dataset::build(&tracks, &cfg)?;
    if samples.is_empty() {
        return Err(Error::DatasetMismatch(format!(
            "{} yields no complete {} s + {} s windows",
            path.display(),
            cfg.history_secs,
            cfg.predict_secs
        ))
        .into());
    }
    Ok(samples)
}

fn load_window(s: &Settings, path: &Path, index: usize) -> Result<SceneWindow, CliError> {
    let cfg = s.dataset()?;
    let tracks = dataset::load_tracks(path, s.format()?, cfg.frame_rate, s.homography()?.as_ref())?;
    let mut windows = dataset::windows(&tracks, &cfg)?;
    windows.sort_by_key(|w| w.reference_frame);
    let n = windows.len();
    windows.into_iter().nth(index).ok_or_else(|| {
        Error::DatasetMismatch(format!("window {index} requested, {n} available")).into()
    })
}

fn synth(s: &Settings, out: &Path) -> Result<(), CliError> {
    let cfg = s.synth()?;
    let tracks = generate(&cfg)?;
    let mut w = create(out)?;
    write_dataset(&mut w, &tracks, cfg.frame_rate)?;
    w.flush().map_err(|e| Error::io(out, e))?;
    println!("{} tracks written to {}", tracks.len(), out.display());
    Ok(())
}

fn ingest(s: &Settings, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let frame_rate = s.f64("frame-rate")?;
    let parsed = parse_tracks(input, s.format()?)?;
    let tracks = assemble_tracks(&parsed.detections, frame_rate, s.homography()?.as_ref())?;
    let frames = tracks.iter().map(|t| t.samples.len()).sum::<usize>();
    let summary = json!({
        "detections": parsed.detections.len(),
        "agents": tracks.len(),
        "samples": frames,
    });
    println!("{summary}");
    if let Some(out) = out {
        let mut w = create(out)?;
        write_dataset(&mut w, &tracks, frame_rate)?;
        w.flush().map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn inspect(s: &Settings, data: &Path, window: usize, ego: Option<i64>) -> Result<(), CliError> {
    let spatial = s.spatial()?;
    let w = load_window(s, data, window)?;
    let egos: Vec<usize> = match ego {
        Some(id) => vec![w.index_of(id).ok_or(Error::NotEgoCandidate(id))?],
        None => w.ego_candidates().collect(),
    };
    let states = egos
        .iter()
        .map(|&e| build_state_space(&w, e, &spatial))
        .collect::<traphic::Result<Vec<_>>>()?;
    println!("{}", to_json(&json!({ "window": w, "states": states }))?);
    Ok(())
}

fn train_cmd(
    s: &Settings,
    data: &Path,
    out: &Path,
    report: Option<PathBuf>,
    as_json: bool,
) -> Result<(), CliError> {
    let model = s.model()?;
    let cfg = s.train()?;
    let samples = load_samples(s, data)?;
    let (train_set, val_set) = split_by_time(&samples, cfg.val_fraction);
    eprintln!(
        "{} training and {} validation samples",
        train_set.len(),
        val_set.len()
    );
    let (ck, rep) = train(&train_set, &val_set, &model, &cfg)?;
    if as_json {
        write_text(out, &ck.to_json()?)?;
    } else {
        save_checkpoint(out, &ck)?;
    }
    let report = report.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".report.jsonl");
        PathBuf::from(p)
    });
    write_text(&report, &rep.to_jsonl()?)?;
    if let Some(last) = rep.epochs.last() {
        println!(
            "trained {} for {} epochs ({} steps): train NLL {:.4}{}",
            model.variant.display_name(),
            rep.epochs.len(),
            last.steps,
            last.train_nll,
            last.val_nll
                .map_or(String::new(), |v| format!(", val NLL {v:.4}"))
        );
    }
    Ok(())
}

fn checkpoint_for(s: &Settings, path: &Path) -> Result<Checkpoint, CliError> {
    let ck = load_checkpoint(path)?;
    let spatial = s.spatial()?;
    if ck.model.spatial != spatial {
        log::warn!(
            "checkpoint was trained with {:?}, data is built with {:?}",
            ck.model.spatial,
            spatial
        );
    }
    Ok(ck)
}

fn predict(
    s: &Settings,
    checkpoint: &Path,
    data: &Path,
    window: usize,
    ego: Option<i64>,
    sample: Option<u64>,
) -> Result<(), CliError> {
    let model = checkpoint_for(s, checkpoint)?.to_model()?;
    let w = load_window(s, data, window)?;
    let ego_idx = match ego {
        Some(id) => w.index_of(id).ok_or(Error::NotEgoCandidate(id))?,
        None => w.ego_candidates().next().ok_or_else(|| {
            Error::DatasetMismatch(format!("window {window} has no ego candidate"))
        })?,
    };
    let state = build_state_space(&w, ego_idx, &s.spatial()?)?;
    let mode = sample.map_or(PredictMode::Mean, PredictMode::Sample);
    let local = model.predict(&state, mode)?;
    let gaussians = model.gaussians(&model.prepare(&state)?)?;
    let world: Vec<[f64; 2]> = local
        .iter()
        .map(|q| from_ego_frame(*q, state.origin, state.heading))
        .collect();
    let out = json!({
        "ego_id": state.ego_id,
        "reference_frame": state.reference_frame,
        "dt": state.dt,
        "mode": mode,
        "ego_frame": local,
        "world": world,
        "gaussians": gaussians,
    });
    println!("{}", to_json(&out)?);
    Ok(())
}

fn emit_reports(
    reports: &[MetricReport],
    plot: Option<PathBuf>,
    report: Option<PathBuf>,
) -> Result<(), CliError> {
    print!("{}", format_table(reports));
    if let Some(p) = plot {
        write_text(&p, &plot_csv(reports))?;
    }
    if let Some(p) = report {
        write_text(&p, &to_json(&reports)?)?;
    }
    Ok(())
}

fn eval_cmd(
    s: &Settings,
    checkpoint: &Path,
    data: &Path,
    plot: Option<PathBuf>,
    report: Option<PathBuf>,
) -> Result<(), CliError> {
    let model = checkpoint_for(s, checkpoint)?.to_model()?;
    let samples = load_samples(s, data)?;
    let c = s.convention()?;
    let reports = vec![
        run_eval(&model, &samples, c)?,
        run_eval(&ConstantVelocity, &samples, c)?,
        run_eval(&KalmanBaseline::default(), &samples, c)?,
    ];
    emit_reports(&reports, plot, report)
}

fn ablate(
    s: &Settings,
    data: &Path,
    test_data: Option<&Path>,
    plot: Option<PathBuf>,
    report: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let model = s.model()?;
    let cfg = s.train()?;
    let samples = load_samples(s, data)?;
    let (pool, test_set) = match test_data {
        Some(p) => (samples, load_samples(s, p)?),
        None => split_by_time(&samples, s.f64("test-fraction")?),
    };
    if test_set.is_empty() {
        return Err(CliError::Usage(
            "test split is empty; raise test-fraction or pass --test-data".into(),
        ));
    }
    let (train_set, val_set) = split_by_time(&pool, cfg.val_fraction);
    let c = s.convention()?;
    let runs = run_ablation(&train_set, &val_set, &test_set, &model, &cfg, c)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for r in &runs {
            save_checkpoint(
                &dir.join(format!("{}.ckpt", r.variant.name())),
                &r.checkpoint,
            )?;
            write_text(
                &dir.join(format!("{}.report.jsonl", r.variant.name())),
                &r.train_report.to_jsonl()?,
            )?;
        }
    }
    let mut reports: Vec<MetricReport> = runs.into_iter().map(|r| r.metrics).collect();
    reports.push(run_eval(&ConstantVelocity, &test_set, c)?);
    debug_assert_eq!(reports.len(), Variant::ALL.len() + 1);
    emit_reports(&reports, plot, report)
}

fn gradcheck_cmd(s: &Settings) -> Result<(), CliError> {
    let report = gradcheck::run(s.seed()?)?;
    for o in &report.ops {
        println!(
            "op {:<16} {:>4} configs  max rel err {:.3e}",
            o.op, o.configs, o.max_rel_error
        );
    }
    for m in &report.models {
        println!(
            "net {:<13} {:>4} scalars  max rel err {:.3e} ({}[{}])",
            m.variant.display_name(),
            m.scalars,
            m.max_rel_error,
            m.worst_param,
            m.worst_index
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e} ({:.1}s)", report.wall_secs);
    if !report.passed() {
        return Err(CliError::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {:.0e}",
            gradcheck::TOLERANCE
        )));
    }
    Ok(())
}

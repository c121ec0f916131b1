use std::path::Path;

use edeblur_core::formats::{events_csv, evt1, tnsr};
use edeblur_core::shutter::{Dataset, ManifestRecord};
use edeblur_core::synthetic::{random_motion, translating_bar, translating_pattern, Texture};
use edeblur_core::{
    build_dataset, edi_deblur, residual_sum, simulate_events, BlurSample, FrameSequence, Image,
    MetricReport, Polarity, ShutterConfig,
};
use edeblur_model::activation::{slot_profile, to_csv, to_svg};
use edeblur_model::train::log_csv;
use edeblur_model::{
    Batch, LossConfig, Model, ModelConfig, ModelError, SampleTensors, ToyConfig, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, Result};
use crate::io::{self, parse_sample, pnm_ext, read_frames, write_image, write_text};
use crate::{write_run_record, RunRecord};

pub fn dispatch(cli: &Cli, record: &RunRecord) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Scene(a) => scene(a, seed, record),
        Command::SimulateEvents(a) => simulate(a, record),
        Command::Synthesize(a) => synthesize(a, seed, record),
        Command::Edi(a) => edi(a, record),
        Command::Train(a) => train(a, seed, record),
        Command::Eval(a) => eval(a, record),
        Command::PlotActivation(a) => plot(a, record),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

/// Directory that holds a file output.
fn parent_of(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn scene(a: &SceneArgs, seed: u64, record: &RunRecord) -> Result<()> {
    if a.frames == 0 || a.width == 0 || a.height == 0 {
        return Err(CliError::usage("scene needs positive --frames, --width and --height"));
    }
    let dt = 1000;
    let seq = match a.kind {
        SceneKind::Bar => translating_bar(a.width, a.height, a.frames, 8.0, a.speed, dt)?,
        SceneKind::Pattern => {
            let texture = Texture::random(seed, 6, 6.0, 24.0);
            translating_pattern(&texture, a.width, a.height, a.frames, (a.speed, 0.5 * a.speed), dt)?
        }
        SceneKind::Random => random_motion(seed, a.width, a.height, a.frames, dt)?,
    };
    for (k, frame) in seq.frames().iter().enumerate() {
        write_image(&a.out.join(format!("{k:04}.pgm")), frame)?;
    }
    write_run_record(&a.out, record)
}

#[derive(Serialize)]
struct EventDiagnostics {
    events: usize,
    positive: usize,
    negative: usize,
    frames: usize,
    width: usize,
    height: usize,
    beta: f64,
    t_span: (u64, u64),
    /// Events per pixel per 1000 time units.
    rate: f64,
}

fn load_sequence(dir: &Path, dt: u64) -> Result<FrameSequence> {
    if dt == 0 {
        return Err(CliError::usage("--dt must be positive"));
    }
    let frames = read_frames(dir)?;
    Ok(FrameSequence::uniform(frames, 0, dt)?)
}

fn simulate(a: &SimulateArgs, record: &RunRecord) -> Result<()> {
    let seq = load_sequence(&a.frames, a.dt)?;
    let stream = simulate_events(&seq, a.beta, a.log_floor)?;
    match a.format {
        EventFormat::Evt1 => evt1::write(&a.out, &stream)?,
        EventFormat::Csv => {
            edeblur_core::formats::write_file(&a.out, &events_csv::encode(&stream))?
        }
    }
    let positive = stream.events().iter().filter(|e| e.p == Polarity::Positive).count();
    let (t0, t1) = stream.t_span();
    let pixels = (stream.width() * stream.height()) as f64;
    let diag = EventDiagnostics {
        events: stream.len(),
        positive,
        negative: stream.len() - positive,
        frames: seq.len(),
        width: stream.width(),
        height: stream.height(),
        beta: a.beta,
        t_span: (t0, t1),
        rate: if t1 > t0 {
            stream.len() as f64 / pixels / (t1 - t0) as f64 * 1000.0
        } else {
            0.0
        },
    };
    let mut diag_path = a.out.clone().into_os_string();
    diag_path.push(".json");
    write_text(Path::new(&diag_path), &json(&diag))?;
    write_run_record(parent_of(&a.out), record)
}

fn synthesize(a: &SynthesizeArgs, seed: u64, record: &RunRecord) -> Result<()> {
    let seq = load_sequence(&a.frames, a.dt)?;
    let events = evt1::read(&a.events)?;
    let mut config = ShutterConfig::new(a.m, a.n)?.with_seed(seed);
    if a.noise {
        config = config.with_noise(seed);
    }
    let records = build_dataset(&seq, &events, &[config], &a.out)?;
    eprintln!("wrote {} samples tagged {}", records.len(), config.tag());
    write_run_record(&a.out, record)
}

fn open_sample(spec: &str) -> Result<(BlurSample, ManifestRecord)> {
    let (manifest, index) = parse_sample(spec)?;
    let mut ds = Dataset::open(&manifest)?;
    let sample = ds.sample(index)?;
    Ok((sample, ds.records()[index].clone()))
}

fn edi(a: &EdiArgs, record: &RunRecord) -> Result<()> {
    let (sample, rec) = open_sample(&a.sample)?;
    // Latent sample times sit on the exposure's frame grid, anchored at the ground-truth frame.
    let (t0, t1) = sample.exposure_span;
    let m = rec.exposure_frames as u64;
    let time = |i: u64| t0 + (t1 - t0) * i / m;
    let times: Vec<u64> = (0..m).map(time).collect();
    let anchor = time((sample.gt_index - sample.exposure_window.0) as u64);
    let s = residual_sum(&sample.current_events, anchor, &times)?;
    let latent = edi_deblur(&sample.blur, &s)?;
    let ext = pnm_ext(&latent);
    write_image(&a.out.join(format!("edi.{ext}")), &latent)?;
    write_image(&a.out.join(format!("blur.{ext}")), &sample.blur)?;
    write_image(&a.out.join(format!("sharp.{ext}")), &sample.gt_sharp)?;
    let report = MetricReport::evaluate([
        ("blur".to_string(), &sample.blur, &sample.gt_sharp),
        ("edi".to_string(), &latent, &sample.gt_sharp),
    ])?;
    write_text(&a.out.join("metrics.json"), &(report.to_json() + "\n"))?;
    write_text(&a.out.join("metrics.csv"), &report.to_csv())?;
    write_run_record(&a.out, record)
}

#[derive(Serialize)]
struct Divergence<'a> {
    step: usize,
    detail: &'a str,
}

fn train(a: &TrainArgs, seed: u64, record: &RunRecord) -> Result<()> {
    if a.steps == 0 || a.batch == 0 {
        return Err(CliError::usage("--steps and --batch must be positive"));
    }
    if a.crop == 0 || !a.crop.is_multiple_of(4) {
        return Err(CliError::usage(format!("--crop must be a positive multiple of 4, got {}", a.crop)));
    }
    let train_cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        crop: a.crop,
        lr: a.lr,
        seed,
        ..TrainConfig::default()
    };
    let loss_cfg = LossConfig::default();
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(path, train_cfg, loss_cfg)?,
        None => {
            let cfg = match a.model {
                ModelPreset::Default => ModelConfig::default(),
                ModelPreset::Small => ModelConfig::small(),
            };
            Trainer::new(Model::new(cfg, seed)?, train_cfg, loss_cfg)
        }
    };
    let toy = ToyConfig::default();
    let mut dataset = match &a.manifest {
        Some(m) => {
            let ds = Dataset::open(m)?;
            if ds.is_empty() {
                return Err(CliError::input(format!("{}: manifest has no samples", m.display())));
            }
            Some(ds)
        }
        None => None,
    };
    let mut records = Vec::new();
    while trainer.step < a.steps {
        let step = trainer.step;
        let samples = match dataset.as_mut() {
            Some(ds) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a4d_706c);
                rng.set_stream(step as u64);
                (0..a.batch)
                    .map(|_| ds.sample(rng.gen_range(0..ds.len())))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
            None => (0..a.batch)
                .map(|b| toy.train_sample(seed, (step * a.batch + b) as u64))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        };
        let batch = trainer.make_batch(&samples)?;
        match trainer.step(&batch) {
            Ok(r) => {
                if a.log_every > 0 && (r.step % a.log_every == 0 || r.step == a.steps) {
                    eprintln!("step {} loss {:.6} lr {:e}", r.step, r.loss, r.lr);
                }
                records.push(r);
            }
            Err(ModelError::Diverged { step, detail }) => {
                write_text(&a.out.join("diverged.json"), &json(&Divergence { step, detail: &detail }))?;
                write_text(&a.out.join("train_log.csv"), &log_csv(&records, false))?;
                return Err(CliError::state(format!("training diverged at step {step}: {detail}")));
            }
            Err(e) => return Err(e.into()),
        }
    }
    trainer.save(&a.out.join("model.tnsrarc"))?;
    write_text(&a.out.join("train_log.csv"), &log_csv(&records, false))?;
    let timing: String = std::iter::once("step,wall_ms\n".to_string())
        .chain(records.iter().map(|r| format!("{},{}\n", r.step, r.wall_ms)))
        .collect();
    write_text(&a.out.join("timing.csv"), &timing)?;
    write_run_record(&a.out, record)
}

/// Runs the model on a whole sample, cropped to the network's size multiple.
fn restore(model: &Model, sample: &BlurSample) -> Result<(SampleTensors, edeblur_model::Prediction)> {
    let t = SampleTensors::from_sample(sample, &model.config)?.crop_to_multiple(model.config.size_multiple())?;
    let pred = model.predict(&Batch::stack(std::slice::from_ref(&t))?)?;
    Ok((t, pred))
}

fn read_prediction(dir: &Path, index: usize) -> Result<Image> {
    for ext in ["tnsr", "pgm", "ppm"] {
        let path = dir.join(format!("{index:04}.{ext}"));
        if path.is_file() {
            return if ext == "tnsr" {
                let t = tnsr::read(&path)?;
                Image::from_tensor(&t).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
            } else {
                io::read_image(&path)
            };
        }
    }
    Err(CliError::input(format!("{}: no prediction for sample {index}", dir.display())))
}

fn eval(a: &EvalArgs, record: &RunRecord) -> Result<()> {
    let mut ds = Dataset::open(&a.manifest)?;
    let model = a.ckpt.as_deref().map(Model::load).transpose()?;
    let mut pairs = Vec::new();
    for i in 0..ds.len() {
        let sample = ds.sample(i)?;
        let name = format!("{i:04}");
        let (pred, reference) = match &model {
            Some(model) => {
                let (t, p) = restore(model, &sample)?;
                let restored = Image::from_tensor(&p.outputs[0])?.clamp01();
                write_image(&a.out.join(format!("restored/{name}.{}", pnm_ext(&restored))), &restored)?;
                io::write_tensor_image(&a.out.join(format!("restored/{name}.tnsr")), &restored)?;
                (restored, Image::from_tensor(&t.sharp)?)
            }
            None => {
                let pred = read_prediction(a.pred.as_deref().expect("clap requires --pred"), i)?;
                let reference = if pred.channels() == 1 { sample.gt_sharp.luma() } else { sample.gt_sharp };
                (pred, reference)
            }
        };
        pairs.push((name, pred, reference));
    }
    let report = MetricReport::evaluate(pairs.iter().map(|(n, p, r)| (n.clone(), p, r)))?;
    write_text(&a.out.join("metrics.json"), &(report.to_json() + "\n"))?;
    write_text(&a.out.join("metrics.csv"), &report.to_csv())?;
    write_run_record(&a.out, record)
}

fn plot(a: &PlotArgs, record: &RunRecord) -> Result<()> {
    let model = Model::load(&a.ckpt)?;
    let (sample, _) = open_sample(&a.sample)?;
    let (t, pred) = restore(&model, &sample)?;
    let profile = slot_profile(&pred.z0, 1, 0, &t)?;
    write_text(&a.out.join("activation.csv"), &to_csv(&profile))?;
    write_text(&a.out.join("activation.svg"), &to_svg(&profile, t.exposure))?;
    write_run_record(&a.out, record)
}

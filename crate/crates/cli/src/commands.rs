use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scl_core::augment::sample_pair;
use scl_core::image::{load_spim, Image};
use scl_core::metrics::FoldReport;
use scl_core::nn::arch::{count_parameters, reduction_ratio, resnet18_descriptor, Dimensionality};
use scl_core::nn::checkpoint::{decode_tensors, encode_tensors};
use scl_core::nn::ContrastiveModel;
use scl_core::rng;
use scl_core::spiral::{build_schedule, transform_with_schedule};
use scl_core::split::stratified_kfold;
use scl_core::synth::generate_dataset;
use scl_core::train::{fine_tune, linear_probe, prepare_views, pretrain};
use scl_core::volume::{load_volume, LesionSample};
use scl_core::Error;

use crate::config::CliConfig;
use crate::output::RunOutput;
use crate::{verify, Arch, CliError, CliResult, Command, Dims};

pub const LABELS_FILE: &str = "labels.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.sclw";

pub fn dispatch(command: &Command, cfg: &CliConfig) -> CliResult<()> {
    match command {
        Command::Synth => synth(cfg),
        Command::Transform {
            input,
            angles,
            pgm,
            workers,
        } => {
            let angles = angles.clone().unwrap_or_else(|| cfg.view_angles.clone());
            transform(cfg, input, &angles, *pgm, workers.unwrap_or(cfg.workers))
        }
        Command::Augment { input, pairs, pgm } => augment(cfg, input, *pairs, *pgm),
        Command::Pretrain { data } => pretrain_cmd(cfg, data),
        Command::Probe { data, checkpoint } => probe(cfg, data, checkpoint),
        Command::Finetune {
            data,
            checkpoint,
            fraction,
        } => finetune(cfg, data, checkpoint, fraction.unwrap_or(cfg.label_fraction)),
        Command::Params { arch, dims, in_channels } => params(*arch, *dims, *in_channels),
        Command::Verify => {
            let failures = verify::run_suite(&mut std::io::stdout())?;
            if failures == 0 {
                Ok(())
            } else {
                Err(CliError::Verify(failures))
            }
        }
    }
}

fn synth(cfg: &CliConfig) -> CliResult<()> {
    let samples = generate_dataset(&cfg.lesion_specs(), cfg.per_class, cfg.seed)?;
    let mut out = RunOutput::create(&cfg.output_dir)?;
    let mut labels = String::from("id,label\n");
    for s in &samples {
        out.write(&format!("{}.vol", s.id), &s.volume.to_bytes())?;
        labels.push_str(&format!("{},{}\n", s.id, s.label.unwrap()));
    }
    out.write(LABELS_FILE, labels.as_bytes())?;
    out.finish(cfg)?;
    println!("wrote {} volumes to {}", samples.len(), cfg.output_dir.display());
    Ok(())
}

fn volume_paths(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "vol"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::TooFewSamples(format!("no .vol files in {}", input.display())).into());
    }
    Ok(paths)
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Reads a `synth` directory: labels from `labels.csv` when present, else
/// every `.vol` file unlabelled in name order.
pub fn load_dataset(dir: &Path) -> CliResult<Vec<LesionSample>> {
    let labels_path = dir.join(LABELS_FILE);
    if !labels_path.exists() {
        return volume_paths(dir)?
            .into_iter()
            .map(|p| {
                Ok(LesionSample {
                    id: stem(&p),
                    volume: load_volume(&p)?,
                    label: None,
                })
            })
            .collect();
    }
    let text = std::fs::read_to_string(&labels_path)?;
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidHeader(format!("{}:{}: expected `id,label`", labels_path.display(), n + 1));
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        let label: usize = label.trim().parse().map_err(|_| bad())?;
        samples.push(LesionSample {
            id: id.to_string(),
            volume: load_volume(dir.join(format!("{id}.vol")))?,
            label: Some(label),
        });
    }
    Ok(samples)
}

fn labels_of(samples: &[LesionSample]) -> CliResult<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::TooFewSamples(format!("sample {} has no label", s.id)).into())
        })
        .collect()
}

fn angle_tag(angle: f64) -> String {
    format!("{angle}").replace('-', "m").replace('.', "p")
}

fn transform(cfg: &CliConfig, input: &Path, angles: &[f64], pgm: bool, workers: usize) -> CliResult<()> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
        return Err(CliError::Usage("--angles needs finite values".into()));
    }
    let paths = volume_paths(input)?;
    let volumes = paths.iter().map(load_volume).collect::<scl_core::Result<Vec<_>>>()?;
    let schedules = angles
        .iter()
        .map(|&a| {
            let c = cfg.spiral_config().with_rotation(a);
            build_schedule(&c).map(|s| (c, s))
        })
        .collect::<scl_core::Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..volumes.len())
        .flat_map(|v| (0..angles.len()).map(move |a| (v, a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let views: Vec<Image> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, a)| transform_with_schedule(&volumes[v], &schedules[a].1, &schedules[a].0))
            .collect()
    });
    let mut out = RunOutput::create(&cfg.output_dir)?;
    for (&(v, a), view) in jobs.iter().zip(&views) {
        let name = format!("{}_r{}", stem(&paths[v]), angle_tag(angles[a]));
        out.write(&format!("{name}.spim"), &view.to_spim_bytes())?;
        if pgm {
            out.write(&format!("{name}.pgm"), &view.to_pgm_bytes())?;
        }
    }
    out.finish(cfg)?;
    let (rows, cols) = views[0].shape();
    println!("wrote {} views of {rows}x{cols} to {}", views.len(), cfg.output_dir.display());
    Ok(())
}

fn augment(cfg: &CliConfig, input: &Path, pairs: usize, pgm: bool) -> CliResult<()> {
    let view = load_spim(input)?;
    let pipeline = cfg.pipeline();
    let mut out = RunOutput::create(&cfg.output_dir)?;
    for k in 0..pairs {
        let (a, b) = sample_pair(&view, &pipeline, rng::derive(cfg.seed, k as u64))?;
        for (tag, img) in [("a", &a), ("b", &b)] {
            out.write(&format!("pair{k:03}_{tag}.spim"), &img.to_spim_bytes())?;
            if pgm {
                out.write(&format!("pair{k:03}_{tag}.pgm"), &img.to_pgm_bytes())?;
            }
        }
    }
    out.finish(cfg)?;
    println!("wrote {pairs} pairs to {}", cfg.output_dir.display());
    Ok(())
}

fn pretrain_cmd(cfg: &CliConfig, data: &Path) -> CliResult<()> {
    let samples = load_dataset(data)?;
    let views = prepare_views(&samples, &cfg.spiral_config(), &cfg.view_angles, cfg.view_size)?;
    let outcome = pretrain(&views, &cfg.pipeline(), &cfg.train_config())?;
    let mut out = RunOutput::create(&cfg.output_dir)?;
    out.write(CHECKPOINT_FILE, &encode_tensors(&outcome.model.tensors())?)?;
    out.write("loss.csv", outcome.loss_csv().as_bytes())?;
    out.finish(cfg)?;
    println!(
        "pretrained {} epochs{}: loss {:.4} -> {:.4}",
        outcome.history.len() - 1,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.initial_loss(),
        outcome.final_loss()
    );
    Ok(())
}

fn load_model(cfg: &CliConfig, path: &Path) -> CliResult<ContrastiveModel> {
    let tensors = decode_tensors(&std::fs::read(path)?)?;
    Ok(ContrastiveModel::from_tensors(&tensors, cfg.view_size)?)
}

fn write_report(cfg: &CliConfig, name: &str, report: &FoldReport) -> CliResult<()> {
    let mut out = RunOutput::create(&cfg.output_dir)?;
    out.write(&format!("{name}.csv"), report.to_csv().as_bytes())?;
    let summary = format!(
        "# mean ± std in percent over {} folds; std divides by the fold count\n{}\n",
        report.folds.len(),
        report.summary()
    );
    out.write(&format!("{name}_summary.txt"), summary.as_bytes())?;
    out.finish(cfg)?;
    println!("{name}: {}", report.summary());
    Ok(())
}

/// One view per sample at the first configured angle.
fn labelled_views(cfg: &CliConfig, data: &Path) -> CliResult<(Vec<Image>, Vec<usize>)> {
    let samples = load_dataset(data)?;
    let labels = labels_of(&samples)?;
    let views = prepare_views(&samples, &cfg.spiral_config(), &cfg.view_angles[..1], cfg.view_size)?;
    Ok((views, labels))
}

fn probe(cfg: &CliConfig, data: &Path, checkpoint: &Path) -> CliResult<()> {
    let model = load_model(cfg, checkpoint)?;
    let (views, labels) = labelled_views(cfg, data)?;
    let split = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    let report = linear_probe(&model.encoder, &views, &labels, &split, &cfg.train_config())?;
    write_report(cfg, "probe", &report)
}

fn finetune(cfg: &CliConfig, data: &Path, checkpoint: &Path, fraction: f64) -> CliResult<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Usage(format!("--fraction {fraction} outside (0, 1]")));
    }
    let model = load_model(cfg, checkpoint)?;
    let (views, labels) = labelled_views(cfg, data)?;
    let split = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    let report = fine_tune(&model.encoder, &views, &labels, fraction, &split, &cfg.train_config())?;
    write_report(cfg, "finetune", &report)
}

fn params(arch: Arch, dims: Dims, in_channels: usize) -> CliResult<()> {
    let Arch::Resnet18 = arch;
    if in_channels == 0 {
        return Err(CliError::Usage("--in-channels must be positive".into()));
    }
    let p2 = count_parameters(&resnet18_descriptor(Dimensionality::TwoD, in_channels, false))?;
    let p3 = count_parameters(&resnet18_descriptor(Dimensionality::ThreeD, in_channels, false))?;
    let (tag, selected) = match dims {
        Dims::TwoD => ("2d", p2),
        Dims::ThreeD => ("3d", p3),
    };
    let r = reduction_ratio(p2, p3);
    println!("resnet18 {tag} parameters: {selected}");
    println!("resnet18 2d: {p2}");
    println!("resnet18 3d: {p3}");
    println!("reduction: {r:.6} ({:.2}%)", r * 100.0);
    Ok(())
}

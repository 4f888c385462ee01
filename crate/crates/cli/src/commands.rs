use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use autograd::Tensor;
use thermofront::data::{
    generate_synthetic_dataset, load_manifest, preprocess_bytes, save_png, Dataset, Domain, IMAGE_SIZE,
};
use thermofront::eval::{roc_metrics, score_split, ConvEmbedder, Frontalizer};
use thermofront::training::{load_checkpoint, run_ablation, train_with_progress, write_ablation_csv, TrainConfig};

use crate::run_dir::{create, write_snapshot};
use crate::{AblateArgs, ConfigArgs, EvaluateArgs, GenDataArgs, Split, SynthesizeArgs, TrainArgs, UsageError};

/// Resolved config written beside training outputs; accepted back by `--config`.
pub const CONFIG_SNAPSHOT: &str = "config.toml";

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    let path = dir.join(CONFIG_SNAPSHOT);
    std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let m = load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    Ok(Dataset::load(&m)?)
}

fn select(ds: Dataset, split: Split) -> Dataset {
    match split {
        Split::All => ds,
        Split::Train => ds.split_by_identity().0,
        Split::Test => ds.split_by_identity().1,
    }
}

pub fn gen_data(root: &Path, args: &GenDataArgs) -> Result<()> {
    let dir = create(root, "gen-data", args.out.out.as_deref())?;
    let manifest =
        generate_synthetic_dataset(args.identities as usize, &args.poses, &dir, args.seed).map_err(|e| match e {
            thermofront::Error::InvalidArgument(m) => usage(m),
            other => other.into(),
        })?;
    write_snapshot(&dir, "gen-data", args)?;
    let m = load_manifest(&manifest)?;
    let visible = m.records.iter().filter(|r| r.domain == Domain::Visible).count();
    println!(
        "{} images ({} visible, {} thermal) for {} identities",
        m.records.len(),
        visible,
        m.records.len() - visible,
        m.num_identities()
    );
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(root: &Path, args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    let ds = select(load_dataset(&args.data)?, args.split);
    let dir = create(root, "train", args.out.out.as_deref())?;
    write_snapshot(&dir, "train", args)?;
    write_config(&dir, &cfg)?;
    eprintln!("training {} steps on {} identities", cfg.steps, ds.num_identities());
    let every = args.log_every;
    let outcome = train_with_progress(&cfg, &ds, &dir, &mut |r| {
        if every > 0 && (r.step % every == 0 || r.step == cfg.steps) {
            eprintln!(
                "step {:>6}  total {:>9.4}  pixel {:.4}  id {:.4}  adv {:>8.4}  cls {:.4}  contrastive {:.4}  gp {:.4}",
                r.step, r.total, r.pixel, r.id, r.adv_g, r.cls, r.contrastive, r.gp
            );
        }
    })?;
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

/// Places `[C, S, S]` tiles on a grid; `None` leaves a black cell.
fn tile(cells: &[Vec<Option<&Tensor<f32>>>], channels: usize, size: usize) -> Tensor<f32> {
    let rows = cells.len();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let (h, w) = (rows * size, cols * size);
    let mut data = vec![0.0f32; channels * h * w];
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let Some(t) = cell else { continue };
            let d = t.data();
            for ch in 0..channels {
                for y in 0..size {
                    let src = ch * size * size + y * size;
                    let dst = ch * h * w + (r * size + y) * w + c * size;
                    data[dst..dst + size].copy_from_slice(&d[src..src + size]);
                }
            }
        }
    }
    Tensor::new(&[channels, h, w], data)
}

/// Counts values outside `[0, 1]`, which PNG export would clip.
fn out_of_range(t: &Tensor<f32>) -> usize {
    t.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count()
}

fn frontalize_each(g: &dyn Frontalizer, images: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    images
        .iter()
        .map(|x| {
            let s = x.shape();
            let batch = x.clone().reshape(&[1, s[0], s[1], s[2]]);
            Ok(g.frontalize(&batch)?.index_axis0(0))
        })
        .collect()
}

pub fn synthesize(root: &Path, args: &SynthesizeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let size = ckpt.config.model.image_size;
    let dir = create(root, "synthesize", args.out.out.as_deref())?;
    write_snapshot(&dir, "synthesize", args)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let mut clipped = 0;
    if !args.inputs.is_empty() {
        let images = args
            .inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                preprocess_bytes(&bytes, size).map_err(|m| anyhow::anyhow!("{}: {m}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, (p, out)) in args
            .inputs
            .iter()
            .zip(frontalize_each(&ckpt.generator, &images)?)
            .enumerate()
        {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
            let path = dir.join(format!("{i:03}_{stem}_frontal.png"));
            clipped += out_of_range(&out);
            save_png(&path, &out)?;
            written.push(path);
        }
    }
    if args.pose_sweep {
        let data = args.data.as_deref().ok_or_else(|| usage("--pose-sweep needs --data"))?;
        let ds = load_dataset(data)?;
        if size != IMAGE_SIZE {
            bail!("checkpoint expects {size} px images; datasets load at {IMAGE_SIZE} px");
        }
        let entry = match &args.identity {
            Some(name) => ds
                .identities()
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| usage(format!("identity `{name}` is not in {}", data.display())))?,
            None => ds
                .identities()
                .first()
                .ok_or_else(|| usage("dataset has no identities"))?,
        };
        let mut probes = entry.probes.clone();
        probes.sort_by(|&a, &b| ds.record(a).pose.total_cmp(&ds.record(b).pose));
        let inputs: Vec<Tensor<f32>> = probes.iter().map(|&i| ds.image(i).clone()).collect();
        let outputs = frontalize_each(&ckpt.generator, &inputs)?;
        clipped += outputs.iter().map(out_of_range).sum::<usize>();

        // Top row: thermal profiles, then the thermal frontal.
        // Bottom row: their frontalizations, then the visible reference.
        let mut top: Vec<Option<&Tensor<f32>>> = inputs.iter().map(Some).collect();
        top.push(entry.thermal.first().map(|&i| ds.image(i)));
        let mut bottom: Vec<Option<&Tensor<f32>>> = outputs.iter().map(Some).collect();
        bottom.push(Some(ds.image(entry.frontal)));
        let channels = ds.image(entry.frontal).shape()[0];
        let grid = tile(&[top, bottom], channels, size);
        let path = dir.join(format!("pose_sweep_{}.png", entry.name));
        save_png(&path, &grid)?;
        let poses: Vec<String> = probes.iter().map(|&i| format!("{}", ds.record(i).pose)).collect();
        eprintln!("pose sweep for {}: poses {} + reference", entry.name, poses.join(", "));
        written.push(path);
    }
    if clipped > 0 {
        eprintln!("warning: {clipped} synthesized values fell outside [0, 1] and were clipped");
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn evaluate(root: &Path, args: &EvaluateArgs) -> Result<()> {
    let generator = match &args.checkpoint {
        Some(p) if !args.raw => Some(load_checkpoint(p)?.generator),
        _ => None,
    };
    let ds = select(load_dataset(&args.data)?, args.split);
    let dir = create(root, "evaluate", args.out.out.as_deref())?;
    write_snapshot(&dir, "evaluate", args)?;

    let embedder = ConvEmbedder::standard(IMAGE_SIZE)?;
    let scores = score_split(&ds, generator.as_ref().map(|g| g as &dyn Frontalizer), &embedder)?;
    let report = roc_metrics(&scores)?;

    let scores_path = dir.join("scores.csv");
    let file = File::create(&scores_path).with_context(|| format!("creating {}", scores_path.display()))?;
    scores.write_csv(BufWriter::new(file))?;
    let json = serde_json::to_string_pretty(&report)?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, &json).with_context(|| format!("writing {}", report_path.display()))?;

    eprintln!(
        "{}: AUC {:.2}  EER {:.2}  TAR@FAR=1% {:.2}  TAR@FAR=5% {:.2}  ({} genuine, {} imposter)",
        if generator.is_some() { "frontalized" } else { "raw" },
        report.auc,
        report.eer,
        report.tar_at_far_1,
        report.tar_at_far_5,
        report.genuine_count,
        report.imposter_count
    );
    println!("{json}");
    Ok(())
}

pub fn ablate(root: &Path, args: &AblateArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    let (train_set, test_set) = load_dataset(&args.data)?.split_by_identity();
    let dir = create(root, "ablate", args.out.out.as_deref())?;
    write_snapshot(&dir, "ablate", args)?;
    write_config(&dir, &cfg)?;

    let results = run_ablation(&cfg, &train_set, &test_set, &dir, &mut |r| match &r.report {
        Ok(m) => eprintln!("{:<16} AUC {:.2}  EER {:.2}", r.name, m.auc, m.eer),
        Err(e) => eprintln!("{:<16} failed: {e}", r.name),
    })?;
    let path = dir.join("ablation.csv");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_ablation_csv(BufWriter::new(file), &results)?;
    let failed = results.iter().filter(|r| r.report.is_err()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} rungs failed", results.len());
    }
    println!("{}", path.display());
    Ok(())
}

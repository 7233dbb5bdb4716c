use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitgcn::data::{
    build_protocol, load_dataset, load_sequence_dir, normalize_sequence, write_sequence_dir,
    DatasetProtocol, SequenceMeta, SkeletonSequence, SynthManifest, MANIFEST_FILE,
};
use gaitgcn::eval::{evaluate, evaluate_gallery_as_probe, render_report, ReportFormat};
use gaitgcn::skeleton::build_layout;
use gaitgcn::train::{load_checkpoint, loss_csv, save_checkpoint, Trainer};
use gaitgcn::Real;

use crate::config::{Precision, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn synth(cfg: &RunConfig, manifest_path: Option<&Path>) -> Result<()> {
    let manifest = match manifest_path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
            SynthManifest::from_json(&text)?
        }
        None => SynthManifest::generate(&cfg.synth_config())?,
    };
    let out = &cfg.output.dir;
    if out.is_dir() && fs::read_dir(out)?.next().is_some() {
        bail!("output directory {} is not empty", out.display());
    }
    create_dir(out)?;
    for seq in manifest.sequences()? {
        write_sequence_dir(out, &seq)?;
    }
    write(&out.join(MANIFEST_FILE), manifest.to_json())?;
    cfg.echo_into(out)?;
    println!(
        "wrote {} sequences of {} identities to {}",
        manifest.num_sequences(),
        manifest.identities.len(),
        out.display()
    );
    Ok(())
}

struct Dataset {
    sequences: Vec<SkeletonSequence>,
    protocol: DatasetProtocol,
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let layout = build_layout(&cfg.network.layout)?;
    let dir = &cfg.data.dir;
    let mut sequences = load_dataset(dir, layout.num_joints()).context("loading dataset")?;
    if cfg.data.normalize {
        sequences = sequences
            .iter()
            .map(|s| normalize_sequence(s, &layout))
            .collect::<gaitgcn::Result<_>>()?;
    }
    let index: Vec<SequenceMeta> = sequences.iter().map(|s| s.meta).collect();
    let protocol = build_protocol(&index, &cfg.protocol_spec()?)?;
    Ok(Dataset {
        sequences,
        protocol,
    })
}

pub fn train(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(cfg, checkpoint),
        Precision::F64 => train_as::<f64>(cfg, checkpoint),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let data = load_data(cfg)?;
    let train_set: Vec<SkeletonSequence> = data.protocol.train.iter().map(|&i| data.sequences[i].clone()).collect();
    let out = &cfg.output.dir;
    create_dir(out)?;
    cfg.echo_into(out)?;
    let ckpt_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(CHECKPOINT_FILE));

    let mut trainer = Trainer::<T>::new(&train_set, &cfg.network, &cfg.train_config())?;
    eprintln!(
        "training {} parameters on {} sequences of {} identities for {} steps",
        trainer.model().num_parameters(),
        train_set.len(),
        data.protocol.train_ids.len(),
        trainer.total_steps()
    );
    let log_every = cfg.train.log_every.max(1) as u64;
    let save_every = cfg.train.checkpoint_every.map(|n| n.max(1) as u64);
    trainer.run(|t, step, loss| {
        if step % log_every == 0 {
            eprintln!("step {step}: loss {loss:.5}");
        }
        if save_every.is_some_and(|n| step % n == 0) {
            let path = out.join(format!("checkpoint-{step:06}.bin"));
            save_checkpoint(&t.checkpoint(), &path)?;
        }
        Ok(())
    })?;
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    write(&out.join(LOSS_FILE), loss_csv(trainer.trace()))?;
    println!("wrote {} and {}", ckpt_path.display(), out.join(LOSS_FILE).display());
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.join(CHECKPOINT_FILE))
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, gallery_as_probe: bool) -> Result<()> {
    match cfg.train.precision {
        Precision::F32 => eval_as::<f32>(cfg, checkpoint, gallery_as_probe),
        Precision::F64 => eval_as::<f64>(cfg, checkpoint, gallery_as_probe),
    }
}

fn eval_as<T: Real>(cfg: &RunConfig, checkpoint: Option<&Path>, gallery_as_probe: bool) -> Result<()> {
    let path = checkpoint_path(cfg, checkpoint);
    let model = load_checkpoint::<T>(&path)?
        .network_with(&cfg.network)
        .with_context(|| format!("loading {} against the configured network", path.display()))?;
    let data = load_data(cfg)?;
    let report = if gallery_as_probe {
        evaluate_gallery_as_probe(&model, &data.sequences, &data.protocol)?
    } else {
        evaluate(&model, &data.sequences, &data.protocol)?
    };
    let out = &cfg.output.dir;
    create_dir(out)?;
    cfg.echo_into(out)?;
    let text = render_report(&report, ReportFormat::Text);
    write(&out.join("report.txt"), &text)?;
    write(&out.join("report.csv"), render_report(&report, ReportFormat::Csv))?;
    print!("{text}");
    Ok(())
}

pub fn embed(cfg: &RunConfig, checkpoint: Option<&Path>, sequence: &Path) -> Result<()> {
    match cfg.train.precision {
        Precision::F32 => embed_as::<f32>(cfg, checkpoint, sequence),
        Precision::F64 => embed_as::<f64>(cfg, checkpoint, sequence),
    }
}

fn embed_as<T: Real>(cfg: &RunConfig, checkpoint: Option<&Path>, sequence: &Path) -> Result<()> {
    let layout = build_layout(&cfg.network.layout)?;
    let mut seq = load_sequence_dir(sequence, layout.num_joints()).context("loading sequence")?;
    if cfg.data.normalize {
        seq = normalize_sequence(&seq, &layout)?;
    }
    let path = checkpoint_path(cfg, checkpoint);
    let model = load_checkpoint::<T>(&path)?
        .network_with(&cfg.network)
        .with_context(|| format!("loading {} against the configured network", path.display()))?;
    let embedding = model
        .embed(&seq.to_tensor::<T>())
        .with_context(|| format!("embedding {}", sequence.display()))?;
    let line = embedding.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let out = &cfg.output.dir;
    create_dir(out)?;
    cfg.echo_into(out)?;
    let file = out.join(EMBEDDING_FILE);
    write(&file, format!("{line}\n"))?;
    println!("wrote {} values to {}", embedding.len(), file.display());
    Ok(())
}

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use hicle_core::data::io::{
    atomic_write, load_dataset, read_hcb_file, save_dataset, write_hcb_file,
};
use hicle_core::data::{
    generate_synthetic, split_samples, split_seen_unseen, Dataset, Partition, Split,
};
use hicle_core::eval::{clustering_report, distance_violation_rate, retrieval_report, EvalReport};
use hicle_core::gradcheck::{run_gradcheck, GradcheckConfig};
use hicle_core::hierarchy::HierarchyTree;
use hicle_core::model::{
    embed, read_checkpoint, train, train_linear_probe, write_checkpoint, EncoderModel,
};
use hicle_core::{Error, Result};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Cli, Command, EvalKind, GlobalOpts, EXIT_NUMERIC};

pub const CHECKPOINT_FILE: &str = "model.hcm";
pub const MODEL_META_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const ENCODER_FILE: &str = "encoder.hcb";
pub const PROJECTION_FILE: &str = "projection.hcb";

/// Sidecar written next to the checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    encoder_depth: usize,
    config: RunConfig,
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let cfg = load_config(&cli.global)?;
    if cli.global.threads > 1 {
        log::info!(
            "--threads {} requested; all sections run single-threaded",
            cli.global.threads
        );
    }
    match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Train { data, loss } => {
            let mut cfg = cfg;
            if let Some(loss) = loss {
                cfg.loss = *loss;
            }
            train_cmd(&cfg, data)
        }
        Command::Embed { model, data } => embed_cmd(&cfg, model, data),
        Command::Eval {
            kind,
            data,
            embeddings,
        } => eval_cmd(&cfg, *kind, data, embeddings),
        Command::Gradcheck { corrupt, cases } => gradcheck_cmd(&cfg, *corrupt, *cases),
    }
}

fn load_config(global: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.out
        .as_deref()
        .ok_or_else(|| Error::Config("no output location; pass --out or set `out`".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn gen_data(cfg: &RunConfig) -> Result<u8> {
    let out = out_path(cfg)?;
    let ds = generate_synthetic(&cfg.synthetic_spec())?;
    let ds = match cfg.unseen_fraction {
        Some(f) => split_seen_unseen(ds, f, &cfg.split_spec(), cfg.seed)?,
        None => split_samples(ds, &cfg.split_spec(), cfg.seed)?,
    };
    create_dir(out)?;
    save_dataset(out, &ds)?;
    log::info!("wrote {} samples to {}", ds.len(), out.display());
    Ok(0)
}

/// Seen rows when the dataset has an unseen partition, all rows otherwise.
fn training_partition(ds: &Dataset) -> Option<Partition> {
    ds.partitions
        .contains(&Partition::Unseen)
        .then_some(Partition::Seen)
}

/// Evaluation targets the unseen categories when there are any.
fn eval_partition(ds: &Dataset) -> Option<Partition> {
    ds.partitions
        .contains(&Partition::Unseen)
        .then_some(Partition::Unseen)
}

fn train_cmd(cfg: &RunConfig, data: &Path) -> Result<u8> {
    let out = out_path(cfg)?.to_path_buf();
    let ds = load_dataset(data)?;
    let train_ds = ds.subset(&ds.indices(Split::Train, training_partition(&ds)));
    let tree = HierarchyTree::build(&train_ds.paths)?;
    let outcome = train(&train_ds, &tree, &cfg.train_config(ds.input_dim()))?;

    create_dir(&out)?;
    atomic_write(&out.join(CHECKPOINT_FILE), |w| {
        write_checkpoint(w, &outcome.model).map_err(|e| Error::Io {
            path: out.join(CHECKPOINT_FILE),
            source: e,
        })
    })?;
    write_json(
        &out.join(MODEL_META_FILE),
        &ModelMeta {
            encoder_depth: outcome.model.encoder_depth,
            config: cfg.clone(),
        },
    )?;
    let log_path = out.join(TRAIN_LOG_FILE);
    atomic_write(&log_path, |w| {
        for entry in &outcome.log {
            serde_json::to_writer(&mut *w, entry)?;
            w.write_all(b"\n").map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
        }
        Ok(())
    })?;
    if let Some(last) = outcome.log.last() {
        log::info!("epoch {} loss {:.4}", last.epoch, last.loss);
    }
    Ok(0)
}

fn load_model(dir: &Path) -> Result<EncoderModel> {
    let meta_path = dir.join(MODEL_META_FILE);
    let meta: ModelMeta =
        serde_json::from_reader(BufReader::new(File::open(&meta_path).map_err(|e| {
            Error::Io {
                path: meta_path.clone(),
                source: e,
            }
        })?))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let file = File::open(&ckpt).map_err(|e| Error::Io {
        path: ckpt.clone(),
        source: e,
    })?;
    EncoderModel::from_layers(read_checkpoint(BufReader::new(file))?, meta.encoder_depth)
}

fn embed_cmd(cfg: &RunConfig, model_dir: &Path, data: &Path) -> Result<u8> {
    let out = out_path(cfg)?;
    let model = load_model(model_dir)?;
    let ds = load_dataset(data)?;
    if ds.input_dim() != model.input_dim() {
        return Err(Error::Structural(format!(
            "data has {} features, model expects {}",
            ds.input_dim(),
            model.input_dim()
        )));
    }
    let (encoder, projection) = embed(&model, ds.features.view())?;
    create_dir(out)?;
    write_hcb_file(&out.join(ENCODER_FILE), encoder.view())?;
    write_hcb_file(&out.join(PROJECTION_FILE), projection.view())?;
    Ok(0)
}

fn read_embeddings(dir: &Path, file: &str, rows: usize) -> Result<Array2<f64>> {
    let m = read_hcb_file(&dir.join(file))?;
    if m.nrows() != rows {
        return Err(Error::Structural(format!(
            "{file} has {} rows, dataset has {rows}",
            m.nrows()
        )));
    }
    Ok(m)
}

fn undefined(err: Error, what: &str) -> Result<()> {
    match err {
        Error::UndefinedMetric(why) => {
            eprintln!("warning: {what} undefined: {why}");
            Ok(())
        }
        e => Err(e),
    }
}

fn eval_cmd(cfg: &RunConfig, kind: EvalKind, data: &Path, embeddings: &Path) -> Result<u8> {
    let ds = load_dataset(data)?;
    let partition = eval_partition(&ds);
    let test = ds.indices(Split::Test, partition);
    let gallery = ds.indices(Split::Train, partition);
    let class_level = cfg.class_level.unwrap_or(ds.level_count - 1);
    if class_level >= ds.level_count {
        return Err(Error::Config(format!(
            "class_level {class_level} out of range for {} levels",
            ds.level_count
        )));
    }
    let classes = ds.labels_at(class_level);
    let pick = |rows: &[usize]| rows.iter().map(|&i| classes[i]).collect::<Vec<u32>>();
    let paths = |rows: &[usize]| {
        rows.iter()
            .map(|&i| ds.paths[i].clone())
            .collect::<Vec<_>>()
    };

    let mut report = EvalReport::default();
    match kind {
        EvalKind::Retrieval => {
            let emb = read_embeddings(embeddings, PROJECTION_FILE, ds.len())?;
            let r = retrieval_report(
                emb.select(Axis(0), &test).view(),
                emb.select(Axis(0), &gallery).view(),
                &pick(&test),
                &pick(&gallery),
                &cfg.topk,
            )?;
            if r.k_clamped {
                eprintln!(
                    "warning: some k exceeds the gallery size {} and was clamped",
                    gallery.len()
                );
            }
            if r.map_at_r.is_none() {
                undefined(
                    Error::UndefinedMetric("no query has a relevant gallery item"),
                    "map_at_r",
                )?;
            }
            report = r.into();
        }
        EvalKind::Nmi => {
            let emb = read_embeddings(embeddings, PROJECTION_FILE, ds.len())?;
            let r = clustering_report(emb.select(Axis(0), &test).view(), &paths(&test), cfg.seed)?;
            for (level, v) in r.nmi_per_level.iter().enumerate() {
                if v.is_none() {
                    eprintln!("warning: NMI undefined at level {level}");
                }
            }
            report = r.into();
        }
        EvalKind::Violations => {
            let emb = read_embeddings(embeddings, PROJECTION_FILE, ds.len())?;
            match distance_violation_rate(
                emb.select(Axis(0), &test).view(),
                &paths(&test),
                cfg.num_comparisons,
                cfg.seed,
            ) {
                Ok(r) => report = r.into(),
                Err(e) => undefined(e, "violation_rate")?,
            }
        }
        EvalKind::LinearProbe => {
            let emb = read_embeddings(embeddings, ENCODER_FILE, ds.len())?;
            let (_, r) = train_linear_probe(
                emb.select(Axis(0), &gallery).view(),
                &pick(&gallery),
                emb.select(Axis(0), &test).view(),
                &pick(&test),
                &cfg.probe_config(),
            )?;
            report.probe_accuracy = Some(r.accuracy);
            report.majority_baseline = Some(r.majority_baseline);
        }
    }
    emit(cfg.out.as_deref(), &report)?;
    Ok(0)
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn gradcheck_cmd(cfg: &RunConfig, corrupt: bool, cases: usize) -> Result<u8> {
    let report = run_gradcheck(&GradcheckConfig {
        seed: cfg.seed,
        cases,
        corrupt,
        ..GradcheckConfig::default()
    })?;
    for e in &report.entries {
        eprintln!(
            "{:<10} max rel err {:.3e} over {} entries ({} skipped) {}",
            e.name,
            e.max_rel_error,
            e.checked,
            e.skipped,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    emit(cfg.out.as_deref(), &report)?;
    Ok(if report.passed { 0 } else { EXIT_NUMERIC })
}

use std::fs;
use std::path::{Path, PathBuf};

use gmn::eval::*;
use gmn::model::*;
use gmn::scene::*;
use gmn::{Error, Result};

use crate::config::RunConfig;

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_path(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.run.data_dir.join(format!("{split}.gmn"))
}

/// Seed of split `k`, far apart from the others for any base seed.
fn split_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Creates the output layout and writes the resolved-config echo.
fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    let out = &cfg.run.out_dir;
    for d in ["checkpoints", "csv", "img"] {
        fs::create_dir_all(out.join(d))?;
    }
    fs::write(out.join("config.echo"), cfg.echo())?;
    Ok(out.clone())
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<(DatasetHeader, Vec<SceneRecord>)> {
    let path = split_path(cfg, split);
    if !path.exists() {
        return Err(Error::Data(format!("no dataset at {}; run generate first", path.display())));
    }
    read_dataset(&path)
}

fn check_table(expected: &ModalityTable, found: &ModalityTable, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::Config(format!(
            "{what} has {} modalities at {}x{}, the configuration expects {} at {}x{}",
            found.len(),
            found.height,
            found.width,
            expected.len(),
            expected.height,
            expected.width
        )));
    }
    Ok(())
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// The explicit checkpoint, else the newest under `out_dir/checkpoints`.
fn find_checkpoint(cfg: &RunConfig) -> Result<PathBuf> {
    if !cfg.run.checkpoint.is_empty() {
        return Ok(PathBuf::from(&cfg.run.checkpoint));
    }
    let dir = cfg.run.out_dir.join("checkpoints");
    let newest = fs::read_dir(&dir)
        .ok()
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .max();
    newest.ok_or_else(|| Error::Data(format!("no checkpoint in {}", dir.display())))
}

fn load_store(cfg: &RunConfig) -> Result<ParameterStore<f32>> {
    let path = find_checkpoint(cfg)?;
    if !path.exists() {
        return Err(Error::Data(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(read_checkpoint(&path)?.store)
}

fn scenes_for_eval(cfg: &RunConfig, store: &ParameterStore<f32>) -> Result<Vec<SceneRecord>> {
    let (header, mut scenes) = load_split(cfg, "test")?;
    check_table(&store.table, &header.table, "the test split")?;
    scenes.truncate(cfg.eval.scenes);
    if scenes.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    Ok(scenes)
}

fn csv(out: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = out.join("csv").join(name);
    write_csv(&path, header, rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    prepare(cfg)?;
    let g = &cfg.gen;
    let table = g.params.table()?;
    fs::create_dir_all(&cfg.run.data_dir)?;
    let mut manifest = g.entries();
    for (k, (split, count)) in SPLITS.iter().zip([g.train_scenes, g.val_scenes, g.test_scenes]).enumerate() {
        let seed = split_seed(g.seed, k);
        let scenes = generate_dataset(seed, count, &g.params)?;
        let header =
            DatasetHeader::new(table.clone(), count as u64, g.params.min_pairs as u32, g.params.max_pairs as u32, seed);
        let path = split_path(cfg, split);
        write_dataset(&path, &header, &scenes)?;
        println!("wrote {} ({count} scenes)", path.display());
        manifest.push((SPLITS[k], format!("{} seed={seed}", path.display())));
    }
    let names: Vec<&str> = table.modalities.iter().map(|m| m.name.as_str()).collect();
    manifest.push(("modality_names", names.join(",")));
    write_manifest(cfg.run.data_dir.join("manifest.txt"), &manifest)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let (header, scenes) = load_split(cfg, "train")?;
    check_table(&cfg.gen.params.table()?, &header.table, "the training split")?;
    let mut trainer = if cfg.run.resume.is_empty() {
        Trainer::new(ParameterStore::init(&cfg.model, &header.table, cfg.train.seed)?, cfg.train.clone())?
    } else {
        let ck = read_checkpoint(&cfg.run.resume)?;
        if ck.store.config != cfg.model {
            return Err(Error::Config("model keys differ from the checkpoint being resumed".into()));
        }
        check_table(&header.table, &ck.store.table, "the resumed checkpoint")?;
        Trainer::resume(ck, cfg.train.clone())?
    };
    println!("{} parameters, {} scenes", trainer.store.count().total(), scenes.len());
    trainer.run(&scenes, |t| {
        let path = out.join("checkpoints").join(checkpoint_name(t.epochs_done));
        write_checkpoint(&path, &t.checkpoint())?;
        println!("epoch {} loss {:.4} -> {}", t.epochs_done, t.epoch_losses.last().copied().unwrap_or(f64::NAN), path.display());
        let rows: Vec<Vec<String>> =
            t.epoch_losses.iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]).collect();
        write_csv(out.join("csv").join("loss.csv"), &["epoch", "loss"], &rows)
    })?;
    Ok(())
}

pub fn curve(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let store = load_store(cfg)?;
    let scenes = scenes_for_eval(cfg, &store)?;
    let e = &cfg.eval;
    let spec = CurveSpec {
        source: resolve_modalities(&store.table, &e.source)?,
        target: resolve_modalities(&store.table, &e.target)?,
        sweep: (0..=e.sweep_max).collect(),
        target_context: e.target_context,
        observations: e.observations,
        samples: e.samples,
        view: e.view(),
        bootstrap: e.bootstrap,
        seed: e.seed,
    };
    let pts = crossmodal_curve(&store, &scenes, &spec)?;
    let header = ["context_size", "mean_ll", "stderr", "n_scenes"];
    let rows = |per_dim: bool| -> Vec<Vec<String>> {
        pts.iter()
            .map(|p| {
                let (m, s) = if per_dim { (p.mean_ll_per_dim, p.stderr_per_dim) } else { (p.mean_ll, p.stderr) };
                vec![p.context_size.to_string(), m.to_string(), s.to_string(), p.n_scenes.to_string()]
            })
            .collect()
    };
    csv(&out, "curve.csv", &header, &rows(false))?;
    csv(&out, "curve_per_dim.csv", &header, &rows(true))
}

pub fn classify(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let store = load_store(cfg)?;
    let scenes = scenes_for_eval(cfg, &store)?;
    let e = &cfg.eval;
    let spec = ClassifySpec {
        candidates: e.candidates,
        trials: e.trials,
        context: e.classify_context,
        observations: e.observations,
        samples: e.samples,
        context_modalities: resolve_modalities(&store.table, &e.source)?,
        target_modalities: resolve_modalities(&store.table, &e.target)?,
        view: e.view(),
        seed: e.seed,
    };
    let (acc, trials) = classification_trials(&store, &scenes, &spec)?;
    let rows: Vec<Vec<String>> = trials
        .iter()
        .enumerate()
        .map(|(i, t)| vec![i.to_string(), t.truth.to_string(), t.predicted.to_string(), (t.truth == t.predicted).to_string()])
        .collect();
    csv(&out, "classify.csv", &["trial", "truth", "predicted", "correct"], &rows)?;
    println!("accuracy {:.4} over {} trials", acc, trials.len());
    Ok(())
}

pub fn missing(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let (header, train) = load_split(cfg, "train")?;
    let (val_header, val) = load_split(cfg, "val")?;
    check_table(&cfg.gen.params.table()?, &header.table, "the training split")?;
    check_table(&header.table, &val_header.table, "the validation split")?;
    let spec = MissingSpec {
        subset_size: cfg.run.missing_subset,
        modes: cfg.run.fusion_modes.clone(),
        train_eval_scenes: cfg.run.train_eval_scenes,
        seed: cfg.eval.seed,
    };
    let header_row = ["epoch", "split", "mode", "loss"];
    let path = out.join("csv").join("matrix.csv");
    let mut rows: Vec<Vec<String>> = Vec::new();
    missing_modality_protocol(&cfg.model, &header.table, &cfg.train, &train, &val, &spec, |r| {
        println!("{} {} epoch {} loss {:.5}", r.mode, r.split, r.epoch, r.loss);
        rows.push(vec![r.epoch.to_string(), r.split.to_string(), r.mode.to_string(), r.loss.to_string()]);
        write_csv(&path, &header_row, &rows)
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn scaling(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let spec = ScalingSpec {
        modality_counts: cfg.run.scaling_modalities.clone(),
        modes: cfg.run.fusion_modes.clone(),
        height: cfg.gen.params.height,
        width: cfg.gen.params.width,
        warmup: cfg.run.scaling_warmup,
        iterations: cfg.run.scaling_iterations,
        seed: cfg.train.seed,
    };
    let rows: Vec<Vec<String>> = scaling_report(&cfg.model, &spec)?
        .iter()
        .map(|r| {
            vec![
                r.modalities.to_string(),
                r.mode.to_string(),
                r.params.encoders.to_string(),
                r.params.renderers.to_string(),
                r.params.inference.to_string(),
                format!("{:.3}", r.ms_per_iter),
            ]
        })
        .collect();
    // ms_per_iter is wall-clock time and differs between runs
    csv(
        &out,
        "scaling.csv",
        &["modalities", "mode", "params_encoders", "params_renderers", "params_inference", "ms_per_iter"],
        &rows,
    )
}

pub fn dump(cfg: &RunConfig) -> Result<()> {
    let out = prepare(cfg)?;
    let store = load_store(cfg)?;
    let (header, scenes) = load_split(cfg, "test")?;
    check_table(&store.table, &header.table, "the test split")?;
    let e = &cfg.eval;
    let scene = scenes
        .get(e.dump_scene)
        .ok_or_else(|| Error::Config(format!("dump_scene {} but the test split has {} scenes", e.dump_scene, scenes.len())))?;
    let source = resolve_modalities(&store.table, &e.source)?;
    let target = resolve_modalities(&store.table, &e.target)?;
    let n = cfg.run.dump_context;
    let k = cfg.run.dump_targets;
    // targets follow the context pairs, so they are unseen when a target is also a source
    let spec = DumpSpec {
        source: source.iter().map(|&m| (m, n)).collect(),
        targets: target.iter().flat_map(|&m| (n..n + k).map(move |i| (m, i))).collect(),
        samples: e.dump_samples,
        seed: e.seed,
    };
    let rep = crossmodal_dump(&store, scene, &spec, Some(&out.join("img")))?;
    for f in &rep.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

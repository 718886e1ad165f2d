use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use irb_core::ablation::{ids_digest, split_seed};
use irb_core::data::{generate_synthetic, load_image_folder, save_image, stratified_split, write_manifest};
use irb_core::visualize::{descriptor_maps, write_heatmaps};
use irb_core::{ablate as run_ablation, evaluate, fit_run, DataSource, Model, ParamSet, SceneSample};
use log::info;

use crate::config::Settings;
use crate::records::{JsonLines, Record};
use crate::Failure;

fn load_samples(settings: &mut Settings) -> anyhow::Result<Vec<SceneSample>> {
    match &settings.train.data {
        DataSource::Synthetic(spec) => {
            let samples = generate_synthetic(spec, settings.data_seed)?;
            info!("generated {} synthetic images", samples.len());
            Ok(samples)
        }
        DataSource::Folder(dir) => {
            let size = settings.train.model.backbone.input_size;
            let ds = load_image_folder(dir, size).with_context(|| format!("loading {}", dir.display()))?;
            if ds.skipped > 0 {
                log::warn!("skipped {} undecodable files", ds.skipped);
            }
            info!("loaded {} images in {} classes", ds.samples.len(), ds.class_names.len());
            settings.train.model.num_classes = ds.class_names.len();
            settings.train.model.validate()?;
            Ok(ds.samples)
        }
    }
}

fn prepare(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn print_confusion(confusion: &[Vec<usize>]) {
    println!("confusion (rows true, columns predicted):");
    for row in confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("{}", cells.join(""));
    }
}

fn load_model(settings: &Settings, checkpoint: &Path) -> anyhow::Result<Model> {
    let params = ParamSet::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    Ok(Model::with_params(
        settings.train.model.clone(),
        settings.train.variant,
        params,
    )?)
}

pub fn train(mut settings: Settings, run: usize, out: &Path) -> Result<(), Failure> {
    let samples = load_samples(&mut settings)?;
    prepare(out)?;
    fs::write(out.join("config.toml"), settings.to_toml())?;
    let cfg = &settings.train;
    info!("training {} run {run} for {} epochs", cfg.variant.id(), cfg.epochs);
    let fitted = fit_run(cfg, &samples, run)?;
    fitted.model.params.save(&out.join("model.ckpt"))?;

    let mut metrics = JsonLines::create(&out.join("metrics.jsonl"))?;
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "epoch", "lr", "l_cls", "l_sealig", "total"
    );
    for e in &fitted.report.epochs {
        println!(
            "{:>5} {:>10.2e} {:>10.5} {:>10.5} {:>10.5}",
            e.epoch + 1,
            e.lr,
            e.l_cls,
            e.l_sealig,
            e.total
        );
        metrics.write(&Record::Epoch {
            variant: cfg.variant,
            run,
            epoch: e,
        })?;
    }
    metrics.write(&Record::Run(&fitted.outcome))?;
    metrics.finish()?;
    println!(
        "{} run {run}: test accuracy {:.2}% on {} images ({:.1}s)",
        cfg.variant.label(),
        100.0 * fitted.outcome.accuracy,
        fitted.split.test.len(),
        fitted.report.wall_seconds
    );
    print_confusion(&fitted.outcome.confusion);
    Ok(())
}

pub fn eval(mut settings: Settings, checkpoint: &Path, run: usize, out: &Path) -> Result<(), Failure> {
    let samples = load_samples(&mut settings)?;
    let model = load_model(&settings, checkpoint)?;
    let split = stratified_split(
        &samples,
        settings.train.train_ratio,
        split_seed(settings.train.seed, run),
    )?;
    let ev = evaluate(&model, &split.test)?;
    prepare(out)?;
    let mut metrics = JsonLines::create(&out.join("eval.jsonl"))?;
    metrics.write(&Record::Eval {
        variant: settings.train.variant,
        run,
        checkpoint: checkpoint.display().to_string(),
        split_digest: ids_digest(split.train.iter().map(|s| s.id.as_str())),
        accuracy: ev.accuracy,
        confusion: &ev.confusion,
    })?;
    metrics.finish()?;
    println!(
        "{} run {run}: test accuracy {:.2}% on {} images",
        settings.train.variant.label(),
        100.0 * ev.accuracy,
        ev.total()
    );
    print_confusion(&ev.confusion);
    Ok(())
}

pub fn ablate(mut settings: Settings, out: &Path) -> Result<(), Failure> {
    let samples = load_samples(&mut settings)?;
    prepare(out)?;
    fs::write(out.join("config.toml"), settings.to_toml())?;
    let cfg = &settings.train;
    info!("ablating 7 variants x {} runs x {} epochs", cfg.runs, cfg.epochs);
    let start = Instant::now();
    let table = run_ablation(cfg, &samples)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut metrics = JsonLines::create(&out.join("ablation.jsonl"))?;
    for row in &table.rows {
        for r in &row.runs {
            metrics.write(&Record::Run(r))?;
        }
    }
    for row in &table.rows {
        metrics.write(&Record::Summary {
            variant: row.variant,
            label: row.variant.label(),
            runs: row.runs.len(),
            mean: row.mean,
            std: row.std,
            formatted: row.summary(),
        })?;
    }
    metrics.finish()?;
    let text = table.to_string();
    fs::write(out.join("ablation.txt"), &text)?;
    print!("{text}");
    info!("ablation finished in {elapsed:.1}s");
    Ok(())
}

pub fn visualize(
    mut settings: Settings,
    checkpoint: &Path,
    indices: &[usize],
    run: usize,
    out: &Path,
) -> Result<(), Failure> {
    let samples = load_samples(&mut settings)?;
    let model = load_model(&settings, checkpoint)?;
    let split = stratified_split(
        &samples,
        settings.train.train_ratio,
        split_seed(settings.train.seed, run),
    )?;
    let size = settings.train.model.backbone.input_size;
    prepare(out)?;
    let mut sidecar = JsonLines::create(&out.join("heatmaps.jsonl"))?;
    for &i in indices {
        let Some(sample) = split.test.get(i) else {
            return Err(Failure::Usage(anyhow!(
                "sample {i} out of range: test split has {} images",
                split.test.len()
            )));
        };
        let maps = descriptor_maps(&model, &sample.image)?;
        let prefix = format!("{}_", sample.id.replace(['/', '\\'], "_"));
        for rec in write_heatmaps(&maps, out, &prefix, size)? {
            sidecar.write(&Record::Heatmap {
                sample: &sample.id,
                label: sample.label,
                map: &rec,
            })?;
        }
        println!(
            "{}: label {} predicted {} ({} maps)",
            sample.id,
            sample.label,
            maps.predicted,
            maps.maps.len()
        );
    }
    sidecar.finish()?;
    Ok(())
}

pub fn gen_data(settings: Settings, out: &Path) -> Result<(), Failure> {
    let DataSource::Synthetic(spec) = &settings.train.data else {
        return Err(Failure::Usage(anyhow!("gen-data needs data = \"synthetic\"")));
    };
    let samples = generate_synthetic(spec, settings.data_seed)?;
    prepare(out)?;
    let mut written = Vec::with_capacity(samples.len());
    for s in samples {
        let class = format!("{}_{}", s.label, spec.motifs[s.label].name());
        let dir = out.join(&class);
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.png", s.id));
        save_image(&s.image, &path)?;
        written.push(SceneSample {
            source: Some(format!("{class}/{}.png", s.id)),
            ..s
        });
    }
    write_manifest(&written, fs::File::create(out.join("manifest.tsv"))?)?;
    println!(
        "wrote {} images in {} classes to {}",
        written.len(),
        spec.num_classes,
        out.display()
    );
    Ok(())
}

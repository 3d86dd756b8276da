//! One function per subcommand. Each writes its artifacts and the resolved
//! `run_config.json` into the configured output directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use huecontour::datamodel::PlotRecord;
use huecontour::learn::checkpoint::CheckpointMeta;
use huecontour::learn::study::{run_on_features, split_features, study_csv, Curves};
use huecontour::learn::{
    evaluate as evaluate_model, load_checkpoint, save_checkpoint, smote_balance, subset_study as run_subset_study,
    EvalReport, LabeledPlot, Model, RunConfig as TrainConfig,
};
use huecontour::pipeline::{
    analyze as analyze_plots, contour_dir, correlation_report_csv, encode_all, extract_features, group_summary_csv,
    labeled_plots, read_features, slope_report_csv, write_features, PlotFeatures,
};
use huecontour::{generate_cohort, load_manifest, split_dataset, ClassScheme, CohortSpec, ColormapLut, DatasetSplit};

use crate::config::{config_error, RunConfig, RUN_CONFIG_FILE};

/// Creates the output directory and records the configuration there. A
/// `run_config.json` left by a different command is kept; this run's
/// configuration then goes to `run_config.<command>.json`.
fn prepare_out(cfg: &RunConfig) -> anyhow::Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let existing = fs::read_to_string(cfg.out.join(RUN_CONFIG_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<RunConfig>(&t).ok());
    match existing {
        Some(other) if other.command != cfg.command => {
            write_json(&cfg.out.join(format!("run_config.{}.json", cfg.command)), cfg)?
        }
        _ => cfg.write_to(&cfg.out)?,
    }
    Ok(&cfg.out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn load_records(cfg: &RunConfig) -> anyhow::Result<Vec<PlotRecord>> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| config_error("no manifest given (--manifest or `manifest` in the config)"))?;
    let records = load_manifest(path)?;
    if records.is_empty() {
        return Err(config_error(format!("manifest {} lists no plots", path.display())));
    }
    Ok(records)
}

/// Features from a previous `ingest`, or extracted from the images now.
fn load_features(cfg: &RunConfig, records: &[PlotRecord]) -> anyhow::Result<Vec<PlotFeatures>> {
    if let Some(dir) = &cfg.features {
        return Ok(read_features(dir)?);
    }
    let extraction = extract_features(records)?;
    for (id, reason) in &extraction.skipped {
        eprintln!("skipped {id}: {reason}");
    }
    for w in &extraction.warnings {
        eprintln!("warning: {w}");
    }
    Ok(extraction.plots)
}

struct Labeled {
    scheme: ClassScheme,
    plots: Vec<LabeledPlot>,
    split: DatasetSplit,
}

/// Labeled plots and their split: loaded from `cfg.split` when given,
/// otherwise a stratified split over plots that have features.
fn labeled(cfg: &RunConfig) -> anyhow::Result<Labeled> {
    let records = load_records(cfg)?;
    let features = load_features(cfg, &records)?;
    let scheme = ClassScheme::new(cfg.scheme);
    let plots = labeled_plots(&records, &features, &scheme)?;
    let split = match &cfg.split {
        Some(path) => DatasetSplit::load(path)?,
        None => {
            let have: HashSet<&str> = features.iter().map(|p| p.plot_id.as_str()).collect();
            let usable: Vec<PlotRecord> = records
                .into_iter()
                .filter(|r| have.contains(r.plot_id.as_str()))
                .collect();
            split_dataset(&usable, &scheme, cfg.seed)?
        }
    };
    Ok(Labeled { scheme, plots, split })
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        hyper: cfg.hyperparams.clone(),
        smote_k: cfg.smote_k,
        seed: cfg.seed,
    }
}

fn write_report(dir: &Path, name: &str, report: &EvalReport) -> anyhow::Result<()> {
    write_json(&dir.join(format!("eval_{name}.json")), report)?;
    write(&dir.join(format!("confusion_{name}.csv")), report.confusion_csv())
}

fn summary_line(name: &str, r: &EvalReport) -> String {
    format!(
        "{name}: n={} accuracy={:.4} adjacent={:.4} top2={:.4}",
        r.n, r.accuracy, r.adjacent_accuracy, r.top2_prob_accuracy
    )
}

pub fn synthesize(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let spec = CohortSpec {
        n_plots: cfg.plots,
        scheme: cfg.scheme,
        timepoints: cfg.timepoints,
        seed: cfg.seed,
        image_size: cfg.image_size,
        generator: cfg.generator.clone(),
    };
    let cohort = generate_cohort(&spec, out)?;
    let mut truth = String::from("plot_id,label,rm_rating,onset_tp,decline_rate,yield_mth\n");
    for p in &cohort.truth {
        let _ = writeln!(
            truth,
            "{},{},{},{},{},{}",
            p.plot_id, p.label, p.profile.rm_rating, p.profile.onset_tp, p.profile.decline_rate, p.yield_mth
        );
    }
    write(&out.join("truth.csv"), truth)?;
    println!("{} plots x {} timepoints -> {}", cohort.records.len(), cfg.timepoints, cohort.manifest_path.display());
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let records = load_records(cfg)?;
    let extraction = extract_features(&records)?;
    write_features(out, &extraction.plots)?;
    let skipped: Vec<serde_json::Value> = extraction
        .skipped
        .iter()
        .map(|(id, reason)| serde_json::json!({ "plot_id": id, "reason": reason }))
        .collect();
    write_json(
        &out.join("ingest_report.json"),
        &serde_json::json!({
            "plots": extraction.plots.len(),
            "skipped": skipped,
            "warnings": extraction.warnings,
        }),
    )?;
    for (id, reason) in &extraction.skipped {
        eprintln!("skipped {id}: {reason}");
    }
    println!("{} plots ingested, {} skipped", extraction.plots.len(), extraction.skipped.len());
    Ok(())
}

pub fn encode(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let records = load_records(cfg)?;
    let plots = load_features(cfg, &records)?;
    let lut = match &cfg.colormap {
        Some(path) => ColormapLut::load(path)?,
        None => ColormapLut::batlow(),
    };
    let dir = contour_dir(out, &ClassScheme::new(cfg.scheme), cfg.subset);
    let encoded = encode_all(&plots, cfg.subset, &lut, &dir, cfg.write_grids)?;
    let mut summary = String::from("plot_id,rows,discarded_fraction,all_zero\n");
    for e in &encoded {
        let _ = writeln!(summary, "{},{},{},{}", e.plot_id, e.grid.rows(), e.discarded_fraction, e.all_zero);
        if e.all_zero {
            eprintln!("warning: {} has no mass in the kept hue range", e.plot_id);
        }
    }
    write(&out.join(format!("encode_{}.csv", cfg.subset.slug())), summary)?;
    println!("{} contour images -> {}", encoded.len(), dir.display());
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let records = load_records(cfg)?;
    let plots = load_features(cfg, &records)?;
    let scheme = ClassScheme::new(cfg.scheme);
    let analysis = analyze_plots(&records, &plots, &scheme)?;
    write(&out.join("slope_report.csv"), slope_report_csv(&analysis.series))?;
    let groups = group_summary_csv(&analysis.groups);
    write(&out.join("slope_groups.csv"), &groups)?;
    print!("{groups}");
    match &analysis.correlations {
        Some(reports) => write(&out.join("correlation_report.csv"), correlation_report_csv(reports))?,
        None => eprintln!("notice: no plot has a yield; skipping the slope-yield correlation"),
    }
    Ok(())
}

pub fn balance(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let data = labeled(cfg)?;
    data.split.save(&out.join("split.json"))?;
    let features = split_features(&data.plots, &data.split, cfg.subset)?;
    let k = cfg
        .smote_k
        .ok_or_else(|| config_error("balance needs SMOTE enabled (smote_k)"))?;
    let outcome = smote_balance(&features.train, k, cfg.seed)?;

    let before = huecontour::learn::smote::class_counts(&features.train);
    let after = outcome.class_counts();
    let mut table = String::from("label,original,balanced\n");
    for (label, n) in &after {
        let _ = writeln!(table, "{label},{},{n}", before.get(label).copied().unwrap_or(0));
    }
    write(&out.join("balance.csv"), &table)?;

    let train_ids = &data.split.train;
    let mut parents = String::from("synthetic,label,base_plot,neighbour_plot\n");
    for (i, (s, &(a, b))) in outcome.synthetic().iter().zip(&outcome.parents).enumerate() {
        let _ = writeln!(parents, "{i},{},{},{}", s.label, train_ids[a], train_ids[b]);
    }
    write(&out.join("smote_parents.csv"), parents)?;
    for label in &outcome.duplicated_classes {
        eprintln!("warning: class {label} has a single training plot; padded by duplication");
    }
    print!("{table}");
    Ok(())
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let data = labeled(cfg)?;
    data.split.save(&out.join("split.json"))?;
    let config = train_config(cfg);
    let features = split_features(&data.plots, &data.split, cfg.subset)?;
    let result = run_on_features(&features, &data.scheme, cfg.subset, &config, cfg.hierarchical)?;

    let meta = CheckpointMeta {
        scheme: cfg.scheme,
        subset: cfg.subset.slug().to_string(),
        seed: cfg.seed,
        hyperparams: cfg.hyperparams.clone(),
    };
    save_checkpoint(&out.join("model.ckpt"), &result.model, &meta)?;
    match &result.curves {
        Curves::Flat(c) => write(&out.join("training_curve.csv"), c.to_csv())?,
        Curves::Hierarchical(h) => {
            write(&out.join("training_curve_stage1.csv"), h.stage1.to_csv())?;
            for (g, c) in h.stage2.iter().enumerate() {
                if let Some(c) = c {
                    write(&out.join(format!("training_curve_stage2_group{}.csv", g + 1)), c.to_csv())?;
                }
            }
        }
    }
    write_report(out, "train", &result.train_report)?;
    write_report(out, "test", &result.test_report)?;
    println!(
        "{} model, {} training samples ({} synthetic)",
        result.model.kind(),
        result.train_samples,
        result.synthetic_samples
    );
    println!("{}", summary_line("train", &result.train_report));
    println!("{}", summary_line("test", &result.test_report));

    if !cfg.subset_study.is_empty() {
        let rows = run_subset_study(&data.plots, &data.split, &data.scheme, &cfg.subset_study, &config)?;
        let csv = study_csv(&rows);
        write(&out.join("subset_study.csv"), &csv)?;
        print!("{csv}");
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, partition: &str) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| config_error("no checkpoint given (--checkpoint)"))?;
    let (model, meta): (Model, CheckpointMeta) = load_checkpoint(path)?;
    let subset: huecontour::SubsetMode = meta.subset.parse()?;
    // The model fixes the scheme, subset and (unless a split file is given)
    // the seed of the split it was trained on.
    let mut effective = cfg.clone();
    effective.scheme = meta.scheme;
    effective.subset = subset;
    if effective.split.is_none() {
        effective.seed = meta.seed;
    }
    let data = labeled(&effective)?;
    let features = split_features(&data.plots, &data.split, subset)?;
    let samples = match partition {
        "train" => &features.train,
        "val" => &features.val,
        _ => &features.test,
    };
    let report = evaluate_model(model.classifier(), samples, &data.scheme)?;
    write_report(out, partition, &report)?;
    println!("{}", summary_line(partition, &report));
    Ok(())
}

pub fn subset_study(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let data = labeled(cfg)?;
    data.split.save(&out.join("split.json"))?;
    let rows = run_subset_study(&data.plots, &data.split, &data.scheme, &cfg.subset_study, &train_config(cfg))?;
    let csv = study_csv(&rows);
    write(&out.join("subset_study.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn csv_as_markdown(text: &str) -> String {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", " --- |".repeat(cells.len()));
        }
    }
    out
}

pub fn report(cfg: &RunConfig, from: &[PathBuf]) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let dirs: Vec<PathBuf> = if from.is_empty() {
        vec![out.to_path_buf()]
    } else {
        from.to_vec()
    };
    let mut md = String::from("# Run report\n");
    for dir in &dirs {
        if !dir.is_dir() {
            return Err(config_error(format!("{} is not a directory", dir.display())));
        }
        let command = fs::read_to_string(dir.join(RUN_CONFIG_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<RunConfig>(&t).ok())
            .map(|c| c.command)
            .unwrap_or_else(|| "unknown".into());
        let _ = write!(md, "\n## {} ({command})\n", dir.display());

        let mut evals = BTreeMap::new();
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(part) = name.strip_prefix("eval_").and_then(|n| n.strip_suffix(".json")) {
                let text = fs::read_to_string(dir.join(&name))?;
                let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {name}"))?;
                evals.insert(part.to_string(), r);
            }
        }
        if !evals.is_empty() {
            md.push_str("\n| part | n | accuracy | adjacent | top-2 |\n| --- | --- | --- | --- | --- |\n");
            for (part, r) in &evals {
                let _ = writeln!(
                    md,
                    "| {part} | {} | {:.4} | {:.4} | {:.4} |",
                    r.n, r.accuracy, r.adjacent_accuracy, r.top2_prob_accuracy
                );
            }
        }
        for (file, title) in [
            ("subset_study.csv", "Temporal subsets"),
            ("slope_groups.csv", "ExG slope by group"),
            ("correlation_report.csv", "Slope-yield correlation"),
            ("balance.csv", "Class balance"),
        ] {
            if let Ok(text) = fs::read_to_string(dir.join(file)) {
                let _ = write!(md, "\n### {title}\n\n{}", csv_as_markdown(&text));
            }
        }
    }
    write(&out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

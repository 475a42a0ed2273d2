//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use crate::config::RunConfig;
use crate::descriptors::{ingest_with_dimension, write_descriptor_file, DescriptorSet, DescriptorSource};
use crate::encode::{Encoding, Vocabulary};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{
    certainty_ranking, confusion_table, load_manifest, mean_bow_report, nearest_patches_report, report_table,
    split_by_preparation, Level,
};
use crate::formats::{encode_encoded_dataset, EncodedHeader};
use crate::imaging::{Gate, Scan};
use crate::labels::{PatchLabel, Species};
use crate::learn::TrainedModel;
use crate::pipeline::{
    compute_descriptors, encode_all, fit_vocabulary, predict_scan, preprocess_corpus, preprocess_scan,
    read_patch_index, run_protocol, scan_records, scan_seed, vocab_seed, write_patch_index, Dataset, PatchRecord,
    ProtocolSettings,
};
use crate::synth::{write_corpus, SynthSpec};

pub const RESOLVED_CONFIG: &str = "run_config.toml";
pub const PATCH_INDEX: &str = "patch_index.tsv";
pub const DESCRIPTORS: &str = "descriptors.pvdf";

#[derive(Debug, Parser)]
#[command(
    name = "deepbow",
    version,
    about = "Bag-of-words and Fisher Vector classification of fungus scans"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize, segment and cut scans into gated patches; compute descriptors.
    Preprocess(Common),
    /// Train one vocabulary per outer fold and encode every patch.
    Encode {
        #[command(flatten)]
        common: Common,
        /// Load existing vocabularies instead of retraining.
        #[arg(long)]
        reuse: bool,
    },
    /// Run the 2-fold protocol with inner grid search and write reports.
    Evaluate(Common),
    /// Classify one scan with the models of a trained fold.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Scan image to classify.
        #[arg(long)]
        scan: PathBuf,
        /// Identifier used in patch ids (defaults to the file stem).
        #[arg(long)]
        scan_id: Option<String>,
        /// Models trained on this preparation.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        fold: u8,
        /// Descriptor file for the scan's patches (file-ingest source).
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Mean-BoW table, nearest patches per centroid and certainty rankings.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        fold: u8,
    },
    /// Write a procedurally generated scan corpus with its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated species codes.
        #[arg(long, default_value = "CA,CG,CL,CN", value_delimiter = ',')]
        species: Vec<Species>,
        #[arg(long, default_value_t = 10)]
        scans: usize,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "DEEPBOW_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "DEEPBOW_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).context(|| format!("config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = m.clone();
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_workers(workers: usize) {
    // a global pool can only be installed once per process; later calls keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
}

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => cmd_preprocess(&c.resolve()?),
        Command::Encode { common, reuse } => cmd_encode(&common.resolve()?, reuse),
        Command::Evaluate(c) => cmd_evaluate(&c.resolve()?),
        Command::Predict {
            common,
            scan,
            scan_id,
            fold,
            descriptors,
        } => {
            let verdict = cmd_predict(
                &common.resolve()?,
                &scan,
                scan_id.as_deref(),
                fold,
                descriptors.as_deref(),
            )?;
            println!("{verdict}");
            Ok(())
        }
        Command::Report { common, fold } => cmd_report(&common.resolve()?, fold),
        Command::Synth {
            out,
            species,
            scans,
            size,
            seed,
        } => {
            let spec = SynthSpec {
                species,
                scans_per_preparation: scans,
                height: size,
                width: size,
                seed,
            };
            let entries = write_corpus(&out, &spec)?;
            println!("wrote {} scans to {}", entries.len(), out.display());
            Ok(())
        }
    }
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    init_workers(cfg.workers);
    let manifest = load_manifest(&cfg.manifest).context(|| format!("manifest {}", cfg.manifest.display()))?;
    let outputs = preprocess_corpus(&manifest, cfg)?;
    let out = prepare_output(cfg)?;
    let masks = out.join("masks");
    fs::create_dir_all(&masks)?;
    let mut records = Vec::new();
    let mut sets = Vec::new();
    for o in outputs {
        o.mask.save(&masks.join(format!("{}.png", o.scan_id)))?;
        records.extend(o.records);
        sets.extend(o.descriptors.unwrap_or_default());
    }
    write_patch_index(&out.join(PATCH_INDEX), &records)?;
    if matches!(cfg.descriptors.source, DescriptorSource::ToyLocalStats { .. }) {
        write_descriptor_file(&out.join(DESCRIPTORS), &sets)?;
    }
    let count = |g: Gate| records.iter().filter(|r| r.gate == g).count();
    println!(
        "{} scans, {} foreground, {} background, {} skipped patches",
        manifest.len(),
        count(Gate::Foreground),
        count(Gate::Background),
        count(Gate::Skipped)
    );
    Ok(())
}

fn descriptor_path(cfg: &RunConfig) -> PathBuf {
    match &cfg.descriptors.source {
        DescriptorSource::FileIngest { path, .. } => path.clone(),
        DescriptorSource::ToyLocalStats { .. } => cfg.output_dir.join(DESCRIPTORS),
    }
}

/// Patch index and descriptors written by `preprocess`, joined.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Vec<PatchRecord>, Dataset)> {
    let index = cfg.output_dir.join(PATCH_INDEX);
    let records = read_patch_index(&index).context(|| format!("patch index {}", index.display()))?;
    let path = descriptor_path(cfg);
    let sets = ingest_with_dimension(&path, cfg.descriptors.source.dimension())
        .context(|| format!("descriptors {}", path.display()))?;
    let data = Dataset::assemble(&records, sets)?;
    Ok((records, data))
}

fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    if !path.exists() {
        return Err(Error::ModelMissing(path.to_path_buf()));
    }
    Vocabulary::from_bytes(&fs::read(path)?).context(|| format!("vocabulary {}", path.display()))
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    if !path.exists() {
        return Err(Error::ModelMissing(path.to_path_buf()));
    }
    TrainedModel::from_bytes(&fs::read(path)?).context(|| format!("model {}", path.display()))
}

pub fn cmd_encode(cfg: &RunConfig, reuse: bool) -> Result<()> {
    init_workers(cfg.workers);
    let manifest = load_manifest(&cfg.manifest)?;
    split_by_preparation(&manifest)?;
    let (_, data) = load_dataset(cfg)?;
    let out = prepare_output(cfg)?;
    let settings = ProtocolSettings::from_config(cfg);
    let options = cfg.encoding.options();
    let base: Vec<usize> = (0..data.patches.len())
        .filter(|&i| !data.patches[i].augmented)
        .collect();
    for prep in 1..=2u8 {
        let vocab_path = out.join(format!("vocab_fold{prep}.pvmd"));
        let vocab = if reuse && vocab_path.exists() {
            read_vocabulary(&vocab_path)?
        } else {
            let rows = data.preparation_rows(prep, true);
            let v = fit_vocabulary(
                &data,
                &rows,
                cfg.encoding.kind,
                cfg.encoding.k,
                &settings,
                vocab_seed(cfg.seed, prep, cfg.encoding.k),
            )?;
            fs::write(&vocab_path, v.to_bytes())?;
            v
        };
        let x = encode_all(&data, &vocab, &options)?;
        let header = EncodedHeader {
            encoding: vocab.encoding(),
            vocab_k: vocab.k(),
            descriptor_dim: vocab.dim(),
            options,
        };
        let rows: Vec<(String, crate::encode::EncodedVector)> = base
            .iter()
            .map(|&i| {
                (
                    data.patches[i].record.patch_id.clone(),
                    crate::encode::EncodedVector {
                        values: x.row(i).to_vec(),
                        encoding: vocab.encoding(),
                        vocab_k: vocab.k(),
                        descriptor_dim: vocab.dim(),
                    },
                )
            })
            .collect();
        fs::write(
            out.join(format!("encoded_fold{prep}.pvef")),
            encode_encoded_dataset(&header, &rows)?,
        )?;
        println!(
            "fold {prep}: {} {} vectors of length {}",
            rows.len(),
            vocab.encoding().as_str(),
            x.ncols()
        );
    }
    Ok(())
}

fn label_name(i: usize) -> String {
    PatchLabel::from_index(i).map_or_else(|| i.to_string(), |l| l.to_string())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    init_workers(cfg.workers);
    let manifest = load_manifest(&cfg.manifest)?;
    let (_, data) = load_dataset(cfg)?;
    let settings = ProtocolSettings::from_config(cfg);
    let result = run_protocol(&manifest, &data, &settings)?;
    let out = prepare_output(cfg)?;
    let models = out.join("models");
    fs::create_dir_all(&models)?;

    fs::write(
        out.join("patch_report.tsv"),
        report_table(std::slice::from_ref(&result.patch_report)),
    )?;
    fs::write(
        out.join("scan_report.tsv"),
        report_table(std::slice::from_ref(&result.scan_report)),
    )?;
    let json = serde_json::json!({ "patch": result.patch_report, "scan": result.scan_report, "folds": result.plan });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&json)? + "\n")?;

    let mut grid = String::from("train_preparation\tpoint\tinner_accuracy\n");
    let mut timings = String::from("method\ttrain_preparation\tseconds\n");
    let mut scans = String::from("train_preparation\tscan_id\twinner\tvotes\n");
    for (f, (pr, sr)) in result
        .folds
        .iter()
        .zip(result.patch_report.folds.iter().zip(&result.scan_report.folds))
    {
        let p = f.train_preparation;
        for scan in &f.unscored {
            eprintln!("warning: scan {scan} has no foreground patches; left out of the scan report");
        }
        fs::write(
            out.join(format!("confusion_patch_fold{p}.tsv")),
            confusion_table(pr, Level::Patch),
        )?;
        fs::write(
            out.join(format!("confusion_scan_fold{p}.tsv")),
            confusion_table(sr, Level::Scan),
        )?;
        fs::write(models.join(format!("fold{p}_vocab.pvmd")), f.vocabulary.to_bytes())?;
        fs::write(models.join(format!("fold{p}_model.pvmd")), f.model.to_bytes())?;
        for (point, score) in &f.grid_scores {
            grid.push_str(&format!("{p}\t{point}\t{score:.6}\n"));
        }
        timings.push_str(&format!("{}\t{p}\t{:.3}\n", result.patch_report.method, f.seconds));
        for s in &f.scans {
            let votes: Vec<String> = s
                .votes
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0)
                .map(|(i, v)| format!("{}:{v}", label_name(i)))
                .collect();
            scans.push_str(&format!(
                "{p}\t{}\t{}\t{}\n",
                s.scan_id,
                label_name(s.winner),
                votes.join(",")
            ));
        }

        let classes = f.model.classifier.classes();
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(out.join(format!("predictions_fold{p}.tsv")))?;
        let mut header = vec![
            "patch_id".to_string(),
            "scan_id".into(),
            "gate".into(),
            "truth".into(),
            "predicted".into(),
        ];
        header.extend(classes.iter().map(|&c| format!("decision_{}", label_name(c))));
        w.write_record(&header)?;
        for (i, &r) in f.test_rows.iter().enumerate() {
            let rec = &data.patches[r].record;
            let mut row = vec![
                rec.patch_id.clone(),
                rec.scan_id.clone(),
                rec.gate.as_str().to_string(),
                data.patches[r].label.to_string(),
                label_name(f.predicted[i]),
            ];
            row.extend(f.decisions.row(i).iter().map(|v| format!("{v:.9}")));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    fs::write(out.join("grid_scores.tsv"), grid)?;
    fs::write(out.join("scan_predictions.tsv"), scans)?;
    fs::write(out.join("timings.tsv"), timings)?;
    print!("{}", report_table(&[result.patch_report]));
    print!("{}", report_table(&[result.scan_report]));
    Ok(())
}

/// Classifies one scan; returns the verdict as JSON.
pub fn cmd_predict(
    cfg: &RunConfig,
    scan_path: &Path,
    scan_id: Option<&str>,
    fold: u8,
    descriptor_file: Option<&Path>,
) -> Result<String> {
    init_workers(cfg.workers);
    let models = cfg.output_dir.join("models");
    let vocab = read_vocabulary(&models.join(format!("fold{fold}_vocab.pvmd")))?;
    let model = read_model(&models.join(format!("fold{fold}_model.pvmd")))?;
    let scan_id = scan_id
        .map(str::to_string)
        .or_else(|| scan_path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scan".into());
    // ground truth is unknown here; species and preparation are placeholders
    let scan =
        Scan::load(scan_path, scan_id.clone(), Species::CA, 1).context(|| format!("scan {}", scan_path.display()))?;
    // a featureless scan holds no colony to classify
    let pre = preprocess_scan(&scan, &cfg.preprocess).map_err(|e| match e {
        Error::DegenerateImage(_) => Error::NoForegroundPatches,
        e => e,
    })?;
    let entry = crate::eval::ManifestEntry {
        scan_id: scan_id.clone(),
        path: scan_path.to_path_buf(),
        species: Species::CA,
        preparation_id: 1,
    };
    let fg: Vec<PatchRecord> = scan_records(&entry, &pre.grid)
        .into_iter()
        .filter(|r| r.gate == Gate::Foreground)
        .collect();
    let sets: Vec<DescriptorSet> = match (&cfg.descriptors.source, descriptor_file) {
        (_, Some(path)) => {
            let mut all = ingest_with_dimension(path, cfg.descriptors.source.dimension())?;
            let mut picked = Vec::new();
            let mut missing = Vec::new();
            for r in &fg {
                match all.iter().position(|s| s.patch_id == r.patch_id) {
                    Some(i) => picked.push(all.swap_remove(i)),
                    None => missing.push(r.patch_id.clone()),
                }
            }
            if !missing.is_empty() {
                return Err(Error::MissingDescriptors(missing));
            }
            picked
        }
        (DescriptorSource::ToyLocalStats { .. }, None) => {
            compute_descriptors(&pre, &fg, &cfg.descriptors.source, false, scan_seed(cfg.seed, &scan_id))?
        }
        (DescriptorSource::FileIngest { .. }, None) => {
            return Err(Error::InvalidArgument(
                "file-ingest descriptors need --descriptors for prediction".into(),
            ))
        }
    };
    let verdict = predict_scan(&scan_id, &sets, &vocab, &cfg.encoding.options(), &model)?;
    Ok(serde_json::to_string_pretty(&verdict)?)
}

pub fn cmd_report(cfg: &RunConfig, fold: u8) -> Result<()> {
    init_workers(cfg.workers);
    let (_, data) = load_dataset(cfg)?;
    let out = prepare_output(cfg)?;
    let settings = ProtocolSettings::from_config(cfg);
    let fg: Vec<usize> = (0..data.patches.len())
        .filter(|&i| !data.patches[i].augmented && data.patches[i].record.gate == Gate::Foreground)
        .collect();

    // cluster analyses with a BoW codebook trained on the fold's training side
    let train = data.preparation_rows(fold, true);
    let vocab = fit_vocabulary(
        &data,
        &train,
        Encoding::Bow,
        cfg.report.bow_k,
        &settings,
        vocab_seed(cfg.seed, fold, cfg.report.bow_k),
    )?;
    let Vocabulary::Codebook(codebook) = &vocab else {
        unreachable!("BoW training yields a codebook")
    };
    fs::write(out.join(format!("codebook_fold{fold}.pvmd")), vocab.to_bytes())?;
    let options = crate::encode::EncodingOptions {
        bow_raw_counts: false,
        ..cfg.encoding.options()
    };
    let encodings: Vec<(String, crate::encode::EncodedVector)> = fg
        .iter()
        .map(|&i| {
            Ok((
                data.patches[i].record.species.to_string(),
                vocab.encode(&data.patches[i].descriptors, &options)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut table = String::from("species\tstatistic");
    for j in 0..codebook.k() {
        table.push_str(&format!("\tc{j}"));
    }
    table.push('\n');
    for m in mean_bow_report(&encodings)? {
        for (name, values) in [("mean", &m.mean), ("variance", &m.variance)] {
            table.push_str(&format!("{}\t{name}", m.group));
            for v in values {
                table.push_str(&format!("\t{v:.6}"));
            }
            table.push('\n');
        }
    }
    fs::write(out.join("mean_bow.tsv"), table)?;

    let pool: Vec<DescriptorSet> = fg.iter().map(|&i| data.patches[i].descriptors.clone()).collect();
    let mut nearest = String::from("centroid\trank\tpatch_id\tdistance\n");
    for (c, list) in nearest_patches_report(codebook, &pool, cfg.report.nearest)?
        .iter()
        .enumerate()
    {
        for (rank, n) in list.iter().enumerate() {
            nearest.push_str(&format!("{c}\t{}\t{}\t{:.6}\n", rank + 1, n.patch_id, n.distance));
        }
    }
    fs::write(out.join("nearest_patches.tsv"), nearest)?;

    // certainty of the evaluated fold model on its foreground test patches
    let models = cfg.output_dir.join("models");
    let fold_vocab = read_vocabulary(&models.join(format!("fold{fold}_vocab.pvmd")))?;
    let model = read_model(&models.join(format!("fold{fold}_model.pvmd")))?;
    let test: Vec<usize> = fg
        .iter()
        .copied()
        .filter(|&i| data.patches[i].record.preparation != fold)
        .collect();
    let x = encode_all(&data, &fold_vocab, &cfg.encoding.options())?.select(Axis(0), &test);
    let decisions = model.decision_values(x.view())?;
    let predicted = model.predict(x.view())?;
    let ids: Vec<String> = test.iter().map(|&i| data.patches[i].record.patch_id.clone()).collect();
    let ranking = certainty_ranking(&ids, decisions.view(), &predicted)?;
    let mut full = String::from("class\trank\tpatch_id\tdecision\tpredicted\n");
    let mut extremes = String::from("class\tend\trank\tpatch_id\tdecision\tpredicted\n");
    for (&class, list) in model.classifier.classes().iter().zip(&ranking) {
        let name = label_name(class);
        for (rank, r) in list.iter().enumerate() {
            full.push_str(&format!(
                "{name}\t{}\t{}\t{:.9}\t{}\n",
                rank + 1,
                r.patch_id,
                r.value,
                label_name(r.predicted)
            ));
        }
        let n = cfg.report.certainty_top.min(list.len());
        for (end, part) in [
            ("most_positive", &list[..n]),
            ("most_negative", &list[list.len() - n..]),
        ] {
            for (rank, r) in part.iter().enumerate() {
                extremes.push_str(&format!(
                    "{name}\t{end}\t{}\t{}\t{:.9}\t{}\n",
                    rank + 1,
                    r.patch_id,
                    r.value,
                    label_name(r.predicted)
                ));
            }
        }
    }
    fs::write(out.join(format!("certainty_fold{fold}.tsv")), full)?;
    fs::write(out.join(format!("certainty_extremes_fold{fold}.tsv")), extremes)?;
    println!(
        "report for fold {fold}: {} clusters, {} foreground patches, {} ranked test patches",
        codebook.k(),
        fg.len(),
        test.len()
    );
    Ok(())
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use scorpion::analysis::{
    deviations_csv, paired_analysis, project_2d, separability_of_deviations, separability_of_stats, stats_csv, unpaired_analysis,
};
use scorpion::augment::{fit_stain_distribution, make_sa, ColorJitterParams, FdaParams, SaConfig, SaMethod};
use scorpion::fileio::{load_prob_map, write_string};
use scorpion::image::{load_image, save_image};
use scorpion::manifest::{load_manifest, save_manifest};
use scorpion::metrics::{consistency_from_predictions, dice, hard_mask, ConsistencyReport, SamplePredictions};
use scorpion::plot::{plot_sweep, scatter_svg};
use scorpion::registration::{extract_aligned_patches, random_regions, register, RegistrationParams, RegistrationRecord};
use scorpion::simcons::{
    evaluate_model, history_csv, lambda_sweep, make_synthetic_benchmark, train, BenchmarkParams, Segmenter, SimConsConfig,
    SyntheticBenchmark, TrainingSample,
};
use scorpion::{DatasetManifest, Error, LabelMask, PairedSample, Rng, ScannerId};

use crate::{
    AnalyzeArgs, AugmentArgs, BenchArgs, Cli, Command, EvaluateArgs, ExtractArgs, Failure, Method, RegisterArgs, SaChoice, SweepArgs,
    SynthArgs, TrainArgs, TrainConfigArgs,
};

type Outcome = Result<Vec<PathBuf>, Failure>;

pub fn dispatch(cli: &Cli) -> Outcome {
    let log = |msg: &str| {
        if cli.verbose > 0 {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Register(a) => register_cmd(a, cli.seed),
        Command::Extract(a) => extract_cmd(a, cli.seed, &log),
        Command::Augment(a) => augment_cmd(a, cli.seed),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Train(a) => train_cmd(a, cli.seed, &log),
        Command::Sweep(a) => sweep_cmd(a, cli.seed, &log),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(Error::Io { path: dir.into(), source: e }))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))?;
    text.push('\n');
    write_string(path, &text)?;
    Ok(path.to_path_buf())
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, Failure> {
    write_string(&path, text)?;
    Ok(path)
}

fn scanner_id(s: &str) -> Result<ScannerId, Failure> {
    ScannerId::new(s).map_err(|e| Failure::Usage(e.to_string()))
}

fn register_cmd(a: &RegisterArgs, seed: u64) -> Outcome {
    let reference = load_image(&a.reference)?;
    let moving = load_image(&a.moving)?;
    let params = RegistrationParams { max_keypoints: a.max_keypoints, ratio: a.ratio, iters: a.iters, inlier_tol: a.inlier_tol };
    let reg = register(&reference, &moving, &params, &mut Rng::new(seed))?;
    Ok(vec![write_json(&a.out, &reg.record())?])
}

fn extract_cmd(a: &ExtractArgs, seed: u64, log: &dyn Fn(&str)) -> Outcome {
    let reference_id = scanner_id(&a.reference_id)?;
    let reference = load_image(&a.reference)?;
    let mut others = BTreeMap::new();
    for (id, path) in &a.scans {
        let id = scanner_id(id)?;
        if id == reference_id || others.contains_key(&id) {
            return Err(Failure::Usage(format!("scanner {id} given twice")));
        }
        others.insert(id, load_image(path)?);
    }
    let mut transforms = BTreeMap::new();
    for (id, path) in &a.transforms {
        let id = scanner_id(id)?;
        if !others.contains_key(&id) {
            return Err(Failure::Usage(format!("transform for unknown scanner {id}")));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(Error::Io { path: path.clone(), source: e }))?;
        let record: RegistrationRecord = serde_json::from_str(&text)
            .map_err(|e| Failure::Data(Error::Malformed { path: path.clone(), reason: e.to_string() }))?;
        transforms.insert(id, record.transform());
    }
    let root = Rng::new(seed);
    for (i, (id, img)) in others.iter().enumerate() {
        if !transforms.contains_key(id) {
            log(&format!("registering {id}"));
            let reg = register(&reference, img, &RegistrationParams::default(), &mut root.split(i as u64 + 1))?;
            transforms.insert(id.clone(), reg.transform);
        }
    }
    let (w, h) = reference.dims();
    let regions = random_regions(w, h, a.region_size, a.regions, &mut root.split(0))?;
    let samples = extract_aligned_patches(&reference_id, &reference, &others, &transforms, &regions, a.region_size, a.patch_size)?;

    create_dir(&a.out)?;
    let mut scanners = vec![reference_id.clone()];
    scanners.extend(others.keys().cloned());
    let mut entries = Vec::with_capacity(samples.len());
    let mut written = Vec::new();
    for s in &samples {
        create_dir(&a.out.join(&s.sample_id))?;
        let mut patches = BTreeMap::new();
        for (id, img) in &s.patches {
            let rel = format!("{}/{id}.png", s.sample_id);
            save_image(img, a.out.join(&rel))?;
            patches.insert(id.clone(), rel);
        }
        entries.push(PairedSample { sample_id: s.sample_id.clone(), region_origin: s.region_origin, patches, label: None });
    }
    let manifest = DatasetManifest::new(scanners, a.patch_size, a.micron_extent, entries)?;
    let path = a.out.join("manifest.json");
    save_manifest(&manifest, &path)?;
    written.push(path);
    Ok(written)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Data(Error::Io { path: dir.into(), source: e }))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png") || x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    Ok(files)
}

fn augment_cmd(a: &AugmentArgs, seed: u64) -> Outcome {
    let input = load_image(&a.input)?;
    let pool = match &a.style_pool {
        Some(dir) => Some(image_files(dir)?.iter().map(load_image).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };
    let mut config = SaConfig {
        color_jitter: ColorJitterParams { brightness: a.brightness, contrast: a.contrast, saturation: a.saturation, hue: a.hue },
        fda: FdaParams { beta: a.beta },
        stain: None,
    };
    let method = match a.method {
        Method::Colorjitter => SaMethod::ColorJitter,
        Method::Fda => SaMethod::Fda,
        Method::Randstainna => {
            let corpus = pool.as_deref().ok_or_else(|| Failure::Usage("randstainna needs --style-pool".into()))?;
            config.stain = Some(fit_stain_distribution(corpus)?);
            SaMethod::RandStainNa
        }
    };
    if a.method == Method::Fda && pool.is_none() {
        return Err(Failure::Usage("fda needs --style-pool".into()));
    }
    let sa = make_sa(method, &config, pool.as_deref())?;
    let out = sa.apply(&input, &mut Rng::new(seed));
    save_image(&out, &a.output)?;
    Ok(vec![a.output.clone()])
}

#[derive(Serialize)]
struct Separability {
    reference: String,
    unpaired: Option<f64>,
    paired: Option<f64>,
}

fn analyze_cmd(a: &AnalyzeArgs) -> Outcome {
    let m = load_manifest(&a.manifest)?;
    let reference = match &a.reference {
        Some(r) => scanner_id(r)?,
        None => m.scanners.first().cloned().ok_or_else(|| Failure::Data(Error::EmptyInput("manifest lists no scanners".into())))?,
    };
    if !m.scanners.contains(&reference) {
        return Err(Failure::Usage(format!("reference {reference} is not in the manifest")));
    }
    let stats = unpaired_analysis(&m)?;
    let dev = paired_analysis(&m, &reference)?;
    create_dir(&a.out)?;
    let mut written = vec![write_text(a.out.join("stats.csv"), &stats_csv(&stats))?, write_text(a.out.join("deviations.csv"), &deviations_csv(&dev))?];
    let sep = Separability {
        reference: reference.to_string(),
        unpaired: separability_of_stats(&stats, Some(&reference)).ok(),
        paired: separability_of_deviations(&dev, Some(&reference)).ok(),
    };
    written.push(write_json(&a.out.join("separability.json"), &sep)?);
    if !stats.is_empty() {
        let groups: Vec<String> = stats.iter().map(|s| s.scanner.to_string()).collect();
        let xy = project_2d(&stats.iter().map(|s| s.values.to_vec()).collect::<Vec<_>>())?;
        let points: Vec<_> = groups.iter().zip(&xy).map(|(g, p)| (g.clone(), p.0, p.1)).collect();
        written.push(write_text(a.out.join("unpaired.svg"), &scatter_svg("Unpaired patch statistics", &points)?)?);
        let xy = project_2d(&dev.iter().map(|d| d.delta.to_vec()).collect::<Vec<_>>())?;
        let points: Vec<_> = dev.iter().zip(&xy).map(|(d, p)| (d.scanner.to_string(), p.0, p.1)).collect();
        written.push(write_text(a.out.join("paired.svg"), &scatter_svg(&format!("Deviations from {reference}"), &points)?)?);
    }
    Ok(written)
}

/// Hard masks for every (sample, scanner) plus the sample's label, if any.
struct Predicted {
    masks: SamplePredictions,
    label: Option<LabelMask>,
}

fn predictions_from_dir(m: &DatasetManifest, dir: &Path) -> Result<Vec<Predicted>, Failure> {
    m.samples
        .par_iter()
        .map(|s| {
            let mut masks = BTreeMap::new();
            for k in &m.scanners {
                let p = load_prob_map(dir.join(&s.sample_id).join(format!("{k}.prob")))?;
                masks.insert(k.clone(), hard_mask(&p));
            }
            let label = match &s.label {
                Some(rel) => Some(scorpion::image::load_label_mask(m.resolve(rel), m.num_classes.unwrap_or(scorpion::manifest::DEFAULT_NUM_CLASSES))?),
                None => None,
            };
            Ok(Predicted { masks: SamplePredictions { sample_id: s.sample_id.clone(), masks }, label })
        })
        .collect()
}

fn predictions_from_model(m: &DatasetManifest, model: &Segmenter) -> Result<Vec<Predicted>, Failure> {
    m.samples
        .par_iter()
        .map(|s| {
            let loaded = m.load_sample(s)?;
            let mut masks = BTreeMap::new();
            for k in &m.scanners {
                masks.insert(k.clone(), hard_mask(&model.forward(loaded.patch(k)?)));
            }
            Ok(Predicted { masks: SamplePredictions { sample_id: s.sample_id.clone(), masks }, label: loaded.label })
        })
        .collect()
}

fn primary_csv(scanners: &[ScannerId], preds: &[Predicted]) -> Result<Option<String>, Failure> {
    if preds.is_empty() || preds.iter().any(|p| p.label.is_none()) {
        return Ok(None);
    }
    let mut s = String::from("scanner,primary_dice\n");
    for k in scanners {
        let mut total = 0.0;
        for p in preds {
            total += dice(&p.masks.masks[k], p.label.as_ref().expect("checked above"))?.macro_avg;
        }
        s.push_str(&format!("{k},{:.6}\n", total / preds.len() as f64));
    }
    Ok(Some(s))
}

fn write_report(out: &Path, report: &ConsistencyReport) -> Result<Vec<PathBuf>, Failure> {
    Ok(vec![write_text(out.join("consistency.json"), &report.to_json())?, write_text(out.join("consistency.csv"), &report.to_csv())?])
}

fn evaluate_cmd(a: &EvaluateArgs) -> Outcome {
    let m = load_manifest(&a.manifest)?;
    let preds = match (&a.predictions_dir, &a.model) {
        (Some(dir), None) => predictions_from_dir(&m, dir)?,
        (None, Some(path)) => predictions_from_model(&m, &Segmenter::load(path)?.0)?,
        _ => return Err(Failure::Usage("give exactly one of --predictions-dir and --model".into())),
    };
    let samples: Vec<SamplePredictions> = preds.iter().map(|p| p.masks.clone()).collect();
    let report = consistency_from_predictions(&m.scanners, &samples)?;
    create_dir(&a.out)?;
    let mut written = write_report(&a.out, &report)?;
    if let Some(csv) = primary_csv(&m.scanners, &preds)? {
        written.push(write_text(a.out.join("primary_dice.csv"), &csv)?);
    }
    Ok(written)
}

fn bench_params(b: &BenchArgs) -> BenchmarkParams {
    BenchmarkParams {
        n_train: b.n_train,
        n_val: b.n_val,
        n_eval: b.n_eval,
        scanners: b.scanners,
        patch_size: b.bench_patch_size,
        tissue_complexity: b.tissue_complexity,
        scanner_strength: b.scanner_strength,
        ..BenchmarkParams::default()
    }
}

fn make_bench(b: &BenchArgs) -> Result<SyntheticBenchmark, Failure> {
    Ok(make_synthetic_benchmark(b.data_seed, &bench_params(b))?)
}

fn sim_config(c: &TrainConfigArgs, lambda: f64, seed: u64) -> Result<SimConsConfig, Failure> {
    let sa_method = match c.sa {
        SaChoice::None => None,
        SaChoice::Colorjitter => Some(SaMethod::ColorJitter),
        SaChoice::Randstainna => Some(SaMethod::RandStainNa),
        SaChoice::Fda => Some(SaMethod::Fda),
    };
    let defaults = SimConsConfig::default();
    let config = SimConsConfig {
        lambda,
        epochs: c.epochs,
        learning_rate: c.lr,
        batch_size: c.batch_size,
        seed,
        sa_method,
        sa: SaConfig { fda: FdaParams { beta: c.beta }, ..defaults.sa.clone() },
        sa_augment_prob: if sa_method.is_some() { c.sa_augment_prob } else { 0.0 },
        flips: !c.no_flips,
        ..defaults
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn labeled_set(path: &Path, scanner: Option<&str>) -> Result<(Vec<TrainingSample>, usize), Failure> {
    let m = load_manifest(path)?;
    let scanner = match scanner {
        Some(s) => scanner_id(s)?,
        None => m.scanners[0].clone(),
    };
    let samples = m
        .samples
        .iter()
        .map(|s| {
            let loaded = m.load_sample(s)?;
            let label = loaded.label.clone().ok_or_else(|| Error::MissingLabel(s.sample_id.clone()))?;
            Ok(TrainingSample { image: loaded.patch(&scanner)?.clone(), label })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((samples, m.num_classes.unwrap_or(scorpion::manifest::DEFAULT_NUM_CLASSES)))
}

fn train_cmd(a: &TrainArgs, seed: u64, log: &dyn Fn(&str)) -> Outcome {
    let config = sim_config(&a.config, a.lambda, seed)?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    let (outcome, bench) = match (&a.train_manifest, &a.val_manifest) {
        (Some(t), Some(v)) => {
            let (train_set, k) = labeled_set(t, a.scanner.as_deref())?;
            let (val_set, k_val) = labeled_set(v, a.scanner.as_deref())?;
            if k != k_val {
                return Err(Failure::Data(Error::DimensionMismatch(format!("{k} vs {k_val} classes in training and validation"))));
            }
            log(&format!("training on {} samples", train_set.len()));
            (train(&config, &train_set, &val_set, k)?, None)
        }
        _ => {
            let bench = make_bench(&a.bench)?;
            log(&format!("training on {} synthetic samples", bench.train.len()));
            (train(&config, &bench.train, &bench.val, bench.num_classes)?, Some(bench))
        }
    };
    let model_path = a.out.join("model.bin");
    outcome.model.save(&model_path, seed)?;
    written.push(model_path);
    written.push(write_text(a.out.join("history.csv"), &history_csv(&outcome.history))?);
    if let Some(bench) = bench {
        let eval = evaluate_model(&outcome.model, &bench)?;
        written.extend(write_report(&a.out, &eval.consistency)?);
        #[derive(Serialize)]
        struct Summary {
            best_epoch: usize,
            best_val_dice: f64,
            primary_dice: f64,
            consistency_avg: f64,
            consistency_min: f64,
        }
        let summary = Summary {
            best_epoch: outcome.best_epoch,
            best_val_dice: outcome.best_val_dice,
            primary_dice: eval.primary_dice,
            consistency_avg: eval.consistency.avg,
            consistency_min: eval.consistency.min,
        };
        written.push(write_json(&a.out.join("summary.json"), &summary)?);
    }
    Ok(written)
}

fn sweep_cmd(a: &SweepArgs, seed: u64, log: &dyn Fn(&str)) -> Outcome {
    let template = sim_config(&a.config, 0.0, seed)?;
    let bench = make_bench(&a.bench)?;
    log(&format!("{} lambdas x {} seeds", a.lambdas.len(), a.seeds));
    let table = lambda_sweep(&template, &a.lambdas, a.seeds, &bench)?;
    create_dir(&a.out)?;
    let mut written = vec![write_text(a.out.join("sweep.csv"), &table.to_csv())?, write_text(a.out.join("sweep_cells.csv"), &table.cells_csv())?];
    if table.rows.len() >= 2 {
        written.push(write_text(a.out.join("sweep.svg"), &plot_sweep(&table)?)?);
    } else {
        log("single lambda: no plot");
    }
    Ok(written)
}

#[derive(Serialize)]
struct BenchDescription<'a> {
    data_seed: u64,
    params: &'a BenchmarkParams,
    scanners: BTreeMap<String, scorpion::simcons::ScannerSim>,
}

fn synth_cmd(a: &SynthArgs) -> Outcome {
    let params = bench_params(&a.bench);
    let bench = make_synthetic_benchmark(a.bench.data_seed, &params)?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    let eval_dir = a.out.join("eval");
    create_dir(&eval_dir)?;
    bench.write_eval(&eval_dir, "manifest.json")?;
    written.push(eval_dir.join("manifest.json"));
    // training and validation patches stay in memory: they come from one scanner
    let description = BenchDescription {
        data_seed: a.bench.data_seed,
        params: &params,
        scanners: bench.scanner_ids.iter().zip(&bench.scanners).map(|(k, s)| (k.to_string(), *s)).collect(),
    };
    written.push(write_json(&a.out.join("benchmark.json"), &description)?);
    Ok(written)
}

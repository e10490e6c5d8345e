use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use bandtint::imaging::{load_image, read_corpus_dir, save_image, to_gray, CorpusSpec, PlanarImage};
use bandtint::objectives::{format_band_table, LossConfig, MetricsReport};
use bandtint::pipeline::{
    compare_strategies, evaluate, load_cast_dir, load_pipeline_dir, load_stub_dir,
    run_validation_comparison, save_cast_dir, save_pipeline_dir, save_stub_dir, sweep_partitions,
    train_baseline_stub, train_cast_stage, train_freq_pipeline, validate, write_loss_curve,
    LossKind, ModelSizes, RunManifest, SplitPlan, System, TrainConfig, TrainResult, Validation,
};
use bandtint::regions::MeanVector;
use bandtint::spectral::{split_bands, BandSpec};

use crate::logging::{debug, info};
use crate::{Cli, Cmd, RadiusFlags, TrainFlags};

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let jobs = cli.jobs;
    match cli.command {
        Cmd::GenCorpus { out_dir, count, size, cast } => gen_corpus(&out_dir, count, size, seed, cast),
        Cmd::Split { input, out_dir, radii } => split(&input, &out_dir, &radii, seed),
        Cmd::Train {
            model,
            corpus,
            out_dir,
            train,
            scheme,
            validation,
            compare_validation,
            test_corpus,
            radii,
        } => {
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/{model}")));
            train_cmd(TrainCmd {
                model,
                corpus,
                out_dir,
                flags: train,
                scheme,
                validation,
                compare_validation,
                test_corpus,
                radii,
                seed,
            })
        }
        Cmd::Colorize { input, pipeline, out, cast, means } => {
            colorize(&input, &pipeline, &out, cast.as_deref(), means.as_deref())
        }
        Cmd::Correct { input, cast, means, out } => correct(&input, &cast, &means, &out),
        Cmd::Eval { corpus, out_dir, pipeline, cast, baseline, radii } => {
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("runs/eval"));
            eval_cmd(&corpus, &out_dir, pipeline.as_deref(), cast.as_deref(), baseline.as_deref(), &radii, seed)
        }
        Cmd::SweepPartitions { corpus, test_corpus, out_dir, train } => {
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("runs/sweep"));
            sweep_cmd(&corpus, &test_corpus, &out_dir, &train, seed, jobs)
        }
        Cmd::CompareStrategies { corpus, test_corpus, out_dir, train, scheme, strategy, radii } => {
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("runs/strategies"));
            strategies_cmd(StrategiesCmd {
                corpus,
                test_corpus,
                out_dir,
                flags: train,
                scheme,
                strategy,
                radii,
                seed,
                jobs,
            })
        }
    }
}

fn train_config(flags: &TrainFlags, seed: u64, loss: LossKind, validation: Validation) -> TrainConfig {
    TrainConfig { steps: flags.steps, batch: flags.batch, lr: flags.lr, seed, loss, validation }
}

fn read_corpus(dir: &Path) -> Result<(CorpusSpec, Vec<(PlanarImage, PlanarImage)>)> {
    read_corpus_dir(dir).with_context(|| format!("reading corpus from {}", dir.display()))
}

fn gen_corpus(out_dir: &Path, count: usize, size: usize, seed: u64, cast: f64) -> Result<()> {
    // the corpus manifest.json written alongside the images records the
    // spec and fully determines the corpus
    let spec = CorpusSpec::new(count, size, seed, cast)?;
    bandtint::imaging::write_corpus_dir(out_dir, &spec)?;
    info!("wrote {count} image pairs to {}", out_dir.display());
    Ok(())
}

fn split(input: &Path, out_dir: &Path, radii: &RadiusFlags, seed: u64) -> Result<()> {
    let start = Instant::now();
    let img = load_image(input)?;
    let spec = BandSpec::scaled(radii.r_low, radii.r_mid, img.height(), img.width())?;
    debug!("effective radii: r_low {} r_mid {}", spec.r_low, spec.r_mid);
    let bands = split_bands(&img, &spec)?;
    std::fs::create_dir_all(out_dir)?;
    // the natural-domain low band is clamped; signed bands go through the
    // affine display map
    save_image(&bands.low, &out_dir.join("low.png"))?;
    save_image(&bands.mid.display_map(), &out_dir.join("mid.png"))?;
    save_image(&bands.high.display_map(), &out_dir.join("high.png"))?;
    let mut manifest = RunManifest::new("split", seed);
    manifest.radii = Some(spec);
    manifest.band_display_map = Some(true);
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    info!("wrote low/mid/high bands to {}", out_dir.display());
    Ok(())
}

struct TrainCmd {
    model: String,
    corpus: PathBuf,
    out_dir: PathBuf,
    flags: TrainFlags,
    scheme: bandtint::regions::SchemeKind,
    validation: Validation,
    compare_validation: bool,
    test_corpus: Option<PathBuf>,
    radii: RadiusFlags,
    seed: u64,
}

fn record_losses(manifest: &mut RunManifest, named: &[(&str, &TrainResult)]) {
    for (name, result) in named {
        manifest.final_losses.push((name.to_string(), result.final_loss()));
    }
}

fn train_cmd(cmd: TrainCmd) -> Result<()> {
    let start = Instant::now();
    let (corpus_spec, pairs) = read_corpus(&cmd.corpus)?;
    let sizes = ModelSizes::default();
    let mut manifest = RunManifest::new(format!("train {}", cmd.model), cmd.seed);
    manifest.corpus = Some(corpus_spec.clone());
    std::fs::create_dir_all(&cmd.out_dir)?;

    match cmd.model.as_str() {
        "stub" => {
            let cfg = train_config(&cmd.flags, cmd.seed, LossKind::L1, cmd.validation);
            manifest.train = Some(cfg);
            let (model, result) = train_baseline_stub(&pairs, &sizes, &cfg)?;
            save_stub_dir(&cmd.out_dir, &model)?;
            write_loss_curve(&cmd.out_dir.join("loss.csv"), &result.loss_curve)?;
            record_losses(&mut manifest, &[("stub", &result)]);
        }
        "pipeline" => {
            let spec =
                BandSpec::scaled(cmd.radii.r_low, cmd.radii.r_mid, corpus_spec.size, corpus_spec.size)?;
            let cfg = train_config(&cmd.flags, cmd.seed, LossKind::L1, cmd.validation);
            let unet_cfg = cfg.with_loss(LossKind::Hybrid(cmd.flags.alpha));
            manifest.train = Some(cfg);
            manifest.radii = Some(spec);
            let (fp, results) = train_freq_pipeline(&pairs, spec, &sizes, &cfg, &unet_cfg)?;
            save_pipeline_dir(&cmd.out_dir, &fp)?;
            for (name, result) in ["low", "mid", "high", "unet"].iter().zip(&results) {
                write_loss_curve(&cmd.out_dir.join(format!("loss_{name}.csv")), &result.loss_curve)?;
                manifest.final_losses.push((name.to_string(), result.final_loss()));
            }
        }
        "cast" => {
            let cfg = train_config(&cmd.flags, cmd.seed, LossKind::L1, cmd.validation);
            manifest.train = Some(cfg);
            manifest.scheme = Some(cmd.scheme.to_string());
            if cmd.compare_validation {
                let test_dir = cmd
                    .test_corpus
                    .as_ref()
                    .context("--compare-validation needs --test-corpus")?;
                let (_, test_pairs) = read_corpus(test_dir)?;
                let comparison = run_validation_comparison(
                    &pairs,
                    &test_pairs,
                    cmd.scheme,
                    &cfg,
                    &LossConfig::with_alpha(cmd.flags.alpha)?,
                )?;
                let table = comparison.table();
                print!("{table}");
                std::fs::write(cmd.out_dir.join("report.txt"), &table)?;
                let json = serde_json::to_string_pretty(
                    &comparison.rows.iter().map(|(l, r)| (l.clone(), r.clone())).collect::<Vec<_>>(),
                )?;
                std::fs::write(cmd.out_dir.join("report.json"), json)?;
            } else {
                // the validation protocol decides which images train
                let plan = validate(pairs.len(), &cfg)?;
                let train_indices: Vec<usize> = match &plan {
                    SplitPlan::All(idx) => idx.clone(),
                    SplitPlan::Holdout { train, .. } => train.clone(),
                    SplitPlan::KFold(folds) => {
                        (0..pairs.len()).filter(|i| !folds[0].contains(i)).collect()
                    }
                };
                debug!("training on {} of {} images", train_indices.len(), pairs.len());
                let subset: Vec<(PlanarImage, PlanarImage)> = train_indices
                    .iter()
                    .map(|&i| (pairs[i].1.clone(), pairs[i].0.clone()))
                    .collect();
                let (stage, result) = train_cast_stage(&subset, cmd.scheme, &cfg)?;
                save_cast_dir(&cmd.out_dir, &stage)?;
                write_loss_curve(&cmd.out_dir.join("loss.csv"), &result.loss_curve)?;
                record_losses(&mut manifest, &[("cast", &result)]);
            }
        }
        other => bail!("unknown model '{other}' (expected stub, pipeline, or cast)"),
    }
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write(&cmd.out_dir)?;
    info!("trained {} into {}", cmd.model, cmd.out_dir.display());
    Ok(())
}

fn load_means(path: &Path) -> Result<MeanVector> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading means from {}", path.display()))?;
    Ok(MeanVector::from_json(&text)?)
}

fn colorize(
    input: &Path,
    pipeline: &Path,
    out: &Path,
    cast: Option<&Path>,
    means: Option<&Path>,
) -> Result<()> {
    let img = load_image(input)?;
    let gray = if img.channels() == 3 { to_gray(&img)? } else { img };
    let fp = load_pipeline_dir(pipeline)?;
    let mut result = fp.colorize(&gray)?;
    if let Some(cast_dir) = cast {
        let stage = load_cast_dir(cast_dir)?;
        let means_path = means.context("--cast needs --means for the conditioning vector")?;
        let means = load_means(means_path)?;
        if means.kind != stage.kind {
            bail!("means are for scheme {}, corrector expects {}", means.kind, stage.kind);
        }
        result = stage.correct(&result, &means)?.clamp01();
    }
    save_image(&result, out)?;
    info!("colorized {} -> {}", input.display(), out.display());
    Ok(())
}

fn correct(input: &Path, cast: &Path, means: &Path, out: &Path) -> Result<()> {
    let img = load_image(input)?;
    if img.channels() != 3 {
        bail!("correct expects a 3-channel image, got {} channels", img.channels());
    }
    let stage = load_cast_dir(cast)?;
    let means = load_means(means)?;
    if means.kind != stage.kind {
        bail!("means are for scheme {}, corrector expects {}", means.kind, stage.kind);
    }
    let corrected = stage.correct(&img, &means)?.clamp01();
    save_image(&corrected, out)?;
    info!("corrected {} -> {}", input.display(), out.display());
    Ok(())
}

fn eval_cmd(
    corpus: &Path,
    out_dir: &Path,
    pipeline: Option<&Path>,
    cast: Option<&Path>,
    baseline: Option<&Path>,
    radii: &RadiusFlags,
    seed: u64,
) -> Result<()> {
    let start = Instant::now();
    let (corpus_spec, pairs) = read_corpus(corpus)?;
    let spec = BandSpec::scaled(radii.r_low, radii.r_mid, corpus_spec.size, corpus_spec.size)?;
    let loss_cfg = LossConfig::default();

    let fp = pipeline.map(load_pipeline_dir).transpose()?;
    let stage = cast.map(load_cast_dir).transpose()?;
    let baseline_stub = baseline.map(load_stub_dir).transpose()?;

    let system = match (&fp, &stage) {
        (Some(fp), Some(stage)) => System::FreqCast(fp, stage),
        (Some(fp), None) => System::Freq(fp),
        (None, Some(stage)) => System::CastOnly(stage),
        (None, None) => System::Identity,
    };
    let baseline_system = match &baseline_stub {
        Some(stub) => System::Baseline(stub),
        None => System::Identity,
    };

    let base = evaluate(&baseline_system, &pairs, Some(&spec), &loss_cfg)?;
    let ours = evaluate(&system, &pairs, Some(&spec), &loss_cfg)?;
    let table = format_band_table(&[
        (baseline_system.label().to_string(), base.mean.clone()),
        (system.label().to_string(), ours.mean.clone()),
    ]);
    print!("{table}");

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), &table)?;
    #[derive(serde::Serialize)]
    struct EvalReport {
        baseline: MetricsReport,
        ours: MetricsReport,
        per_image: Vec<MetricsReport>,
    }
    let report =
        EvalReport { baseline: base.mean, ours: ours.mean.clone(), per_image: ours.per_image };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new("eval", seed);
    manifest.corpus = Some(corpus_spec);
    manifest.radii = Some(spec);
    manifest.band_display_map = Some(true);
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(())
}

fn sweep_cmd(
    corpus: &Path,
    test_corpus: &Path,
    out_dir: &Path,
    flags: &TrainFlags,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    let start = Instant::now();
    let (corpus_spec, train_pairs) = read_corpus(corpus)?;
    let (_, test_pairs) = read_corpus(test_corpus)?;
    let cfg = train_config(flags, seed, LossKind::L1, Validation::None);
    let loss_cfg = LossConfig::with_alpha(flags.alpha)?;
    let sweep = sweep_partitions(&train_pairs, &test_pairs, &cfg, &loss_cfg, jobs)?;
    let table = sweep.table();
    print!("{table}");

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), &table)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&sweep.rows.iter().collect::<Vec<_>>())?,
    )?;
    let mut manifest = RunManifest::new("sweep-partitions", seed);
    manifest.corpus = Some(corpus_spec);
    manifest.train = Some(cfg);
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(())
}

struct StrategiesCmd {
    corpus: PathBuf,
    test_corpus: PathBuf,
    out_dir: PathBuf,
    flags: TrainFlags,
    scheme: bandtint::regions::SchemeKind,
    strategy: Option<u8>,
    radii: RadiusFlags,
    seed: u64,
    jobs: usize,
}

/// Rows for one selected strategy: baseline plus that combination only.
fn single_strategy_rows(
    n: u8,
    train_pairs: &[(PlanarImage, PlanarImage)],
    test_pairs: &[(PlanarImage, PlanarImage)],
    spec: BandSpec,
    sizes: &ModelSizes,
    scheme: bandtint::regions::SchemeKind,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<Vec<(String, MetricsReport, f64)>> {
    use bandtint::pipeline::{strategy3_joint, train_baseline_stub, train_cast_stage};

    let unet_cfg = cfg.with_loss(LossKind::Hybrid(loss_cfg.alpha));
    let (baseline, _) = train_baseline_stub(train_pairs, sizes, cfg)?;
    let (fp, _) = train_freq_pipeline(train_pairs, spec, sizes, cfg, &unet_cfg)?;
    let base_eval = evaluate(&System::Baseline(&baseline), test_pairs, None, loss_cfg)?;

    let (combo_fp, stage, wall) = match n {
        1 => {
            let stub_outputs: Vec<(PlanarImage, PlanarImage)> = train_pairs
                .iter()
                .map(|(t, _)| Ok((baseline.forward(&to_gray(t)?)?, t.clone())))
                .collect::<bandtint::Result<_>>()?;
            let (stage, _) = train_cast_stage(&stub_outputs, scheme, cfg)?;
            (fp, stage, 0.0)
        }
        2 => {
            let (stage, result) = bandtint::pipeline::strategy2_retrain(&fp, train_pairs, scheme, cfg)?;
            (fp, stage, result.wall_secs)
        }
        _ => {
            let (joint, stage, result) = strategy3_joint(&fp, train_pairs, scheme, &unet_cfg, false)?;
            (joint, stage, result.wall_secs)
        }
    };
    let eval = evaluate(&System::FreqCast(&combo_fp, &stage), test_pairs, None, loss_cfg)?;
    Ok(vec![
        ("baseline".to_string(), base_eval.mean, 0.0),
        (format!("combination{n}"), eval.mean, wall),
    ])
}

fn strategies_cmd(cmd: StrategiesCmd) -> Result<()> {
    let start = Instant::now();
    let (corpus_spec, train_pairs) = read_corpus(&cmd.corpus)?;
    let (_, test_pairs) = read_corpus(&cmd.test_corpus)?;
    let spec =
        BandSpec::scaled(cmd.radii.r_low, cmd.radii.r_mid, corpus_spec.size, corpus_spec.size)?;
    let cfg = train_config(&cmd.flags, cmd.seed, LossKind::L1, Validation::None);
    let loss_cfg = LossConfig::with_alpha(cmd.flags.alpha)?;
    let sizes = ModelSizes::default();
    let (out_dir, scheme, jobs, seed) = (&cmd.out_dir, cmd.scheme, cmd.jobs, cmd.seed);
    let rows = match cmd.strategy {
        Some(n) => single_strategy_rows(
            n, &train_pairs, &test_pairs, spec, &sizes, scheme, &cfg, &loss_cfg,
        )?,
        None => {
            compare_strategies(&train_pairs, &test_pairs, spec, &sizes, scheme, &cfg, &loss_cfg, jobs)?
                .rows
        }
    };
    let table = {
        use bandtint::objectives::ChannelRow;
        let channel_rows: Vec<ChannelRow> = rows
            .iter()
            .map(|(label, r, _)| ChannelRow::from_report(label.clone(), r))
            .collect();
        bandtint::objectives::format_channel_table("Model", &channel_rows)
    };
    print!("{table}");
    for (label, _, wall) in &rows {
        debug!("{label}: training wall time {wall:.2}s");
    }

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), &table)?;
    #[derive(serde::Serialize)]
    struct Row<'a> {
        label: &'a str,
        report: &'a MetricsReport,
        train_wall_secs: f64,
    }
    let json_rows: Vec<Row> = rows
        .iter()
        .map(|(label, report, wall)| Row { label, report, train_wall_secs: *wall })
        .collect();
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&json_rows)?)?;
    let mut manifest = RunManifest::new("compare-strategies", seed);
    manifest.corpus = Some(corpus_spec);
    manifest.train = Some(cfg);
    manifest.radii = Some(spec);
    manifest.scheme = Some(scheme.to_string());
    manifest.wall_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(())
}

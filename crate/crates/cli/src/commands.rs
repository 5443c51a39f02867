use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vizaudit_core::analysis::{
    agpa, aldp, correctly_classified, correlate_with_scores, layerwise_similarity, read_scores, silent_census,
    similarity_report, write_similarity_csv, Metric, PairOptions, UnitLinearity,
};
use vizaudit_core::featviz::{export_trajectory, log_spaced_thresholds, maximize_unit, pnm, VizConfig};
use vizaudit_core::fooling::{
    calibrate_k, detector_accuracy, graft_fooling_circuit, image_batch, inject_silent_hijack, oracle_detector,
    synthetic_pool, train_detector, verify_preservation, visualization_target, CircuitMode, FoolingCircuitSpec,
    SilentInjectionSpec,
};
use vizaudit_core::netgraph::{
    base_classifier, generate_synthetic_dataset, load_dataset, load_model, read_idx_dataset, save_dataset,
    save_model, sgd_train, Dataset, LayerGraph, LayerKind, SyntheticConfig, TrainHyper, TrainReport, UnitRef,
};
use vizaudit_core::tensorcore::Tensor;
use vizaudit_theory::{default_classes, demo_table, verify_all, write_reports_csv, write_verdicts_csv, ClassTag, SweepConfig};

use crate::args::*;
use crate::error::CliError;
use crate::run::{subseed, Verdict};

type Rows = Vec<Vec<String>>;

fn write_csv(path: &Path, header: &[&str], rows: Rows) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn metric_rows(pairs: &[(&str, f64)]) -> Rows {
    pairs.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect()
}

fn at_path(path: &Path, e: impl Into<CliError>) -> CliError {
    let shown = path.display();
    match e.into() {
        CliError::MissingInput(m) => CliError::MissingInput(format!("{shown}: {m}")),
        CliError::Malformed(m) => CliError::Malformed(format!("{shown}: {m}")),
        CliError::Io(m) => CliError::Io(format!("{shown}: {m}")),
        other => other,
    }
}

fn model_at(path: &Path) -> Result<LayerGraph, CliError> {
    load_model(path).map_err(|e| at_path(path, e))
}

fn dataset_at(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| at_path(path, e))
}

fn image_at(path: &Path) -> Result<Tensor, CliError> {
    pnm::read_pnm(path).map_err(|e| at_path(path, e))
}

pub fn parse_units(units: &[String]) -> Result<Vec<UnitRef>, CliError> {
    units.iter().map(|u| u.parse::<UnitRef>().map_err(CliError::from)).collect()
}

fn viz_config(opts: &VizOpts, seed: u64) -> VizConfig {
    VizConfig {
        steps: opts.steps,
        thresholds: log_spaced_thresholds(opts.steps, 5),
        lr: opts.viz_lr,
        jitter: opts.jitter,
        seed,
        init_scale: opts.init_scale,
        record_gradients: false,
    }
}

fn hyper(h: &Hyper, seed: u64) -> TrainHyper {
    TrainHyper {
        lr: h.lr,
        momentum: h.momentum,
        weight_decay: h.weight_decay,
        epochs: h.epochs,
        batch_size: h.batch_size,
        seed,
    }
}

fn loss_rows(report: &TrainReport) -> Rows {
    report
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()])
        .collect()
}

fn accuracy(model: &LayerGraph, data: &Dataset) -> Result<f64, CliError> {
    let pred = model.predict(data.images())?;
    let hits = pred.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

pub fn run(command: &Command, dir: &Path) -> Result<Verdict, CliError> {
    match command {
        Command::Dataset(DatasetCmd::Gen(a)) => dataset_gen(a, dir),
        Command::Dataset(DatasetCmd::Import(a)) => dataset_import(a, dir),
        Command::Train(TrainCmd::Base(a)) => train_base(a, dir),
        Command::Viz(a) => viz(a, dir),
        Command::Fool(FoolCmd::Circuit(a)) => fool_circuit(a, dir),
        Command::Fool(FoolCmd::Silent(a)) => fool_silent(a, dir),
        Command::Detector(DetectorCmd::Train(a)) => detector_train(a, dir),
        Command::Detector(DetectorCmd::Eval(a)) => detector_eval(a, dir),
        Command::Audit(AuditCmd::Preserve(a)) => audit_preserve(a, dir),
        Command::Pathsim(a) => pathsim(a, dir),
        Command::Census(a) => census(a, dir),
        Command::Linearity(a) => linearity(a, dir),
        Command::Theory(TheoryCmd::Verify(a)) => theory(a, dir, false),
        Command::Theory(TheoryCmd::Demo(a)) => theory(a, dir, true),
    }
}

fn class_counts(data: &Dataset) -> Rows {
    let mut counts = vec![0usize; data.classes()];
    for &l in data.labels() {
        counts[l] += 1;
    }
    counts.iter().enumerate().map(|(c, n)| vec![c.to_string(), n.to_string()]).collect()
}

fn dataset_gen(a: &DatasetGenArgs, dir: &Path) -> Result<Verdict, CliError> {
    let data = generate_synthetic_dataset(&SyntheticConfig::new(a.classes, a.per_class, a.size, a.seed, a.split.into()))?;
    save_dataset(&data, &dir.join("dataset.json"))?;
    write_csv(&dir.join("classes.csv"), &["class", "count"], class_counts(&data))?;
    println!("{} images, {} classes", data.len(), data.classes());
    Ok(Verdict::Passed)
}

fn dataset_import(a: &DatasetImportArgs, dir: &Path) -> Result<Verdict, CliError> {
    let data = read_idx_dataset(&a.images, &a.labels, a.pad_to, a.split.into()).map_err(|e| at_path(&a.images, e))?;
    save_dataset(&data, &dir.join("dataset.json"))?;
    write_csv(&dir.join("classes.csv"), &["class", "count"], class_counts(&data))?;
    println!("{} images, {} classes", data.len(), data.classes());
    Ok(Verdict::Passed)
}

fn train_base(a: &TrainBaseArgs, dir: &Path) -> Result<Verdict, CliError> {
    let data = dataset_at(&a.data)?;
    let init = base_classifier(data.image_shape(), data.classes(), subseed(a.seed, "init"))?;
    let (model, report) = sgd_train(&init, &data, &hyper(&a.hyper, subseed(a.seed, "shuffle")))?;
    save_model(&model, &dir.join("model.json"))?;
    write_csv(&dir.join("loss.csv"), &["epoch", "loss"], loss_rows(&report))?;
    let mut metrics = vec![
        ("initial_loss", report.initial_loss),
        ("final_loss", report.final_loss),
        ("train_accuracy", report.train_accuracy),
    ];
    if let Some(test) = &a.test {
        metrics.push(("test_accuracy", accuracy(&model, &dataset_at(test)?)?));
    }
    write_csv(&dir.join("metrics.csv"), &["metric", "value"], metric_rows(&metrics))?;
    for (k, v) in &metrics {
        println!("{k}: {v:.4}");
    }
    Ok(Verdict::Passed)
}

fn viz(a: &VizArgs, dir: &Path) -> Result<Verdict, CliError> {
    let model = model_at(&a.model)?;
    let units = parse_units(&a.units)?;
    let mut cfg = viz_config(&a.viz, a.seed);
    if !a.thresholds.is_empty() {
        cfg.thresholds = a.thresholds.clone();
    }
    let start = a.start.as_deref().map(image_at).transpose()?;
    let mut rows = Vec::new();
    for (i, unit) in units.iter().enumerate() {
        let traj = maximize_unit(&model, unit, &cfg, start.as_ref())?;
        export_trajectory(&traj, &cfg, &dir.join(format!("unit-{i:02}")))?;
        rows.push(vec![unit.to_string(), "0".into(), traj.start_activation.to_string()]);
        for (s, v) in traj.thresholds.iter().zip(&traj.activations) {
            rows.push(vec![unit.to_string(), s.to_string(), v.to_string()]);
        }
        println!("{unit}: {:.4} -> {:.4}", traj.start_activation, traj.final_activation());
    }
    write_csv(&dir.join("activations.csv"), &["unit", "step", "activation"], rows)?;
    Ok(Verdict::Passed)
}

fn fool_circuit(a: &FoolCircuitArgs, dir: &Path) -> Result<Verdict, CliError> {
    let base = model_at(&a.model)?;
    let calib = dataset_at(&a.calib)?;
    let mode = match (a.offset, &a.embed) {
        (Some(offset), None) => CircuitMode::Permutation { offset },
        (None, Some(path)) => CircuitMode::EmbeddedImage {
            unit: a.unit,
            image: image_at(path)?,
        },
        _ => return Err(CliError::Usage("give exactly one of --offset and --embed".into())),
    };
    let detector = match (&a.detector, a.oracle) {
        (Some(path), None) => model_at(path)?,
        (None, Some(o)) => oracle_detector(base.input_shape(), o == OracleArg::Natural)?,
        _ => return Err(CliError::Usage("give exactly one of --detector and --oracle".into())),
    };
    let (k, bound) = calibrate_k(&base, &mode, &[calib.images()])?;
    let wrapped = graft_fooling_circuit(&base, &FoolingCircuitSpec { k, mode }, &detector)?;
    save_model(&wrapped, &dir.join("model.json"))?;
    write_csv(&dir.join("circuit.csv"), &["metric", "value"], metric_rows(&[("k", k), ("bound", bound)]))?;
    println!("k = {k} (calibration bound {bound})");
    Ok(Verdict::Passed)
}

fn fool_silent(a: &FoolSilentArgs, dir: &Path) -> Result<Verdict, CliError> {
    let base = model_at(&a.model)?;
    let data = dataset_at(&a.data)?;
    let target = match a.target_seed {
        Some(seed) => {
            let LayerKind::Conv {
                in_channels, kernel, ..
            } = base
                .layer(&a.layer)
                .ok_or_else(|| CliError::Usage(format!("unknown layer `{}`", a.layer)))?
                .kind
            else {
                return Err(CliError::Precondition(format!("`{}` is not a conv layer", a.layer)));
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = in_channels * kernel[0] * kernel[1];
            Tensor::new(vec![in_channels, kernel[0], kernel[1]], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .map_err(|e| CliError::Precondition(e.to_string()))?
        }
        None => visualization_target(&base, &a.layer, a.target_unit.unwrap_or(0), &viz_config(&a.viz, a.seed))?,
    };
    let mut spec = SilentInjectionSpec::new(&a.layer, target, a.alpha, a.beta);
    spec.margin = a.margin;
    if !a.channels.is_empty() {
        spec.units = Some(a.channels.clone());
    }
    let (model, report) = inject_silent_hijack(&base, &spec, &data)?;
    save_model(&model, &dir.join("model.json"))?;
    let rows = report
        .units
        .iter()
        .map(|u| {
            vec![
                u.channel.to_string(),
                u.orthogonality_residual.to_string(),
                u.natural_max.to_string(),
                u.bias.to_string(),
                u.ratio_bias.to_string(),
                u.rejected.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("units.csv"),
        &["channel", "orthogonality_residual", "natural_max", "bias", "ratio_bias", "rejected"],
        rows,
    )?;
    let pres = verify_preservation(&base, &model, &data)?;
    write_csv(
        &dir.join("preserve.csv"),
        &["metric", "value"],
        metric_rows(&[
            ("max_abs_diff", pres.max_abs_diff),
            ("top1_agreement", pres.top1_agreement),
            ("top5_agreement", pres.top5_agreement),
        ]),
    )?;
    let rejected = report.units.iter().filter(|u| u.rejected).count();
    println!(
        "wrapped {} units ({rejected} rejected) of {}; max output change {}",
        report.units.len(),
        a.layer,
        pres.max_abs_diff
    );
    if pres.max_abs_diff != 0.0 {
        return Ok(Verdict::Failed(format!("outputs changed by up to {}", pres.max_abs_diff)));
    }
    Ok(Verdict::Passed)
}

fn pool(p: &PoolOpts) -> Result<(LayerGraph, Vec<Tensor>), CliError> {
    let model = model_at(&p.model)?;
    let units = parse_units(&p.units)?;
    if p.pool_seeds.is_empty() && p.zero_jitter_seeds.is_empty() {
        return Err(CliError::Usage("give --pool-seeds or --zero-jitter-seeds".into()));
    }
    let cfg = viz_config(&p.viz, 0);
    let mut images = synthetic_pool(&model, &units, &cfg, &p.pool_seeds)?;
    if !p.zero_jitter_seeds.is_empty() {
        let still = VizConfig { jitter: 0, ..cfg };
        images.extend(synthetic_pool(&model, &units, &still, &p.zero_jitter_seeds)?);
    }
    Ok((model, images))
}

fn detector_train(a: &DetectorTrainArgs, dir: &Path) -> Result<Verdict, CliError> {
    let natural = dataset_at(&a.natural)?;
    let (_, images) = pool(&a.pool)?;
    let (detector, report) = train_detector(natural.images(), &images, &hyper(&a.hyper, a.seed))?;
    save_model(&detector, &dir.join("detector.json"))?;
    write_csv(&dir.join("loss.csv"), &["epoch", "loss"], loss_rows(&report))?;
    write_csv(
        &dir.join("metrics.csv"),
        &["metric", "value"],
        metric_rows(&[
            ("natural_images", natural.len() as f64),
            ("synthetic_images", images.len() as f64),
            ("initial_loss", report.initial_loss),
            ("final_loss", report.final_loss),
            ("train_accuracy", report.train_accuracy),
        ]),
    )?;
    println!(
        "{} natural vs {} synthetic; train accuracy {:.4}",
        natural.len(),
        images.len(),
        report.train_accuracy
    );
    Ok(Verdict::Passed)
}

fn detector_eval(a: &DetectorEvalArgs, dir: &Path) -> Result<Verdict, CliError> {
    let detector = model_at(&a.detector)?;
    let natural = dataset_at(&a.natural)?;
    let (_, images) = pool(&a.pool)?;
    let acc = detector_accuracy(&detector, natural.images(), &image_batch(&images)?)?;
    write_csv(
        &dir.join("accuracy.csv"),
        &["set", "images", "accuracy"],
        vec![
            vec!["overall".into(), (natural.len() + images.len()).to_string(), acc.overall.to_string()],
            vec!["natural".into(), natural.len().to_string(), acc.natural.to_string()],
            vec!["synthetic".into(), images.len().to_string(), acc.synthetic.to_string()],
        ],
    )?;
    println!(
        "overall {:.4}, natural {:.4}, synthetic {:.4}",
        acc.overall, acc.natural, acc.synthetic
    );
    if acc.overall < a.min_overall || acc.natural.min(acc.synthetic) < a.min_per_class {
        return Ok(Verdict::Failed(format!(
            "accuracy {:.4} / {:.4} / {:.4} below {} overall or {} per class",
            acc.overall, acc.natural, acc.synthetic, a.min_overall, a.min_per_class
        )));
    }
    Ok(Verdict::Passed)
}

fn audit_preserve(a: &AuditPreserveArgs, dir: &Path) -> Result<Verdict, CliError> {
    let base = model_at(&a.base)?;
    let modified = model_at(&a.modified)?;
    let data = dataset_at(&a.data)?;
    let r = verify_preservation(&base, &modified, &data)?;
    let rows = r
        .per_example_diff
        .iter()
        .enumerate()
        .map(|(i, d)| vec![i.to_string(), d.to_string()])
        .collect();
    write_csv(&dir.join("preserve.csv"), &["example", "max_abs_diff"], rows)?;
    write_csv(
        &dir.join("summary.csv"),
        &["metric", "value"],
        metric_rows(&[
            ("examples", r.examples as f64),
            ("max_abs_diff", r.max_abs_diff),
            ("top1_agreement", r.top1_agreement),
            ("top5_agreement", r.top5_agreement),
        ]),
    )?;
    println!(
        "top-1 agreement {:.4}, top-5 agreement {:.4}, max deviation {}",
        r.top1_agreement, r.top5_agreement, r.max_abs_diff
    );
    if r.top1_agreement < a.min_top1 {
        return Ok(Verdict::Failed(format!("top-1 agreement {} below {}", r.top1_agreement, a.min_top1)));
    }
    if let Some(max) = a.max_diff {
        if r.max_abs_diff > max {
            return Ok(Verdict::Failed(format!("output deviation {} above {max}", r.max_abs_diff)));
        }
    }
    Ok(Verdict::Passed)
}

fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::Spearman => Metric::Spearman,
        MetricArg::Pearson => Metric::Pearson,
        MetricArg::Cosine => Metric::Cosine,
    }
}

/// Up to `k` evenly spread entries of `v`.
fn spread(v: &[usize], k: usize) -> Vec<usize> {
    if v.len() <= k {
        return v.to_vec();
    }
    (0..k).map(|i| v[i * v.len() / k]).collect()
}

fn pathsim(a: &PathsimArgs, dir: &Path) -> Result<Verdict, CliError> {
    let model = model_at(&a.model)?;
    let data = dataset_at(&a.data)?;
    let layers: Vec<String> = if a.layers.is_empty() {
        let mut l: Vec<String> = model
            .layers()
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Relu))
            .map(|l| l.name.clone())
            .collect();
        l.push(model.output().to_string());
        l
    } else {
        a.layers.clone()
    };
    let layer_refs: Vec<&str> = layers.iter().map(String::as_str).collect();
    let classes: Vec<usize> = if a.classes.is_empty() {
        (0..data.classes()).collect()
    } else {
        a.classes.clone()
    };
    let correct = correctly_classified(&model, &data)?;
    let mut cfg = viz_config(&a.viz, 0);
    cfg.thresholds = vec![a.viz.steps];
    let opts = PairOptions::new(metric(a.metric));
    let same_opts = PairOptions {
        skip_diagonal: true,
        ..opts
    };
    let n = layers.len();
    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![[0usize; 3]; n];
    let mut per_class = Vec::new();
    for &c in &classes {
        let own: Vec<usize> = correct.iter().copied().filter(|&i| data.labels()[i] == c).collect();
        let other: Vec<usize> = correct.iter().copied().filter(|&i| data.labels()[i] != c).collect();
        let own = spread(&own, a.per_class);
        let other = spread(&other, a.per_class);
        if own.len() < 2 || other.is_empty() {
            println!("class {c}: too few correctly classified images, skipped");
            continue;
        }
        let (nat, _) = data.batch(&own);
        let (cross_imgs, _) = data.batch(&other);
        let mut vis = Vec::with_capacity(a.viz_runs);
        for r in 0..a.viz_runs {
            cfg.seed = subseed(a.seed, &format!("viz/{c}/{r}"));
            let unit = UnitRef::channel_mean(model.output(), c);
            vis.push(maximize_unit(&model, &unit, &cfg, None)?.final_image().clone());
        }
        let vis = image_batch(&vis)?;
        let same = layerwise_similarity(&model, &nat, &nat, &layer_refs, &same_opts)?;
        let cross = layerwise_similarity(&model, &nat, &cross_imgs, &layer_refs, &opts)?;
        let viz = layerwise_similarity(&model, &nat, &vis, &layer_refs, &opts)?;
        for i in 0..n {
            let vals = [same[i].mean, cross[i].mean, viz[i].mean];
            for (k, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    sums[i][k] += v;
                    counts[i][k] += 1;
                }
            }
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            per_class.push(vec![c.to_string(), layers[i].clone(), cell(vals[0]), cell(vals[1]), cell(vals[2])]);
        }
    }
    let mean = |k: usize| -> Vec<Option<f64>> {
        (0..n).map(|i| (counts[i][k] > 0).then(|| sums[i][k] / counts[i][k] as f64)).collect()
    };
    let report = similarity_report(metric(a.metric), &layers, &mean(0), &mean(1), &mean(2), a.window, a.std_window)?;
    write_similarity_csv(&report, &dir.join("similarity.csv"))?;
    write_csv(&dir.join("per_class.csv"), &["class", "layer", "same", "cross", "viz"], per_class)?;
    for (i, l) in layers.iter().enumerate() {
        match report.normalized[i] {
            Some(v) => println!("{l}: {v:.3}"),
            None => println!("{l}: excluded"),
        }
    }
    Ok(Verdict::Passed)
}

fn census(a: &CensusArgs, dir: &Path) -> Result<Verdict, CliError> {
    let model = model_at(&a.model)?;
    let data = dataset_at(&a.data)?;
    let c = silent_census(&model, &data)?;
    let rows = c
        .layers
        .iter()
        .map(|l| {
            let ids: Vec<String> = l.silent_channel_ids.iter().map(|i| i.to_string()).collect();
            vec![
                l.layer.clone(),
                l.units.to_string(),
                l.silent_units.to_string(),
                l.channels.to_string(),
                l.silent_channels.to_string(),
                ids.join(" "),
            ]
        })
        .collect();
    write_csv(
        &dir.join("census.csv"),
        &["layer", "units", "silent_units", "channels", "silent_channels", "silent_channel_ids"],
        rows,
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &["metric", "value"],
        metric_rows(&[
            ("silent_units", c.silent_units as f64),
            ("total_units", c.total_units as f64),
            ("unit_fraction", c.unit_fraction),
            ("silent_channels", c.silent_channels as f64),
            ("total_channels", c.total_channels as f64),
            ("channel_fraction", c.channel_fraction),
        ]),
    )?;
    println!(
        "{} of {} units silent, {} of {} channels",
        c.silent_units, c.total_units, c.silent_channels, c.total_channels
    );
    Ok(Verdict::Passed)
}

fn linearity(a: &LinearityArgs, dir: &Path) -> Result<Verdict, CliError> {
    let model = model_at(&a.model)?;
    let units = parse_units(&a.units)?;
    let mut cfg = viz_config(&a.viz, 0);
    cfg.thresholds = log_spaced_thresholds(a.viz.steps, a.points);
    cfg.record_gradients = true;
    let mut all_grads = Vec::new();
    let mut all_traj = Vec::new();
    let mut per_unit = Vec::new();
    for unit in &units {
        let mut grads = Vec::new();
        let mut trajs = Vec::new();
        for s in 0..a.starts {
            cfg.seed = subseed(a.seed, &format!("start/{s}"));
            let t = maximize_unit(&model, unit, &cfg, None)?;
            grads.push(t.gradients.clone().expect("recorded"));
            trajs.push((t.start.clone(), t.images.clone()));
        }
        let g = agpa(&grads)?;
        let d = aldp(&trajs)?;
        per_unit.push(UnitLinearity {
            unit: unit.to_string(),
            aga: g.aga,
            ald: d.ald,
        });
        all_grads.extend(grads);
        all_traj.extend(trajs);
    }
    let g = agpa(&all_grads)?;
    let d = aldp(&all_traj)?;
    let rows = g
        .curve
        .iter()
        .zip(&g.prefix_aga)
        .enumerate()
        .map(|(j, (c, p))| vec![(j + 1).to_string(), c.to_string(), p.to_string()])
        .collect();
    write_csv(&dir.join("agpa.csv"), &["step", "angle", "prefix_aga"], rows)?;
    let rows = cfg
        .thresholds
        .iter()
        .zip(&d.curve)
        .map(|(s, v)| vec![s.to_string(), v.to_string()])
        .collect();
    write_csv(&dir.join("aldp.csv"), &["step", "distance"], rows)?;
    let rows = per_unit
        .iter()
        .map(|u| vec![u.unit.clone(), u.aga.to_string(), u.ald.to_string()])
        .collect();
    write_csv(&dir.join("units.csv"), &["unit", "aga", "ald"], rows)?;
    println!("AGA {:.4} rad, ALD {:.4}", g.aga, d.ald);
    if let Some(path) = &a.scores {
        let corr = correlate_with_scores(&per_unit, &read_scores(path).map_err(|e| at_path(path, e))?)?;
        let rows = corr
            .iter()
            .map(|c| vec![c.metric.clone(), c.r.to_string(), c.p.to_string(), c.n.to_string()])
            .collect();
        write_csv(&dir.join("correlations.csv"), &["metric", "r", "p", "n"], rows)?;
        for c in &corr {
            println!("{} vs score: r = {:.3}, p = {:.3} (n = {})", c.metric, c.r, c.p, c.n);
        }
    }
    Ok(Verdict::Passed)
}

fn theory(a: &TheoryArgs, dir: &Path, demo: bool) -> Result<Verdict, CliError> {
    let classes: Vec<ClassTag> = if a.classes.is_empty() {
        default_classes()
    } else {
        a.classes
            .iter()
            .map(|c| c.parse::<ClassTag>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?
    };
    let cfg = SweepConfig {
        seeds: a.seeds,
        base_seed: a.seed,
        n1: a.n1,
        n2: a.n2,
    };
    let (verdicts, reports) = verify_all(&classes, &cfg)?;
    write_verdicts_csv(&dir.join("classes.csv"), &verdicts)?;
    if demo {
        let table = demo_table(&verdicts);
        std::fs::write(dir.join("table.txt"), &table)?;
        print!("{table}");
    } else {
        write_reports_csv(&dir.join("bounds.csv"), &reports)?;
        for v in &verdicts {
            println!("{}: {}", v.class, if v.passed() { "ok" } else { "FAILED" });
        }
    }
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.passed()).map(|v| v.class.to_string()).collect();
    if failed.is_empty() {
        Ok(Verdict::Passed)
    } else {
        Ok(Verdict::Failed(format!("bounds violated for {}", failed.join(", "))))
    }
}

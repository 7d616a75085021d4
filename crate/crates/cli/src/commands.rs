use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use tdcnn::arch::{HiddenArch, ModelSpec};
use tdcnn::checkpoint::{load_checkpoint, save_checkpoint};
use tdcnn::data::manifest::{load_manifest, write_manifest, Manifest, Sample};
use tdcnn::data::pgm::{read_pgm, write_pgm};
use tdcnn::data::report::{write_comparison_csv, write_curves_svg, write_epochs_csv, write_metrics_csv};
use tdcnn::data::synth::{generate_synthetic, SynthConfig};
use tdcnn::data::ImageSet;
use tdcnn::gradcheck::{run_gradcheck, GradcheckOptions};
use tdcnn::preprocess::pipeline;
use tdcnn::train::cv::{cross_validate, split_kfold};
use tdcnn::train::{evaluate as eval_set, holdout_split, metrics, predict_probs, train_model, EpochLog, MetricsReport};
use tdcnn::train::{Precision, TrainConfig};
use tdcnn::{build_model, Model, Real};

use crate::{
    CompareArgs, CrossvalArgs, EvaluateArgs, GradcheckArgs, NumericFailure, PredictArgs, PreprocessArgs, SynthArgs,
    TrainArgs, TrainCmd, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Echoes the fully resolved settings, defaults included, on stderr.
fn print_config(command: &str, items: &[(&str, String)]) {
    eprintln!("{command} config:");
    for (k, v) in items {
        eprintln!("  {k} = {v}");
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        gamma: a.gamma,
        class_weights: a.class_weights.clone(),
        seed: a.seed,
        precision: a.precision,
        patience: a.patience,
        augment: a.augment,
        val_fraction: a.val_fraction,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train_items(cfg: &TrainConfig, input_size: usize) -> Vec<(&'static str, String)> {
    vec![
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.lr.to_string()),
        ("gamma", cfg.gamma.to_string()),
        ("class_weights", format!("{:?}", cfg.class_weights)),
        ("input_size", format!("{input_size}x{input_size}")),
        ("seed", cfg.seed.to_string()),
        ("precision", cfg.precision.to_string()),
        ("patience", cfg.patience.map_or("off".into(), |p| p.to_string())),
        ("augment", cfg.augment.to_string()),
        ("val_fraction", cfg.val_fraction.to_string()),
    ]
}

fn model_spec(arch: HiddenArch, input_size: usize) -> Result<ModelSpec> {
    let spec = ModelSpec::new(arch).with_input(input_size, input_size);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn load_set(manifest: &Path, size: usize, trainable: bool) -> Result<ImageSet> {
    let m = load_manifest(manifest)?;
    if trainable {
        m.check_trainable()?;
    } else if m.is_empty() {
        anyhow::bail!("{}: no samples", manifest.display());
    }
    eprintln!(
        "loading {} images from {} ({} healthy, {} tumor)",
        m.len(),
        manifest.display(),
        m.count(tdcnn::data::Label::Healthy),
        m.count(tdcnn::data::Label::Tumor)
    );
    Ok(ImageSet::from_manifest(&m, size, size)?)
}

fn print_epoch(prefix: &str, l: &EpochLog) {
    let val = match (l.val_loss, l.val_acc) {
        (Some(vl), Some(va)) => format!("  val_loss {vl:.5}  val_acc {va:.5}"),
        _ => String::new(),
    };
    println!(
        "{prefix}epoch {:>3}  loss {:.5}  acc {:.5}{val}  ({:.1}s)",
        l.epoch, l.train_loss, l.train_acc, l.seconds
    );
}

fn print_metrics(label: &str, r: &MetricsReport) {
    let cm = r.confusion;
    println!(
        "{label:<18} accuracy {:.5}  precision {:.5}  recall {:.5}  f1 {:.5}  (tp {} tn {} fp {} fn {})",
        r.accuracy, r.precision, r.recall, r.f1, cm.tp, cm.tn, cm.fp, cm.fn_
    );
    if r.undefined.any() {
        println!("{:<18} note: zero denominator reported as 0 ({:?})", "", r.undefined);
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        size: a.size,
        healthy: a.healthy,
        tumor: a.tumor,
        noise_stddev: a.noise_stddev,
        tumor_delta: a.tumor_delta,
        radius_min: a.radius_min,
        radius_max: a.radius_max,
        subject_block: a.subject_block,
        seed: a.seed,
    };
    print_config(
        "synth",
        &[
            ("out", a.out.display().to_string()),
            ("healthy", cfg.healthy.to_string()),
            ("tumor", cfg.tumor.to_string()),
            ("size", format!("{0}x{0}", cfg.size)),
            ("noise_stddev", cfg.noise_stddev.to_string()),
            ("tumor_delta", cfg.tumor_delta.to_string()),
            ("radius", format!("{}..{}", cfg.radius_min, cfg.radius_max)),
            ("subject_block", cfg.subject_block.to_string()),
            ("seed", cfg.seed.to_string()),
        ],
    );
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let m = generate_synthetic(&cfg, &a.out)?;
    println!("wrote {} images and {}", m.len(), a.out.join("manifest.csv").display());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    print_config(
        "preprocess",
        &[
            ("manifest", a.manifest.display().to_string()),
            ("out", a.out.display().to_string()),
            ("input_size", format!("{0}x{0}", a.input_size)),
        ],
    );
    if a.input_size == 0 {
        return Err(usage("input size must be positive"));
    }
    let m = load_manifest(&a.manifest)?;
    let img_dir = a.out.join("images");
    ensure_dir(&img_dir)?;
    let mut samples = Vec::with_capacity(m.len());
    for (i, s) in m.samples.iter().enumerate() {
        let processed = pipeline(&read_pgm(&s.path)?, a.input_size, a.input_size)?;
        let stem = s.path.file_stem().map_or("image".into(), |f| f.to_string_lossy().into_owned());
        let path = img_dir.join(format!("{i:05}_{stem}.pgm"));
        write_pgm(&processed, &path)?;
        samples.push(Sample {
            path,
            label: s.label,
            subject_id: s.subject_id.clone(),
        });
    }
    let out_manifest = a.out.join("manifest.csv");
    write_manifest(&Manifest::new(samples, format!("preprocessed {}", m.source)), &out_manifest)?;
    println!("wrote {} images and {}", m.len(), out_manifest.display());
    Ok(())
}

fn train_typed<T: Real>(a: &TrainCmd, cfg: &TrainConfig, spec: &ModelSpec) -> Result<()> {
    let size = a.train.input_size;
    let train_set = load_set(&a.manifest, size, true)?;
    let val_set = a.val_manifest.as_deref().map(|p| load_set(p, size, false)).transpose()?;
    let mut model = build_model::<T>(spec, cfg.seed)?;
    println!("model: {} parameters", model.param_count());
    let logs = train_model(&mut model, &train_set, val_set.as_ref(), cfg, |l| print_epoch("", l))?;
    ensure_dir(&a.out)?;
    save_checkpoint(&model, a.out.join("model.ckpt"))?;
    write_epochs_csv(&logs, a.out.join("epochs.csv"))?;
    write_curves_svg(&logs, a.out.join("curves.svg"))?;
    println!("wrote model.ckpt, epochs.csv and curves.svg to {}", a.out.display());
    Ok(())
}

pub fn train(a: TrainCmd) -> Result<()> {
    let cfg = train_config(&a.train)?;
    let mut items = vec![
        ("manifest", a.manifest.display().to_string()),
        (
            "val_manifest",
            a.val_manifest
                .as_ref()
                .map_or("none (held-out fraction)".into(), |p| p.display().to_string()),
        ),
        ("out", a.out.display().to_string()),
        ("arch", a.arch.to_string()),
    ];
    items.extend(train_items(&cfg, a.train.input_size));
    print_config("train", &items);
    let spec = model_spec(a.arch, a.train.input_size)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&a, &cfg, &spec),
        Precision::F64 => train_typed::<f64>(&a, &cfg, &spec),
    }
}

pub fn crossval(a: CrossvalArgs) -> Result<()> {
    let cfg = train_config(&a.train)?;
    let mut items = vec![
        ("manifest", a.manifest.display().to_string()),
        ("out", a.out.display().to_string()),
        ("folds", a.folds.to_string()),
        ("cv_mode", a.cv_mode.to_string()),
        ("arch", a.arch.to_string()),
    ];
    items.extend(train_items(&cfg, a.train.input_size));
    print_config("crossval", &items);
    let spec = model_spec(a.arch, a.train.input_size)?;
    if a.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    let data = load_set(&a.manifest, a.train.input_size, true)?;
    let plan = split_kfold(&data.subjects, a.folds, a.cv_mode, cfg.seed)?;
    let on_epoch = |fold: usize, l: &EpochLog| print_epoch(&format!("fold {:>2}  ", fold + 1), l);
    let result = match cfg.precision {
        Precision::F32 => cross_validate::<f32>(&spec, &data, &cfg, &plan, on_epoch)?,
        Precision::F64 => cross_validate::<f64>(&spec, &data, &cfg, &plan, on_epoch)?,
    };
    for (name, r) in result.rows() {
        print_metrics(&format!("fold {name}"), &r);
    }
    let (m, s) = (result.summary.mean, result.summary.stddev);
    println!(
        "mean ± stddev      accuracy {:.5}±{:.5}  precision {:.5}±{:.5}  recall {:.5}±{:.5}  f1 {:.5}±{:.5}",
        m[0], s[0], m[1], s[1], m[2], s[2], m[3], s[3]
    );
    write_metrics_csv(&result.rows(), &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_model<T: Real>(path: &Path, input_size: Option<usize>) -> Result<Model<T>> {
    let model = load_checkpoint::<T>(path)?;
    let spec = model.spec();
    if let Some(size) = input_size {
        if (spec.input_h, spec.input_w) != (size, size) {
            return Err(usage(format!(
                "--input-size {size} does not match the checkpoint's {}x{}",
                spec.input_h, spec.input_w
            )));
        }
    }
    Ok(model)
}

fn evaluate_typed<T: Real>(a: &EvaluateArgs) -> Result<()> {
    let model = load_model::<T>(&a.checkpoint, a.input_size)?;
    let spec = model.spec();
    eprintln!("checkpoint: {}x{} input, hidden {}", spec.input_h, spec.input_w, spec.hidden);
    let data = load_set(&a.manifest, spec.input_h, false)?;
    let report = metrics(&eval_set(&model, &data)?)?;
    print_metrics("evaluation", &report);
    if let Some(out) = &a.out {
        write_metrics_csv(&[("all".to_string(), report)], out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    print_config(
        "evaluate",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("manifest", a.manifest.display().to_string()),
            ("input_size", a.input_size.map_or("from checkpoint".into(), |s| format!("{s}x{s}"))),
            ("out", a.out.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("precision", a.precision.to_string()),
        ],
    );
    match a.precision {
        Precision::F32 => evaluate_typed::<f32>(&a),
        Precision::F64 => evaluate_typed::<f64>(&a),
    }
}

fn predict_typed<T: Real>(a: &PredictArgs) -> Result<()> {
    let model = load_model::<T>(&a.checkpoint, None)?;
    let (h, w) = (model.spec().input_h, model.spec().input_w);
    let mut kept = Vec::new();
    let mut images = Vec::new();
    let mut skipped = 0;
    for path in &a.images {
        match read_pgm(path).and_then(|img| pipeline(&img, h, w)) {
            Ok(img) => {
                kept.push(path);
                images.push(img);
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if !images.is_empty() {
        let n = images.len();
        let set = ImageSet::new(images, vec![0; n], vec![String::new(); n])?;
        for (path, p) in kept.iter().zip(predict_probs(&model, &set)?) {
            let class = usize::from(p[1] > p[0]);
            let label = tdcnn::data::Label::from_index(class).expect("two classes");
            println!("{}\t{label}\t{:.5}", path.display(), p[class]);
        }
    }
    if skipped > 0 {
        anyhow::bail!("{skipped} of {} images could not be read", a.images.len());
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    print_config(
        "predict",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("images", a.images.len().to_string()),
            ("precision", a.precision.to_string()),
        ],
    );
    match a.precision {
        Precision::F32 => predict_typed::<f32>(&a),
        Precision::F64 => predict_typed::<f64>(&a),
    }
}

fn compare_typed<T: Real>(
    cfg: &TrainConfig,
    size: usize,
    train_set: &ImageSet,
    test_set: &ImageSet,
) -> Result<Vec<(String, MetricsReport)>> {
    let mut rows = Vec::new();
    for arch in HiddenArch::ALL {
        let spec = model_spec(arch, size)?;
        let mut model = build_model::<T>(&spec, cfg.seed)?;
        println!("== {arch} ({} parameters)", model.param_count());
        train_model(&mut model, train_set, None, cfg, |l| print_epoch("", l))?;
        let report = metrics(&eval_set(&model, test_set)?)?;
        rows.push((arch.name().to_string(), report));
    }
    Ok(rows)
}

pub fn compare_archs(a: CompareArgs) -> Result<()> {
    let cfg = train_config(&a.train)?;
    let mut items = vec![
        ("manifest", a.manifest.display().to_string()),
        (
            "test_manifest",
            a.test_manifest.as_ref().map_or("none".into(), |p| p.display().to_string()),
        ),
        ("test_fraction", a.test_fraction.to_string()),
        ("out", a.out.display().to_string()),
    ];
    items.extend(train_items(&cfg, a.train.input_size));
    print_config("compare-archs", &items);
    model_spec(HiddenArch::RectoTriangular, a.train.input_size)?;
    let size = a.train.input_size;
    let all = load_set(&a.manifest, size, true)?;
    let (train_set, test_set) = match &a.test_manifest {
        Some(p) => (all, load_set(p, size, false)?),
        None => {
            if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
                return Err(usage("--test-fraction must lie in (0, 1)"));
            }
            let (tr, te) = holdout_split(all.len(), a.test_fraction, cfg.seed);
            if tr.is_empty() || te.is_empty() {
                return Err(usage("--test-fraction leaves an empty train or test side"));
            }
            (all.subset(&tr), all.subset(&te))
        }
    };
    let rows = match cfg.precision {
        Precision::F32 => compare_typed::<f32>(&cfg, size, &train_set, &test_set)?,
        Precision::F64 => compare_typed::<f64>(&cfg, size, &train_set, &test_set)?,
    };
    println!();
    for (name, r) in &rows {
        print_metrics(name, r);
    }
    write_comparison_csv(&rows, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    print_config(
        "gradcheck",
        &[
            ("seed", a.seed.to_string()),
            ("samples", a.samples.to_string()),
            ("precision", "f64".into()),
        ],
    );
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let opts = GradcheckOptions {
        seed: a.seed,
        model_samples: a.samples,
        perturb_conv_backward: a.inject_conv_bug,
    };
    let report = run_gradcheck(&opts)?;
    println!("{:<14} {:>12} {:>10} {:>8}  result", "check", "max rel err", "threshold", "checked");
    for e in &report {
        println!(
            "{:<14} {:>12.3e} {:>10.0e} {:>8}  {}",
            e.name,
            e.max_rel_err,
            e.threshold,
            e.checked,
            if e.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    if !failed.is_empty() {
        return Err(NumericFailure(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

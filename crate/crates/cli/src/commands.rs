use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pointxfer::datasets::{class_dirs, files_with_ext, parse_off, write_pcld, Dataset, Split};
use pointxfer::geometry::{normalize_cloud, sample_mesh_surface, PointCloud};
use pointxfer::model::{load_checkpoint, save_checkpoint, Checkpoint, Model};
use pointxfer::seed::{mix_seed, stable_hash};
use pointxfer::tensor::OpKind;
use pointxfer::training::{
    compare_runs, evaluate, finetune, train_loop, Evaluation, RunHistory, TrainConfig, TrainOutcome,
};
use pointxfer::verify::{check_component, component_names, SuiteConfig};

use crate::config::{DataConfig, RawConfig};
use crate::Invalid;

/// Refuses a nonempty directory unless `force`, then creates it.
pub fn prepare_out(out: &Path, force: bool) -> Result<()> {
    let nonempty = out.is_dir() && fs::read_dir(out)?.next().is_some();
    if nonempty && !force {
        return Err(Invalid(format!("output directory {} is not empty (pass --force to reuse it)", out.display())).into());
    }
    if out.exists() && !out.is_dir() {
        return Err(Invalid(format!("output path {} is not a directory", out.display())).into());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct PreprocessArgs<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub points: usize,
    pub seed: u64,
    pub skip_bad: bool,
    pub force: bool,
}

/// Samples every `class/split/*.off` mesh into a normalized PCLD cloud.
/// Returns the number of files that failed.
pub fn preprocess(a: &PreprocessArgs<'_>) -> Result<usize> {
    if !a.input.is_dir() {
        return Err(Invalid(format!("input directory `{}` does not exist", a.input.display())).into());
    }
    if a.points == 0 {
        return Err(Invalid("--points must be >= 1".into()).into());
    }
    prepare_out(a.out, a.force)?;
    let echo = format!(
        "input={}\npoints={}\nseed={}\nskip_bad={}\n",
        a.input.display(),
        a.points,
        a.seed,
        a.skip_bad
    );
    write(a.out.join("config.txt"), echo)?;

    let mut manifest = String::from("file,class,split,points\n");
    let mut errors = String::from("file,error\n");
    let mut failed = 0;
    for (label, class) in class_dirs(a.input)?.iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let dir = a.input.join(class).join(split.dir_name());
            for path in files_with_ext(&dir, "off")? {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                let rel = format!("{class}/{split}/{stem}");
                let seed = mix_seed(a.seed, stable_hash(rel.as_bytes()));
                let converted = fs::read_to_string(&path)
                    .map_err(anyhow::Error::from)
                    .and_then(|text| Ok(parse_off::<f64>(&text)?))
                    .and_then(|mesh| Ok(sample_mesh_surface(&mesh, a.points, seed)?));
                match converted {
                    Ok(points) => {
                        let cloud = PointCloud::new(normalize_cloud(&points), label);
                        let target = a.out.join(class).join(split.dir_name());
                        fs::create_dir_all(&target)?;
                        let file = format!("{rel}.pcld");
                        write_pcld(a.out.join(&file), &cloud)?;
                        let _ = writeln!(manifest, "{file},{class},{split},{}", a.points);
                    }
                    Err(e) => {
                        failed += 1;
                        let msg = e.to_string().replace(['\n', ','], " ");
                        let _ = writeln!(errors, "{class}/{split}/{},{msg}", path.file_name().unwrap_or_default().to_string_lossy());
                        eprintln!("{}: {e}", path.display());
                    }
                }
            }
        }
    }
    write(a.out.join("manifest.csv"), manifest)?;
    write(a.out.join("errors.csv"), errors)?;
    Ok(failed)
}

pub struct RunArgs<'a> {
    pub config: RawConfig,
    pub out: &'a Path,
    pub force: bool,
}

struct Prepared {
    train_cfg: TrainConfig,
    data: DataConfig,
}

/// Validates everything that can be checked without compute, prepares the
/// output directory and echoes the effective config.
fn prepare(run: &RunArgs<'_>) -> Result<Prepared> {
    let train_cfg = run.config.train()?;
    let data = run.config.data()?;
    // the class count comes from the data; any count checks the other keys
    run.config.model(2)?;
    prepare_out(run.out, run.force)?;
    write(run.out.join("config.txt"), run.config.to_string())?;
    Ok(Prepared { train_cfg, data })
}

fn load_eval(data: &DataConfig) -> Result<Option<Dataset<f64>>> {
    Ok(if data.eval { Some(data.load(Split::Test)?) } else { None })
}

fn save_outcome(out: &Path, outcome: &TrainOutcome<f64>, seed: u64, tag: &str) -> Result<()> {
    write(out.join("history.csv"), outcome.history.to_csv())?;
    let epochs = outcome.history.last().map_or(0, |r| r.epoch);
    let meta = |m: &Model<f64>, epoch: usize| {
        Checkpoint::from_model(m)
            .with_meta("epoch", epoch)
            .with_meta("seed", seed)
            .with_meta("source", tag)
    };
    save_checkpoint(out.join("model.ptck"), &meta(&outcome.model, epochs))?;
    save_checkpoint(out.join("best.ptck"), &meta(&outcome.best, outcome.best_epoch))?;
    Ok(())
}

fn summarize(outcome: &TrainOutcome<f64>) {
    if let (Some(last), Some(best)) = (outcome.history.last(), outcome.history.best()) {
        println!(
            "epochs {}  final loss {:.4}  train acc {:.2}%  eval acc {:.2}%  macro-F1 {:.2}%",
            last.epoch, last.train_loss, last.train_acc, last.eval_acc, last.macro_f1
        );
        println!("best eval acc {:.2}% at epoch {}", best.eval_acc, best.epoch);
    }
}

pub fn train(run: &RunArgs<'_>) -> Result<()> {
    let p = prepare(run)?;
    let train_set = p.data.load(Split::Train)?;
    let model_cfg = run.config.model(train_set.num_classes())?;
    let eval_set = load_eval(&p.data)?;
    println!("{}", train_set.describe());
    let model = Model::init(model_cfg, p.train_cfg.seed)?;
    let outcome = train_loop(model, &train_set, eval_set.as_ref(), &p.train_cfg, None)?;
    save_outcome(run.out, &outcome, p.train_cfg.seed, &p.data.tag())?;
    summarize(&outcome);
    Ok(())
}

pub struct Comparison<'a> {
    pub baseline: &'a Path,
    pub threshold: f64,
}

pub fn finetune_cmd(run: &RunArgs<'_>, from: &Path, compare: Option<Comparison<'_>>) -> Result<()> {
    if !from.is_file() {
        return Err(Invalid(format!("checkpoint {} does not exist", from.display())).into());
    }
    let baseline = match &compare {
        Some(c) => Some(RunHistory::read_csv(c.baseline).map_err(|e| Invalid(e.to_string()))?),
        None => None,
    };
    let p = prepare(run)?;
    let checkpoint = load_checkpoint::<f64>(from)?;
    let train_set = p.data.load(Split::Train)?;
    let eval_set = load_eval(&p.data)?;
    println!("{}", train_set.describe());
    let outcome = finetune(checkpoint, &train_set, eval_set.as_ref(), &p.train_cfg, None)?;
    save_outcome(run.out, &outcome, p.train_cfg.seed, &p.data.tag())?;
    summarize(&outcome);
    if let (Some(c), Some(base)) = (compare, baseline) {
        let table = compare_runs(&[("Fine Tuning", &outcome.history), ("Retraining", &base)], c.threshold)?;
        write(run.out.join("comparison.md"), table.to_string())?;
        print!("{table}");
    }
    Ok(())
}

/// `id,label,prediction` per evaluated cloud.
pub fn predictions_csv(data: &Dataset<f64>, ev: &Evaluation) -> String {
    let mut s = String::from("id,label,prediction\n");
    for ((id, l), p) in data.ids.iter().zip(&ev.labels).zip(&ev.predictions) {
        let _ = writeln!(s, "{id},{l},{p}");
    }
    s
}

pub fn eval_cmd(run: &RunArgs<'_>, checkpoint: &Path, split: Split) -> Result<()> {
    if !checkpoint.is_file() {
        return Err(Invalid(format!("checkpoint {} does not exist", checkpoint.display())).into());
    }
    let p = prepare(run)?;
    let model = load_checkpoint::<f64>(checkpoint)?.into_stored_model()?;
    let data = p.data.load(split)?;
    if model.config.num_classes != data.num_classes() {
        return Err(Invalid(format!(
            "checkpoint has {} classes but the dataset has {}",
            model.config.num_classes,
            data.num_classes()
        ))
        .into());
    }
    let cfg = &p.train_cfg;
    let ev = evaluate(&model, &data, cfg.points_per_cloud, cfg.batch_size, cfg.seed)?;
    write(run.out.join("metrics.csv"), ev.report.to_csv(&data.class_names))?;
    write(run.out.join("predictions.csv"), predictions_csv(&data, &ev))?;
    let report = ev.report.render(&data.class_names);
    write(run.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

pub struct GradcheckArgs<'a> {
    pub seeds: u64,
    pub fault: Option<&'a str>,
    pub out: Option<&'a Path>,
    pub force: bool,
}

/// Prints one row per component; returns whether every component passed.
pub fn gradcheck(a: &GradcheckArgs<'_>) -> Result<bool> {
    let fault = match a.fault {
        Some(name) => Some(name.parse::<OpKind>().map_err(Invalid)?),
        None => None,
    };
    if a.seeds == 0 {
        return Err(Invalid("--seeds must be >= 1".into()).into());
    }
    let config = SuiteConfig {
        seeds: a.seeds,
        fault,
        ..SuiteConfig::default()
    };
    if let Some(out) = a.out {
        prepare_out(out, a.force)?;
        let echo = format!(
            "seeds={}\neps={:?}\nthreshold={:?}\ninject_fault={}\n",
            config.seeds,
            config.eps,
            config.threshold,
            a.fault.unwrap_or("")
        );
        write(out.join("config.txt"), echo)?;
    }
    let mut csv = String::from("component,max_rel_error,checked,skipped,passed\n");
    let mut all = true;
    println!("{:<32} {:>13} {:>8} {:>8}  result", "component", "max rel err", "checked", "skipped");
    for name in component_names() {
        let r = check_component(&name, &config)?;
        all &= r.passed;
        println!(
            "{:<32} {:>13.3e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.passed { "ok" } else { "FAIL" }
        );
        let _ = writeln!(csv, "{},{:e},{},{},{}", r.name, r.max_rel_error, r.checked, r.skipped, r.passed);
    }
    if let Some(out) = a.out {
        write(out.join("gradcheck.csv"), csv)?;
    }
    Ok(all)
}

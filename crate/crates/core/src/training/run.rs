use std::ops::ControlFlow;
use std::time::Instant;

use super::config::TrainConfig;
use super::history::{EpochRecord, RunHistory};
use super::metrics::{compute_metrics, MetricsReport};
use super::optim::{adam_step, AdamState};
use super::TrainError;
use crate::datasets::{make_batches, BatchSpec, Dataset};
use crate::model::{argmax_rows, is_head, Checkpoint, HeadPolicy, Model, ModelKind, StartPolicy};
use crate::scalar::Scalar;
use crate::seed::mix_seed;
use crate::tensor::Tape;

const SHUFFLE_STREAM: u64 = 1;
const START_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const HEAD_STREAM: u64 = 4;

/// Called after every epoch; `Break` ends the run after that epoch.
pub type EpochObserver<'a> = dyn FnMut(&EpochRecord) -> ControlFlow<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// parameters after the last epoch
    pub model: Model<T>,
    /// parameters after the epoch with the best eval accuracy
    pub best: Model<T>,
    pub best_epoch: usize,
    pub history: RunHistory,
}

/// Predictions of a model over a whole dataset, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub report: MetricsReport,
}

fn check_classes<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<(), TrainError> {
    if model.config.num_classes != data.num_classes() {
        return Err(TrainError::ClassCountMismatch {
            model: model.config.num_classes,
            dataset: data.num_classes(),
        });
    }
    Ok(())
}

/// Classifies every cloud of `data`, resampled to `points_per_cloud`
/// points with a stream fixed by `seed`, using canonical sampling starts.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    points_per_cloud: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Evaluation, TrainError> {
    check_classes(model, data)?;
    let spec = BatchSpec::new(batch_size.max(1), points_per_cloud, mix_seed(seed, EVAL_STREAM)).ordered();
    let mut predictions = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for batch in make_batches(data, &spec, 0)? {
        predictions.extend(model.predict(&batch.positions, batch.len(), StartPolicy::Canonical)?);
        labels.extend(&batch.labels);
    }
    let report = compute_metrics(&predictions, &labels, model.config.num_classes)?;
    Ok(Evaluation {
        predictions,
        labels,
        report,
    })
}

fn validate_run<T: Scalar>(
    model: &Model<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    config.validate()?;
    model.config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyInput("training set is empty"));
    }
    check_classes(model, train)?;
    if let Some(e) = eval {
        if e.is_empty() {
            return Err(TrainError::EmptyInput("evaluation set is empty"));
        }
        check_classes(model, e)?;
    }
    if model.config.kind == ModelKind::Transformer && config.points_per_cloud < model.config.k {
        return Err(TrainError::InvalidConfig(format!(
            "points_per_cloud = {} is below k = {}",
            config.points_per_cloud, model.config.k
        )));
    }
    Ok(())
}

/// Minibatch Adam on cross-entropy, one history row per epoch.
///
/// Evaluation runs on `eval` (or the training set when absent) on the
/// epochs selected by [`TrainConfig::evaluates`]; other epochs repeat the
/// last evaluated values. A non-finite loss, gradient or parameter stops
/// the run with the tensor named.
pub fn train_loop<T: Scalar>(
    mut model: Model<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    config: &TrainConfig,
    mut observer: Option<&mut EpochObserver<'_>>,
) -> Result<TrainOutcome<T>, TrainError> {
    validate_run(&model, train, eval, config)?;
    let eval_set = eval.unwrap_or(train);
    let freeze = config.freeze_backbone;
    let trainable = |name: &str| !freeze || is_head(name);
    let spec = BatchSpec::new(config.batch_size, config.points_per_cloud, mix_seed(config.seed, SHUFFLE_STREAM));
    let start_seed = mix_seed(config.seed, START_STREAM);
    let mut adam = AdamState::new(model.params.tensors());
    let mut history = RunHistory::new();
    let mut best = (model.clone(), 0, f64::NEG_INFINITY);
    let mut last_eval = (0.0, 0.0);
    let clock = Instant::now();
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in make_batches(train, &spec, epoch)? {
            let at = |source| TrainError::NonFinite { epoch, step, source };
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, trainable);
            let start = StartPolicy::Seeded(mix_seed(start_seed, step));
            let logits = model.forward(&mut tape, &vars, &batch.positions, batch.len(), start)?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            tape.value(loss).check_finite("loss").map_err(at)?;
            loss_sum += tape.value(loss).item()?.to_f64_lossless() * batch.len() as f64;
            correct += argmax_rows(tape.value(logits))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            tape.backward(loss)?;

            let names = model.params.names();
            let grads: Vec<_> = vars
                .vars()
                .iter()
                .zip(names)
                .map(|(&v, name)| if trainable(name) { tape.grad(v) } else { None })
                .collect();
            for (g, name) in grads.iter().zip(names) {
                if let Some(g) = g {
                    g.check_finite(&format!("gradient of {name}")).map_err(at)?;
                }
            }
            drop(vars);
            adam_step(model.params.tensors_mut(), &grads, &mut adam, &config.adam);
            for (t, name) in model.params.tensors().iter().zip(model.params.names()) {
                t.check_finite(name).map_err(at)?;
            }
            step += 1;
        }

        if config.evaluates(epoch) {
            let e = evaluate(&model, eval_set, config.points_per_cloud, config.batch_size, config.seed)?;
            last_eval = (e.report.accuracy, e.report.macro_f1);
            if e.report.accuracy > best.2 {
                best = (model.clone(), epoch, e.report.accuracy);
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: 100.0 * correct as f64 / train.len() as f64,
            eval_acc: last_eval.0,
            macro_f1: last_eval.1,
            seconds: if config.wall_clock { clock.elapsed().as_secs_f64() } else { 0.0 },
        };
        history.push(record)?;
        let stop = observer.as_mut().is_some_and(|f| f(&record).is_break());
        if stop {
            if !config.evaluates(epoch) {
                // the best model must reflect the stopping epoch too
                let e = evaluate(&model, eval_set, config.points_per_cloud, config.batch_size, config.seed)?;
                if e.report.accuracy > best.2 {
                    best = (model.clone(), epoch, e.report.accuracy);
                }
            }
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        best: best.0,
        best_epoch: best.1,
        history,
    })
}

/// Loads the backbone of `checkpoint`, draws a new head for the classes of
/// `train`, and trains. With zero epochs the re-headed model is returned
/// untrained with an empty history.
pub fn finetune<T: Scalar>(
    checkpoint: Checkpoint<T>,
    train: &Dataset<T>,
    eval: Option<&Dataset<T>>,
    config: &TrainConfig,
    observer: Option<&mut EpochObserver<'_>>,
) -> Result<TrainOutcome<T>, TrainError> {
    let mut target = checkpoint.config.clone();
    target.num_classes = train.num_classes();
    let head_seed = mix_seed(config.seed, HEAD_STREAM);
    let model = checkpoint.into_model(&target, HeadPolicy::Reinit { seed: head_seed })?;
    if config.epochs == 0 {
        TrainConfig { epochs: 1, ..config.clone() }.validate()?;
        return Ok(TrainOutcome {
            best: model.clone(),
            model,
            best_epoch: 0,
            history: RunHistory::new(),
        });
    }
    train_loop(model, train, eval, config, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Split, SynthSpec};
    use crate::model::ModelConfig;

    fn data(classes: Vec<usize>, per_class: usize, split: Split) -> Dataset<f64> {
        SynthSpec::new(classes, per_class, 48, 3).generate(split).unwrap()
    }

    fn small(classes: usize) -> ModelConfig {
        ModelConfig::transformer(classes).with_widths(&[8, 16]).with_k(8).with_head_hidden(16)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            points_per_cloud: 32,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_history_bitwise() {
        let train = data(vec![0, 1, 2], 4, Split::Train);
        let run = || {
            let m = Model::init(small(3), 5).unwrap();
            train_loop(m, &train, None, &quick(), None).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert!(a.model.params.bitwise_eq(&b.model.params));
    }

    #[test]
    fn zero_epochs_rejected_before_any_step() {
        let train = data(vec![0, 1], 2, Split::Train);
        let cfg = TrainConfig { epochs: 0, ..quick() };
        let err = train_loop(Model::init(small(2), 0).unwrap(), &train, None, &cfg, None).unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn class_count_mismatch_surfaces_both_counts() {
        let train = data(vec![0, 1, 2], 2, Split::Train);
        let err = train_loop(Model::init(small(4), 0).unwrap(), &train, None, &quick(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn nan_parameter_is_named() {
        let train = data(vec![0, 1], 2, Split::Train);
        let mut m = Model::init(small(2), 0).unwrap();
        let i = m.params.position("block0.psi.weight").unwrap();
        m.params.tensors_mut()[i].data_mut()[0] = f64::NAN;
        let msg = train_loop(m, &train, None, &quick(), None).unwrap_err().to_string();
        assert!(msg.contains("`loss`"), "{msg}");
        assert!(msg.contains("epoch 1"), "{msg}");
    }

    #[test]
    fn frozen_backbone_is_bitwise_unchanged() {
        let src = data(vec![0, 1, 2], 3, Split::Train);
        let pre = train_loop(Model::init(small(3), 1).unwrap(), &src, None, &quick(), None).unwrap();
        let ck = Checkpoint::from_model(&pre.model);
        let target = data(vec![5, 6], 3, Split::Train);
        let cfg = TrainConfig {
            freeze_backbone: true,
            ..quick()
        };
        let out = finetune(ck.clone(), &target, None, &cfg, None).unwrap();
        for (name, t) in ck.params.iter().filter(|(n, _)| !is_head(n)) {
            assert!(out.model.params.get(name).unwrap().bitwise_eq(t), "{name}");
        }
        assert_eq!(out.model.config.num_classes, 2);
        let head = out.model.params.get("head.1.weight").unwrap();
        assert_eq!(head.shape(), &[16, 2]);
    }

    #[test]
    fn zero_epoch_finetune_only_replaces_head() {
        let src = data(vec![0, 1, 2], 2, Split::Train);
        let ck = Checkpoint::from_model(&Model::init(small(3), 4).unwrap());
        let cfg = TrainConfig { epochs: 0, ..quick() };
        let out = finetune(ck.clone(), &src, None, &cfg, None).unwrap();
        assert!(out.history.is_empty());
        for (name, t) in ck.params.iter() {
            let same = out.model.params.get(name).unwrap().bitwise_eq(t);
            // biases start at zero on both sides
            assert_eq!(same, !is_head(name) || name.ends_with(".bias"), "{name}");
        }
    }

    #[test]
    fn observer_can_stop_early() {
        let train = data(vec![0, 1], 2, Split::Train);
        let cfg = TrainConfig { epochs: 10, ..quick() };
        let mut seen = 0;
        let mut obs = |r: &EpochRecord| {
            seen += 1;
            if r.epoch == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        let out = train_loop(Model::init(small(2), 0).unwrap(), &train, None, &cfg, Some(&mut obs)).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(seen, 2);
    }

    #[test]
    fn skipped_eval_epochs_carry_last_values() {
        let train = data(vec![0, 1], 3, Split::Train);
        let cfg = TrainConfig {
            epochs: 5,
            eval_every: 3,
            ..quick()
        };
        let out = train_loop(Model::init(small(2), 0).unwrap(), &train, None, &cfg, None).unwrap();
        let r = out.history.records();
        assert_eq!(r[1].eval_acc, r[0].eval_acc);
        assert_eq!(r[3].eval_acc, r[2].eval_acc);
    }

    #[test]
    fn evaluation_matches_recount() {
        let test = data(vec![0, 1, 2], 3, Split::Test);
        let m = Model::init(small(3), 2).unwrap();
        let e = evaluate(&m, &test, 32, 4, 0).unwrap();
        assert_eq!(e.labels, test.labels());
        let hits = e.predictions.iter().zip(&e.labels).filter(|(p, l)| p == l).count();
        assert_eq!(e.report.accuracy, 100.0 * hits as f64 / 9.0);
    }
}

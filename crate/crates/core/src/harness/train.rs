use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, MetricReport, SaliencyMap};
use crate::model::Model;
use crate::nn::Mode;
use crate::optim::Adam;
use crate::param::ParamId;
use crate::tensor::Tensor4;

/// Stream of the shuffling generator; the model initializer uses the
/// per-parameter streams of the same seed.
const SHUFFLE_STREAM: u64 = 1 << 32;
/// Batch size used when scoring the test split.
const EVAL_BATCH: usize = 16;

/// One line of the training log. Epoch 0 describes the initial model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub report: Option<MetricReport>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6}", self.epoch, self.loss)?;
        let r = self.report.unwrap_or_default();
        let nan = f64::NAN;
        let pick = |v: f64| if self.report.is_some() { v } else { nan };
        write!(
            f,
            " E {:.6} S {:.6} Wf {:.6} F {:.6} MAE {:.6}",
            pick(r.e_measure),
            pick(r.s_measure),
            pick(r.weighted_f),
            pick(r.f_measure),
            pick(r.mae)
        )
    }
}

impl EpochLog {
    /// Parses a line produced by the `Display` impl.
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed log line `{line}`"));
        let t: Vec<&str> = line.split(' ').collect();
        let keys = ["epoch", "loss", "E", "S", "Wf", "F", "MAE"];
        if t.len() != 14 || keys.iter().enumerate().any(|(i, k)| t[2 * i] != *k) {
            return Err(bad());
        }
        let epoch = t[1].parse().map_err(|_| bad())?;
        let num = |i: usize| t[2 * i + 1].parse::<f64>().map_err(|_| bad());
        let report = if num(2)?.is_nan() {
            None
        } else {
            Some(MetricReport {
                e_measure: num(2)?,
                s_measure: num(3)?,
                weighted_f: num(4)?,
                f_measure: num(5)?,
                mae: num(6)?,
                count: 0,
            })
        };
        Ok(EpochLog {
            epoch,
            loss: num(1)?,
            report,
        })
    }
}

/// Trained model plus its log.
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
}

/// Scores eval-mode predictions on a dataset at the model's input size.
pub fn evaluate_model(model: &Model<f32>, data: &Dataset) -> Result<MetricReport> {
    let mut pairs = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        let y = model.predict(&x)?;
        for (k, &i) in chunk.iter().enumerate() {
            pairs.push((data.names[i].clone(), to_map(&y, k)?, data.masks[i].clone()));
        }
    }
    Ok(evaluate_pairs(&pairs)?.report)
}

/// Plane `n` of an (n,1,h,w) prediction as a saliency map.
pub fn to_map(y: &Tensor4<f32>, n: usize) -> Result<SaliencyMap> {
    let d = y.dims();
    SaliencyMap::new(d.h, d.w, y.plane(n, 0).iter().map(|&v| f64::from(v)).collect())
}

fn batch_loss(model: &mut Model<f32>, config: &TrainConfig, x: Tensor4<f32>, t: Tensor4<f32>, update: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let tv = tape.constant(t);
    let y = if update {
        model.forward_train(&mut tape, xv)?
    } else {
        // Batch statistics, as in training, without touching the buffers.
        let store = model.params();
        let mut bind = |t: &mut Tape<f32>, id: ParamId| t.constant(store.value(id).clone());
        model.forward_with(&mut tape, xv, Mode::Train, &mut bind)?.0
    };
    let loss = tape.loss(config.loss, y, tv)?;
    let value = f64::from(tape.value(loss).data()[0]);
    if update {
        model.params_mut().zero_grad();
        tape.backward_into(loss, model.params_mut())?;
    }
    Ok(value)
}

fn numeric_at(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { op } => Error::Numeric {
            op: format!("{op} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Trains from scratch. Each epoch visits `train` in a seeded order; after
/// it the test split (if any) is scored and `on_epoch` receives the log
/// line. Checkpoints go to `out` every `checkpoint_interval` epochs and at
/// the end, as `epoch_NNNN.ckpt` and `final.ckpt`.
pub fn train(config: &TrainConfig, train: &Dataset, test: Option<&Dataset>, out: Option<&Path>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let want = config.model.input_size;
    if let Some(bad) = train.images.iter().chain(test.iter().flat_map(|t| &t.images)).find(|x| {
        let d = x.dims();
        (d.h, d.w) != want
    }) {
        return Err(Error::Data(format!(
            "dataset image is {}x{}, model expects {}x{}",
            bad.dims().h,
            bad.dims().w,
            want.0,
            want.1
        )));
    }

    let mut model = Model::<f32>::build(&config.model, config.seed)?;
    let mut adam = Adam::new(model.params(), config.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(config.epochs + 1);

    let report = |model: &Model<f32>| test.map(|t| evaluate_model(model, t)).transpose();

    // Epoch 0: loss of the initial weights over the training order.
    let mut total = 0.0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let (x, t) = train.batch(chunk)?;
        let l = batch_loss(&mut model, config, x, t, false).map_err(|e| numeric_at(e, 0, b))?;
        total += l * chunk.len() as f64;
    }
    let first = EpochLog {
        epoch: 0,
        loss: total / train.len() as f64,
        report: report(&model)?,
    };
    on_epoch(&first);
    log.push(first);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, t) = train.batch(chunk)?;
            let l = batch_loss(&mut model, config, x, t, true).map_err(|e| numeric_at(e, epoch, b))?;
            if !l.is_finite() {
                return Err(numeric_at(Error::Numeric { op: "loss".into() }, epoch, b));
            }
            adam.step(model.params_mut(), config.learning_rate)?;
            total += l * chunk.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            loss: total / train.len() as f64,
            report: report(&model)?,
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(dir) = out {
            if config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0 {
                model.save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = out {
        model.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { model, log })
}

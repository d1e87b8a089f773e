//! Mini-batch training with per-sample tapes and a single optimiser.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::crop::sample_input;
use super::loss::{tracking_loss, LossParts, LossTargets};
use super::model::Tracker;
use crate::error::{Error, Result};
use crate::numerics::{AdamW, AdamWConfig, Graph, ParamStore, Real, StepOutcome, Tape, Tensor};
use crate::synthdata::SyntheticSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `decay_factor` from this epoch on (0-based).
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub weight_decay: f64,
    /// Search crops drawn from each training sequence per epoch.
    pub samples_per_seq: usize,
    /// Search-centre jitter around the ground truth, pixels per axis.
    pub jitter: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale schedule for the synthetic corpus.
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 8,
            lr: 3e-4,
            decay_epoch: 24,
            decay_factor: 0.1,
            weight_decay: 1e-4,
            samples_per_seq: 4,
            jitter: 16.0,
            seed: 0,
        }
    }

    /// Full-scale schedule.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 15,
            batch: 24,
            lr: 1e-5,
            decay_epoch: 6,
            ..TrainConfig::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::full_scale()),
            other => Err(Error::Config(format!("unknown schedule preset {other:?} (toy, paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.samples_per_seq == 0 {
            return Err(Error::Config(
                "epochs, batch and samples_per_seq must be positive".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.jitter.is_nan() || self.jitter < 0.0 {
            return Err(Error::Config(format!("bad lr {} or jitter {}", self.lr, self.jitter)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

/// Mean loss parts of one optimiser step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossParts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub steps: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,lr,total,cls,iou,l1\n");
        for p in &self.curve {
            s.push_str(&format!(
                "{},{},{:e},{:.9},{:.9},{:.9},{:.9}\n",
                p.epoch, p.step, p.lr, p.loss.total, p.loss.cls, p.loss.iou, p.loss.l1
            ));
        }
        s
    }

    /// Mean total loss of the last `k` steps.
    pub fn tail_loss(&self, k: usize) -> f64 {
        let tail = &self.curve[self.curve.len().saturating_sub(k)..];
        tail.iter().map(|p| p.loss.total).sum::<f64>() / tail.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
struct Sample {
    seq: usize,
    frame: usize,
    centre: (f64, f64),
}

fn draw_samples(seqs: &[SyntheticSequence], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        for _ in 0..cfg.samples_per_seq {
            let frame = if s.len() > 1 { rng.random_range(1..s.len()) } else { 0 };
            let (cx, cy) = s.gt[frame].center();
            let j = cfg.jitter;
            let (dx, dy) = if j > 0.0 {
                (rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                (0.0, 0.0)
            };
            out.push(Sample {
                seq: i,
                frame,
                centre: (cx + dx, cy + dy),
            });
        }
    }
    out.shuffle(rng);
    out
}

type SampleGrads<T> = (Vec<Option<Tensor<T>>>, LossParts);

fn sample_grads<T: Real>(
    model: &Tracker,
    store: &ParamStore<T>,
    seqs: &[SyntheticSequence],
    s: &Sample,
) -> Result<SampleGrads<T>> {
    let seq = &seqs[s.seq];
    let cfg = model.config();
    let (input, origin) = sample_input::<T>(cfg, seq, &seq.gt[0], s.frame, s.centre);
    let gt = seq.gt[s.frame].translate(-origin.0 as f64, -origin.1 as f64);
    let target = LossTargets::new(cfg, &gt)?;
    let tape = Tape::new();
    let g = Graph::new(&tape, store);
    let head = model.forward(&g, &input)?;
    let (loss, parts) = tracking_loss(&tape, cfg, &head, &target).map_err(|e| match e {
        Error::NonFinite { what, position } => Error::NonFinite {
            what,
            position: format!(
                "{position}; sequence {} frame {} search centre {:?}",
                seq.name, s.frame, s.centre
            ),
        },
        other => other,
    })?;
    let grads = tape.backward(loss)?;
    Ok((g.param_grads(&grads), parts))
}

fn accumulate<T: Real>(acc: &mut [Option<Tensor<T>>], add: Vec<Option<Tensor<T>>>) {
    for (a, g) in acc.iter_mut().zip(add) {
        let Some(g) = g else { continue };
        match a {
            Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += *y),
            None => *a = Some(g),
        }
    }
}

/// Trains `store` in place. `progress` sees every curve point as it is produced.
pub fn train<T: Real>(
    model: &Tracker,
    store: &mut ParamStore<T>,
    seqs: &[SyntheticSequence],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainReport> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut curve = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let samples = draw_samples(seqs, cfg, &mut rng);
        for batch in samples.chunks(cfg.batch) {
            let frozen: &ParamStore<T> = store;
            // Per-sample tapes in parallel; the reduction runs in sample order.
            let results: Vec<Result<SampleGrads<T>>> =
                batch.par_iter().map(|s| sample_grads(model, frozen, seqs, s)).collect();
            let mut acc: Vec<Option<Tensor<T>>> = vec![None; store.len()];
            let mut sum = LossParts {
                cls: 0.0,
                iou: 0.0,
                l1: 0.0,
                total: 0.0,
            };
            for r in results {
                let (g, p) = r?;
                accumulate(&mut acc, g);
                sum.cls += p.cls;
                sum.iou += p.iou;
                sum.l1 += p.l1;
                sum.total += p.total;
            }
            let k = batch.len() as f64;
            let inv = T::lit(1.0 / k);
            for g in acc.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            if let StepOutcome::SkippedNonFinite { param } = opt.step(store, &acc, lr) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    position: format!("parameter {param} at epoch {epoch} step {step}"),
                });
            }
            let point = CurvePoint {
                epoch,
                step,
                lr,
                loss: LossParts {
                    cls: sum.cls / k,
                    iou: sum.iou / k,
                    l1: sum.l1 / k,
                    total: sum.total / k,
                },
            };
            progress(&point);
            curve.push(point);
            step += 1;
        }
    }
    Ok(TrainReport { curve, steps: step })
}

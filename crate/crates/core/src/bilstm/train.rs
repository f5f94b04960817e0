use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, Batch, BilstmModel, Network, NetworkConfig, Standardizer, CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// The learning rate is multiplied by `lr_decay` every `decay_every` epochs.
    pub decay_every: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    /// Sequences per mini-batch.
    pub batch_subjects: usize,
    /// Loss weights of `[non-arousal, target]`.
    pub class_weights: [f64; CLASSES],
    pub seed: u64,
    /// Independent re-initializations; the lowest final loss wins.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 30,
            decay_every: 10,
            lr_decay: 0.7,
            clip_norm: 1.0,
            batch_subjects: 20,
            class_weights: [0.1, 0.9],
            seed: 0,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.clip_norm, self.lr_decay, self.class_weights[0], self.class_weights[1]];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epochs == 0
            || self.decay_every == 0
            || self.batch_subjects == 0
            || self.restarts == 0
        {
            return Err(Error::InvalidParameter(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Learning rate used during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// One record's feature rows with their window labels (0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub features: Array2<f64>,
    pub labels: Vec<i8>,
}

impl TrainSequence {
    pub fn new(features: Array2<f64>, labels: Vec<i8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "sequence labels".into(),
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| !(y == 0 || y == 1)) {
            return Err(Error::NonTargetLabel);
        }
        Ok(TrainSequence { features, labels })
    }

    /// Drops the windows labelled -1 and keeps the rest in order.
    pub fn without_non_target(features: ArrayView2<f64>, labels: &[i8]) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "window labels".into(),
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != -1).collect();
        Self::new(
            features.select(Axis(0), &keep),
            keep.iter().map(|&i| labels[i]).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: BilstmModel,
    /// Mean training loss of each epoch, accumulated before each update.
    pub loss_trace: Vec<f64>,
    /// Which restart produced the model.
    pub restart: usize,
}

fn check_dataset(dataset: &[TrainSequence]) -> Result<usize> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let dim = first.features.ncols();
    for (i, s) in dataset.iter().enumerate() {
        if s.features.ncols() != dim {
            return Err(Error::Shape(format!(
                "sequence {i} has {} columns, expected {dim}",
                s.features.ncols()
            )));
        }
        if s.is_empty() {
            return Err(Error::Shape(format!("sequence {i} is empty")));
        }
        if s.labels.iter().any(|&y| !(y == 0 || y == 1)) {
            return Err(Error::NonTargetLabel);
        }
    }
    Ok(dim)
}

struct Prepared {
    inputs: Vec<Array2<f64>>,
    labels: Vec<Vec<u8>>,
}

impl Prepared {
    fn batch(&self, idx: &[usize]) -> Result<(Batch, Vec<&[u8]>)> {
        let views: Vec<ArrayView2<f64>> = idx.iter().map(|&i| self.inputs[i].view()).collect();
        let labels = idx.iter().map(|&i| &self.labels[i][..]).collect();
        Ok((Batch::new(&views)?, labels))
    }
}

/// One training run from the given seed.
pub fn train_once(
    dataset: &[TrainSequence],
    net_cfg: NetworkConfig,
    cfg: &TrainConfig,
    columns: Option<Vec<usize>>,
    seed: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let source_dim = check_dataset(dataset)?;
    if let Some(idx) = &columns {
        if let Some(&bad) = idx.iter().find(|&&i| i >= source_dim) {
            return Err(Error::Shape(format!("selected column {bad} of {source_dim}")));
        }
    }
    let selected: Vec<Array2<f64>> = dataset
        .iter()
        .map(|s| match &columns {
            Some(idx) => s.features.select(Axis(1), idx).as_standard_layout().into_owned(),
            None => s.features.as_standard_layout().into_owned(),
        })
        .collect();
    let input_dim = selected[0].ncols();
    let net_cfg = NetworkConfig {
        input_dim,
        ..net_cfg
    };
    let scaler = Standardizer::fit(
        input_dim,
        selected
            .iter()
            .flat_map(|x| x.rows().into_iter().map(|r| r.to_slice().expect("standard layout"))),
    );
    let data = Prepared {
        inputs: selected.iter().map(|x| scaler.apply(x.view())).collect(),
        labels: dataset
            .iter()
            .map(|s| s.labels.iter().map(|&y| y as u8).collect())
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::random(net_cfg, &mut rng)?;
    let mut adam = Adam::new(net.num_params(), cfg.beta1, cfg.beta2);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset[i].len());
    let mut batches: Vec<Vec<usize>> = order.chunks(cfg.batch_subjects).map(<[usize]>::to_vec).collect();

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        batches.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut nll, mut weight) = (0.0, 0.0);
        for idx in &batches {
            let (batch, labels) = data.batch(idx)?;
            let mut g = net.loss_and_gradient(&batch, &labels, cfg.class_weights)?;
            nll += g.nll;
            weight += g.weight;
            if g.weight > 0.0 {
                g.grads.scale(1.0 / g.weight);
            }
            adam.step_network(&mut net, &mut g.grads, lr, cfg.clip_norm);
        }
        let loss = if weight > 0.0 { nll / weight } else { 0.0 };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {}", epoch + 1)));
        }
        loss_trace.push(loss);
    }

    // Loss of the final parameters over the whole training set.
    let (mut nll, mut weight) = (0.0, 0.0);
    for idx in &batches {
        let (batch, labels) = data.batch(idx)?;
        let g = net.loss_and_gradient(&batch, &labels, cfg.class_weights)?;
        nll += g.nll;
        weight += g.weight;
    }
    let final_loss = if weight > 0.0 { nll / weight } else { 0.0 };

    Ok(TrainedModel {
        model: BilstmModel {
            network: net,
            source_dim,
            columns,
            scaler,
            epochs_run: cfg.epochs,
            final_loss,
        },
        loss_trace,
        restart: 0,
    })
}

/// Trains `cfg.restarts` models from seeds derived from `cfg.seed` and
/// keeps the one with the lowest final loss (earliest on ties).
pub fn train(
    dataset: &[TrainSequence],
    net_cfg: NetworkConfig,
    cfg: &TrainConfig,
    columns: Option<Vec<usize>>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut best: Option<TrainedModel> = None;
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut run = train_once(dataset, net_cfg, cfg, columns.clone(), seed)?;
        run.restart = r;
        if best
            .as_ref()
            .is_none_or(|b| run.model.final_loss < b.model.final_loss)
        {
            best = Some(run);
        }
    }
    best.ok_or(Error::EmptyDataset)
}

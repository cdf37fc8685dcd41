//! Shared optimization loop.

use std::fmt::Write as _;
use std::path::Path;

use hdrtv_tensor::{Adam, AdamConfig, Graph, NodeId, ParamSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Log the training loss every this many steps (and at the last step).
    pub log_every: usize,
    /// Validate every this many steps (and at the last step); 0 disables.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
            log_every: 50,
            val_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(param_err!("training: batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(param_err!("training: learning rate {} must be positive", self.lr));
        }
        if self.log_every == 0 {
            return Err(param_err!("training: log interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,val_psnr\n");
        for r in &self.rows {
            let v = r.val_psnr.map(|p| format!("{p:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.9e},{}", r.step, r.loss, v);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io_util::write_bytes_atomic(path, self.to_csv().as_bytes())
    }

    pub fn last_val_psnr(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_psnr)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

/// Epoch-shuffled minibatches: a fresh permutation of `0..n` each epoch.
pub struct Batches {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batches { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        b
    }
}

/// Run Adam on `params`. `build` records the loss for a batch of item
/// indices at a step; `validate` scores the current parameters.
pub fn optimize<B, V>(
    params: &mut ParamSet,
    n_items: usize,
    config: &TrainConfig,
    mut build: B,
    mut validate: V,
) -> Result<TrainLog>
where
    B: FnMut(&mut Graph<f32>, &[NodeId], &[usize], usize) -> Result<NodeId>,
    V: FnMut(&ParamSet) -> Result<Option<f64>>,
{
    config.validate()?;
    if n_items == 0 {
        return Err(param_err!("training: dataset is empty"));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params,
    );
    let mut batches = Batches::new(n_items, config.seed);
    let mut log = TrainLog::default();
    for step in 1..=config.steps {
        let idx = batches.next_batch(config.batch_size);
        let mut g = Graph::new();
        let leaves = params.register(&mut g, true);
        let loss_node = build(&mut g, &leaves, &idx, step).map_err(|e| diverged(e, step))?;
        let loss = g.value(loss_node).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        g.backward(loss_node)?;
        let grads = params.gradients(&g, &leaves);
        if grads.iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        drop(g);
        adam.step(params, &grads);
        let last = step == config.steps;
        let val_due = config.val_every > 0 && (step % config.val_every == 0 || last);
        if step % config.log_every == 0 || last || val_due {
            let val_psnr = if val_due { validate(params)? } else { None };
            log.rows.push(LogRow { step, loss, val_psnr });
        }
    }
    Ok(log)
}

/// Non-finite values inside the forward pass surface as computation
/// errors from the tensor layer; during training they mean divergence.
fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::Tensor(hdrtv_tensor::TensorError::Computation(_)) => Error::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

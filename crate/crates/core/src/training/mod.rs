//! Joint, distributed and separate training regimes.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod train;

pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, restore, restore_as, save as checkpoint,
    to_bytes as checkpoint_to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{lr_at, LossKind, Regime, TrainConfig};
pub use loss::{distributed_loss, graph_distributed_loss, graph_iteration_loss, iteration_loss};
pub use optim::Adam;
pub use train::{init_system, train, train_with, EpochSummary, LossRecord, TrainedSystem};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes the loss history as CSV: `epoch,step,regime,loss,lr`.
pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "step", "regime", "loss", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            r.regime.to_string(),
            r.loss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

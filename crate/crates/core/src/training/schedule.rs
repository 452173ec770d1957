use serde::{Deserialize, Serialize};

use crate::error::{FmpnError, Result};

/// Constant learning rate until `decay_start`, then linear decay reaching 0
/// at `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub decay_start: usize,
}

pub fn lr_at(schedule: &StageSchedule, epoch: usize) -> Result<f64> {
    let StageSchedule {
        base_lr,
        total_epochs,
        decay_start,
    } = *schedule;
    if epoch > total_epochs {
        return Err(FmpnError::Argument(format!(
            "epoch {epoch} beyond schedule length {total_epochs}"
        )));
    }
    if epoch == total_epochs {
        return Ok(0.0);
    }
    if epoch < decay_start {
        return Ok(base_lr);
    }
    Ok(base_lr * ((total_epochs - epoch) as f64 / (total_epochs - decay_start) as f64))
}

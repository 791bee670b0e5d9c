use crate::error::{Error, Result};
use crate::evolution::ScheduleMode;

/// Training phase of the layer-to-stage schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    LayerWise,
    StageWise,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::LayerWise => "layer-wise",
            Phase::StageWise => "stage-wise",
        }
    }

    pub fn schedule(self, stage_size: usize) -> ScheduleMode {
        match self {
            Phase::LayerWise => ScheduleMode::LayerWise,
            Phase::StageWise => ScheduleMode::StageWise { stage_size },
        }
    }
}

/// First stage-wise epoch: `floor(switch_fraction * total_epochs)`.
pub fn switch_epoch(total_epochs: usize, switch_fraction: f64) -> usize {
    // 2/3 is not representable; the bias keeps 2/3 * 300 at 200.
    (switch_fraction * total_epochs as f64 + 1e-9).floor() as usize
}

pub fn schedule_mode(epoch: usize, total_epochs: usize, switch_fraction: f64) -> Result<Phase> {
    if epoch >= total_epochs {
        return Err(Error::Argument(format!("epoch {epoch} outside 0..{total_epochs}")));
    }
    if !(switch_fraction > 0.0 && switch_fraction <= 1.0) {
        return Err(Error::Argument(format!("switch fraction {switch_fraction} outside (0, 1]")));
    }
    Ok(if epoch < switch_epoch(total_epochs, switch_fraction) {
        Phase::LayerWise
    } else {
        Phase::StageWise
    })
}

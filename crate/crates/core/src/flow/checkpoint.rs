use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowModel};
use crate::error::{Error, Result};
use crate::grad::{NamedSlice, ParameterStore};

pub const CHECKPOINT_FORMAT: &str = "flowscore-flow-checkpoint/1";

/// Self-describing snapshot of a [`FlowModel`].
///
/// Carries the architecture, the per-layer masks and the named parameter
/// layout next to the flat parameter vector, so a reader can validate the
/// layout before trusting the numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub format: String,
    pub config: FlowConfig,
    pub masks: Vec<Vec<u8>>,
    pub slices: Vec<NamedSlice>,
    pub params: Vec<f64>,
}

impl FlowCheckpoint {
    pub fn from_flow(flow: &FlowModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: flow.config.clone(),
            masks: flow
                .layers
                .iter()
                .map(|l| l.mask.iter().map(|&m| m as u8).collect())
                .collect(),
            slices: flow.params.slices().to_vec(),
            params: flow.params.values().to_vec(),
        }
    }

    pub fn into_flow(self) -> Result<FlowModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!(
                "unknown checkpoint format `{}`",
                self.format
            )));
        }
        // validates the slice layout independently of the architecture
        ParameterStore::from_parts(self.params.clone(), self.slices.clone())?;
        let flow = FlowModel::from_parameters(self.config, &self.params)?;
        if flow.params.slices() != self.slices.as_slice() {
            return Err(Error::InvalidConfig(
                "checkpoint parameter layout does not match its architecture".into(),
            ));
        }
        let masks_match = flow.layers.len() == self.masks.len()
            && flow
                .layers
                .iter()
                .zip(&self.masks)
                .all(|(l, m)| l.mask.iter().map(|&b| b as u8).eq(m.iter().copied()));
        if !masks_match {
            return Err(Error::InvalidConfig(
                "checkpoint masks do not match its architecture".into(),
            ));
        }
        Ok(flow)
    }
}

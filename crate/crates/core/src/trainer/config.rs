use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::augment::AugmentMode;
use crate::encoder::ReadoutMode;
use crate::error::{Error, Result};
use crate::objective::{InvarianceForm, LatentReg, LossWeights, ObjectiveOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    /// Every row of the loss input in one step.
    #[default]
    Full,
    /// Rows sampled without replacement into batches of this size.
    Size(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: AugmentMode,
    /// Width `D₁` of augmented features and of the topology GNN output.
    pub aug_dim: usize,
    /// Encoder output width `D`; embeddings have `2D` columns.
    pub embed_dim: usize,
    /// Hidden width of every multi-layer stack. Defaults to `2D` for the
    /// encoder and `D₁` for the augmenters.
    pub hidden: Option<usize>,
    pub encoder_layers: usize,
    pub augmenter_layers: usize,
    pub topology_layers: usize,
    pub weights: LossWeights,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub batch: Batch,
    pub latent_reg: LatentReg,
    pub invariance: InvarianceForm,
    /// Skip optimization and keep the seeded initial parameters.
    pub untrained: bool,
    /// Rebuild `A′` on the tape every this many steps; in between, the last
    /// one is reused as a fixed matrix.
    pub topology_refresh: usize,
    pub readout: ReadoutMode,
    /// Per-epoch loss CSV.
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Feature,
            aug_dim: 64,
            embed_dim: 32,
            hidden: None,
            encoder_layers: 2,
            augmenter_layers: 1,
            topology_layers: 2,
            weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            epochs: 200,
            seed: 0,
            batch: Batch::Full,
            latent_reg: LatentReg::Vic,
            invariance: InvarianceForm::Frobenius,
            untrained: false,
            topology_refresh: 1,
            readout: ReadoutMode::Mean,
            log: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("aug_dim", self.aug_dim),
            ("embed_dim", self.embed_dim),
            ("encoder_layers", self.encoder_layers),
            ("augmenter_layers", self.augmenter_layers),
            ("topology_layers", self.topology_layers),
            ("topology_refresh", self.topology_refresh),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        if let Batch::Size(b) = self.batch {
            if b < 2 {
                return Err(Error::Config(format!("batch size must be >= 2, got {b}")));
            }
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }

    pub(crate) fn objective(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            latent_reg: self.latent_reg,
            invariance: self.invariance,
        }
    }

    pub(crate) fn encoder_widths(&self, input: usize) -> Vec<usize> {
        stack_widths(input, self.hidden.unwrap_or(2 * self.embed_dim), self.embed_dim, self.encoder_layers)
    }

    pub(crate) fn augmenter_widths(&self, input: usize) -> Vec<usize> {
        stack_widths(input, self.hidden.unwrap_or(self.aug_dim), self.aug_dim, self.augmenter_layers)
    }

    pub(crate) fn topology_widths(&self, input: usize) -> Vec<usize> {
        stack_widths(input, self.hidden.unwrap_or(self.aug_dim), self.aug_dim, self.topology_layers)
    }
}

fn stack_widths(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers - 1));
    w.push(output);
    w
}

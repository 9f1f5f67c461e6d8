use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the final 128-channel feature map reaches the dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Global average pooling to one feature per channel.
    Gap,
    /// Flatten the whole H/8 × W/8 × C map.
    Flatten,
}

impl Head {
    pub fn layer_name(self) -> &'static str {
        match self {
            Head::Gap => "head.gap",
            Head::Flatten => "head.flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Stem width followed by the output widths of the three residual blocks.
    pub channel_plan: Vec<usize>,
    pub fc_plan: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
    pub se_reduction: usize,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 224,
            channel_plan: vec![32, 32, 64, 128],
            fc_plan: vec![256, 128],
            dropout: 0.5,
            num_classes: 15,
            se_reduction: 16,
            head: Head::Gap,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail(format!("model.num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.channel_plan.len() != 4 || self.channel_plan.contains(&0) {
            return fail(format!(
                "model.channel_plan must hold 4 positive widths, got {:?}",
                self.channel_plan
            ));
        }
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return fail(format!(
                "model.input_size must be a positive multiple of 8 (three 2x2 pools), got {}",
                self.input_size
            ));
        }
        let se_channels = self.channel_plan[3];
        if self.se_reduction == 0 || !se_channels.is_multiple_of(self.se_reduction) {
            return fail(format!(
                "model.se_reduction {} must divide {se_channels}",
                self.se_reduction
            ));
        }
        if self.fc_plan.contains(&0) {
            return fail(format!("model.fc_plan widths must be positive, got {:?}", self.fc_plan));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Width of the vector entering the first dense layer.
    pub fn head_features(&self) -> usize {
        let c = self.channel_plan[3];
        match self.head {
            Head::Gap => c,
            Head::Flatten => {
                let s = self.input_size / 8;
                s * s * c
            }
        }
    }
}

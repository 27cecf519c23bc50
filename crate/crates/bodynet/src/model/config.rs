//! Model hyperparameters, loss weights, and ablation switches.

use serde::{Deserialize, Serialize};

use crate::diffnet::{DiffError, Result};

/// Network dimensions. Defaults describe the full-size model; tests and the
/// desk-scale acceptance runs shrink `channels`/`gru_hidden`/`d_loc`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Device count J.
    pub devices: usize,
    /// Window length L in samples at the working rate.
    pub window: usize,
    /// Input channels per device (3 accel + 3 gyro).
    pub in_channels: usize,
    /// Output channels of each of the six conv blocks.
    pub channels: Vec<usize>,
    /// Kernel width of each block.
    pub kernels: Vec<usize>,
    /// Whether a 2/2 max-pool follows the block.
    pub pool_after: Vec<bool>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// T'': segments the global features are pooled into before the fusion
    /// GRU runs over them.
    pub pool_segments: usize,
    /// Width of the shared per-device projection feeding the attention.
    pub d_loc: usize,
    pub heads: usize,
    /// Hidden width of the local head.
    pub loc_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            devices: 3,
            window: 100,
            in_channels: 6,
            channels: vec![16, 32, 32, 64, 64, 64],
            kernels: vec![3, 2, 2, 2, 2, 2],
            pool_after: vec![true, true, true, false, false, false],
            gru_hidden: 64,
            gru_layers: 2,
            pool_segments: 4,
            d_loc: 32,
            heads: 4,
            loc_hidden: 32,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(DiffError::ShapeMismatch { op: "model config", detail })
        };
        if self.devices == 0 {
            return bad("at least one device required".into());
        }
        let n = self.channels.len();
        if n == 0 || self.kernels.len() != n || self.pool_after.len() != n {
            return bad(format!(
                "channels/kernels/pool_after lengths must match and be nonzero: {}/{}/{}",
                n,
                self.kernels.len(),
                self.pool_after.len()
            ));
        }
        if self.channels.iter().any(|&c| c == 0) || self.kernels.iter().any(|&k| k == 0) {
            return bad("zero channel or kernel width".into());
        }
        if self.d_loc % self.heads != 0 || self.heads == 0 {
            return bad(format!("d_loc {} must divide into {} heads", self.d_loc, self.heads));
        }
        if self.gru_hidden == 0 || self.gru_layers == 0 || self.loc_hidden == 0 {
            return bad("zero-width recurrent or local head".into());
        }
        if self.pool_segments == 0 {
            return bad("pool_segments must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let tp = self.t_prime()?;
        if self.pool_segments > tp {
            return bad(format!("pool_segments {} exceeds feature length {tp}", self.pool_segments));
        }
        Ok(())
    }

    /// Feature length T' after the six blocks, or an error when the window is
    /// below the minimum receptive field.
    pub fn t_prime(&self) -> Result<usize> {
        let mut t = self.window;
        for (i, (&k, &pool)) in self.kernels.iter().zip(&self.pool_after).enumerate() {
            if t < k {
                return Err(DiffError::EmptyTime { op: "conv stack" });
            }
            t = t - k + 1;
            if pool {
                if t < 2 {
                    return Err(DiffError::EmptyTime { op: "conv stack" });
                }
                t /= 2;
            }
            if t == 0 {
                return Err(DiffError::EmptyTime { op: "conv stack" });
            }
            let _ = i;
        }
        Ok(t)
    }

    /// Channel count C of the final block.
    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("validated nonempty")
    }
}

/// Loss weights and the quality-weight rescaling constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_v_glb: f64,
    pub lambda_v_loc: f64,
    pub lambda_con: f64,
    pub lambda_orth: f64,
    /// Contrastive softmax temperature.
    pub tau: f64,
    /// Sigmoid span of the rescaled quality weight.
    pub lambda_a: f64,
    /// Sigmoid input scale.
    pub lambda_b: f64,
    /// Lower bound of the rescaled quality weight.
    pub lambda_c_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_v: 1.0,
            lambda_v_glb: 0.1,
            lambda_v_loc: 1.0,
            lambda_con: 0.2,
            lambda_orth: 0.05,
            tau: 0.1,
            lambda_a: 9.0,
            lambda_b: 0.01,
            lambda_c_w: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        // The λ weights may be zero (a zeroed term drops out of the loss,
        // which the reduction-to-plain-regression contract relies on); the
        // temperature and sigmoid constants are divisors or spans and must
        // stay strictly positive.
        let nonnegative = [
            ("lambda_v", self.lambda_v),
            ("lambda_v_glb", self.lambda_v_glb),
            ("lambda_v_loc", self.lambda_v_loc),
            ("lambda_con", self.lambda_con),
            ("lambda_orth", self.lambda_orth),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(DiffError::NotPositive { what: name, got: v });
            }
        }
        let positive = [
            ("tau", self.tau),
            ("lambda_a", self.lambda_a),
            ("lambda_b", self.lambda_b),
            ("lambda_c_w", self.lambda_c_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DiffError::NotPositive { what: name, got: v });
            }
        }
        Ok(())
    }
}

/// Which of the three contributions are active. All six ablation rows are
/// spelled out by `variant`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Split each device encoder into global/local twins and apply the
    /// contrastive + orthogonality losses. Off: one hybrid encoder per
    /// device whose features serve both roles, and neither loss.
    pub contrast_fe: bool,
    /// Quality-weighted aggregation with the fusion GRU. Off: arithmetic
    /// mean of the pooled features into a direct linear head.
    pub weighted_gf: bool,
    /// Attention over per-device local features producing the correction
    /// velocity. Off: the global velocity is the final output.
    pub attentive_la: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { contrast_fe: true, weighted_gf: true, attentive_la: true }
    }
}

impl AblationConfig {
    /// The six studied rows, from the bare backbone (1) to the full model (6).
    pub fn variant(row: usize) -> Result<Self> {
        let (c, w, a) = match row {
            1 => (false, false, false),
            2 => (true, false, false),
            3 => (true, true, false),
            4 => (true, false, true),
            5 => (false, true, true),
            6 => (true, true, true),
            _ => {
                return Err(DiffError::Eval(format!("ablation variant {row} outside 1..=6")));
            }
        };
        Ok(AblationConfig { contrast_fe: c, weighted_gf: w, attentive_la: a })
    }

    pub fn label(&self) -> String {
        format!(
            "contrast_fe={} weighted_gf={} attentive_la={}",
            self.contrast_fe, self.weighted_gf, self.attentive_la
        )
    }
}

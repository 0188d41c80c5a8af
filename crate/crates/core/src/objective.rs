//! Training objective: invariance, variance, covariance, latent and model
//! regularization, their weighted total, and the orthonormality
//! alternative to the variance/covariance pair.
//!
//! Every term is recorded on a [`Tape`] so the total can be differentiated.

use serde::{Deserialize, Serialize};

use crate::augment::AugmentMode;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Coefficients of the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Stabilizer inside the variance hinge's square root.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            epsilon: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ];
        if let Some((name, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weight {name} must be >= 0, got {v}")));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Which latent-space regularizer to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentReg {
    /// Variance hinge plus off-diagonal covariance penalty.
    #[default]
    Vic,
    /// Row-normalized Gram matrix pushed towards identity.
    Ortho,
}

/// Form of the invariance term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceForm {
    /// `‖Z₁ − Z₂‖_F`
    #[default]
    Frobenius,
    /// `‖Z₁ − Z₂‖²_F / B`
    MeanSquared,
}

/// Per-term loss values.
///
/// Under [`LatentReg::Ortho`], `var1`/`var2` are zero and `cov1`/`cov2`
/// hold the two per-view Gram penalties, so `total` still recomposes as
/// `α·inv + β(var1+var2) + γ(cov1+cov2) + λ·model_reg`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub inv: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov1: f64,
    pub cov2: f64,
    pub model_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "epoch,inv,var1,var2,cov1,cov2,model_reg,total";

    pub fn recompose(&self, w: &LossWeights) -> f64 {
        w.alpha * self.inv
            + w.beta * (self.var1 + self.var2)
            + w.gamma * (self.cov1 + self.cov2)
            + w.lambda * self.model_reg
    }

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{},{}",
            self.inv, self.var1, self.var2, self.cov1, self.cov2, self.model_reg, self.total
        )
    }

    /// Name of the first non-finite term, in CSV column order.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("inv", self.inv),
            ("var1", self.var1),
            ("var2", self.var2),
            ("cov1", self.cov1),
            ("cov2", self.cov2),
            ("model_reg", self.model_reg),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// `‖Z₁ − Z₂‖_F`.
pub fn invariance(tape: &mut Tape, z1: Var, z2: Var) -> Result<Var> {
    let d = tape.sub(z1, z2)?;
    tape.frobenius_norm(d)
}

/// `‖Z₁ − Z₂‖²_F / B`.
pub fn invariance_mean_squared(tape: &mut Tape, z1: Var, z2: Var) -> Result<Var> {
    let d = tape.sub(z1, z2)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    let b = tape.value(z1).rows().max(1) as f64;
    tape.scale(s, 1.0 / b)
}

/// `(1/D) Σⱼ max(0, 1 − sqrt(Var(z_:j) + ε))` with unbiased variance.
pub fn variance_reg(tape: &mut Tape, z: Var, epsilon: f64) -> Result<Var> {
    let var = tape.column_variance(z)?;
    let shifted = tape.add_scalar(var, epsilon)?;
    let std = tape.sqrt(shifted)?;
    let neg = tape.scale(std, -1.0)?;
    let shortfall = tape.add_scalar(neg, 1.0)?;
    let hinge = tape.max_const(shortfall, 0.0)?;
    tape.mean(hinge)
}

/// `(1/D) Σ_{i≠j} [Z̄ᵀZ̄ / (B − 1)]²ᵢⱼ`.
pub fn covariance_reg(tape: &mut Tape, z: Var) -> Result<Var> {
    let (b, d) = tape.value(z).shape();
    if b < 2 {
        return Err(Error::DegenerateBatch {
            op: "covariance_reg",
            rows: b,
        });
    }
    let centered = tape.mean_center_columns(z)?;
    let ct = tape.transpose(centered)?;
    let gram = tape.matmul(ct, centered)?;
    let cov = tape.scale(gram, 1.0 / (b - 1) as f64)?;
    let off_mask = tape.constant(Tensor::full(d, d, 1.0).zip_map(&Tensor::identity(d), |a, i| a - i));
    let off = tape.hadamard(cov, off_mask)?;
    let sq = tape.square(off)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / d as f64)
}

/// Latent regularization terms, recorded individually.
#[derive(Clone, Copy, Debug)]
pub struct LatentTerms {
    pub var1: Var,
    pub var2: Var,
    pub cov1: Var,
    pub cov2: Var,
    /// `β(v₁ + v₂) + γ(c₁ + c₂)`
    pub weighted: Var,
}

/// `β(v(Z₁) + v(Z₂)) + γ(c(Z₁) + c(Z₂))`.
pub fn latent_reg(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    beta: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<LatentTerms> {
    let var1 = variance_reg(tape, z1, epsilon)?;
    let var2 = variance_reg(tape, z2, epsilon)?;
    let cov1 = covariance_reg(tape, z1)?;
    let cov2 = covariance_reg(tape, z2)?;
    let v = tape.add(var1, var2)?;
    let c = tape.add(cov1, cov2)?;
    let bv = tape.scale(v, beta)?;
    let gc = tape.scale(c, gamma)?;
    let weighted = tape.add(bv, gc)?;
    Ok(LatentTerms {
        var1,
        var2,
        cov1,
        cov2,
        weighted,
    })
}

/// `Σ_l ‖W_l W_lᵀ − I‖_F`, where `W_l` stacks layer `l` of the first
/// augmenter on top of layer `l` of the second. Weights are row-per-unit
/// (`d_out x d_in`).
pub fn model_reg(tape: &mut Tape, theta1: &[Var], theta2: &[Var]) -> Result<Var> {
    if theta1.len() != theta2.len() || theta1.is_empty() {
        return Err(Error::shape(
            "model_reg",
            format!("{} layers vs {} layers", theta1.len(), theta2.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&w1, &w2) in theta1.iter().zip(theta2) {
        let (s1, s2) = (tape.value(w1).shape(), tape.value(w2).shape());
        if s1 != s2 {
            return Err(Error::shape("model_reg", format!("layer shapes {s1:?} vs {s2:?}")));
        }
        let stacked = tape.concat_rows(w1, w2)?;
        let st = tape.transpose(stacked)?;
        let gram = tape.matmul(stacked, st)?;
        let eye = tape.constant(Tensor::identity(2 * s1.0));
        let diff = tape.sub(gram, eye)?;
        let norm = tape.frobenius_norm(diff)?;
        total = Some(match total {
            Some(t) => tape.add(t, norm)?,
            None => norm,
        });
    }
    Ok(total.expect("at least one layer"))
}

/// `‖Z̃ Z̃ᵀ − I‖_F` for row-normalized `Z̃`.
pub fn gram_penalty(tape: &mut Tape, z: Var) -> Result<Var> {
    let b = tape.value(z).rows();
    let zn = tape.row_l2_normalize(z)?;
    let zt = tape.transpose(zn)?;
    let gram = tape.matmul(zn, zt)?;
    let eye = tape.constant(Tensor::identity(b));
    let diff = tape.sub(gram, eye)?;
    tape.frobenius_norm(diff)
}

/// `γ(‖Z̃₁Z̃₁ᵀ − I‖_F + ‖Z̃₂Z̃₂ᵀ − I‖_F)`.
pub fn orthonormality_reg(tape: &mut Tape, z1: Var, z2: Var, gamma: f64) -> Result<Var> {
    let a = gram_penalty(tape, z1)?;
    let b = gram_penalty(tape, z2)?;
    let s = tape.add(a, b)?;
    tape.scale(s, gamma)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ObjectiveOptions {
    pub latent_reg: LatentReg,
    pub invariance: InvarianceForm,
}

/// The recorded total loss plus its value breakdown.
#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// `α·inv + R_{Z₁,Z₂} + λ·R_{Θ₁,Θ₂}`.
///
/// `theta` carries the feature augmenters' weights; it is required in modes
/// that use feature augmentation and ignored otherwise.
pub fn total_loss(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    theta: Option<(&[Var], &[Var])>,
    mode: AugmentMode,
    weights: &LossWeights,
    opts: ObjectiveOptions,
) -> Result<TotalLoss> {
    weights.validate()?;
    let inv = match opts.invariance {
        InvarianceForm::Frobenius => invariance(tape, z1, z2)?,
        InvarianceForm::MeanSquared => invariance_mean_squared(tape, z1, z2)?,
    };
    let mut total = tape.scale(inv, weights.alpha)?;
    let mut bd = LossBreakdown {
        inv: tape.value(inv).item(),
        ..Default::default()
    };

    match opts.latent_reg {
        LatentReg::Vic => {
            let t = latent_reg(tape, z1, z2, weights.beta, weights.gamma, weights.epsilon)?;
            total = tape.add(total, t.weighted)?;
            bd.var1 = tape.value(t.var1).item();
            bd.var2 = tape.value(t.var2).item();
            bd.cov1 = tape.value(t.cov1).item();
            bd.cov2 = tape.value(t.cov2).item();
        }
        LatentReg::Ortho => {
            let a = gram_penalty(tape, z1)?;
            let b = gram_penalty(tape, z2)?;
            let s = tape.add(a, b)?;
            let r = tape.scale(s, weights.gamma)?;
            total = tape.add(total, r)?;
            bd.cov1 = tape.value(a).item();
            bd.cov2 = tape.value(b).item();
        }
    }

    if mode.uses_features() {
        let Some((t1, t2)) = theta else {
            return Err(Error::Config(format!(
                "{mode:?} mode needs both feature augmenters for model regularization"
            )));
        };
        let m = model_reg(tape, t1, t2)?;
        let lm = tape.scale(m, weights.lambda)?;
        total = tape.add(total, lm)?;
        bd.model_reg = tape.value(m).item();
    }

    bd.total = tape.value(total).item();
    Ok(TotalLoss {
        total,
        breakdown: bd,
    })
}

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::Model;
use crate::pooling::Pooling;

/// Pooling plus optional context-vector supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Tap,
    Sap,
    Apf,
    Anf,
    Adf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Tap,
        Variant::Sap,
        Variant::Apf,
        Variant::Anf,
        Variant::Adf,
    ];

    pub fn pooling(self) -> Pooling {
        match self {
            Variant::Tap => Pooling::Tap,
            _ => Pooling::Sap,
        }
    }

    pub fn has_context_loss(self) -> bool {
        matches!(self, Variant::Apf | Variant::Anf | Variant::Adf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tap => "tap",
            Variant::Sap => "sap",
            Variant::Apf => "apf",
            Variant::Anf => "anf",
            Variant::Adf => "adf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// Loss components available for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub softmax: Option<f64>,
    pub prototypical: Option<f64>,
    pub am_softmax: Option<f64>,
    pub context: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBundle {
    pub total: f64,
    pub parts: LossParts,
    pub lambda_mu: f64,
    /// Gradient of `total` for every parameter, keyed by [`Model::names`].
    pub gradients: Option<Model>,
}

/// `L_PL + L_s + λ L_μ` for episodic training, `L_cls + λ L_μ` for plain
/// classification.
pub fn total_objective(parts: LossParts, variant: Variant, lambda_mu: f64) -> Result<LossBundle> {
    let base = match (parts.prototypical, parts.softmax, parts.am_softmax) {
        (Some(pl), Some(s), None) => pl + s,
        (None, Some(s), None) => s,
        (None, None, Some(am)) => am,
        _ => {
            return Err(Error::invalid(
                "loss parts must be prototypical+softmax, softmax alone, or AM-Softmax alone",
            ))
        }
    };
    let total = match (variant.has_context_loss(), parts.context) {
        (false, None) => base,
        (true, Some(mu)) => base + lambda_mu * mu,
        (false, Some(_)) => {
            return Err(Error::invalid(format!(
                "variant {variant} has no context loss"
            )))
        }
        (true, None) => {
            return Err(Error::invalid(format!(
                "variant {variant} needs a context loss"
            )))
        }
    };
    Ok(LossBundle {
        total,
        parts,
        lambda_mu,
        gradients: None,
    })
}

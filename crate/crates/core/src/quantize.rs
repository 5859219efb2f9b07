//! Message quantizers applied to every value a vehicle transmits.
//!
//! Two quantizers are provided besides the identity:
//!
//! * logarithmic, `q(x) = sgn(x) exp(rho * round(ln|x| / rho))`, whose
//!   relative error is bounded: `exp(-rho/2) <= q(x)/x <= exp(rho/2)`;
//! * uniform, `q(x) = rho * round(x / rho)`, whose absolute error is at most
//!   `rho/2`.
//!
//! Rounding ties go away from zero in both. The logarithmic quantizer maps
//! zero (and anything below the smallest positive normal) to zero, which keeps
//! it odd and leaves the consensus fixed point at the origin intact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    Log,
    Uniform,
    None,
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantizerKind::Log => "log",
            QuantizerKind::Uniform => "uniform",
            QuantizerKind::None => "none",
        })
    }
}

impl FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(QuantizerKind::Log),
            "uniform" => Ok(QuantizerKind::Uniform),
            "none" => Ok(QuantizerKind::None),
            other => Err(Error::InvalidParameter(format!(
                "unknown quantizer `{other}` (expected log, uniform or none)"
            ))),
        }
    }
}

/// A quantizer kind together with its level `rho`.
///
/// For [`QuantizerKind::None`] the level is carried along but ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    #[serde(rename = "quantizer")]
    pub kind: QuantizerKind,
    #[serde(default)]
    pub rho: f64,
}

impl Quantizer {
    pub fn new(kind: QuantizerKind, rho: f64) -> Result<Self> {
        let q = Quantizer { kind, rho };
        q.validate()?;
        Ok(q)
    }

    pub fn log(rho: f64) -> Result<Self> {
        Self::new(QuantizerKind::Log, rho)
    }

    pub fn uniform(rho: f64) -> Result<Self> {
        Self::new(QuantizerKind::Uniform, rho)
    }

    pub const fn identity() -> Self {
        Quantizer {
            kind: QuantizerKind::None,
            rho: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != QuantizerKind::None && !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "quantization level must be positive and finite, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Short label such as `log_rho0.125`, used for file names.
    pub fn label(&self) -> String {
        match self.kind {
            QuantizerKind::None => "none".to_string(),
            kind => format!("{kind}_rho{}", self.rho),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            QuantizerKind::None => x,
            QuantizerKind::Log => log_quantize(self.rho, x),
            QuantizerKind::Uniform => uniform_quantize(self.rho, x),
        }
    }

    /// Quantizes `v` elementwise into `out`. Both slices must have equal length.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), out.len());
        match self.kind {
            QuantizerKind::None => out.copy_from_slice(v),
            _ => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = self.apply(x);
                }
            }
        }
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }
}

#[inline]
pub fn log_quantize(rho: f64, x: f64) -> f64 {
    let mag = x.abs();
    if mag < f64::MIN_POSITIVE {
        // zero, denormals; NaN falls through below and stays NaN
        return 0.0;
    }
    let q = (rho * (mag.ln() / rho).round()).exp();
    if x.is_sign_negative() {
        -q
    } else {
        q
    }
}

#[inline]
pub fn uniform_quantize(rho: f64, x: f64) -> f64 {
    let q = rho * (x / rho).round();
    // keep q(-0.0) == -q(0.0) bit-exact
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

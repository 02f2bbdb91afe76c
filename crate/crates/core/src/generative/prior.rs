//! Univariate prior families and the bijections that move constrained
//! parameters onto the real line.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Map from the internal (unconstrained) scale to the reported scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// constrained = exp(u)
    Log,
    /// constrained = 1 / (1 + exp(-u))
    Logit,
}

impl Transform {
    pub fn to_constrained(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => sigmoid(u),
        }
    }

    pub fn to_unconstrained(self, c: f64) -> f64 {
        match self {
            Transform::Identity => c,
            Transform::Log => c.ln(),
            Transform::Logit => (c / (1.0 - c)).ln(),
        }
    }

    /// log |d constrained / d u|
    pub fn log_abs_det_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Logit => -softplus(-u) - softplus(u),
        }
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Prior families. Parameters follow the mean/sd and shape/rate conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    HalfNormal { sd: f64 },
    Exponential { rate: f64 },
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match *self {
            Prior::Normal { mean, sd } => mean.is_finite() && ok(sd),
            Prior::HalfNormal { sd } => ok(sd),
            Prior::Exponential { rate } => ok(rate),
            Prior::Beta { a, b } => ok(a) && ok(b),
            Prior::Gamma { shape, rate } => ok(shape) && ok(rate),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::config(format!("degenerate prior {self:?}")))
        }
    }

    pub fn transform(&self) -> Transform {
        match self {
            Prior::Normal { .. } => Transform::Identity,
            Prior::HalfNormal { .. } | Prior::Exponential { .. } | Prior::Gamma { .. } => {
                Transform::Log
            }
            Prior::Beta { .. } => Transform::Logit,
        }
    }

    /// Draw on the constrained scale. Assumes a validated prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Prior::HalfNormal { sd } => (sd * rng.sample::<f64, _>(StandardNormal))
                .abs()
                .max(f64::MIN_POSITIVE),
            Prior::Exponential { rate } => Exp::new(rate)
                .expect("validated rate")
                .sample(rng)
                .max(f64::MIN_POSITIVE),
            Prior::Beta { a, b } => Beta::new(a, b)
                .expect("validated shape")
                .sample(rng)
                .clamp(1e-15, 1.0 - 1e-15),
            Prior::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate)
                .expect("validated shape")
                .sample(rng)
                .max(f64::MIN_POSITIVE),
        }
    }

    pub fn sample_unconstrained<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.transform().to_unconstrained(self.sample(rng))
    }

    /// Density on the constrained scale.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => normal_log_pdf(x, mean, sd),
            Prior::HalfNormal { sd } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    std::f64::consts::LN_2 + normal_log_pdf(x, 0.0, sd)
                }
            }
            Prior::Exponential { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            Prior::Beta { a, b } => {
                if !(0.0..=1.0).contains(&x) {
                    f64::NEG_INFINITY
                } else {
                    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() + ln_gamma(a + b)
                        - ln_gamma(a)
                        - ln_gamma(b)
                }
            }
            Prior::Gamma { shape, rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
        }
    }

    /// Density of the unconstrained value, Jacobian included.
    pub fn log_density_unconstrained(&self, u: f64) -> f64 {
        let t = self.transform();
        self.log_density(t.to_constrained(u)) + t.log_abs_det_jacobian(u)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Prior::Normal { mean, .. } => mean,
            Prior::HalfNormal { sd } => sd * (2.0 / std::f64::consts::PI).sqrt(),
            Prior::Exponential { rate } => 1.0 / rate,
            Prior::Beta { a, b } => a / (a + b),
            Prior::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Prior::Normal { sd, .. } => sd * sd,
            Prior::HalfNormal { sd } => sd * sd * (1.0 - 2.0 / std::f64::consts::PI),
            Prior::Exponential { rate } => 1.0 / (rate * rate),
            Prior::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Prior::Gamma { shape, rate } => shape / (rate * rate),
        }
    }
}

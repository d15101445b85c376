//! Continuous distributions used as data-generating mechanisms, plus the
//! variate generators the conjugate samplers need.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::special::{ln_gamma, normal_cdf, normal_pdf, reg_inc_beta, reg_inc_gamma};
use super::stream::RandomStream;
use crate::error::{domain, invalid, Result};

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma(shape, 1) variate.
///
/// Marsaglia–Tsang squeeze for shape ≥ 1; for shape < 1 the shape+1 draw is
/// scaled by U^(1/shape).
pub fn gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boost = open_unit(rng).powf(1.0 / shape);
        return gamma_variate(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

#[inline]
pub fn chi_square_variate<R: Rng + ?Sized>(rng: &mut R, df: f64) -> f64 {
    2.0 * gamma_variate(rng, 0.5 * df)
}

pub fn beta_variate<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let x = gamma_variate(rng, a);
    let y = gamma_variate(rng, b);
    x / (x + y)
}

/// Data-generating families. Parameter names follow the usual conventions:
/// Laplace `scale` is δ in f(w) = e^{−|w−λ|/δ} / 2δ; gamma `scale` is β in
/// w^{α−1} e^{−w/β} / (Γ(α) β^α), shifted right by `shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ContinuousDistribution {
    Normal { mean: f64, variance: f64 },
    Laplace { location: f64, scale: f64 },
    Uniform { lower: f64, upper: f64 },
    ShiftedGamma { shape: f64, scale: f64, shift: f64 },
}

impl ContinuousDistribution {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        Self::Normal { mean, variance }.validated()
    }

    pub fn laplace(location: f64, scale: f64) -> Result<Self> {
        Self::Laplace { location, scale }.validated()
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        Self::Uniform { lower, upper }.validated()
    }

    pub fn shifted_gamma(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        Self::ShiftedGamma { shape, scale, shift }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::Normal { mean, variance } => mean.is_finite() && variance > 0.0 && variance.is_finite(),
            Self::Laplace { location, scale } => location.is_finite() && scale > 0.0 && scale.is_finite(),
            Self::Uniform { lower, upper } => lower.is_finite() && upper.is_finite() && lower < upper,
            Self::ShiftedGamma { shape, scale, shift } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite() && shift.is_finite()
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(invalid(format!("bad distribution parameters: {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, variance } => normal_cdf((x - mean) / variance.sqrt()),
            Self::Laplace { location, scale } => {
                let z = (x - location) / scale;
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            Self::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Self::ShiftedGamma { shape, scale, shift } => {
                if x <= shift {
                    0.0
                } else {
                    reg_inc_gamma((x - shift) / scale, shape).unwrap_or(f64::NAN)
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, variance } => {
                let sd = variance.sqrt();
                normal_pdf((x - mean) / sd) / sd
            }
            Self::Laplace { location, scale } => (-(x - location).abs() / scale).exp() / (2.0 * scale),
            Self::Uniform { lower, upper } => {
                if x >= lower && x <= upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            Self::ShiftedGamma { shape, scale, shift } => {
                let w = x - shift;
                if w <= 0.0 {
                    0.0
                } else {
                    ((shape - 1.0) * w.ln() - w / scale - ln_gamma(shape) - shape * scale.ln()).exp()
                }
            }
        }
    }

    /// Probability mass inside the open interval (lower, upper).
    pub fn prob_between(&self, lower: f64, upper: f64) -> f64 {
        self.cdf(upper) - self.cdf(lower)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::Laplace { location, .. } => location,
            Self::Uniform { lower, upper } => 0.5 * (lower + upper),
            Self::ShiftedGamma { shape, scale, shift } => shift + shape * scale,
        }
    }

    /// Lower end of the support, if bounded.
    pub fn support_lower(&self) -> Option<f64> {
        match *self {
            Self::Uniform { lower, .. } => Some(lower),
            Self::ShiftedGamma { shift, .. } => Some(shift),
            _ => None,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Normal { mean, variance } => mean + variance.sqrt() * standard_normal(rng),
            Self::Laplace { location, scale } => {
                let u = open_unit(rng);
                if u < 0.5 {
                    location + scale * (2.0 * u).ln()
                } else {
                    location - scale * (2.0 * (1.0 - u)).ln()
                }
            }
            Self::Uniform { lower, upper } => lower + (upper - lower) * open_unit(rng),
            Self::ShiftedGamma { shape, scale, shift } => loop {
                // tiny variates can round onto the shift itself; the support is open
                let x = shift + scale * gamma_variate(rng, shape);
                if x > shift {
                    break x;
                }
            },
        }
    }

    pub fn draw_n<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<f64> {
        (0..k).map(|_| self.draw(rng)).collect()
    }
}

/// Draw `k` i.i.d. values from `dist` on the given stream.
pub fn sample(dist: &ContinuousDistribution, stream: &RandomStream, k: usize) -> Result<Vec<f64>> {
    let dist = dist.validated()?;
    if k == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut rng = stream.rng();
    Ok(dist.draw_n(&mut rng, k))
}

/// Location-scale Student-t. For `df <= 2` the variance is infinite and
/// sample variances of draws do not settle; [`StudentT::variance`] returns
/// `None` in that regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub df: f64,
    pub location: f64,
    pub scale: f64,
}

impl StudentT {
    pub fn new(df: f64, location: f64, scale: f64) -> Result<Self> {
        if !(df > 0.0) || !(scale > 0.0) || !location.is_finite() {
            return Err(domain(format!(
                "student-t needs df > 0 and scale > 0, got df={df}, scale={scale}"
            )));
        }
        Ok(Self { df, location, scale })
    }

    pub fn variance(&self) -> Option<f64> {
        (self.df > 2.0).then(|| self.scale * self.scale * self.df / (self.df - 2.0))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let t = (x - self.location) / self.scale;
        let v = self.df;
        let tail = 0.5 * reg_inc_beta(v / (v + t * t), 0.5 * v, 0.5).unwrap_or(f64::NAN);
        if t < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = standard_normal(rng);
        let chi = chi_square_variate(rng, self.df);
        self.location + self.scale * z / (chi / self.df).sqrt()
    }
}

pub fn student_t_sample(
    df: f64,
    location: f64,
    scale: f64,
    stream: &RandomStream,
    k: usize,
) -> Result<Vec<f64>> {
    let t = StudentT::new(df, location, scale)?;
    let mut rng = stream.rng();
    Ok((0..k).map(|_| t.draw(&mut rng)).collect())
}

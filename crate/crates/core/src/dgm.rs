//! Data-generating mechanisms calibrated so that P(s_l < W < s_u) hits a
//! target φ.
//!
//! Location-type parameters sit at the spec midpoint; the spread parameter is
//! solved. Gamma families are shifted to start at the lower limit and keep a
//! fixed scale (4 for low skew, 2 for high skew) while the shape is solved.

use serde::{Deserialize, Serialize};

use crate::conjugate::SpecLimits;
use crate::error::{Error, Result};
use crate::numeric::{normal_quantile, reg_inc_gamma, ContinuousDistribution};

/// Rates of the two shifted-Gamma families (scale = 1 / rate).
pub const GAMMA_LOW_SKEW_RATE: f64 = 4.0;
pub const GAMMA_HIGH_SKEW_RATE: f64 = 2.0;
/// Target φ values of the robustness study.
pub const STUDY_PHIS: [f64; 2] = [0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgmFamily {
    Normal,
    Laplace,
    Uniform,
    GammaLowSkew,
    GammaHighSkew,
}

impl DgmFamily {
    pub const ALL: [DgmFamily; 5] = [
        DgmFamily::Normal,
        DgmFamily::Laplace,
        DgmFamily::Uniform,
        DgmFamily::GammaLowSkew,
        DgmFamily::GammaHighSkew,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DgmFamily::Normal => "normal",
            DgmFamily::Laplace => "laplace",
            DgmFamily::Uniform => "uniform",
            DgmFamily::GammaLowSkew => "gamma_low_skew",
            DgmFamily::GammaHighSkew => "gamma_high_skew",
        }
    }
}

impl std::str::FromStr for DgmFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        DgmFamily::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown family '{s}' (expected normal, laplace, uniform, gamma_low_skew or gamma_high_skew)"
                ))
            })
    }
}

impl std::fmt::Display for DgmFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub family: DgmFamily,
    pub target_phi: f64,
    pub limits: SpecLimits,
    pub distribution: ContinuousDistribution,
}

impl DgmSpec {
    /// φ implied by the solved distribution.
    pub fn realized_phi(&self) -> f64 {
        self.distribution.prob_between(self.limits.lower, self.limits.upper)
    }
}

fn check_phi(phi: f64, allow_one: bool) -> Result<()> {
    let ok = phi > 0.0 && (phi < 1.0 || (allow_one && phi == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Solver(format!("target phi must lie in (0, 1), got {phi}")))
    }
}

/// σ with μ at the midpoint: σ = w / Φ⁻¹((1 + φ)/2).
pub fn solve_normal_sigma(target_phi: f64, limits: &SpecLimits) -> Result<f64> {
    check_phi(target_phi, false)?;
    Ok(limits.half_width() / normal_quantile(0.5 * (1.0 + target_phi))?)
}

/// Laplace scale with location at the midpoint: 1 − e^{−w/δ} = φ.
pub fn solve_laplace_delta(target_phi: f64, limits: &SpecLimits) -> Result<f64> {
    check_phi(target_phi, false)?;
    Ok(limits.half_width() / -(-target_phi).ln_1p())
}

/// Symmetric uniform support around the midpoint with width / (γ_U − γ_L) = φ.
pub fn solve_uniform_bounds(target_phi: f64, limits: &SpecLimits) -> Result<(f64, f64)> {
    check_phi(target_phi, true)?;
    let half = limits.half_width() / target_phi;
    let c = limits.midpoint();
    Ok((c - half, c + half))
}

/// Shape α of a Gamma(α, rate β) shifted to s_l such that
/// P(α, β(s_u − s_l)) = φ.
pub fn solve_gamma_alpha(rate: f64, target_phi: f64, limits: &SpecLimits) -> Result<f64> {
    check_phi(target_phi, false)?;
    if !(rate > 0.0) {
        return Err(Error::Solver(format!("gamma rate must be positive, got {rate}")));
    }
    let x = (limits.upper - limits.lower) * rate;
    // P(α, x) decreases from 1 (α → 0) to 0 (α → ∞)
    let f = |alpha: f64| reg_inc_gamma(x, alpha).map(|p| p - target_phi);
    let mut lo = 1e-8;
    let mut hi = 1.0;
    if f(lo)? <= 0.0 {
        return Err(Error::Solver(format!("no gamma shape bracket for phi {target_phi}")));
    }
    while f(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Solver(format!("no gamma shape bracket for phi {target_phi}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let resid = f(alpha)?.abs();
    if resid > 1e-9 {
        return Err(Error::Solver(format!("gamma shape solve residual {resid:e}")));
    }
    Ok(alpha)
}

pub fn build_dgm(family: DgmFamily, target_phi: f64, limits: &SpecLimits) -> Result<DgmSpec> {
    let limits = limits.validated()?;
    let c = limits.midpoint();
    let distribution = match family {
        DgmFamily::Normal => {
            let sigma = solve_normal_sigma(target_phi, &limits)?;
            ContinuousDistribution::normal(c, sigma * sigma)?
        }
        DgmFamily::Laplace => ContinuousDistribution::laplace(c, solve_laplace_delta(target_phi, &limits)?)?,
        DgmFamily::Uniform => {
            let (lo, hi) = solve_uniform_bounds(target_phi, &limits)?;
            ContinuousDistribution::uniform(lo, hi)?
        }
        DgmFamily::GammaLowSkew | DgmFamily::GammaHighSkew => {
            let rate = if family == DgmFamily::GammaLowSkew {
                GAMMA_LOW_SKEW_RATE
            } else {
                GAMMA_HIGH_SKEW_RATE
            };
            let alpha = solve_gamma_alpha(rate, target_phi, &limits)?;
            ContinuousDistribution::shifted_gamma(alpha, 1.0 / rate, limits.lower)?
        }
    };
    Ok(DgmSpec {
        family,
        target_phi,
        limits,
        distribution,
    })
}

/// The ten study mechanisms: five families at φ = 0.8 and 0.9.
pub fn study_dgms(limits: &SpecLimits) -> Result<Vec<DgmSpec>> {
    let mut out = Vec::with_capacity(10);
    for family in DgmFamily::ALL {
        for phi in STUDY_PHIS {
            out.push(build_dgm(family, phi, limits)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ln_gamma, normal_pdf, sample, RandomStream};
    use approx::assert_abs_diff_eq;

    fn limits() -> SpecLimits {
        SpecLimits::new(2.0, 5.0).unwrap()
    }

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, steps: usize) -> f64 {
        let h = (b - a) / steps as f64;
        let mut acc = f(a) + f(b);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    /// Integrate the density over the limits without touching any CDF code.
    fn mass_by_quadrature(d: &DgmSpec) -> f64 {
        let (a, b) = (d.limits.lower, d.limits.upper);
        match d.distribution {
            ContinuousDistribution::Normal { mean, variance } => {
                let s = variance.sqrt();
                simpson(|x| normal_pdf((x - mean) / s) / s, a, b, 20_000)
            }
            ContinuousDistribution::Laplace { location, scale } => {
                let f = |x: f64| (-(x - location).abs() / scale).exp() / (2.0 * scale);
                // split at the kink
                simpson(f, a, location, 20_000) + simpson(f, location, b, 20_000)
            }
            ContinuousDistribution::Uniform { lower, upper } => {
                (b.min(upper) - a.max(lower)).max(0.0) / (upper - lower)
            }
            ContinuousDistribution::ShiftedGamma { shape, scale, shift } if shape >= 1.0 => {
                let f = |w: f64| {
                    let x = w - shift;
                    if x <= 0.0 {
                        return 0.0;
                    }
                    ((shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()).exp()
                };
                simpson(f, shift, b, 20_000)
            }
            ContinuousDistribution::ShiftedGamma { shape, scale, shift } => {
                // y = (w − shift)^α removes the w^{α−1} singularity
                let f = |y: f64| (-y.powf(1.0 / shape) / scale).exp();
                let norm = (ln_gamma(shape) + shape.ln() + shape * scale.ln()).exp();
                simpson(f, 0.0, (b - shift).powf(shape), 20_000) / norm
            }
        }
    }

    #[test]
    fn closed_form_constants() {
        let l = limits();
        assert_abs_diff_eq!(solve_normal_sigma(0.8, &l).unwrap(), 1.170_456_219, epsilon = 1e-8);
        assert_abs_diff_eq!(solve_normal_sigma(0.9, &l).unwrap(), 0.911_935_248, epsilon = 1e-8);
        assert_abs_diff_eq!(solve_laplace_delta(0.8, &l).unwrap(), 1.5 / 5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(solve_laplace_delta(0.8, &l).unwrap(), 0.93205, epsilon = 1e-4);
        assert_abs_diff_eq!(solve_laplace_delta(0.9, &l).unwrap(), 0.65144, epsilon = 1e-4);
        let e1 = 1.0 - (-1f64).exp();
        assert_abs_diff_eq!(solve_laplace_delta(e1, &l).unwrap(), 1.5, epsilon = 1e-12);
        assert_eq!(solve_uniform_bounds(0.8, &l).unwrap(), (1.625, 5.375));
        let (lo, hi) = solve_uniform_bounds(0.9, &l).unwrap();
        assert_abs_diff_eq!(lo, 11.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 31.0 / 6.0, epsilon = 1e-12);
        assert_eq!(solve_uniform_bounds(1.0, &l).unwrap(), (2.0, 5.0));
        assert!(solve_uniform_bounds(1.1, &l).is_err());
    }

    #[test]
    fn gamma_shapes() {
        let l = limits();
        let exp_case = 1.0 - (-6f64).exp();
        assert_abs_diff_eq!(solve_gamma_alpha(2.0, exp_case, &l).unwrap(), 1.0, epsilon = 1e-9);
        // P(α, 6) and P(α, 12), checked against a series evaluation
        let series = |a: f64, x: f64| {
            let mut term = (a * x.ln() - x - ln_gamma(a + 1.0)).exp();
            let mut sum = term;
            for k in 1..300 {
                term *= x / (a + k as f64);
                sum += term;
            }
            sum
        };
        for &(rate, phi) in &[(2.0, 0.8), (2.0, 0.9), (4.0, 0.8), (4.0, 0.9)] {
            let a = solve_gamma_alpha(rate, phi, &l).unwrap();
            assert_abs_diff_eq!(series(a, 3.0 * rate), phi, epsilon = 1e-9);
        }
        // values from an independent root finder
        assert_abs_diff_eq!(solve_gamma_alpha(4.0, 0.8, &l).unwrap(), 9.543_724_08, epsilon = 1e-6);
        assert_abs_diff_eq!(solve_gamma_alpha(4.0, 0.9, &l).unwrap(), 8.186_331_16, epsilon = 1e-6);
        assert_abs_diff_eq!(solve_gamma_alpha(2.0, 0.8, &l).unwrap(), 4.399_675_37, epsilon = 1e-6);
        assert_abs_diff_eq!(solve_gamma_alpha(2.0, 0.9, &l).unwrap(), 3.493_725_29, epsilon = 1e-6);
        // the low-skew family is the less skewed one
        let skew = |rate: f64| 2.0 / solve_gamma_alpha(rate, 0.9, &l).unwrap().sqrt();
        assert!(skew(GAMMA_LOW_SKEW_RATE) < skew(GAMMA_HIGH_SKEW_RATE));
    }

    #[test]
    fn build_examples() {
        let l = limits();
        let n = build_dgm(DgmFamily::Normal, 0.9, &l).unwrap();
        match n.distribution {
            ContinuousDistribution::Normal { mean, variance } => {
                assert_eq!(mean, 3.5);
                assert_abs_diff_eq!(variance.sqrt(), 0.91194, epsilon = 1e-5);
            }
            other => panic!("{other:?}"),
        }
        let u = build_dgm(DgmFamily::Uniform, 0.8, &l).unwrap();
        assert_eq!(u.distribution, ContinuousDistribution::Uniform { lower: 1.625, upper: 5.375 });
        let g = build_dgm(DgmFamily::GammaHighSkew, 1.0 - (-6f64).exp(), &l).unwrap();
        match g.distribution {
            ContinuousDistribution::ShiftedGamma { shape, scale, shift } => {
                assert_abs_diff_eq!(shape, 1.0, epsilon = 1e-9);
                assert_eq!((scale, shift), (0.5, 2.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_study_dgms_calibrate_by_quadrature() {
        let dgms = study_dgms(&limits()).unwrap();
        assert_eq!(dgms.len(), 10);
        for d in &dgms {
            let q = mass_by_quadrature(d);
            assert!((q - d.target_phi).abs() < 1e-6, "{:?}: {q}", d.family);
            assert!((d.realized_phi() - d.target_phi).abs() < 1e-9);
        }
    }

    #[test]
    fn all_study_dgms_calibrate_by_sampling() {
        let l = limits();
        for (i, d) in study_dgms(&l).unwrap().iter().enumerate() {
            let n = 1_000_000;
            let xs = sample(&d.distribution, &RandomStream::new(17).child("dgm", i as u64), n).unwrap();
            let frac = xs.iter().filter(|&&x| l.contains(x)).count() as f64 / n as f64;
            let se = (d.target_phi * (1.0 - d.target_phi) / n as f64).sqrt();
            assert!((frac - d.target_phi).abs() < 3.0 * se, "{:?} {}: {frac}", d.family, d.target_phi);
        }
    }

    #[test]
    fn spread_parameters_are_monotone_in_phi() {
        let l = limits();
        let grid: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        for w in grid.windows(2) {
            let (p, q) = (w[0], w[1]);
            assert!(solve_normal_sigma(q, &l).unwrap() < solve_normal_sigma(p, &l).unwrap());
            assert!(solve_laplace_delta(q, &l).unwrap() < solve_laplace_delta(p, &l).unwrap());
            let (a, b) = (solve_uniform_bounds(p, &l).unwrap(), solve_uniform_bounds(q, &l).unwrap());
            assert!(b.1 - b.0 < a.1 - a.0);
            for rate in [2.0, 4.0] {
                assert!(solve_gamma_alpha(rate, q, &l).unwrap() < solve_gamma_alpha(rate, p, &l).unwrap());
            }
        }
        // σ → 0 as φ → 1
        assert!(solve_normal_sigma(1.0 - 1e-12, &l).unwrap() < 0.25);
    }

    #[test]
    fn family_names_round_trip() {
        for f in DgmFamily::ALL {
            assert_eq!(f.name().parse::<DgmFamily>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.name()));
        }
        assert!("cauchy".parse::<DgmFamily>().is_err());
        assert_eq!("Gamma-High-Skew".parse::<DgmFamily>().unwrap(), DgmFamily::GammaHighSkew);
    }

    #[test]
    fn bad_targets_are_solver_errors() {
        let l = limits();
        for phi in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(solve_normal_sigma(phi, &l), Err(Error::Solver(_))));
            assert!(matches!(solve_gamma_alpha(2.0, phi, &l), Err(Error::Solver(_))));
        }
    }
}

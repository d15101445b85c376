//! Deterministic evaluation of P(φ > φ₀) under a Normal–Inverse-Gamma
//! posterior.
//!
//! For fixed σ, φ(μ, σ) is symmetric and unimodal in μ about the spec
//! midpoint c, so {μ : φ > φ₀} is an interval c ± h(σ). It is empty when
//! σ ≥ σ* = w / Φ⁻¹((1+φ₀)/2), w the half-width. Writing r = w/σ and
//! h = σ·u(r), u solves Φ(r − u) − Φ(−r − u) = φ₀. The tail is then a
//! one-dimensional integral over σ of a normal interval probability, done in
//! x = ln(b′/σ²) (so e^x ~ Gamma(a′, 1)) with x = x* + t² to remove the
//! square-root onset at σ*.

use crate::conjugate::{NigHyper, SpecLimits};
use crate::error::{invalid, Result};
use crate::numeric::{ln_gamma, normal_cdf, normal_quantile, normal_sf};

const TABLE_POINTS: usize = 4097;
const PANELS: usize = 4;
const NODES: usize = 16;
/// Gamma(a′) mass ignored in each tail of the σ integral.
const TAIL_MASS: f64 = 1e-13;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Precomputed quadrature for one (spec limits, φ₀) pair.
#[derive(Debug, Clone)]
pub struct QuadratureTail {
    center: f64,
    half_width: f64,
    phi0: f64,
    /// Φ⁻¹((1+φ₀)/2): the smallest r for which the μ-interval is nonempty.
    r_star: f64,
    /// Φ⁻¹(φ₀): large-r asymptote u ≈ r − q.
    q: f64,
    v_max: f64,
    dv: f64,
    u_table: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureTail {
    pub fn new(limits: &SpecLimits, phi0: f64) -> Result<Self> {
        let limits = limits.validated()?;
        if !(phi0 > 0.0 && phi0 < 1.0) {
            return Err(invalid(format!("quadrature tail needs 0 < phi0 < 1, got {phi0}")));
        }
        let r_star = normal_quantile(0.5 * (1.0 + phi0))?;
        let q = normal_quantile(phi0)?;
        // beyond r* + 8 the lower normal term is below 1e-20
        let v_max = 8f64.sqrt();
        let dv = v_max / (TABLE_POINTS - 1) as f64;
        let u_table = (0..TABLE_POINTS)
            .map(|i| {
                let v = i as f64 * dv;
                solve_u(r_star + v * v, phi0)
            })
            .collect();
        let (nodes, weights) = gauss_legendre(NODES);
        Ok(Self {
            center: limits.midpoint(),
            half_width: limits.half_width(),
            phi0,
            r_star,
            q,
            v_max,
            dv,
            u_table,
            nodes,
            weights,
        })
    }

    pub fn phi0(&self) -> f64 {
        self.phi0
    }

    #[inline]
    fn u_of_r(&self, r: f64) -> f64 {
        let v = (r - self.r_star).max(0.0).sqrt();
        if v >= self.v_max {
            return r - self.q;
        }
        let pos = v / self.dv;
        let i = (pos as usize).min(TABLE_POINTS - 2);
        let frac = pos - i as f64;
        self.u_table[i] + frac * (self.u_table[i + 1] - self.u_table[i])
    }

    /// P(φ > φ₀) under the given posterior.
    pub fn tail(&self, h: &NigHyper) -> f64 {
        let a = h.a;
        let ln_norm = ln_gamma(a);
        let ln_b = h.b.ln();
        // e^x ~ Gamma(a, 1); trim both tails
        let lo_formula = (TAIL_MASS.ln() + ln_gamma(a + 1.0)) / a;
        let hi_formula = (a + 8.0 * a.sqrt() + 30.0).ln();
        let (lo, hi) = if a >= 2.0 {
            let mean = a.ln() - 0.5 / a;
            let sd = 1.0 / (a - 0.5).sqrt();
            (lo_formula.max(mean - 10.0 * sd), hi_formula.min(mean + 10.0 * sd))
        } else {
            (lo_formula, hi_formula)
        };
        // σ < σ*  ⇔  x > x* = ln(b′ r*² / w²)
        let x_star = ln_b + 2.0 * (self.r_star / self.half_width).ln();
        let x0 = lo.max(x_star);
        if x0 >= hi {
            return 0.0;
        }
        let t_max = (hi - x0).sqrt();
        let panel = t_max / PANELS as f64;
        let sqrt_nu = h.nu.sqrt();
        let mut total = 0.0;
        for p in 0..PANELS {
            let mid = (p as f64 + 0.5) * panel;
            for (&z, &wgt) in self.nodes.iter().zip(&self.weights) {
                let t = mid + 0.5 * panel * z;
                let x = x0 + t * t;
                let density = (a * x - x.exp() - ln_norm).exp();
                if density == 0.0 {
                    continue;
                }
                let sigma = (0.5 * (ln_b - x)).exp();
                let r = self.half_width / sigma;
                if r <= self.r_star {
                    continue;
                }
                let half = sigma * self.u_of_r(r);
                let scale = sigma / sqrt_nu;
                let zl = (self.center - half - h.m) / scale;
                let zu = (self.center + half - h.m) / scale;
                let inside = if zl > 0.0 {
                    normal_sf(zl) - normal_sf(zu)
                } else {
                    normal_cdf(zu) - normal_cdf(zl)
                };
                total += wgt * 0.5 * panel * density * 2.0 * t * inside;
            }
        }
        total.clamp(0.0, 1.0)
    }
}

/// Root of Φ(r − u) − Φ(−r − u) = φ₀ in u ≥ 0, for r ≥ r*.
fn solve_u(r: f64, phi0: f64) -> f64 {
    let g = |u: f64| normal_cdf(r - u) - normal_cdf(-r - u) - phi0;
    if g(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, r + 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{phi_normal_unchecked, posterior_phi_tail_mc, NormalSuffStats};
    use crate::numeric::RandomStream;

    fn limits() -> SpecLimits {
        SpecLimits::new(2.0, 5.0).unwrap()
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..32u32 {
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-13, "deg {deg}");
        }
    }

    #[test]
    fn half_width_solves_phi_equation() {
        let l = limits();
        let qt = QuadratureTail::new(&l, 0.8).unwrap();
        for &sigma in &[0.2, 0.5, 1.0, 1.15, 1.17] {
            let r = l.half_width() / sigma;
            let u = qt.u_of_r(r);
            let phi = phi_normal_unchecked(l.midpoint() + u * sigma, sigma, &l);
            assert!((phi - 0.8).abs() < 1e-6, "sigma {sigma}: phi {phi}");
        }
    }

    /// Sweep ln σ² below the onset ln σ*² (found by bisection on φ at the
    /// midpoint) with ln σ² = L* − t², midpoint rule in t; at each σ locate
    /// the μ-interval by bisection on φ itself and integrate the normal
    /// density over it.
    fn tail_oracle(h: &NigHyper, l: &SpecLimits, phi0: f64) -> f64 {
        let c = l.midpoint();
        let (mut s_lo, mut s_hi) = (1e-6, 100.0);
        for _ in 0..200 {
            let m = 0.5 * (s_lo + s_hi);
            if phi_normal_unchecked(c, m, l) > phi0 {
                s_lo = m;
            } else {
                s_hi = m;
            }
        }
        let l_star = 2.0 * (0.5 * (s_lo + s_hi)).ln();
        let t_max = (l_star + 14.0).max(0.0).sqrt();
        let steps = 20_000;
        let d = t_max / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) * d;
            let ls2 = l_star - t * t;
            let s2 = ls2.exp();
            // IG(a, b) density in ln σ²
            let dens = (h.a * h.b.ln() - ln_gamma(h.a) - h.a * ls2 - h.b / s2).exp();
            if dens < 1e-300 {
                continue;
            }
            let sigma = s2.sqrt();
            let (mut a, mut b) = (0.0, 10.0 * sigma + l.half_width());
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if phi_normal_unchecked(c + m, sigma, l) > phi0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let half = 0.5 * (a + b);
            let s = sigma / h.nu.sqrt();
            let p = normal_cdf((c + half - h.m) / s) - normal_cdf((c - half - h.m) / s);
            total += dens * p * 2.0 * t * d;
        }
        total
    }

    fn cases() -> Vec<NigHyper> {
        let benign = NigHyper::new(3.5, 1.0, 1.0, 1.0).unwrap();
        let mut out = vec![benign, NigHyper::new(0.0, 1.0, 1.0, 1.0).unwrap()];
        for &(n, mean, var) in &[
            (10usize, 3.5, 1.37),
            (20, 3.6, 0.8),
            (50, 3.4, 1.2),
            (100, 3.5, 1.37),
            (100, 3.3, 0.9),
            (179, 3.5, 0.5),
            (30, 4.2, 0.3),
            (60, 3.5, 1.6),
        ] {
            out.push(benign.update(&NormalSuffStats::from_parts(n, mean, n as f64 * var)));
        }
        out
    }

    #[test]
    fn agrees_with_sigma_sweep_oracle() {
        let l = limits();
        for &phi0 in &[0.8, 0.6, 0.95] {
            let qt = QuadratureTail::new(&l, phi0).unwrap();
            for h in cases() {
                let got = qt.tail(&h);
                let want = tail_oracle(&h, &l, phi0);
                assert!((got - want).abs() < 1e-6, "phi0 {phi0} {h:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn agrees_with_monte_carlo() {
        let l = limits();
        let qt = QuadratureTail::new(&l, 0.8).unwrap();
        for (i, h) in cases().into_iter().enumerate() {
            let mut rng = RandomStream::new(21).child("case", i as u64).rng();
            let mc = posterior_phi_tail_mc(&h, &l, 0.8, &mut rng, 200_000).unwrap();
            let q = qt.tail(&h);
            assert!((q - mc.value).abs() <= 4.0 * mc.std_error.max(1e-5), "{h:?}: {q} vs {}", mc.value);
        }
    }

    #[test]
    fn benign_prior_tail() {
        let qt = QuadratureTail::new(&limits(), 0.8).unwrap();
        let t = qt.tail(&NigHyper::new(3.5, 1.0, 1.0, 1.0).unwrap());
        assert!((t - 0.29).abs() < 0.02, "{t}");
    }

    #[test]
    fn rejects_degenerate_threshold() {
        assert!(QuadratureTail::new(&limits(), 0.0).is_err());
        assert!(QuadratureTail::new(&limits(), 1.0).is_err());
    }
}

//! Gaussian special functions and Gauss–Legendre quadrature.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::LazyLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest |ρ| handed to the bivariate CDF.
pub const RHO_CLAMP: f64 = 1.0 - 1e-12;

/// Floor applied to log orthant probabilities.
pub const LOG_PROB_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

// Below this argument log Φ and the inverse Mills ratio switch to the
// continued-fraction form of Mills' ratio.
const MILLS_CF_CUTOFF: f64 = -8.0;
const MILLS_CF_TERMS: usize = 80;

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF Φ(x).
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills' ratio `Φ(-x) / φ(x)` for large positive `x`, by continued fraction.
fn mills_ratio_cf(x: f64) -> f64 {
    let mut t = x;
    for k in (1..=MILLS_CF_TERMS).rev() {
        t = x + k as f64 / t;
    }
    1.0 / t
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        (-std_normal_cdf(-x)).ln_1p()
    } else if x > MILLS_CF_CUTOFF {
        std_normal_cdf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_cf(-x).ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn inverse_mills(x: f64) -> f64 {
    if x > MILLS_CF_CUTOFF {
        std_normal_pdf(x) / std_normal_cdf(x)
    } else {
        1.0 / mills_ratio_cf(-x)
    }
}

/// Standard normal quantile Φ⁻¹(p).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "quantile probability {p} outside (0,1)"
        )));
    }
    if p > 0.5 {
        return std_normal_quantile(1.0 - p).map(|x| -x);
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step polishes the rational approximation
    let pdf = std_normal_pdf(x);
    if pdf > 0.0 {
        x -= (std_normal_cdf(x) - p) / pdf;
    }
    Ok(x)
}

/// Density of the standard bivariate normal with correlation `rho`.
pub fn bivariate_normal_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = (1.0 - rho) * (1.0 + rho);
    let q = (x * x - 2.0 * rho * x * y + y * y) / one_m;
    (-0.5 * q).exp() / (2.0 * PI * one_m.sqrt())
}

/// `P(Z₁ ≤ h, Z₂ ≤ k)` for a standard bivariate normal with correlation `rho`.
///
/// `rho` is clamped to `±(1 - 1e-12)`; values with `|rho| >= 1` (or NaN) are
/// rejected.
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(format!("correlation {rho} outside (-1,1)")));
    }
    if !h.is_finite() || !k.is_finite() {
        return Err(Error::domain("bivariate CDF limits must be finite"));
    }
    Ok(bvn_lower(h, k, rho.clamp(-RHO_CLAMP, RHO_CLAMP)))
}

struct GenzRules {
    low: QuadratureRule,
    mid: QuadratureRule,
    high: QuadratureRule,
}

static GENZ_RULES: LazyLock<GenzRules> = LazyLock::new(|| GenzRules {
    low: gauss_legendre_rule(6, -1.0, 1.0).expect("valid rule"),
    mid: gauss_legendre_rule(12, -1.0, 1.0).expect("valid rule"),
    high: gauss_legendre_rule(20, -1.0, 1.0).expect("valid rule"),
});

/// Unchecked lower-orthant bivariate normal probability.
///
/// Drezner–Wesolowsky reduction to a single integral over the correlation,
/// evaluated with 6/12/20-point Gauss–Legendre rules as in Genz's BVND; for
/// `|rho| >= 0.925` the integral is taken over the conditional variance
/// instead, with the singular part removed analytically.
pub(crate) fn bvn_lower(h: f64, k: f64, rho: f64) -> f64 {
    // fixed argument order makes the result exactly symmetric
    let (h, k) = if h <= k { (h, k) } else { (k, h) };
    bvn_upper(-h, -k, rho)
}

fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let rules = &*GENZ_RULES;
    let rule = if r.abs() < 0.3 {
        &rules.low
    } else if r.abs() < 0.75 {
        &rules.mid
    } else {
        &rules.high
    };
    let two_pi = 2.0 * PI;
    let mut hk = h * k;
    let mut bvn = 0.0;
    let value = if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let sn = (0.5 * asr * (1.0 + x)).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        // the rule covers [-1, 1]; the integral is over half of it
        bvn * asr / (2.0 * two_pi) + std_normal_cdf(-h) * std_normal_cdf(-k)
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a2 = (1.0 - r) * (1.0 + r);
            let mut a = a2.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -0.5 * (bs / a2 + hk);
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = two_pi.sqrt() * std_normal_cdf(-b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a *= 0.5;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let xs = (a * (x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (bs / xs + hk);
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + d * xs);
                    let ep = (-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs;
                    bvn += a * w * asr.exp() * (ep - sp);
                }
            }
            bvn = -bvn / two_pi;
        }
        if r > 0.0 {
            bvn + std_normal_cdf(-h.max(k))
        } else if h >= k {
            -bvn
        } else {
            let l = if h < 0.0 {
                std_normal_cdf(k) - std_normal_cdf(h)
            } else {
                std_normal_cdf(-h) - std_normal_cdf(-k)
            };
            l - bvn
        }
    };
    value.clamp(0.0, 1.0)
}

/// Sign of a transformed binary outcome, `r = 2y - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    #[inline]
    pub fn from_outcome(y: u8) -> Self {
        if y == 1 {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }
}

/// `ln P(r₁ Z₁ ≤ r₁ μ₁, r₂ Z₂ ≤ r₂ μ₂)`-style orthant kernel for a bivariate
/// normal with means `(mu1, mu2)`, variances `(v1, v2)` and covariance `cov`,
/// written as `ln Φ₂(r₁μ₁/√v₁, r₂μ₂/√v₂; r₁r₂·cov/√(v₁v₂))`.
///
/// The result is floored at `ln(1e-300)`.
pub fn scaled_bivariate_log_orthant(
    mu1: f64,
    mu2: f64,
    v1: f64,
    v2: f64,
    cov: f64,
    r1: Sign,
    r2: Sign,
) -> Result<f64> {
    if !(v1 > 0.0 && v2 > 0.0) || !v1.is_finite() || !v2.is_finite() {
        return Err(Error::domain(format!("degenerate variances ({v1}, {v2})")));
    }
    let sd = (v1 * v2).sqrt();
    if !(cov.abs() < sd) {
        return Err(Error::domain(format!(
            "covariance {cov} not admissible for variances ({v1}, {v2})"
        )));
    }
    if !mu1.is_finite() || !mu2.is_finite() {
        return Err(Error::domain("orthant means must be finite"));
    }
    let (s1, s2) = (r1.value(), r2.value());
    let rho = (s1 * s2 * cov / sd).clamp(-RHO_CLAMP, RHO_CLAMP);
    Ok(log_orthant(s1 * mu1 / v1.sqrt(), s2 * mu2 / v2.sqrt(), rho))
}

/// Floored `ln Φ₂(a, b; rho)` without argument checks.
#[inline]
pub(crate) fn log_orthant(a: f64, b: f64, rho: f64) -> f64 {
    let p = bvn_lower(a, b, rho);
    if p > 1e-300 {
        p.ln()
    } else {
        LOG_PROB_FLOOR
    }
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Maps the rule affinely onto `[a, b]`.
    pub fn rescaled(&self, a: f64, b: f64) -> Result<QuadratureRule> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::domain(format!("invalid interval [{a}, {b}]")));
        }
        let scale = (b - a) / (self.b - self.a);
        Ok(QuadratureRule {
            nodes: self
                .nodes
                .iter()
                .map(|&x| a + (x - self.a) * scale)
                .collect(),
            weights: self.weights.iter().map(|&w| w * scale).collect(),
            a,
            b,
        })
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Builds the `m`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre_rule(m: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if m < 2 {
        return Err(Error::domain(format!("quadrature order {m} < 2")));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("invalid interval [{a}, {b}]")));
    }
    let half = m.div_ceil(2);
    let mut pos = Vec::with_capacity(half);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d.is_finite() {
            dp = d;
        }
        pos.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for &(x, w) in &pos {
        if x.abs() < 1e-15 {
            pairs.push((0.0, w));
        } else {
            pairs.push((x, w));
            pairs.push((-x, w));
        }
    }
    pairs.sort_by(|l, r| l.0.total_cmp(&r.0));
    debug_assert_eq!(pairs.len(), m);
    let half_len = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|&(x, _)| mid + half_len * x).collect(),
        weights: pairs.iter().map(|&(_, w)| half_len * w).collect(),
        a,
        b,
    })
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=m {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Maclaurin series for erf, summed in f64; accurate to ~1e-16 for |x| < 2.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(40.0) - 1.0).abs() <= 1e-15);
        let x = 1.959963985;
        let oracle = 0.5 * (1.0 + erf_series(x / SQRT_2));
        assert!((std_normal_cdf(x) - oracle).abs() < 1e-14);
        assert!((std_normal_cdf(x) - 0.975).abs() < 1e-9);
        for &x in &[-1.7, -0.3, 0.1, 0.8, 1.3, 2.4] {
            let oracle = 0.5 * (1.0 + erf_series(x / SQRT_2));
            assert!((std_normal_cdf(x) - oracle).abs() < 1e-15, "x={x}");
        }
    }

    #[test]
    fn quantile_values_and_domain() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let q = std_normal_quantile(0.975).unwrap();
        // bisection oracle on the CDF
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < 0.975 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((q - 0.5 * (lo + hi)).abs() < 1e-12);
        assert!((q - 1.959963985).abs() < 1e-8);
        assert!((std_normal_quantile(0.025).unwrap() + q).abs() < 1e-14);
        for bad in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(std_normal_quantile(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn log_cdf_and_mills_agree_across_cutoff() {
        for &x in &[-7.9, -8.0, -8.1, -9.0, -12.0, -20.0] {
            let direct = std_normal_cdf(x).ln();
            assert!((log_std_normal_cdf(x) - direct).abs() < 1e-12, "x={x}");
            let mills = std_normal_pdf(x) / std_normal_cdf(x);
            assert!((inverse_mills(x) - mills).abs() / mills < 1e-12, "x={x}");
        }
        assert!(log_std_normal_cdf(-60.0).is_finite());
        assert!((log_std_normal_cdf(10.0) + std_normal_cdf(-10.0)).abs() < 1e-30);
        // λ(x) ~ -x in the far lower tail
        assert!((inverse_mills(-200.0) / 200.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bivariate_closed_forms() {
        assert!((bivariate_normal_cdf(0.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((bivariate_normal_cdf(0.0, 0.0, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        for i in -99..=99 {
            let rho = i as f64 / 100.0;
            let expected = 0.25 + rho.asin() / (2.0 * PI);
            let got = bivariate_normal_cdf(0.0, 0.0, rho).unwrap();
            assert!((got - expected).abs() < 1e-9, "rho={rho}");
        }
        assert!(matches!(
            bivariate_normal_cdf(0.0, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            bivariate_normal_cdf(0.0, 0.0, -1.2),
            Err(Error::Domain(_))
        ));
        assert!(bivariate_normal_cdf(0.3, 0.1, 1.0 - 1e-13).is_ok());
    }

    #[test]
    fn bivariate_against_conditional_integral() {
        // (1.2, -0.3, 0.85) against the adaptive reference integral
        let got = bivariate_normal_cdf(1.2, -0.3, 0.85).unwrap();
        let oracle = crate::oracle::bivariate_cdf_reference(1.2, -0.3, 0.85, 1e-12).unwrap();
        assert!((got - oracle).abs() < 5e-8, "{got} vs {oracle}");
    }

    #[test]
    fn log_orthant_examples() {
        let v =
            scaled_bivariate_log_orthant(0.0, 0.0, 1.0, 1.0, 0.0, Sign::Pos, Sign::Pos).unwrap();
        assert!((v - 0.25f64.ln()).abs() < 1e-14);
        let v =
            scaled_bivariate_log_orthant(0.0, 0.0, 1.0, 1.0, 0.5, Sign::Pos, Sign::Neg).unwrap();
        assert!((v - (1.0f64 / 6.0).ln()).abs() < 1e-12);

        let (mu1, mu2, v1, v2, cov) = (0.7, -0.4, 1.1, 1.3, 0.6);
        let v = scaled_bivariate_log_orthant(mu1, mu2, v1, v2, cov, Sign::Pos, Sign::Pos).unwrap();
        let oracle = crate::oracle::bivariate_cdf_reference(
            mu1 / v1.sqrt(),
            mu2 / v2.sqrt(),
            cov / (v1 * v2).sqrt(),
            1e-12,
        )
        .unwrap();
        assert!((v - oracle.ln()).abs() < 1e-9);

        assert!(
            scaled_bivariate_log_orthant(0.0, 0.0, 0.0, 1.0, 0.0, Sign::Pos, Sign::Pos).is_err()
        );
        assert!(
            scaled_bivariate_log_orthant(0.0, 0.0, 1.0, 1.0, 1.0, Sign::Pos, Sign::Pos).is_err()
        );
        let far = scaled_bivariate_log_orthant(-60.0, -60.0, 1.0, 1.0, 0.0, Sign::Pos, Sign::Pos)
            .unwrap();
        assert_eq!(far, LOG_PROB_FLOOR);
    }

    #[test]
    fn gauss_legendre_examples() {
        let r = gauss_legendre_rule(2, -1.0, 1.0).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0] + s).abs() < 1e-15 && (r.nodes[1] - s).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15 && (r.weights[1] - 1.0).abs() < 1e-15);

        let r = gauss_legendre_rule(3, -1.0, 1.0).unwrap();
        assert!((r.integrate(|x| x.powi(4)) - 0.4).abs() < 1e-15);

        let (a, b) = (-1.0 + 1e-6, 1.0 - 1e-6);
        let r = gauss_legendre_rule(25, a, b).unwrap();
        let anti = |x: f64| x - x * x * x / 3.0;
        let exact = anti(b) - anti(a);
        assert!((r.integrate(|x| 1.0 - x * x) - exact).abs() < 1e-14);

        assert!(gauss_legendre_rule(1, 0.0, 1.0).is_err());
        assert!(gauss_legendre_rule(5, 1.0, 1.0).is_err());
    }

    #[test]
    fn gauss_legendre_rule_invariants() {
        for &m in &[2usize, 3, 6, 7, 12, 20, 25, 50, 101, 200] {
            let (a, b) = (-0.7, 2.3);
            let r = gauss_legendre_rule(m, a, b).unwrap();
            assert_eq!(r.order(), m);
            assert_eq!(r.weights.len(), m);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes.iter().all(|&x| x > a && x < b));
            assert!(r.weights.iter().all(|&w| w > 0.0));
            let total: f64 = r.weights.iter().sum();
            assert!((total - (b - a)).abs() / (b - a) < 1e-12, "m={m}");
            // exactness up to degree 2m-1 (checked up to degree 15)
            for deg in 0..(2 * m).min(16) {
                let exact = (b.powi(deg as i32 + 1) - a.powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                let got = r.integrate(|x| x.powi(deg as i32));
                assert!(
                    (got - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                    "m={m} deg={deg}"
                );
            }
        }
    }

    #[test]
    fn quadrature_error_decreases_with_order() {
        let f = |x: f64| (3.0 * x).sin() * (-x * x).exp() + 1.0 / (1.2 + x);
        let (a, b) = (-1.0, 1.0);
        let n = 100_000;
        let h = (b - a) / n as f64;
        let mut trap = 0.5 * (f(a) + f(b));
        for i in 1..n {
            trap += f(a + i as f64 * h);
        }
        trap *= h;
        let errs: Vec<f64> = [5, 10, 25, 50]
            .iter()
            .map(|&m| (gauss_legendre_rule(m, a, b).unwrap().integrate(f) - trap).abs())
            .collect();
        // the trapezoid oracle itself is only good to ~1e-10
        assert!(
            errs[0] > errs[1] && errs[1] > errs[2].max(1e-10) * 0.999,
            "{errs:?}"
        );
        assert!(errs[3] < 1e-9);
    }

    proptest! {
        #[test]
        fn cdf_symmetry(x in -40.0f64..40.0) {
            prop_assert!((std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn quantile_round_trip(p in 1e-12f64..(1.0 - 1e-12)) {
            let x = std_normal_quantile(p).unwrap();
            prop_assert!((std_normal_cdf(x) - p).abs() < 1e-12);
        }

        #[test]
        fn orthant_identity(h in -6.0f64..6.0, k in -6.0f64..6.0, rho in -0.999f64..0.999) {
            let lhs = bvn_lower(h, k, rho) + bvn_lower(h, -k, -rho);
            prop_assert!((lhs - std_normal_cdf(h)).abs() < 1e-7);
        }

        #[test]
        fn bivariate_symmetric_and_factorizes(h in -6.0f64..6.0, k in -6.0f64..6.0, rho in -0.999f64..0.999) {
            prop_assert!((bvn_lower(h, k, rho) - bvn_lower(k, h, rho)).abs() < 1e-14);
            prop_assert!((bvn_lower(h, k, 0.0) - std_normal_cdf(h) * std_normal_cdf(k)).abs() < 1e-15);
        }

        #[test]
        fn bivariate_monotone(h in -5.0f64..5.0, k in -5.0f64..5.0, rho in -0.99f64..0.98, step in 1e-3f64..0.5) {
            let base = bvn_lower(h, k, rho);
            prop_assert!(bvn_lower(h + step, k, rho) >= base - 1e-15);
            prop_assert!(bvn_lower(h, k + step, rho) >= base - 1e-15);
            prop_assert!(bvn_lower(h, k, (rho + step).min(0.999)) >= base - 1e-15);
        }
    }
}

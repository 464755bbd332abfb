//! Closed-form value functions used as reference solutions.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("parameter out of range: {0}")]
    Domain(String),
    #[error("maximisation did not converge: {0}")]
    NoConvergence(String),
}

fn require(ok: bool, msg: impl FnOnce() -> String) -> Result<(), AnalyticError> {
    if ok {
        Ok(())
    } else {
        Err(AnalyticError::Domain(msg()))
    }
}

/// A reference solution that can be tabulated next to a solver output.
pub trait Oracle {
    fn value(&self, x: f64) -> f64;
    fn payoff(&self, x: f64) -> f64;
    fn psi(&self, x: f64) -> f64;

    fn values_on(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.value(x)).collect()
    }
}

/// Roots of `(sigma^2/2) a (a - 1) + mu a - zeta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootPair {
    pub minus: f64,
    pub plus: f64,
    pub sigma: f64,
    pub mu: f64,
    pub zeta: f64,
}

impl RootPair {
    /// The quadratic evaluated at `a`.
    pub fn quadratic(&self, a: f64) -> f64 {
        0.5 * self.sigma * self.sigma * a * (a - 1.0) + self.mu * a - self.zeta
    }
}

pub fn q_roots(sigma: f64, mu: f64, zeta: f64) -> Result<RootPair, AnalyticError> {
    require(sigma > 0.0 && sigma.is_finite(), || format!("sigma = {sigma} must be positive"))?;
    require(zeta > 0.0 && zeta.is_finite(), || format!("zeta = {zeta} must be positive"))?;
    require(mu.is_finite(), || format!("mu = {mu} must be finite"))?;
    let a = 0.5 * sigma * sigma;
    let b = mu - a;
    let c = -zeta;
    let disc = (b * b - 4.0 * a * c).sqrt();
    // pick the sign that avoids cancellation, then use the product of roots
    let q = -0.5 * (b + b.signum() * disc);
    let q = if q == 0.0 { -0.5 * disc } else { q };
    let (r1, r2) = (q / a, c / q);
    Ok(RootPair {
        minus: r1.min(r2),
        plus: r1.max(r2),
        sigma,
        mu,
        zeta,
    })
}

/// Call payoff on exponential Brownian motion with constant event rate.
///
/// Above the threshold the value is `B (x/L)^{a-} + rho x - kappa K` with
/// `rho = lambda/(beta+lambda-mu)` and `kappa = lambda/(beta+lambda)`; the
/// threshold follows from value matching and smooth fit at `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwSolution {
    pub strike: f64,
    pub sigma: f64,
    pub mu: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Exercise threshold `L`.
    pub threshold: f64,
    /// Threshold of the unconstrained problem, the limit of `L` as the rate grows.
    pub limit_threshold: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub rho: f64,
    pub kappa: f64,
    /// Coefficient `B` of the decaying power above `L`.
    pub above_coef: f64,
}

pub fn dw_solution(strike: f64, sigma: f64, mu: f64, beta: f64, lambda: f64) -> Result<DwSolution, AnalyticError> {
    require(strike > 0.0, || format!("strike = {strike} must be positive"))?;
    require(beta > 0.0, || format!("beta = {beta} must be positive"))?;
    require(lambda > 0.0 && lambda.is_finite(), || format!("lambda = {lambda} must be positive"))?;
    require(mu < beta, || format!("drift mu = {mu} must be below beta = {beta}"))?;
    let ap = q_roots(sigma, mu, beta)?.plus;
    let am = q_roots(sigma, mu, beta + lambda)?.minus;
    let rho = lambda / (beta + lambda - mu);
    let kappa = lambda / (beta + lambda);
    let l = strike * (ap - am * (1.0 - kappa)) / (ap - am * (1.0 - rho) - rho);
    let m = strike * ap / (ap - 1.0);
    let above = l - strike - rho * l + kappa * strike;
    Ok(DwSolution {
        strike,
        sigma,
        mu,
        beta,
        lambda,
        threshold: l,
        limit_threshold: m,
        alpha_plus: ap,
        alpha_minus: am,
        rho,
        kappa,
        above_coef: above,
    })
}

impl DwSolution {
    pub fn below(&self, x: f64) -> f64 {
        (self.threshold - self.strike) * (x / self.threshold).powf(self.alpha_plus)
    }

    pub fn above(&self, x: f64) -> f64 {
        self.above_coef * (x / self.threshold).powf(self.alpha_minus) + self.rho * x - self.kappa * self.strike
    }

    /// The unconstrained value `w`.
    pub fn american(&self, x: f64) -> f64 {
        let m = self.limit_threshold;
        if x <= m {
            (m - self.strike) * (x / m).powf(self.alpha_plus)
        } else {
            x - self.strike
        }
    }
}

impl Oracle for DwSolution {
    fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x <= self.threshold {
            self.below(x)
        } else {
            self.above(x)
        }
    }

    fn payoff(&self, x: f64) -> f64 {
        (x - self.strike).max(0.0)
    }

    fn psi(&self, x: f64) -> f64 {
        self.kappa * self.payoff(x)
    }
}

pub fn dw_value(sol: &DwSolution, x: f64) -> f64 {
    sol.value(x)
}

/// Perpetual American call value `w` on exponential Brownian motion.
pub fn american_value(strike: f64, sigma: f64, mu: f64, beta: f64, x: f64) -> Result<f64, AnalyticError> {
    require(mu < beta, || format!("drift mu = {mu} must be below beta = {beta}"))?;
    require(strike > 0.0, || format!("strike = {strike} must be positive"))?;
    let ap = q_roots(sigma, mu, beta)?.plus;
    let m = strike * ap / (ap - 1.0);
    Ok(if x <= m { (m - strike) * (x / m).powf(ap) } else { x - strike })
}

/// Value `rho x` of stopping at the first event with a linear payoff.
pub fn linear_payoff_value(x: f64, mu: f64, beta: f64, lambda: f64) -> Result<f64, AnalyticError> {
    require(mu < beta, || format!("drift mu = {mu} must be below beta = {beta}"))?;
    require(lambda >= 0.0, || format!("lambda = {lambda} must be non-negative"))?;
    Ok(lambda / (lambda + beta - mu) * x)
}

/// Linear payoff with an infinite rate below `J` and zero rate above it.
pub fn barrier_rate_value(x: f64, barrier: f64, sigma: f64, mu: f64, beta: f64) -> Result<f64, AnalyticError> {
    require(barrier > 0.0, || format!("barrier J = {barrier} must be positive"))?;
    let am = q_roots(sigma, mu, beta)?.minus;
    Ok(if x <= barrier { x } else { barrier * (x / barrier).powf(am) })
}

/// Unit-drift Brownian motion absorbed at zero with payoff `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinhSolution {
    pub beta: f64,
    /// Free boundary `y`.
    pub boundary: f64,
}

fn ln_sinh(u: f64) -> f64 {
    if u > 20.0 {
        u + (-(-2.0 * u).exp()).ln_1p() - std::f64::consts::LN_2
    } else {
        u.sinh().ln()
    }
}

pub fn sinh_drift_solution(beta: f64) -> Result<SinhSolution, AnalyticError> {
    require(beta > 0.0, || format!("beta = {beta} must be positive"))?;
    let k = (1.0 + 2.0 * beta).sqrt();
    let objective = |z: f64| z.ln() + z - ln_sinh(z * k);
    // coarse scan of (0, 50]
    let n = 5000;
    let zs: Vec<f64> = (1..=n).map(|i| 50.0 * i as f64 / n as f64).collect();
    let (best, _) = zs
        .iter()
        .enumerate()
        .map(|(i, &z)| (i, objective(z)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if best == 0 || best == n - 1 {
        return Err(AnalyticError::NoConvergence(format!("maximum at the edge of (0, 50], z = {}", zs[best])));
    }
    let (mut a, mut b) = (zs[best - 1], zs[best + 1]);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    // function values are flat at the optimum; finish on the stationarity condition
    let slope = |z: f64| 1.0 / z + 1.0 - k / (z * k).tanh();
    let (mut lo, mut hi) = (a - 1e-6, b + 1e-6);
    if !(slope(lo) > 0.0 && slope(hi) < 0.0) {
        return Err(AnalyticError::NoConvergence("stationary point not bracketed".into()));
    }
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SinhSolution {
        beta,
        boundary: 0.5 * (lo + hi),
    })
}

impl Oracle for SinhSolution {
    fn value(&self, x: f64) -> f64 {
        let y = self.boundary;
        if x <= 0.0 {
            0.0
        } else if x >= y {
            x
        } else {
            let k = (1.0 + 2.0 * self.beta).sqrt();
            y * (y - x + ln_sinh(x * k) - ln_sinh(y * k)).exp()
        }
    }

    fn payoff(&self, x: f64) -> f64 {
        x.max(0.0)
    }

    /// Payoff, the effective payoff of the unconstrained problem.
    fn psi(&self, x: f64) -> f64 {
        self.payoff(x)
    }
}

pub fn sinh_drift_value(x: f64, beta: f64) -> Result<(f64, f64), AnalyticError> {
    let sol = sinh_drift_solution(beta)?;
    Ok((sol.value(x), sol.boundary))
}

/// Piecewise-linear payoff `h_phi` on Brownian motion and the first-arrival value
/// `H_phi` at rate `lambda`, scaled by `(beta + lambda)/lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalTimeExample {
    pub phi: f64,
    pub lambda: f64,
    pub xi: f64,
}

impl LocalTimeExample {
    pub fn new(phi: f64, lambda: f64) -> Result<Self, AnalyticError> {
        require(lambda > 0.0, || format!("lambda = {lambda} must be positive"))?;
        require(phi >= 0.0, || format!("phi = {phi} must be non-negative"))?;
        Ok(LocalTimeExample {
            phi,
            lambda,
            xi: (2.0 * lambda).sqrt(),
        })
    }

    pub fn h(&self, x: f64) -> f64 {
        x.abs() + self.phi * (0.5 * ((1.0 - x).abs() + (1.0 + x).abs()) - x.abs())
    }

    pub fn big_h(&self, x: f64) -> f64 {
        let (phi, xi) = (self.phi, self.xi);
        self.h(x)
            + 0.5 * phi * (-xi * (1.0 - x).abs()).exp() / xi
            + 0.5 * phi * (-xi * (1.0 + x).abs()).exp() / xi
            + (1.0 - phi) * (-xi * x.abs()).exp() / xi
    }

    /// Largest `phi` for which `H_phi` is convex.
    pub fn threshold(&self) -> f64 {
        phi_star(self.lambda)
    }
}

impl Oracle for LocalTimeExample {
    fn value(&self, x: f64) -> f64 {
        self.big_h(x)
    }

    fn payoff(&self, x: f64) -> f64 {
        self.h(x)
    }

    fn psi(&self, x: f64) -> f64 {
        self.h(x)
    }
}

pub fn phi_star(lambda: f64) -> f64 {
    let xi = (2.0 * lambda).sqrt();
    -1.0 / (-xi).exp_m1()
}

pub fn local_time_value(x: f64, phi: f64, lambda: f64) -> Result<(f64, f64, f64), AnalyticError> {
    let ex = LocalTimeExample::new(phi, lambda)?;
    Ok((ex.h(x), ex.big_h(x), ex.threshold()))
}

/// Brownian motion absorbed at zero, payoff the indicator of zero and rate `x^{-2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonEquality {
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonEqualityValues {
    /// Limit of value iteration.
    pub iterated: f64,
    /// Value function.
    pub value: f64,
    /// Unconstrained value.
    pub unconstrained: f64,
}

impl NonEquality {
    pub fn at(&self, x: f64) -> NonEqualityValues {
        let w = (-(2.0 * self.beta).sqrt() * x).exp();
        let k = 1.0 / (1.0 + self.beta);
        NonEqualityValues {
            iterated: if x == 0.0 { k } else { 0.0 },
            value: k * w,
            unconstrained: w,
        }
    }
}

impl Oracle for NonEquality {
    fn value(&self, x: f64) -> f64 {
        self.at(x).value
    }

    fn payoff(&self, x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn psi(&self, x: f64) -> f64 {
        if x == 0.0 {
            1.0 / (1.0 + self.beta)
        } else {
            0.0
        }
    }
}

pub fn nonequality_values(x: f64, beta: f64) -> Result<NonEqualityValues, AnalyticError> {
    require(beta > 0.0, || format!("beta = {beta} must be positive"))?;
    require(x >= 0.0, || format!("x = {x} must be non-negative"))?;
    Ok(NonEquality { beta }.at(x))
}

/// Linear payoff `x` on exponential Brownian motion at constant rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearPayoff {
    pub mu: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Oracle for LinearPayoff {
    fn value(&self, x: f64) -> f64 {
        self.lambda / (self.lambda + self.beta - self.mu) * x
    }

    fn payoff(&self, x: f64) -> f64 {
        x
    }

    fn psi(&self, x: f64) -> f64 {
        self.lambda / (self.beta + self.lambda) * x
    }
}

/// Linear payoff with the barrier rate: infinite up to `J`, zero above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierRate {
    pub barrier: f64,
    pub sigma: f64,
    pub mu: f64,
    pub beta: f64,
}

impl Oracle for BarrierRate {
    fn value(&self, x: f64) -> f64 {
        barrier_rate_value(x, self.barrier, self.sigma, self.mu, self.beta).unwrap_or(f64::NAN)
    }

    fn payoff(&self, x: f64) -> f64 {
        x
    }

    fn psi(&self, x: f64) -> f64 {
        if x <= self.barrier {
            x
        } else {
            0.0
        }
    }
}

/// Perpetual American call as an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmericanCall {
    pub strike: f64,
    pub sigma: f64,
    pub mu: f64,
    pub beta: f64,
}

impl Oracle for AmericanCall {
    fn value(&self, x: f64) -> f64 {
        american_value(self.strike, self.sigma, self.mu, self.beta, x).unwrap_or(f64::NAN)
    }

    fn payoff(&self, x: f64) -> f64 {
        (x - self.strike).max(0.0)
    }

    fn psi(&self, x: f64) -> f64 {
        self.payoff(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorable_roots() {
        let r = q_roots(2f64.sqrt(), 0.0, 2.0).unwrap();
        assert!((r.minus + 1.0).abs() < 1e-15 && (r.plus - 2.0).abs() < 1e-15);
    }

    #[test]
    fn extended_precision_roots() {
        let r = q_roots(0.2, 0.05, 0.1).unwrap();
        assert!((r.minus / -3.108_495_283_014_151 - 1.0).abs() < 1e-12);
        assert!((r.plus / 1.608_495_283_014_151 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dw_branches_meet() {
        let s = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
        let gap = (s.below(s.threshold) - s.above(s.threshold)).abs();
        assert!(gap <= 1e-12 * (s.threshold - s.strike));
        assert!((s.threshold - 2.249_098_000_310_69).abs() < 1e-12);
        assert!((s.limit_threshold - 2.643_398_113_205_66).abs() < 1e-12);
        assert!(s.threshold > s.strike && s.threshold < s.limit_threshold);
    }

    #[test]
    fn dw_reference_values() {
        let s = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
        for (x, v) in [
            (0.5, 0.111_221_146_378_869_15),
            (1.0, 0.339_150_682_366_450_34),
            (1.5, 0.651_080_449_685_287_2),
            (2.0, 1.034_184_497_234_080_7),
            (3.0, 1.949_575_437_422_841_5),
        ] {
            assert!((s.value(x) - v).abs() < 1e-12, "{x}: {}", s.value(x));
        }
    }

    #[test]
    fn dw_reduces_to_driftless_formula() {
        let (k, sig, beta, lam) = (1.0, 0.3, 0.1, 2.0);
        let s = dw_solution(k, sig, 0.0, beta, lam).unwrap();
        let ap = q_roots(sig, 0.0, beta).unwrap().plus;
        let am = q_roots(sig, 0.0, beta + lam).unwrap().minus;
        let l = k * (1.0 + lam / ((beta + lam) * ap - beta * am - lam));
        assert!((s.threshold - l).abs() < 1e-13);
        let x: f64 = 3.0;
        let v = beta / (beta + lam) * (l - k) * (x / l).powf(am) + lam * (x - k) / (beta + lam);
        assert!((s.value(x) - v).abs() < 1e-13);
    }

    #[test]
    fn linear_and_barrier() {
        assert!((linear_payoff_value(3.0, 0.0, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let v = barrier_rate_value(2.0, 1.0, 2f64.sqrt(), 0.0, 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(barrier_rate_value(0.7, 1.0, 2f64.sqrt(), 0.0, 2.0).unwrap(), 0.7);
    }

    #[test]
    fn sinh_boundary() {
        let s = sinh_drift_solution(0.5).unwrap();
        assert!((s.boundary - 2.395_522_760_136_722).abs() < 1e-10);
        assert!((s.value(1.0) - 1.265_888_798_990_208_6).abs() < 1e-10);
        assert_eq!(s.value(0.0), 0.0);
        assert_eq!(s.value(3.0), 3.0);
    }

    #[test]
    fn local_time_values() {
        let ex = LocalTimeExample::new(1.3, 2.0).unwrap();
        assert!((ex.h(0.0) - 1.3).abs() < 1e-15);
        assert_eq!(ex.h(2.5), 2.5);
        assert!((phi_star(2.0) - 1.156_517_642_749_665_7).abs() < 1e-14);
    }

    #[test]
    fn nonequality() {
        let v = nonequality_values(0.5, 1.0).unwrap();
        assert!((v.value - 0.246_534_345_697_619_9).abs() < 1e-15);
        assert_eq!(v.iterated, 0.0);
        assert_eq!(nonequality_values(0.0, 1.0).unwrap().value, 0.5);
    }
}

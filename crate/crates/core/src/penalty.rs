//! Divergence penalties `lambda * D(w, w*)` between mixture weights and the
//! uniform weight vector `w* = 1/K`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    None,
    /// `sum (w_k - 1/K)^2`
    Ridge,
    /// `sum |w_k - 1/K|`
    TotalVariation,
    /// `-sum log w_k`
    Entropy,
    /// `(1/(a-1)) log sum K^-a w_k^(1-a)`
    Renyi,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PenaltyKind::None => "none",
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::TotalVariation => "tv",
            PenaltyKind::Entropy => "entropy",
            PenaltyKind::Renyi => "renyi",
        };
        f.write_str(s)
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "ridge" => Ok(PenaltyKind::Ridge),
            "tv" => Ok(PenaltyKind::TotalVariation),
            "entropy" => Ok(PenaltyKind::Entropy),
            "renyi" => Ok(PenaltyKind::Renyi),
            other => Err(Error::Config(format!("unknown penalty {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    lambda: f64,
    alpha: Option<f64>,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, alpha: Option<f64>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("penalty strength must be finite and >= 0, got {lambda}")));
        }
        match (kind, alpha) {
            (PenaltyKind::Renyi, Some(a)) if a > 0.0 && a != 1.0 && a.is_finite() => {}
            (PenaltyKind::Renyi, a) => {
                return Err(Error::Config(format!(
                    "Renyi penalty needs an order alpha > 0, alpha != 1, got {a:?}"
                )))
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!("alpha is only used by the Renyi penalty, not {kind}")))
            }
            _ => {}
        }
        Ok(Self { kind, lambda, alpha })
    }

    pub fn none() -> Self {
        Self {
            kind: PenaltyKind::None,
            lambda: 0.0,
            alpha: None,
        }
    }

    pub fn ridge(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::Ridge, lambda, None)
    }

    pub fn total_variation(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::TotalVariation, lambda, None)
    }

    pub fn entropy(lambda: f64) -> Result<Self> {
        Self::new(PenaltyKind::Entropy, lambda, None)
    }

    pub fn renyi(lambda: f64, alpha: f64) -> Result<Self> {
        Self::new(PenaltyKind::Renyi, lambda, Some(alpha))
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// True when the penalty contributes nothing to the objective.
    pub fn is_inactive(&self) -> bool {
        self.kind == PenaltyKind::None || self.lambda == 0.0
    }

    /// Entropy and Renyi are only defined on the open simplex.
    pub fn requires_interior(&self) -> bool {
        matches!(self.kind, PenaltyKind::Entropy | PenaltyKind::Renyi)
    }
}

fn check_interior(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Domain(format!(
            "entropy-type penalties need strictly positive weights, got {w}"
        )));
    }
    Ok(())
}

/// Unscaled divergence `D(w, 1/K)`.
pub fn divergence(spec: &PenaltySpec, weights: &[f64]) -> Result<f64> {
    let k = weights.len() as f64;
    let center = 1.0 / k;
    match spec.kind {
        PenaltyKind::None => Ok(0.0),
        PenaltyKind::Ridge => Ok(weights.iter().map(|w| (w - center) * (w - center)).sum()),
        PenaltyKind::TotalVariation => Ok(weights.iter().map(|w| (w - center).abs()).sum()),
        PenaltyKind::Entropy => {
            check_interior(weights)?;
            Ok(-weights.iter().map(|w| w.ln()).sum::<f64>())
        }
        PenaltyKind::Renyi => {
            check_interior(weights)?;
            let a = spec.alpha.expect("validated at construction");
            let terms: Vec<f64> = weights.iter().map(|w| (1.0 - a) * w.ln() - a * k.ln()).collect();
            Ok(log_sum_exp(&terms) / (a - 1.0))
        }
    }
}

/// `lambda * D(w, 1/K)`.
pub fn penalty_value(spec: &PenaltySpec, weights: &[f64]) -> Result<f64> {
    if spec.kind == PenaltyKind::None {
        return Ok(0.0);
    }
    Ok(spec.lambda * divergence(spec, weights)?)
}

/// Gradient of [`penalty_value`]. Total variation uses the subgradient that
/// is zero wherever `w_k = 1/K`.
pub fn penalty_gradient(spec: &PenaltySpec, weights: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; weights.len()];
    add_penalty_gradient(spec, weights, &mut out)?;
    Ok(out)
}

pub(crate) fn add_penalty_gradient(spec: &PenaltySpec, weights: &[f64], out: &mut [f64]) -> Result<()> {
    let lambda = spec.lambda;
    let center = 1.0 / weights.len() as f64;
    match spec.kind {
        PenaltyKind::None => {}
        PenaltyKind::Ridge => {
            for (o, w) in out.iter_mut().zip(weights) {
                *o += lambda * 2.0 * (w - center);
            }
        }
        PenaltyKind::TotalVariation => {
            for (o, w) in out.iter_mut().zip(weights) {
                let d = w - center;
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *o += lambda * s;
            }
        }
        PenaltyKind::Entropy => {
            check_interior(weights)?;
            for (o, w) in out.iter_mut().zip(weights) {
                *o -= lambda / w;
            }
        }
        PenaltyKind::Renyi => {
            check_interior(weights)?;
            let a = spec.alpha.expect("validated at construction");
            // d/dw_k = -w_k^-a / sum_j w_j^(1-a), evaluated in log space
            let log_den = log_sum_exp(&weights.iter().map(|w| (1.0 - a) * w.ln()).collect::<Vec<_>>());
            for (o, w) in out.iter_mut().zip(weights) {
                *o -= lambda * (-a * w.ln() - log_den).exp();
            }
        }
    }
    Ok(())
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean and variance of each component of a symmetric Dirichlet(alpha) on
/// the K-simplex: `1/K` and `(K-1) / (alpha K^3 + K^2)`.
pub fn dirichlet_moments(k: usize, alpha: f64) -> Result<(f64, f64)> {
    if k < 2 || !(alpha > 0.0) {
        return Err(Error::Domain(format!("Dirichlet moments need K >= 2 and alpha > 0, got K={k}, alpha={alpha}")));
    }
    let k = k as f64;
    Ok((1.0 / k, (k - 1.0) / (alpha * k.powi(3) + k * k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        // flat Dirichlet via normalized exponentials
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x: f64| x / s).collect()
    }

    fn all_specs() -> Vec<PenaltySpec> {
        vec![
            PenaltySpec::ridge(1.0).unwrap(),
            PenaltySpec::total_variation(1.0).unwrap(),
            PenaltySpec::entropy(1.0).unwrap(),
            PenaltySpec::renyi(1.0, 2.0).unwrap(),
            PenaltySpec::renyi(1.0, 0.5).unwrap(),
        ]
    }

    #[test]
    fn test_spec_validation() {
        assert!(PenaltySpec::ridge(-1.0).is_err());
        assert!(PenaltySpec::renyi(1.0, 1.0).is_err());
        assert!(PenaltySpec::renyi(1.0, 0.0).is_err());
        assert!(PenaltySpec::new(PenaltyKind::Renyi, 1.0, None).is_err());
        assert!(PenaltySpec::new(PenaltyKind::Ridge, 1.0, Some(2.0)).is_err());
    }

    #[test]
    fn test_penalty_value_examples() {
        for k in 2..8 {
            let u = vec![1.0 / k as f64; k];
            assert!(penalty_value(&PenaltySpec::ridge(1.0).unwrap(), &u).unwrap().abs() < 1e-15);
        }
        let e = penalty_value(&PenaltySpec::entropy(1.0).unwrap(), &[0.5, 0.5]).unwrap();
        assert!((e - 1.386294).abs() < 1e-6);
        let tv = penalty_value(&PenaltySpec::total_variation(1.0).unwrap(), &[1.0, 0.0, 0.0]).unwrap();
        assert!((tv - 4.0 / 3.0).abs() < 1e-15);
        // Renyi divergence from uniform vanishes at uniform
        let r = penalty_value(&PenaltySpec::renyi(1.0, 2.0).unwrap(), &[0.25; 4]).unwrap();
        assert!(r.abs() < 1e-14);
    }

    #[test]
    fn test_domain_errors() {
        let w = [1.0, 0.0];
        assert!(matches!(
            penalty_value(&PenaltySpec::entropy(1.0).unwrap(), &w),
            Err(Error::Domain(_))
        ));
        assert!(penalty_gradient(&PenaltySpec::renyi(1.0, 2.0).unwrap(), &w).is_err());
        assert!(penalty_value(&PenaltySpec::ridge(1.0).unwrap(), &w).is_ok());
    }

    #[test]
    fn test_gradient_examples() {
        let g = penalty_gradient(&PenaltySpec::ridge(3.0).unwrap(), &[0.2; 5]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        let g = penalty_gradient(&PenaltySpec::entropy(1.0).unwrap(), &[0.5, 0.5]).unwrap();
        assert_eq!(g, vec![-2.0, -2.0]);
        let g = penalty_gradient(&PenaltySpec::total_variation(1.0).unwrap(), &[0.5, 0.5]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    fn central_difference(spec: &PenaltySpec, w: &[f64], k: usize) -> f64 {
        let h = 1e-6;
        let mut up = w.to_vec();
        let mut dn = w.to_vec();
        up[k] += h;
        dn[k] -= h;
        (penalty_value(spec, &up).unwrap() - penalty_value(spec, &dn).unwrap()) / (2.0 * h)
    }

    #[test]
    fn test_renyi_gradient_matches_finite_difference_at_uniform() {
        let spec = PenaltySpec::renyi(1.0, 2.0).unwrap();
        let w = [0.5, 0.5];
        let g = penalty_gradient(&spec, &w).unwrap();
        for k in 0..2 {
            let fd = central_difference(&spec, &w, k);
            assert!((g[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{} vs {}", g[k], fd);
        }
    }

    #[test]
    fn test_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let smooth = [
            PenaltySpec::ridge(2.0).unwrap(),
            PenaltySpec::entropy(0.7).unwrap(),
            PenaltySpec::renyi(1.3, 2.0).unwrap(),
            PenaltySpec::renyi(0.4, 0.5).unwrap(),
            PenaltySpec::renyi(1.0, 3.5).unwrap(),
        ];
        for _ in 0..100 {
            let k = rng.random_range(2..8);
            let w: Vec<f64> = random_simplex(&mut rng, k).iter().map(|x| 0.05 + x).collect();
            for spec in &smooth {
                let g = penalty_gradient(spec, &w).unwrap();
                for j in 0..k {
                    let fd = central_difference(spec, &w, j);
                    assert!((g[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{spec:?}: {} vs {}", g[j], fd);
                }
            }
        }
    }

    #[test]
    fn test_convexity_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let k = rng.random_range(2..10);
            let a = random_simplex(&mut rng, k);
            let b = random_simplex(&mut rng, k);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            for spec in all_specs() {
                let dm = penalty_value(&spec, &mid).unwrap();
                let da = penalty_value(&spec, &a).unwrap();
                let db = penalty_value(&spec, &b).unwrap();
                assert!(dm <= 0.5 * (da + db) + 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn test_uniform_minimizes_every_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for spec in all_specs() {
            for k in [2usize, 3, 5, 10] {
                let at_uniform = penalty_value(&spec, &vec![1.0 / k as f64; k]).unwrap();
                for _ in 0..2000 {
                    let w = random_simplex(&mut rng, k);
                    assert!(penalty_value(&spec, &w).unwrap() >= at_uniform - 1e-12, "{spec:?} K={k}");
                }
            }
        }
    }

    #[test]
    fn test_entropy_minimum_is_equal_weights() {
        // empirical-likelihood solution: -sum log w is minimized at 1/K, value K log K
        for k in 2..12 {
            let v = divergence(&PenaltySpec::entropy(1.0).unwrap(), &vec![1.0 / k as f64; k]).unwrap();
            assert!((v - k as f64 * (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn test_centering_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let k = rng.random_range(2..20);
            let w = random_simplex(&mut rng, k);
            let centered: f64 = w.iter().map(|x| (x - 1.0 / k as f64).powi(2)).sum();
            let raw: f64 = w.iter().map(|x| x * x).sum();
            assert!((centered - raw + 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn test_dirichlet_moments() {
        let (m, v) = dirichlet_moments(2, 1.0).unwrap();
        assert_eq!(m, 0.5);
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
        let (_, v0) = dirichlet_moments(20, 1e-12).unwrap();
        assert!((v0 - 0.0475).abs() < 1e-9);
        let (_, vinf) = dirichlet_moments(20, 1e12).unwrap();
        assert!(vinf < 1e-14);
        assert!(dirichlet_moments(1, 1.0).is_err());
        assert!(dirichlet_moments(3, 0.0).is_err());
    }

    #[test]
    fn test_dirichlet_variance_matches_general_formula() {
        // var = a_i/A (1 - a_i/A) / (1 + A) with A = K alpha
        for k in 2..10 {
            for alpha in [0.1, 0.5, 1.0, 2.0, 7.5] {
                let a_sum = k as f64 * alpha;
                let mean = alpha / a_sum;
                let general = mean * (1.0 - mean) / (1.0 + a_sum);
                let (m, v) = dirichlet_moments(k, alpha).unwrap();
                assert!((m - mean).abs() < 1e-15);
                assert!((v - general).abs() < 1e-15);
            }
        }
    }
}

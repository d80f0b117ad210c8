//! Closed-form hyperbolicity certificates: spectral-gap thresholds, the
//! per-time contraction factors `k_α`, `k_β`, their cocycle versions, and the
//! scalar constants of the generalized-Gronwall key lemma.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("spectral gap violated: mu_u - mu_s - eps_s - eps_u = {deficit} <= 0")]
    GapViolated { deficit: f64 },
    #[error("{name} = {value} is below its admissible threshold {threshold} (or >= 1)")]
    AlphaBelowThreshold {
        name: &'static str,
        value: f64,
        threshold: f64,
    },
    #[error("no admissible eps_hat in (0, {0}] for the key-lemma constants")]
    NoAdmissibleEpsHat(f64),
    #[error("empty rate table")]
    EmptyTable,
}

/// Constants certifying an (A)(α; α′, λu) (B)(β; β′, λs) condition for the
/// time-one correspondence; exponentiate the λ's for other times.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AbCertificate {
    pub alpha_min: f64,
    pub beta_min: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
    pub gap_sigma: f64,
    pub eps1: f64,
    pub c: f64,
}

impl AbCertificate {
    /// (A)(B) constants for the time-`t` correspondence. The sharpened
    /// `α′ = k_α α`, `β′ = k_β β` apply once `t ≥ eps1`.
    pub fn at_time(&self, t: f64) -> crate::correspond::AbConstants {
        let sharpened = t >= self.eps1;
        crate::correspond::AbConstants {
            alpha: self.alpha,
            alpha_prime: if sharpened {
                self.k_alpha * self.alpha
            } else {
                self.alpha
            },
            beta: self.beta,
            beta_prime: if sharpened {
                self.k_beta * self.beta
            } else {
                self.beta
            },
            lambda_s: self.c * self.lambda_s.powf(t),
            lambda_u: self.c * self.lambda_u.powf(t),
        }
    }
}

pub const DEFAULT_EPS1: f64 = 1.0;

fn ratio(eps: f64, h: f64) -> f64 {
    if eps == 0.0 {
        0.0
    } else {
        eps / h
    }
}

/// `k_h` for one side: `((sigma - eps/h) e^{-sigma eps1} + eps/h) / sigma`.
fn k_factor(sigma: f64, eps: f64, h: f64, eps1: f64) -> f64 {
    let rho = ratio(eps, h);
    ((sigma - rho) * (-sigma * eps1).exp() + rho) / sigma
}

/// Evaluates the spectral-gap certificate with distinguished Lipschitz
/// constants `eps_s` (coupling into the stable equation) and `eps_u`.
///
/// Thresholds are `alpha >= eps_s/(mu_u - mu_s - eps_u)`,
/// `beta >= eps_u/(mu_u - mu_s - eps_s)`; rates `lambda_u = e^{-mu_u+eps_u}`,
/// `lambda_s = e^{mu_s+eps_s}`. When `alpha`/`beta` are omitted the geometric
/// midpoint of `[threshold, 1)` is chosen.
pub fn gap_certificate(
    mu_s: f64,
    mu_u: f64,
    eps_s: f64,
    eps_u: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    eps1: f64,
) -> Result<AbCertificate, CertifyError> {
    let gap = mu_u - mu_s - eps_s - eps_u;
    if gap <= 0.0 {
        return Err(CertifyError::GapViolated { deficit: gap });
    }
    let sigma_alpha = mu_u - mu_s - eps_u;
    let sigma_beta = mu_u - mu_s - eps_s;
    let alpha_min = ratio(eps_s, sigma_alpha);
    let beta_min = ratio(eps_u, sigma_beta);

    let alpha = match alpha {
        Some(a) => {
            if a < alpha_min || a >= 1.0 {
                return Err(CertifyError::AlphaBelowThreshold {
                    name: "alpha",
                    value: a,
                    threshold: alpha_min,
                });
            }
            a
        }
        None => alpha_min.sqrt(),
    };
    let beta = match beta {
        Some(b) => {
            if b < beta_min || b >= 1.0 {
                return Err(CertifyError::AlphaBelowThreshold {
                    name: "beta",
                    value: b,
                    threshold: beta_min,
                });
            }
            b
        }
        None => beta_min.sqrt(),
    };

    Ok(AbCertificate {
        alpha_min,
        beta_min,
        alpha,
        beta,
        lambda_s: (mu_s + eps_s).exp(),
        lambda_u: (-mu_u + eps_u).exp(),
        k_alpha: k_factor(sigma_alpha, eps_s, alpha, eps1),
        k_beta: k_factor(sigma_beta, eps_u, beta, eps1),
        gap_sigma: gap,
        eps1,
        c: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CocycleMode {
    /// `eps` scaled to `2 C1 eps` before the gap formulas (the projections
    /// enter twice when the perturbation is measured in the ambient norm).
    BiSemigroup,
    /// `eps` is already the max-norm Lipschitz constant in the split
    /// coordinates; used raw.
    MaxNormCocycle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateEntry {
    pub mu_s: f64,
    pub mu_u: f64,
    pub eps: f64,
}

/// Uniform part of a cocycle certificate: constants valid for every fiber.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformSummary {
    pub holds: bool,
    /// `inf_omega (mu_u - mu_s - (1+c) eps_eff)`.
    pub min_uniform_gap: f64,
    /// index of the first entry violating the uniform clause, if any
    pub failing_index: Option<usize>,
    pub failing_clause: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k_alpha: Option<f64>,
    pub k_beta: Option<f64>,
    pub sup_lambda_product: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocycleCertificate {
    pub per_omega: Vec<AbCertificate>,
    pub uniform: UniformSummary,
}

/// Per-fiber certificates plus the uniform `(1+c)`-gap summary.
///
/// `c_gap > 1` is the slack constant of the uniform clause; when the clause
/// holds, `alpha = beta = 1/c_gap` and
/// `k = (1 - 1/c_gap) e^{-delta0 eps1} + 1/c_gap` are constants valid for
/// every fiber, and `sup lambda_s lambda_u < 1`.
pub fn cocycle_gap_certificate(
    rates: &[RateEntry],
    c1: f64,
    mode: CocycleMode,
    c_gap: f64,
    eps1: f64,
) -> Result<CocycleCertificate, CertifyError> {
    if rates.is_empty() {
        return Err(CertifyError::EmptyTable);
    }
    assert!(c_gap > 1.0, "uniform clause needs c > 1");
    let eps_eff = |e: f64| match mode {
        CocycleMode::BiSemigroup => 2.0 * c1 * e,
        CocycleMode::MaxNormCocycle => e,
    };

    let mut per_omega = Vec::with_capacity(rates.len());
    for r in rates {
        let e = eps_eff(r.eps);
        per_omega.push(gap_certificate(r.mu_s, r.mu_u, e, e, None, None, eps1)?);
    }

    let mut min_uniform_gap = f64::INFINITY;
    let mut failing_index = None;
    for (i, r) in rates.iter().enumerate() {
        let g = r.mu_u - r.mu_s - (1.0 + c_gap) * eps_eff(r.eps);
        if g < min_uniform_gap {
            min_uniform_gap = g;
        }
        if g <= 0.0 && failing_index.is_none() {
            failing_index = Some(i);
        }
    }
    let sup_lambda_product = per_omega
        .iter()
        .map(|c| c.lambda_s * c.lambda_u)
        .fold(0.0f64, f64::max);

    let uniform = if let Some(idx) = failing_index {
        UniformSummary {
            holds: false,
            min_uniform_gap,
            failing_index: Some(idx),
            failing_clause: Some(format!(
                "inf_omega(mu_u - mu_s - (1+c) eps') = {min_uniform_gap} <= 0 at entry {idx}"
            )),
            alpha: None,
            beta: None,
            k_alpha: None,
            k_beta: None,
            sup_lambda_product,
        }
    } else {
        // delta0: uniform lower bound on sigma(omega) = mu_u - mu_s - eps'
        let delta0 = rates
            .iter()
            .map(|r| r.mu_u - r.mu_s - eps_eff(r.eps))
            .fold(f64::INFINITY, f64::min);
        let a = 1.0 / c_gap;
        let r = (-delta0 * eps1).exp();
        let k = (1.0 - a) * r + a;
        UniformSummary {
            holds: true,
            min_uniform_gap,
            failing_index: None,
            failing_clause: None,
            alpha: Some(a),
            beta: Some(a),
            k_alpha: Some(k),
            k_beta: Some(k),
            sup_lambda_product,
        }
    };

    Ok(CocycleCertificate { per_omega, uniform })
}

// ---- key lemma ---------------------------------------------------------------

/// Data of the (MR)-type smoothing profile: `|(S◇f)|_{[0,t]} ≤ δ(t)|f|_{[0,t]}`
/// with `δ` increasing and `δ(t) → 0` as `t → 0`.
pub struct MrProfile {
    pub delta_fn: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub mu: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl MrProfile {
    pub fn new(
        delta_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu: f64,
        beta: f64,
        sigma: f64,
    ) -> Self {
        assert!(sigma > 0.0 && sigma <= 0.5, "sigma must lie in (0, 1/2]");
        Self {
            delta_fn: Box::new(delta_fn),
            mu,
            beta,
            sigma,
        }
    }

    /// Checks monotonicity of `δ` and `δ(t) → 0` on the standard sample grid.
    pub fn validate(&self) -> Result<(), String> {
        let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(-6.0 + 0.1 * i as f64)).collect();
        for w in grid.windows(2) {
            if (self.delta_fn)(w[0]) > (self.delta_fn)(w[1]) + 1e-14 {
                return Err(format!("delta not increasing at t = {}", w[1]));
            }
        }
        let mut prev = f64::INFINITY;
        for &t in &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let d = (self.delta_fn)(t);
            if d > prev + 1e-14 {
                return Err("delta does not decrease toward 0".into());
            }
            prev = d;
        }
        if prev > 1e-3 {
            return Err(format!("delta(1e-6) = {prev} not close to 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KeyLemConstants {
    pub lambda: f64,
    pub k: f64,
    pub eps_hat: f64,
    /// true when the Hille-Yosida branch `δ(t)/t → 1` was detected
    pub case_a: bool,
}

const EPS_HAT_WINDOW: f64 = 10.0;

/// Constants `(λ, k)` such that any admissible triple of the key lemma obeys
/// `|y(t)| ≤ e^{(μ+λ)t} k a`.
///
/// Case (a) (`δ(t)/t → 1`, detected by a ratio test at `t ≤ 1e-4`) gives
/// `(β, 1)`. Otherwise the constants come from a halving search for an
/// admissible `ε̂` with `σ > K(ε) = e^σ δ(ε) β max{e^{-με}, 1}` on `[ε̂, 2ε̂]`,
/// then `λ = sup K(ε)/ε` there and `k = (1 - βδ(ε̂))⁻¹ max{1, e^{-με̂}}`.
pub fn keylem_constants(profile: &MrProfile) -> Result<KeyLemConstants, CertifyError> {
    let delta = &profile.delta_fn;
    let (mu, beta, sigma) = (profile.mu, profile.beta, profile.sigma);

    if beta == 0.0 {
        return Ok(KeyLemConstants {
            lambda: 0.0,
            k: 1.0,
            eps_hat: 0.0,
            case_a: false,
        });
    }

    let case_a = [1e-4, 1e-5, 1e-6]
        .iter()
        .all(|&t| ((delta)(t) / t - 1.0).abs() <= 1e-2);
    if case_a {
        return Ok(KeyLemConstants {
            lambda: beta,
            k: 1.0,
            eps_hat: 0.0,
            case_a: true,
        });
    }

    let big_k = |e: f64| sigma.exp() * (delta)(e) * beta * ((-mu * e).exp()).max(1.0);
    let admissible = |eps_hat: f64| -> bool {
        let grid = 64;
        (0..=grid).all(|i| {
            let e = eps_hat * (1.0 + i as f64 / grid as f64);
            big_k(e) < sigma
        }) && beta * (delta)(eps_hat) < 1.0
    };

    let mut eps_hat = EPS_HAT_WINDOW / 2.0;
    for _ in 0..200 {
        if admissible(eps_hat) {
            let grid = 256;
            let lambda = (0..=grid)
                .map(|i| {
                    let e = eps_hat * (1.0 + i as f64 / grid as f64);
                    big_k(e) / e
                })
                .fold(0.0f64, f64::max);
            let k = (1.0 - beta * (delta)(eps_hat)).recip() * ((-mu * eps_hat).exp()).max(1.0);
            return Ok(KeyLemConstants {
                lambda,
                k,
                eps_hat,
                case_a: false,
            });
        }
        eps_hat *= 0.5;
    }
    Err(CertifyError::NoAdmissibleEpsHat(EPS_HAT_WINDOW))
}

/// Right-hand side of the pre-lemma bound for `|(S◇x)(n ε₁)|` when
/// `|x(t)| ≤ e^{μ̂ t} b`:
/// `b max{1, e^{μ̂ε₁}} δ(ε₁) e^{μ(n-1)ε₁} (e^{(μ̂-μ)nε₁}-1)/(e^{(μ̂-μ)ε₁}-1)`.
pub fn prelem_bound(b: f64, mu_hat: f64, mu: f64, delta_eps1: f64, eps1: f64, n: usize) -> f64 {
    assert!(n >= 1, "pre-lemma bound needs n >= 1");
    let d = b * (mu_hat * eps1).exp().max(1.0) * delta_eps1;
    let gap = (mu_hat - mu) * eps1;
    let geom = if gap.abs() < 1e-12 {
        n as f64
    } else {
        ((gap * n as f64).exp() - 1.0) / (gap.exp() - 1.0)
    };
    d * (mu * (n - 1) as f64 * eps1).exp() * geom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gap_certificate_printed_formulas() {
        let c = gap_certificate(-1.0, 1.0, 0.25, 0.25, None, None, 1.0).unwrap();
        assert_relative_eq!(c.alpha_min, 0.25 / 1.75, epsilon = 1e-15);
        assert_relative_eq!(c.beta_min, 1.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(c.lambda_s, (-0.75f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.lambda_u, (-0.75f64).exp(), epsilon = 1e-15);
        assert!(c.alpha > c.alpha_min && c.alpha < 1.0);
    }

    #[test]
    fn gap_certificate_unperturbed_limit() {
        let c = gap_certificate(-1.0, 1.0, 0.0, 0.0, None, None, 1.0).unwrap();
        assert_eq!(c.alpha_min, 0.0);
        assert_relative_eq!(c.lambda_s, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.lambda_u, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.k_alpha, (-2.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.k_beta, (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn gap_certificate_k_alpha_closed_form() {
        let c = gap_certificate(-1.0, 1.0, 0.5, 0.5, Some(0.5), Some(0.5), 1.0).unwrap();
        let expected = ((1.5 - 1.0) * (-1.5f64).exp() + 1.0) / 1.5;
        assert_relative_eq!(c.k_alpha, expected, epsilon = 1e-12);
        assert!((c.k_alpha - 0.74104).abs() < 5e-6);
    }

    #[test]
    fn gap_violations_are_reported() {
        let e = gap_certificate(-1.0, 1.0, 1.5, 1.0, None, None, 1.0).unwrap_err();
        assert!(matches!(e, CertifyError::GapViolated { deficit } if deficit < 0.0));
        let e = gap_certificate(-1.0, 1.0, 0.25, 0.25, Some(0.05), None, 1.0).unwrap_err();
        assert!(matches!(e, CertifyError::AlphaBelowThreshold { .. }));
    }

    #[test]
    fn k_factor_monotone_in_eps1_with_limits() {
        let c = |eps1| gap_certificate(-1.0, 1.0, 0.25, 0.25, Some(0.5), Some(0.5), eps1).unwrap();
        let mut prev = 1.0 + 1e-12;
        for i in 1..40 {
            let eps1 = i as f64 * 0.25;
            let k = c(eps1).k_alpha;
            assert!(k < prev, "k_alpha not strictly decreasing at eps1 = {eps1}");
            prev = k;
        }
        assert!((c(1e-9).k_alpha - 1.0).abs() < 1e-6);
        let sigma_alpha = 2.0 - 0.25;
        assert_relative_eq!(c(60.0).k_alpha, (0.25 / 0.5) / sigma_alpha, epsilon = 1e-9);
    }

    #[test]
    fn cocycle_certificate_single_entry_reduces_to_gap() {
        let single = cocycle_gap_certificate(
            &[RateEntry {
                mu_s: -1.0,
                mu_u: 1.0,
                eps: 0.1,
            }],
            1.0,
            CocycleMode::MaxNormCocycle,
            2.0,
            1.0,
        )
        .unwrap();
        let direct = gap_certificate(-1.0, 1.0, 0.1, 0.1, None, None, 1.0).unwrap();
        assert_eq!(single.per_omega[0], direct);
    }

    #[test]
    fn cocycle_uniform_clause_two_entry_example() {
        let table = vec![
            RateEntry {
                mu_s: -1.0,
                mu_u: 1.0,
                eps: 0.1,
            },
            RateEntry {
                mu_s: -2.0,
                mu_u: 2.0,
                eps: 0.1,
            },
        ];
        let c = cocycle_gap_certificate(&table, 1.0, CocycleMode::BiSemigroup, 2.0, 1.0).unwrap();
        assert!(c.uniform.holds);
        assert_relative_eq!(c.uniform.min_uniform_gap, 2.0 - 0.6, epsilon = 1e-14);
        assert!(c.uniform.alpha.unwrap() < 1.0);
        assert!(c.uniform.sup_lambda_product < 1.0);
    }

    #[test]
    fn cocycle_uniform_clause_failure_is_located() {
        let table = vec![
            RateEntry {
                mu_s: -1.0,
                mu_u: 1.0,
                eps: 0.05,
            },
            RateEntry {
                mu_s: -1.0,
                mu_u: 1.0,
                eps: 0.3,
            },
            RateEntry {
                mu_s: -1.0,
                mu_u: 1.0,
                eps: 0.7,
            },
        ];
        // per-omega gaps stay positive (2 - 2 eps > 0); the (1+c) clause fails
        let c =
            cocycle_gap_certificate(&table, 1.0, CocycleMode::MaxNormCocycle, 2.0, 1.0).unwrap();
        assert!(!c.uniform.holds);
        assert_eq!(c.uniform.failing_index, Some(2));
        assert!(c.uniform.failing_clause.is_some());
    }

    #[test]
    fn keylem_case_a_linear_delta() {
        let p = MrProfile::new(|t| t, 0.0, 0.1, 0.5);
        p.validate().unwrap();
        let k = keylem_constants(&p).unwrap();
        assert!(k.case_a);
        assert_eq!(
            k,
            KeyLemConstants {
                lambda: 0.1,
                k: 1.0,
                eps_hat: 0.0,
                case_a: true
            }
        );
    }

    #[test]
    fn keylem_zero_beta_degenerate() {
        let p = MrProfile::new(|t: f64| t.sqrt(), 0.0, 0.0, 0.5);
        let k = keylem_constants(&p).unwrap();
        assert_eq!((k.lambda, k.k), (0.0, 1.0));
    }

    #[test]
    fn keylem_case_b_sqrt_delta() {
        let p = MrProfile::new(|t: f64| t.sqrt(), 0.0, 0.1, 0.5);
        let k = keylem_constants(&p).unwrap();
        assert!(!k.case_a);
        assert!(k.eps_hat > 0.0 && k.lambda > 0.0 && k.k >= 1.0);
        let big_k = 0.5f64.exp() * (2.0 * k.eps_hat).sqrt() * 0.1;
        assert!(big_k < 0.5);
    }

    #[test]
    fn prelem_bound_single_step_and_zero() {
        let d = 0.3;
        assert_relative_eq!(
            prelem_bound(2.0, 0.5, -1.0, d, 1.0, 1),
            2.0 * 0.5f64.exp() * d,
            epsilon = 1e-14
        );
        assert_eq!(prelem_bound(0.0, 0.3, -1.0, 0.5, 0.5, 4), 0.0);
    }

    #[test]
    fn prelem_bound_dominates_direct_recursion() {
        let (b, mu_hat, mu, eps1): (f64, f64, f64, f64) = (1.0, 0.0, -1.0, 0.5);
        let d = 0.5;
        let mut k = 0.0f64;
        for m in 1..=4usize {
            k = (mu * eps1).exp() * k
                + b * ((mu_hat * eps1).exp()).max(1.0) * d * (mu_hat * (m - 1) as f64 * eps1).exp();
        }
        let bound = prelem_bound(b, mu_hat, mu, d, eps1, 4);
        assert!(bound >= k - 1e-12, "bound {bound} < recursion {k}");
    }

    #[test]
    fn keylem_bound_sound_against_discrete_recursion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let p = MrProfile::new(|t: f64| t.sqrt(), 0.0, 0.1, 0.5);
        let kc = keylem_constants(&p).unwrap();
        for _ in 0..100 {
            let a = rng.gen_range(0.1..2.0);
            let eps = rng.gen_range(0.01..kc.eps_hat.max(0.02));
            let steps = 60;
            let mut s_conv = 0.0f64; // worst-case discrete model of (S ◇ x)(m eps)
            let mut x_prev = p.beta * a * rng.gen_range(0.0..1.0);
            for m in 1..=steps {
                let t = m as f64 * eps;
                let u = (p.mu * t).exp() * a * rng.gen_range(0.0..=1.0);
                s_conv = (p.mu * eps).exp() * s_conv + (p.delta_fn)(eps) * x_prev;
                let y = u + s_conv;
                let bound = ((p.mu + kc.lambda) * t).exp() * kc.k * a;
                assert!(
                    y <= bound * (1.0 + 1e-9),
                    "y = {y} exceeds e^((mu+lambda)t) k a = {bound} at t = {t}"
                );
                x_prev = p.beta * y * rng.gen_range(0.0..=1.0);
            }
        }
    }
}

//! Correspondences through their generating maps `(F, G)` and their algebra:
//! composition, inversion, dual, plus the empirical (A)(B)-condition checker
//! used as the brute-force oracle throughout the toolkit.
//!
//! A correspondence `H: X1 x Y1 -> X2 x Y2` is represented only through
//! `F: X1 x Y2 -> X2` and `G: X1 x Y2 -> Y1`; the set-valued view is never
//! materialized. Graph points are parameterized by the boundary data
//! `(x1, y2)`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrespondError {
    #[error("dimension mismatch composing correspondences: {0}")]
    DimensionMismatch(String),
    #[error("sampler exhausted after {got} of {requested} pairs")]
    SamplerExhausted { got: usize, requested: usize },
    #[error("inner fixed point did not converge within {max_iter} iterations (last increment {increment})")]
    InnerFixedPoint { max_iter: usize, increment: f64 },
}

type Eval = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Factor dimensions of `H: X1 x Y1 -> X2 x Y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

/// Tabled one-argument Lipschitz bounds of the generating maps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LipTable {
    /// `sup_x Lip F(x, ·)`
    pub f_in_y: f64,
    /// `sup_y Lip F(·, y)`
    pub f_in_x: f64,
    /// `sup_x Lip G(x, ·)`
    pub g_in_y: f64,
    /// `sup_y Lip G(·, y)`
    pub g_in_x: f64,
}

/// `(alpha; alpha', lambda_u) (beta; beta', lambda_s)` for one correspondence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AbConstants {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

impl AbConstants {
    pub fn symmetric(alpha: f64, beta: f64, lambda_s: f64, lambda_u: f64) -> Self {
        Self {
            alpha,
            alpha_prime: alpha,
            beta,
            beta_prime: beta,
            lambda_s,
            lambda_u,
        }
    }

    /// Constants of the dual correspondence: (A) and (B) trade places.
    pub fn dual(&self) -> Self {
        Self {
            alpha: self.beta,
            alpha_prime: self.beta_prime,
            beta: self.alpha,
            beta_prime: self.alpha_prime,
            lambda_s: self.lambda_u,
            lambda_u: self.lambda_s,
        }
    }
}

/// Norm on product spaces; factors always carry the Euclidean norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProductNorm {
    Max,
    P(f64),
}

impl Default for ProductNorm {
    fn default() -> Self {
        ProductNorm::Max
    }
}

impl ProductNorm {
    pub fn combine(&self, nx: f64, ny: f64) -> f64 {
        match self {
            ProductNorm::Max => nx.max(ny),
            ProductNorm::P(p) => (nx.powf(*p) + ny.powf(*p)).powf(1.0 / p),
        }
    }
}

/// A graph point of `H`, determined by the boundary data `(x1, y2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    pub x1: DVector<f64>,
    pub y1: DVector<f64>,
    pub x2: DVector<f64>,
    pub y2: DVector<f64>,
}

#[derive(Clone)]
pub struct GeneratingCorrespondence {
    eval_f: Eval,
    eval_g: Eval,
    pub dims: Dims,
    pub lip_table: Option<LipTable>,
    /// set when this value was produced by [`GeneratingCorrespondence::invert`]
    inverse_of: Option<Arc<GeneratingCorrespondence>>,
}

pub const INNER_FP_TOL: f64 = 1e-12;
pub const INNER_FP_MAX_ITER: usize = 500;

impl GeneratingCorrespondence {
    pub fn new(
        dims: Dims,
        eval_f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        eval_g: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval_f: Arc::new(eval_f),
            eval_g: Arc::new(eval_g),
            dims,
            lip_table: None,
            inverse_of: None,
        }
    }

    pub fn with_lip_table(mut self, table: LipTable) -> Self {
        self.lip_table = Some(table);
        self
    }

    /// `F(x, y) = x`, `G(x, y) = y`.
    pub fn identity(dim_x: usize, dim_y: usize) -> Self {
        Self::new(
            Dims {
                x1: dim_x,
                y1: dim_y,
                x2: dim_x,
                y2: dim_y,
            },
            |x, _| x.clone(),
            |_, y| y.clone(),
        )
    }

    /// Decoupled linear correspondence `F = lam_x * x1`, `G = lam_y * y2`.
    pub fn linear_scalar(dim_x: usize, dim_y: usize, lam_x: f64, lam_y: f64) -> Self {
        Self::new(
            Dims {
                x1: dim_x,
                y1: dim_y,
                x2: dim_x,
                y2: dim_y,
            },
            move |x, _| x * lam_x,
            move |_, y| y * lam_y,
        )
    }

    pub fn eval_f(&self, x1: &DVector<f64>, y2: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x1.len(), self.dims.x1);
        debug_assert_eq!(y2.len(), self.dims.y2);
        (self.eval_f)(x1, y2)
    }

    pub fn eval_g(&self, x1: &DVector<f64>, y2: &DVector<f64>) -> DVector<f64> {
        (self.eval_g)(x1, y2)
    }

    /// The full graph point determined by boundary data `(x1, y2)`.
    pub fn graph_point(&self, x1: &DVector<f64>, y2: &DVector<f64>) -> GraphPoint {
        GraphPoint {
            x1: x1.clone(),
            y1: self.eval_g(x1, y2),
            x2: self.eval_f(x1, y2),
            y2: y2.clone(),
        }
    }

    /// Dual correspondence: `F~(a, b) = G(b, a)`, `G~(a, b) = F(b, a)`.
    pub fn dual(&self) -> Self {
        let f = self.eval_f.clone();
        let g = self.eval_g.clone();
        Self {
            eval_f: Arc::new(move |a, b| g(b, a)),
            eval_g: Arc::new(move |a, b| f(b, a)),
            dims: Dims {
                x1: self.dims.y2,
                y1: self.dims.x2,
                x2: self.dims.y1,
                y2: self.dims.x1,
            },
            lip_table: self.lip_table.map(|t| LipTable {
                f_in_y: t.g_in_x,
                f_in_x: t.g_in_y,
                g_in_y: t.f_in_x,
                g_in_x: t.f_in_y,
            }),
            inverse_of: None,
        }
    }

    /// Set-level inversion: `(y, x) ∈ Graph(invert(h))` iff `(x, y) ∈ Graph(h)`.
    ///
    /// Inverting an inversion returns the original, so double inversion
    /// reproduces graph samples bitwise. The generating-map form of an
    /// inversion solves the swapped boundary problem iteratively.
    pub fn invert(&self) -> Self {
        if let Some(orig) = &self.inverse_of {
            return (**orig).clone();
        }
        let me = Arc::new(self.clone());
        let for_f = me.clone();
        let for_g = me.clone();
        Self {
            // boundary of the inverse is (x2, y1); outputs (x1, y2)
            eval_f: Arc::new(move |x2, y1| for_f.solve_backward(x2, y1).0),
            eval_g: Arc::new(move |x2, y1| for_g.solve_backward(x2, y1).1),
            dims: Dims {
                x1: self.dims.x2,
                y1: self.dims.y2,
                x2: self.dims.x1,
                y2: self.dims.y1,
            },
            lip_table: None,
            inverse_of: Some(me),
        }
    }

    /// Solves `F(x1, y2) = x2`, `G(x1, y2) = y1` for `(x1, y2)` by a damped
    /// Newton iteration with finite-difference Jacobian. Panics on
    /// non-convergence; only exercised through inverted correspondences.
    fn solve_backward(&self, x2: &DVector<f64>, y1: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (nx, ny) = (self.dims.x1, self.dims.y2);
        let n = nx + ny;
        let mut guess = DVector::<f64>::zeros(n);
        let residual = |v: &DVector<f64>| -> DVector<f64> {
            let x1 = v.rows(0, nx).into_owned();
            let y2 = v.rows(nx, ny).into_owned();
            let mut r = DVector::zeros(n);
            r.rows_mut(0, nx)
                .copy_from(&(self.eval_f(&x1, &y2) - x2));
            r.rows_mut(nx, ny)
                .copy_from(&(self.eval_g(&x1, &y2) - y1));
            r
        };
        for _ in 0..INNER_FP_MAX_ITER {
            let r = residual(&guess);
            if r.norm() <= INNER_FP_TOL {
                return (
                    guess.rows(0, nx).into_owned(),
                    guess.rows(nx, ny).into_owned(),
                );
            }
            let h = 1e-7;
            let mut jac = nalgebra::DMatrix::zeros(n, n);
            for j in 0..n {
                let mut pert = guess.clone();
                pert[j] += h;
                jac.set_column(j, &((residual(&pert) - &r) / h));
            }
            let step = jac
                .lu()
                .solve(&r)
                .expect("backward solve: singular Jacobian");
            guess -= step;
        }
        panic!("invert: backward boundary solve did not converge");
    }

    /// Composite `self ∘ first` as a generating correspondence; the inner
    /// matching point is found by fixed-point iteration in `(x_mid, y_mid)`.
    pub fn compose(&self, first: &Self) -> Result<Self, CorrespondError> {
        if first.dims.x2 != self.dims.x1 || first.dims.y2 != self.dims.y1 {
            return Err(CorrespondError::DimensionMismatch(format!(
                "inner spaces disagree: first maps into ({}, {}), second expects ({}, {})",
                first.dims.x2, first.dims.y2, self.dims.x1, self.dims.y1
            )));
        }
        let h1 = first.clone();
        let h2 = self.clone();
        let dims = Dims {
            x1: first.dims.x1,
            y1: first.dims.y1,
            x2: self.dims.x2,
            y2: self.dims.y2,
        };
        let mid = move |x1: &DVector<f64>, y3: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            solve_middle(&h1, &h2, x1, y3).expect("compose: inner fixed point diverged")
        };
        let mid_f = mid.clone();
        let h2f = self.clone();
        let h1g = first.clone();
        Ok(Self {
            eval_f: Arc::new(move |x1, y3| {
                let (x_mid, _) = mid_f(x1, y3);
                h2f.eval_f(&x_mid, y3)
            }),
            eval_g: Arc::new(move |x1, y3| {
                let (_, y_mid) = mid(x1, y3);
                h1g.eval_g(x1, &y_mid)
            }),
            dims,
            lip_table: None,
            inverse_of: None,
        })
    }
}

/// Inner matching point of a composition: solves
/// `x_mid = F1(x1, y_mid)`, `y_mid = G2(x_mid, y3)`.
fn solve_middle(
    h1: &GeneratingCorrespondence,
    h2: &GeneratingCorrespondence,
    x1: &DVector<f64>,
    y3: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), CorrespondError> {
    let mut x_mid = h1.eval_f(x1, &DVector::zeros(h1.dims.y2));
    let mut y_mid = DVector::zeros(h1.dims.y2);
    let mut increment = f64::INFINITY;
    for _ in 0..INNER_FP_MAX_ITER {
        let y_new = h2.eval_g(&x_mid, y3);
        let x_new = h1.eval_f(x1, &y_new);
        increment = (&x_new - &x_mid).norm().max((&y_new - &y_mid).norm());
        x_mid = x_new;
        y_mid = y_new;
        if increment <= INNER_FP_TOL {
            return Ok((x_mid, y_mid));
        }
    }
    Err(CorrespondError::InnerFixedPoint {
        max_iter: INNER_FP_MAX_ITER,
        increment,
    })
}

/// One verified sample of a composition.
#[derive(Debug, Clone)]
pub struct ComposedSample {
    pub point: GraphPoint,
    pub mid_x: DVector<f64>,
    pub mid_y: DVector<f64>,
    /// membership residual of the intermediate point
    pub residual: f64,
}

/// Set-level composition checked on sampled boundary data `(x1, y3)`:
/// every emitted pair admits an intermediate graph point, verified to 1e-9.
pub fn compose_on_samples(
    h2: &GeneratingCorrespondence,
    h1: &GeneratingCorrespondence,
    samples: &[(DVector<f64>, DVector<f64>)],
) -> Result<Vec<ComposedSample>, CorrespondError> {
    if h1.dims.x2 != h2.dims.x1 || h1.dims.y2 != h2.dims.y1 {
        return Err(CorrespondError::DimensionMismatch(format!(
            "inner spaces disagree: first maps into ({}, {}), second expects ({}, {})",
            h1.dims.x2, h1.dims.y2, h2.dims.x1, h2.dims.y1
        )));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (x1, y3) in samples {
        let (mid_x, mid_y) = solve_middle(h1, h2, x1, y3)?;
        // membership: (x1, y1, mid) in Graph h1 and (mid, x3, y3) in Graph h2
        let r1 = (h1.eval_f(x1, &mid_y) - &mid_x).norm();
        let r2 = (h2.eval_g(&mid_x, y3) - &mid_y).norm();
        let residual = r1.max(r2);
        debug_assert!(residual <= 1e-9);
        let y1 = h1.eval_g(x1, &mid_y);
        let x3 = h2.eval_f(&mid_x, y3);
        out.push(ComposedSample {
            point: GraphPoint {
                x1: x1.clone(),
                y1,
                x2: x3,
                y2: y3.clone(),
            },
            mid_x,
            mid_y,
            residual,
        });
    }
    Ok(out)
}

// ---- empirical (A)(B) checker -----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbCondition {
    A1,
    A2,
    B1,
    B2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbEntry {
    pub condition: AbCondition,
    pub count: usize,
    /// `lhs - rhs` maximized over applicable pairs; <= 0 means certified
    pub worst_margin: f64,
    pub n_applicable: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbReport {
    pub entries: Vec<AbEntry>,
    pub seed: u64,
    pub n_pairs: usize,
    pub total_violations: usize,
}

impl AbReport {
    pub fn violations(&self, c: AbCondition) -> usize {
        self.entries
            .iter()
            .find(|e| e.condition == c)
            .map(|e| e.count)
            .unwrap_or(0)
    }

    pub fn worst_margin(&self, c: AbCondition) -> f64 {
        self.entries
            .iter()
            .find(|e| e.condition == c)
            .map(|e| e.worst_margin)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Margin above which an inequality counts as violated.
pub const AB_MARGIN_TOL: f64 = 1e-9;

/// Uniform sampler over a product of max-norm balls, seeded for
/// reproducibility.
pub struct BallSampler {
    pub radius_x: f64,
    pub radius_y: f64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl BallSampler {
    pub fn new(radius_x: f64, radius_y: f64, seed: u64) -> Self {
        Self {
            radius_x,
            radius_y,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn boundary_pair(&mut self, dim_x: usize, dim_y: usize) -> (DVector<f64>, DVector<f64>) {
        let rx = self.radius_x;
        let ry = self.radius_y;
        let x = DVector::from_fn(dim_x, |_, _| self.rng.gen_range(-rx..=rx));
        let y = DVector::from_fn(dim_y, |_, _| self.rng.gen_range(-ry..=ry));
        (x, y)
    }
}

/// Brute-force oracle for Definition (A)(B): checks (A1)(A2)(B1)(B2) on
/// `n_pairs` sampled pairs of graph points and reports count and worst margin
/// per condition. Pair evaluation is parallel; the sample stream is drawn
/// sequentially from the seeded sampler, so reports are reproducible.
pub fn empirical_ab_check(
    h: &GeneratingCorrespondence,
    constants: &AbConstants,
    sampler: &mut BallSampler,
    n_pairs: usize,
) -> Result<AbReport, CorrespondError> {
    assert!(n_pairs >= 1, "n_pairs must be at least 1");
    let boundary: Vec<_> = (0..n_pairs)
        .map(|_| {
            (
                sampler.boundary_pair(h.dims.x1, h.dims.y2),
                sampler.boundary_pair(h.dims.x1, h.dims.y2),
            )
        })
        .collect();
    let seed = sampler.seed;

    let merged = boundary
        .par_iter()
        .map(|((x1, y2), (x1p, y2p))| {
            let p = h.graph_point(x1, y2);
            let q = h.graph_point(x1p, y2p);
            check_pair(&p, &q, constants)
        })
        .reduce(PairStats::empty, PairStats::merge);

    Ok(merged.into_report(seed, n_pairs))
}

/// Checks one pair of graph points against every applicable condition.
pub fn check_pair(p: &GraphPoint, q: &GraphPoint, c: &AbConstants) -> PairStats {
    let dx1 = (&p.x1 - &q.x1).norm();
    let dy1 = (&p.y1 - &q.y1).norm();
    let dx2 = (&p.x2 - &q.x2).norm();
    let dy2 = (&p.y2 - &q.y2).norm();

    let mut s = PairStats::empty();
    if dx1 <= c.alpha * dy1 {
        s.record(0, dx2 - c.alpha_prime * dy2);
        s.record(1, dy1 - c.lambda_u * dy2);
    }
    if dy2 <= c.beta * dx2 {
        s.record(2, dy1 - c.beta_prime * dx1);
        s.record(3, dx2 - c.lambda_s * dx1);
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub struct PairStats {
    counts: [usize; 4],
    worst: [f64; 4],
    applicable: [usize; 4],
}

impl PairStats {
    pub fn empty() -> Self {
        Self {
            counts: [0; 4],
            worst: [f64::NEG_INFINITY; 4],
            applicable: [0; 4],
        }
    }

    fn record(&mut self, idx: usize, margin: f64) {
        self.applicable[idx] += 1;
        if margin > self.worst[idx] {
            self.worst[idx] = margin;
        }
        if margin > AB_MARGIN_TOL {
            self.counts[idx] += 1;
        }
    }

    pub fn merge(a: Self, b: Self) -> Self {
        let mut out = Self::empty();
        for i in 0..4 {
            out.counts[i] = a.counts[i] + b.counts[i];
            out.worst[i] = a.worst[i].max(b.worst[i]);
            out.applicable[i] = a.applicable[i] + b.applicable[i];
        }
        out
    }

    fn into_report(self, seed: u64, n_pairs: usize) -> AbReport {
        let conditions = [
            AbCondition::A1,
            AbCondition::A2,
            AbCondition::B1,
            AbCondition::B2,
        ];
        let entries = conditions
            .iter()
            .enumerate()
            .map(|(i, &condition)| AbEntry {
                condition,
                count: self.counts[i],
                worst_margin: self.worst[i],
                n_applicable: self.applicable[i],
            })
            .collect::<Vec<_>>();
        let total_violations = self.counts.iter().sum();
        AbReport {
            entries,
            seed,
            n_pairs,
            total_violations,
        }
    }
}

/// Finite-difference probe of the one-argument Lipschitz constants on
/// `n` sampled pairs; used to validate a declared [`LipTable`].
pub fn probe_lipschitz(
    h: &GeneratingCorrespondence,
    sampler: &mut BallSampler,
    n: usize,
) -> LipTable {
    let mut t = LipTable {
        f_in_y: 0.0,
        f_in_x: 0.0,
        g_in_y: 0.0,
        g_in_x: 0.0,
    };
    for _ in 0..n {
        let (x, y) = sampler.boundary_pair(h.dims.x1, h.dims.y2);
        let (xp, yp) = sampler.boundary_pair(h.dims.x1, h.dims.y2);
        let dy = (&y - &yp).norm();
        let dx = (&x - &xp).norm();
        if dy > 1e-12 {
            t.f_in_y = t
                .f_in_y
                .max((h.eval_f(&x, &y) - h.eval_f(&x, &yp)).norm() / dy);
            t.g_in_y = t
                .g_in_y
                .max((h.eval_g(&x, &y) - h.eval_g(&x, &yp)).norm() / dy);
        }
        if dx > 1e-12 {
            t.f_in_x = t
                .f_in_x
                .max((h.eval_f(&x, &y) - h.eval_f(&xp, &y)).norm() / dx);
            t.g_in_x = t
                .g_in_x
                .max((h.eval_g(&x, &y) - h.eval_g(&xp, &y)).norm() / dx);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn identity_composition_is_identity() {
        let id = GeneratingCorrespondence::identity(2, 1);
        let samples: Vec<_> = (0..10)
            .map(|i| (v(&[i as f64, -1.0]), v(&[0.5 * i as f64])))
            .collect();
        let composed = compose_on_samples(&id, &id, &samples).unwrap();
        for (s, (x1, y3)) in composed.iter().zip(&samples) {
            assert_relative_eq!(s.point.x2, *x1, epsilon = 1e-12);
            assert_relative_eq!(s.point.y1, *y3, epsilon = 1e-12);
            assert!(s.residual <= 1e-9);
        }
    }

    #[test]
    fn linear_composition_closed_form() {
        let (l1, m1) = (0.5, 0.25);
        let (l2, m2) = (0.3, 0.7);
        let h1 = GeneratingCorrespondence::linear_scalar(1, 1, l1, m1);
        let h2 = GeneratingCorrespondence::linear_scalar(1, 1, l2, m2);
        let samples: Vec<_> = (0..20)
            .map(|i| (v(&[i as f64 * 0.1 - 1.0]), v(&[1.0 - 0.1 * i as f64])))
            .collect();
        let composed = compose_on_samples(&h2, &h1, &samples).unwrap();
        for (s, (x, y)) in composed.iter().zip(&samples) {
            assert_relative_eq!(s.point.x2[0], l2 * l1 * x[0], epsilon = 1e-10);
            assert_relative_eq!(s.point.y1[0], m1 * m2 * y[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn composition_dimension_mismatch() {
        let h1 = GeneratingCorrespondence::identity(2, 1);
        let h2 = GeneratingCorrespondence::identity(1, 1);
        assert!(matches!(
            compose_on_samples(&h2, &h1, &[]),
            Err(CorrespondError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn composition_associativity_on_samples() {
        let h1 = GeneratingCorrespondence::linear_scalar(1, 1, 0.5, 0.4);
        let h2 = GeneratingCorrespondence::linear_scalar(1, 1, 0.6, 0.3);
        let h3 = GeneratingCorrespondence::linear_scalar(1, 1, 0.7, 0.2);
        let left = h3.compose(&h2).unwrap().compose(&h1).unwrap();
        let right = h3.compose(&h2.compose(&h1).unwrap()).unwrap();
        for i in 0..10 {
            let x = v(&[0.2 * i as f64 - 1.0]);
            let y = v(&[1.0 - 0.2 * i as f64]);
            assert!((left.eval_f(&x, &y) - right.eval_f(&x, &y)).norm() <= 1e-9);
            assert!((left.eval_g(&x, &y) - right.eval_g(&x, &y)).norm() <= 1e-9);
        }
    }

    #[test]
    fn invert_identity_and_linear() {
        let id = GeneratingCorrespondence::identity(1, 1);
        let inv = id.invert();
        let x = v(&[0.3]);
        let y = v(&[-0.7]);
        assert_relative_eq!(inv.eval_f(&x, &y), x, epsilon = 1e-9);
        assert_relative_eq!(inv.eval_g(&x, &y), y, epsilon = 1e-9);

        let h = GeneratingCorrespondence::linear_scalar(1, 1, 0.5, 0.25);
        let hinv = h.invert();
        // boundary of the inverse is (x2, y1); expect x1 = x2/0.5, y2 = y1/0.25
        let x1 = hinv.eval_f(&v(&[0.5]), &v(&[0.25]));
        let y2 = hinv.eval_g(&v(&[0.5]), &v(&[0.25]));
        assert_relative_eq!(x1[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(y2[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn double_inversion_returns_original_samples_bitwise() {
        let h = GeneratingCorrespondence::new(
            Dims {
                x1: 1,
                y1: 1,
                x2: 1,
                y2: 1,
            },
            |x, y| v(&[0.5 * x[0] + 0.1 * y[0] * y[0]]),
            |x, y| v(&[0.25 * y[0] - 0.3 * x[0]]),
        );
        let back = h.invert().invert();
        for i in 0..10 {
            let x = v(&[0.1 * i as f64]);
            let y = v(&[1.0 - 0.1 * i as f64]);
            // bitwise equality: same closures evaluated
            assert_eq!(h.eval_f(&x, &y), back.eval_f(&x, &y));
            assert_eq!(h.eval_g(&x, &y), back.eval_g(&x, &y));
        }
    }

    #[test]
    fn dual_identity_and_swapped_linear() {
        let id = GeneratingCorrespondence::identity(1, 1);
        let d = id.dual();
        let a = v(&[0.4]);
        let b = v(&[-0.2]);
        assert_eq!(d.eval_f(&a, &b), a);
        assert_eq!(d.eval_g(&a, &b), b);

        // F(x,y) = lam x + a y, G(x,y) = mu y
        let (lam, mu, cpl) = (0.5, 0.3, 0.2);
        let h = GeneratingCorrespondence::new(
            Dims {
                x1: 1,
                y1: 1,
                x2: 1,
                y2: 1,
            },
            move |x, y| v(&[lam * x[0] + cpl * y[0]]),
            move |_, y| v(&[mu * y[0]]),
        );
        let d = h.dual();
        // dual: F~(a,b) = G(b,a) = mu a, G~(a,b) = F(b,a) = lam b + cpl a
        assert_relative_eq!(d.eval_f(&a, &b)[0], mu * a[0], epsilon = 1e-15);
        assert_relative_eq!(d.eval_g(&a, &b)[0], lam * b[0] + cpl * a[0], epsilon = 1e-15);
        // involution, exactly
        let dd = d.dual();
        assert_eq!(dd.eval_f(&a, &b), h.eval_f(&a, &b));
        assert_eq!(dd.eval_g(&a, &b), h.eval_g(&a, &b));
    }

    #[test]
    fn linear_decoupled_certifies_with_exact_rates() {
        let h = GeneratingCorrespondence::linear_scalar(1, 1, 0.5, 0.5);
        // lambda_s = 0.5 (forward rate), lambda_u = 0.5 (backward rate)
        let c = AbConstants::symmetric(0.5, 0.5, 0.5, 0.5);
        let mut sampler = BallSampler::new(1.0, 1.0, 7);
        let report = empirical_ab_check(&h, &c, &mut sampler, 2000).unwrap();
        assert_eq!(report.total_violations, 0, "{report:?}");
    }

    #[test]
    fn falsification_run_reports_positive_margin() {
        let h = GeneratingCorrespondence::linear_scalar(1, 1, 0.5, 0.5);
        // halving lambda_u below the true backward rate must trip (A2)
        let c = AbConstants {
            alpha: 0.5,
            alpha_prime: 0.5,
            beta: 0.5,
            beta_prime: 0.5,
            lambda_s: 0.5,
            lambda_u: 0.25,
        };
        let mut sampler = BallSampler::new(1.0, 1.0, 7);
        let report = empirical_ab_check(&h, &c, &mut sampler, 2000).unwrap();
        assert!(report.violations(AbCondition::A2) > 0);
        assert!(report.worst_margin(AbCondition::A2) > 0.0);
        assert_eq!(report.violations(AbCondition::A1), 0);
    }

    #[test]
    fn duality_transports_a_to_b_pair_for_pair() {
        // generic coupled contraction on both sides
        let h = GeneratingCorrespondence::new(
            Dims {
                x1: 1,
                y1: 1,
                x2: 1,
                y2: 1,
            },
            |x, y| v(&[0.4 * x[0] + 0.05 * (y[0] * y[0])]),
            |x, y| v(&[0.45 * y[0] + 0.05 * x[0].sin()]),
        );
        let c = AbConstants {
            alpha: 0.6,
            alpha_prime: 0.55,
            beta: 0.6,
            beta_prime: 0.55,
            lambda_s: 0.62,
            lambda_u: 0.62,
        };
        let dual = h.dual();
        let cd = c.dual();
        let mut s1 = BallSampler::new(0.8, 0.8, 13);
        let mut s2 = BallSampler::new(0.8, 0.8, 13);
        let n = 1000;
        // pair-for-pair: transport the same boundary stream through the swap
        let mut a_margins = Vec::new();
        let mut b_margins = Vec::new();
        for _ in 0..n {
            let (x1, y2) = s1.boundary_pair(1, 1);
            let (x1p, y2p) = s1.boundary_pair(1, 1);
            let p = h.graph_point(&x1, &y2);
            let q = h.graph_point(&x1p, &y2p);
            let st = check_pair(&p, &q, &c);
            a_margins.push((st.applicable[0], st.worst[0], st.worst[1]));

            let (a, b) = s2.boundary_pair(1, 1);
            let (ap, bp) = s2.boundary_pair(1, 1);
            // dual boundary of the same pair: (y2, x1) slots
            let pd = dual.graph_point(&b, &a);
            let qd = dual.graph_point(&bp, &ap);
            let std = check_pair(&pd, &qd, &cd);
            b_margins.push((std.applicable[2], std.worst[2], std.worst[3]));
        }
        // (A*) margins of h equal (B*) margins of dual(h), exactly
        for (a, b) in a_margins.iter().zip(&b_margins) {
            assert_eq!(a.0, b.0);
            if a.0 > 0 {
                assert_eq!(a.1, b.1);
                assert_eq!(a.2, b.2);
            }
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let mut s1 = BallSampler::new(1.0, 2.0, 42);
        let mut s2 = BallSampler::new(1.0, 2.0, 42);
        for _ in 0..5 {
            assert_eq!(s1.boundary_pair(3, 2), s2.boundary_pair(3, 2));
        }
    }

    #[test]
    fn lip_probe_matches_linear_rates() {
        let h = GeneratingCorrespondence::linear_scalar(2, 2, 0.5, 0.25);
        let mut sampler = BallSampler::new(1.0, 1.0, 3);
        let t = probe_lipschitz(&h, &mut sampler, 1000);
        assert!(t.f_in_x <= 0.5 + 1e-9 && t.f_in_x >= 0.45);
        assert!(t.g_in_y <= 0.25 + 1e-9 && t.g_in_y >= 0.2);
        assert!(t.f_in_y <= 1e-12 && t.g_in_x <= 1e-12);
    }
}

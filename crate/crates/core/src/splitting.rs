//! Spectral splittings of square matrices: the dichotomy data (invariant
//! subspaces, projection, decay/growth rates with constant 1) consumed by the
//! two-point solver and the graph transform.
//!
//! Rates are logarithmic norms, so `‖exp(t·A|_X)‖ ≤ e^{mu_s t}` holds in the
//! Euclidean norm with constant exactly 1. An optional Lyapunov reweighting
//! tightens the rate toward the spectral abscissa; the weight matrix is kept
//! with the splitting so callers can work in the weighted norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("eigenvalue with real part {re} lies within {tol} of the cut {cut}")]
    EigenvalueOnCut { re: f64, cut: f64, tol: f64 },
    #[error("Schur iteration failed to converge")]
    NonConvergence,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("negative time {0} passed to a forward propagator")]
    NegativeTime(f64),
}

/// A decomposition `R^n = X ⊕ Y` with certified rates.
///
/// `X` spans the invariant subspace for eigenvalues with `Re < cut`, `Y` the
/// one for `Re > cut`. `mu_s`/`mu_u` are `-inf`/`+inf` sentinels when the
/// corresponding subspace is trivial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSplitting {
    pub dim_total: usize,
    #[serde(with = "crate::jsonmat")]
    pub basis_x: DMatrix<f64>,
    #[serde(with = "crate::jsonmat")]
    pub basis_y: DMatrix<f64>,
    #[serde(with = "crate::jsonmat")]
    pub projection_p: DMatrix<f64>,
    #[serde(with = "crate::jsonmat")]
    pub restricted_gen_x: DMatrix<f64>,
    #[serde(with = "crate::jsonmat")]
    pub restricted_gen_y: DMatrix<f64>,
    pub mu_s: f64,
    pub mu_u: f64,
    pub c1: f64,
    /// Lyapunov weights from [`SpectralSplitting::tighten_rates`]; `None`
    /// means the Euclidean norm is in force.
    #[serde(skip)]
    pub weight_x: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub weight_y: Option<DMatrix<f64>>,
}

/// Logarithmic norm: largest eigenvalue of `(A + Aᵀ)/2`.
///
/// Guarantees `‖exp(tA)‖ ≤ e^{rate·t}` for all `t ≥ 0` in the Euclidean norm.
pub fn log_norm_rate(a_sub: &DMatrix<f64>) -> f64 {
    assert_eq!(a_sub.nrows(), a_sub.ncols(), "log_norm_rate: square input");
    if a_sub.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    let sym = (a_sub + a_sub.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub const DEFAULT_CUT_TOL: f64 = 1e-8;

/// Split `a` along the vertical line `Re = cut` via an ordered real Schur
/// decomposition with block swapping.
pub fn spectral_split(a: &DMatrix<f64>, cut: f64) -> Result<SpectralSplitting, SplitError> {
    spectral_split_with_tol(a, cut, DEFAULT_CUT_TOL)
}

pub fn spectral_split_with_tol(
    a: &DMatrix<f64>,
    cut: f64,
    cut_tol: f64,
) -> Result<SpectralSplitting, SplitError> {
    if a.nrows() != a.ncols() {
        return Err(SplitError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    for ev in a.complex_eigenvalues().iter() {
        if (ev.re - cut).abs() < cut_tol {
            return Err(SplitError::EigenvalueOnCut {
                re: ev.re,
                cut,
                tol: cut_tol,
            });
        }
    }

    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or(SplitError::NonConvergence)?;
    let (mut q, mut t) = schur.unpack();
    normalize_quasi_triangular(&mut q, &mut t);
    reorder_schur(&mut q, &mut t, |re| re < cut);

    let k = leading_block_size(&t, |re| re < cut);
    Ok(build_splitting(&q, &t, n, k))
}

fn build_splitting(q: &DMatrix<f64>, t: &DMatrix<f64>, n: usize, k: usize) -> SpectralSplitting {
    let t11 = t.view((0, 0), (k, k)).into_owned();
    let t22 = t.view((k, k), (n - k, n - k)).into_owned();
    let t12 = t.view((0, k), (k, n - k)).into_owned();

    let basis_x = q.columns(0, k).into_owned();

    // Complementary invariant subspace: columns of [R; I] with
    // T11 R - R T22 = -T12, orthonormalized.
    let r = solve_sylvester(&t11, &t22, &(-t12.clone()));
    let mut v = DMatrix::zeros(n, n - k);
    v.view_mut((0, 0), (k, n - k)).copy_from(&r);
    v.view_mut((k, 0), (n - k, n - k))
        .copy_from(&DMatrix::identity(n - k, n - k));
    let (u, s) = thin_qr(&v);
    let basis_y = q * &u;
    let restricted_gen_y = if n - k > 0 {
        let s_inv = s
            .clone()
            .try_inverse()
            .expect("triangular factor of [R; I] is invertible");
        &s * &t22 * s_inv
    } else {
        DMatrix::zeros(0, 0)
    };

    // Projection onto X along Y in Schur coordinates: [[I, -R], [0, 0]].
    let mut p_schur = DMatrix::zeros(n, n);
    p_schur
        .view_mut((0, 0), (k, k))
        .copy_from(&DMatrix::identity(k, k));
    p_schur.view_mut((0, k), (k, n - k)).copy_from(&(-&r));
    let projection_p = q * p_schur * q.transpose();

    let mu_s = if k > 0 {
        log_norm_rate(&t11)
    } else {
        f64::NEG_INFINITY
    };
    let mu_u = if n - k > 0 {
        -log_norm_rate(&(-&restricted_gen_y))
    } else {
        f64::INFINITY
    };
    let eye = DMatrix::identity(n, n);
    let c1 = operator_norm(&projection_p)
        .max(operator_norm(&(&eye - &projection_p)))
        .max(1.0);

    SpectralSplitting {
        dim_total: n,
        basis_x,
        basis_y,
        projection_p,
        restricted_gen_x: t11,
        restricted_gen_y,
        mu_s,
        mu_u,
        c1,
        weight_x: None,
        weight_y: None,
    }
}

impl SpectralSplitting {
    pub fn dim_x(&self) -> usize {
        self.basis_x.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.basis_y.ncols()
    }

    /// Change-of-basis matrix `W = [basis_x | basis_y]`.
    pub fn basis(&self) -> DMatrix<f64> {
        let n = self.dim_total;
        let mut w = DMatrix::zeros(n, n);
        w.view_mut((0, 0), (n, self.dim_x())).copy_from(&self.basis_x);
        w.view_mut((0, self.dim_x()), (n, self.dim_y()))
            .copy_from(&self.basis_y);
        w
    }

    /// Ambient vector -> (x, y) coordinates in the split bases.
    pub fn to_coords(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w = self.basis();
        let c = w
            .lu()
            .solve(z)
            .expect("split basis is invertible by construction");
        (
            c.rows(0, self.dim_x()).into_owned(),
            c.rows(self.dim_x(), self.dim_y()).into_owned(),
        )
    }

    pub fn from_coords(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.basis_x * x + &self.basis_y * y
    }

    /// `(T(t), S(-t)) = (exp(t·A|_X), exp(-t·A|_Y))` for `t ≥ 0`.
    pub fn propagate(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), SplitError> {
        if t < 0.0 {
            return Err(SplitError::NegativeTime(t));
        }
        Ok((
            expm(&(self.restricted_gen_x.clone() * t)),
            expm(&(self.restricted_gen_y.clone() * (-t))),
        ))
    }

    /// Lyapunov reweighting post-pass: replaces the log-norm rates by
    /// `spectral abscissa + margin` on each factor, storing the weight
    /// matrices that make the constant-1 estimate hold in the weighted norm.
    pub fn tighten_rates(&mut self, margin: f64) {
        assert!(margin > 0.0, "tighten_rates needs a positive margin");
        if self.dim_x() > 0 {
            let target = spectral_abscissa(&self.restricted_gen_x) + margin;
            if target < self.mu_s {
                self.weight_x = Some(lyapunov_weight(&self.restricted_gen_x, target));
                self.mu_s = target;
            }
        }
        if self.dim_y() > 0 {
            let neg = -&self.restricted_gen_y;
            let target = spectral_abscissa(&neg) + margin;
            if -target > self.mu_u {
                // weight certifies ‖exp(-t·A|_Y)‖_W ≤ e^{target·t}
                self.weight_y = Some(lyapunov_weight(&neg, target));
                self.mu_u = -target;
            }
        }
    }

    /// Checks the type invariants; returns the name of the first violated one.
    pub fn validate(&self, a: &DMatrix<f64>) -> Result<(), String> {
        let n = self.dim_total;
        let p = &self.projection_p;
        let eye = DMatrix::identity(n, n);
        if operator_norm(&(p * p - p)) > 1e-10 {
            return Err("projection_p not idempotent".into());
        }
        if self.dim_x() + self.dim_y() != n {
            return Err("rank(P) + rank(I-P) != dim_total".into());
        }
        let na = operator_norm(a);
        if operator_norm(&((&eye - p) * a * p)) > 1e-9 * na.max(1.0)
            || operator_norm(&(p * a * (&eye - p))) > 1e-9 * na.max(1.0)
        {
            return Err("splitting not invariant under a".into());
        }
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            if self.dim_x() > 0 {
                let tx = expm(&(self.restricted_gen_x.clone() * t));
                if self.weighted_norm_x(&tx) > (self.mu_s * t).exp() * (1.0 + 1e-8) {
                    return Err(format!("stable rate certificate fails at t = {t}"));
                }
            }
            if self.dim_y() > 0 {
                let sy = expm(&(self.restricted_gen_y.clone() * (-t)));
                if self.weighted_norm_y(&sy) > (-self.mu_u * t).exp() * (1.0 + 1e-8) {
                    return Err(format!("unstable rate certificate fails at t = {t}"));
                }
            }
        }
        if operator_norm(p) > self.c1 * (1.0 + 1e-12)
            || operator_norm(&(&eye - p)) > self.c1 * (1.0 + 1e-12)
        {
            return Err("projection norms exceed c1".into());
        }
        Ok(())
    }

    fn weighted_norm_x(&self, m: &DMatrix<f64>) -> f64 {
        weighted_operator_norm(m, self.weight_x.as_ref())
    }

    fn weighted_norm_y(&self, m: &DMatrix<f64>) -> f64 {
        weighted_operator_norm(m, self.weight_y.as_ref())
    }
}

fn weighted_operator_norm(m: &DMatrix<f64>, w: Option<&DMatrix<f64>>) -> f64 {
    match w {
        None => operator_norm(m),
        Some(w) => {
            // ‖m‖_W with |x|_W² = xᵀWx: ‖L m L⁻¹‖₂ for W = LᵀL.
            let chol = w.clone().cholesky().expect("Lyapunov weight is SPD");
            let l = chol.l().transpose(); // upper factor U with W = UᵀU
            let li = l.clone().try_inverse().expect("Cholesky factor invertible");
            operator_norm(&(&l * m * li))
        }
    }
}

/// Solves `(A - target·I)ᵀ W + W (A - target·I) = -I` for `W ≻ 0`.
fn lyapunov_weight(a: &DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let b = a - DMatrix::identity(n, n) * target;
    // vec form: (I ⊗ Bᵀ + Bᵀ ⊗ I) vec(W) = vec(-I)
    let bt = b.transpose();
    let eye = DMatrix::identity(n, n);
    let m = eye.kronecker(&bt) + bt.kronecker(&eye);
    let rhs = DVector::from_fn(n * n, |i, _| {
        let (r, c) = (i % n, i / n);
        if r == c {
            -1.0
        } else {
            0.0
        }
    });
    let w_vec = m.lu().solve(&rhs).expect("Lyapunov system is nonsingular");
    let mut w = DMatrix::zeros(n, n);
    for c in 0..n {
        for r in 0..n {
            w[(r, c)] = w_vec[c * n + r];
        }
    }
    // symmetrize against round-off
    (w.clone() + w.transpose()) * 0.5
}

/// Matrix exponential.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    m.exp()
}

// ---- ordered Schur machinery ----------------------------------------------

const SUBDIAG_TOL: f64 = 1e-13;

fn block_sizes(t: &DMatrix<f64>) -> Vec<usize> {
    let n = t.nrows();
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let scale = t[(i, i)].abs().max(if i + 1 < n { t[(i + 1, i + 1)].abs() } else { 0.0 });
        if i + 1 < n && t[(i + 1, i)].abs() > SUBDIAG_TOL * scale.max(1.0) {
            sizes.push(2);
            i += 2;
        } else {
            sizes.push(1);
            i += 1;
        }
    }
    sizes
}

fn block_re(t: &DMatrix<f64>, start: usize, size: usize) -> f64 {
    if size == 1 {
        t[(start, start)]
    } else {
        0.5 * (t[(start, start)] + t[(start + 1, start + 1)])
    }
}

/// Splits any 2x2 block with real eigenvalues into two 1x1 blocks so that the
/// reordering only ever moves genuinely complex pairs as units.
fn normalize_quasi_triangular(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>) {
    let n = t.nrows();
    let mut i = 0;
    while i + 1 < n {
        let scale = t[(i, i)].abs().max(t[(i + 1, i + 1)].abs()).max(1.0);
        if t[(i + 1, i)].abs() > SUBDIAG_TOL * scale {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let disc = (a - d) * (a - d) + 4.0 * b * c;
            if disc >= 0.0 {
                // real pair: rotate so the eigenvector of one eigenvalue
                // becomes the leading column
                let lambda = 0.5 * (a + d) + 0.5 * disc.sqrt();
                // eigenvector of [[a, b], [c, d]] for lambda
                let (v0, v1) = if b.abs() + (lambda - a).abs() > 0.0 {
                    (b, lambda - a)
                } else {
                    (lambda - d, c)
                };
                let nrm = (v0 * v0 + v1 * v1).sqrt();
                if nrm > 0.0 {
                    let (cs, sn) = (v0 / nrm, v1 / nrm);
                    apply_rotation(q, t, i, cs, sn);
                }
                t[(i + 1, i)] = 0.0;
                i += 1;
                continue;
            }
            i += 2;
        } else {
            t[(i + 1, i)] = 0.0;
            i += 1;
        }
    }
}

/// Applies the 2x2 rotation G = [[cs, -sn], [sn, cs]] at rows/cols (i, i+1):
/// T <- GᵀTG, Q <- QG.
fn apply_rotation(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, cs: f64, sn: f64) {
    let n = t.nrows();
    for col in 0..n {
        let (x, y) = (t[(i, col)], t[(i + 1, col)]);
        t[(i, col)] = cs * x + sn * y;
        t[(i + 1, col)] = -sn * x + cs * y;
    }
    for row in 0..n {
        let (x, y) = (t[(row, i)], t[(row, i + 1)]);
        t[(row, i)] = cs * x + sn * y;
        t[(row, i + 1)] = -sn * x + cs * y;
    }
    for row in 0..q.nrows() {
        let (x, y) = (q[(row, i)], q[(row, i + 1)]);
        q[(row, i)] = cs * x + sn * y;
        q[(row, i + 1)] = -sn * x + cs * y;
    }
}

/// Bubbles every selected block (by eigenvalue real part) to the top left.
fn reorder_schur<F: Fn(f64) -> bool>(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, selected: F) {
    loop {
        let sizes = block_sizes(t);
        let starts: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect();
        let sel: Vec<bool> = starts
            .iter()
            .zip(&sizes)
            .map(|(&s, &sz)| selected(block_re(t, s, sz)))
            .collect();
        let mut swapped = false;
        for j in 0..sel.len().saturating_sub(1) {
            if !sel[j] && sel[j + 1] {
                swap_adjacent_blocks(q, t, starts[j], sizes[j], sizes[j + 1]);
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }
}

/// Swaps the adjacent diagonal blocks T11 (p x p at `i`) and T22 (q x q).
fn swap_adjacent_blocks(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize, p: usize, qq: usize) {
    let m = p + qq;
    let t11 = t.view((i, i), (p, p)).into_owned();
    let t22 = t.view((i + p, i + p), (qq, qq)).into_owned();
    let t12 = t.view((i, i + p), (p, qq)).into_owned();

    // invariant subspace of the trailing block: [X; I] with T11 X - X T22 = -T12
    let x = solve_sylvester(&t11, &t22, &(-t12));
    let mut v = DMatrix::zeros(m, qq);
    v.view_mut((0, 0), (p, qq)).copy_from(&x);
    v.view_mut((p, 0), (qq, qq)).copy_from(&DMatrix::identity(qq, qq));
    let z = orthonormal_completion(&v);

    // T <- GᵀTG, Q <- QG with G = diag(I, Z, I)
    let n = t.nrows();
    let rows = t.view((i, 0), (m, n)).into_owned();
    t.view_mut((i, 0), (m, n)).copy_from(&(z.transpose() * rows));
    let cols = t.view((0, i), (n, m)).into_owned();
    t.view_mut((0, i), (n, m)).copy_from(&(cols * &z));
    let qcols = q.view((0, i), (q.nrows(), m)).into_owned();
    q.view_mut((0, i), (q.nrows(), m)).copy_from(&(qcols * &z));

    // enforce exact block-triangularity after the swap
    for c in 0..qq {
        for r in qq..m {
            t[(i + r, i + c)] = 0.0;
        }
    }
    // a moved 1x1 pair leaves a clean subdiagonal
    if qq == 2 {
        let disc = (t[(i, i)] - t[(i + 1, i + 1)]).powi(2) + 4.0 * t[(i, i + 1)] * t[(i + 1, i)];
        if disc >= 0.0 {
            // re-split a block that is not a true complex pair
            let mut qi = DMatrix::identity(2, 2);
            let mut ti = t.view((i, i), (2, 2)).into_owned();
            let mut tmp_q = DMatrix::identity(2, 2);
            normalize_quasi_triangular(&mut tmp_q, &mut ti);
            // apply the same rotation to the full matrices
            qi.copy_from(&tmp_q);
            let n = t.nrows();
            let rows = t.view((i, 0), (2, n)).into_owned();
            t.view_mut((i, 0), (2, n)).copy_from(&(qi.transpose() * rows));
            let cols = t.view((0, i), (n, 2)).into_owned();
            t.view_mut((0, i), (n, 2)).copy_from(&(cols * &qi));
            let qcols = q.view((0, i), (q.nrows(), 2)).into_owned();
            q.view_mut((0, i), (q.nrows(), 2)).copy_from(&(qcols * &qi));
            t[(i + 1, i)] = 0.0;
        }
    }
}

fn leading_block_size<F: Fn(f64) -> bool>(t: &DMatrix<f64>, selected: F) -> usize {
    let sizes = block_sizes(t);
    let mut k = 0;
    let mut pos = 0;
    for sz in sizes {
        if selected(block_re(t, pos, sz)) {
            k += sz;
        }
        pos += sz;
    }
    k
}

/// Solves `A X - X B = C` by the Kronecker form; fine at desk scale.
fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    if p == 0 || q == 0 {
        return DMatrix::zeros(p, q);
    }
    let eye_p = DMatrix::identity(p, p);
    let eye_q = DMatrix::identity(q, q);
    let m = eye_q.kronecker(a) - b.transpose().kronecker(&eye_p);
    let rhs = DVector::from_fn(p * q, |i, _| c[(i % p, i / p)]);
    let sol = m
        .lu()
        .solve(&rhs)
        .expect("Sylvester system nonsingular: spectra are separated by the cut");
    DMatrix::from_fn(p, q, |r, col| sol[col * p + r])
}

/// Thin QR via modified Gram-Schmidt: `v = U S` with orthonormal U.
fn thin_qr(v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (v.nrows(), v.ncols());
    let mut u = DMatrix::zeros(n, m);
    let mut s = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut col = v.column(j).into_owned();
        for i in 0..j {
            let proj = u.column(i).dot(&col);
            s[(i, j)] = proj;
            col -= u.column(i) * proj;
        }
        // re-orthogonalize once
        for i in 0..j {
            let proj = u.column(i).dot(&col);
            s[(i, j)] += proj;
            col -= u.column(i) * proj;
        }
        let nrm = col.norm();
        s[(j, j)] = nrm;
        if nrm > 0.0 {
            col /= nrm;
        }
        u.set_column(j, &col);
    }
    (u, s)
}

/// Orthonormal basis of span(v) completed to a full orthogonal matrix.
fn orthonormal_completion(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (v.nrows(), v.ncols());
    let (u, _) = thin_qr(v);
    let mut z = DMatrix::zeros(n, n);
    z.view_mut((0, 0), (n, m)).copy_from(&u);
    let mut filled = m;
    for e in 0..n {
        if filled == n {
            break;
        }
        let mut col = DVector::zeros(n);
        col[e] = 1.0;
        for i in 0..filled {
            let proj = z.column(i).dot(&col);
            col -= z.column(i) * proj;
        }
        for i in 0..filled {
            let proj = z.column(i).dot(&col);
            col -= z.column(i) * proj;
        }
        let nrm = col.norm();
        if nrm > 1e-10 {
            z.set_column(filled, &(col / nrm));
            filled += 1;
        }
    }
    assert_eq!(filled, n, "orthonormal completion found a full basis");
    z
}

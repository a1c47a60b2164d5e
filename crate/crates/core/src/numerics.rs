//! Deterministic dense linear-algebra kernels shared by the design modules.
//!
//! Everything here is a pure function of its inputs. Decompositions are
//! post-processed so that repeated calls on the same matrix return
//! bit-identical results, which keeps every design downstream reproducible.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Economy SVD `M = U diag(S) V^H` with `r = min(m, n)` columns.
///
/// Singular values are sorted descending (stable, so ties keep the order the
/// backend produced them in). In each left singular vector the entry of
/// largest modulus is real and non-negative, lowest index winning ties; the
/// matching right vector carries the same phase rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct EconSvd {
    pub left_vectors: CMat,
    pub singular_values: Vec<f64>,
    pub right_vectors: CMat,
}

impl EconSvd {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .take_while(|&&s| s > rel_tol * top && s > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> CMat {
        let mut us = self.left_vectors.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        &us * self.right_vectors.adjoint()
    }
}

pub fn ensure_finite(m: &CMat, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("{what} has non-finite entries")))
    }
}

pub fn svd_econ(m: &CMat) -> Result<EconSvd> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::input("svd of an empty matrix"));
    }
    ensure_finite(m, "svd input")?;

    let svd = m
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::NoConvergence("complex SVD"))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let sv = svd.singular_values;

    let r = sv.len();
    let mut order: Vec<usize> = (0..r).collect();
    // sort_by is stable: exact ties keep backend order.
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).expect("finite singular values"));

    let mut left = CMat::zeros(m.nrows(), r);
    let mut right = CMat::zeros(m.ncols(), r);
    let mut values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u.column(src).into_owned();
        let mut vcol = v_t.row(src).adjoint();
        let rot = phase_anchor(&ucol);
        ucol *= rot;
        vcol *= rot;
        left.set_column(dst, &ucol);
        right.set_column(dst, &vcol);
        values.push(sv[src].max(0.0));
    }

    Ok(EconSvd {
        left_vectors: left,
        singular_values: values,
        right_vectors: right,
    })
}

/// Unit-modulus factor that makes the largest-modulus entry of `v` real and
/// non-negative.
fn phase_anchor(v: &CVec) -> Complex64 {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, z) in v.iter().enumerate() {
        let a = z.norm();
        if a > best_abs {
            best = i;
            best_abs = a;
        }
    }
    if best_abs <= 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        v[best].conj() / best_abs
    }
}

/// Dominant `count` left singular vectors of `m`. When `m` has fewer than
/// `count` singular directions the basis is completed deterministically by
/// Gram-Schmidt against the standard basis.
pub fn leading_left_vectors(m: &CMat, count: usize) -> Result<CMat> {
    let svd = svd_econ(m)?;
    let available = svd.left_vectors.ncols();
    if count <= available {
        return Ok(svd.left_vectors.columns(0, count).into_owned());
    }
    log::warn!(
        "requested {count} principal directions from a matrix with only {available}; \
         completing the basis"
    );
    complete_orthonormal(&svd.left_vectors, count)
}

/// Extends the orthonormal columns of `basis` to `count` columns.
pub fn complete_orthonormal(basis: &CMat, count: usize) -> Result<CMat> {
    let n = basis.nrows();
    if count > n {
        return Err(Error::input(format!(
            "cannot build {count} orthonormal columns in dimension {n}"
        )));
    }
    let mut cols: Vec<CVec> = basis.column_iter().map(|c| c.into_owned()).collect();
    cols.truncate(count);
    let mut e = 0usize;
    while cols.len() < count {
        let mut cand = CVec::zeros(n);
        cand[e] = Complex64::new(1.0, 0.0);
        e += 1;
        // two Gram-Schmidt sweeps
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&cand);
                cand -= c * proj;
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            cols.push(cand / Complex64::new(norm, 0.0));
        }
        if e >= n && cols.len() < count {
            return Err(Error::NoConvergence("orthonormal completion"));
        }
    }
    Ok(CMat::from_columns(&cols))
}

fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermitian_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::input("expected a nonempty square matrix"));
    }
    ensure_finite(a, "hermitian input")?;
    let scale = max_abs(a).max(1.0);
    if hermitian_defect(a) > 1e-10 * scale {
        return Err(Error::input("matrix is not Hermitian within 1e-10"));
    }
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::try_new(sym, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::NoConvergence("hermitian eigendecomposition"))?;
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

fn spectral_function(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let mut scaled = vectors.clone();
    for (j, &lam) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(f(lam));
    }
    let b = &scaled * vectors.adjoint();
    (&b + b.adjoint()).scale(0.5)
}

/// Unique Hermitian PSD square root of a Hermitian PSD matrix.
pub fn hermitian_sqrt(a: &CMat) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(a)?;
    let top = values.iter().copied().fold(0.0, f64::max).max(1.0);
    if let Some(&low) = values.iter().find(|&&l| l < -1e-10 * top) {
        return Err(Error::input(format!(
            "matrix is not positive semidefinite (eigenvalue {low:e})"
        )));
    }
    Ok(spectral_function(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Inverse of the Hermitian PD square root, `A^{-1/2}`.
pub fn hermitian_inv_sqrt(a: &CMat) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(a)?;
    let top = values.iter().copied().fold(0.0, f64::max);
    let low = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(top > 0.0) || low <= 1e-12 * top {
        return Err(Error::IllConditioned(format!(
            "Gram matrix eigenvalues span [{low:e}, {top:e}]"
        )));
    }
    Ok(spectral_function(&values, &vectors, |l| 1.0 / l.sqrt()))
}

/// Result of a water-filling power allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    /// Power per parallel channel, same layout as the gains.
    pub allocations: Vec<f64>,
    /// The water level `mu`.
    pub level: f64,
}

/// Allocates `budget` over parallel channels with power gains `gains`:
/// `p_i = (mu - noise_var / g_i)^+` with `sum p_i = budget`.
///
/// `mu` is found by bisection on `[0, max(noise_var/g) + budget]`. Zero gains
/// never receive power.
pub fn water_fill(gains: &[f64], noise_var: f64, budget: f64) -> Result<WaterFilling> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::input("noise variance must be positive and finite"));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::input("power budget must be positive and finite"));
    }
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::input("gains must be finite and non-negative"));
    }
    let floors: Vec<f64> = gains
        .iter()
        .map(|&g| {
            if g > 0.0 {
                noise_var / g
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max_floor = floors
        .iter()
        .copied()
        .filter(|f| f.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max_floor == f64::NEG_INFINITY {
        return Err(Error::NoFeasibleAllocation);
    }

    let filled = |mu: f64| -> f64 { floors.iter().map(|&f| (mu - f).max(0.0)).sum() };
    let mut lo = 0.0f64;
    let mut hi = max_floor + budget;
    let tol = 1e-10 * budget.max(1.0);
    let mut mu = hi;
    for _ in 0..400 {
        mu = 0.5 * (lo + hi);
        let total = filled(mu);
        if (total - budget).abs() <= tol {
            break;
        }
        if total > budget {
            hi = mu;
        } else {
            lo = mu;
        }
    }
    let allocations = floors.iter().map(|&f| (mu - f).max(0.0)).collect();
    Ok(WaterFilling {
        allocations,
        level: mu,
    })
}

/// Phase-shifter resolution: `Q` bits, or ideal (continuous) phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseResolution {
    Bits(u32),
    Unquantized,
}

impl PhaseResolution {
    pub fn levels(self) -> Option<u64> {
        match self {
            PhaseResolution::Bits(q) => Some(1u64 << q),
            PhaseResolution::Unquantized => None,
        }
    }
}

impl fmt::Display for PhaseResolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseResolution::Bits(q) => write!(f, "{q}"),
            PhaseResolution::Unquantized => f.write_str("inf"),
        }
    }
}

impl FromStr for PhaseResolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(PhaseResolution::Unquantized),
            other => match other.parse::<u32>() {
                Ok(q) if (1..=30).contains(&q) => Ok(PhaseResolution::Bits(q)),
                _ => Err(Error::Parse(format!(
                    "phase resolution must be 1..=30 bits or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// Projects every entry onto the circle of radius `modulus`, snapping the phase
/// to the nearest point of the `2^Q` grid `{2 pi q / 2^Q}` (with wraparound).
pub fn phase_quantize(m: &CMat, resolution: PhaseResolution, modulus: f64) -> Result<CMat> {
    if !(modulus > 0.0) || !modulus.is_finite() {
        return Err(Error::input("modulus must be positive and finite"));
    }
    ensure_finite(m, "phase_quantize input")?;
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if z.re == 0.0 && z.im == 0.0 {
                return Err(Error::DegeneratePhase { row: i, col: j });
            }
            out[(i, j)] = Complex64::from_polar(modulus, quantize_angle(z.arg(), resolution));
        }
    }
    Ok(out)
}

pub fn quantize_angle(angle: f64, resolution: PhaseResolution) -> f64 {
    match resolution.levels() {
        None => angle,
        Some(levels) => {
            let levels_f = levels as f64;
            let q = (levels_f * angle / (2.0 * PI)).round() as i64;
            let q = q.rem_euclid(levels as i64);
            2.0 * PI * q as f64 / levels_f
        }
    }
}

/// `modulus * exp(j angle(M))` entrywise; zero entries take phase zero.
pub fn phase_only(m: &CMat, modulus: f64) -> CMat {
    m.map(|z| Complex64::from_polar(modulus, z.arg()))
}

/// Horizontal concatenation `[M_1 M_2 ... M_K]`.
pub fn hstack(blocks: &[CMat]) -> Result<CMat> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::input("cannot stack an empty list"))?;
    let rows = first.nrows();
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::input("stacked blocks must share a row count"));
    }
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

pub fn select_rows(m: &CMat, rows: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn principal_submatrix(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn fro_norm_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::IllConditioned("singular Hermitian system".into()))
}

/// Largest eigenvalue of a Hermitian PSD matrix.
pub fn largest_eigenvalue(a: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(a)?;
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Covariance of the form `B B^H + noise_var * I`, the shape of every
/// received-signal covariance `E[y y^H]` in this crate.
///
/// Keeping the low-rank factor makes square roots and quadratic forms cost
/// `O(n r^2)` instead of a dense eigendecomposition.
#[derive(Debug, Clone)]
pub struct SignalCovariance {
    factor: CMat,
    noise_var: f64,
    basis: CMat,
    sqrt_gain: Vec<f64>,
}

impl SignalCovariance {
    pub fn new(factor: CMat, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::input("noise variance must be non-negative"));
        }
        ensure_finite(&factor, "covariance factor")?;
        let sigma = noise_var.sqrt();
        let (basis, sqrt_gain) = if factor.ncols() == 0 || fro_norm_sq(&factor) == 0.0 {
            (CMat::zeros(factor.nrows(), 0), Vec::new())
        } else {
            let svd = svd_econ(&factor)?;
            let gains = svd
                .singular_values
                .iter()
                .map(|s| (s * s + noise_var).sqrt() - sigma)
                .collect();
            (svd.left_vectors, gains)
        };
        Ok(SignalCovariance {
            factor,
            noise_var,
            basis,
            sqrt_gain,
        })
    }

    pub fn identity(n: usize) -> Self {
        SignalCovariance::new(CMat::zeros(n, 0), 1.0).expect("identity covariance")
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &CMat {
        &self.factor
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn dense(&self) -> CMat {
        let mut c = &self.factor * self.factor.adjoint();
        for i in 0..c.nrows() {
            c[(i, i)] += Complex64::new(self.noise_var, 0.0);
        }
        c
    }

    /// `C M`.
    pub fn apply(&self, m: &CMat) -> CMat {
        &self.factor * (self.factor.adjoint() * m) + m.scale(self.noise_var)
    }

    /// `C^{1/2} M` with the Hermitian PSD root.
    pub fn sqrt_apply(&self, m: &CMat) -> CMat {
        let mut out = m.scale(self.noise_var.sqrt());
        if self.basis.ncols() > 0 {
            let mut coeff = self.basis.adjoint() * m;
            for (i, &g) in self.sqrt_gain.iter().enumerate() {
                coeff.row_mut(i).scale_mut(g);
            }
            out += &self.basis * coeff;
        }
        out
    }

    /// `M^H C M`.
    pub fn quadratic(&self, m: &CMat) -> CMat {
        let p = self.factor.adjoint() * m;
        p.adjoint() * &p + (m.adjoint() * m).scale(self.noise_var)
    }

    /// Covariance of the sub-vector on `rows`.
    pub fn restrict(&self, rows: &[usize]) -> Result<Self> {
        SignalCovariance::new(select_rows(&self.factor, rows), self.noise_var)
    }
}

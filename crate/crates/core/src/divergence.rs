//! f-divergences, their convex conjugates over the simplex, and the per-sample
//! proximal minimizers used in the ADMM `v`-update.
//!
//! For a base distribution `p` and `v ∈ R^C` the conjugate is
//! `D_f^conj(v, p) = sup_{q ∈ Δ_C} vᵀq − D_f(q‖p)` with
//! `D_f(q‖p) = Σ_c p_c f(q_c / p_c)`. Its gradient is the maximizing `q`,
//! which is also the tilted distribution `p_c · φ(v_c + γ)` with `φ = (f′)⁻¹`.
//!
//! Three routes compute `argmin_v D_f^conj(v, p) + ξ‖v‖² + aᵀv`:
//!
//! * KL: a contraction fixed point on softmax ([`v_update_kl`]);
//! * CE: a safeguarded Newton search for one scalar ([`v_update_ce`]);
//! * any strictly convex `f`: a concave 1-D outer search over the simplex
//!   multiplier with separable 1-D inner problems ([`v_update_generic`]).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Lower bound applied to every base score before projection.
pub const EPS_CLIP: f64 = 1e-6;

const KL_FIXED_POINT_TOL: f64 = 1e-10;
const KL_FIXED_POINT_MAX_ITERS: usize = 200;
const CE_ROOT_TOL: f64 = 1e-12;
const CE_MAX_ITERS: usize = 200;
const GENERIC_OUTER_WIDTH: f64 = 1e-9;
const GENERIC_INNER_WIDTH: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 1100;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied f-divergence generator given by scalar handles.
///
/// `f` must be strictly convex on `(0, ∞)` with `f(1) = 0`; `df` is its
/// derivative and `phi` the inverse of `df`.
#[derive(Clone)]
pub struct GenericF {
    pub name: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub phi: ScalarFn,
}

impl GenericF {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let g = Self {
            name: name.into(),
            f: Arc::new(f),
            df: Arc::new(df),
            phi: Arc::new(phi),
        };
        let f1 = (g.f)(1.0);
        if !f1.is_finite() || f1.abs() > 1e-12 {
            return Err(Error::InvalidDivergence(format!(
                "{}: f(1) = {f1}, expected 0",
                g.name
            )));
        }
        Ok(g)
    }

    /// KL generator `t log t` expressed through handles.
    pub fn kl() -> Self {
        Self::new(
            "kl-handles",
            |t: f64| if t == 0.0 { 0.0 } else { t * t.ln() },
            |t: f64| t.ln() + 1.0,
            |u: f64| (u - 1.0).exp(),
        )
        .expect("kl generator")
    }

    /// Cross-entropy generator `−log t` expressed through handles.
    pub fn ce() -> Self {
        Self::new("ce-handles", |t: f64| -t.ln(), |t: f64| -1.0 / t, |u: f64| -1.0 / u)
            .expect("ce generator")
    }
}

impl fmt::Debug for GenericF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericF").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Which f-divergence measures closeness to the base scores.
#[derive(Debug, Clone)]
pub enum DivergenceKind {
    /// `f(t) = t log t`, `φ(u) = e^{u−1}`.
    Kl,
    /// `f(t) = −log t`, `φ(u) = −1/u` on `u < 0`.
    Ce,
    Generic(GenericF),
}

impl DivergenceKind {
    pub fn name(&self) -> &str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Ce => "ce",
            DivergenceKind::Generic(g) => &g.name,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(DivergenceKind::Kl),
            "ce" | "cross-entropy" => Ok(DivergenceKind::Ce),
            other => Err(Error::InvalidArgument(format!(
                "unknown divergence '{other}' (expected kl or ce)"
            ))),
        }
    }

    pub fn f(&self, t: f64) -> f64 {
        match self {
            DivergenceKind::Kl => {
                if t == 0.0 {
                    0.0
                } else {
                    t * t.ln()
                }
            }
            DivergenceKind::Ce => -t.ln(),
            DivergenceKind::Generic(g) => (g.f)(t),
        }
    }

    pub fn phi(&self, u: f64) -> f64 {
        match self {
            DivergenceKind::Kl => (u - 1.0).exp(),
            DivergenceKind::Ce => -1.0 / u,
            DivergenceKind::Generic(g) => (g.phi)(u),
        }
    }

    /// `D_f(q‖p) = Σ_c p_c f(q_c / p_c)`.
    pub fn divergence(&self, q: &[f64], p: &[f64]) -> f64 {
        q.iter().zip(p).map(|(&qc, &pc)| pc * self.f(qc / pc)).sum()
    }

    /// Gradient of the conjugate in `v`: the maximizing distribution
    /// `q^conj(v, p)`, equal to the tilt `p_c φ(v_c + γ)`.
    pub fn conj_gradient(&self, v: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        check_dims(v, p)?;
        let mut out = vec![0.0; p.len()];
        match self {
            DivergenceKind::Kl => {
                let z: Vec<f64> = v.iter().zip(p).map(|(vc, pc)| vc + pc.ln()).collect();
                softmax_into(&z, &mut out);
            }
            DivergenceKind::Ce => {
                ce_tilt_into(p, v, &mut out)?;
            }
            DivergenceKind::Generic(g) => {
                generic_tilt_into(g, p, v, &mut out)?;
            }
        }
        Ok(out)
    }

    /// `D_f^conj(v, p)`.
    pub fn conj(&self, v: &[f64], p: &[f64]) -> Result<f64> {
        match self {
            DivergenceKind::Kl => kl_conj(v, p),
            _ => {
                let q = self.conj_gradient(v, p)?;
                let lin: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
                Ok(lin - self.divergence(&q, p))
            }
        }
    }

    /// Objective of the per-sample `v`-update.
    pub fn v_objective(&self, v: &[f64], p: &[f64], a: &[f64], xi: f64) -> Result<f64> {
        let quad: f64 = v.iter().map(|x| x * x).sum();
        let lin: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
        Ok(self.conj(v, p)? + xi * quad + lin)
    }

    /// Minimizes `D_f^conj(v, p) + ξ‖v‖² + aᵀv`, writing the result into `v`.
    ///
    /// `v` holds the warm start on entry (used by the KL route); `warm_z` is
    /// the scalar warm start of the CE route and is updated in place.
    pub fn v_update_in_place(
        &self,
        p: &[f64],
        a: &[f64],
        xi: f64,
        v: &mut [f64],
        warm_z: &mut f64,
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        match self {
            DivergenceKind::Kl => kl_update_in_place(p, a, xi, v, scratch),
            DivergenceKind::Ce => {
                *warm_z = ce_update_in_place(p, a, xi, *warm_z, v)?;
                Ok(())
            }
            DivergenceKind::Generic(g) => {
                let out = v_update_generic(g, p, a, xi)?;
                v.copy_from_slice(&out);
                Ok(())
            }
        }
    }
}

/// Clips each entry to at least `eps` and rescales so the row sums to one.
///
/// Entries pinned at `eps` stay there; the remaining mass is distributed
/// proportionally over the rest. Returns `true` when the row changed by more
/// than round-off.
pub fn clip_and_renormalize(row: &mut [f64], eps: f64) -> bool {
    let n = row.len();
    let total: f64 = row.iter().sum();
    let original: Vec<f64> = row.to_vec();
    let normalized: Vec<f64> = row.iter().map(|x| x / total).collect();
    let mut pinned = vec![false; n];
    loop {
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        let free_mass: f64 = normalized
            .iter()
            .zip(&pinned)
            .filter(|(_, &b)| !b)
            .map(|(x, _)| x)
            .sum();
        let remaining = 1.0 - n_pinned as f64 * eps;
        let scale = if free_mass > 0.0 { remaining / free_mass } else { 0.0 };
        let mut grew = false;
        for c in 0..n {
            if !pinned[c] && normalized[c] * scale < eps {
                pinned[c] = true;
                grew = true;
            }
        }
        if !grew {
            for c in 0..n {
                row[c] = if pinned[c] { eps } else { normalized[c] * scale };
            }
            break;
        }
    }
    row.iter().zip(&original).any(|(a, b)| (a - b).abs() > 1e-12)
}

fn check_dims(v: &[f64], p: &[f64]) -> Result<()> {
    if v.len() != p.len() {
        return Err(Error::DimensionMismatch {
            what: "vector vs distribution",
            expected: p.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Softmax with max-shift.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if let Some(i) = z.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "softmax input has non-finite entry {} at index {i}",
            z[i]
        )));
    }
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// `log Σ_c p_c e^{v_c}`, the KL conjugate.
pub fn kl_conj(v: &[f64], p: &[f64]) -> Result<f64> {
    check_dims(v, p)?;
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().zip(p).map(|(vc, pc)| pc * (vc - m).exp()).sum();
    Ok(m + s.ln())
}

/// KL `v`-update by the fixed-point map `z ← −(σ(z) + b) / (2ξ)` on
/// `z = v + log p`, `b = a − 2ξ log p`. Contracts when `ξ > 1/4`.
pub fn v_update_kl(p: &[f64], a: &[f64], xi: f64, init: &[f64]) -> Result<Vec<f64>> {
    check_dims(a, p)?;
    check_dims(init, p)?;
    check_xi(xi)?;
    let mut v = init.to_vec();
    let mut scratch = Vec::new();
    kl_update_in_place(p, a, xi, &mut v, &mut scratch)?;
    Ok(v)
}

fn check_xi(xi: f64) -> Result<()> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
    }
    Ok(())
}

fn kl_update_in_place(
    p: &[f64],
    a: &[f64],
    xi: f64,
    v: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let c = p.len();
    scratch.clear();
    scratch.resize(3 * c, 0.0);
    let (z, rest) = scratch.split_at_mut(c);
    let (b, sig) = rest.split_at_mut(c);
    let inv = 1.0 / (2.0 * xi);
    for k in 0..c {
        let lp = p[k].ln();
        z[k] = v[k] + lp;
        b[k] = a[k] - 2.0 * xi * lp;
    }
    let mut diff = f64::INFINITY;
    for _ in 0..KL_FIXED_POINT_MAX_ITERS {
        softmax_into(z, sig);
        diff = 0.0;
        for k in 0..c {
            let next = -(sig[k] + b[k]) * inv;
            diff = diff.max((next - z[k]).abs());
            z[k] = next;
        }
        if !diff.is_finite() {
            break;
        }
        if diff <= KL_FIXED_POINT_TOL {
            for k in 0..c {
                v[k] = z[k] - p[k].ln();
            }
            return Ok(());
        }
    }
    Err(Error::Convergence {
        what: "KL fixed-point v-update",
        iterations: KL_FIXED_POINT_MAX_ITERS,
        residual: diff,
    })
}

/// Result of the cross-entropy `v`-update.
#[derive(Debug, Clone)]
pub struct CeUpdate {
    pub v: Vec<f64>,
    /// Maximizing distribution `q_c = √((z+a_c/2)² + 2p_cξ) − (z + a_c/2)`.
    pub q: Vec<f64>,
    /// Root of the scalar normalization equation.
    pub z: f64,
}

/// `√(y² + s) − y` without cancellation for large positive `y`.
#[inline]
fn sqrt_minus(y: f64, s: f64) -> f64 {
    let r = (y * y + s).sqrt();
    if y > 0.0 {
        s / (r + y)
    } else {
        r - y
    }
}

#[inline]
fn ce_g(z: f64, p: &[f64], a: &[f64], xi: f64) -> (f64, f64) {
    let mut g = -1.0;
    let mut dg = 0.0;
    for (&pc, &ac) in p.iter().zip(a) {
        let y = z + 0.5 * ac;
        let s = 2.0 * pc * xi;
        let r = (y * y + s).sqrt();
        if y > 0.0 {
            g += s / (r + y);
            dg -= s / (r * (r + y));
        } else {
            g += r - y;
            dg += y / r - 1.0;
        }
    }
    (g, dg)
}

/// CE `v`-update by a safeguarded Newton search for the root of
/// `g(z) = −1 + Σ_c [√((z+a_c/2)² + 2p_cξ) − (z+a_c/2)]`, then
/// `v_c = (z − a_c/2 − √((z+a_c/2)² + 2p_cξ)) / (2ξ)`.
pub fn v_update_ce(p: &[f64], a: &[f64], xi: f64, init_z: f64) -> Result<CeUpdate> {
    check_dims(a, p)?;
    check_xi(xi)?;
    if !init_z.is_finite() {
        return Err(Error::InvalidArgument("init_z must be finite".into()));
    }
    let mut v = vec![0.0; p.len()];
    let z = ce_update_in_place(p, a, xi, init_z, &mut v)?;
    let q = p
        .iter()
        .zip(a)
        .map(|(&pc, &ac)| sqrt_minus(z + 0.5 * ac, 2.0 * pc * xi))
        .collect();
    Ok(CeUpdate { v, q, z })
}

fn ce_update_in_place(p: &[f64], a: &[f64], xi: f64, z0: f64, v: &mut [f64]) -> Result<f64> {
    let z = ce_root(p, a, xi, z0)?;
    let inv = 1.0 / (2.0 * xi);
    for k in 0..p.len() {
        let y = z + 0.5 * a[k];
        let q = sqrt_minus(y, 2.0 * p[k] * xi);
        v[k] = -(q + a[k]) * inv;
    }
    Ok(z)
}

fn ce_root(p: &[f64], a: &[f64], xi: f64, z0: f64) -> Result<f64> {
    let (g0, _) = ce_g(z0, p, a, xi);
    if !g0.is_finite() {
        return Err(Error::Convergence {
            what: "CE bracket search",
            iterations: 0,
            residual: g0,
        });
    }
    if g0.abs() <= CE_ROOT_TOL {
        return Ok(z0);
    }
    // g is strictly decreasing: walk outward from z0 until the sign flips.
    let (mut lo, mut hi);
    let mut step = 1.0;
    let mut found = false;
    if g0 > 0.0 {
        lo = z0;
        hi = z0 + step;
        for _ in 0..MAX_DOUBLINGS {
            if ce_g(hi, p, a, xi).0 <= 0.0 {
                found = true;
                break;
            }
            lo = hi;
            step *= 2.0;
            hi = z0 + step;
        }
    } else {
        hi = z0;
        lo = z0 - step;
        for _ in 0..MAX_DOUBLINGS {
            if ce_g(lo, p, a, xi).0 >= 0.0 {
                found = true;
                break;
            }
            hi = lo;
            step *= 2.0;
            lo = z0 - step;
        }
    }
    if !found {
        return Err(Error::Convergence {
            what: "CE bracket search",
            iterations: MAX_DOUBLINGS,
            residual: g0,
        });
    }
    let mut z = z0.clamp(lo, hi);
    let mut last = g0;
    for _ in 0..CE_MAX_ITERS {
        let (g, dg) = ce_g(z, p, a, xi);
        last = g;
        if g.abs() <= CE_ROOT_TOL {
            return Ok(z);
        }
        if g > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        if hi - lo <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
            return Ok(z);
        }
        let newton = z - g / dg;
        z = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Convergence {
        what: "CE Newton v-update",
        iterations: CE_MAX_ITERS,
        residual: last,
    })
}

/// Minimizer over `q ≥ 0` of `p f(q/p) + quad·q² + lin·q`. Returns
/// `f64::INFINITY` when the objective decreases without bound.
fn coord_min(g: &GenericF, p: f64, quad: f64, lin: f64) -> Result<f64> {
    let deriv = |q: f64| (g.df)(q / p) + 2.0 * quad * q + lin;
    let d0 = deriv(0.0);
    if d0.is_finite() && d0 >= 0.0 {
        return Ok(0.0);
    }
    if d0.is_nan() {
        return Err(Error::InvalidDivergence(format!("{}: f'(0) is NaN", g.name)));
    }
    let mut lo = 0.0;
    let mut hi = p.max(1e-300);
    let mut bounded = false;
    for _ in 0..MAX_DOUBLINGS {
        let d = deriv(hi);
        if !d.is_finite() {
            return Err(Error::InvalidDivergence(format!(
                "{}: f' non-finite at {}",
                g.name,
                hi / p
            )));
        }
        if d > 0.0 {
            bounded = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
    if !bounded {
        return Ok(f64::INFINITY);
    }
    while hi - lo > GENERIC_INNER_WIDTH * hi.min(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = deriv(mid);
        if !d.is_finite() {
            return Err(Error::InvalidDivergence(format!(
                "{}: f' non-finite at {}",
                g.name,
                mid / p
            )));
        }
        if d > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generic `v`-update through the scalar reduction
/// `min_v … = −sup_θ [−θ + Σ_c min_{q_c≥0} p_c f(q_c/p_c) + (a_c+q_c)²/(4ξ) + θq_c]`.
///
/// The outer concave problem in `θ` is solved by golden-section search, each
/// inner problem by bisection on its derivative; `v = −(q + a)/(2ξ)`.
pub fn v_update_generic(g: &GenericF, p: &[f64], a: &[f64], xi: f64) -> Result<Vec<f64>> {
    check_dims(a, p)?;
    check_xi(xi)?;
    let quad = 1.0 / (4.0 * xi);
    let qs = |theta: f64| -> Result<Vec<f64>> {
        p.iter()
            .zip(a)
            .map(|(&pc, &ac)| coord_min(g, pc, quad, ac / (2.0 * xi) + theta))
            .collect()
    };
    let psi = |theta: f64| -> Result<f64> {
        let q = qs(theta)?;
        let mut total = -theta;
        for ((&qc, &pc), &ac) in q.iter().zip(p).zip(a) {
            let fv = (g.f)(qc / pc);
            if !fv.is_finite() {
                return Err(Error::InvalidDivergence(format!(
                    "{}: f non-finite at {}",
                    g.name,
                    qc / pc
                )));
            }
            total += pc * fv + (ac + qc).powi(2) * quad + theta * qc;
        }
        Ok(total)
    };
    let mass = |theta: f64| -> Result<f64> { Ok(qs(theta)?.iter().sum()) };

    // Σ q_c(θ) is nonincreasing; the maximizer of ψ sits where it crosses 1.
    let mut lo: f64 = -1.0;
    let mut hi: f64 = 1.0;
    let mut n = 0;
    while mass(lo)? < 1.0 {
        hi = hi.min(lo);
        lo *= 2.0;
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(Error::Convergence {
                what: "generic v-update bracket",
                iterations: n,
                residual: lo,
            });
        }
    }
    while mass(hi)? > 1.0 {
        lo = lo.max(hi);
        hi = if hi > 0.0 { hi * 2.0 } else { 1.0 };
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(Error::Convergence {
                what: "generic v-update bracket",
                iterations: n,
                residual: hi,
            });
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = psi(x1)?;
    let mut f2 = psi(x2)?;
    while hi - lo > GENERIC_OUTER_WIDTH {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = psi(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = psi(x1)?;
        }
    }
    let theta = 0.5 * (lo + hi);
    let q = qs(theta)?;
    Ok(q.iter()
        .zip(a)
        .map(|(qc, ac)| -(qc + ac) / (2.0 * xi))
        .collect())
}

/// Writes `p_c / (t + d_c)` with `d_c = max v − v_c` and `t > 0` chosen so the
/// entries sum to one. This is the CE tilt `p_c · (−1/(γ + v_c))` with
/// `γ = −max v − t`; returns `γ`.
pub(crate) fn ce_tilt_into(p: &[f64], v: &[f64], out: &mut [f64]) -> Result<f64> {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !vmax.is_finite() {
        return Err(Error::InvalidArgument("tilt direction is not finite".into()));
    }
    // F(t) = Σ p_c/(t + d_c) − 1 is decreasing, F(1) ≤ 0, and F(t) > 0 for
    // t below the weight of any class attaining the maximum.
    let top = v
        .iter()
        .zip(p)
        .filter(|(&vc, _)| vc == vmax)
        .map(|(_, &pc)| pc)
        .fold(0.0, f64::max);
    let eval = |t: f64| -> (f64, f64) {
        let mut s = -1.0;
        let mut ds = 0.0;
        for (&pc, &vc) in p.iter().zip(v) {
            let den = t + (vmax - vc);
            s += pc / den;
            ds -= pc / (den * den);
        }
        (s, ds)
    };
    let mut lo = 0.5 * top;
    let mut hi = 1.0;
    let mut t = 1.0;
    let (f_hi, _) = eval(hi);
    if f_hi.abs() > CE_ROOT_TOL {
        t = lo;
        for iter in 0..CE_MAX_ITERS {
            let (f, df) = eval(t);
            if f.abs() <= 1e-14 || hi - lo <= 4.0 * f64::EPSILON * t {
                break;
            }
            if f > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - f / df;
            t = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if iter + 1 == CE_MAX_ITERS {
                return Err(Error::Convergence {
                    what: "CE tilt normalization",
                    iterations: CE_MAX_ITERS,
                    residual: f,
                });
            }
        }
    }
    for ((o, &pc), &vc) in out.iter_mut().zip(p).zip(v) {
        *o = pc / (t + (vmax - vc));
    }
    Ok(-vmax - t)
}

/// Tilt for a generic divergence: `q_c = argmin_{q≥0} p_c f(q/p_c) + (θ − v_c) q`
/// with `θ` chosen by bisection so that `Σ q_c = 1`.
pub(crate) fn generic_tilt_into(g: &GenericF, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass = |theta: f64, out: &mut [f64]| -> Result<f64> {
        let mut s = 0.0;
        for ((o, &pc), &vc) in out.iter_mut().zip(p).zip(v) {
            *o = coord_min(g, pc, 0.0, theta - vc)?;
            s += *o;
        }
        Ok(s)
    };
    let mut step = 1.0;
    let mut hi = vmax + step;
    let mut n = 0;
    while mass(hi, out)? > 1.0 {
        step *= 2.0;
        hi = vmax + step;
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(Error::Convergence {
                what: "generic tilt bracket",
                iterations: n,
                residual: hi,
            });
        }
    }
    let mut lo = hi - 1.0;
    step = 1.0;
    while mass(lo, out)? < 1.0 {
        step *= 2.0;
        lo = hi - step;
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(Error::Convergence {
                what: "generic tilt bracket",
                iterations: n,
                residual: lo,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
        if mass(mid, out)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = mass(0.5 * (lo + hi), out)?;
    for o in out.iter_mut() {
        *o /= s;
    }
    Ok(())
}

//! Projector fields on the torus, the discretization map `map_a`, strictly
//! local Hamiltonians with twisted boundary conditions (`map_b`), and a
//! link-variable Chern number.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis, ShapeBuilder};
use ndarray_linalg::{Determinant, FactorizeHInto};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, cis, dagger, eye, kron, norm, CMat, MatrixJson, C64, I, ONE, ZERO};
use crate::soft_torus::{Dilation, LocalProjector};

/// Spectral cut and the minimum allowed distance of any eigenvalue from it.
pub const CUT: f64 = 0.5;
pub const GAP: f64 = 0.1;

pub trait ProjectorField {
    fn d(&self) -> usize;
    fn fiber_dim(&self) -> usize;
    fn eval(&self, theta: &[f64]) -> Result<CMat>;

    /// Orthonormal frame for the range of `E(theta)`.
    fn frame(&self, theta: &[f64]) -> Result<CMat> {
        let e = linalg::eigh(&self.eval(theta)?)?;
        Ok(linalg::frame_above(&e, CUT))
    }
}

fn pauli() -> [CMat; 3] {
    let sx = ndarray::arr2(&[[ZERO, ONE], [ONE, ZERO]]);
    let sy = ndarray::arr2(&[[ZERO, -I], [I, ZERO]]);
    let sz = ndarray::arr2(&[[ONE, ZERO], [ZERO, -ONE]]);
    [sx, sy, sz]
}

/// Two-band field `E = (I + n.sigma)/2` with
/// `n ~ (sin t2, sin(c t1), 1 - cos(c t1) - cos t2)`, a degree-`c` map for `c != 0`.
#[derive(Clone, Debug)]
pub struct TestBundle {
    pub c: i32,
}

pub fn make_test_bundle(c: i32) -> Result<TestBundle> {
    if c.abs() > 3 {
        return Err(Error::InvalidInput("|c| <= 3".into()));
    }
    Ok(TestBundle { c })
}

impl TestBundle {
    pub fn direction(&self, theta: &[f64]) -> [f64; 3] {
        if self.c == 0 {
            return [0.0, 0.0, 1.0];
        }
        let a = self.c as f64 * theta[0];
        let v = [theta[1].sin(), a.sin(), 1.0 - a.cos() - theta[1].cos()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

impl ProjectorField for TestBundle {
    fn d(&self) -> usize {
        2
    }

    fn fiber_dim(&self) -> usize {
        2
    }

    fn eval(&self, theta: &[f64]) -> Result<CMat> {
        let n = self.direction(theta);
        let s = pauli();
        let mut e = eye(2);
        for k in 0..3 {
            e = e + s[k].mapv(|z| z * n[k]);
        }
        Ok(e.mapv(|z| z * 0.5))
    }
}

#[derive(Clone, Debug)]
pub struct ConstantField {
    pub projector: CMat,
    pub d: usize,
}

impl ProjectorField for ConstantField {
    fn d(&self) -> usize {
        self.d
    }

    fn fiber_dim(&self) -> usize {
        self.projector.nrows()
    }

    fn eval(&self, _theta: &[f64]) -> Result<CMat> {
        Ok(self.projector.clone())
    }
}

pub struct DirectSumField<'a> {
    pub a: &'a dyn ProjectorField,
    pub b: &'a dyn ProjectorField,
}

impl ProjectorField for DirectSumField<'_> {
    fn d(&self) -> usize {
        self.a.d()
    }

    fn fiber_dim(&self) -> usize {
        self.a.fiber_dim() + self.b.fiber_dim()
    }

    fn eval(&self, theta: &[f64]) -> Result<CMat> {
        Ok(linalg::direct_sum(&self.a.eval(theta)?, &self.b.eval(theta)?))
    }
}

fn grid_points(d: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * m);
        for p in &out {
            for k in 0..m {
                let mut q = p.clone();
                q.push(2.0 * PI * k as f64 / m as f64);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Largest forward-difference quotient `||E(t + h e_i) - E(t)|| / h` over an
/// `m^d` grid.
pub fn lipschitz_estimate(field: &dyn ProjectorField, m: usize) -> Result<f64> {
    let h = 1e-5;
    let mut k: f64 = 0.0;
    for p in grid_points(field.d(), m) {
        let e0 = field.eval(&p)?;
        for i in 0..field.d() {
            let mut q = p.clone();
            q[i] += h;
            k = k.max(norm(&(field.eval(&q)? - &e0)) / h);
        }
    }
    Ok(k)
}

/// Idempotency defect and rank range over an `m^d` grid.
pub fn field_invariants(field: &dyn ProjectorField, m: usize) -> Result<(f64, usize, usize)> {
    let mut defect: f64 = 0.0;
    let (mut lo, mut hi) = (usize::MAX, 0);
    for p in grid_points(field.d(), m) {
        let e = field.eval(&p)?;
        defect = defect.max(norm(&(e.dot(&e) - &e)));
        let r = linalg::trace(&e).re.round() as usize;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((defect, lo, hi))
}

#[derive(Serialize)]
struct FieldSample {
    theta: Vec<f64>,
    projector: MatrixJson,
}

pub fn dump_field(field: &dyn ProjectorField, m: usize) -> Result<String> {
    let mut out = Vec::new();
    for p in grid_points(field.d(), m) {
        out.push(FieldSample { projector: MatrixJson::from_matrix(&field.eval(&p)?)?, theta: p });
    }
    serde_json::to_string(&out).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Projector in a joint eigenbasis of commuting unitaries, with the
/// eigenvalue angles of each unitary per basis vector.
#[derive(Clone, Debug)]
pub struct DiagonalizedProjector {
    pub projector: CMat,
    pub angles: Array2<f64>,
    pub epsilon: f64,
}

impl DiagonalizedProjector {
    pub fn dim(&self) -> usize {
        self.projector.nrows()
    }

    pub fn d(&self) -> usize {
        self.angles.ncols()
    }

    pub fn from_local_projector(p: &LocalProjector, seed: u64) -> Result<Self> {
        let jb = linalg::joint_diagonalize(&p.unitaries, seed)?;
        if jb.residual > 1e-8 {
            return Err(Error::NotCommuting(jb.residual));
        }
        let q = &jb.basis;
        let proj = linalg::hermitian_part(&dagger(q).dot(&p.projector).dot(q));
        let n = q.ncols();
        let mut angles = Array2::zeros((n, p.unitaries.len()));
        for (i, ph) in jb.phases.iter().enumerate() {
            for k in 0..n {
                angles[[k, i]] = ph[k];
            }
        }
        Ok(DiagonalizedProjector { projector: proj, angles, epsilon: p.epsilon })
    }
}

#[derive(Clone, Debug)]
pub struct LatticeProjector {
    pub n: usize,
    pub fiber: usize,
    pub local: LocalProjector,
}

fn shift(n: usize) -> CMat {
    let mut s = CMat::zeros((n, n));
    for k in 0..n {
        s[[(k + 1) % n, k]] = ONE;
    }
    s
}

/// Columns `exp(-2 pi i k n / N)/sqrt(N)`: shift eigenvectors with eigenvalue `exp(2 pi i k / N)`.
pub fn fourier_frame(n: usize) -> CMat {
    let sc = 1.0 / (n as f64).sqrt();
    CMat::from_shape_fn((n, n), |(j, k)| cis(-2.0 * PI * (k * j) as f64 / n as f64) * sc)
}

/// Shifts on the `N^d` grid tensored with the fiber, and
/// `P = sum_n |n><n| (x) E(2 pi n / N)`.
pub fn map_a(field: &dyn ProjectorField, n: usize) -> Result<LatticeProjector> {
    if n < 3 {
        return Err(Error::InvalidInput("N >= 3".into()));
    }
    let d = field.d();
    let fd = field.fiber_dim();
    let sites = n.pow(d as u32);
    let dim = sites * fd;
    let mut fibers = Vec::with_capacity(sites);
    for idx in 0..sites {
        fibers.push(field.eval(&site_angles(idx, n, d))?);
    }
    let mut p = CMat::zeros((dim, dim));
    for (idx, e) in fibers.iter().enumerate() {
        p.slice_mut(ndarray::s![idx * fd..(idx + 1) * fd, idx * fd..(idx + 1) * fd]).assign(e);
    }
    let mut epsilon: f64 = 0.0;
    for idx in 0..sites {
        let coords = site_coords(idx, n, d);
        for i in 0..d {
            let mut c = coords.clone();
            c[i] = (c[i] + 1) % n;
            epsilon = epsilon.max(norm(&(&fibers[idx] - &fibers[site_index(&c, n)])));
        }
    }
    let mut unitaries = Vec::with_capacity(d);
    for i in 0..d {
        let mut u = eye(1);
        for j in 0..d {
            u = kron(&u, &if i == j { shift(n) } else { eye(n) });
        }
        unitaries.push(kron(&u, &eye(fd)));
    }
    Ok(LatticeProjector { n, fiber: fd, local: LocalProjector { unitaries, projector: p, epsilon } })
}

fn site_coords(idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut c = vec![0; d];
    let mut r = idx;
    for j in (0..d).rev() {
        c[j] = r % n;
        r /= n;
    }
    c
}

fn site_index(c: &[usize], n: usize) -> usize {
    c.iter().fold(0, |a, &x| a * n + x)
}

fn site_angles(idx: usize, n: usize, d: usize) -> Vec<f64> {
    site_coords(idx, n, d).iter().map(|&k| 2.0 * PI * k as f64 / n as f64).collect()
}

impl LatticeProjector {
    pub fn d(&self) -> usize {
        self.local.unitaries.len()
    }

    /// Projector in the Fourier joint eigenbasis of the shifts.
    pub fn diagonalized(&self) -> DiagonalizedProjector {
        let (n, d, fd) = (self.n, self.d(), self.fiber);
        let mut q = eye(1);
        for _ in 0..d {
            q = kron(&q, &fourier_frame(n));
        }
        let q = kron(&q, &eye(fd));
        let proj = linalg::hermitian_part(&dagger(&q).dot(&self.local.projector).dot(&q));
        let dim = proj.nrows();
        let mut angles = Array2::zeros((dim, d));
        for k in 0..dim {
            let c = site_coords(k / fd, n, d);
            for i in 0..d {
                angles[[k, i]] = 2.0 * PI * c[i] as f64 / n as f64;
            }
        }
        DiagonalizedProjector { projector: proj, angles, epsilon: self.local.epsilon }
    }
}

/// Basis of `sum_a range(A_a^dag)`: the dilation restricted to the span where
/// `Pi` and the outcome-diagonal unitaries act, exactly.
pub fn reduced_dilation(dl: &Dilation, max_dim: usize) -> Result<DiagonalizedProjector> {
    use ndarray_linalg::SVD;
    let mut rows: Vec<CMat> = Vec::new();
    let mut labels = Vec::new();
    let mut total = 0;
    for (a, b) in dl.blocks.iter().enumerate() {
        let (_, sv, vt) = b.svd(false, true)?;
        let vt = vt.unwrap();
        let r = sv.iter().filter(|&&s| s > 1e-12).count();
        total += r;
        if total > max_dim {
            return Err(Error::TooLarge(format!("reduced dilation dimension exceeds {max_dim}")));
        }
        let mut red = vt.slice(ndarray::s![..r, ..]).to_owned();
        for k in 0..r {
            red.row_mut(k).mapv_inplace(|z| z * sv[k]);
        }
        rows.push(red);
        labels.extend(std::iter::repeat_n(a, r));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let w = ndarray::concatenate(Axis(0), &views).expect("blocks share a width");
    let mut p = CMat::zeros((total, total).f());
    ndarray::linalg::general_mat_mul(ONE, &w, &dagger(&w), ZERO, &mut p);
    let d = dl.d();
    let mut angles = Array2::zeros((total, d));
    for (k, &a) in labels.iter().enumerate() {
        for i in 0..d {
            angles[[k, i]] = dl.phases[a][i].arg().rem_euclid(2.0 * PI);
        }
    }
    Ok(DiagonalizedProjector { projector: p, angles, epsilon: dl.epsilon_compressed() })
}

/// `F~(w) = exp(1 - 1/(1 - w^2))` on `(-1, 1)`.
pub fn filter(w: f64) -> f64 {
    if w.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - w * w)).exp()
    } else {
        0.0
    }
}

/// Global rotation placing `+1` in the middle of the widest empty arc of all
/// eigenvalue angles.
pub fn cut_rotation(angles: &Array2<f64>) -> f64 {
    let mut all: Vec<f64> = angles.iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    if all.is_empty() {
        return 0.0;
    }
    let mut best = (2.0 * PI - all[all.len() - 1] + all[0], all[all.len() - 1]);
    for w in all.windows(2) {
        if w[1] - w[0] > best.0 {
            best = (w[1] - w[0], w[0]);
        }
    }
    let mid = best.1 + best.0 / 2.0;
    -mid
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Hermitian operator in the joint eigenbasis whose elements vanish between
/// eigenvectors with `|dx_j| >= S` or `|dy_j| >= S`.
#[derive(Clone, Debug)]
pub struct StrictlyLocalOp {
    pub h: CMat,
    /// Rotated eigenvalue angles in `(-pi, pi]`, one column per unitary.
    pub angles: Array2<f64>,
    pub s: f64,
    pub radius: f64,
    pub rotation: f64,
}

impl StrictlyLocalOp {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn d(&self) -> usize {
        self.angles.ncols()
    }

    /// Winding of the shortest arc from `angles[b]` to `angles[a]` through `+1`.
    pub fn crossing(&self, a: usize, b: usize, j: usize) -> i32 {
        let a2 = self.angles[[b, j]];
        let end = a2 + wrap(self.angles[[a, j]] - a2);
        if a2 < 0.0 && end > 0.0 {
            1
        } else if a2 > 0.0 && end < 0.0 {
            -1
        } else {
            0
        }
    }

    pub fn coordinates(&self, k: usize, j: usize) -> (f64, f64) {
        let a = self.angles[[k, j]];
        (a.cos(), a.sin())
    }

    /// `||[H, U_j]||` with `U_j` diagonal in the eigenbasis.
    pub fn commutator_norm(&self, h: &CMat, j: usize) -> f64 {
        let c = CMat::from_shape_fn(h.dim(), |(a, b)| h[[a, b]] * (cis(self.angles[[a, j]]) - cis(self.angles[[b, j]])));
        norm(&c)
    }
}

pub fn strictly_localize(p: &DiagonalizedProjector, radius: f64) -> Result<StrictlyLocalOp> {
    if !(radius > 0.0 && radius <= PI / 2.0 + 1e-15) {
        return Err(Error::InvalidInput(format!("radius {radius} outside (0, pi/2]")));
    }
    let s = 2f64.sqrt() * (radius / 2.0).sin();
    let rotation = cut_rotation(&p.angles);
    let angles = p.angles.mapv(|a| wrap(a + rotation));
    let n = p.dim();
    let d = p.d();
    let xs: Vec<Vec<(f64, f64)>> = (0..n).map(|k| (0..d).map(|j| (angles[[k, j]].cos(), angles[[k, j]].sin())).collect()).collect();
    let mut h = CMat::zeros((n, n).f());
    for b in 0..n {
        for a in 0..n {
            let v = p.projector[[a, b]];
            if v == ZERO {
                continue;
            }
            let mut w = 1.0;
            for j in 0..d {
                let (xa, ya) = xs[a][j];
                let (xb, yb) = xs[b][j];
                w *= filter((xa - xb) / s) * filter((ya - yb) / s);
                if w == 0.0 {
                    break;
                }
            }
            if w != 0.0 {
                h[[a, b]] = v * w;
            }
        }
    }
    Ok(StrictlyLocalOp { h, angles, s, radius, rotation })
}

pub fn localization_error(p: &DiagonalizedProjector, h: &StrictlyLocalOp) -> f64 {
    linalg::hermitian_norm(&(&h.h - &p.projector))
}

/// Multiply each element by `prod_j exp(i w_j theta_j)` with `w_j` the winding
/// of the shortest path between the two eigenvalues through `+1`.
pub fn twist(h: &StrictlyLocalOp, theta: &[f64]) -> Result<CMat> {
    twist_matrix(h, &h.h, theta)
}

pub fn twist_matrix(h: &StrictlyLocalOp, m: &CMat, theta: &[f64]) -> Result<CMat> {
    if theta.len() != h.d() {
        return Err(Error::InvalidInput("one angle per unitary".into()));
    }
    let n = h.dim();
    let mut out = CMat::zeros((n, n).f());
    for b in 0..n {
        for a in 0..n {
            let v = m[[a, b]];
            if v == ZERO {
                continue;
            }
            let mut phase = 0.0;
            for (j, t) in theta.iter().enumerate() {
                phase += h.crossing(a, b, j) as f64 * t;
            }
            out[[a, b]] = if phase == 0.0 { v } else { v * cis(phase) };
        }
    }
    Ok(out)
}

/// Number of eigenvalues of `h` below `shift`, from the inertia of a
/// Bunch-Kaufman factorization of `h - shift`.
pub fn count_below(h: &CMat, shift: f64) -> Result<usize> {
    let n = h.nrows();
    let mut a = CMat::zeros((n, n).f());
    a.assign(h);
    for k in 0..n {
        a[[k, k]] -= shift;
    }
    let bk = a.factorizeh_into()?;
    let (a, ipiv) = (bk.a, bk.ipiv);
    let mut neg = 0;
    let mut k = n;
    while k > 0 {
        let j = k - 1;
        if ipiv[j] > 0 {
            if a[[j, j]].re < 0.0 {
                neg += 1;
            }
            k -= 1;
        } else {
            let (p, q, r) = (a[[j - 1, j - 1]].re, a[[j - 1, j]], a[[j, j]].re);
            let tr = p + r;
            let det = p * r - q.norm_sqr();
            if det < 0.0 {
                neg += 1;
            } else if tr < 0.0 {
                neg += 2;
            }
            k -= 2;
        }
    }
    Ok(neg)
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeReport {
    pub dim: usize,
    pub above_cut: usize,
    pub near_cut: usize,
    pub min_distance: Option<f64>,
}

/// Spectrum of `H_loc(0)` relative to the cut: count above `1/2` and count
/// within `GAP` of it. Uses inertia counts for large matrices.
pub fn regime_check(h: &CMat) -> Result<RegimeReport> {
    let n = h.nrows();
    if n <= 1500 {
        let (w, _) = linalg::eigh_raw(h)?;
        let above = w.iter().filter(|&&x| x > CUT).count();
        let near = w.iter().filter(|&&x| (x - CUT).abs() < GAP).count();
        let md = w.iter().map(|x| (x - CUT).abs()).fold(f64::INFINITY, f64::min);
        return Ok(RegimeReport { dim: n, above_cut: above, near_cut: near, min_distance: Some(md) });
    }
    let lo = count_below(h, CUT - GAP)?;
    let mid = count_below(h, CUT)?;
    let hi = count_below(h, CUT + GAP)?;
    Ok(RegimeReport { dim: n, above_cut: n - mid, near_cut: hi - lo, min_distance: None })
}

/// `theta -> spectral projector of twist(H_loc, theta)` above `1/2`,
/// returning out-of-regime when an eigenvalue lies within `GAP` of the cut
/// or the rank changes.
#[derive(Clone, Debug)]
pub struct TwistedField {
    pub op: StrictlyLocalOp,
    pub rank: usize,
    pub grid: usize,
}

impl TwistedField {
    pub fn spectrum(&self, theta: &[f64]) -> Result<(Array1<f64>, CMat)> {
        linalg::eigh_raw(&twist(&self.op, theta)?)
    }
}

impl ProjectorField for TwistedField {
    fn d(&self) -> usize {
        self.op.d()
    }

    fn fiber_dim(&self) -> usize {
        self.op.dim()
    }

    fn eval(&self, theta: &[f64]) -> Result<CMat> {
        let f = self.frame(theta)?;
        Ok(f.dot(&dagger(&f)))
    }

    fn frame(&self, theta: &[f64]) -> Result<CMat> {
        let (w, v) = self.spectrum(theta)?;
        let md = w.iter().map(|x| (x - CUT).abs()).fold(f64::INFINITY, f64::min);
        if md < GAP {
            return Err(Error::OutOfRegime(format!("eigenvalue within {md:.3e} of 1/2 at theta = {theta:?}")));
        }
        let cols: Vec<usize> = (0..w.len()).filter(|&k| w[k] > CUT).collect();
        if cols.len() != self.rank {
            return Err(Error::OutOfRegime(format!("rank {} != {} at theta = {theta:?}", cols.len(), self.rank)));
        }
        Ok(v.select(Axis(1), &cols))
    }
}

pub struct MapB {
    pub field: TwistedField,
    pub regime: RegimeReport,
    pub localization_error: Option<f64>,
}

pub fn map_b(p: &DiagonalizedProjector, radius: f64, grid: usize) -> Result<MapB> {
    let op = strictly_localize(p, radius)?;
    let regime = regime_check(&op.h)?;
    if regime.near_cut > 0 {
        return Err(Error::OutOfRegime(format!(
            "{} of {} eigenvalues of H_loc(0) within {GAP} of 1/2",
            regime.near_cut, regime.dim
        )));
    }
    let localization_error = if p.dim() <= 1500 { Some(localization_error(p, &op)) } else { None };
    let rank = regime.above_cut;
    Ok(MapB { field: TwistedField { op, rank, grid }, regime, localization_error })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChernResult {
    pub chern: i64,
    pub raw: f64,
    pub residual: f64,
    pub grid: usize,
}

fn link(a: &CMat, b: &CMat) -> Result<C64> {
    let ov = dagger(a).dot(b);
    if ov.nrows() == 0 {
        return Ok(ONE);
    }
    let (sign, ln) = ov.sln_det()?;
    if ln < -30.0 {
        return Err(Error::GridTooCoarse(f64::NAN));
    }
    Ok(sign)
}

/// Link-variable Chern number on an `M x M` grid, streaming one row of frames
/// at a time.
pub fn chern_number(field: &dyn ProjectorField, m: usize) -> Result<ChernResult> {
    if field.d() != 2 {
        return Err(Error::Unsupported("Chern number needs d = 2".into()));
    }
    if m < 2 {
        return Err(Error::InvalidInput("grid M >= 2".into()));
    }
    let ang = |k: usize| 2.0 * PI * k as f64 / m as f64;
    let row = |i: usize| -> Result<Vec<CMat>> { (0..m).map(|j| field.frame(&[ang(i), ang(j)])).collect() };
    let first = row(0)?;
    let rank = first[0].ncols();
    let mut cur = first.clone();
    let mut total = 0.0;
    for i in 0..m {
        let next = if i + 1 == m { first.clone() } else { row(i + 1)? };
        if next.iter().any(|f| f.ncols() != rank) {
            return Err(Error::OutOfRegime("rank changes across the grid".into()));
        }
        for j in 0..m {
            let jn = (j + 1) % m;
            let (a, b, c, d) = (&cur[j], &next[j], &next[jn], &cur[jn]);
            let w = link(a, b)? * link(b, c)? * link(c, d)? * link(d, a)?;
            total += w.arg();
        }
        cur = next;
    }
    let raw = total / (2.0 * PI);
    let chern = raw.round();
    let residual = (raw - chern).abs();
    if residual >= 0.05 {
        return Err(Error::GridTooCoarse(residual));
    }
    Ok(ChernResult { chern: chern as i64, raw, residual, grid: m })
}

/// Voiculescu pair through the POVM dilation to a twisted field and its Chern number.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub n: usize,
    pub epsilon_prime: f64,
    pub reduced_dim: usize,
    pub regime: Option<RegimeReport>,
    pub chern: Option<ChernResult>,
}

pub const REDUCED_LIMIT: usize = 8000;

pub fn full_pipeline(n: usize, radius: f64, grid: usize) -> std::result::Result<PipelineReport, (Error, PipelineReport)> {
    use crate::soft_torus::{map_f, voiculescu_pair, Window};
    let mut report = PipelineReport { n, epsilon_prime: f64::NAN, reduced_dim: 0, regime: None, chern: None };
    let t = voiculescu_pair(n).map_err(|e| (e, report.clone()))?;
    let f = map_f(&t, Window::Bump).map_err(|e| (e, report.clone()))?;
    report.epsilon_prime = f.epsilon;
    let red = reduced_dilation(&f.dilation, REDUCED_LIMIT).map_err(|e| (e, report.clone()))?;
    report.reduced_dim = red.dim();
    let op = strictly_localize(&red, radius).map_err(|e| (e, report.clone()))?;
    drop(red);
    let regime = regime_check(&op.h).map_err(|e| (e, report.clone()))?;
    report.regime = Some(regime.clone());
    if regime.near_cut > 0 {
        let msg = format!("{} of {} eigenvalues of H_loc(0) within {GAP} of 1/2", regime.near_cut, regime.dim);
        return Err((Error::OutOfRegime(msg), report));
    }
    let field = TwistedField { op, rank: regime.above_cut, grid };
    let c = chern_number(&field, grid).map_err(|e| (e, report.clone()))?;
    report.chern = Some(c);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, rng};
    use proptest::prelude::*;

    fn random_strictly_local(n: usize, seed: u64, radius: f64) -> (DiagonalizedProjector, StrictlyLocalOp) {
        use rand::Rng;
        let mut r = rng(seed);
        let h = linalg::random_hermitian(n, &mut r);
        let angles = Array2::from_shape_fn((n, 2), |_| r.random_range(0.0..2.0 * PI));
        let p = DiagonalizedProjector { projector: h, angles, epsilon: 0.0 };
        let op = strictly_localize(&p, radius).unwrap();
        (p, op)
    }

    #[test]
    fn test_bundle_chern_numbers() {
        for c in -2..=2 {
            let b = make_test_bundle(c).unwrap();
            let r24 = chern_number(&b, 24).unwrap();
            let r48 = chern_number(&b, 48).unwrap();
            assert_eq!(r24.chern, c as i64, "{c} {r24:?}");
            assert_eq!(r24.chern, r48.chern);
        }
        assert!(make_test_bundle(4).is_err());
    }

    #[test]
    fn test_bundle_is_rank_one() {
        let b = make_test_bundle(1).unwrap();
        let (defect, lo, hi) = field_invariants(&b, 16).unwrap();
        assert!(defect < 1e-12);
        assert_eq!((lo, hi), (1, 1));
        let k = lipschitz_estimate(&b, 32).unwrap();
        assert!(k > 0.0 && k.is_finite());
    }

    #[test]
    fn constant_and_sum_fields() {
        let c = ConstantField { projector: ndarray::arr2(&[[ONE, ZERO], [ZERO, ZERO]]), d: 2 };
        assert_eq!(chern_number(&c, 8).unwrap().chern, 0);
        let b1 = make_test_bundle(1).unwrap();
        let b2 = make_test_bundle(-2).unwrap();
        let s = DirectSumField { a: &b1, b: &b2 };
        assert_eq!(chern_number(&s, 24).unwrap().chern, -1);
        let s3 = DirectSumField { a: &b1, b: &c };
        assert_eq!(chern_number(&s3, 24).unwrap().chern, 1);
    }

    #[test]
    fn chern_rejects_coarse_or_wrong_d() {
        let b = make_test_bundle(3).unwrap();
        let r = chern_number(&b, 3);
        assert!(r.is_err() || r.unwrap().chern != 3);
        let c = ConstantField { projector: eye(1), d: 1 };
        assert!(matches!(chern_number(&c, 8), Err(Error::Unsupported(_))));
    }

    #[test]
    fn map_a_examples() {
        let c = ConstantField { projector: ndarray::arr2(&[[ONE, ZERO], [ZERO, ZERO]]), d: 2 };
        let lp = map_a(&c, 5).unwrap();
        assert_eq!(lp.local.epsilon, 0.0);
        let b = make_test_bundle(1).unwrap();
        let k = lipschitz_estimate(&b, 64).unwrap();
        for n in [6usize, 8] {
            let lp = map_a(&b, n).unwrap();
            assert!(lp.local.epsilon <= 2.0 * PI * k / n as f64);
            let rec = crate::soft_torus::locality_epsilon(&lp.local.projector, &lp.local.unitaries);
            assert!((rec - lp.local.epsilon).abs() < 1e-12);
            let rank = linalg::trace(&lp.local.projector).re.round() as usize;
            assert_eq!(rank, n * n);
            assert!(crate::soft_torus::commutator_epsilon(&lp.local.unitaries) < 1e-14);
        }
        assert!(map_a(&b, 2).is_err());
    }

    #[test]
    fn fourier_basis_diagonalizes_shifts() {
        let b = make_test_bundle(1).unwrap();
        let lp = map_a(&b, 4).unwrap();
        let dp = lp.diagonalized();
        let mut q = kron(&fourier_frame(4), &fourier_frame(4));
        q = kron(&q, &eye(2));
        for (i, u) in lp.local.unitaries.iter().enumerate() {
            let t = dagger(&q).dot(u).dot(&q);
            let want = CMat::from_diag(&dp.angles.column(i).mapv(cis));
            assert!(max_abs(&(t - want)) < 1e-12);
        }
        let alt = DiagonalizedProjector::from_local_projector(&lp.local, 1).unwrap();
        let mut a: Vec<f64> = linalg::eigh(&alt.projector).unwrap().eigenvalues.to_vec();
        let mut bb: Vec<f64> = linalg::eigh(&dp.projector).unwrap().eigenvalues.to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        bb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in a.iter().zip(&bb) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn strict_locality_zeros() {
        let (p, op) = random_strictly_local(40, 3, PI / 4.0);
        let mut zeros = 0;
        for a in 0..40 {
            for b in 0..40 {
                let far = (0..2).any(|j| {
                    let (xa, ya) = op.coordinates(a, j);
                    let (xb, yb) = op.coordinates(b, j);
                    (xa - xb).abs() >= op.s || (ya - yb).abs() >= op.s
                });
                if far {
                    assert_eq!(op.h[[a, b]], ZERO);
                    zeros += 1;
                }
                let dist = (0..2).map(|j| wrap(op.angles[[a, j]] - op.angles[[b, j]]).abs()).fold(0.0, f64::max);
                if dist >= op.radius {
                    assert_eq!(op.h[[a, b]], ZERO);
                }
            }
        }
        assert!(zeros > 0);
        assert!(linalg::hermiticity_defect(&op.h) < 1e-15);
        let diag = DiagonalizedProjector { projector: CMat::from_diag(&p.projector.diag().to_owned()), ..p.clone() };
        let od = strictly_localize(&diag, PI / 4.0).unwrap();
        assert_eq!(od.h, diag.projector);
        assert!(strictly_localize(&p, 2.0).is_err());
    }

    #[test]
    fn twist_examples() {
        let (_, op) = random_strictly_local(30, 5, PI / 2.0);
        assert_eq!(twist(&op, &[0.0, 0.0]).unwrap(), op.h);
        let t = twist(&op, &[0.7, -1.3]).unwrap();
        assert!(linalg::hermiticity_defect(&t) < 1e-12);
        for a in 0..30 {
            for b in 0..30 {
                assert_eq!(op.h[[a, b]] == ZERO, t[[a, b]] == ZERO);
            }
        }
    }

    #[test]
    fn cut_rotation_avoids_plus_one() {
        let lp = map_a(&make_test_bundle(1).unwrap(), 6).unwrap();
        let dp = lp.diagonalized();
        let r = cut_rotation(&dp.angles);
        let min = dp.angles.iter().map(|a| wrap(a + r).abs()).fold(f64::INFINITY, f64::min);
        assert!((min - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn inertia_matches_eigenvalues() {
        let mut r = rng(7);
        for n in [5usize, 17, 40] {
            let h = linalg::random_hermitian(n, &mut r);
            let w = linalg::eigh(&h).unwrap().eigenvalues;
            for s in [-0.5, 0.0, 0.3, 1.1] {
                let want = w.iter().filter(|&&x| x < s).count();
                assert_eq!(count_below(&h, s).unwrap(), want, "{n} {s}");
            }
        }
    }

    #[test]
    fn roundtrip_test_bundle() {
        for c in [-1, 0, 1] {
            let b = make_test_bundle(c).unwrap();
            let lp = map_a(&b, 12).unwrap();
            let dp = lp.diagonalized();
            let mb = map_b(&dp, PI / 2.0, 12).unwrap();
            assert_eq!(mb.field.rank, 144);
            let r = chern_number(&mb.field, 12).unwrap();
            assert_eq!(r.chern, chern_number(&b, 24).unwrap().chern, "{c}");
        }
    }

    #[test]
    fn twisted_operator_bounds() {
        let b = make_test_bundle(1).unwrap();
        let lp = map_a(&b, 8).unwrap();
        let dp = lp.diagonalized();
        let op = strictly_localize(&dp, PI / 2.0).unwrap();
        let eps = dp.epsilon;
        for theta in [[0.0, 0.0], [1.0, 2.0], [PI, -0.5]] {
            let ht = twist(&op, &theta).unwrap();
            for j in 0..2 {
                assert!(op.commutator_norm(&ht, j) <= 4.0 * eps, "{theta:?} {j}");
            }
        }
    }

    #[test]
    fn trivial_projector_gives_constant_field() {
        let angles = Array2::from_shape_fn((6, 2), |(k, j)| 0.3 + k as f64 + 0.5 * j as f64);
        let p = CMat::from_diag(&Array1::from(vec![ONE, ZERO, ONE, ZERO, ZERO, ONE]));
        let dp = DiagonalizedProjector { projector: p.clone(), angles, epsilon: 0.0 };
        let mb = map_b(&dp, PI / 4.0, 6).unwrap();
        for th in [[0.0, 0.0], [1.0, 4.0]] {
            assert!(max_abs(&(mb.field.eval(&th).unwrap() - &p)) < 1e-12);
        }
        assert_eq!(chern_number(&mb.field, 6).unwrap().chern, 0);
    }

    #[test]
    fn dilation_reduction_is_exact() {
        use crate::soft_torus::{map_f, voiculescu_pair, Window};
        let t = voiculescu_pair(3).unwrap();
        let f = map_f(&t, Window::Bump).unwrap();
        let red = reduced_dilation(&f.dilation, 5000).unwrap();
        let lp = f.dilation.to_local_projector().unwrap();
        let full = linalg::eigh(&lp.projector).unwrap().eigenvalues;
        let part = linalg::eigh(&red.projector).unwrap().eigenvalues;
        let nz = |w: &Array1<f64>| w.iter().filter(|&&x| x > 1e-9).count();
        assert_eq!(nz(&full), nz(&part));
        assert!((linalg::trace(&red.projector).re - 9.0).abs() < 1e-10);
        assert!(matches!(reduced_dilation(&f.dilation, 10), Err(Error::TooLarge(_))));
    }

    #[test]
    fn field_dump_shape() {
        let b = make_test_bundle(1).unwrap();
        let js: serde_json::Value = serde_json::from_str(&dump_field(&b, 3).unwrap()).unwrap();
        assert_eq!(js.as_array().unwrap().len(), 9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn twist_norm_and_composition(seed in 0u64..10_000, t1 in -PI..PI, t2 in -PI..PI, p1 in -PI..PI, p2 in -PI..PI) {
            let (_, op) = random_strictly_local(16, seed, PI / 2.0);
            let hn = norm(&op.h);
            let a = twist(&op, &[t1, t2]).unwrap();
            prop_assert!(norm(&a) <= 4.0 * hn + 1e-12);
            let ab = twist_matrix(&op, &a, &[p1, p2]).unwrap();
            let direct = twist(&op, &[t1 + p1, t2 + p2]).unwrap();
            prop_assert!(max_abs(&(ab - direct)) < 1e-10);
        }
    }
}

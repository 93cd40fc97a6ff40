//! Dense complex matrices: norms, polar decomposition, Hermitian functional
//! calculus, joint diagonalization of commuting unitaries, Haar sampling and
//! JSON serialization.

use ndarray::{s, Array1, Array2, Axis, ShapeBuilder};
use ndarray_linalg::{Eig, EigVals, EigValsh, QR, SVD, UPLO};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::os::raw::c_char;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type Rng64 = ChaCha8Rng;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

pub fn eye(n: usize) -> CMat {
    Array2::eye(n)
}

pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn transpose(m: &CMat) -> CMat {
    m.t().to_owned()
}

pub fn conj(m: &CMat) -> CMat {
    m.mapv(|z| z.conj())
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == ZERO {
                continue;
            }
            out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&b.mapv(|y| x * y));
        }
    }
    out
}

/// Block-diagonal direct sum.
pub fn direct_sum(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar + br, ac + bc));
    out.slice_mut(s![..ar, ..ac]).assign(a);
    out.slice_mut(s![ar.., ac..]).assign(b);
    out
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest singular value; zero for an empty matrix.
pub fn norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return frobenius(m);
    }
    match m.svd(false, false) {
        Ok((_, sv, _)) => sv.iter().cloned().fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}

/// Operator norm of a Hermitian matrix from its eigenvalues.
pub fn hermitian_norm(h: &CMat) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    match h.eigvalsh(UPLO::Lower) {
        Ok(w) => w.iter().fold(0.0, |a: f64, x| a.max(x.abs())),
        Err(_) => f64::NAN,
    }
}

pub fn operator_norm(m: &CMat) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if !is_finite(m) {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let n = norm(m);
    if n.is_nan() {
        return Err(Error::Backend("svd failed".into()));
    }
    Ok(n)
}

pub fn singular_values(m: &CMat) -> Result<Array1<f64>> {
    let (_, sv, _) = m.svd(false, false)?;
    Ok(sv)
}

/// ‖U†U − I‖.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.ncols();
    norm(&(dagger(u).dot(u) - eye(n)))
}

/// Largest entry of H − H†.
pub fn hermiticity_defect(h: &CMat) -> f64 {
    max_abs(&(h - &dagger(h)))
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + &dagger(m)).mapv(|z| z * 0.5)
}

/// `polar(X) = X (X†X)^{-1/2}`, computed from the SVD `X = WΣV†` as `WV†`.
pub fn polar(x: &CMat) -> Result<CMat> {
    if x.nrows() != x.ncols() || x.is_empty() {
        return Err(Error::InvalidInput("polar needs a non-empty square matrix".into()));
    }
    let (w, sv, vt) = x.svd(true, true)?;
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 1e-12 {
        return Err(Error::RankDeficient(smin));
    }
    Ok(w.unwrap().dot(&vt.unwrap()))
}

#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: CMat,
}

impl HermitianEig {
    pub fn reconstruct(&self) -> CMat {
        let q = &self.eigenvectors;
        let scaled = q * &self.eigenvalues.mapv(C64::from).insert_axis(Axis(0));
        scaled.dot(&dagger(q))
    }
}

fn check_hermitian(h: &CMat) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    if !is_finite(h) {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let scale = max_abs(h).max(1.0);
    let defect = hermiticity_defect(h);
    if defect > 1e-10 * scale {
        return Err(Error::InvalidInput(format!("matrix is not Hermitian (defect {defect:e})")));
    }
    Ok(())
}

/// Eigen-decomposition of an exactly Hermitian matrix. The input is copied to
/// column-major order: the backend returns conjugated vectors for row-major
/// complex input.
pub fn eigh_raw(h: &CMat) -> Result<(Array1<f64>, CMat)> {
    let n = h.nrows();
    let mut hf = CMat::zeros(h.dim().f());
    hf.assign(h);
    if n == 0 {
        return Ok((Array1::zeros(0), hf));
    }
    let mut w = Array1::<f64>::zeros(n);
    let ni = n as i32;
    let (jobz, uplo) = (b'V' as c_char, b'L' as c_char);
    let mut info = 0;
    let mut wq = [C64::new(0.0, 0.0)];
    let mut rq = [0.0f64];
    let mut iq = [0i32];
    let a = hf.as_mut_ptr() as *mut lapack_sys::__BindgenComplex<f64>;
    // SAFETY: column-major n x n buffer; workspace sizes come from the query call.
    unsafe {
        lapack_sys::zheevd_(
            &jobz, &uplo, &ni, a, &ni, w.as_mut_ptr(),
            wq.as_mut_ptr() as *mut _, &-1, rq.as_mut_ptr(), &-1, iq.as_mut_ptr(), &-1, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Backend(format!("zheevd workspace query failed: {info}")));
    }
    let lwork = wq[0].re as i32;
    let lrwork = rq[0] as i32;
    let liwork = iq[0];
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevd_(
            &jobz, &uplo, &ni, a, &ni, w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _, &lwork, rwork.as_mut_ptr(), &lrwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Backend(format!("zheevd failed: {info}")));
    }
    Ok((w, hf))
}

/// General eigen-decomposition with right eigenvectors as columns.
pub fn eig_raw(m: &CMat) -> Result<(Array1<C64>, CMat)> {
    let mut mf = CMat::zeros(m.dim().f());
    mf.assign(m);
    let (w, v) = mf.eig()?;
    Ok((w, v))
}

/// Upper-triangular factor `R` of the QR decomposition of a tall matrix.
pub fn qr_r(m: &CMat) -> Result<CMat> {
    if m.nrows() < m.ncols() {
        return Err(Error::InvalidInput(format!("qr_r needs rows >= cols, got {:?}", m.dim())));
    }
    if m.ncols() == 0 {
        return Ok(CMat::zeros((0, 0)));
    }
    let mut mf = CMat::zeros(m.dim().f());
    mf.assign(m);
    let (_, r) = mf.qr()?;
    Ok(r)
}

pub fn eig_values(m: &CMat) -> Result<Array1<C64>> {
    let mut mf = CMat::zeros(m.dim().f());
    mf.assign(m);
    Ok(mf.eigvals()?)
}

pub fn eigh(h: &CMat) -> Result<HermitianEig> {
    check_hermitian(h)?;
    let (w, v) = eigh_raw(&hermitian_part(h))?;
    Ok(HermitianEig { eigenvalues: w, eigenvectors: v })
}

/// `Q f(Λ) Q†` for Hermitian `H = QΛQ†`.
pub fn hermitian_function<F: Fn(f64) -> f64>(f: F, h: &CMat) -> Result<CMat> {
    let e = eigh(h)?;
    Ok(apply_spectral(&e, f))
}

pub fn apply_spectral<F: Fn(f64) -> f64>(e: &HermitianEig, f: F) -> CMat {
    let q = &e.eigenvectors;
    let fw = e.eigenvalues.mapv(|x| C64::from(f(x)));
    let scaled = q * &fw.insert_axis(Axis(0));
    scaled.dot(&dagger(q))
}

/// Spectral projector onto eigenvalues above `cut`, as an orthonormal frame.
pub fn frame_above(e: &HermitianEig, cut: f64) -> CMat {
    let cols: Vec<usize> = (0..e.eigenvalues.len()).filter(|&k| e.eigenvalues[k] > cut).collect();
    e.eigenvectors.select(Axis(1), &cols)
}

#[derive(Clone, Debug)]
pub struct JointEigenbasis {
    pub basis: CMat,
    pub phases: Vec<Vec<f64>>,
    /// Frobenius norm of the off-diagonal part of `Q†U_iQ`, maximized over `i`.
    pub residual: f64,
}

impl JointEigenbasis {
    pub fn eigenvalues(&self, i: usize) -> Vec<C64> {
        self.phases[i].iter().map(|&p| cis(p)).collect()
    }
}

fn random_combination(us: &[CMat], rng: &mut Rng64) -> CMat {
    let n = us[0].nrows();
    let mut h = CMat::zeros((n, n));
    for u in us {
        let ud = dagger(u);
        let c1: f64 = rng.random_range(-1.0..1.0);
        let c2: f64 = rng.random_range(-1.0..1.0);
        let x = (u + &ud).mapv(|z| z * 0.5);
        let y = (u - &ud).mapv(|z| z / (2.0 * I));
        h = h + x.mapv(|z| z * c1) + y.mapv(|z| z * c2);
    }
    hermitian_part(&h)
}

fn refine(us: &[CMat], frame: CMat, rng: &mut Rng64, depth: usize) -> Result<CMat> {
    let m = frame.ncols();
    if m <= 1 || depth > 6 {
        return Ok(frame);
    }
    let fd = dagger(&frame);
    let restricted: Vec<CMat> = us.iter().map(|u| fd.dot(&u.dot(&frame))).collect();
    let scalar = restricted.iter().all(|b| {
        let t = trace(b) / m as f64;
        max_abs(&(b - &eye(m).mapv(|z| z * t))) < 1e-12
    });
    if scalar {
        return Ok(frame);
    }
    let h = random_combination(&restricted, rng);
    let (w, q) = eigh_raw(&h)?;
    let mut out = frame.dot(&q);
    let tol = 1e-6;
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && w[end] - w[end - 1] < tol {
            end += 1;
        }
        if end - start > 1 {
            let sub = out.slice(s![.., start..end]).to_owned();
            let sub = refine(us, sub, rng, depth + 1)?;
            out.slice_mut(s![.., start..end]).assign(&sub);
        }
        start = end;
    }
    Ok(out)
}

/// Common eigenbasis of pairwise commuting unitaries, from a random Hermitian
/// combination with recursion on degenerate clusters.
pub fn joint_diagonalize(us: &[CMat], seed: u64) -> Result<JointEigenbasis> {
    if us.is_empty() {
        return Err(Error::InvalidInput("no unitaries".into()));
    }
    let n = us[0].nrows();
    for u in us {
        if u.dim() != (n, n) {
            return Err(Error::InvalidInput("unitaries must share a square shape".into()));
        }
    }
    for i in 0..us.len() {
        for j in i + 1..us.len() {
            let c = norm(&commutator(&us[i], &us[j]));
            if c > 1e-8 {
                return Err(Error::NotCommuting(c));
            }
        }
    }
    let mut r = rng(seed);
    let basis = refine(us, eye(n), &mut r, 0)?;
    let bd = dagger(&basis);
    let mut phases = Vec::with_capacity(us.len());
    let mut residual: f64 = 0.0;
    for u in us {
        let t = bd.dot(&u.dot(&basis));
        let mut ph = Vec::with_capacity(n);
        let mut off = t.clone();
        for k in 0..n {
            ph.push(t[[k, k]].arg().rem_euclid(2.0 * PI));
            off[[k, k]] = ZERO;
        }
        residual = residual.max(frobenius(&off));
        phases.push(ph);
    }
    Ok(JointEigenbasis { basis, phases, residual })
}

pub fn ginibre(k: usize, rng: &mut Rng64) -> CMat {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    Array2::from_shape_simple_fn((k, k), || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    })
}

/// Haar unitary from the QR decomposition of a complex Ginibre matrix, with
/// the phases of `R`'s diagonal moved into `Q`.
pub fn haar_unitary_rng(k: usize, rng: &mut Rng64) -> CMat {
    let g = ginibre(k, rng);
    let (q, r) = g.qr().expect("qr of a Ginibre matrix");
    let mut q = q;
    for j in 0..k {
        let d = r[[j, j]];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q.column_mut(j).mapv_inplace(|z| z * ph);
    }
    q
}

pub fn haar_unitary(k: usize, seed: u64) -> CMat {
    haar_unitary_rng(k, &mut rng(seed))
}

/// GUE-like Hermitian matrix with unit-variance off-diagonal entries.
pub fn random_hermitian(k: usize, rng: &mut Rng64) -> CMat {
    let g = ginibre(k, rng);
    hermitian_part(&g)
}

pub fn random_unit_vector(k: usize, rng: &mut Rng64) -> Array1<C64> {
    let v = ginibre(k, rng).column(0).to_owned();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMat) -> Result<Self> {
        if !is_finite(m) {
            return Err(Error::InvalidInput("non-finite entries cannot be serialized".into()));
        }
        let data = m.iter().map(|z| [z.re, z.im]).collect();
        Ok(MatrixJson { rows: m.nrows(), cols: m.ncols(), data })
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidInput("data length does not match shape".into()));
        }
        let v = self.data.iter().map(|p| C64::new(p[0], p[1])).collect();
        Array2::from_shape_vec((self.rows, self.cols), v).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

pub fn to_json(m: &CMat) -> Result<String> {
    serde_json::to_string(&MatrixJson::from_matrix(m)?).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn from_json(s: &str) -> Result<CMat> {
    let mj: MatrixJson = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
    mj.to_matrix()
}

pub fn real(m: &Array2<f64>) -> CMat {
    m.mapv(C64::from)
}

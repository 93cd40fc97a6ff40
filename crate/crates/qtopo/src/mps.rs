//! Matrix product states with a uniform bulk, their transfer operators, and
//! exact connected correlators.
//!
//! Cost model: a correlator with operators on intervals of total length `l`
//! costs `O(N d k^3 + d^(2l) k^2)` per operator-Schmidt term; a two-interval
//! operator contributes at most `d^(2 l_1)` terms. Transfer spectra cost
//! `O(k^6)`.

use ndarray::Array1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, dagger, kron, norm, CMat, C64, ONE, ZERO};

#[derive(Clone, Debug)]
pub struct MpsChain {
    pub n_sites: usize,
    pub phys: usize,
    pub bond: usize,
    pub bulk: Vec<CMat>,
    pub left: Vec<CMat>,
    pub right: Vec<CMat>,
    pub manifestly_hermitian: bool,
}

fn check_bulk(bulk: &[CMat]) -> Result<(usize, usize)> {
    let d = bulk.len();
    if d == 0 {
        return Err(Error::InvalidInput("no bulk tensors".into()));
    }
    let k = bulk[0].nrows();
    if k == 0 || bulk.iter().any(|a| a.dim() != (k, k)) {
        return Err(Error::InvalidInput("bulk tensors must be k x k".into()));
    }
    Ok((d, k))
}

fn adjoint_paired(bulk: &[CMat]) -> bool {
    let d = bulk.len();
    d % 2 == 0 && (0..d).all(|s| linalg::max_abs(&(&bulk[(s + d / 2) % d] - &dagger(&bulk[s]))) <= 1e-12)
}

impl MpsChain {
    /// Chain with boundary tensors `A^(1)(s) = l^T A(s)` and `A^(N)(s) = A(s) r`.
    pub fn with_boundary_vectors(n_sites: usize, bulk: Vec<CMat>, l: &Array1<C64>, r: &Array1<C64>) -> Result<Self> {
        let (_, k) = check_bulk(&bulk)?;
        if l.len() != k || r.len() != k {
            return Err(Error::InvalidInput("boundary vectors must have length k".into()));
        }
        let lrow = l.clone().insert_axis(ndarray::Axis(0));
        let rcol = r.clone().insert_axis(ndarray::Axis(1));
        let left = bulk.iter().map(|a| lrow.dot(a)).collect();
        let right = bulk.iter().map(|a| a.dot(&rcol)).collect();
        Self::new(n_sites, bulk, left, right)
    }

    pub fn new(n_sites: usize, bulk: Vec<CMat>, left: Vec<CMat>, right: Vec<CMat>) -> Result<Self> {
        let (d, k) = check_bulk(&bulk)?;
        if n_sites < 2 {
            return Err(Error::InvalidInput("need at least two sites".into()));
        }
        if left.len() != d || right.len() != d {
            return Err(Error::InvalidInput("boundary tensors must have d entries".into()));
        }
        if left.iter().any(|m| m.dim() != (1, k)) || right.iter().any(|m| m.dim() != (k, 1)) {
            return Err(Error::InvalidInput("boundary tensors must be 1 x k and k x 1".into()));
        }
        let manifestly_hermitian = adjoint_paired(&bulk);
        Ok(MpsChain { n_sites, phys: d, bond: k, bulk, left, right, manifestly_hermitian })
    }

    /// Site tensors for site `i` in `1..=N`.
    pub fn site(&self, i: usize) -> &[CMat] {
        if i == 1 {
            &self.left
        } else if i == self.n_sites {
            &self.right
        } else {
            &self.bulk
        }
    }

    pub fn amplitude(&self, config: &[usize]) -> C64 {
        let mut m = self.left[config[0]].clone();
        for (i, &s) in config.iter().enumerate().skip(1) {
            m = m.dot(&self.site(i + 1)[s]);
        }
        m[[0, 0]]
    }

    /// Dense wavefunction, first site most significant.
    pub fn state_vector(&self) -> Result<Array1<C64>> {
        let dim = self.phys.checked_pow(self.n_sites as u32).filter(|&x| x <= 1 << 22);
        let dim = dim.ok_or_else(|| Error::TooLarge("state vector".into()))?;
        let mut out = Array1::zeros(dim);
        let mut cfg = vec![0usize; self.n_sites];
        for idx in 0..dim {
            let mut rem = idx;
            for j in (0..self.n_sites).rev() {
                cfg[j] = rem % self.phys;
                rem /= self.phys;
            }
            out[idx] = self.amplitude(&cfg);
        }
        Ok(out)
    }

    /// `A(s) -> X^{-1} A(s) X` with the boundaries adjusted so the state is unchanged.
    pub fn gauge(&self, x: &CMat) -> Result<MpsChain> {
        use ndarray_linalg::Inverse;
        let xi = x.inv()?;
        let bulk = self.bulk.iter().map(|a| xi.dot(a).dot(x)).collect();
        let left = self.left.iter().map(|a| a.dot(x)).collect();
        let right = self.right.iter().map(|a| xi.dot(a)).collect();
        MpsChain::new(self.n_sites, bulk, left, right)
    }

    fn block_products(&self, start: usize, len: usize) -> Vec<CMat> {
        let mut prods: Vec<CMat> = self.site(start).to_vec();
        for i in start + 1..start + len {
            let t = self.site(i);
            let mut next = Vec::with_capacity(prods.len() * self.phys);
            for p in &prods {
                for a in t {
                    next.push(p.dot(a));
                }
            }
            prods = next;
        }
        prods
    }

    fn apply_left(&self, env: &CMat, site: usize) -> CMat {
        let t = self.site(site);
        let mut out: Option<CMat> = None;
        for a in t {
            let term = dagger(a).dot(&env.dot(a));
            out = Some(match out {
                None => term,
                Some(o) => o + term,
            });
        }
        out.unwrap()
    }

    fn apply_left_op(&self, env: &CMat, op: &SiteOp) -> CMat {
        let prods = self.block_products(op.start, op.len);
        let y: Vec<CMat> = prods.iter().map(|m| env.dot(m)).collect();
        let (r, c) = y[0].dim();
        let mut out = CMat::zeros((prods[0].ncols(), c));
        for (sp, mp) in prods.iter().enumerate() {
            let mut acc = CMat::zeros((r, c));
            for (sg, ys) in y.iter().enumerate() {
                let o = op.matrix[[sp, sg]];
                if o != ZERO {
                    acc.scaled_add(o, ys);
                }
            }
            out = out + dagger(mp).dot(&acc);
        }
        out
    }

    fn apply_right(&self, env: &CMat, site: usize) -> CMat {
        let t = self.site(site);
        let mut out: Option<CMat> = None;
        for a in t {
            let term = a.dot(&env.dot(&dagger(a)));
            out = Some(match out {
                None => term,
                Some(o) => o + term,
            });
        }
        out.unwrap()
    }

    fn apply_right_op(&self, env: &CMat, op: &SiteOp) -> CMat {
        let prods = self.block_products(op.start, op.len);
        let mut out: Option<CMat> = None;
        for (sg, mg) in prods.iter().enumerate() {
            let y = mg.dot(env);
            for (sp, mp) in prods.iter().enumerate() {
                let o = op.matrix[[sp, sg]];
                if o != ZERO {
                    let term = y.dot(&dagger(mp)).mapv(|z| z * o);
                    out = Some(match out {
                        None => term,
                        Some(acc) => acc + term,
                    });
                }
            }
        }
        out.unwrap_or_else(|| CMat::zeros((prods[0].nrows(), prods[0].nrows())))
    }

    fn validate_ops(&self, ops: &[&SiteOp]) -> Result<()> {
        for (i, op) in ops.iter().enumerate() {
            if op.start < 1 || op.start + op.len - 1 > self.n_sites {
                return Err(Error::InvalidInput("operator support outside the chain".into()));
            }
            if op.matrix.nrows() != self.phys.pow(op.len as u32) {
                return Err(Error::InvalidInput("operator dimension does not match its interval".into()));
            }
            for other in &ops[..i] {
                let overlap = op.start <= other.end() && other.start <= op.end();
                if overlap {
                    return Err(Error::InvalidInput("operator supports overlap".into()));
                }
            }
        }
        Ok(())
    }

    /// Left environment after `upto` sites with the given insertions.
    fn left_env(&self, ops: &[&SiteOp], upto: usize) -> CMat {
        let mut sorted: Vec<&&SiteOp> = ops.iter().collect();
        sorted.sort_by_key(|o| o.start);
        let mut env = CMat::from_elem((1, 1), ONE);
        let mut site = 1;
        let mut next = 0;
        while site <= upto {
            if next < sorted.len() && sorted[next].start == site {
                env = self.apply_left_op(&env, sorted[next]);
                site += sorted[next].len;
                next += 1;
            } else {
                env = self.apply_left(&env, site);
                site += 1;
            }
        }
        env
    }

    fn right_env(&self, ops: &[&SiteOp], from: usize) -> CMat {
        let mut sorted: Vec<&&SiteOp> = ops.iter().collect();
        sorted.sort_by_key(|o| std::cmp::Reverse(o.start));
        let mut env = CMat::from_elem((1, 1), ONE);
        let mut site = self.n_sites;
        let mut next = 0;
        while site >= from {
            if next < sorted.len() && sorted[next].end() == site {
                env = self.apply_right_op(&env, sorted[next]);
                site -= sorted[next].len;
                next += 1;
            } else {
                env = self.apply_right(&env, site);
                site -= 1;
            }
            if site == 0 {
                break;
            }
        }
        env
    }

    /// Unnormalized `<Psi, O_1 O_2 ... Psi>` for operators on disjoint intervals.
    pub fn expectation_unnormalized(&self, ops: &[&SiteOp]) -> Result<C64> {
        self.validate_ops(ops)?;
        Ok(self.left_env(ops, self.n_sites)[[0, 0]])
    }

    pub fn norm_sq(&self) -> f64 {
        self.left_env(&[], self.n_sites)[[0, 0]].re
    }

    /// `<Psi, Psi>` from powers of the `k^2 x k^2` transfer matrix.
    pub fn norm_sq_via_transfer(&self) -> f64 {
        let t = transfer_matrix(&self.bulk);
        let k = self.bond;
        let l1 = self.apply_left(&CMat::from_elem((1, 1), ONE), 1);
        let mut v = l1.into_shape_with_order(k * k).unwrap();
        for _ in 0..self.n_sites - 2 {
            v = t.dot(&v);
        }
        let env = v.into_shape_with_order((k, k)).unwrap();
        self.apply_left(&env, self.n_sites)[[0, 0]].re
    }
}

/// Dense operator on the sites `start..start+len` (1-based), first site most
/// significant in the tensor ordering.
#[derive(Clone, Debug)]
pub struct SiteOp {
    pub start: usize,
    pub len: usize,
    pub matrix: CMat,
}

impl SiteOp {
    pub fn new(start: usize, matrix: CMat, d: usize) -> Result<Self> {
        let dim = matrix.nrows();
        if matrix.ncols() != dim || dim == 0 {
            return Err(Error::InvalidInput("operator must be square".into()));
        }
        let mut len = 0;
        let mut p = 1;
        while p < dim {
            p *= d;
            len += 1;
        }
        if p != dim || len == 0 {
            return Err(Error::InvalidInput(format!("operator dimension {dim} is not a power of {d}")));
        }
        Ok(SiteOp { start, len, matrix })
    }

    pub fn single(site: usize, matrix: CMat) -> Self {
        SiteOp { start: site, len: 1, matrix }
    }

    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }
}

/// `E(rho) = sum_s A(s)^dag rho A(s)` on row-major `vec(rho)`.
pub fn transfer_matrix(kraus: &[CMat]) -> CMat {
    let k = kraus[0].nrows();
    let mut t = CMat::zeros((k * k, k * k));
    for a in kraus {
        t = t + kron(&dagger(a), &a.t().to_owned());
    }
    t
}

pub fn apply_transfer(kraus: &[CMat], rho: &CMat) -> CMat {
    let mut out = CMat::zeros(rho.dim());
    for a in kraus {
        out = out + dagger(a).dot(&rho.dot(a));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TransferOperator {
    /// Kraus matrices rescaled so the top eigenvalue has modulus one.
    pub kraus: Vec<CMat>,
    pub scale: f64,
    pub matrix_rep: CMat,
    pub spectrum: Vec<C64>,
    pub lambda: f64,
    pub fixed_point: CMat,
    pub fixed_point_defect: f64,
    pub hermitian_defect: f64,
}

fn sort_by_modulus(w: &mut Vec<(C64, usize)>) {
    w.sort_by(|a, b| {
        b.0.norm()
            .partial_cmp(&a.0.norm())
            .unwrap()
            .then(a.0.re.partial_cmp(&b.0.re).unwrap().reverse())
            .then(a.0.im.partial_cmp(&b.0.im).unwrap())
    });
}

pub fn transfer_spectrum(c: &MpsChain) -> Result<TransferOperator> {
    let k = c.bond;
    let raw = transfer_matrix(&c.bulk);
    let (w, v) = linalg::eig_raw(&raw)?;
    let mut idx: Vec<(C64, usize)> = w.iter().cloned().zip(0..).collect();
    sort_by_modulus(&mut idx);
    let mu = idx[0].0.norm();
    if mu <= 0.0 {
        return Err(Error::InvalidInput("transfer operator is nilpotent".into()));
    }
    let kraus: Vec<CMat> = c.bulk.iter().map(|a| a.mapv(|z| z / mu.sqrt())).collect();
    let matrix_rep = raw.mapv(|z| z / mu);
    let spectrum: Vec<C64> = idx.iter().map(|(z, _)| z / mu).collect();
    let lambda = spectrum.get(1).map(|z| z.norm()).unwrap_or(0.0);
    let mut fp = v.column(idx[0].1).to_owned().into_shape_with_order((k, k)).unwrap();
    let tr = linalg::trace(&fp);
    let phase = if tr.norm() > 1e-12 { tr.conj() / tr.norm() } else { ONE };
    let fnorm = linalg::frobenius(&fp);
    fp.mapv_inplace(|z| z * phase / fnorm);
    let image = apply_transfer(&kraus, &fp);
    let fixed_point_defect = norm(&(image - &fp.mapv(|z| z * spectrum[0])));
    let hermitian_defect = linalg::max_abs(&(&matrix_rep - &dagger(&matrix_rep)));
    Ok(TransferOperator {
        kraus,
        scale: mu,
        matrix_rep,
        spectrum,
        lambda,
        fixed_point: fp,
        fixed_point_defect,
        hermitian_defect,
    })
}

/// Expander chain: `A(s) = U_s / sqrt(d)` for Haar `U_s`, `s < d/2`, and
/// `A(s + d/2) = A(s)^dag`; boundaries use `e_1`.
pub fn build_expander_mps(k: usize, d: usize, n: usize, seed: u64) -> Result<MpsChain> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidInput("physical dimension must be even".into()));
    }
    if k < 2 || n < 4 {
        return Err(Error::InvalidInput("need k >= 2 and N >= 4".into()));
    }
    let mut r = linalg::rng(seed);
    let us: Vec<CMat> = (0..d / 2).map(|_| linalg::haar_unitary_rng(k, &mut r)).collect();
    let sc = 1.0 / (d as f64).sqrt();
    let mut bulk: Vec<CMat> = us.iter().map(|u| u.mapv(|z| z * sc)).collect();
    for u in &us {
        bulk.push(dagger(u).mapv(|z| z * sc));
    }
    let mut e1 = Array1::zeros(k);
    e1[0] = ONE;
    MpsChain::with_boundary_vectors(n, bulk, &e1, &e1)
}

/// Expander chain with seeded random boundary vectors instead of `e_1`.
pub fn build_expander_mps_random_boundary(k: usize, d: usize, n: usize, seed: u64, boundary_seed: u64) -> Result<MpsChain> {
    let c = build_expander_mps(k, d, n, seed)?;
    let mut r = linalg::rng(boundary_seed);
    let l = linalg::random_unit_vector(k, &mut r);
    let rv = linalg::random_unit_vector(k, &mut r);
    MpsChain::with_boundary_vectors(n, c.bulk, &l, &rv)
}

#[derive(Clone, Debug)]
pub struct CorrelationResult {
    pub value: C64,
    pub bound: f64,
    pub lambda_a: CMat,
    pub lambda_b: CMat,
    pub separation: usize,
    pub lambda: f64,
    pub edge_distance: usize,
    /// Folded-chain transfer gap, reported by the two-interval correlator.
    pub folded_lambda: Option<f64>,
}

impl CorrelationResult {
    pub fn tail(&self) -> f64 {
        10.0 * self.lambda.powi(self.edge_distance as i32)
    }

    pub fn within_bound(&self) -> bool {
        self.value.norm() <= self.bound + self.tail()
    }
}

pub fn connected_correlation(c: &MpsChain, a: &SiteOp, b: &SiteOp) -> Result<CorrelationResult> {
    if !(1 <= a.start && a.end() < b.start && b.end() <= c.n_sites) {
        return Err(Error::InvalidInput("need 1 <= P <= Q < R <= S <= N".into()));
    }
    c.validate_ops(&[a, b])?;
    let t = transfer_spectrum(c)?;
    let z = c.norm_sq();
    let ab = c.expectation_unnormalized(&[a, b])?;
    let ea = c.expectation_unnormalized(&[a])?;
    let eb = c.expectation_unnormalized(&[b])?;
    let value = ab / z - ea * eb / (z * z);
    let sep = b.start - a.end();
    let bound = norm(&a.matrix) * norm(&b.matrix) * t.lambda.powi(sep as i32);
    let lambda_a = c.left_env(&[a], a.end());
    let lambda_b = dagger(&c.right_env(&[b], b.start));
    Ok(CorrelationResult {
        value,
        bound,
        lambda_a,
        lambda_b,
        separation: sep,
        lambda: t.lambda,
        edge_distance: (a.start - 1).min(c.n_sites - b.end()),
        folded_lambda: None,
    })
}

/// Operator on `[R1,S1] u [R2,S2]`; the first interval may be empty.
#[derive(Clone, Debug)]
pub struct TwoIntervalOp {
    pub first_start: usize,
    pub first_len: usize,
    pub second_start: usize,
    pub second_len: usize,
    pub matrix: CMat,
}

/// Operator-Schmidt decomposition `B = sum_r X_r (x) Y_r` with `X_r` on
/// `d1`-dimensional and `Y_r` on `d2`-dimensional factors.
pub fn operator_schmidt(b: &CMat, d1: usize, d2: usize) -> Result<Vec<(CMat, CMat)>> {
    let mut realigned = CMat::zeros((d1 * d1, d2 * d2));
    for i1 in 0..d1 {
        for i2 in 0..d2 {
            for j1 in 0..d1 {
                for j2 in 0..d2 {
                    realigned[[i1 * d1 + j1, i2 * d2 + j2]] = b[[i1 * d2 + i2, j1 * d2 + j2]];
                }
            }
        }
    }
    use ndarray_linalg::SVD;
    let (u, sv, vt) = realigned.svd(true, true)?;
    let (u, vt) = (u.unwrap(), vt.unwrap());
    let cutoff = sv.iter().cloned().fold(0.0, f64::max) * 1e-14;
    let mut terms = Vec::new();
    for r in 0..sv.len() {
        if sv[r] <= cutoff {
            continue;
        }
        let x = u.column(r).mapv(|z| z * sv[r]).into_shape_with_order((d1, d1)).unwrap();
        let y = vt.row(r).to_owned().into_shape_with_order((d2, d2)).unwrap();
        terms.push((x, y));
    }
    Ok(terms)
}

pub fn two_interval_correlation(c: &MpsChain, a: &SiteOp, b: &TwoIntervalOp) -> Result<CorrelationResult> {
    let d = c.phys;
    if b.second_len == 0 {
        return Err(Error::InvalidInput("second interval must be non-empty".into()));
    }
    if b.matrix.nrows() != d.pow((b.first_len + b.second_len) as u32) {
        return Err(Error::InvalidInput("operator dimension does not match its intervals".into()));
    }
    if b.first_len == 0 {
        let b2 = SiteOp { start: b.second_start, len: b.second_len, matrix: b.matrix.clone() };
        let mut res = connected_correlation(c, a, &b2)?;
        res.folded_lambda = Some(res.lambda);
        return Ok(res);
    }
    let s1 = b.first_start + b.first_len - 1;
    if !(b.first_start >= 1 && s1 < a.start && a.end() < b.second_start) {
        return Err(Error::InvalidInput("need S1 < P <= Q < R2".into()));
    }
    let t = transfer_spectrum(c)?;
    let terms = operator_schmidt(&b.matrix, d.pow(b.first_len as u32), d.pow(b.second_len as u32))?;
    let z = c.norm_sq();
    let ea = c.expectation_unnormalized(&[a])?;
    let mut ab = ZERO;
    let mut eb = ZERO;
    for (x, y) in &terms {
        let xo = SiteOp { start: b.first_start, len: b.first_len, matrix: x.clone() };
        let yo = SiteOp { start: b.second_start, len: b.second_len, matrix: y.clone() };
        ab += c.expectation_unnormalized(&[&xo, a, &yo])?;
        eb += c.expectation_unnormalized(&[&xo, &yo])?;
    }
    let value = ab / z - ea * eb / (z * z);
    let sep = (b.second_start - a.end()).min(a.start - s1);
    let bound = norm(&a.matrix) * norm(&b.matrix) * t.lambda.powi(sep as i32);
    let lambda_a = c.left_env(&[a], a.end());
    let lambda_b = CMat::zeros((c.bond, c.bond));
    let edge = (b.first_start - 1).min(c.n_sites - (b.second_start + b.second_len - 1));
    let folded = folded_product_spectrum(&t);
    Ok(CorrelationResult {
        value,
        bound,
        lambda_a,
        lambda_b,
        separation: sep,
        lambda: t.lambda,
        edge_distance: edge,
        folded_lambda: Some(folded.get(1).map(|z| z.norm()).unwrap_or(0.0)),
    })
}

/// Spectrum of the folded-chain transfer operator as products of the
/// (normalized) single-chain eigenvalues, sorted by modulus.
pub fn folded_product_spectrum(t: &TransferOperator) -> Vec<C64> {
    let mut out: Vec<(C64, usize)> = Vec::new();
    for a in &t.spectrum {
        for b in &t.spectrum {
            out.push((a * b, 0));
        }
    }
    sort_by_modulus(&mut out);
    out.into_iter().map(|(z, _)| z).collect()
}

/// Explicit transfer matrix of the folded chain, whose doubled site carries
/// `A(s)^T (x) A(t)`. Size `k^4`, so only for small bond dimension.
pub fn folded_transfer_matrix(kraus: &[CMat]) -> Result<CMat> {
    let k = kraus[0].nrows();
    if k.pow(4) > 4096 {
        return Err(Error::TooLarge(format!("folded transfer matrix of size {}", k.pow(4))));
    }
    let mut folded = Vec::with_capacity(kraus.len() * kraus.len());
    for a in kraus {
        for b in kraus {
            folded.push(kron(&a.t().to_owned(), b));
        }
    }
    Ok(transfer_matrix(&folded))
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationRow {
    pub seed: u64,
    pub k: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub sep: usize,
    pub value_re: f64,
    pub value_im: f64,
    pub bound: f64,
    pub lambda: f64,
}

impl CorrelationRow {
    pub fn new(seed: u64, c: &MpsChain, a: &SiteOp, b: &SiteOp, res: &CorrelationResult) -> Self {
        CorrelationRow {
            seed,
            k: c.bond,
            d: c.phys,
            n: c.n_sites,
            p: a.start,
            q: a.end(),
            r: b.start,
            s: b.end(),
            sep: res.separation,
            value_re: res.value.re,
            value_im: res.value.im,
            bound: res.bound,
            lambda: res.lambda,
        }
    }
}

/// Random Hermitian single-site operator with unit operator norm.
pub fn random_site_operator(d: usize, rng: &mut linalg::Rng64) -> CMat {
    let h = linalg::random_hermitian(d, rng);
    let n = norm(&h);
    h.mapv(|z| z / n)
}

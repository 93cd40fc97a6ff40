//! Erasure channels, deterministic decoders as Boolean functions, reliability
//! polynomials and the mistake-rate relation.

use ndarray::{s, Array1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, dagger, eye, CMat, Rng64, C64, ONE};

#[derive(Clone, Copy, Debug)]
pub struct ErasureChannel {
    pub p: f64,
}

impl ErasureChannel {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("transmission probability {p} outside [0, 1]")));
        }
        Ok(ErasureChannel { p })
    }

    /// `sqrt(p) [I; 0]`, `sqrt(1-p) |E><0|`, `sqrt(1-p) |E><1|`.
    pub fn kraus(&self) -> Vec<CMat> {
        let mut k0 = CMat::zeros((3, 2));
        k0[[0, 0]] = C64::from(self.p.sqrt());
        k0[[1, 1]] = C64::from(self.p.sqrt());
        let q = (1.0 - self.p).sqrt();
        let mut k1 = CMat::zeros((3, 2));
        k1[[2, 0]] = C64::from(q);
        let mut k2 = CMat::zeros((3, 2));
        k2[[2, 1]] = C64::from(q);
        vec![k0, k1, k2]
    }

    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        check_density(rho, 2)?;
        let mut out = CMat::zeros((3, 3));
        out.slice_mut(s![..2, ..2]).assign(&rho.mapv(|w| w * self.p));
        out[[2, 2]] = C64::from(1.0 - self.p);
        Ok(out)
    }
}

fn check_density(rho: &CMat, n: usize) -> Result<()> {
    if rho.dim() != (n, n) {
        return Err(Error::InvalidInput(format!("density matrix must be {n}x{n}")));
    }
    if linalg::hermiticity_defect(rho) > 1e-12 || (linalg::trace(rho) - ONE).norm() > 1e-12 {
        return Err(Error::InvalidInput("density matrix must be Hermitian with unit trace".into()));
    }
    let w = linalg::eigh(rho)?.eigenvalues;
    if w[0] < -1e-12 {
        return Err(Error::InvalidInput(format!("density matrix has eigenvalue {}", w[0])));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BooleanFn {
    pub n: usize,
    pub table: Vec<bool>,
}

impl BooleanFn {
    pub fn new(n: usize, table: Vec<bool>) -> Result<Self> {
        if table.len() != 1 << n {
            return Err(Error::InvalidInput(format!("table of length {} for n = {n}", table.len())));
        }
        Ok(BooleanFn { n, table })
    }

    pub fn from_fn<F: Fn(usize) -> bool>(n: usize, f: F) -> Self {
        BooleanFn { n, table: (0..1usize << n).map(f).collect() }
    }

    /// Bit `s` of `mask` is `F(s)`; bit `i` of `s` is `s_{i+1}`.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        if n > 6 {
            return Err(Error::TooLarge("bitmask tables need n <= 6".into()));
        }
        Ok(Self::from_fn(n, |s| mask >> s & 1 == 1))
    }

    pub fn mask(&self) -> Option<u64> {
        (self.n <= 6).then(|| self.table.iter().enumerate().fold(0u64, |m, (s, &b)| m | (b as u64) << s))
    }

    pub fn eval(&self, s: usize) -> bool {
        self.table[s]
    }

    pub fn is_constant(&self) -> bool {
        self.table.iter().all(|&b| b == self.table[0])
    }

    /// Checked over single-bit covers.
    pub fn is_monotone(&self) -> bool {
        (0..self.table.len()).all(|s| (0..self.n).all(|j| s >> j & 1 == 1 || !self.table[s] || self.table[s | 1 << j]))
    }

    pub fn complement_input(&self, s: usize) -> usize {
        !s & ((1 << self.n) - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonotoneBooleanFn(BooleanFn);

impl MonotoneBooleanFn {
    pub fn new(f: BooleanFn) -> Result<Self> {
        if f.n > 20 {
            return Err(Error::TooLarge("monotonicity certificate needs n <= 20".into()));
        }
        if !f.is_monotone() {
            return Err(Error::InvalidInput("function is not monotone".into()));
        }
        Ok(MonotoneBooleanFn(f))
    }

    pub fn inner(&self) -> &BooleanFn {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.n
    }
}

/// Smallest monotone function above `f`: `F~(s) = 1` iff some `t <= s` has `F(t) = 1`.
pub fn monotonize(f: &BooleanFn) -> MonotoneBooleanFn {
    let mut t = f.table.clone();
    for j in 0..f.n {
        for s in 0..t.len() {
            if s >> j & 1 == 1 && t[s ^ 1 << j] {
                t[s] = true;
            }
        }
    }
    MonotoneBooleanFn(BooleanFn { n: f.n, table: t })
}

/// All monotone functions of `n <= 5` variables as bitmask tables, in
/// increasing `(f0, f1)` order of the split on the last variable.
pub fn enumerate_monotone_masks(n: usize) -> Result<Vec<u64>> {
    if n > 5 {
        return Err(Error::TooLarge(format!("enumeration needs n <= 5, got {n}")));
    }
    let mut cur: Vec<u64> = vec![0, 1];
    for k in 1..=n {
        let half = 1u32 << (k - 1);
        let mut next = Vec::new();
        for &f0 in &cur {
            for &f1 in &cur {
                if f0 & !f1 == 0 {
                    next.push(f0 | f1 << half);
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

pub fn enumerate_monotone(n: usize) -> Result<impl Iterator<Item = MonotoneBooleanFn>> {
    let masks = enumerate_monotone_masks(n)?;
    Ok(masks.into_iter().map(move |m| MonotoneBooleanFn(BooleanFn::from_mask(n, m).expect("n <= 5"))))
}

fn binom(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let mut r: i128 = 1;
    for i in 0..k {
        r = r * (n - i) as i128 / (i + 1) as i128;
    }
    r
}

/// `f(p) = sum_k b_k p^k (1-p)^(n-k)` with `b_k` the number of accepted
/// strings of weight `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReliabilityPoly {
    pub n: usize,
    pub bernstein: Vec<u64>,
    pub monomial: Vec<i128>,
}

pub fn reliability_poly(f: &BooleanFn) -> Result<ReliabilityPoly> {
    if f.n > 24 {
        return Err(Error::TooLarge("reliability polynomial needs n <= 24".into()));
    }
    let n = f.n;
    let mut b = vec![0u64; n + 1];
    for (s, &v) in f.table.iter().enumerate() {
        if v {
            b[s.count_ones() as usize] += 1;
        }
    }
    let mut mono = vec![0i128; n + 1];
    for (k, &bk) in b.iter().enumerate() {
        for j in 0..=n - k {
            let sign = if j % 2 == 0 { 1 } else { -1 };
            mono[k + j] += sign * bk as i128 * binom(n - k, j);
        }
    }
    Ok(ReliabilityPoly { n, bernstein: b, monomial: mono })
}

impl ReliabilityPoly {
    pub fn eval(&self, p: f64) -> f64 {
        self.bernstein
            .iter()
            .enumerate()
            .map(|(k, &b)| b as f64 * p.powi(k as i32) * (1.0 - p).powi((self.n - k) as i32))
            .sum()
    }

    pub fn eval_monomial(&self, p: f64) -> f64 {
        self.monomial.iter().rev().fold(0.0, |acc, &c| acc * p + c as f64)
    }

    pub fn derivative(&self, p: f64) -> f64 {
        self.monomial.iter().enumerate().skip(1).map(|(k, &c)| c as f64 * k as f64 * p.powi(k as i32 - 1)).sum()
    }

    pub fn degree(&self) -> usize {
        self.monomial.iter().rposition(|&c| c != 0).unwrap_or(0)
    }

    /// `b^n f(a/b)` exactly.
    pub fn scaled(&self, a: i128, b: i128) -> i128 {
        self.bernstein.iter().enumerate().map(|(k, &bk)| bk as i128 * a.pow(k as u32) * (b - a).pow((self.n - k) as u32)).sum()
    }

    /// `b^(n+1) p (1-p) f'(p)` at `p = a/b`, exactly.
    pub fn scaled_log_derivative(&self, a: i128, b: i128) -> i128 {
        let n = self.n as i128;
        self.bernstein
            .iter()
            .enumerate()
            .map(|(k, &bk)| bk as i128 * a.pow(k as u32) * (b - a).pow((self.n - k) as u32) * (k as i128 * b - n * a))
            .sum()
    }
}

/// Interior rational grid `p = k / denominator`, `k = 1..denominator-1`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PGrid {
    pub denominator: u32,
}

impl PGrid {
    pub fn new(denominator: u32) -> Result<Self> {
        if !(2..=1000).contains(&denominator) {
            return Err(Error::InvalidInput("grid denominator must be in 2..=1000".into()));
        }
        Ok(PGrid { denominator })
    }

    pub fn from_step(step: f64) -> Result<Self> {
        let d = (1.0 / step).round();
        if !(step > 0.0) || ((1.0 / d) - step).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("grid step {step} is not 1/m")));
        }
        Self::new(d as u32)
    }

    pub fn points(&self) -> impl Iterator<Item = (i128, i128)> + '_ {
        let b = self.denominator as i128;
        (1..b).map(move |a| (a, b))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MatthewReport {
    pub n: usize,
    pub mask: Option<u64>,
    /// Smallest `p(1-p) g'(p) / g(p)` over the grid.
    pub min_ratio: f64,
    pub argmin: f64,
    /// Exact rational check of `ratio >= 1` at every grid point.
    pub exact: bool,
    pub corollary: bool,
    pub pass: bool,
}

pub const MATTHEW_TOL: f64 = 1e-9;

pub fn matthew_check(f: &MonotoneBooleanFn, grid: PGrid) -> Result<MatthewReport> {
    if f.0.is_constant() {
        return Err(Error::SkippedConstant);
    }
    let poly = reliability_poly(&f.0)?;
    let n = poly.n as u32;
    let mut min_ratio = f64::INFINITY;
    let mut argmin = 0.0;
    let mut exact = true;
    let mut corollary = true;
    for (a, b) in grid.points() {
        let bn = b.pow(n);
        let fa = poly.scaled(a, b);
        let num = poly.scaled_log_derivative(a, b) * b.pow(n.saturating_sub(1));
        let den = fa * (bn - fa);
        if num < den {
            exact = false;
        }
        let ratio = num as f64 / den as f64;
        if ratio < min_ratio {
            min_ratio = ratio;
            argmin = a as f64 / b as f64;
        }
        if fa * b > a * bn && 2 * a <= b && fa + poly.scaled(b - a, b) <= bn {
            corollary = false;
        }
    }
    let pass = min_ratio >= 1.0 - MATTHEW_TOL && corollary;
    Ok(MatthewReport { n: f.n(), mask: f.0.mask(), min_ratio, argmin, exact, corollary, pass })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplementReport {
    pub n: usize,
    pub mask: Option<u64>,
    pub has_complementary_pair: bool,
    /// Largest `f(p) + f(1-p)` over the grid.
    pub max_sum: f64,
    /// `f(p) + f(1-p) <= 1` and `f(p) <= p` for `p <= 1/2`, checked exactly;
    /// only meaningful without a complementary pair.
    pub sum_bound: bool,
    pub below_diagonal: bool,
}

pub fn complement_pair_check(f: &MonotoneBooleanFn, grid: PGrid) -> Result<ComplementReport> {
    let g = &f.0;
    let has = (0..g.table.len()).any(|s| g.table[s] && g.table[g.complement_input(s)]);
    let poly = reliability_poly(g)?;
    let n = poly.n as u32;
    let mut max_sum: f64 = 0.0;
    let mut sum_bound = true;
    let mut below = true;
    for (a, b) in grid.points() {
        let bn = b.pow(n);
        let s = poly.scaled(a, b) + poly.scaled(b - a, b);
        max_sum = max_sum.max(s as f64 / bn as f64);
        if s > bn {
            sum_bound = false;
        }
        if 2 * a <= b && poly.scaled(a, b) * b > a * bn {
            below = false;
        }
    }
    Ok(ComplementReport { n: f.n(), mask: g.mask(), has_complementary_pair: has, max_sum, sum_bound, below_diagonal: below })
}

/// Composite qubit channel `psi -> D(F_s(psi))` for an encoder isometry into
/// `k` qubits, an erasure pattern `s` (`true` = transmitted) and a decoder
/// with Kraus operators from the `3^k` received space to `span{up, down, E}`.
#[derive(Clone, Debug)]
pub struct QubitDecodeChannel {
    pub encoder: CMat,
    pub decoder: Vec<CMat>,
    pub pattern: Vec<bool>,
}

fn kraus_defect(ks: &[CMat], n: usize) -> f64 {
    let mut s = CMat::zeros((n, n));
    for k in ks {
        s = s + dagger(k).dot(k);
    }
    linalg::max_abs(&(s - eye(n)))
}

impl QubitDecodeChannel {
    pub fn new(encoder: CMat, decoder: Vec<CMat>, pattern: Vec<bool>) -> Result<Self> {
        let k = pattern.len();
        if k == 0 || k > 6 {
            return Err(Error::InvalidInput("pattern length must be in 1..=6".into()));
        }
        if encoder.dim() != (1 << k, 2) || linalg::max_abs(&(dagger(&encoder).dot(&encoder) - eye(2))) > 1e-10 {
            return Err(Error::InvalidInput("encoder must be a 2^k x 2 isometry".into()));
        }
        let r = 3usize.pow(k as u32);
        if decoder.is_empty() || decoder.iter().any(|d| d.dim() != (3, r)) {
            return Err(Error::InvalidInput(format!("decoder Kraus operators must be 3 x {r}")));
        }
        let defect = kraus_defect(&decoder, r);
        if defect > 1e-10 {
            return Err(Error::InvalidInput(format!("decoder Kraus defect {defect:e}")));
        }
        Ok(QubitDecodeChannel { encoder, decoder, pattern })
    }

    /// Kraus operators `2 -> 3` of the composite channel.
    pub fn composite_kraus(&self) -> Vec<CMat> {
        let k = self.pattern.len();
        let erased: Vec<usize> = (0..k).filter(|&i| !self.pattern[i]).collect();
        let r = 3usize.pow(k as u32);
        let mut out = Vec::new();
        for e in 0..1usize << erased.len() {
            // Received vector for each computational input, with erased qubits
            // projected on `e` and replaced by the flag.
            let mut emb = CMat::zeros((r, 1 << k));
            for x in 0..1usize << k {
                let consistent = erased.iter().enumerate().all(|(j, &i)| (x >> (k - 1 - i) & 1) == (e >> j & 1));
                if !consistent {
                    continue;
                }
                let mut idx = 0;
                for i in 0..k {
                    let digit = if self.pattern[i] { x >> (k - 1 - i) & 1 } else { 2 };
                    idx = idx * 3 + digit;
                }
                emb[[idx, x]] = ONE;
            }
            let stage = emb.dot(&self.encoder);
            for d in &self.decoder {
                out.push(d.dot(&stage));
            }
        }
        out
    }

    pub fn kraus_defect(&self) -> f64 {
        kraus_defect(&self.composite_kraus(), 2)
    }
}

fn qubit_blocks(ks: &[CMat]) -> Vec<CMat> {
    ks.iter().map(|k| k.slice(s![..2, ..]).to_owned()).collect()
}

/// `tr[Phi(psi psi^dag)(1 - psi psi^dag)] = 1 - sum_j |psi^dag L_j psi|^2` with
/// `L_j` the qubit block of each composite Kraus operator.
pub fn mistake_rate(blocks: &[CMat], psi: &Array1<C64>) -> f64 {
    let mut keep = 0.0;
    for l in blocks {
        let z: C64 = psi.iter().zip(l.dot(psi).iter()).map(|(a, b)| a.conj() * b).sum();
        keep += z.norm_sqr();
    }
    1.0 - keep
}

pub fn bloch_state(theta: f64, phi: f64) -> Array1<C64> {
    Array1::from(vec![C64::from((theta / 2.0).cos()), linalg::cis(phi) * (theta / 2.0).sin()])
}

/// Haar average from the second moment `int |psi^dag L psi|^2 = (|tr L|^2 + ||L||_F^2) / 6`.
pub fn average_mistake_rate(blocks: &[CMat]) -> f64 {
    let keep: f64 = blocks.iter().map(|l| (linalg::trace(l).norm_sqr() + linalg::frobenius(l).powi(2)) / 6.0).sum();
    1.0 - keep
}

/// Midpoint rule in `(cos theta, phi)` on an `m x m` grid.
pub fn average_mistake_rate_quadrature(blocks: &[CMat], m: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..m {
        let u = -1.0 + (2.0 * i as f64 + 1.0) / m as f64;
        let th = u.acos();
        for j in 0..m {
            let ph = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
            acc += mistake_rate(blocks, &bloch_state(th, ph));
        }
    }
    acc / (m * m) as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxEstimate {
    pub value: f64,
    pub theta: f64,
    pub phi: f64,
    /// Estimate after the coarse grid and after each refinement.
    pub history: Vec<f64>,
}

/// Coarse `m x m` grid on `(theta, phi)`, then `levels` local refinements
/// around the best point, each a `21 x 21` grid at a tenth of the spacing.
pub fn max_mistake_rate(blocks: &[CMat], m: usize, levels: usize) -> MaxEstimate {
    use std::f64::consts::PI;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=m {
        let th = PI * i as f64 / m as f64;
        for j in 0..m {
            let ph = 2.0 * PI * j as f64 / m as f64;
            let v = mistake_rate(blocks, &bloch_state(th, ph));
            if v > best.0 {
                best = (v, th, ph);
            }
        }
    }
    let mut history = vec![best.0];
    let (mut dt, mut dp) = (PI / m as f64, 2.0 * PI / m as f64);
    for _ in 0..levels {
        let (_, t0, p0) = best;
        for i in -10i32..=10 {
            let th = (t0 + dt * i as f64 / 10.0).clamp(0.0, PI);
            for j in -10i32..=10 {
                let ph = p0 + dp * j as f64 / 10.0;
                let v = mistake_rate(blocks, &bloch_state(th, ph));
                if v > best.0 {
                    best = (v, th, ph);
                }
            }
        }
        history.push(best.0);
        dt /= 10.0;
        dp /= 10.0;
    }
    MaxEstimate { value: best.0, theta: best.1, phi: best.2, history }
}

#[derive(Clone, Debug, Serialize)]
pub struct MistakeRates {
    pub average: f64,
    pub maximum: f64,
    pub quadrature: Option<f64>,
    pub ratio: f64,
    pub relation_holds: bool,
}

pub const QUADRATURE_POINTS: usize = 316;
pub const QUADRATURE_TOL: f64 = 1e-4;

pub fn mistake_rates(dec: &QubitDecodeChannel, quadrature: bool) -> Result<MistakeRates> {
    let ks = dec.composite_kraus();
    let defect = kraus_defect(&ks, 2);
    if defect > 1e-10 {
        return Err(Error::InvalidInput(format!("composite Kraus defect {defect:e}")));
    }
    let blocks = qubit_blocks(&ks);
    let average = average_mistake_rate(&blocks);
    let quad = quadrature.then(|| average_mistake_rate_quadrature(&blocks, QUADRATURE_POINTS));
    if let Some(q) = quad {
        if (q - average).abs() > QUADRATURE_TOL {
            return Err(Error::Backend(format!("quadrature {q} disagrees with closed form {average}")));
        }
    }
    let maximum = max_mistake_rate(&blocks, 100, 3).value;
    let tol = 1e-9;
    let relation_holds = average <= maximum + tol && maximum <= 4.0 * average + tol;
    let ratio = if average > 0.0 { maximum / average } else { f64::NAN };
    Ok(MistakeRates { average, maximum, quadrature: quad, ratio, relation_holds })
}

/// Haar isometry of shape `rows x cols`.
fn haar_isometry(rows: usize, cols: usize, rng: &mut Rng64) -> CMat {
    linalg::haar_unitary_rng(rows, rng).slice(s![.., ..cols]).to_owned()
}

/// Random encoder into `k` qubits, random pattern and a decoder from a Haar
/// Stinespring isometry with at least `r` Kraus operators.
pub fn random_decode_channel(k: usize, r: usize, rng: &mut Rng64) -> Result<QubitDecodeChannel> {
    use rand::Rng;
    let enc = haar_isometry(1 << k, 2, rng);
    let dim = 3usize.pow(k as u32);
    let r = r.max(dim / 3);
    let big = haar_isometry(3 * r, dim, rng);
    let dec = (0..r).map(|j| big.slice(s![3 * j..3 * j + 3, ..]).to_owned()).collect();
    let pattern = (0..k).map(|_| rng.random_bool(0.6)).collect();
    QubitDecodeChannel::new(enc, dec, pattern)
}

pub fn identity_decode() -> QubitDecodeChannel {
    QubitDecodeChannel { encoder: eye(2), decoder: vec![eye(3)], pattern: vec![true] }
}

/// `rho -> tr(rho) I/2` on the qubit levels.
pub fn mixing_decode() -> QubitDecodeChannel {
    let mut dec = Vec::new();
    for a in 0..2 {
        for b in 0..3 {
            let mut k = CMat::zeros((3, 3));
            k[[a, b]] = C64::from(0.5f64.sqrt());
            dec.push(k);
        }
    }
    QubitDecodeChannel { encoder: eye(2), decoder: dec, pattern: vec![true] }
}

#[derive(Clone, Debug, Serialize)]
pub struct MatthewRow {
    pub n: usize,
    pub function_id: u64,
    pub min_ratio: f64,
    pub complementary_pair: bool,
    pub pass: bool,
}

/// Exhaustive suite over all non-constant monotone functions of `n` variables.
pub fn matthew_suite(n: usize, grid: PGrid) -> Result<Vec<MatthewRow>> {
    let mut rows = Vec::new();
    for f in enumerate_monotone(n)? {
        if f.inner().is_constant() {
            continue;
        }
        let m = matthew_check(&f, grid)?;
        let c = complement_pair_check(&f, grid)?;
        rows.push(MatthewRow { n, function_id: m.mask.unwrap_or(0), min_ratio: m.min_ratio, complementary_pair: c.has_complementary_pair, pass: m.pass });
    }
    Ok(rows)
}

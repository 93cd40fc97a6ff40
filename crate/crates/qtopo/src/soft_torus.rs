//! Soft tori, local projectors, and the maps between them: compression plus
//! polar (`map_g`) and a smooth POVM with its Naimark dilation (`map_f`).

use std::f64::consts::PI;

use ndarray::{s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cis, commutator, dagger, eye, norm, CMat, MatrixJson, C64, I, ONE, ZERO};

const UNITARY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SoftTorus {
    pub unitaries: Vec<CMat>,
    pub epsilon: f64,
}

pub fn commutator_epsilon(us: &[CMat]) -> f64 {
    let mut eps: f64 = 0.0;
    for i in 0..us.len() {
        for j in i + 1..us.len() {
            eps = eps.max(norm(&commutator(&us[i], &us[j])));
        }
    }
    eps
}

fn check_unitaries(us: &[CMat]) -> Result<usize> {
    let n = us.first().ok_or_else(|| Error::InvalidInput("no unitaries".into()))?.nrows();
    for u in us {
        if u.dim() != (n, n) {
            return Err(Error::InvalidInput("unitaries must share a square shape".into()));
        }
        let defect = linalg::unitarity_defect(u);
        if defect > UNITARY_TOL {
            return Err(Error::InvalidInput(format!("matrix is not unitary (defect {defect:e})")));
        }
    }
    Ok(n)
}

impl SoftTorus {
    /// Torus with the recomputed commutator bound as certificate.
    pub fn new(unitaries: Vec<CMat>) -> Result<Self> {
        check_unitaries(&unitaries)?;
        let epsilon = commutator_epsilon(&unitaries);
        Ok(SoftTorus { unitaries, epsilon })
    }

    pub fn with_epsilon(unitaries: Vec<CMat>, epsilon: f64) -> Result<Self> {
        check_unitaries(&unitaries)?;
        let actual = commutator_epsilon(&unitaries);
        if actual > epsilon + 1e-10 {
            return Err(Error::InvalidInput(format!("certificate {epsilon} understates {actual}")));
        }
        Ok(SoftTorus { unitaries, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.unitaries[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.unitaries.len()
    }

    pub fn direct_sum(&self, other: &SoftTorus) -> Result<SoftTorus> {
        if self.d() != other.d() {
            return Err(Error::InvalidInput("tori have different d".into()));
        }
        let us = self.unitaries.iter().zip(&other.unitaries).map(|(a, b)| linalg::direct_sum(a, b)).collect();
        Ok(SoftTorus { unitaries: us, epsilon: self.epsilon.max(other.epsilon) })
    }

    pub fn to_json(&self) -> Result<String> {
        let js = SoftTorusJson {
            epsilon: self.epsilon,
            unitaries: self.unitaries.iter().map(MatrixJson::from_matrix).collect::<Result<_>>()?,
        };
        serde_json::to_string(&js).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let js: SoftTorusJson = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let us = js.unitaries.iter().map(|m| m.to_matrix()).collect::<Result<_>>()?;
        SoftTorus::with_epsilon(us, js.epsilon)
    }
}

#[derive(Serialize, Deserialize)]
struct SoftTorusJson {
    epsilon: f64,
    unitaries: Vec<MatrixJson>,
}

#[derive(Serialize, Deserialize)]
struct LocalProjectorJson {
    epsilon: f64,
    unitaries: Vec<MatrixJson>,
    projector: MatrixJson,
}

#[derive(Clone, Debug)]
pub struct LocalProjector {
    pub unitaries: Vec<CMat>,
    pub projector: CMat,
    pub epsilon: f64,
}

pub fn locality_epsilon(p: &CMat, us: &[CMat]) -> f64 {
    us.iter().map(|u| norm(&commutator(p, u))).fold(0.0, f64::max)
}

impl LocalProjector {
    pub fn new(unitaries: Vec<CMat>, projector: CMat) -> Result<Self> {
        let n = check_unitaries(&unitaries)?;
        if projector.dim() != (n, n) {
            return Err(Error::InvalidInput("projector shape mismatch".into()));
        }
        let c = commutator_epsilon(&unitaries);
        if c > 1e-10 {
            return Err(Error::NotCommuting(c));
        }
        let idem = norm(&(projector.dot(&projector) - &projector));
        if idem > 1e-10 || linalg::hermiticity_defect(&projector) > 1e-10 {
            return Err(Error::InvalidInput(format!("not an orthogonal projector (defect {idem:e})")));
        }
        let epsilon = locality_epsilon(&projector, &unitaries);
        Ok(LocalProjector { unitaries, projector, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.projector.nrows()
    }

    pub fn complement(&self) -> LocalProjector {
        let n = self.dim();
        LocalProjector {
            unitaries: self.unitaries.clone(),
            projector: eye(n) - &self.projector,
            epsilon: self.epsilon,
        }
    }

    pub fn direct_sum(&self, other: &LocalProjector) -> Result<LocalProjector> {
        if self.unitaries.len() != other.unitaries.len() {
            return Err(Error::InvalidInput("projectors have different d".into()));
        }
        Ok(LocalProjector {
            unitaries: self.unitaries.iter().zip(&other.unitaries).map(|(a, b)| linalg::direct_sum(a, b)).collect(),
            projector: linalg::direct_sum(&self.projector, &other.projector),
            epsilon: self.epsilon.max(other.epsilon),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let js = LocalProjectorJson {
            epsilon: self.epsilon,
            unitaries: self.unitaries.iter().map(MatrixJson::from_matrix).collect::<Result<_>>()?,
            projector: MatrixJson::from_matrix(&self.projector)?,
        };
        serde_json::to_string(&js).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let js: LocalProjectorJson = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let us = js.unitaries.iter().map(|m| m.to_matrix()).collect::<Result<_>>()?;
        let lp = LocalProjector::new(us, js.projector.to_matrix()?)?;
        if lp.epsilon > js.epsilon + 1e-10 {
            return Err(Error::InvalidInput("stored epsilon understates locality".into()));
        }
        Ok(LocalProjector { epsilon: js.epsilon, ..lp })
    }
}

/// Link phases `U_x(m,n)`, `U_y(m,n)` with period `N` in both indices.
pub fn voiculescu_links(n: usize, m: i64, k: i64) -> (C64, C64) {
    let nn = n as i64;
    let (m, k) = (m.rem_euclid(nn), k.rem_euclid(nn));
    let ux = if m == nn - 1 { cis(-2.0 * PI * k as f64 / n as f64) } else { ONE };
    let uy = cis(2.0 * PI * m as f64 / (n * n) as f64);
    (ux, uy)
}

/// `U` shifts `|m,n>` to `|m+1,n>`, `V` shifts to `|m,n+1>`; basis index `m N + n`.
pub fn voiculescu_pair(n: usize) -> Result<SoftTorus> {
    if n < 2 {
        return Err(Error::InvalidInput("Voiculescu pair needs N >= 2".into()));
    }
    let dim = n * n;
    let idx = |m: usize, k: usize| (m % n) * n + (k % n);
    let mut u = CMat::zeros((dim, dim));
    let mut v = CMat::zeros((dim, dim));
    for m in 0..n {
        for k in 0..n {
            let (ux, uy) = voiculescu_links(n, m as i64, k as i64);
            u[[idx(m + 1, k), idx(m, k)]] = ux;
            v[[idx(m, k + 1), idx(m, k)]] = uy;
        }
    }
    let epsilon = (cis(2.0 * PI / dim as f64) - ONE).norm();
    SoftTorus::with_epsilon(vec![u, v], epsilon)
}

/// Phase picked up by `V^dag U^dag V U` on `|m,n>`: right, up, then back
/// along the same links.
pub fn plaquette_phases(n: usize) -> Result<Vec<C64>> {
    if n < 2 {
        return Err(Error::InvalidInput("N >= 2".into()));
    }
    let mut out = Vec::with_capacity(n * n);
    for m in 0..n as i64 {
        for k in 0..n as i64 {
            let (ux, _) = voiculescu_links(n, m, k);
            let (_, uy_right) = voiculescu_links(n, m + 1, k);
            let (ux_up, _) = voiculescu_links(n, m, k + 1);
            let (_, uy) = voiculescu_links(n, m, k);
            out.push(uy.conj() * ux_up.conj() * uy_right * ux);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MapG {
    pub torus: SoftTorus,
    /// Certificate from the input locality `delta`: `4 delta^2`.
    pub bound: f64,
    /// Set when a compressed block was singular and `x z` was added before polar.
    pub perturbation: Option<C64>,
}

/// Deterministic perturbation directions `z_j = exp(i 2 pi frac(j phi))`.
pub fn z_sequence(j: usize) -> C64 {
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    cis(2.0 * PI * ((j as f64 + 1.0) * golden).fract())
}

pub const Z_SCALE: f64 = 1e-6;

fn polar_perturbed(blocks: &[CMat]) -> Result<(Vec<CMat>, Option<C64>)> {
    let direct: Result<Vec<CMat>> = blocks.iter().map(linalg::polar).collect();
    match direct {
        Ok(v) => Ok((v, None)),
        Err(Error::RankDeficient(_)) => {
            let n = blocks[0].nrows();
            for j in 0..64 {
                let z = z_sequence(j) * Z_SCALE;
                let shifted: Vec<CMat> = blocks.iter().map(|b| b + &eye(n).mapv(|w| w * z)).collect();
                if let Ok(v) = shifted.iter().map(linalg::polar).collect::<Result<Vec<_>>>() {
                    return Ok((v, Some(z)));
                }
            }
            Err(Error::RankDeficient(0.0))
        }
        Err(e) => Err(e),
    }
}

/// Orthonormal frame for the range of a projector; the identity frame for `P = I`.
pub fn projector_frame(p: &CMat) -> Result<CMat> {
    let n = p.nrows();
    if linalg::max_abs(&(p - &eye(n))) == 0.0 {
        return Ok(eye(n));
    }
    let e = linalg::eigh(p)?;
    Ok(linalg::frame_above(&e, 0.5))
}

/// Compress each unitary to the range of `P` and take the polar part.
pub fn map_g(p: &LocalProjector) -> Result<MapG> {
    if p.epsilon > 0.6 {
        return Err(Error::OutOfRegime(format!("locality {} exceeds 0.6", p.epsilon)));
    }
    let b = projector_frame(&p.projector)?;
    if b.ncols() == 0 {
        return Err(Error::InvalidInput("projector has rank zero".into()));
    }
    let bd = dagger(&b);
    let blocks: Vec<CMat> = p.unitaries.iter().map(|u| bd.dot(&u.dot(&b))).collect();
    let (us, perturbation) = polar_perturbed(&blocks)?;
    let epsilon = commutator_epsilon(&us);
    Ok(MapG { torus: SoftTorus { unitaries: us, epsilon }, bound: 4.0 * p.epsilon * p.epsilon, perturbation })
}

#[derive(Clone, Copy, Debug)]
pub enum Window {
    Bump,
    Hann,
    Custom(fn(f64) -> f64),
}

fn psi(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

impl Window {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Window::Bump => {
                let p = psi(x);
                if p == 0.0 {
                    return 0.0;
                }
                let s: f64 = (-2..=2).map(|k| psi(x + k as f64)).sum();
                p / s
            }
            Window::Hann => {
                if x.abs() < 1.0 {
                    (PI * x / 2.0).cos().powi(2)
                } else {
                    0.0
                }
            }
            Window::Custom(f) => f(x),
        }
    }

    /// Partition-of-unity, support and positivity checks on a sample grid.
    pub fn check(&self) -> Result<()> {
        for j in 0..=2000 {
            let x = -1.5 + 3.0 * j as f64 / 2000.0;
            let fx = self.eval(x);
            if !(fx >= 0.0) {
                return Err(Error::InvalidWindow(format!("F({x}) = {fx} is negative")));
            }
            if x.abs() >= 1.0 && fx != 0.0 {
                return Err(Error::InvalidWindow(format!("F({x}) = {fx} outside (-1,1)")));
            }
            let s: f64 = (-3..=3).map(|k| self.eval(x + k as f64)).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidWindow(format!("partition sum {s} at x = {x}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::Bump => "bump",
            Window::Hann => "hann",
            Window::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub m: Vec<i64>,
    pub n: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct PovmSystem {
    pub delta: f64,
    pub d: usize,
    pub range: i64,
    pub outcomes: Vec<Outcome>,
    pub factors: Vec<CMat>,
    pub elements: Vec<CMat>,
}

impl PovmSystem {
    pub fn from_factors(delta: f64, d: usize, outcomes: Vec<Outcome>, factors: Vec<CMat>) -> Self {
        let elements = factors.iter().map(|a| a.dot(&dagger(a))).collect();
        PovmSystem { delta, d, range: 0, outcomes, factors, elements }
    }

    pub fn dim(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn completeness_defect(&self) -> f64 {
        let n = self.dim();
        let mut s = CMat::zeros((n, n));
        for e in &self.elements {
            s = s + e;
        }
        norm(&(s - eye(n)))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for e in &self.elements {
            let w = linalg::eigh(e)?.eigenvalues;
            lo = lo.min(w[0]);
        }
        Ok(lo)
    }

    /// `sum_a w(a) E_a`.
    pub fn weighted_sum<F: Fn(&Outcome) -> C64>(&self, w: F) -> CMat {
        let n = self.dim();
        let mut out = CMat::zeros((n, n));
        for (o, e) in self.outcomes.iter().zip(&self.elements) {
            let c = w(o);
            if c != ZERO {
                out.scaled_add(c, e);
            }
        }
        out
    }

    /// `|| sum_a (m_i Delta)^2 E_a - X_i^2 ||`.
    pub fn second_moment_error(&self, t: &SoftTorus, i: usize) -> f64 {
        let x = re_part(&t.unitaries[i]);
        let dl = self.delta;
        let s = self.weighted_sum(|o| C64::from((o.m[i] as f64 * dl).powi(2)));
        norm(&(s - x.dot(&x)))
    }
}

pub fn re_part(u: &CMat) -> CMat {
    (u + &dagger(u)).mapv(|z| z * 0.5)
}

pub fn im_part(u: &CMat) -> CMat {
    (u - &dagger(u)).mapv(|z| z / (2.0 * I))
}

/// POVM `E = A A^dag` with `A = prod F^{1/2}(X_i/Delta - m_i) prod F^{1/2}(Y_i/Delta - n_i)`,
/// `X`s before `Y`s in ascending index order.
pub fn build_povm(t: &SoftTorus, delta: f64, window: Window) -> Result<PovmSystem> {
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(Error::InvalidInput(format!("delta {delta} outside (0, 2]")));
    }
    window.check()?;
    let d = t.d();
    let range = (1.0 / delta).ceil() as i64 + 1;
    let mut coords: Vec<CMat> = t.unitaries.iter().map(re_part).collect();
    coords.extend(t.unitaries.iter().map(im_part));
    let mut tables: Vec<Vec<(i64, CMat)>> = Vec::with_capacity(2 * d);
    for h in &coords {
        let e = linalg::eigh(h)?;
        let mut list = Vec::new();
        for m in -range..=range {
            let f = |w: f64| window.eval(w / delta - m as f64).max(0.0).sqrt();
            if e.eigenvalues.iter().all(|&w| f(w) == 0.0) {
                continue;
            }
            list.push((m, linalg::apply_spectral(&e, f)));
        }
        tables.push(list);
    }
    let n = t.dim();
    let mut outcomes = Vec::new();
    let mut factors = Vec::new();
    let mut idx = vec![0i64; 2 * d];
    enumerate(&tables, 0, &eye(n), &mut idx, &mut |ix, a| {
        outcomes.push(Outcome { m: ix[..d].to_vec(), n: ix[d..].to_vec() });
        factors.push(a.clone());
    });
    let mut p = PovmSystem::from_factors(delta, d, outcomes, factors);
    p.range = range;
    Ok(p)
}

fn enumerate<F: FnMut(&[i64], &CMat)>(tables: &[Vec<(i64, CMat)>], c: usize, acc: &CMat, idx: &mut [i64], emit: &mut F) {
    if c == tables.len() {
        emit(idx, acc);
        return;
    }
    for (m, f) in &tables[c] {
        let next = acc.dot(f);
        if linalg::max_abs(&next) < 1e-15 {
            continue;
        }
        idx[c] = *m;
        enumerate(tables, c + 1, &next, idx, emit);
    }
}

/// Naimark dilation of a POVM with outcome values `V_i = (m_i + i n_i) Delta`.
/// The embedding `W` stacks the blocks `A_a^dag`, so `W^dag Q_a W = E_a`.
#[derive(Clone, Debug)]
pub struct Dilation {
    pub povm: PovmSystem,
    pub blocks: Vec<CMat>,
    pub phases: Vec<Vec<C64>>,
    pub z: C64,
    pub x: f64,
}

pub const DENSE_LIMIT: usize = 4000;

pub fn naimark_dilate(povm: PovmSystem) -> Result<Dilation> {
    if povm.is_empty() {
        return Err(Error::InvalidPovm("no outcomes".into()));
    }
    let defect = povm.completeness_defect();
    if defect > 1e-10 {
        return Err(Error::InvalidPovm(format!("completeness defect {defect:e}")));
    }
    let values: Vec<Vec<C64>> = povm
        .outcomes
        .iter()
        .map(|o| (0..povm.d).map(|i| C64::new(o.m[i] as f64, o.n[i] as f64) * povm.delta).collect())
        .collect();
    let x = Z_SCALE;
    let mut chosen = None;
    for j in 0..64 {
        let z = z_sequence(j);
        if values.iter().flatten().all(|v| (v + z * x).norm() > 1e-8) {
            chosen = Some(z);
            break;
        }
    }
    let z = chosen.ok_or_else(|| Error::DilationFailure("no admissible z".into()))?;
    let phases = values.iter().map(|vs| vs.iter().map(|v| (v + z * x) / (v + z * x).norm()).collect()).collect();
    let blocks = povm.factors.iter().map(dagger).collect();
    Ok(Dilation { povm, blocks, phases, z, x })
}

impl Dilation {
    pub fn dim(&self) -> usize {
        self.povm.dim()
    }

    pub fn outcomes(&self) -> usize {
        self.blocks.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim() * self.outcomes()
    }

    pub fn d(&self) -> usize {
        self.povm.d
    }

    /// `Pi U'_i Pi` on the embedded space: `K_i = sum_a phi_{a,i} E_a`.
    pub fn compressed_unitary(&self, i: usize) -> CMat {
        let n = self.dim();
        let mut k = CMat::zeros((n, n));
        for (ph, e) in self.phases.iter().zip(&self.povm.elements) {
            k.scaled_add(ph[i], e);
        }
        k
    }

    /// `Pi X'_i Pi` on the embedded space.
    pub fn compressed_x(&self, i: usize) -> CMat {
        let dl = self.povm.delta;
        self.povm.weighted_sum(|o| C64::from(o.m[i] as f64 * dl))
    }

    pub fn compressed_y(&self, i: usize) -> CMat {
        let dl = self.povm.delta;
        self.povm.weighted_sum(|o| C64::from(o.n[i] as f64 * dl))
    }

    /// `||[Pi, U'_i]|| = sqrt(max(||I - K K^dag||, ||I - K^dag K||))`.
    pub fn locality_compressed(&self, i: usize) -> f64 {
        let k = self.compressed_unitary(i);
        let n = self.dim();
        let kd = dagger(&k);
        let a = linalg::hermitian_norm(&(eye(n) - k.dot(&kd)));
        let b = linalg::hermitian_norm(&(eye(n) - kd.dot(&k)));
        a.max(b).max(0.0).sqrt()
    }

    pub fn epsilon_compressed(&self) -> f64 {
        (0..self.d()).map(|i| self.locality_compressed(i)).fold(0.0, f64::max)
    }

    fn check_dense(&self) -> Result<()> {
        if self.ambient_dim() > DENSE_LIMIT {
            return Err(Error::TooLarge(format!("ambient dimension {} > {DENSE_LIMIT}", self.ambient_dim())));
        }
        Ok(())
    }

    pub fn embedding(&self) -> Result<CMat> {
        self.check_dense()?;
        let views: Vec<_> = self.blocks.iter().map(|b| b.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("blocks share a shape"))
    }

    pub fn projector(&self) -> Result<CMat> {
        let w = self.embedding()?;
        Ok(w.dot(&dagger(&w)))
    }

    /// Diagonal of `U'_i` in the ambient coordinates.
    pub fn unitary_diagonal(&self, i: usize) -> Array1<C64> {
        let n = self.dim();
        let mut out = Array1::zeros(self.ambient_dim());
        for (a, ph) in self.phases.iter().enumerate() {
            out.slice_mut(s![a * n..(a + 1) * n]).fill(ph[i]);
        }
        out
    }

    pub fn outcome_projector(&self, a: usize) -> Result<CMat> {
        self.check_dense()?;
        let n = self.dim();
        let mut q = CMat::zeros((self.ambient_dim(), self.ambient_dim()));
        for j in a * n..(a + 1) * n {
            q[[j, j]] = ONE;
        }
        Ok(q)
    }

    /// `||[Pi, U'_i]||` evaluated on the materialized ambient space.
    pub fn locality_dense(&self, i: usize) -> Result<f64> {
        let p = self.projector()?;
        let u = self.unitary_diagonal(i);
        let pu = &p * &u.clone().insert_axis(Axis(0));
        let up = &p * &u.insert_axis(Axis(1));
        let c = pu - up;
        let gram = dagger(&c).dot(&c);
        Ok(linalg::hermitian_norm(&gram).max(0.0).sqrt())
    }

    pub fn to_local_projector(&self) -> Result<LocalProjector> {
        let p = self.projector()?;
        let us = (0..self.d()).map(|i| CMat::from_diag(&self.unitary_diagonal(i))).collect();
        Ok(LocalProjector { unitaries: us, projector: p, epsilon: self.epsilon_compressed() })
    }
}

#[derive(Clone, Debug)]
pub struct MapF {
    pub dilation: Dilation,
    pub delta: f64,
    pub epsilon: f64,
}

/// Below this certificate a torus is treated as exactly commuting.
pub const COMMUTING_TOL: f64 = 1e-12;

/// `map_f` at `Delta = sqrt(d eps)`; a commuting input is embedded through its
/// joint eigenbasis instead.
pub fn map_f(t: &SoftTorus, window: Window) -> Result<MapF> {
    if t.epsilon <= COMMUTING_TOL {
        return trivial_embedding(t);
    }
    let delta = (t.d() as f64 * t.epsilon).sqrt();
    map_f_with_delta(t, delta, window)
}

pub fn map_f_with_delta(t: &SoftTorus, delta: f64, window: Window) -> Result<MapF> {
    if delta >= 2.0 {
        return Err(Error::OutOfRegime(format!("Delta = {delta} >= 2")));
    }
    let povm = build_povm(t, delta, window)?;
    let dilation = naimark_dilate(povm)?;
    let epsilon = dilation.epsilon_compressed();
    Ok(MapF { dilation, delta, epsilon })
}

fn trivial_embedding(t: &SoftTorus) -> Result<MapF> {
    let jb = linalg::joint_diagonalize(&t.unitaries, 0)?;
    let n = t.dim();
    let mut factors = Vec::with_capacity(n);
    let mut phases = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for k in 0..n {
        let v = jb.basis.column(k).to_owned().insert_axis(Axis(1));
        factors.push(v.dot(&dagger(&v)));
        phases.push((0..t.d()).map(|i| cis(jb.phases[i][k])).collect());
        outcomes.push(Outcome { m: vec![0; t.d()], n: vec![0; t.d()] });
    }
    let povm = PovmSystem::from_factors(0.0, t.d(), outcomes, factors);
    let blocks = povm.factors.iter().map(dagger).collect();
    let dilation = Dilation { povm, blocks, phases, z: ONE, x: 0.0 };
    let epsilon = dilation.epsilon_compressed();
    Ok(MapF { dilation, delta: 0.0, epsilon })
}

/// `G` applied to a dilation: polar parts of the compressed `U'_i`.
pub fn map_g_dilation(d: &Dilation) -> Result<SoftTorus> {
    let blocks: Vec<CMat> = (0..d.d()).map(|i| d.compressed_unitary(i)).collect();
    let (us, _) = polar_perturbed(&blocks)?;
    let epsilon = commutator_epsilon(&us);
    Ok(SoftTorus { unitaries: us, epsilon })
}

#[derive(Clone, Debug)]
pub struct RoundTrip {
    pub distance: f64,
    pub epsilon_prime: f64,
    pub delta: f64,
    pub outcomes: usize,
}

pub fn roundtrip_gf(t: &SoftTorus, window: Window) -> Result<RoundTrip> {
    let f = map_f(t, window)?;
    roundtrip_from(t, &f)
}

pub fn roundtrip_from(t: &SoftTorus, f: &MapF) -> Result<RoundTrip> {
    let g = map_g_dilation(&f.dilation)?;
    let distance = g.unitaries.iter().zip(&t.unitaries).map(|(a, b)| norm(&(a - b))).fold(0.0, f64::max);
    Ok(RoundTrip { distance, epsilon_prime: f.epsilon, delta: f.delta, outcomes: f.dilation.outcomes() })
}

fn conjugation_distance(a: &SoftTorus, b: &SoftTorus, y: &CMat) -> f64 {
    let yd = dagger(y);
    a.unitaries
        .iter()
        .zip(&b.unitaries)
        .map(|(ua, ub)| norm(&(yd.dot(&ua.dot(y)) - ub)))
        .fold(0.0, f64::max)
}

fn sorted_eigenframe(u: &CMat) -> Result<CMat> {
    let jb = linalg::joint_diagonalize(std::slice::from_ref(u), 0)?;
    let mut order: Vec<usize> = (0..u.nrows()).collect();
    order.sort_by(|&i, &j| jb.phases[0][i].partial_cmp(&jb.phases[0][j]).unwrap());
    Ok(jb.basis.select(Axis(1), &order))
}

/// Intertwiner minimizing `sum_i ||A_i Y - Y B_i||_F^2` over `||Y||_F = 1`, then polar.
fn cross_gram_alignment(a: &SoftTorus, b: &SoftTorus) -> Result<CMat> {
    let n = a.dim();
    let nn = n * n;
    let mut g = CMat::zeros((nn, nn));
    let id = eye(n);
    for (ua, ub) in a.unitaries.iter().zip(&b.unitaries) {
        let l = linalg::kron(ua, &id) - linalg::kron(&id, &ub.t().to_owned());
        g = g + dagger(&l).dot(&l);
    }
    let e = linalg::eigh(&linalg::hermitian_part(&g))?;
    let y = e.eigenvectors.column(0).to_owned().into_shape_with_order((n, n)).unwrap();
    linalg::polar(&y)
}

/// Upper bound on `min_Y max_i ||Y^dag A_i Y - B_i||` over identity,
/// `U_1` eigenframe alignment, and cross-Gram alignment.
pub fn distance_upper(a: &SoftTorus, b: &SoftTorus) -> Result<f64> {
    if a.dim() != b.dim() || a.d() != b.d() {
        return Err(Error::InvalidInput("tori differ in shape".into()));
    }
    let mut best = conjugation_distance(a, b, &eye(a.dim()));
    if let (Ok(fa), Ok(fb)) = (sorted_eigenframe(&a.unitaries[0]), sorted_eigenframe(&b.unitaries[0])) {
        best = best.min(conjugation_distance(a, b, &fa.dot(&dagger(&fb))));
    }
    if a.dim() <= 40 {
        if let Ok(y) = cross_gram_alignment(a, b) {
            best = best.min(conjugation_distance(a, b, &y));
        }
    }
    Ok(best)
}

/// `exp(i s K)` for Hermitian `K`.
pub fn unitary_exp(k: &CMat, s: f64) -> Result<CMat> {
    let e = linalg::eigh(k)?;
    let q = &e.eigenvectors;
    let ph = e.eigenvalues.mapv(|w| cis(s * w));
    Ok((q * &ph.insert_axis(Axis(0))).dot(&dagger(q)))
}

/// Commuting unitaries with a rotated spectral projector tuned by bisection
/// so that `max ||[P, U_i]|| = delta`.
pub fn random_local_projector(dim: usize, d: usize, rank: usize, delta: f64, seed: u64) -> Result<LocalProjector> {
    use rand::Rng;
    if rank == 0 || rank >= dim {
        return Err(Error::InvalidInput("need 0 < rank < dim".into()));
    }
    let mut r = linalg::rng(seed);
    let q = linalg::haar_unitary_rng(dim, &mut r);
    let qd = dagger(&q);
    let us: Vec<CMat> = (0..d)
        .map(|_| {
            let ph: Array1<C64> = (0..dim).map(|_| cis(r.random_range(0.0..2.0 * PI))).collect();
            (&q * &ph.insert_axis(Axis(0))).dot(&qd)
        })
        .collect();
    let mut p0 = CMat::zeros((dim, dim));
    for k in 0..rank {
        p0[[k, k]] = ONE;
    }
    let p0 = q.dot(&p0).dot(&qd);
    let kh = linalg::random_hermitian(dim, &mut r);
    let rotated = |s: f64| -> Result<CMat> {
        let w = unitary_exp(&kh, s)?;
        Ok(linalg::hermitian_part(&w.dot(&p0).dot(&dagger(&w))))
    };
    let eps_at = |s: f64| -> Result<f64> { Ok(locality_epsilon(&rotated(s)?, &us)) };
    let mut hi = 1e-3;
    while eps_at(hi)? < delta {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::GenerationFailure(format!("locality {delta} not reachable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = rotated(lo)?;
    let epsilon = locality_epsilon(&p, &us);
    Ok(LocalProjector { unitaries: us, projector: p, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, max_abs, rng};
    use proptest::prelude::*;

    fn clock_shift(k: usize) -> (CMat, CMat) {
        let mut c = CMat::zeros((k, k));
        let mut s = CMat::zeros((k, k));
        for j in 0..k {
            c[[j, j]] = cis(2.0 * PI * j as f64 / k as f64);
            s[[(j + 1) % k, j]] = ONE;
        }
        (c, s)
    }

    fn commuting_torus(dim: usize, d: usize, seed: u64) -> SoftTorus {
        use rand::Rng;
        let q = haar_unitary(dim, seed);
        let mut r = rng(seed + 1);
        let us = (0..d)
            .map(|_| {
                let ph: Array1<C64> = (0..dim).map(|_| cis(r.random_range(0.0..2.0 * PI))).collect();
                (&q * &ph.insert_axis(Axis(0))).dot(&dagger(&q))
            })
            .collect();
        SoftTorus::new(us).unwrap()
    }

    #[test]
    fn voiculescu_identities() {
        for n in 2..=6 {
            let t = voiculescu_pair(n).unwrap();
            let (u, v) = (&t.unitaries[0], &t.unitaries[1]);
            let w = dagger(v).dot(&dagger(u)).dot(v).dot(u);
            let ph = cis(2.0 * PI / (n * n) as f64);
            assert!(max_abs(&(w - eye(n * n).mapv(|z| z * ph))) < 1e-12);
            assert!(commutator_epsilon(&t.unitaries) <= t.epsilon + 1e-10);
        }
        let t3 = voiculescu_pair(3).unwrap();
        assert!((t3.epsilon - 0.684040).abs() < 1e-6);
        assert!((commutator_epsilon(&t3.unitaries) - 0.684040).abs() < 1e-6);
        assert!((voiculescu_pair(4).unwrap().epsilon - 0.390181).abs() < 1e-6);
        assert!(voiculescu_pair(1).is_err());
    }

    #[test]
    fn voiculescu_spectra() {
        for n in [2usize, 3, 5] {
            let t = voiculescu_pair(n).unwrap();
            let nn = n * n;
            for u in &t.unitaries {
                let mut got: Vec<f64> = linalg::eig_values(u).unwrap().iter().map(|z| z.arg().rem_euclid(2.0 * PI)).collect();
                got.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for (j, g) in got.iter().enumerate() {
                    let want = 2.0 * PI * j as f64 / nn as f64;
                    let diff = (g - want).abs().min(2.0 * PI - (g - want).abs());
                    assert!(diff < 1e-8, "{n} {j} {g} {want}");
                }
            }
        }
    }

    #[test]
    fn plaquettes() {
        for n in 2..=8 {
            let ph = plaquette_phases(n).unwrap();
            let want = cis(2.0 * PI / (n * n) as f64);
            assert!(ph.iter().all(|p| (p - want).norm() < 1e-12));
            let prod = ph.iter().fold(ONE, |a, b| a * b);
            assert!((prod - ONE).norm() < 1e-10);
        }
        assert!((plaquette_phases(2).unwrap()[0] - I).norm() < 1e-12);
    }

    #[test]
    fn commutator_examples() {
        let d1 = CMat::from_diag(&Array1::from(vec![cis(0.1), cis(0.7)]));
        let d2 = CMat::from_diag(&Array1::from(vec![cis(-0.4), cis(2.0)]));
        assert!(commutator_epsilon(&[d1, d2]) < 1e-15);
        for k in [3usize, 5, 8] {
            let (c, s) = clock_shift(k);
            let want = (cis(2.0 * PI / k as f64) - ONE).norm();
            assert!((commutator_epsilon(&[c, s]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn map_g_examples() {
        let t = commuting_torus(6, 2, 3);
        let full = LocalProjector::new(t.unitaries.clone(), eye(6)).unwrap();
        let g = map_g(&full).unwrap();
        for (a, b) in g.torus.unitaries.iter().zip(&t.unitaries) {
            assert!(max_abs(&(a - b)) < 1e-12);
        }
        let jb = linalg::joint_diagonalize(&t.unitaries, 0).unwrap();
        let fr = jb.basis.slice(s![.., 0..3]).to_owned();
        let p = fr.dot(&dagger(&fr));
        let lp = LocalProjector::new(t.unitaries.clone(), p).unwrap();
        assert!(lp.epsilon < 1e-10);
        let g = map_g(&lp).unwrap();
        assert!(g.torus.epsilon < 1e-10);
        let b = projector_frame(&lp.projector).unwrap();
        let direct = dagger(&b).dot(&t.unitaries[0]).dot(&b);
        assert!(max_abs(&(&g.torus.unitaries[0] - &direct)) < 1e-9);
    }

    #[test]
    fn map_g_certificate() {
        for (j, &delta) in [0.05, 0.1, 0.2].iter().enumerate() {
            for seed in 0..5 {
                let lp = random_local_projector(10, 2, 4, delta, seed + 10 * j as u64).unwrap();
                assert!((lp.epsilon - delta).abs() < 1e-6);
                let g = map_g(&lp).unwrap();
                assert!(g.torus.epsilon <= g.bound, "{} {}", g.torus.epsilon, g.bound);
            }
        }
    }

    #[test]
    fn windows() {
        Window::Bump.check().unwrap();
        Window::Hann.check().unwrap();
        assert_eq!(Window::Bump.eval(1.0), 0.0);
        assert_eq!(Window::Bump.eval(-1.0), 0.0);
        fn bad(x: f64) -> f64 {
            if x.abs() < 1.0 {
                1.0 - x.abs() * 0.9
            } else {
                0.0
            }
        }
        assert!(matches!(Window::Custom(bad).check(), Err(Error::InvalidWindow(_))));
        fn tent(x: f64) -> f64 {
            (1.0 - x.abs()).max(0.0)
        }
        Window::Custom(tent).check().unwrap();
    }

    #[test]
    fn povm_on_voiculescu() {
        let t = voiculescu_pair(4).unwrap();
        let delta = (2.0 * t.epsilon).sqrt();
        let p = build_povm(&t, delta, Window::Bump).unwrap();
        assert!(p.completeness_defect() < 1e-10);
        assert!(p.min_eigenvalue().unwrap() >= -1e-12);
        assert!(p.elements.iter().all(|e| norm(e) <= 1.0 + 1e-12));
        let ph = build_povm(&t, delta, Window::Hann).unwrap();
        assert!(ph.completeness_defect() < 1e-10);
        assert!(build_povm(&t, 2.5, Window::Bump).is_err());
    }

    #[test]
    fn povm_commutes_for_diagonal_input() {
        let u = CMat::from_diag(&Array1::from(vec![cis(0.3), cis(1.9), cis(-2.2), cis(3.0)]));
        let t = SoftTorus::new(vec![u]).unwrap();
        let p = build_povm(&t, 0.4, Window::Bump).unwrap();
        for a in &p.elements {
            for b in &p.elements {
                assert!(max_abs(&commutator(a, b)) < 1e-14);
            }
        }
    }

    #[test]
    fn two_outcome_dilation() {
        let e = 0.3f64;
        let f1 = CMat::from_elem((1, 1), C64::from(e.sqrt()));
        let f2 = CMat::from_elem((1, 1), C64::from((1.0 - e).sqrt()));
        let out = vec![Outcome { m: vec![0], n: vec![0] }, Outcome { m: vec![1], n: vec![0] }];
        let p = PovmSystem::from_factors(1.0, 1, out, vec![f1, f2]);
        let dl = naimark_dilate(p).unwrap();
        let pi = dl.projector().unwrap();
        assert_eq!(pi.dim(), (2, 2));
        assert!((linalg::trace(&pi).re - 1.0).abs() < 1e-14);
        let w = dl.embedding().unwrap();
        for a in 0..2 {
            let q = dl.outcome_projector(a).unwrap();
            let r = dagger(&w).dot(&q).dot(&w);
            assert!(max_abs(&(r - &dl.povm.elements[a])) < 1e-14);
        }
        let bad = PovmSystem::from_factors(1.0, 1, vec![Outcome { m: vec![0], n: vec![0] }], vec![eye(1).mapv(|z| z * 0.5)]);
        assert!(matches!(naimark_dilate(bad), Err(Error::InvalidPovm(_))));
    }

    #[test]
    fn dilation_identities_voiculescu() {
        let t = voiculescu_pair(3).unwrap();
        let f = map_f(&t, Window::Bump).unwrap();
        let dl = &f.dilation;
        assert!(dl.ambient_dim() <= DENSE_LIMIT, "{}", dl.ambient_dim());
        let w = dl.embedding().unwrap();
        assert!(max_abs(&(dagger(&w).dot(&w) - eye(9))) < 1e-10);
        let mut qsum = CMat::zeros((dl.ambient_dim(), dl.ambient_dim()));
        for a in 0..dl.outcomes().min(6) {
            let q = dl.outcome_projector(a).unwrap();
            assert!(max_abs(&(dagger(&w).dot(&q).dot(&w) - &dl.povm.elements[a])) < 1e-10);
        }
        for a in 0..dl.outcomes() {
            qsum = qsum + dl.outcome_projector(a).unwrap();
        }
        assert_eq!(qsum, eye(dl.ambient_dim()));
        for i in 0..2 {
            let dense = dl.locality_dense(i).unwrap();
            assert!((dense - dl.locality_compressed(i)).abs() < 1e-9);
        }
        let lp = dl.to_local_projector().unwrap();
        assert!(commutator_epsilon(&lp.unitaries) < 1e-10);
        assert!(lp.unitaries.iter().all(|u| linalg::unitarity_defect(u) < 1e-10));
    }

    #[test]
    fn commuting_input_compresses_close() {
        let t = commuting_torus(6, 2, 8);
        let mut last = f64::INFINITY;
        for delta in [0.4, 0.2, 0.1] {
            let f = map_f_with_delta(&t, delta, Window::Bump).unwrap();
            let err = norm(&(f.dilation.compressed_x(0) - re_part(&t.unitaries[0])));
            assert!(err <= 2.0 * delta, "{err} {delta}");
            let m2 = f.dilation.povm.second_moment_error(&t, 0);
            assert!(m2 <= last + 1e-12);
            last = m2;
        }
        let trivial = map_f(&t, Window::Bump).unwrap();
        assert!(trivial.epsilon < 1e-6, "{}", trivial.epsilon);
        let rt = roundtrip_from(&t, &trivial).unwrap().distance;
        assert!(rt < 1e-10, "{rt}");
    }

    #[test]
    fn roundtrip_decreases_on_voiculescu() {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for n in [3usize, 4, 5] {
            let t = voiculescu_pair(n).unwrap();
            let r = roundtrip_gf(&t, Window::Bump).unwrap();
            assert!(r.distance.is_finite());
            assert!(r.distance <= last.0 && r.epsilon_prime <= last.1, "{n} {r:?}");
            last = (r.distance, r.epsilon_prime);
        }
        assert!(matches!(map_f_with_delta(&voiculescu_pair(3).unwrap(), 2.0, Window::Bump), Err(Error::OutOfRegime(_))));
    }

    #[test]
    fn sums_and_complements() {
        let t = voiculescu_pair(3).unwrap();
        let triv = commuting_torus(4, 2, 1);
        let s = t.direct_sum(&triv).unwrap();
        assert_eq!(s.dim(), 13);
        assert_eq!(s.epsilon, t.epsilon);
        assert!(commutator_epsilon(&s.unitaries) <= s.epsilon + 1e-10);
        assert!(t.direct_sum(&SoftTorus::new(vec![eye(2)]).unwrap()).is_err());
        let lp = random_local_projector(8, 2, 3, 0.1, 4).unwrap();
        let c = lp.complement();
        assert!((locality_epsilon(&c.projector, &c.unitaries) - lp.epsilon).abs() < 1e-12);
        let ls = lp.direct_sum(&c).unwrap();
        assert_eq!(ls.dim(), 16);
    }

    #[test]
    fn distance_examples() {
        let t = voiculescu_pair(3).unwrap();
        assert_eq!(distance_upper(&t, &t).unwrap(), 0.0);
        let y = haar_unitary(9, 5);
        let conj: Vec<CMat> = t.unitaries.iter().map(|u| dagger(&y).dot(u).dot(&y)).collect();
        let b = SoftTorus::with_epsilon(conj, t.epsilon).unwrap();
        assert!(distance_upper(&t, &b).unwrap() <= 1e-8);
        let c = commuting_torus(9, 2, 2);
        let ident = c.unitaries.iter().zip(&t.unitaries).map(|(a, b)| norm(&(a - b))).fold(0.0, f64::max);
        assert!(distance_upper(&t, &c).unwrap() <= ident);
    }

    #[test]
    fn json_roundtrip() {
        let t = voiculescu_pair(2).unwrap();
        let back = SoftTorus::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.unitaries, t.unitaries);
        assert_eq!(back.epsilon, t.epsilon);
        let lp = random_local_projector(5, 2, 2, 0.1, 0).unwrap();
        let lb = LocalProjector::from_json(&lp.to_json().unwrap()).unwrap();
        assert_eq!(lb.projector, lp.projector);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn povm_complete_on_random_tori(seed in 0u64..1000, delta in 0.3f64..1.5, hann in any::<bool>()) {
            let mut r = rng(seed);
            let u = linalg::haar_unitary_rng(5, &mut r);
            let v = linalg::haar_unitary_rng(5, &mut r);
            let t = SoftTorus::new(vec![u, v]).unwrap();
            let w = if hann { Window::Hann } else { Window::Bump };
            let p = build_povm(&t, delta, w).unwrap();
            prop_assert!(p.completeness_defect() < 1e-10);
            prop_assert!(p.min_eigenvalue().unwrap() >= -1e-12);
        }

        #[test]
        fn certificates_never_understate(seed in 0u64..1000, delta in 0.02f64..0.3) {
            let lp = random_local_projector(8, 2, 3, delta, seed).unwrap();
            prop_assert!(locality_epsilon(&lp.projector, &lp.unitaries) <= lp.epsilon + 1e-10);
            let g = map_g(&lp).unwrap();
            prop_assert!(commutator_epsilon(&g.torus.unitaries) <= g.torus.epsilon + 1e-10);
            prop_assert!(g.torus.epsilon <= g.bound);
        }

        #[test]
        fn compressed_matches_dense(seed in 0u64..1000) {
            let mut r = rng(seed);
            let u = linalg::haar_unitary_rng(3, &mut r);
            let v = linalg::haar_unitary_rng(3, &mut r);
            let t = SoftTorus::new(vec![u, v]).unwrap();
            let f = map_f_with_delta(&t, 1.2, Window::Bump).unwrap();
            let dl = &f.dilation;
            prop_assume!(dl.ambient_dim() <= 1500);
            for i in 0..2 {
                prop_assert!((dl.locality_dense(i).unwrap() - dl.locality_compressed(i)).abs() < 1e-9);
            }
        }
    }
}

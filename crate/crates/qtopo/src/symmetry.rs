//! Symmetric (`U = U^T`) and self-dual (`U = -Z U^T Z`) classes, structured
//! rank decompositions and the class-preserving Naimark dilation.

use ndarray::{s, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dagger, eye, frobenius, transpose, CMat, Rng64, C64, ONE};
use crate::soft_torus::{self, LocalProjector, SoftTorus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTag {
    None,
    Symmetric,
    #[serde(alias = "self_dual")]
    Selfdual,
}

impl std::str::FromStr for ClassTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClassTag::None),
            "symmetric" => Ok(ClassTag::Symmetric),
            "selfdual" | "self_dual" | "self-dual" => Ok(ClassTag::Selfdual),
            _ => Err(Error::InvalidInput(format!("unknown class {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SymmetryClass {
    None,
    Symmetric,
    SelfDual(CMat),
}

/// `[[0, I], [-I, 0]]`.
pub fn standard_form(n: usize) -> Result<CMat> {
    if n % 2 != 0 {
        return Err(Error::InvalidInput(format!("self-dual class needs even dimension, got {n}")));
    }
    let h = n / 2;
    let mut z = CMat::zeros((n, n));
    for k in 0..h {
        z[[k, k + h]] = ONE;
        z[[k + h, k]] = -ONE;
    }
    Ok(z)
}

/// Block diagonal with `[[0, 1], [-1, 0]]` blocks.
pub fn pair_form(n: usize) -> Result<CMat> {
    if n % 2 != 0 {
        return Err(Error::InvalidInput(format!("self-dual class needs even dimension, got {n}")));
    }
    let mut z = CMat::zeros((n, n));
    for k in (0..n).step_by(2) {
        z[[k, k + 1]] = ONE;
        z[[k + 1, k]] = -ONE;
    }
    Ok(z)
}

impl SymmetryClass {
    pub fn self_dual(n: usize) -> Result<Self> {
        Ok(SymmetryClass::SelfDual(standard_form(n)?))
    }

    /// Self-dual class for an explicit real `Z` with `Z^2 = -I` and `Z^T = -Z`.
    pub fn self_dual_with(z: CMat) -> Result<Self> {
        let n = z.nrows();
        if z.ncols() != n || n % 2 != 0 {
            return Err(Error::InvalidInput("Z must be square of even size".into()));
        }
        let sq = linalg::max_abs(&(z.dot(&z) + eye(n)));
        let anti = linalg::max_abs(&(transpose(&z) + &z));
        let imag = z.iter().map(|w| w.im.abs()).fold(0.0, f64::max);
        if sq > 1e-12 || anti > 1e-12 || imag > 0.0 {
            return Err(Error::InvalidInput("Z must be real, antisymmetric and square to -I".into()));
        }
        Ok(SymmetryClass::SelfDual(z))
    }

    pub fn from_tag(tag: ClassTag, n: usize) -> Result<Self> {
        match tag {
            ClassTag::None => Ok(SymmetryClass::None),
            ClassTag::Symmetric => Ok(SymmetryClass::Symmetric),
            ClassTag::Selfdual => Self::self_dual(n),
        }
    }

    pub fn tag(&self) -> ClassTag {
        match self {
            SymmetryClass::None => ClassTag::None,
            SymmetryClass::Symmetric => ClassTag::Symmetric,
            SymmetryClass::SelfDual(_) => ClassTag::Selfdual,
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if let SymmetryClass::SelfDual(z) = self {
            if z.nrows() != n {
                return Err(Error::InvalidInput(format!("Z has size {} but matrix has size {n}", z.nrows())));
            }
        }
        Ok(())
    }

    /// Antiunitary `v -> Z conj(v)` for self-dual, `conj(v)` for symmetric.
    pub fn conjugate(&self, v: &Array1<C64>) -> Array1<C64> {
        let c = v.mapv(|w| w.conj());
        match self {
            SymmetryClass::SelfDual(z) => z.dot(&c),
            _ => c,
        }
    }
}

/// `M^T` (symmetric) or `-Z M^T Z` (self-dual); the identity map for `None`.
pub fn tau(m: &CMat, cls: &SymmetryClass) -> Result<CMat> {
    cls.check_dim(m.nrows())?;
    Ok(match cls {
        SymmetryClass::None => m.clone(),
        SymmetryClass::Symmetric => transpose(m),
        SymmetryClass::SelfDual(z) => -z.dot(&transpose(m)).dot(z),
    })
}

/// `||M - tau(M)||` in the Frobenius norm, an upper bound on the operator norm.
pub fn symmetry_check(m: &CMat, cls: &SymmetryClass) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput("square matrix required".into()));
    }
    if let (SymmetryClass::SelfDual(_), true) = (cls, m.nrows() % 2 != 0) {
        return Err(Error::InvalidInput("self-dual class needs even dimension".into()));
    }
    Ok(frobenius(&(m - &tau(m, cls)?)))
}

pub fn symmetrize(m: &CMat, cls: &SymmetryClass) -> Result<CMat> {
    Ok((m + &tau(m, cls)?).mapv(|w| w * 0.5))
}

const CONSTRUCTION_TOL: f64 = 1e-10;

/// Pivoted Cholesky of a positive semidefinite class member into vectors with
/// `R = sum v v^dag`: real vectors (symmetric) or consecutive pairs
/// `(v, Z conj(v))` (self-dual).
pub fn structured_factors(r: &CMat, cls: &SymmetryClass, tol: f64) -> Result<Vec<Array1<C64>>> {
    let n = r.nrows();
    let mut rem = linalg::hermitian_part(r);
    if matches!(cls, SymmetryClass::Symmetric) {
        rem.mapv_inplace(|w| C64::new(w.re, 0.0));
    }
    let mut out = Vec::new();
    loop {
        let (k, piv) = (0..n).map(|k| (k, rem[[k, k]].re)).fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if n == 0 || piv <= tol {
            break;
        }
        let v = rem.column(k).mapv(|w| w / piv.sqrt());
        let terms = match cls {
            SymmetryClass::SelfDual(_) => {
                let w = cls.conjugate(&v);
                vec![v, w]
            }
            _ => vec![v],
        };
        for t in terms {
            let tc = t.mapv(|w| w.conj());
            for (mut row, &ti) in rem.outer_iter_mut().zip(t.iter()) {
                row.scaled_add(-ti, &tc);
            }
            out.push(t);
        }
        if out.len() > 2 * n + 2 {
            return Err(Error::DilationFailure("structured factorization did not terminate".into()));
        }
    }
    Ok(out)
}

/// Class-structured rank-one (symmetric) or rank-two (self-dual) decomposition
/// of a projector, returned as its unit vectors.
pub fn structured_rank_decomposition(p: &CMat, cls: &SymmetryClass) -> Result<Vec<Array1<C64>>> {
    let defect = symmetry_check(p, cls)?;
    if defect > CONSTRUCTION_TOL {
        return Err(Error::InvalidInput(format!("class defect {defect:e} exceeds {CONSTRUCTION_TOL:e}")));
    }
    let idem = frobenius(&(p.dot(p) - p));
    if idem > 1e-9 || linalg::hermiticity_defect(p) > 1e-12 {
        return Err(Error::InvalidInput(format!("not a projector (defect {idem:e})")));
    }
    structured_factors(p, cls, 0.5 / p.nrows().max(1) as f64)
}

pub fn reconstruct(vs: &[Array1<C64>], n: usize) -> CMat {
    let mut p = CMat::zeros((n, n));
    for v in vs {
        let c = v.clone().insert_axis(Axis(1));
        p = p + c.dot(&dagger(&c));
    }
    p
}

/// Orthonormal class-structured frame for the range of a projector; for the
/// self-dual class the columns are ordered `(v_1..v_k, Zv_1..Zv_k)` so the
/// compressed operators are self-dual with respect to the standard form.
pub fn class_frame(p: &CMat, cls: &SymmetryClass) -> Result<CMat> {
    let vs = structured_rank_decomposition(p, cls)?;
    let n = p.nrows();
    let order: Vec<usize> = match cls {
        SymmetryClass::SelfDual(_) => (0..vs.len()).step_by(2).chain((1..vs.len()).step_by(2)).collect(),
        _ => (0..vs.len()).collect(),
    };
    let mut f = CMat::zeros((n, vs.len()));
    for (c, &k) in order.iter().enumerate() {
        f.column_mut(c).assign(&vs[k]);
    }
    Ok(f)
}

/// Class of the compressed operators produced by `class_frame`.
pub fn compressed_class(cls: &SymmetryClass, rank: usize) -> Result<SymmetryClass> {
    Ok(match cls {
        SymmetryClass::SelfDual(_) => SymmetryClass::self_dual(rank)?,
        other => other.clone(),
    })
}

/// `map_G` with a class-structured frame.
pub fn class_map_g(p: &LocalProjector, cls: &SymmetryClass) -> Result<(SoftTorus, SymmetryClass)> {
    if p.epsilon > 0.6 {
        return Err(Error::OutOfRegime(format!("locality {} exceeds 0.6", p.epsilon)));
    }
    let f = class_frame(&p.projector, cls)?;
    if f.ncols() == 0 {
        return Err(Error::InvalidInput("projector has rank zero".into()));
    }
    let fd = dagger(&f);
    let mut us = Vec::with_capacity(p.unitaries.len());
    for u in &p.unitaries {
        us.push(linalg::polar(&fd.dot(&u.dot(&f)))?);
    }
    let epsilon = soft_torus::commutator_epsilon(&us);
    Ok((SoftTorus { unitaries: us, epsilon }, compressed_class(cls, f.ncols())?))
}

/// Unitary `M` whose first `D` rows stack the class-structured vectors of
/// every POVM element; `Q_i` projects onto the columns of element `i`.
#[derive(Clone, Debug)]
pub struct SymmetricDilation {
    pub m: CMat,
    pub dim: usize,
    pub counts: Vec<usize>,
    pub class: SymmetryClass,
}

pub fn symmetric_naimark_dilate(elements: &[CMat], cls: &SymmetryClass) -> Result<SymmetricDilation> {
    if elements.is_empty() {
        return Err(Error::InvalidPovm("no elements".into()));
    }
    let d = elements[0].nrows();
    let mut total = CMat::zeros((d, d));
    for (i, e) in elements.iter().enumerate() {
        let defect = symmetry_check(e, cls)?;
        if defect > CONSTRUCTION_TOL {
            return Err(Error::InvalidPovm(format!("element {i} has class defect {defect:e}")));
        }
        total = total + e;
    }
    let comp = frobenius(&(total - eye(d)));
    if comp > CONSTRUCTION_TOL {
        return Err(Error::InvalidPovm(format!("completeness defect {comp:e}")));
    }
    let mut cols = Vec::new();
    let mut counts = Vec::with_capacity(elements.len());
    for e in elements {
        let vs = structured_factors(e, cls, 1e-15)?;
        counts.push(vs.len());
        cols.extend(vs);
    }
    let dp = cols.len();
    let mut a = CMat::zeros((d, dp));
    for (c, v) in cols.iter().enumerate() {
        a.column_mut(c).assign(v);
    }
    let iso = frobenius(&(a.dot(&dagger(&a)) - eye(d)));
    if iso > 1e-9 {
        return Err(Error::DilationFailure(format!("stacked vectors are not an isometry: {iso:e}")));
    }
    // Rows orthogonal to those of `A` span the range of `I - A^T conj(A)`.
    let at = transpose(&a);
    let complement = linalg::hermitian_part(&(eye(dp) - at.dot(&a.mapv(|w| w.conj()))));
    let col_class = match cls {
        SymmetryClass::SelfDual(_) => SymmetryClass::SelfDual(pair_form(dp)?),
        other => other.clone(),
    };
    let rows = structured_factors(&complement, &col_class, 0.5 / dp as f64)?;
    if d + rows.len() != dp {
        return Err(Error::DilationFailure(format!(
            "completion found {} rows, expected {} (D = {d}, D' = {dp})",
            rows.len(),
            dp - d
        )));
    }
    let mut m = CMat::zeros((dp, dp));
    m.slice_mut(s![..d, ..]).assign(&a);
    for (k, r) in rows.iter().enumerate() {
        m.row_mut(d + k).assign(r);
    }
    let ud = linalg::unitarity_defect(&m);
    if ud > 1e-9 {
        return Err(Error::DilationFailure(format!("completed matrix has unitarity defect {ud:e}")));
    }
    let class = match cls {
        SymmetryClass::SelfDual(z) => {
            let mut big = CMat::zeros((dp, dp));
            big.slice_mut(s![..d, ..d]).assign(z);
            big.slice_mut(s![d.., d..]).assign(&pair_form(dp - d)?);
            SymmetryClass::SelfDual(big)
        }
        other => other.clone(),
    };
    Ok(SymmetricDilation { m, dim: d, counts, class })
}

impl SymmetricDilation {
    pub fn ambient_dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn pi(&self) -> CMat {
        let mut p = CMat::zeros((self.ambient_dim(), self.ambient_dim()));
        for k in 0..self.dim {
            p[[k, k]] = ONE;
        }
        p
    }

    fn columns(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.counts[..i].iter().sum();
        start..start + self.counts[i]
    }

    pub fn q(&self, i: usize) -> CMat {
        let c = self.m.slice(s![.., self.columns(i)]);
        c.dot(&dagger(&c.to_owned()))
    }

    /// `U'_i = sum_a phi_{a,i} Q_a`.
    pub fn unitary(&self, phases: &[C64]) -> CMat {
        let diag: Array1<C64> = self.counts.iter().zip(phases).flat_map(|(&c, &p)| std::iter::repeat_n(p, c)).collect();
        (&self.m * &diag.insert_axis(Axis(0))).dot(&dagger(&self.m))
    }

    /// Largest `||Pi Q_i Pi - E_i||` over the elements.
    pub fn compression_defect(&self, elements: &[CMat]) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for (i, e) in elements.iter().enumerate() {
            let c = self.m.slice(s![..d, self.columns(i)]).to_owned();
            worst = worst.max(frobenius(&(c.dot(&dagger(&c)) - e)));
        }
        worst
    }

    /// `||C C^dag - tau(C C^dag)||` from the factor: the difference is `L M^dag`
    /// with `L`, `M` of width `2c`, and `||L M^dag|| = ||R_L R_M^dag||`.
    fn factor_defect(&self, c: &CMat) -> Result<f64> {
        if c.ncols() == 0 {
            return Ok(0.0);
        }
        if 2 * c.ncols() >= c.nrows() {
            return symmetry_check(&c.dot(&dagger(c)), &self.class);
        }
        let cbar = c.mapv(|w| w.conj());
        let (l2, m2) = match &self.class {
            SymmetryClass::None => return Ok(0.0),
            SymmetryClass::Symmetric => (cbar.clone(), cbar.mapv(|w| -w)),
            SymmetryClass::SelfDual(z) => (z.dot(&cbar), dagger(z).dot(&cbar)),
        };
        let l = ndarray::concatenate![Axis(1), c.view(), l2.view()];
        let m = ndarray::concatenate![Axis(1), c.view(), m2.view()];
        Ok(frobenius(&linalg::qr_r(&l)?.dot(&dagger(&linalg::qr_r(&m)?))))
    }

    /// Largest class defect of `Pi` and every `Q_i`.
    pub fn class_defect(&self) -> Result<f64> {
        self.class.check_dim(self.ambient_dim())?;
        let e = eye(self.ambient_dim());
        let mut worst = self.factor_defect(&e.slice(s![.., ..self.dim]).to_owned())?;
        for i in 0..self.counts.len() {
            worst = worst.max(self.factor_defect(&self.m.slice(s![.., self.columns(i)]).to_owned())?);
        }
        Ok(worst)
    }

    pub fn extended_form(&self) -> Option<&CMat> {
        match &self.class {
            SymmetryClass::SelfDual(z) => Some(z),
            _ => None,
        }
    }
}

pub fn random_class_hermitian(n: usize, cls: &SymmetryClass, rng: &mut Rng64) -> Result<CMat> {
    symmetrize(&linalg::random_hermitian(n, rng), cls)
}

/// `U_i = exp(i (t_i H_0 + s G_i))` with class-member Hermitian `H_0, G_i`.
pub fn random_class_torus(n: usize, d: usize, cls: &SymmetryClass, s: f64, seed: u64) -> Result<SoftTorus> {
    use rand::Rng;
    let mut r = linalg::rng(seed);
    let h0 = random_class_hermitian(n, cls, &mut r)?;
    let mut us = Vec::with_capacity(d);
    for _ in 0..d {
        let t = r.random_range(0.5..2.0);
        let g = random_class_hermitian(n, cls, &mut r)?;
        let k = h0.mapv(|w| w * t) + g.mapv(|w| w * s);
        us.push(soft_torus::unitary_exp(&k, 1.0)?);
    }
    SoftTorus::new(us)
}

/// Exactly commuting class unitaries `exp(i t_i H_0)` with a class projector
/// rotated off the spectral projector of `H_0` until `max ||[P, U_i]|| = delta`.
pub fn random_class_local_projector(n: usize, d: usize, rank: usize, delta: f64, cls: &SymmetryClass, seed: u64) -> Result<LocalProjector> {
    use rand::Rng;
    if rank == 0 || rank >= n {
        return Err(Error::InvalidInput("need 0 < rank < dim".into()));
    }
    let mut r = linalg::rng(seed);
    let h0 = random_class_hermitian(n, cls, &mut r)?;
    let e = linalg::eigh(&h0)?;
    let mut us = Vec::with_capacity(d);
    for _ in 0..d {
        us.push(soft_torus::unitary_exp(&h0, r.random_range(0.5..2.0))?);
    }
    let p0 = linalg::apply_spectral(&e, |w| if w <= e.eigenvalues[rank - 1] { 1.0 } else { 0.0 });
    let g = linalg::random_hermitian(n, &mut r);
    let kh = match cls {
        SymmetryClass::None => g,
        _ => (&g - &tau(&g, cls)?).mapv(|w| w * 0.5),
    };
    let rotated = |s: f64| -> Result<CMat> {
        let w = soft_torus::unitary_exp(&kh, s)?;
        Ok(linalg::hermitian_part(&dagger(&w).dot(&p0).dot(&w)))
    };
    let eps_at = |s: f64| -> Result<f64> { Ok(soft_torus::locality_epsilon(&rotated(s)?, &us)) };
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
    let epsilon = soft_torus::locality_epsilon(&p, &us);
    Ok(LocalProjector { unitaries: us, projector: p, epsilon })
}

/// Largest class defect over a list of matrices.
pub fn max_defect(ms: &[CMat], cls: &SymmetryClass) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for m in ms {
        worst = worst.max(symmetry_check(m, cls)?);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassPipelineReport {
    pub class: ClassTag,
    pub seed: u64,
    pub input_defect: f64,
    pub map_g_defect: f64,
    pub povm_defect: f64,
    pub dilation_defect: f64,
    pub compression_defect: f64,
    pub map_f_defect: f64,
    pub outcomes: usize,
    pub ambient_dim: usize,
}

impl ClassPipelineReport {
    pub fn worst(&self) -> f64 {
        [self.input_defect, self.map_g_defect, self.povm_defect, self.dilation_defect, self.compression_defect, self.map_f_defect]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// One seeded instance: `map_G` on a class local projector, then `map_F` on a
/// class soft torus through the class-preserving dilation and back through
/// the compressed unitaries.
pub fn class_pipeline(tag: ClassTag, n: usize, seed: u64) -> Result<ClassPipelineReport> {
    use crate::soft_torus::{build_povm, Window};
    let cls = SymmetryClass::from_tag(tag, n)?;
    let rank = if tag == ClassTag::Selfdual && (n / 2) % 2 == 1 { n / 2 + 1 } else { n / 2 };
    let lp = random_class_local_projector(n, 2, rank, 0.1, &cls, seed)?;
    let mut input_defect = max_defect(&lp.unitaries, &cls)?.max(symmetry_check(&lp.projector, &cls)?);
    let (g, gcls) = class_map_g(&lp, &cls)?;
    let map_g_defect = max_defect(&g.unitaries, &gcls)?;

    let t = random_class_torus(n, 2, &cls, 0.05, seed ^ 0x5eed)?;
    input_defect = input_defect.max(max_defect(&t.unitaries, &cls)?);
    let delta = (t.d() as f64 * t.epsilon).sqrt().min(1.5);
    let povm = build_povm(&t, delta, Window::Bump)?;
    let povm_defect = max_defect(&povm.elements, &cls)?;
    let dil = symmetric_naimark_dilate(&povm.elements, &cls)?;
    let dilation_defect = dil.class_defect()?;
    let compression_defect = dil.compression_defect(&povm.elements);
    let dl = soft_torus::naimark_dilate(povm.clone())?;
    let mut map_f_defect: f64 = 0.0;
    for i in 0..t.d() {
        let ph: Vec<C64> = dl.phases.iter().map(|p| p[i]).collect();
        map_f_defect = map_f_defect.max(symmetry_check(&dil.unitary(&ph), &dil.class)?);
    }
    let back = soft_torus::map_g_dilation(&dl)?;
    map_f_defect = map_f_defect.max(max_defect(&back.unitaries, &cls)?);
    let (outcomes, ambient_dim) = (povm.len(), dil.ambient_dim());
    Ok(ClassPipelineReport {
        class: tag,
        seed,
        input_defect,
        map_g_defect,
        povm_defect,
        dilation_defect,
        compression_defect,
        map_f_defect,
        outcomes,
        ambient_dim,
    })
}

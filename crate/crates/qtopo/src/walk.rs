//! Random walks on random regular graphs and exact two-time correlations.
//!
//! All powers of the transition matrix are evaluated as integer walk counts
//! `W_t = Adj^t` (exact in `f64` while `d^(2t) V < 2^53`), so ties of the
//! conditional mean are detected exactly.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Debug)]
pub struct RegularGraph {
    pub vertices: usize,
    pub degree: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl RegularGraph {
    pub fn from_edges(vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); vertices];
        for &(a, b) in edges {
            if a >= vertices || b >= vertices {
                return Err(Error::InvalidInput(format!("edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidInput("self-loop".into()));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidInput("multi-edge".into()));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let degree = neighbors.first().map(|n| n.len()).unwrap_or(0);
        if neighbors.iter().any(|n| n.len() != degree) {
            return Err(Error::InvalidInput("graph is not regular".into()));
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(RegularGraph { vertices, degree, neighbors })
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.vertices, self.vertices));
        for (v, ns) in self.neighbors.iter().enumerate() {
            for &w in ns {
                a[[v, w]] = 1.0;
            }
        }
        a
    }

    pub fn transition(&self) -> Array2<f64> {
        self.adjacency() / self.degree as f64
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices == 0 {
            return true;
        }
        let mut seen = vec![false; self.vertices];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.vertices
    }

    /// `Adj * X` using neighbor lists.
    pub fn step_counts(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for (v, ns) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(v);
            for &w in ns {
                row += &x.row(w);
            }
        }
        out
    }

    /// Walk counts `Adj^t`.
    pub fn walk_counts(&self, t: usize) -> Array2<f64> {
        let mut w = Array2::eye(self.vertices);
        for _ in 0..t {
            w = self.step_counts(&w);
        }
        w
    }

    fn walk_count_row(&self, v: usize, t: usize) -> Array1<f64> {
        let mut x = Array1::zeros(self.vertices);
        x[v] = 1.0;
        for _ in 0..t {
            let mut y = Array1::zeros(self.vertices);
            for (u, ns) in self.neighbors.iter().enumerate() {
                y[u] = ns.iter().map(|&w| x[w]).sum();
            }
            x = y;
        }
        x
    }
}

/// Simple connected `d_g`-regular graph from the pairing model with rejection.
pub fn random_regular_graph(vertices: usize, degree: usize, seed: u64) -> Result<RegularGraph> {
    if degree < 3 || degree >= vertices || (vertices * degree) % 2 != 0 {
        return Err(Error::InvalidInput(format!("no simple {degree}-regular expander on {vertices} vertices")));
    }
    let mut rng = linalg::rng(seed);
    let mut points: Vec<usize> = (0..vertices * degree).map(|i| i / degree).collect();
    'attempt: for _ in 0..100_000 {
        points.shuffle(&mut rng);
        let mut set = BTreeSet::new();
        let mut edges = Vec::with_capacity(points.len() / 2);
        for pair in points.chunks(2) {
            let (a, b) = (pair[0], pair[1]);
            if a == b || !set.insert((a.min(b), a.max(b))) {
                continue 'attempt;
            }
            edges.push((a, b));
        }
        let g = RegularGraph::from_edges(vertices, &edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailure("pairing model retries exhausted".into()))
}

/// Shortest cycle length; `None` for a forest.
pub fn girth(g: &RegularGraph) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut dist = vec![usize::MAX; g.vertices];
    let mut parent = vec![usize::MAX; g.vertices];
    for root in 0..g.vertices {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[root] = 0;
        parent[root] = usize::MAX;
        let mut queue = VecDeque::from([root]);
        'bfs: while let Some(v) = queue.pop_front() {
            if let Some(b) = best {
                if 2 * dist[v] + 1 >= b {
                    break;
                }
            }
            for &w in &g.neighbors[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    parent[w] = v;
                    queue.push_back(w);
                } else if parent[v] != w {
                    let len = dist[v] + dist[w] + 1;
                    best = Some(best.map_or(len, |b| b.min(len)));
                    break 'bfs;
                }
            }
        }
    }
    best
}

fn check_g(g: &RegularGraph, obs: &[i8]) -> Result<()> {
    if obs.len() != g.vertices || obs.iter().any(|&x| x != 1 && x != -1) {
        return Err(Error::InvalidInput("g must map every vertex to +1 or -1".into()));
    }
    Ok(())
}

/// Mean of `g(x(0))` over walks from `v` at time `-tau` to `w` at `+tau`.
pub fn conditional_mean(gph: &RegularGraph, g: &[i8], v: usize, w: usize, tau: usize) -> Result<f64> {
    check_g(gph, g)?;
    let a = gph.walk_count_row(v, tau);
    let b = gph.walk_count_row(w, tau);
    let mut num = 0.0;
    let mut den = 0.0;
    for u in 0..gph.vertices {
        num += a[u] * g[u] as f64 * b[u];
        den += a[u] * b[u];
    }
    if den == 0.0 {
        return Err(Error::UnreachablePair(v, w, 2 * tau));
    }
    Ok(num / den)
}

#[derive(Clone, Debug)]
pub enum EndpointObservable {
    Constant(i8),
    Table(Array2<i8>),
    SignOfConditionalMean,
}

#[derive(Clone, Debug)]
pub struct TwoTimeObservable {
    pub g: Vec<i8>,
    pub f: EndpointObservable,
    pub tau: usize,
}

#[derive(Clone, Debug)]
pub struct CorrelationValue {
    pub corr: f64,
    /// Reachable endpoint pairs whose conditional mean is exactly zero.
    pub ties: usize,
}

/// Exact `E[f(x(-tau), x(tau)) g(x(0))] - E[f] E[g]` with `x(-tau)` uniform.
pub fn two_time_correlation(gph: &RegularGraph, obs: &TwoTimeObservable) -> Result<CorrelationValue> {
    check_g(gph, &obs.g)?;
    let vn = gph.vertices;
    let w = gph.walk_counts(obs.tau);
    let plus: Vec<usize> = (0..vn).filter(|&u| obs.g[u] == 1).collect();
    let minus: Vec<usize> = (0..vn).filter(|&u| obs.g[u] == -1).collect();
    let wp = w.select(Axis(1), &plus);
    let wm = w.select(Axis(1), &minus);
    let mp = wp.dot(&wp.t());
    let mm = wm.dot(&wm.t());
    let total = (gph.degree as f64).powi(2 * obs.tau as i32);
    let mut ties = 0;
    let mut efg = 0.0;
    let mut ef = 0.0;
    for v in 0..vn {
        for u in 0..vn {
            let m = mp[[v, u]] - mm[[v, u]];
            let p2 = mp[[v, u]] + mm[[v, u]];
            if p2 == 0.0 {
                continue;
            }
            let f = match &obs.f {
                EndpointObservable::Constant(c) => *c as f64,
                EndpointObservable::Table(t) => t[[v, u]] as f64,
                EndpointObservable::SignOfConditionalMean => {
                    if m == 0.0 {
                        ties += 1;
                    }
                    if m >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            efg += f * m;
            ef += f * p2;
        }
    }
    let mean_g = obs.g.iter().map(|&x| x as f64).sum::<f64>() / vn as f64;
    let norm = vn as f64 * total;
    Ok(CorrelationValue { corr: efg / norm - (ef / norm) * mean_g, ties })
}

/// Second largest transition eigenvalue modulus.
pub fn lambda2(gph: &RegularGraph) -> Result<f64> {
    use ndarray_linalg::{EigValsh, UPLO};
    let w = gph.transition().eigvalsh(UPLO::Lower)?;
    let n = w.len();
    if n < 2 {
        return Ok(0.0);
    }
    Ok(w[n - 2].abs().max(w[0].abs()))
}

pub fn random_signs(n: usize, seed: u64) -> Vec<i8> {
    use rand::Rng;
    let mut r = linalg::rng(seed);
    (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct WalkRow {
    pub seed: u64,
    #[serde(rename = "V")]
    pub v: usize,
    pub d_g: usize,
    pub girth: Option<usize>,
    pub tau: usize,
    pub corr: f64,
    pub lambda2: f64,
    pub fit_exponent: f64,
}

#[derive(Clone, Debug)]
pub struct WalkSweep {
    pub rows: Vec<WalkRow>,
    pub girth: Option<usize>,
    pub lambda2: f64,
    pub fit_exponent: f64,
    pub fit_taus: Vec<usize>,
    /// The `[2, girth/3]` window held fewer than two points, so every
    /// positive sweep point was used.
    pub fit_fallback: bool,
    pub ties: usize,
}

/// Least-squares slope of `log y` against `log x`, negated.
pub fn decay_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

/// Sign-built correlation over a `tau` sweep with `g` drawn from `seed`.
pub fn walk_decay(gph: &RegularGraph, taus: &[usize], seed: u64) -> Result<WalkSweep> {
    let g = random_signs(gph.vertices, seed ^ 0x9e37_79b9);
    let gi = girth(gph);
    let l2 = lambda2(gph)?;
    let mut vals = Vec::new();
    let mut ties = 0;
    for &tau in taus {
        let obs = TwoTimeObservable { g: g.clone(), f: EndpointObservable::SignOfConditionalMean, tau };
        let c = two_time_correlation(gph, &obs)?;
        ties += c.ties;
        vals.push((tau, c.corr));
    }
    let cap = gi.map_or(usize::MAX, |x| x / 3);
    let window: Vec<(usize, f64)> = vals.iter().cloned().filter(|&(t, c)| t >= 2 && t <= cap && c > 0.0).collect();
    let (fit, fallback): (Vec<(usize, f64)>, bool) = if window.len() >= 2 {
        (window, false)
    } else {
        (vals.iter().cloned().filter(|&(t, c)| t >= 1 && c > 0.0).collect(), true)
    };
    let fit_exponent = if fit.len() >= 2 {
        let xs: Vec<f64> = fit.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = fit.iter().map(|p| p.1).collect();
        decay_exponent(&xs, &ys)
    } else {
        f64::NAN
    };
    let rows = vals
        .iter()
        .map(|&(tau, corr)| WalkRow {
            seed,
            v: gph.vertices,
            d_g: gph.degree,
            girth: gi,
            tau,
            corr,
            lambda2: l2,
            fit_exponent,
        })
        .collect();
    Ok(WalkSweep {
        rows,
        girth: gi,
        lambda2: l2,
        fit_exponent,
        fit_taus: fit.iter().map(|p| p.0).collect(),
        fit_fallback: fallback,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn walks(g: &RegularGraph, v: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![v]];
        for _ in 0..len {
            let mut next = Vec::new();
            for p in &out {
                for &w in &g.neighbors[*p.last().unwrap()] {
                    let mut q = p.clone();
                    q.push(w);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    fn enumerated_correlation(g: &RegularGraph, obs: &[i8], tau: usize) -> f64 {
        let n = g.vertices;
        let mut sum = vec![vec![0.0; n]; n];
        let mut cnt = vec![vec![0.0; n]; n];
        for v in 0..n {
            for p in walks(g, v, 2 * tau) {
                let w = p[2 * tau];
                sum[v][w] += obs[p[tau]] as f64;
                cnt[v][w] += 1.0;
            }
        }
        let total = (g.degree as f64).powi(2 * tau as i32) * n as f64;
        let mut efg = 0.0;
        let mut ef = 0.0;
        for v in 0..n {
            for w in 0..n {
                if cnt[v][w] > 0.0 {
                    let f = if sum[v][w] >= 0.0 { 1.0 } else { -1.0 };
                    efg += f * sum[v][w] / total;
                    ef += f * cnt[v][w] / total;
                }
            }
        }
        let mg = obs.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        efg - ef * mg
    }

    #[test]
    fn k4_is_unique() {
        let g = random_regular_graph(4, 3, 0).unwrap();
        let a = g.adjacency();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[[i, j]], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn infeasible_parameters() {
        assert!(random_regular_graph(5, 3, 0).is_err());
        assert!(random_regular_graph(10, 2, 0).is_err());
        assert!(random_regular_graph(3, 3, 0).is_err());
    }

    #[test]
    fn girth_examples() {
        assert_eq!(girth(&RegularGraph::cycle(3).unwrap()), Some(3));
        assert_eq!(girth(&RegularGraph::cycle(6).unwrap()), Some(6));
        let path = RegularGraph { vertices: 2, degree: 1, neighbors: vec![vec![1], vec![0]] };
        assert_eq!(girth(&path), None);
        let petersen_edges = [
            (0, 1), (1, 2), (2, 3), (3, 4), (4, 0),
            (0, 5), (1, 6), (2, 7), (3, 8), (4, 9),
            (5, 7), (7, 9), (9, 6), (6, 8), (8, 5),
        ];
        let p = RegularGraph::from_edges(10, &petersen_edges).unwrap();
        assert_eq!(girth(&p), Some(5));
    }

    #[test]
    fn girth_matches_brute_force() {
        for seed in 0..5 {
            let g = random_regular_graph(24, 3, seed).unwrap();
            let a = g.adjacency();
            let mut brute = None;
            for len in 3..=24 {
                let found = (0..24).any(|v| {
                    walks(&g, v, len).iter().any(|p| {
                        p[len] == v && (1..len).all(|i| p[i + 1] != p[i - 1]) && p[1] != p[len - 1]
                    })
                });
                if found {
                    brute = Some(len);
                    break;
                }
                if len > 8 {
                    break;
                }
            }
            assert_eq!(girth(&g), brute, "{a:?}");
        }
    }

    #[test]
    fn conditional_mean_examples() {
        let tri = RegularGraph::cycle(3).unwrap();
        assert_eq!(conditional_mean(&tri, &[1, -1, -1], 0, 0, 1).unwrap(), -1.0);
        assert_eq!(conditional_mean(&tri, &[1, -1, -1], 0, 0, 0).unwrap(), 1.0);
        let c6 = RegularGraph::cycle(6).unwrap();
        assert!(matches!(conditional_mean(&c6, &[1; 6], 0, 1, 1), Err(Error::UnreachablePair(0, 1, 2))));
    }

    #[test]
    fn constant_observables_vanish() {
        let g = random_regular_graph(40, 3, 1).unwrap();
        let s = random_signs(40, 2);
        let f1 = TwoTimeObservable { g: s.clone(), f: EndpointObservable::Constant(1), tau: 3 };
        assert!(two_time_correlation(&g, &f1).unwrap().corr.abs() < 1e-15);
        let g1 = TwoTimeObservable { g: vec![1; 40], f: EndpointObservable::SignOfConditionalMean, tau: 3 };
        assert!(two_time_correlation(&g, &g1).unwrap().corr.abs() < 1e-15);
    }

    #[test]
    fn matches_enumeration() {
        for seed in 0..4 {
            let g = random_regular_graph(10, 3, seed).unwrap();
            let s = random_signs(10, seed + 10);
            for tau in 0..3 {
                let obs = TwoTimeObservable { g: s.clone(), f: EndpointObservable::SignOfConditionalMean, tau };
                let got = two_time_correlation(&g, &obs).unwrap().corr;
                let want = enumerated_correlation(&g, &s, tau);
                assert!((got - want).abs() < 1e-12, "{got} {want}");
            }
        }
    }

    #[test]
    fn transition_is_stochastic() {
        let g = random_regular_graph(50, 4, 3).unwrap();
        let p = g.transition();
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let uni = Array1::from_elem(50, 1.0 / 50.0);
        let drift = p.t().dot(&uni) - &uni;
        assert!(drift.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn lambda2_below_one() {
        let g = random_regular_graph(200, 3, 0).unwrap();
        let l = lambda2(&g).unwrap();
        assert!(l < 1.0 && l > 0.5);
    }

    #[test]
    fn sweep_rows() {
        let g = random_regular_graph(60, 3, 4).unwrap();
        let sw = walk_decay(&g, &[1, 2, 3, 4], 4).unwrap();
        assert_eq!(sw.rows.len(), 4);
        assert!(sw.rows.iter().all(|r| r.corr >= -1e-12));
        assert!(sw.fit_taus.len() >= 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sign_correlation_nonnegative(seed in 0u64..10_000, tau in 0usize..5) {
            let g = random_regular_graph(30, 3, seed).unwrap();
            let s = random_signs(30, seed + 1);
            let obs = TwoTimeObservable { g: s, f: EndpointObservable::SignOfConditionalMean, tau };
            prop_assert!(two_time_correlation(&g, &obs).unwrap().corr >= -1e-12);
        }

        #[test]
        fn conditional_mean_consistency(seed in 0u64..10_000, tau in 0usize..4, v in 0usize..20) {
            let g = random_regular_graph(20, 3, seed).unwrap();
            let s = random_signs(20, seed + 2);
            let w2 = g.walk_counts(2 * tau);
            let total = 3f64.powi(2 * tau as i32);
            let mut acc = 0.0;
            for w in 0..20 {
                if w2[[v, w]] > 0.0 {
                    let cm = conditional_mean(&g, &s, v, w, tau).unwrap();
                    prop_assert!(cm.abs() <= 1.0);
                    acc += w2[[v, w]] / total * cm;
                }
            }
            let pt = g.walk_counts(tau).row(v).to_owned() / 3f64.powi(tau as i32);
            let want: f64 = pt.iter().zip(&s).map(|(p, &x)| p * x as f64).sum();
            prop_assert!((acc - want).abs() < 1e-10);
        }

        #[test]
        fn graphs_are_regular(seed in 0u64..10_000, half in 3usize..20) {
            let g = random_regular_graph(2 * half, 3, seed).unwrap();
            let a = g.adjacency();
            for i in 0..2 * half {
                prop_assert_eq!(a.row(i).sum(), 3.0);
                prop_assert_eq!(a[[i, i]], 0.0);
                for j in 0..2 * half {
                    prop_assert_eq!(a[[i, j]], a[[j, i]]);
                }
            }
            prop_assert!(g.is_connected());
        }
    }
}

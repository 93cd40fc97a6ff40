use std::f64::consts::PI;
use std::time::Instant;

use qtopo::bundle;
use qtopo::channels::{self, PGrid};
use qtopo::linalg::{self, cis, dagger, eye, norm};
use qtopo::mps::{self, SiteOp};
use qtopo::soft_torus::{self, Window};
use qtopo::symmetry::{self, ClassTag};
use qtopo::walk;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

type Check = fn() -> Outcome;

fn guard<T>(r: qtopo::Result<T>, what: &str) -> Result<T, Outcome> {
    r.map_err(|e| Outcome::new(false, format!("{what}: {e}")))
}

macro_rules! tri {
    ($e:expr, $what:expr) => {
        match guard($e, $what) {
            Ok(v) => v,
            Err(o) => return o,
        }
    };
}

fn criterion_1() -> Outcome {
    let mut worst_comm: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    let mut worst_plaq: f64 = 0.0;
    for n in 2..=8usize {
        let t = tri!(soft_torus::voiculescu_pair(n), "voiculescu");
        let (u, v) = (&t.unitaries[0], &t.unitaries[1]);
        let phase = cis(2.0 * PI / (n * n) as f64);
        let c = dagger(v).dot(&dagger(u)).dot(v).dot(u);
        worst_comm = worst_comm.max(norm(&(c - eye(n * n).mapv(|w| w * phase))));
        let mut want: Vec<f64> = (0..n * n).map(|j| 2.0 * PI * j as f64 / (n * n) as f64).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for m in [u, v] {
            let w = tri!(linalg::eig_values(m), "eig");
            let mut got: Vec<f64> = w.iter().map(|z| z.arg().rem_euclid(2.0 * PI)).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (value, target) in got.iter().zip(&want) {
                let d = (cis(*value) - cis(*target)).norm();
                worst_eig = worst_eig.max(d);
            }
        }
        for p in tri!(soft_torus::plaquette_phases(n), "plaquettes") {
            worst_plaq = worst_plaq.max((p - phase).norm());
        }
    }
    let pass = worst_comm <= 1e-10 && worst_eig <= 1e-8 && worst_plaq <= 1e-10;
    Outcome::new(pass, format!("commutator {worst_comm:.2e}, eigenvalues {worst_eig:.2e}, plaquettes {worst_plaq:.2e}"))
}

fn criterion_2() -> Outcome {
    let mut completeness: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut dilation: f64 = 0.0;
    let mut dense = Vec::new();
    let mut dense_identity: f64 = 0.0;
    for n in [3usize, 4, 6, 8] {
        let t = tri!(soft_torus::voiculescu_pair(n), "voiculescu");
        let delta = (t.d() as f64 * t.epsilon).sqrt();
        let povm = tri!(soft_torus::build_povm(&t, delta, Window::Bump), "povm");
        let dl = tri!(soft_torus::naimark_dilate(povm), "dilation");
        if n != 3 {
            completeness = completeness.max(dl.povm.completeness_defect());
            min_eig = min_eig.min(tri!(dl.povm.min_eigenvalue(), "povm spectrum"));
            for (b, e) in dl.blocks.iter().zip(&dl.povm.elements) {
                dilation = dilation.max(linalg::max_abs(&(dagger(b).dot(b) - e)));
            }
        }
        if dl.ambient_dim() <= soft_torus::DENSE_LIMIT {
            let w = tri!(dl.embedding(), "embedding");
            for (a, e) in dl.povm.elements.iter().enumerate() {
                let q = tri!(dl.outcome_projector(a), "outcome projector");
                dense_identity = dense_identity.max(linalg::max_abs(&(dagger(&w).dot(&q).dot(&w) - e)));
            }
            for i in 0..dl.d() {
                let c = dl.locality_compressed(i);
                let d = tri!(dl.locality_dense(i), "dense locality");
                dense.push((n, (c - d).abs()));
            }
        }
    }
    let agree = dense.iter().all(|&(_, d)| d <= 1e-9);
    let dense_sizes: Vec<usize> = dense.iter().map(|p| p.0).collect();
    let pass = completeness <= 1e-10 && min_eig >= -1e-10 && dilation <= 1e-10 && dense_identity <= 1e-10 && agree;
    Outcome::new(
        pass,
        format!(
            "sum E - I {completeness:.2e}, min eigenvalue {min_eig:.2e}, Pi Q Pi - E {dilation:.2e} (dense at N = 3: {dense_identity:.2e}), dense cross-check at N = {dense_sizes:?} max diff {:.2e} (N in {{4,6,8}} exceed the dense limit)",
            dense.iter().map(|p| p.1).fold(0.0, f64::max)
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rows = Vec::new();
    for n in 3..=8usize {
        let t = tri!(soft_torus::voiculescu_pair(n), "voiculescu");
        let rt = tri!(soft_torus::roundtrip_gf(&t, Window::Bump), "roundtrip");
        rows.push((n, t.d() as f64 * t.epsilon, rt.epsilon_prime, rt.distance));
    }
    let mono_e = rows.windows(2).all(|w| w[1].2 <= w[0].2);
    let mono_d = rows.windows(2).all(|w| w[1].3 <= w[0].3);
    let c = rows.iter().map(|r| r.3 / r.1.powf(0.25)).fold(0.0, f64::max);
    let xs: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.3.ln()).collect();
    let (slope, r2) = linear_fit(&xs, &ys);
    let pass = mono_e && mono_d && r2 >= 0.8 && c.is_finite();
    let eps: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.2)).collect();
    let dist: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.3)).collect();
    Outcome::new(
        pass,
        format!("N = 3..8, locality [{}], distance [{}], C = {c:.3}, log-log slope {slope:.3}, R^2 = {r2:.3}", eps.join(", "), dist.join(", ")),
    )
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for delta in [0.05, 0.1, 0.2] {
        for seed in 0..20u64 {
            let lp = tri!(soft_torus::random_local_projector(12, 2, 5, delta, seed), "local projector");
            let g = tri!(soft_torus::map_g(&lp), "map_g");
            let measured = soft_torus::commutator_epsilon(&g.torus.unitaries);
            worst = worst.max(measured / (4.0 * lp.epsilon * lp.epsilon));
            count += 1;
        }
    }
    Outcome::new(worst <= 1.0, format!("{count} instances, max eps / (4 delta^2) = {worst:.3}"))
}

fn criterion_5() -> Outcome {
    let b = tri!(bundle::make_test_bundle(1), "bundle");
    let k = tri!(bundle::lipschitz_estimate(&b, 128), "lipschitz");
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [8usize, 12, 16] {
        let lp = tri!(bundle::map_a(&b, n), "map_a");
        let bound = 2.0 * PI * k / n as f64;
        pass &= lp.local.epsilon <= bound;
        parts.push(format!("N={n}: {:.4} <= {bound:.4}", lp.local.epsilon));
    }
    Outcome::new(pass, format!("K = {k:.4}; {}", parts.join(", ")))
}

fn criterion_6() -> Outcome {
    use rand::Rng;
    let b = tri!(bundle::make_test_bundle(1), "bundle");
    let mut zeros_ok = true;
    let mut ratios = Vec::new();
    for n in [8usize, 12, 16] {
        let dp = tri!(bundle::map_a(&b, n), "map_a").diagonalized();
        let op = tri!(bundle::strictly_localize(&dp, PI / 2.0), "localize");
        for a in 0..op.dim() {
            for c in 0..op.dim() {
                let far = (0..op.d()).any(|j| {
                    let (xa, ya) = op.coordinates(a, j);
                    let (xc, yc) = op.coordinates(c, j);
                    (xa - xc).abs() >= op.s || (ya - yc).abs() >= op.s
                });
                if far && op.h[[a, c]] != linalg::ZERO {
                    zeros_ok = false;
                }
            }
        }
        let err = bundle::localization_error(&dp, &op);
        ratios.push((n, err * op.s / dp.epsilon));
    }
    let c = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut r = linalg::rng(6);
    let mut worst_norm: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(8..24);
        let h = linalg::random_hermitian(n, &mut r);
        let angles = ndarray::Array2::from_shape_fn((n, 2), |_| r.random_range(0.0..2.0 * PI));
        let radius = r.random_range(0.3..PI / 2.0);
        let p = bundle::DiagonalizedProjector { projector: h, angles, epsilon: 0.0 };
        let op = tri!(bundle::strictly_localize(&p, radius), "localize");
        let t1 = [r.random_range(-PI..PI), r.random_range(-PI..PI)];
        let t2 = [r.random_range(-PI..PI), r.random_range(-PI..PI)];
        let a = tri!(bundle::twist(&op, &t1), "twist");
        worst_norm = worst_norm.max(norm(&a) / (4.0 * norm(&op.h)));
        let ab = tri!(bundle::twist_matrix(&op, &a, &t2), "twist");
        let direct = tri!(bundle::twist(&op, &[t1[0] + t2[0], t1[1] + t2[1]]), "twist");
        worst_comp = worst_comp.max(linalg::max_abs(&(ab - direct)));
    }
    let pass = zeros_ok && c.is_finite() && worst_norm <= 1.0 && worst_comp <= 1e-10;
    let rs: Vec<String> = ratios.iter().map(|(n, x)| format!("N={n}: {x:.3}")).collect();
    Outcome::new(
        pass,
        format!(
            "strict zeros {zeros_ok}; ||H_loc - P|| S / eps [{}], C = {c:.3}; max ||twist|| / (4 ||h||) = {worst_norm:.3}; composition {worst_comp:.2e}",
            rs.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [-1, 0, 1] {
        let b = tri!(bundle::make_test_bundle(c), "bundle");
        let dp = tri!(bundle::map_a(&b, 12), "map_a").diagonalized();
        match bundle::map_b(&dp, PI / 2.0, 24).and_then(|mb| bundle::chern_number(&mb.field, 24)) {
            Ok(r) => {
                pass &= r.chern == c as i64;
                parts.push(format!("c={c}: {}", r.chern));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("c={c}: {e}"));
            }
        }
    }
    for n in [6usize, 8] {
        match bundle::full_pipeline(n, PI / 2.0, 12) {
            Ok(r) => {
                let ch = r.chern.as_ref().map(|c| c.chern).unwrap_or(0);
                pass &= ch.abs() == 1;
                parts.push(format!("voiculescu N={n}: |chern| = {}", ch.abs()));
            }
            Err((e, r)) => {
                pass = false;
                parts.push(format!("voiculescu N={n}: {e} (eps' = {:.3}, reduced dim {})", r.epsilon_prime, r.reduced_dim));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mut violations = 0;
    let mut checks = 0;
    let mut herm: f64 = 0.0;
    let mut lam: f64 = 0.0;
    let mut worst_margin = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let chain = tri!(mps::build_expander_mps(16, 4, 20, seed), "mps");
        let t = tri!(mps::transfer_spectrum(&chain), "transfer");
        herm = herm.max(t.hermitian_defect);
        lam = lam.max(t.lambda);
        let mut r = linalg::rng(1000 + seed);
        for sep in 1..=8usize {
            let a = SiteOp::single(6, mps::random_site_operator(4, &mut r));
            let b = SiteOp::single(6 + sep, mps::random_site_operator(4, &mut r));
            let res = tri!(mps::connected_correlation(&chain, &a, &b), "correlation");
            checks += 1;
            if !res.within_bound() {
                violations += 1;
            }
            worst_margin = worst_margin.max(res.value.norm() - res.bound - res.tail());
        }
    }
    let pass = violations == 0 && herm <= 1e-10 && lam < 1.0;
    Outcome::new(
        pass,
        format!("{checks} correlators, {violations} violations (max |C| - bound - tail = {worst_margin:.2e}); Hermitian defect {herm:.2e}; max lambda {lam:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let g = tri!(walk::random_regular_graph(2000, 3, 1), "graph");
    let taus: Vec<usize> = (1..=8).collect();
    let sweep = tri!(walk::walk_decay(&g, &taus, 1), "walk");
    let cap = sweep.girth.map_or(usize::MAX, |x| x / 3);
    let nonneg = sweep.rows.iter().filter(|r| r.tau <= cap).all(|r| r.corr >= 0.0);
    let c4 = sweep.rows.iter().find(|r| r.tau == 4).map(|r| r.corr).unwrap_or(f64::NAN);
    let l4 = sweep.lambda2.powi(4);
    let pass = nonneg && c4 > l4;
    let corr: Vec<String> = sweep.rows.iter().map(|r| format!("{:.3}", r.corr)).collect();
    Outcome::new(
        pass,
        format!(
            "girth {:?}, nonneg for tau <= {cap}: {nonneg}; corr(4) = {c4:.4} vs lambda2^4 = {l4:.4}; corr[1..8] = [{}]; fitted exponent {:.3} over tau {:?}{}",
            sweep.girth,
            corr.join(", "),
            sweep.fit_exponent,
            sweep.fit_taus,
            if sweep.fit_fallback { " (fallback window)" } else { "" }
        ),
    )
}

fn criterion_10() -> Outcome {
    let grid = tri!(PGrid::new(50), "grid");
    let rows = tri!(channels::matthew_suite(4, grid), "matthew");
    let passed = rows.iter().filter(|r| r.pass).count();
    let min = rows.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min);
    let counts: Vec<usize> = (2..=4).map(|n| channels::enumerate_monotone_masks(n).map(|v| v.len()).unwrap_or(0)).collect();
    let brute: Vec<usize> = (2..=4usize)
        .map(|n| (0..1u64 << (1 << n)).filter(|&m| channels::BooleanFn::from_mask(n, m).map(|f| f.is_monotone()).unwrap_or(false)).count())
        .collect();
    let pass = rows.len() == 166 && passed == 166 && counts == [6, 20, 168] && brute == counts;
    Outcome::new(pass, format!("{passed}/{} pass, min ratio {min:.6}; Dedekind {counts:?} (brute force {brute:?})", rows.len()))
}

fn criterion_11() -> Outcome {
    let grid = tri!(PGrid::new(50), "grid");
    let mut family = 0;
    let mut pass = true;
    let mut max_sum: f64 = 0.0;
    for n in 1..=4usize {
        for f in tri!(channels::enumerate_monotone(n), "enumerate") {
            let c = tri!(channels::complement_pair_check(&f, grid), "complement");
            if c.has_complementary_pair {
                continue;
            }
            family += 1;
            max_sum = max_sum.max(c.max_sum);
            pass &= c.max_sum <= 1.0 + 1e-12 && c.sum_bound && c.below_diagonal;
        }
    }
    Outcome::new(pass, format!("{family} functions without complementary accepting pairs, max f(p)+f(1-p) = {max_sum:.12}"))
}

fn criterion_12() -> Outcome {
    let mut r = linalg::rng(12);
    let mut fails = 0;
    let mut max_ratio: f64 = 0.0;
    for i in 0..100 {
        let ch = tri!(channels::random_decode_channel(1 + i % 2, 2 + i % 3, &mut r), "channel");
        let m = tri!(channels::mistake_rates(&ch, i < 5), "mistake rates");
        if !m.relation_holds {
            fails += 1;
        }
        if m.ratio.is_finite() {
            max_ratio = max_ratio.max(m.ratio);
        }
    }
    let id = tri!(channels::mistake_rates(&channels::identity_decode(), true), "identity");
    let mix = tri!(channels::mistake_rates(&channels::mixing_decode(), true), "mixing");
    let fixtures = id.average.abs() <= 1e-6 && id.maximum.abs() <= 1e-6 && (mix.average - 0.5).abs() <= 1e-6 && (mix.maximum - 0.5).abs() <= 1e-6;
    Outcome::new(
        fails == 0 && fixtures,
        format!(
            "100 channels, {fails} violations, max E_max/E_av = {max_ratio:.3}; identity ({:.1e}, {:.1e}), mixing ({:.6}, {:.6})",
            id.average, id.maximum, mix.average, mix.maximum
        ),
    )
}

fn criterion_13() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for tag in [ClassTag::Symmetric, ClassTag::Selfdual] {
        for seed in 0..10u64 {
            let rep = tri!(symmetry::class_pipeline(tag, 6, seed), "class pipeline");
            worst = worst.max(rep.worst());
            runs += 1;
        }
    }
    Outcome::new(worst <= 1e-8, format!("{runs} runs, max class defect {worst:.2e}"))
}

fn main() {
    let checks: [(&str, Check); 13] = [
        ("Voiculescu identities", criterion_1),
        ("POVM and dilation", criterion_2),
        ("map quality scaling", criterion_3),
        ("map G certificate", criterion_4),
        ("map A bound", criterion_5),
        ("strict locality and twisting", criterion_6),
        ("topological round trips", criterion_7),
        ("MPS decay", criterion_8),
        ("classical walk", criterion_9),
        ("Matthew principle", criterion_10),
        ("no-cloning shadow", criterion_11),
        ("mistake-rate relation", criterion_12),
        ("symmetry preservation", criterion_13),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} [{:>2}] {name} ({:.1} s): {}", i + 1, t.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

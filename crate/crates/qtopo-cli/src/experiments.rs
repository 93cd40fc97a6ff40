use std::f64::consts::PI;

use qtopo::bundle;
use qtopo::channels::{self, PGrid};
use qtopo::linalg::{self, cis, dagger, eye, norm};
use qtopo::mps::{self, CorrelationRow, SiteOp, TwoIntervalOp};
use qtopo::soft_torus::{self, Window};
use qtopo::symmetry::{self, ClassTag};
use qtopo::{walk, Error, Result};
use serde_json::{json, Value};

use crate::config::{Kind, Param, Params};

pub type Row = Vec<Value>;

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Ok,
    OutOfRegime(String),
    Violation(String),
}

pub struct Summary {
    pub value: Value,
    pub status: Status,
}

pub struct Experiment {
    pub name: &'static str,
    pub about: &'static str,
    pub params: &'static [Param],
    pub columns: &'static [&'static str],
    pub points: fn(&Params) -> Vec<Value>,
    pub run: fn(&Params, u64, &Value) -> Result<Vec<Row>>,
    pub summarize: fn(&Params, &[Row]) -> Summary,
}

pub fn find(name: &str) -> Option<&'static Experiment> {
    ALL.iter().find(|e| e.name == name)
}

pub static ALL: &[Experiment] = &[
    VOICULESCU,
    MPS_DECAY,
    TWO_INTERVAL,
    WALK_DECAY,
    GF_ROUNDTRIP,
    AB_ROUNDTRIP,
    FULL_PIPELINE,
    SYMMETRY_PIPELINE,
    MATTHEW,
    CHANNEL_BOUNDS,
];

const fn p(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Param {
    Param { name, kind, default, help }
}

fn column(columns: &[&str], rows: &[Row], name: &str) -> Vec<Value> {
    let i = columns.iter().position(|c| *c == name).expect("column exists");
    rows.iter().map(|r| r[i].clone()).collect()
}

fn count_status(columns: &[&str], rows: &[Row]) -> (usize, usize, usize) {
    let s = column(columns, rows, "status");
    let n = |t: &str| s.iter().filter(|v| v.as_str() == Some(t)).count();
    (n("ok"), n("out_of_regime"), n("violation"))
}

fn status_from_counts(regime: usize, violations: usize, what: &str) -> Status {
    if violations > 0 {
        Status::Violation(format!("{violations} {what} violated"))
    } else if regime > 0 {
        Status::OutOfRegime(format!("{regime} sweep points out of regime"))
    } else {
        Status::Ok
    }
}

fn regime_error(e: &Error) -> bool {
    matches!(e, Error::OutOfRegime(_) | Error::TooLarge(_) | Error::GridTooCoarse(_))
}

fn range_points(values: Vec<usize>) -> Vec<Value> {
    values.into_iter().map(Value::from).collect()
}

fn index_points(count: usize) -> Vec<Value> {
    (0..count).map(Value::from).collect()
}

fn point_uint(v: &Value) -> usize {
    v.as_u64().unwrap() as usize
}

// voiculescu

const VOICULESCU: Experiment = Experiment {
    name: "voiculescu",
    about: "Voiculescu pair commutator, identity and plaquette phases",
    params: &[p("n", Kind::UintList, "[2, 3, 4, 5, 6, 7, 8]", "matrix sizes N (dimension N^2)")],
    columns: &["n", "dim", "commutator", "expected", "identity_defect", "plaquette_defect"],
    points: |ps| range_points(ps.uints("n")),
    run: |_, _, pt| {
        let n = point_uint(pt);
        let t = soft_torus::voiculescu_pair(n)?;
        let (u, v) = (&t.unitaries[0], &t.unitaries[1]);
        let omega = cis(2.0 * PI / (n * n) as f64);
        let c = dagger(v).dot(&dagger(u)).dot(v).dot(u);
        let identity = norm(&(c - eye(n * n).mapv(|z| z * omega)));
        let plaq = soft_torus::plaquette_phases(n)?.iter().map(|z| (z - omega).norm()).fold(0.0, f64::max);
        Ok(vec![vec![json!(n), json!(n * n), json!(t.epsilon), json!((omega - linalg::ONE).norm()), json!(identity), json!(plaq)]])
    },
    summarize: |_, rows| {
        let bad = rows
            .iter()
            .filter(|r| {
                let f = |i: usize| r[i].as_f64().unwrap_or(f64::INFINITY);
                (f(2) - f(3)).abs() > 1e-10 || f(4) > 1e-10 || f(5) > 1e-10
            })
            .count();
        Summary { value: json!({ "sizes": rows.len(), "violations": bad }), status: status_from_counts(0, bad, "identities") }
    },
};

// mps-decay

const MPS_DECAY: Experiment = Experiment {
    name: "mps-decay",
    about: "connected correlations of expander MPS against the transfer-gap bound",
    params: &[
        p("k", Kind::Uint, "16", "bond dimension"),
        p("d", Kind::Uint, "4", "physical dimension (even)"),
        p("sites", Kind::Uint, "20", "chain length N"),
        p("instances", Kind::Uint, "20", "number of seeded chains"),
        p("site", Kind::Uint, "6", "position of the first operator"),
        p("separations", Kind::UintList, "[1, 2, 3, 4, 5, 6, 7, 8]", "distances to the second operator"),
    ],
    columns: &["seed", "k", "d", "N", "P", "Q", "R", "S", "sep", "value_re", "value_im", "bound", "tail", "lambda", "within_bound"],
    points: |ps| index_points(ps.uint("instances")),
    run: |ps, seed, pt| {
        let s = seed.wrapping_add(point_uint(pt) as u64);
        let (k, d) = (ps.uint("k"), ps.uint("d"));
        let chain = mps::build_expander_mps(k, d, ps.uint("sites"), s)?;
        let mut r = linalg::rng(s.wrapping_add(1 << 32));
        let site = ps.uint("site");
        let mut rows = Vec::new();
        for sep in ps.uints("separations") {
            let a = SiteOp::single(site, mps::random_site_operator(d, &mut r));
            let b = SiteOp::single(site + sep, mps::random_site_operator(d, &mut r));
            let res = mps::connected_correlation(&chain, &a, &b)?;
            let row = CorrelationRow::new(s, &chain, &a, &b, &res);
            rows.push(vec![
                json!(row.seed),
                json!(row.k),
                json!(row.d),
                json!(row.n),
                json!(row.p),
                json!(row.q),
                json!(row.r),
                json!(row.s),
                json!(row.sep),
                json!(row.value_re),
                json!(row.value_im),
                json!(row.bound),
                json!(res.tail()),
                json!(row.lambda),
                json!(res.within_bound()),
            ]);
        }
        Ok(rows)
    },
    summarize: |_, rows| bound_summary(MPS_DECAY.columns, rows),
};

fn bound_summary(columns: &[&str], rows: &[Row]) -> Summary {
    let within = column(columns, rows, "within_bound");
    let bad = within.iter().filter(|v| v.as_bool() == Some(false)).count();
    let lambda = column(columns, rows, "lambda").iter().filter_map(Value::as_f64).fold(0.0, f64::max);
    Summary {
        value: json!({ "correlators": rows.len(), "violations": bad, "max_lambda": lambda }),
        status: status_from_counts(0, bad, "correlation bounds"),
    }
}

// two-interval

const TWO_INTERVAL: Experiment = Experiment {
    name: "two-interval",
    about: "correlation between a block and an operator on two surrounding intervals",
    params: &[
        p("k", Kind::Uint, "8", "bond dimension"),
        p("d", Kind::Uint, "2", "physical dimension (even)"),
        p("sites", Kind::Uint, "16", "chain length N"),
        p("instances", Kind::Uint, "5", "number of seeded chains"),
        p("site", Kind::Uint, "8", "position of the middle operator"),
        p("first_len", Kind::Uint, "1", "length of the left interval (0 allowed)"),
        p("second_len", Kind::Uint, "1", "length of the right interval"),
        p("separations", Kind::UintList, "[1, 2, 3, 4]", "gap on each side"),
    ],
    columns: &["seed", "N", "R1", "S1", "P", "R2", "S2", "sep", "value_re", "value_im", "bound", "tail", "lambda", "folded_lambda", "within_bound"],
    points: |ps| index_points(ps.uint("instances")),
    run: |ps, seed, pt| {
        let s = seed.wrapping_add(point_uint(pt) as u64);
        let d = ps.uint("d");
        let n = ps.uint("sites");
        let chain = mps::build_expander_mps(ps.uint("k"), d, n, s)?;
        let mut r = linalg::rng(s.wrapping_add(1 << 32));
        let (site, l1, l2) = (ps.uint("site"), ps.uint("first_len"), ps.uint("second_len"));
        let mut rows = Vec::new();
        for sep in ps.uints("separations") {
            let first_start = if l1 == 0 {
                1
            } else {
                (site + 1).checked_sub(sep + l1).filter(|&x| x >= 1).ok_or_else(|| Error::InvalidInput(format!("left interval does not fit for separation {sep}")))?
            };
            let a = SiteOp::single(site, mps::random_site_operator(d, &mut r));
            let matrix = mps::random_site_operator(d.pow((l1 + l2) as u32), &mut r);
            let b = TwoIntervalOp { first_start, first_len: l1, second_start: site + sep, second_len: l2, matrix };
            let res = mps::two_interval_correlation(&chain, &a, &b)?;
            let s1 = if l1 == 0 { Value::Null } else { json!(first_start + l1 - 1) };
            let r1 = if l1 == 0 { Value::Null } else { json!(first_start) };
            rows.push(vec![
                json!(s),
                json!(n),
                r1,
                s1,
                json!(site),
                json!(site + sep),
                json!(site + sep + l2 - 1),
                json!(res.separation),
                json!(res.value.re),
                json!(res.value.im),
                json!(res.bound),
                json!(res.tail()),
                json!(res.lambda),
                json!(res.folded_lambda),
                json!(res.within_bound()),
            ]);
        }
        Ok(rows)
    },
    summarize: |_, rows| bound_summary(TWO_INTERVAL.columns, rows),
};

// walk-decay

const WALK_DECAY: Experiment = Experiment {
    name: "walk-decay",
    about: "two-time correlation of a random walk on a random regular graph",
    params: &[
        p("vertices", Kind::Uint, "2000", "number of vertices V"),
        p("degree", Kind::Uint, "3", "graph degree"),
        p("taus", Kind::UintList, "[1, 2, 3, 4, 5, 6, 7, 8]", "walk times"),
        p("graphs", Kind::Uint, "1", "number of seeded graphs"),
    ],
    columns: &["seed", "V", "d_g", "girth", "tau", "corr", "lambda2", "lambda2_pow", "fit_exponent"],
    points: |ps| index_points(ps.uint("graphs")),
    run: |ps, seed, pt| {
        let s = seed.wrapping_add(point_uint(pt) as u64);
        let g = walk::random_regular_graph(ps.uint("vertices"), ps.uint("degree"), s)?;
        let sweep = walk::walk_decay(&g, &ps.uints("taus"), s)?;
        Ok(sweep
            .rows
            .iter()
            .map(|w| {
                vec![
                    json!(w.seed),
                    json!(w.v),
                    json!(w.d_g),
                    json!(w.girth),
                    json!(w.tau),
                    json!(w.corr),
                    json!(w.lambda2),
                    json!(w.lambda2.powi(w.tau as i32)),
                    json!(w.fit_exponent),
                ]
            })
            .collect())
    },
    summarize: |_, rows| {
        let c = WALK_DECAY.columns;
        let girth = column(c, rows, "girth");
        let tau = column(c, rows, "tau");
        let corr = column(c, rows, "corr");
        let pow = column(c, rows, "lambda2_pow");
        let mut nonneg = true;
        let mut slower = Vec::new();
        for i in 0..rows.len() {
            let t = tau[i].as_u64().unwrap();
            let cv = corr[i].as_f64().unwrap_or(f64::NAN);
            if girth[i].as_u64().is_none_or(|g| t <= g / 3) && !(cv >= 0.0) {
                nonneg = false;
            }
            if t == 4 {
                slower.push(cv > pow[i].as_f64().unwrap_or(f64::NAN));
            }
        }
        Summary {
            value: json!({ "nonnegative_within_girth_window": nonneg, "corr4_exceeds_lambda2_pow4": slower }),
            status: Status::Ok,
        }
    },
};

// gf-roundtrip

fn window(ps: &Params) -> Window {
    match ps.choice("window") {
        "hann" => Window::Hann,
        _ => Window::Bump,
    }
}

const GF_ROUNDTRIP: Experiment = Experiment {
    name: "gf-roundtrip",
    about: "soft torus to local projector and back, over a Voiculescu sweep",
    params: &[
        p("n", Kind::UintList, "[3, 4, 5, 6, 7, 8]", "Voiculescu sizes N"),
        p("window", Kind::Choice(&["bump", "hann"]), "\"bump\"", "partition-of-unity window"),
    ],
    columns: &["n", "epsilon", "d_epsilon", "delta", "outcomes", "epsilon_prime", "distance"],
    points: |ps| range_points(ps.uints("n")),
    run: |ps, _, pt| {
        let t = soft_torus::voiculescu_pair(point_uint(pt))?;
        let rt = soft_torus::roundtrip_gf(&t, window(ps))?;
        Ok(vec![vec![
            pt.clone(),
            json!(t.epsilon),
            json!(t.d() as f64 * t.epsilon),
            json!(rt.delta),
            json!(rt.outcomes),
            json!(rt.epsilon_prime),
            json!(rt.distance),
        ]])
    },
    summarize: |_, rows| {
        let c = GF_ROUNDTRIP.columns;
        let f = |name| column(c, rows, name).iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        let (de, ep, dist) = (f("d_epsilon"), f("epsilon_prime"), f("distance"));
        let constant = dist.iter().zip(&de).map(|(x, y)| x / y.powf(0.25)).fold(0.0, f64::max);
        let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
        Summary {
            value: json!({ "epsilon_prime_nonincreasing": mono(&ep), "distance_nonincreasing": mono(&dist), "fit_constant": constant }),
            status: Status::Ok,
        }
    },
};

// ab-roundtrip

const AB_ROUNDTRIP: Experiment = Experiment {
    name: "ab-roundtrip",
    about: "test bundle to local projector to twisted field, compared by Chern number",
    params: &[
        p("c", Kind::IntList, "[-1, 0, 1]", "test bundle Chern numbers"),
        p("n", Kind::Uint, "12", "lattice size N"),
        p("radius", Kind::Float, "1.5707963267948966", "strict-locality radius S"),
        p("grid", Kind::Uint, "24", "Chern grid M"),
    ],
    columns: &["c", "n", "epsilon", "above_cut", "near_cut", "localization_error", "chern", "residual", "status", "message"],
    points: |ps| ps.ints("c").into_iter().map(Value::from).collect(),
    run: |ps, _, pt| {
        let c = pt.as_i64().unwrap();
        let n = ps.uint("n");
        let b = bundle::make_test_bundle(c as i32)?;
        let lp = bundle::map_a(&b, n)?;
        let eps = lp.local.epsilon;
        let dp = lp.diagonalized();
        let res = bundle::map_b(&dp, ps.float("radius"), ps.uint("grid")).and_then(|mb| {
            let ch = bundle::chern_number(&mb.field, ps.uint("grid"))?;
            Ok((mb, ch))
        });
        let row = match res {
            Ok((mb, ch)) => {
                let status = if ch.chern == c { "ok" } else { "violation" };
                vec![
                    json!(c),
                    json!(n),
                    json!(eps),
                    json!(mb.regime.above_cut),
                    json!(mb.regime.near_cut),
                    json!(mb.localization_error),
                    json!(ch.chern),
                    json!(ch.residual),
                    json!(status),
                    json!(""),
                ]
            }
            Err(e) if regime_error(&e) => {
                vec![json!(c), json!(n), json!(eps), Value::Null, Value::Null, Value::Null, Value::Null, Value::Null, json!("out_of_regime"), json!(e.to_string())]
            }
            Err(e) => return Err(e),
        };
        Ok(vec![row])
    },
    summarize: |_, rows| {
        let (ok, regime, bad) = count_status(AB_ROUNDTRIP.columns, rows);
        Summary { value: json!({ "matched": ok, "out_of_regime": regime, "mismatched": bad }), status: status_from_counts(regime, bad, "Chern round trips") }
    },
};

// full-pipeline-chern

const FULL_PIPELINE: Experiment = Experiment {
    name: "full-pipeline-chern",
    about: "Voiculescu pair through the dilation to a twisted field and its Chern number",
    params: &[
        p("n", Kind::UintList, "[3]", "Voiculescu sizes N"),
        p("radius", Kind::Float, "1.5707963267948966", "strict-locality radius S"),
        p("grid", Kind::Uint, "12", "Chern grid M"),
    ],
    columns: &["n", "epsilon_prime", "reduced_dim", "above_cut", "near_cut", "chern", "residual", "status", "message"],
    points: |ps| range_points(ps.uints("n")),
    run: |ps, _, pt| {
        let n = point_uint(pt);
        let (rep, status, msg) = match bundle::full_pipeline(n, ps.float("radius"), ps.uint("grid")) {
            Ok(rep) => {
                let ok = rep.chern.as_ref().is_some_and(|c| c.chern.abs() == 1);
                (rep, if ok { "ok" } else { "violation" }, String::new())
            }
            Err((e, rep)) if regime_error(&e) => (rep, "out_of_regime", e.to_string()),
            Err((e, _)) => return Err(e),
        };
        let regime = rep.regime.as_ref();
        Ok(vec![vec![
            json!(n),
            json!(rep.epsilon_prime),
            json!(rep.reduced_dim),
            json!(regime.map(|r| r.above_cut)),
            json!(regime.map(|r| r.near_cut)),
            json!(rep.chern.as_ref().map(|c| c.chern)),
            json!(rep.chern.as_ref().map(|c| c.residual)),
            json!(status),
            json!(msg),
        ]])
    },
    summarize: |_, rows| {
        let (ok, regime, bad) = count_status(FULL_PIPELINE.columns, rows);
        Summary {
            value: json!({ "unit_chern": ok, "out_of_regime": regime, "other_chern": bad }),
            status: status_from_counts(regime, bad, "Chern magnitudes"),
        }
    },
};

// symmetry-pipeline

const SYMMETRY_PIPELINE: Experiment = Experiment {
    name: "symmetry-pipeline",
    about: "class defects through map G, the POVM, the symmetric dilation and map F",
    params: &[
        p("classes", Kind::ChoiceList(&["none", "symmetric", "selfdual"]), "[\"symmetric\", \"selfdual\"]", "symmetry classes"),
        p("instances", Kind::Uint, "10", "seeded instances per class"),
        p("n", Kind::Uint, "6", "matrix dimension"),
        p("tolerance", Kind::Float, "1e-8", "largest allowed class defect"),
    ],
    columns: &[
        "class",
        "seed",
        "input_defect",
        "map_g_defect",
        "povm_defect",
        "dilation_defect",
        "compression_defect",
        "map_f_defect",
        "worst",
        "outcomes",
        "ambient_dim",
    ],
    points: |ps| {
        let k = ps.uint("instances");
        ps.choices("classes").into_iter().flat_map(|c| (0..k).map(move |i| json!([c, i]))).collect()
    },
    run: |ps, seed, pt| {
        let tag: ClassTag = pt[0].as_str().unwrap().parse()?;
        let s = seed.wrapping_add(pt[1].as_u64().unwrap());
        let r = symmetry::class_pipeline(tag, ps.uint("n"), s)?;
        Ok(vec![vec![
            json!(r.class),
            json!(r.seed),
            json!(r.input_defect),
            json!(r.map_g_defect),
            json!(r.povm_defect),
            json!(r.dilation_defect),
            json!(r.compression_defect),
            json!(r.map_f_defect),
            json!(r.worst()),
            json!(r.outcomes),
            json!(r.ambient_dim),
        ]])
    },
    summarize: |ps, rows| {
        let tol = ps.float("tolerance");
        let worst = column(SYMMETRY_PIPELINE.columns, rows, "worst");
        let w: Vec<f64> = worst.iter().map(|v| v.as_f64().unwrap_or(f64::INFINITY)).collect();
        let bad = w.iter().filter(|&&x| !(x <= tol)).count();
        Summary {
            value: json!({ "runs": rows.len(), "max_defect": w.iter().cloned().fold(0.0, f64::max), "violations": bad }),
            status: status_from_counts(0, bad, "class defect bounds"),
        }
    },
};

// matthew

const MATTHEW: Experiment = Experiment {
    name: "matthew",
    about: "log-derivative inequality over all non-constant monotone Boolean functions",
    params: &[
        p("n", Kind::UintList, "[4]", "numbers of variables (at most 5)"),
        p("denominator", Kind::Uint, "50", "grid p = j / denominator"),
    ],
    columns: &["n", "function_id", "min_ratio", "complementary_pair", "pass"],
    points: |ps| range_points(ps.uints("n")),
    run: |ps, _, pt| {
        let grid = PGrid::new(ps.uint("denominator") as u32)?;
        let rows = channels::matthew_suite(point_uint(pt), grid)?;
        Ok(rows
            .into_iter()
            .map(|r| vec![json!(r.n), json!(r.function_id), json!(r.min_ratio), json!(r.complementary_pair), json!(r.pass)])
            .collect())
    },
    summarize: |_, rows| {
        let pass = column(MATTHEW.columns, rows, "pass");
        let ok = pass.iter().filter(|v| v.as_bool() == Some(true)).count();
        let fail = rows.len() - ok;
        Summary { value: json!({ "pass": ok, "fail": fail }), status: status_from_counts(0, fail, "Matthew inequalities") }
    },
};

// channel-bounds

const CHANNEL_BOUNDS: Experiment = Experiment {
    name: "channel-bounds",
    about: "average and maximal mistake rates of qubit decode channels",
    params: &[
        p("count", Kind::Uint, "100", "number of random channels"),
        p("quadrature", Kind::Bool, "false", "cross-check every average by quadrature"),
    ],
    columns: &["label", "k", "kraus", "average", "maximum", "quadrature", "ratio", "relation_holds"],
    points: |ps| {
        let mut v = index_points(ps.uint("count"));
        v.push(json!("identity"));
        v.push(json!("mixing"));
        v
    },
    run: |ps, seed, pt| {
        let quad = ps.flag("quadrature");
        let (label, ch, kraus) = match pt {
            Value::String(s) if s == "identity" => (s.clone(), channels::identity_decode(), 1),
            Value::String(s) => (s.clone(), channels::mixing_decode(), 0),
            _ => {
                let i = point_uint(pt);
                let (k, r) = (1 + i % 2, 2 + i % 3);
                let mut g = linalg::rng(seed.wrapping_add(i as u64));
                let ch = channels::random_decode_channel(k, r, &mut g)?;
                (format!("random-{i}"), ch, 0)
            }
        };
        let kraus = if kraus == 0 { ch.decoder.len() } else { kraus };
        let m = channels::mistake_rates(&ch, quad)?;
        Ok(vec![vec![
            json!(label),
            json!(ch.pattern.len()),
            json!(kraus),
            json!(m.average),
            json!(m.maximum),
            json!(m.quadrature),
            json!(m.ratio),
            json!(m.relation_holds),
        ]])
    },
    summarize: |_, rows| {
        let c = CHANNEL_BOUNDS.columns;
        let holds = column(c, rows, "relation_holds");
        let labels = column(c, rows, "label");
        let avg = column(c, rows, "average");
        let max = column(c, rows, "maximum");
        let mut bad = holds.iter().filter(|v| v.as_bool() == Some(false)).count();
        for i in 0..rows.len() {
            let target = match labels[i].as_str() {
                Some("identity") => 0.0,
                Some("mixing") => 0.5,
                _ => continue,
            };
            let off = |v: &Value| (v.as_f64().unwrap_or(f64::NAN) - target).abs();
            if !(off(&avg[i]) <= 1e-6 && off(&max[i]) <= 1e-6) {
                bad += 1;
            }
        }
        Summary { value: json!({ "channels": rows.len(), "violations": bad }), status: status_from_counts(0, bad, "mistake-rate relations") }
    },
};

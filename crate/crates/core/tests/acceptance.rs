//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance [-- 1 5 ...]` runs all criteria or the
//! listed ones. Failures are reported, not fatal, unless
//! `WGFLOW_ACCEPTANCE_STRICT=1` is set.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wgflow::baselines::svgd_update;
use wgflow::bench::{field_errors, ll_field, median_abs_error, Scenario};
use wgflow::datasets::{gen_gaussian, gen_s_shape, gen_subspace5d, mcar_mask, mean_impute, Link};
use wgflow::flow::{impute, rmse_on, run_flow, FieldSource, FlowConfig, ImputeConfig, SigmaPolicy};
use wgflow::kernel::GaussianKernel;
use wgflow::local_linear::batch_objective;
use wgflow::subspace::{principal_angles, FeatureMap};
use wgflow::{fit_batch, nw_velocity, solve_quadratic, Divergence, FitOptions, GaussianScore, Mirror, SampleSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal_set(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64, sd: f64) -> SampleSet {
    SampleSet::new(Array2::from_shape_fn((n, d), |_| shift + sd * rng.sample::<f64, _>(StandardNormal)))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn toy_flow() -> Outcome {
    let start = Instant::now();
    let score = GaussianScore::standard(1);
    let mut passed = [0usize; 2];
    let mut worst = [0.0f64; 2];
    for seed in 0..20u64 {
        let p = gen_gaussian(&[0.0], 1.0, 500, 1000 + seed).unwrap();
        let q0 = gen_gaussian(&[-1.0], 0.25, 500, 2000 + seed).unwrap();
        let cfg = FlowConfig {
            seed,
            iters: 20,
            eta: 0.1,
            sigma: SigmaPolicy::Median,
            monitor_every: 20,
            ..FlowConfig::default()
        };
        for (k, source) in [FieldSource::LocalLinear, FieldSource::NadarayaWatson(&score)].into_iter().enumerate() {
            let st = run_flow(&p, &q0, &cfg, source).unwrap();
            let (t0, first) = st.history[0];
            let (t1, last) = *st.history.last().unwrap();
            assert_eq!((t0, t1), (0, 20));
            worst[k] = worst[k].max(last);
            if last <= 0.05 && last <= 0.1 * first {
                passed[k] += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = passed.iter().all(|&c| c >= 19) && elapsed <= Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "LL {}/20, NW {}/20 seeds; worst final monitor LL {:.4}, NW {:.4}; {:.1}s (limit 60s)",
            passed[0],
            passed[1],
            worst[0],
            worst[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn quadratic_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let np = rng.random_range(20..=500);
        let nq = rng.random_range(20..=500);
        let (shift_p, shift_q, sd_q) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.7..1.3));
        let dp = normal_set(&mut rng, np, d, shift_p, 1.0);
        let dq = normal_set(&mut rng, nq, d, shift_q, sd_q);
        let queries = normal_set(&mut rng, 3, d, 0.0, 0.5);
        let sigma = rng.random_range(0.5..2.0) * (d as f64).sqrt();
        let fits = fit_batch(&queries, &dp, &dq, Divergence::ForwardKl, &FitOptions::with_sigma(sigma)).unwrap();
        for (j, fit) in fits.iter().enumerate() {
            let exact = solve_quadratic(&queries.row(j).to_vec(), &dp, &dq, sigma, 0.0).unwrap();
            for (a, b) in fit.w.iter().zip(&exact.w).chain([(&fit.b, &exact.b)]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed <= Duration::from_secs(30),
        format!("max coordinate gap {worst:.2e} over 100 instances (limit 1e-4); {:.1}s (limit 30s)", elapsed.as_secs_f64()),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, points) = (2, 50);
    let dp = normal_set(&mut rng, 40, d, 0.0, 1.0);
    let dq = normal_set(&mut rng, 40, d, 0.3, 1.2);
    let queries = normal_set(&mut rng, points, d, 0.0, 1.0);
    let (sigma, clamp) = (1.0, 30.0);
    let mut report = Vec::new();
    let mut pass = true;
    for div in Divergence::ALL {
        // The backward-KL mirror needs a negative witness.
        let (w_range, b_range) = if div == Divergence::NeymanChi2 { (-0.3..0.3, -3.0..-1.0) } else { (-1.0..1.0, -1.0..1.0) };
        let w = Array2::from_shape_fn((points, d), |_| rng.random_range(w_range.clone()));
        let b = Array1::from_shape_fn(points, |_| rng.random_range(b_range.clone()));
        let eval = |w: &Array2<f64>, b: &Array1<f64>| batch_objective(w.view(), b.view(), &queries, &dp, &dq, div, sigma, clamp).unwrap();
        let base = eval(&w, &b);
        let mut worst = 0.0f64;
        for j in 0..points {
            let mut analytic = base.grad_w.row(j).to_vec();
            analytic.push(base.grad_b[j]);
            let mut numeric = Vec::with_capacity(d + 1);
            for c in 0..=d {
                let theta = if c < d { w[[j, c]] } else { b[j] };
                let h = 1e-5 * (1.0 + theta.abs());
                let shifted = |delta: f64| {
                    let (mut w2, mut b2) = (w.clone(), b.clone());
                    if c < d {
                        w2[[j, c]] += delta;
                    } else {
                        b2[j] += delta;
                    }
                    eval(&w2, &b2).values[j]
                };
                numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
            }
            let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(diff / norm.max(1e-8));
        }
        pass &= worst <= 1e-5;
        report.push(format!("{div} {worst:.1e}"));
    }
    outcome(pass, format!("max relative error: {} (limit 1e-5)", report.join(", ")))
}

/// `sup_r { r d - ψ(r) }` by a fine grid plus golden-section polish.
fn conjugate_by_grid(psi: impl Fn(f64) -> f64, d: f64, lo: f64, hi: f64) -> f64 {
    let n = 200_000;
    let step = (hi - lo) / n as f64;
    let obj = |r: f64| r * d - psi(r);
    let best_r = (0..=n).map(|i| lo + step * i as f64).max_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
    let (mut a, mut b) = ((best_r - step).max(lo), (best_r + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let (c, e) = (b - g * (b - a), a + g * (b - a));
        if obj(c) > obj(e) {
            b = e;
        } else {
            a = c;
        }
    }
    obj(0.5 * (a + b))
}

fn conjugate_suite() -> Outcome {
    let grid = |lo: f64, hi: f64, n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    let mut inverse = 0.0f64;
    let mut oracle = 0.0f64;
    for div in Divergence::ALL {
        let spec = div.spec();
        for r in grid(0.1, 10.0, 100) {
            inverse = inverse.max((spec.psi_con_prime(div.h(r).unwrap()).unwrap() - r).abs());
        }
        for r_star in grid(0.1, 10.0, 25) {
            let d = div.h(r_star).unwrap();
            let exact = conjugate_by_grid(|r| spec.psi(r), d, 1e-4, 25.0);
            oracle = oracle.max((spec.psi_con(d).unwrap() - exact).abs());
        }
    }
    for m in [Mirror::PearsonChi2, Mirror::ForwardKl, Mirror::BackwardKl, Mirror::Cubic] {
        for r_star in grid(0.1, 10.0, 25) {
            // d chosen so the textbook maximiser is r_star.
            let d = textbook_slope(m, r_star);
            let exact = conjugate_by_grid(|r| m.psi(r), d, 1e-4, 25.0);
            oracle = oracle.max((m.conjugate(d).unwrap() - exact).abs());
        }
    }
    outcome(
        inverse <= 1e-8 && oracle <= 1e-4,
        format!("inverse identity max gap {inverse:.1e} (limit 1e-8); conjugate vs grid oracle max gap {oracle:.1e} (limit 1e-4)"),
    )
}

/// `ψ'(r)` of a textbook mirror.
fn textbook_slope(m: Mirror, r: f64) -> f64 {
    match m {
        Mirror::PearsonChi2 => r - 1.0,
        Mirror::ForwardKl => r.ln() + 1.0,
        Mirror::BackwardKl => -1.0 / r,
        Mirror::Cubic => 0.5 * r * r - 0.5,
    }
}

fn consistency_trend() -> Outcome {
    let ns = [100, 1000, 5000];
    let seeds = [0u64, 1];
    let (mut ll, mut nw) = (Vec::new(), Vec::new());
    let (mut at_cv, mut wide, mut narrow) = (Vec::new(), Vec::new(), Vec::new());
    for n in ns {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for seed in seeds {
            let rows = field_errors(Scenario::Gauss, n, seed, 5).unwrap();
            let get = |m: &str| rows.iter().find(|r| r.method == m).unwrap();
            a.push(get("ll").median_abs_error);
            b.push(get("nw").median_abs_error);
            if n == 1000 {
                let sigma = get("ll").sigma;
                let (dp, dq, queries) = Scenario::Gauss.samples(n, seed).unwrap();
                let truth = Scenario::Gauss.truth(&queries).unwrap();
                let err = |s: f64| median_abs_error(&ll_field(&dp, &dq, &queries, s, seed).unwrap(), &truth);
                at_cv.push(get("ll").median_abs_error);
                wide.push(err(4.0 * sigma));
                narrow.push(err(sigma / 8.0));
            }
        }
        ll.push(a.iter().sum::<f64>() / a.len() as f64);
        nw.push(b.iter().sum::<f64>() / b.len() as f64);
    }
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (c, w, s) = (mean(&at_cv), mean(&wide), mean(&narrow));
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        decreasing(&ll) && decreasing(&nw) && c < w && c < s,
        format!(
            "mean median error over n=100,1000,5000: LL {}, NW {}; at n=1000 LL cv-sigma {c:.3} vs x4 {w:.3} vs /8 {s:.3}",
            fmt(&ll),
            fmt(&nw)
        ),
    )
}

fn baseline_ordering() -> Outcome {
    let (mut ll, mut kde) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let rows = field_errors(Scenario::Mixture, 1000, seed, 5).unwrap();
        let get = |m: &str| rows.iter().find(|r| r.method == m).unwrap().median_abs_error;
        ll.push(get("ll"));
        kde.push(get("kde"));
    }
    let wins = ll.iter().zip(&kde).filter(|(a, b)| a <= b).count();
    let (a, b) = (median(ll), median(kde));
    outcome(a <= b, format!("median over 10 seeds: LL {a:.3}, KDE {b:.3}; LL <= KDE in {wins}/10 seeds"))
}

fn imputation() -> Outcome {
    let start = Instant::now();
    let n = 500;
    let mut ratios = Vec::new();
    let mut observed_intact = true;
    for seed in 0..5u64 {
        let x = gen_s_shape(n, 0.1, seed).unwrap();
        let mask = mcar_mask(n, 2, 0.2, seed + 100).unwrap();
        let mut holes = x.data().to_owned();
        holes.zip_mut_with(&mask, |v, observed| {
            if !observed {
                *v = f64::NAN;
            }
        });
        let holes = SampleSet::new(holes);
        let cfg = ImputeConfig {
            iters: 100,
            seed,
            ..ImputeConfig::default()
        };
        let result = impute(&holes, &mask, &cfg).unwrap();
        for ((ij, observed), v) in mask.indexed_iter().zip(result.imputed.data().iter()) {
            observed_intact &= !observed || v.to_bits() == x.data()[ij].to_bits();
        }
        let missing = mask.mapv(|m| !m);
        let flow = rmse_on(result.imputed.data(), x.data(), &missing);
        let baseline = rmse_on(mean_impute(&holes, &mask).unwrap().data(), x.data(), &missing);
        ratios.push(flow / baseline);
    }
    let elapsed = start.elapsed();
    let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
    outcome(
        avg <= 0.8 && observed_intact && elapsed <= Duration::from_secs(120),
        format!(
            "RMSE ratio to column means {avg:.3} (limit 0.80; per seed {}); observed cells bit-identical: {observed_intact}; {:.1}s (limit 120s)",
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn subspace_flow() -> Outcome {
    let n = 1000;
    let truth = FeatureMap::coordinate(5, 2).unwrap();
    let mut steps = Vec::new();
    let mut angles = Vec::new();
    let mut no_later = true;
    for seed in 0..3u64 {
        let p = gen_subspace5d(Link::Sin, n, 100 + seed);
        let q0 = gen_gaussian(&[0.0; 5], 1.0, n, 200 + seed).unwrap();
        let cfg = FlowConfig {
            seed,
            iters: 10,
            ..FlowConfig::default()
        };
        let first = |st: &wgflow::flow::FlowState| st.history.iter().find(|(_, v)| *v <= 0.1).map(|(t, _)| *t);
        let sub = run_flow(&p, &q0, &cfg, FieldSource::Subspace { m: 2, outer_iters: 40 }).unwrap();
        let full = run_flow(&p, &q0, &cfg, FieldSource::LocalLinear).unwrap();
        let (a, b) = (first(&sub), first(&full));
        no_later &= match (a, b) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        steps.push(format!("{}/{} (t=0 monitor {:.3})", fmt_step(a), fmt_step(b), full.history[0].1));
        let map = sub.feature_map.unwrap();
        let largest = principal_angles(map.matrix(), truth.matrix()).unwrap().into_iter().fold(0.0f64, f64::max);
        angles.push(largest.to_degrees());
    }
    let med = median(angles.clone());
    outcome(
        no_later && med <= 15.0,
        format!(
            "first iteration with monitor <= 0.1, subspace/full per seed: {}; largest principal angle {} deg, median {med:.1} (limit 15)",
            steps.join(" "),
            angles.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn fmt_step(t: Option<usize>) -> String {
    t.map_or("never".into(), |t| t.to_string())
}

fn svgd_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(2..=60);
        let spread = rng.random_range(0.5..3.0);
        let set = normal_set(&mut rng, n, d, 0.0, spread);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score = GaussianScore::new(mean, rng.random_range(0.5..2.0)).unwrap();
        let sigma = rng.random_range(0.3..3.0);
        let svgd = svgd_update(&set, &score, sigma).unwrap();
        let nw = nw_velocity(&set, &score, &set, sigma).unwrap();
        let kern = GaussianKernel::new(sigma).unwrap();
        for j in 0..n {
            let mass: f64 = (0..n).map(|i| kern.weight(set.row(i), set.row(j))).sum();
            for c in 0..d {
                let lhs = svgd[[j, c]] * n as f64 / mass;
                worst = worst.max((lhs - nw[[j, c]]).abs() / (1.0 + nw[[j, c]].abs()));
            }
        }
    }
    outcome(worst <= 1e-12, format!("max scaled gap {worst:.1e} over 100 cases (limit 1e-12)"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("toy flow", toy_flow),
        ("quadratic oracle", quadratic_oracle),
        ("objective gradients", gradient_check),
        ("conjugates and mirrors", conjugate_suite),
        ("consistency trend", consistency_trend),
        ("baseline ordering", baseline_ordering),
        ("imputation", imputation),
        ("subspace flow", subspace_flow),
        ("svgd identity", svgd_identity),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("WGFLOW_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.
//!
//! Every criterion that produces Monte Carlo or quadrature numbers runs once on a
//! 4-thread pool and once on a 1-thread pool; the final criterion compares the two
//! runs bit for bit.

use std::time::{Duration, Instant};

use advreg::adaptive::{build_grid, fit_adaptive, oracle_bandwidth, AdaptiveConfig};
use advreg::attacks::{deviation_functional_g, max_deviation, AttackSpec, Evaluable, SupQuery};
use advreg::basis_kernel::{KernelKind, KernelSpec, MultiIndexBasis};
use advreg::localpoly::{fit_local, Dataset};
use advreg::partition::{fit_pp, PpConfig};
use advreg::risk::{estimate_risk, estimate_standard_risk, rate_slope, trades_diagnostic, RiskSpec};
use advreg::testbed::{build_packing, hamming, sample_dataset, DesignSpec, NoiseSpec, SeededRng, Truth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
    numbers: Vec<f64>,
}

fn pp(h: f64, degree: usize) -> impl Fn(&Dataset) -> advreg::Result<advreg::partition::PpEstimator> + Sync + Send {
    move |data: &Dataset| {
        fit_pp(data, &PpConfig { m: (1.0 / h).ceil() as usize, degree, h, tau: None, kernel: KernelKind::Rectangular })
    }
}

/// Dense weighted least squares by Gaussian elimination on the normal equations.
fn wls_oracle(data: &Dataset, u: &[f64], h: f64, kernel: &KernelSpec, basis: &MultiIndexBasis) -> Vec<f64> {
    let nb = basis.len();
    let mut m = vec![vec![0.0; nb + 1]; nb];
    for i in 0..data.len() {
        let z: Vec<f64> = data.point(i).iter().zip(u).map(|(x, c)| (x - c) / h).collect();
        let w = kernel.eval(&z);
        if w == 0.0 {
            continue;
        }
        let row: Vec<f64> = basis
            .indices()
            .iter()
            .map(|s| {
                s.iter()
                    .zip(&z)
                    .map(|(&p, v)| v.powi(p as i32) / (1..=p).product::<u32>() as f64)
                    .product()
            })
            .collect();
        for a in 0..nb {
            for b in 0..nb {
                m[a][b] += w * row[a] * row[b];
            }
            m[a][nb] += w * row[a] * data.response(i);
        }
    }
    for col in 0..nb {
        let piv = (col..nb).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        let pivot_row = m[col].clone();
        for row in m.iter_mut().skip(col + 1) {
            let f = row[col] / pivot_row[col];
            for (v, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                *v -= f * p;
            }
        }
    }
    let mut theta = vec![0.0; nb];
    for r in (0..nb).rev() {
        let s: f64 = (r + 1..nb).map(|c| m[r][c] * theta[c]).sum();
        theta[r] = (m[r][nb] - s) / m[r][r];
    }
    theta
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 200 {
        let d = rng.random_range(1..=2);
        let degree = rng.random_range(0..=2);
        let n = rng.random_range(5..=50);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = Dataset::new(d, x, y).unwrap();
        let kind = if rng.random::<bool>() { KernelKind::Rectangular } else { KernelKind::Epanechnikov };
        let kernel = KernelSpec::new(kind, d).unwrap();
        let basis = MultiIndexBasis::new(degree, d).unwrap();
        let u: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let h = rng.random_range(0.2..1.0);
        let tau = 1e-6;
        let fit = fit_local(&data, &u, h, tau, &kernel, &basis).unwrap();
        if fit.n_local() == 0 || fit.lambda_min() < tau {
            continue;
        }
        let got = fit.coefficients().unwrap();
        let want = wls_oracle(&data, &u, h, &kernel, &basis);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / (1.0 + w.abs()));
        }
        checked += 1;
    }
    Outcome { pass: worst <= 1e-10, detail: format!("200 instances, max rel. deviation {worst:.2e}"), numbers: vec![] }
}

fn criterion_2() -> Outcome {
    let n = 5000;
    let probe: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
    let quad = Truth::polynomial(1, vec![(vec![0], 0.5), (vec![1], -1.0), (vec![2], 2.0)]).unwrap();
    let lin = Truth::polynomial(1, vec![(vec![0], -0.3), (vec![1], 1.7)]).unwrap();
    let noiseless = NoiseSpec::Gaussian { sigma: 0.0 };
    let rng = SeededRng::new(202);
    let data_q = sample_dataset(&quad, &DesignSpec::Uniform, &noiseless, n, &mut rng.data_stream(0)).unwrap();
    let data_l = sample_dataset(&lin, &DesignSpec::Uniform, &noiseless, n, &mut rng.data_stream(1)).unwrap();
    let pp_est = pp(0.1, 2)(&data_q).unwrap();
    let ad_est = fit_adaptive(
        &data_l,
        &AdaptiveConfig { beta_max: 2.0, c_lep: None, degree: 1, kernel: KernelKind::Epanechnikov, m: None },
    )
    .unwrap();
    let pp_err = probe.iter().map(|&t| (pp_est.eval(&[t]) - quad.eval(&[t])).abs()).fold(0.0, f64::max);
    let ad_err = probe.iter().map(|&t| (ad_est.eval(&[t]) - lin.eval(&[t])).abs()).fold(0.0, f64::max);
    Outcome {
        pass: pp_err <= 1e-6 && ad_err <= 1e-6,
        detail: format!("PP (l=2) max error {pp_err:.2e}, adaptive (l=1) max error {ad_err:.2e}"),
        numbers: vec![pp_err, ad_err],
    }
}

fn kink_truth() -> Truth {
    Truth::holder_power(1, 1.0, 2.0).unwrap()
}

fn criterion_3() -> Outcome {
    let truth = kink_truth();
    let noise = NoiseSpec::Gaussian { sigma: 1.0 };
    let spec = RiskSpec::new(2.0, AttackSpec::identity(1).unwrap(), 1000, 200).unwrap();
    let mut points = Vec::new();
    for (k, e) in [8, 10, 12, 14].into_iter().enumerate() {
        let n = 1usize << e;
        let h = (n as f64).powf(-1.0 / 3.0);
        let est = estimate_risk(&truth, pp(h, 1), &spec, &DesignSpec::Uniform, &noise, n, SeededRng::new(300 + k as u64))
            .unwrap();
        points.push((n as f64, est.mean));
    }
    let (slope, _, r2) = rate_slope(&points).unwrap();
    let pass = (slope + 2.0 / 3.0).abs() <= 0.15;
    let mut numbers: Vec<f64> = points.iter().map(|p| p.1).collect();
    numbers.push(slope);
    Outcome { pass, detail: format!("slope {slope:.4} (r2 {r2:.4}), target -0.6667 +/- 0.15"), numbers }
}

fn criterion_4() -> Outcome {
    let truth = kink_truth();
    let noise = NoiseSpec::Gaussian { sigma: 1.0 };
    let r = 0.2;
    let spec = RiskSpec::new(2.0, AttackSpec::lp_ball(1, 2.0, r).unwrap(), 1000, 200).unwrap();
    let mut adv = Vec::new();
    let mut std = Vec::new();
    for e in [10, 14] {
        let n = 1usize << e;
        let h = r.max((n as f64).powf(-1.0 / 3.0));
        let seed = SeededRng::new(400 + e as u64);
        adv.push(estimate_risk(&truth, pp(h, 1), &spec, &DesignSpec::Uniform, &noise, n, seed).unwrap().mean);
        std.push(estimate_standard_risk(&truth, pp(h, 1), 2.0, 1000, 200, &DesignSpec::Uniform, &noise, n, seed).unwrap().0);
    }
    let adv_ratio = adv[1] / adv[0];
    let std_ratio = std[1] / std[0];
    Outcome {
        pass: (0.5..=1.5).contains(&adv_ratio) && std_ratio < 0.4,
        detail: format!("adversarial ratio {adv_ratio:.4} in [0.5, 1.5], standard ratio {std_ratio:.4} < 0.4"),
        numbers: vec![adv[0], adv[1], std[0], std[1]],
    }
}

/// Order-0 Holder constant over all pairs of a dense 1-D grid.
fn brute_force_constant(f: &Truth, beta: f64) -> f64 {
    const G: usize = 10_001;
    let vals: Vec<f64> = (0..G).map(|i| f.eval(&[i as f64 / (G - 1) as f64])).collect();
    let mut c = 0.0f64;
    for i in 0..G {
        for j in i + 1..G {
            let dist = (j - i) as f64 / (G - 1) as f64;
            c = c.max((vals[j] - vals[i]).abs() / dist.powf(beta));
        }
    }
    c
}

fn criterion_5() -> Outcome {
    let query = SupQuery::default_for(1);
    let mut pass = true;
    let mut worst_ratio = 0.0f64;
    let mut numbers = Vec::new();
    for beta in [0.5, 1.0] {
        for f in [Truth::holder_power(1, beta, 1.0).unwrap(), Truth::staircase(1, beta, 2.0, 0.025).unwrap()] {
            let c = brute_force_constant(&f, beta);
            for r in [0.01, 0.02, 0.05] {
                let attack = AttackSpec::lp_ball(1, 2.0, r).unwrap();
                let dev = (0..1000)
                    .map(|i| max_deviation(&f, &[(i as f64 + 0.5) / 1000.0], &attack, &query).unwrap())
                    .fold(0.0, f64::max);
                let bound = c * r.powf(beta.min(1.0));
                worst_ratio = worst_ratio.max(dev / bound);
                pass &= dev <= bound * (1.0 + 1e-12);
                numbers.push(dev);
            }
        }
    }
    Outcome { pass, detail: format!("max deviation / bound = {worst_ratio:.4} (<= 1 required)"), numbers }
}

fn criterion_6() -> Outcome {
    let query = SupQuery::default_for(1);
    let mut points = Vec::new();
    for r in [0.005, 0.01, 0.02, 0.04] {
        let f0 = Truth::staircase(1, 0.5, 2.0, r).unwrap();
        let attack = AttackSpec::lp_ball(1, 2.0, r).unwrap();
        let g = deviation_functional_g(&f0, &attack, 1.0, 1 << 14, &query).unwrap();
        points.push((r, g));
    }
    let (slope, _, _) = rate_slope(&points).unwrap();
    let mut numbers: Vec<f64> = points.iter().map(|p| p.1).collect();
    numbers.push(slope);
    Outcome {
        pass: (slope - 0.5).abs() <= 0.05,
        detail: format!("slope of log G vs log r = {slope:.4}, target 0.5 +/- 0.05"),
        numbers,
    }
}

fn criterion_7() -> Outcome {
    let truth = Truth::staircase(1, 0.5, 2.0, 0.02).unwrap();
    let noise = NoiseSpec::Gaussian { sigma: 0.3 };
    let spec = RiskSpec::new(2.0, AttackSpec::lp_ball(1, 2.0, 0.05).unwrap(), 4000, 1).unwrap();
    let factory = pp(0.1, 1);
    let mut failures = 0;
    let mut numbers = Vec::new();
    for seed in 0..20u64 {
        let rng = SeededRng::new(700 + seed);
        let data = sample_dataset(&truth, &DesignSpec::Uniform, &noise, 1000, &mut rng.data_stream(0)).unwrap();
        let est = factory(&data).unwrap();
        let rep = trades_diagnostic(&est, &truth, &spec, &DesignSpec::Uniform, &noise, &mut rng.test_stream(0)).unwrap();
        failures += usize::from(!rep.sandwich_ok);
        numbers.push(rep.r);
        numbers.push(rep.t_minus_noise);
    }
    Outcome { pass: failures == 0, detail: format!("sandwich violated on {failures} of 20 seeds"), numbers }
}

fn criterion_8() -> Outcome {
    let n = 4096;
    let truth = kink_truth();
    let noise = NoiseSpec::Gaussian { sigma: 0.2 };
    let config = AdaptiveConfig { beta_max: 2.0, c_lep: None, degree: 1, kernel: KernelKind::Rectangular, m: None };
    let grid = build_grid(n, 1, config.beta_max).unwrap();
    let h_bar = oracle_bandwidth(&grid, 1.0).unwrap();
    let spec = RiskSpec::new(2.0, AttackSpec::identity(1).unwrap(), 2000, 50).unwrap();
    let seed = SeededRng::new(800);
    let adaptive = estimate_risk(&truth, |d: &Dataset| fit_adaptive(d, &config), &spec, &DesignSpec::Uniform, &noise, n, seed)
        .unwrap();
    let oracle = estimate_risk(&truth, pp(h_bar, 1), &spec, &DesignSpec::Uniform, &noise, n, seed).unwrap();
    let ratio = adaptive.mean / oracle.mean;
    let mut zero_ok = true;
    for s in 0..50 {
        let data = sample_dataset(&truth, &DesignSpec::Uniform, &noise, n, &mut SeededRng::new(850 + s).data_stream(0))
            .unwrap();
        let zero = data.with_responses(vec![0.0; n]).unwrap();
        let est = fit_adaptive(&zero, &config).unwrap();
        let top = est.grid().max_bandwidth();
        zero_ok &= est.selected_bandwidths().iter().all(|&h| h == top);
    }
    Outcome {
        pass: ratio <= 4.0 && zero_ok,
        detail: format!(
            "adaptive/oracle risk ratio {ratio:.4} <= 4 (h_bar {h_bar:.4}); zero data selects max(H) everywhere: {zero_ok}"
        ),
        numbers: vec![adaptive.mean, oracle.mean],
    }
}

fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let mut rng = SeededRng::new(900).stream(0);
    for (d, l_n, beta, quad) in [(1usize, 32usize, 0.5, 1 << 14), (2, 4, 1.0, 256)] {
        let base = Truth::holder_power(d, beta, 1.0).unwrap();
        let family = build_packing(&base, beta, 2.0, l_n, 8, &mut rng).unwrap();
        let cubes = l_n.pow(d as u32);
        let packed: Vec<_> = family
            .iter()
            .map(|t| match t {
                Truth::Packed(p) => p.as_ref(),
                _ => unreachable!(),
            })
            .collect();
        let mut min_ham = usize::MAX;
        for i in 0..packed.len() {
            for j in i + 1..packed.len() {
                min_ham = min_ham.min(hamming(&packed[i].signs, &packed[j].signs));
            }
        }
        let grid = advreg::attacks::midpoint_grid(quad, d).unwrap();
        let w = 1.0 / (grid.len() / d) as f64;
        let mut worst_ip = 0.0f64;
        for a in 0..cubes {
            for b in a + 1..cubes.min(a + 3) {
                let ip: f64 = grid.chunks_exact(d).map(|x| packed[0].phi_l(a, x) * packed[0].phi_l(b, x)).sum::<f64>() * w;
                worst_ip = worst_ip.max(ip.abs());
            }
        }
        let norms: Vec<f64> = family
            .iter()
            .map(|f| (grid.chunks_exact(d).map(|x| (f.eval(x) - base.eval(x)).powi(2)).sum::<f64>() * w).sqrt())
            .collect();
        let spread = norms.iter().map(|v| (v - norms[0]).abs()).fold(0.0, f64::max);
        pass &= 8 * min_ham >= cubes && worst_ip <= 1e-10 && spread <= 1e-9;
        notes.push(format!("d={d}: min Hamming {min_ham} (>= {cubes}/8), max |<phi_l,phi_l'>| {worst_ip:.1e}, norm spread {spread:.1e}"));
    }
    Outcome { pass, detail: notes.join("; "), numbers: vec![] }
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion, Duration); 9] = [
        ("oracle equivalence", criterion_1, Duration::from_secs(5)),
        ("polynomial exactness", criterion_2, Duration::from_secs(30)),
        ("standard-rate exponent", criterion_3, Duration::from_secs(600)),
        ("phase transition", criterion_4, Duration::from_secs(600)),
        ("deviation bound", criterion_5, Duration::from_secs(60)),
        ("hard-instance deviation functional", criterion_6, Duration::from_secs(60)),
        ("TRADES sandwich", criterion_7, Duration::from_secs(120)),
        ("adaptive sanity", criterion_8, Duration::from_secs(900)),
        ("packing construction", criterion_9, Duration::from_secs(60)),
    ];
    let pool = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let four = pool(4);
    let one = pool(1);
    let mut all_pass = true;
    let mut deterministic = true;
    let mut mismatches = Vec::new();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = four.install(run);
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= *budget;
        all_pass &= pass;
        println!(
            "criterion {:>2} {:<36} {} ({}; {:.1}s of {}s)",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        let again = one.install(run);
        let same = out.numbers.len() == again.numbers.len()
            && out.numbers.iter().zip(&again.numbers).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            deterministic = false;
            mismatches.push(i + 1);
        }
    }
    all_pass &= deterministic;
    println!(
        "criterion 10 {:<36} {} (1 vs 4 threads, mismatching criteria: {:?})",
        "determinism",
        if deterministic { "PASS" } else { "FAIL" },
        mismatches
    );
    if !all_pass {
        std::process::exit(1);
    }
}

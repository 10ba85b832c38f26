//! Acceptance checks, one line per criterion.
//!
//! Runs sequentially so the reported runtimes are not inflated by other
//! checks. Exits non-zero when any check fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use expertgame::balanced::frobenius;
use expertgame::pde::probe_derivative_bounds;
use expertgame::rng;
use expertgame::sim::{
    experiment_convergence, experiment_counterexample, experiment_empty_regime, CounterexampleConfig, EmptyRegimeReport,
};
use expertgame::{
    analyze_balanced, build_gaussian_limit, construct_balanced, evaluate_u, gain_distribution, hamiltonian_hb,
    scaled_value, simulate, solve_full_adversary, solve_reduced_fd, solve_value, AdversaryPolicy, ExpertModel,
    FinalCondition, ForecasterPolicy, GridSpec, SigmaPair,
};

type Check = Result<String, String>;

/// Label, runtime budget and check.
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model(mu: &[f64]) -> ExpertModel {
    ExpertModel::new(mu.to_vec()).unwrap()
}

fn random_symmetric(n: usize, r: &mut rng::Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| 2.0 * r.random::<f64>() - 1.0);
    (&a + a.transpose()) * 0.5
}

/// A random model with balanced controls and a constant in its range.
fn random_feasible(r: &mut rng::Rng) -> (ExpertModel, f64, f64, f64) {
    loop {
        let n = r.random_range(2..=5);
        let mu: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let m = model(&mu);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        if let Ok((lo, hi)) = an.require_feasible() {
            let c = lo + (hi - lo) * r.random::<f64>();
            return (m, c, lo, hi);
        }
    }
}

fn criterion_1() -> Check {
    let t = solve_value(1, &model(&[1.0, 1.0]), &FinalCondition::max()).unwrap();
    let v = t.value(0, &[0]).unwrap();
    let s = t.saddle(0, &[0]).unwrap();
    let a = s.alpha_star().unwrap();
    let gap = s.duality_gap.abs();
    let alpha_err = (a.a()[0] - 0.5).abs().max((a.a()[1] - 0.5).abs());
    ensure(
        (v - 0.5).abs() <= 1e-9 && alpha_err <= 1e-9 && gap <= 1e-8,
        format!("V = {v:.12}, |a - 1/2| = {alpha_err:.1e}, duality gap = {gap:.1e}"),
    )
}

/// `V(n, x)` with `n` rounds left: the forecaster's weight on expert 1 runs
/// over a grid of step `h` and the adversary answers with a pure event.
fn grid_oracle(mu: [f64; 2], n: usize, x: [i64; 2], h: f64, memo: &mut HashMap<(usize, [i64; 2]), f64>) -> f64 {
    if n == 0 {
        return x[0].max(x[1]) as f64;
    }
    if let Some(&v) = memo.get(&(n, x)) {
        return v;
    }
    // cont[e][i]: expected continuation of event e when the forecaster follows expert i
    let mut cont = [[0.0; 2]; 4];
    for (e, row) in cont.iter_mut().enumerate() {
        let (k, pin) = (e / 2, (e % 2) as i64);
        for g0 in 0..2i64 {
            for g1 in 0..2i64 {
                let g = [g0, g1];
                let p: f64 = (0..2)
                    .map(|j| {
                        if j == k {
                            (g[j] == pin) as i32 as f64
                        } else if g[j] == 1 {
                            mu[j]
                        } else {
                            1.0 - mu[j]
                        }
                    })
                    .product();
                if p == 0.0 {
                    continue;
                }
                for (i, slot) in row.iter_mut().enumerate() {
                    let next = [x[0] + g0 - g[i], x[1] + g1 - g[i]];
                    *slot += p * grid_oracle(mu, n - 1, next, h, memo);
                }
            }
        }
    }
    let steps = (1.0 / h).round() as usize;
    let v = (0..=steps)
        .map(|k| {
            let phi = k as f64 / steps as f64;
            cont.iter()
                .map(|c| phi * c[0] + (1.0 - phi) * c[1])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    memo.insert((n, x), v);
    v
}

fn criterion_2() -> Check {
    let mut r = rng::stream(2, 0);
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for _ in 0..20 {
        let mu = [r.random::<f64>(), r.random::<f64>()];
        let horizon = r.random_range(1..=3);
        let table = solve_value(horizon, &model(&mu), &FinalCondition::max()).unwrap();
        let mut memo = HashMap::new();
        for m in 0..=horizon {
            let radius = table.slice(m).radius as i64;
            for z in -radius..=radius {
                let v = table.value(m, &[z]).unwrap();
                let o = grid_oracle(mu, horizon - m, [z, 0], 1e-3, &mut memo);
                worst = worst.max((v - o).abs());
                states += 1;
            }
        }
    }
    ensure(
        worst <= 2e-3,
        format!("{states} states, max |DP - oracle| = {worst:.2e}"),
    )
}

fn criterion_3() -> Check {
    let an = analyze_balanced(&model(&[0.75, 0.25]), 1e-12).unwrap();
    let (lo, hi) = an.require_feasible().unwrap();
    let five = analyze_balanced(&model(&[0.1, 0.3, 0.5, 0.7, 0.9]), 1e-12).unwrap();
    // term by term at c = 1/2; 1.4603 is this value to four decimals
    let s_half = 0.4 / 0.9 + 0.2 / 0.7 + 0.0 + 0.2 / 0.7 + 0.4 / 0.9;
    ensure(
        (lo - 0.1875).abs() <= 1e-9
            && (hi - 0.8125).abs() <= 1e-9
            && !five.feasible
            && (five.s_min - s_half).abs() <= 1e-6
            && (five.s_min - 1.4603).abs() <= 5e-5,
        format!(
            "c_min = {lo:.12}, c_max = {hi:.12}; five experts feasible = {}, s_min = {:.8} (term-by-term {s_half:.8})",
            five.feasible, five.s_min
        ),
    )
}

fn criterion_4() -> Check {
    let mut r = rng::stream(4, 0);
    let mut worst: f64 = 0.0;
    let mut in_set = true;
    for _ in 0..1000 {
        let (m, c, _, _) = random_feasible(&mut r);
        let al = construct_balanced(c, &m).unwrap();
        let total: f64 = al.a().iter().chain(al.b()).sum();
        in_set &= al.a().iter().chain(al.b()).all(|&w| (0.0..=1.0).contains(&w)) && (total - 1.0).abs() <= 1e-12;
        for (j, &mu) in m.mu().iter().enumerate() {
            let gain = (1.0 - al.a()[j] - al.b()[j]) * mu + al.b()[j];
            worst = worst.max((gain - c).abs());
        }
    }
    ensure(
        in_set && worst <= 1e-10,
        format!("1000 controls, all admissible = {in_set}, max |c_j - c| = {worst:.2e}"),
    )
}

fn criterion_5() -> Check {
    let mut r = rng::stream(5, 0);
    let mut identity: f64 = 0.0;
    for _ in 0..500 {
        let (m, c, _, _) = random_feasible(&mut r);
        let n = m.n_experts();
        let s = random_symmetric(n, &mut r);
        let q = gain_distribution(&construct_balanced(c, &m).unwrap(), &m).unwrap();
        // second moment summed directly over the atoms
        let mut second = DMatrix::zeros(n, n);
        for &(mask, p) in q.atoms() {
            let g = q.gain_vector(mask);
            for i in 0..n {
                for j in 0..n {
                    second[(i, j)] += p * g[i] * g[j];
                }
            }
        }
        let sg = SigmaPair::new(&m);
        let rhs = c * frobenius(&sg.sigma1, &s) - frobenius(&sg.sigma2, &s);
        identity = identity.max((frobenius(&s, &second) - rhs).abs());
    }

    let mut brute_err: f64 = 0.0;
    for _ in 0..100 {
        let (m, _, lo, hi) = random_feasible(&mut r);
        let s = random_symmetric(m.n_experts(), &mut r);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap().value;
        let brute = (0..=500)
            .map(|k| {
                let c = lo + (hi - lo) * k as f64 / 500.0;
                let q = gain_distribution(&construct_balanced(c, &m).unwrap(), &m).unwrap();
                0.5 * frobenius(&s, q.second_moment())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        brute_err = brute_err.max((brute - hb).abs());
    }

    let m = model(&[0.75, 0.25]);
    let an = analyze_balanced(&m, 1e-12).unwrap();
    let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap().value;
    ensure(
        identity <= 1e-10 && brute_err <= 1e-8 && hb == 3.0 / 16.0,
        format!("identity residual {identity:.1e}, H_B vs sampled {brute_err:.1e}, counterexample H_B = {hb}"),
    )
}

fn criterion_6() -> Check {
    let m = model(&[0.75, 0.25]);
    let an = analyze_balanced(&m, 1e-12).unwrap();
    let gl = build_gaussian_limit(&m, &an, 0.0).unwrap();
    let exact = evaluate_u(&gl, 0.0, &[0.0, 0.0], 0, 0).unwrap().value;
    let fd = |nz: usize, nt: usize| {
        solve_reduced_fd(&m, &an, 0.0, GridSpec::new(-6.0, 6.0, nz, nt))
            .unwrap()
            .w0(0.0)
            .unwrap()
    };
    let w = fd(801, 2000);
    let errs: Vec<f64> = [(101, 200), (201, 800), (401, 3200)]
        .iter()
        .map(|&(nz, nt)| (fd(nz, nt) - exact).abs())
        .collect();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];

    // plain Monte Carlo of max(X) with X ~ N(0, Sigma)
    let f = gl.factor();
    let mut r = rng::stream(6, 0);
    let samples = 10_000_000usize;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..samples {
        let xi: [f64; 2] = [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)];
        let x0 = f[(0, 0)] * xi[0] + f[(0, 1)] * xi[1];
        let x1 = f[(1, 0)] * xi[0] + f[(1, 1)] * xi[1];
        let v = x0.max(x1);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / samples as f64;
    let se = ((sumsq / samples as f64 - mean * mean) / (samples - 1) as f64).sqrt();
    let z = (mean - exact).abs() / se;
    ensure(
        (w - 0.24430).abs() <= 5e-3 && ratios.iter().all(|&q| q >= 3.0) && z <= 4.0,
        format!(
            "w_FD = {w:.6}, refinement ratios {:.2} {:.2}, closed form {exact:.6} vs MC {mean:.6} ({z:.2} SE)",
            ratios[0], ratios[1]
        ),
    )
}

fn criterion_7() -> Check {
    let m = model(&[0.75, 0.25]);
    let an = analyze_balanced(&m, 1e-12).unwrap();
    let gl = build_gaussian_limit(&m, &an, 0.1).unwrap();
    let e = probe_derivative_bounds(&gl, &[0.002, 0.005, 0.01, 0.02, 0.05], 16, 1).unwrap();
    ensure(
        (-1.7..=-1.3).contains(&e.exponent_tt) && (-1.2..=-0.8).contains(&e.exponent_xxx),
        format!("tt exponent {:.4}, xxx exponent {:.4}", e.exponent_tt, e.exponent_xxx),
    )
}

fn criterion_8() -> Check {
    let rows = experiment_convergence(
        &model(&[0.75, 0.25]),
        &FinalCondition::max_theta(0.1).unwrap(),
        &[16, 64, 256],
        8,
    )
    .unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| (r.scaled_value - 0.21988).abs()).collect();
    ensure(
        gaps.windows(2).all(|w| w[1] < w[0]) && gaps[2] <= 0.1 && (rows[0].limit - 0.21988).abs() < 1e-5,
        format!(
            "U = {:.8}, |u^M - 0.21988| at 16/64/256: {:.3e} {:.3e} {:.3e}",
            rows[0].limit, gaps[0], gaps[1], gaps[2]
        ),
    )
}

fn criterion_9() -> Check {
    let m = model(&[0.75, 0.25]);
    let an = analyze_balanced(&m, 1e-12).unwrap();
    let gl = build_gaussian_limit(&m, &an, 0.0).unwrap();
    let u0 = evaluate_u(&gl, 0.0, &[0.0, 0.0], 0, 0).unwrap().value;
    let table = solve_value(256, &m, &FinalCondition::max()).unwrap();
    let u = scaled_value(&table, 0.0, &[0.0, 0.0]).unwrap();
    ensure(u >= u0 - 0.05, format!("u^256 = {u:.6}, U - 0.05 = {:.6}", u0 - 0.05))
}

fn criterion_10() -> Check {
    let m = model(&[0.75, 0.25]);
    let an = analyze_balanced(&m, 1e-12).unwrap();
    let (lo, _) = an.require_feasible().unwrap();
    let adv = AdversaryPolicy::Constant(construct_balanced(lo, &m).unwrap());
    let phi = FinalCondition::max_theta(0.1).unwrap();
    let a = simulate(&m, &adv, &ForecasterPolicy::FollowTheLeader, &phi, 1024, 100_000, 101)
        .unwrap()
        .regret;
    let b = simulate(&m, &adv, &ForecasterPolicy::Uniform, &phi, 1024, 100_000, 202)
        .unwrap()
        .regret;
    let half_width = 1.959964 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    let diff = a.mean - b.mean;
    ensure(
        diff.abs() <= half_width,
        format!(
            "follow-the-leader {:.4} +- {:.4}, uniform {:.4} +- {:.4}, difference {diff:.4} within +-{half_width:.4}",
            a.mean, a.stderr, b.mean, b.stderr
        ),
    )
}

fn criterion_11() -> Check {
    let r = experiment_counterexample(&CounterexampleConfig::new(4096, 100_000, 11)).unwrap();
    let z = r.z_increment;
    let drift = (z.mean - 0.75).abs() / z.mean_stderr;
    let var = (z.variance - 0.1875).abs() / z.variance_stderr;
    ensure(
        r.gap_ci95_low > 0.0 && drift <= 3.0 && var <= 3.0,
        format!(
            "gap {:.6} CI [{:.6}, {:.6}], Z drift {:.6} ({drift:.2} SE), Z variance {:.6} ({var:.2} SE)",
            r.gap, r.gap_ci95_low, r.gap_ci95_high, z.mean, z.variance
        ),
    )
}

const EMPTY_MU: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn empty_regime_theta() -> &'static EmptyRegimeReport {
    static REPORT: OnceLock<EmptyRegimeReport> = OnceLock::new();
    REPORT.get_or_init(|| experiment_empty_regime(&model(&EMPTY_MU), 0.1, &[64, 256, 1024], 100_000, 12).unwrap())
}

fn criterion_12a() -> Check {
    let r = empty_regime_theta();
    let means: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{:.5}", row.scaled_regret.mean))
        .collect();
    ensure(
        r.strictly_decreasing,
        format!("scaled regret at 64/256/1024: {}", means.join(" ")),
    )
}

fn criterion_12b() -> Check {
    let last = empty_regime_theta().rows.last().unwrap().scaled_regret;
    ensure(
        last.mean < 0.0,
        format!("scaled regret at 1024: {:.5} +- {:.5}", last.mean, last.stderr),
    )
}

fn criterion_12c() -> Check {
    let r = experiment_empty_regime(&model(&EMPTY_MU), 0.0, &[64, 256, 1024], 100_000, 12).unwrap();
    let bound = r.lower_bound.unwrap();
    let worst = r
        .rows
        .iter()
        .map(|row| row.scaled_regret.mean)
        .fold(f64::INFINITY, f64::min);
    ensure(
        worst >= bound - 0.05,
        format!(
            "pair {:?}, bound {bound:.6}, smallest scaled regret {worst:.6}",
            r.pair.unwrap()
        ),
    )
}

fn criterion_13() -> Check {
    let m = model(&[0.75, 0.25]);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for phi in [FinalCondition::max(), FinalCondition::max_theta(0.1).unwrap()] {
        let v = solve_value(16, &m, &phi).unwrap();
        let w = solve_full_adversary(16, 2, &phi).unwrap();
        for k in 0..=16 {
            for (a, b) in v.slice(k).values().iter().zip(w.slice(k).values()) {
                worst = worst.max(a - b);
                checked += 1;
            }
        }
    }
    // values agree to round-off where both players are forced
    ensure(worst <= 1e-12, format!("{checked} states, max (V - W) = {worst:.1e}"))
}

const DETERMINISM_CASES: &[(&str, &str)] = &[
    ("analyze", r#"{"experts": {"mu": [0.1, 0.3, 0.5, 0.7, 0.9]}}"#),
    ("dp", r#"{"experts": {"mu": [0.75, 0.25]}, "game": {"M": 8}}"#),
    (
        "dp",
        r#"{"experts": {"mu": [0.6, 0.4, 0.3]}, "game": {"M": 3}, "output": {"format": "json"}}"#,
    ),
    (
        "pde",
        r#"{"experts": {"mu": [0.75, 0.25]}, "pde": {"grid": {"z_min": -4.0, "z_max": 4.0, "nz": 81, "nt": 400}}}"#,
    ),
    (
        "pde",
        r#"{"experts": {"mu": [0.6, 0.3, 0.2]}, "pde": {"points": [{"t": 0.0, "x": [0.0, 0.0, 0.0]}, {"t": 0.5, "x": [0.3, 0.0, -0.2]}], "mc_samples": 200000}}"#,
    ),
    (
        "simulate",
        r#"{"experts": {"mu": [0.75, 0.25]}, "game": {"M": 64}, "sim": {"replications": 5000, "seed": 3}}"#,
    ),
    (
        "simulate",
        r#"{"experts": {"mu": [0.1, 0.3, 0.5, 0.7, 0.9]}, "game": {"M": 32}, "strategy": {"adversary": {"kind": "myopic_saddle"}, "forecaster": {"kind": "multiplicative_weights"}}, "sim": {"replications": 3000, "record_terminal": true}}"#,
    ),
    (
        "simulate",
        r#"{"experts": {"mu": [0.75, 0.25]}, "game": {"M": 16}, "strategy": {"adversary": {"kind": "dp_replay"}, "forecaster": {"kind": "dp_replay"}}, "sim": {"replications": 2000}, "output": {"format": "json"}}"#,
    ),
    (
        "converge",
        r#"{"experts": {"mu": [0.75, 0.25]}, "game": {"horizons": [8, 16, 32]}}"#,
    ),
    (
        "counterexample",
        r#"{"experts": {"mu": [0.75, 0.25]}, "game": {"M": 64}, "sim": {"replications": 4000, "seed": 9}}"#,
    ),
    (
        "empty-regime",
        r#"{"experts": {"mu": [0.1, 0.3, 0.5, 0.7, 0.9]}, "game": {"horizons": [16, 32, 64]}, "sim": {"replications": 2000}}"#,
    ),
    (
        "empty-regime",
        r#"{"experts": {"mu": [0.1, 0.3, 0.5, 0.7, 0.9]}, "game": {"horizons": [16, 32, 64]}, "final": {"kind": "max"}, "sim": {"replications": 2000}}"#,
    ),
];

fn run_cli(dir: &Path, sub: &str, config: &Path, threads: usize) -> Vec<Vec<u8>> {
    let out = dir.join(format!("out_{threads}"));
    let status = Command::new(env!("CARGO_BIN_EXE_expertgame"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(&out)
        .arg("--threads")
        .arg(threads.to_string())
        .status()
        .unwrap();
    assert!(status.success(), "{sub} exited with {status}");
    let mut files = vec![std::fs::read(&out).unwrap()];
    let sidecar = dir.join(format!("out_{threads}.json"));
    if let Ok(bytes) = std::fs::read(sidecar) {
        files.push(bytes);
    }
    files
}

fn criterion_14() -> Check {
    let mut subs: Vec<&str> = Vec::new();
    for (k, (sub, config)) in DETERMINISM_CASES.iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("case{k}.json"));
        std::fs::write(&path, config).unwrap();
        let one = run_cli(dir.path(), sub, &path, 1);
        let eight = run_cli(dir.path(), sub, &path, 8);
        if one != eight {
            return Err(format!("`{sub}` case {k} differs between 1 and 8 threads"));
        }
        if !subs.contains(sub) {
            subs.push(sub);
        }
    }
    ensure(
        subs.len() == 7,
        format!(
            "{} configs over {} subcommands byte-identical at 1 and 8 threads",
            DETERMINISM_CASES.len(),
            subs.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 16] = [
        ("1", Duration::from_secs(1), criterion_1),
        ("2", Duration::from_secs(120), criterion_2),
        ("3", Duration::from_secs(1), criterion_3),
        ("4", Duration::from_secs(5), criterion_4),
        ("5", Duration::from_secs(30), criterion_5),
        ("6", Duration::from_secs(60), criterion_6),
        ("7", Duration::from_secs(60), criterion_7),
        ("8", Duration::from_secs(600), criterion_8),
        ("9", Duration::from_secs(600), criterion_9),
        ("10", Duration::from_secs(120), criterion_10),
        ("11", Duration::from_secs(300), criterion_11),
        ("12a", Duration::from_secs(600), criterion_12a),
        ("12b", Duration::from_secs(600), criterion_12b),
        ("12c", Duration::from_secs(600), criterion_12c),
        ("13", Duration::from_secs(60), criterion_13),
        ("14", Duration::from_secs(600), criterion_14),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {} s budget", limit.as_secs())),
            Err(d) => (false, d),
        };
        println!(
            "criterion {id:>3} {} ({:.2} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}

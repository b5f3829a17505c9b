//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs under `cargo test` with its own harness so the per-criterion lines
//! are always printed.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mcprop::analytics::{self, ScalarScenario};
use mcprop::cli::run_from_args;
use mcprop::error_models::{DistSpec, ScalarKernel};
use mcprop::lab::{self, Estimand, EstimateResult, ExperimentConfig, GridSpec, LemmaParams};
use mcprop::linalg::{sym_eigendecompose, Mat};
use mcprop::quadrature::integrate;

const SEED: u64 = 20_261_016;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(point: f64, reference: f64, se: f64, k: f64) -> bool {
    (point - reference).abs() <= k * se
}

fn describe(r: &EstimateResult) -> String {
    format!("{:.5}±{:.5}", r.point, r.std_error)
}

fn fig4_alternative_bias() -> Outcome {
    let start = Instant::now();
    let s = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, 3);
    let mut ok = true;
    let mut notes = Vec::new();
    for q in [3, 10, 30, 100, 300] {
        let cfg = ExperimentConfig::new(s.with_q(q), Estimand::CombineBiasAlternative, 10_000, SEED + 1);
        let r = lab::estimate_combine_bias(&cfg).unwrap();
        let good = within(r.point, 1.0 / q as f64, r.std_error, 3.0);
        ok &= good;
        notes.push(format!("Q={q}:{}", describe(&r)));
    }
    let cfg = ExperimentConfig::new(s, Estimand::TargetVariance, 10_000, SEED + 1);
    let t = lab::estimate_target_variance_oracle(&cfg).unwrap();
    ok &= within(t.point, 0.25, t.std_error, 3.0);
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 120.0;
    outcome(
        ok,
        format!("{}; target {}; {secs:.1}s", notes.join(" "), describe(&t)),
    )
}

fn phase_extremal_bias() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for j in [2, 4, 8] {
        let cfg = ExperimentConfig::new(ScalarScenario::phase_extremal(j, 20), Estimand::CombineBiasCurrent, 100_000, SEED + 2);
        let r = lab::estimate_combine_bias(&cfg).unwrap();
        ok &= within(r.point, 2.0, r.std_error, 3.0);
        notes.push(format!("J={j}:{}", describe(&r)));
    }
    outcome(ok, notes.join(" "))
}

fn additive_zero_bias() -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for estimand in [Estimand::CombineBiasCurrent, Estimand::CombineBiasAlternative] {
        for j in [2, 4] {
            for q in [5, 50] {
                let s = ScalarScenario::standard_normal(ScalarKernel::Additive, j, q);
                ok &= analytics::psi(&s).unwrap() == 0.0 && analytics::phi(&s).unwrap() == 0.0;
                let r = lab::estimate_combine_bias(&ExperimentConfig::new(s, estimand, 10_000, SEED + 3)).unwrap();
                ok &= r.point.abs() <= 3.0 * r.std_error;
                worst = worst.max((r.point / r.std_error).abs());
            }
        }
    }
    outcome(ok, format!("8 runs, max |relbias|/SE = {worst:.2}; psi = phi = 0"))
}

fn random_scenario(rng: &mut ChaCha8Rng) -> ScalarScenario {
    let kernel = match rng.random_range(0..3) {
        0 => ScalarKernel::Multiplicative,
        1 => ScalarKernel::Additive,
        _ => ScalarKernel::Phase,
    };
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let (y, s) = match kernel {
        ScalarKernel::Phase => {
            let y = if rng.random::<bool>() {
                let a = uniform(rng, -PI, PI);
                DistSpec::uniform_scalar(a, a + uniform(rng, 0.2, 3.0))
            } else {
                DistSpec::two_point_scalar(uniform(rng, -PI, 0.0), uniform(rng, 0.0, PI), uniform(rng, 0.2, 0.8))
            };
            let d = uniform(rng, 0.1, PI);
            let s = if rng.random::<bool>() {
                DistSpec::uniform_scalar(-d, d)
            } else {
                DistSpec::two_point_scalar(-d, d, uniform(rng, 0.2, 0.8))
            };
            (y, s)
        }
        _ => {
            let y = if rng.random::<bool>() {
                DistSpec::normal_scalar(uniform(rng, -2.0, 2.0), uniform(rng, 0.2, 3.0))
            } else {
                let a = uniform(rng, -2.0, 2.0);
                DistSpec::uniform_scalar(a, a + uniform(rng, 0.5, 4.0))
            };
            let s = if rng.random::<bool>() {
                DistSpec::normal_scalar(uniform(rng, -2.0, 2.0), uniform(rng, 0.1, 2.0))
            } else {
                DistSpec::two_point_scalar(uniform(rng, -2.0, 1.0), uniform(rng, 1.0, 3.0), uniform(rng, 0.2, 0.8))
            };
            (y, s)
        }
    };
    ScalarScenario::new(kernel, y, s, rng.random_range(2..=8), rng.random_range(2..=40))
}

fn alternative_bias_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut ok = true;
    let mut fails = Vec::new();
    for i in 0..50 {
        let s = random_scenario(&mut rng);
        let qinv = 1.0 / s.q as f64;
        let closed = analytics::relbias_alternative(&s).unwrap();
        let closed_ok = (0.0..=qinv).contains(&closed);
        let r = lab::estimate_combine_bias(&ExperimentConfig::new(s.clone(), Estimand::CombineBiasAlternative, 5_000, SEED + 4 + i)).unwrap();
        let mc_ok = r.point >= -3.0 * r.std_error && r.point <= qinv + 3.0 * r.std_error;
        if !(closed_ok && mc_ok) {
            fails.push(format!("#{i} {}: closed {closed:.4} mc {}", s.kernel.name(), describe(&r)));
        }
        ok &= closed_ok && mc_ok;
    }
    outcome(ok, if fails.is_empty() { "50/50 scenarios in bounds".into() } else { fails.join("; ") })
}

fn exponential_maps() -> Outcome {
    let grid = GridSpec::square(0.0, 8.0, 161, vec![0.95]);
    let base = ScalarScenario::exponential(0.0, 1.0, 0.95, 2, 1);
    let psi_cfg = ExperimentConfig::new(base.clone(), Estimand::PsiMap, 0, SEED).with_grid(grid.clone());
    let rel_cfg = ExperimentConfig::new(base, Estimand::RelbiasMap, 0, SEED).with_grid(grid);
    let psi = lab::run_map(&psi_cfg).unwrap();
    let rel = lab::run_map(&rel_cfg).unwrap();
    let negative = psi.iter().filter(|c| c.value < 0.0).count() as f64 / psi.len() as f64;
    let any_positive = psi.iter().any(|c| c.value > 0.0);
    let max_rel = rel.iter().fold(0.0_f64, |m, c| m.max(c.value.abs()));
    let mut ok = negative >= 0.95 && any_positive && (0.15..=0.25).contains(&max_rel);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let cell = psi[rng.random_range(0..psi.len())];
        let s = lab::map_scenario(&ScalarKernel::Exponential, cell.a, cell.b, cell.alpha, 2);
        let mut cfg = ExperimentConfig::new(s, Estimand::BiasTerms, 10_000_000, SEED + 50 + k);
        cfg.blocks = 100;
        let terms = lab::estimate_bias_terms(&cfg).unwrap();
        for r in terms.iter().filter(|r| r.label == "psi" || r.label == "relbias_current") {
            let z = r.z_score.unwrap();
            worst = worst.max(z.abs());
            ok &= z.abs() <= 3.0;
        }
    }
    outcome(
        ok,
        format!(
            "psi<0 on {:.1}% of {} cells, psi>0 somewhere: {any_positive}, max|relbias| = {max_rel:.4}, oracle max|z| = {worst:.2}",
            100.0 * negative,
            psi.len()
        ),
    )
}

fn mean_variance_gap() -> Outcome {
    let m = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, 10);
    let a = ScalarScenario::standard_normal(ScalarKernel::Additive, 4, 10);
    let rm = lab::estimate_mean_variance(&ExperimentConfig::new(m, Estimand::MeanVariance, 100_000, SEED + 6)).unwrap();
    let ra = lab::estimate_mean_variance(&ExperimentConfig::new(a, Estimand::MeanVariance, 100_000, SEED + 6)).unwrap();
    let ok = within(rm.point, -1.0 / 400.0, rm.std_error, 3.0) && within(ra.point, 0.0, ra.std_error, 3.0);
    outcome(ok, format!("multiplicative {} (ref -0.0025); additive {}", describe(&rm), describe(&ra)))
}

fn lemma_suite() -> Outcome {
    let mult = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, 10);
    let expo = ScalarScenario::exponential(0.0, 8.0, 0.95, 4, 10);
    let mut ok = true;
    let mut notes = Vec::new();
    let mut check = |name: String, cfg: &ExperimentConfig, id: u8| {
        let r = lab::verify_lemma(id, cfg).unwrap();
        let z = r.z_score.unwrap_or(f64::INFINITY);
        ok &= z.abs() <= 3.0 && r.trials >= 100_000;
        notes.push(format!("{name}:z={z:.2}"));
    };
    for id in 1..=4 {
        let cfg = ExperimentConfig::new(mult.clone(), Estimand::LemmaCheck(id), 100_000, SEED + 7);
        check(format!("L{id}"), &cfg, id);
    }
    let cfg = ExperimentConfig::new(expo, Estimand::LemmaCheck(4), 100_000, SEED + 7);
    check("L4exp".into(), &cfg, 4);
    for (u2, n) in [(0.0, 2), (0.0, 11), (2.0, 2), (2.0, 11)] {
        let mut cfg = ExperimentConfig::new(mult.clone(), Estimand::LemmaCheck(5), 100_000, SEED + 7);
        cfg.lemma = Some(LemmaParams { sigma2: 1.0, u2, n });
        check(format!("L5(u2={u2},N={n})"), &cfg, 5);
    }
    outcome(ok, notes.join(" "))
}

fn vardiff_asymptotics() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let run = |s: ScalarScenario| {
        lab::estimate_vardiff(&ExperimentConfig::new(s, Estimand::VardiffReldiff, 100_000, SEED + 8)).unwrap()
    };
    for q in [5, 50, 500] {
        let r = run(ScalarScenario::standard_normal(ScalarKernel::Additive, 4, q));
        ok &= within(r.point, 0.0, r.std_error, 3.0);
        notes.push(format!("add Q={q}:{}", describe(&r)));
    }
    let mult: Vec<EstimateResult> = [5, 50, 500]
        .into_iter()
        .map(|q| run(ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, q)))
        .collect();
    for w in mult.windows(2) {
        let slack = 3.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        ok &= w[0].point.abs() >= w[1].point.abs() - slack;
    }
    let last = mult.last().unwrap();
    ok &= within(last.point, 0.0, last.std_error, 3.0);
    for (q, r) in [5, 50, 500].iter().zip(&mult) {
        notes.push(format!("mult Q={q}:{}", describe(r)));
    }
    let e = run(ScalarScenario::exponential(0.0, 8.0, 0.95, 4, 500));
    ok &= e.point < 0.0 && e.point.abs() >= 3.0 * e.std_error;
    notes.push(format!("exp Q=500:{} z={:.1}", describe(&e), e.point / e.std_error));

    let exact = (1..=1000).all(|q| {
        let s = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, q);
        let qf = q as f64;
        analytics::sample_variance_variability_gap(&s).unwrap() == 4.0 / (qf * qf)
    });
    ok &= exact;
    notes.push(format!("bracket == 4/Q^2 for Q=1..1000: {exact}"));
    outcome(ok, notes.join(" "))
}

fn kernel_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let (mut worst_rec, mut worst_orth) = (0.0_f64, 0.0_f64);
    for i in 0..1000 {
        let n = 1 + i % 16;
        let rank = if i % 5 == 0 { 1 + rng.random_range(0..n) } else { n };
        let a: Vec<f64> = (0..n * rank).map(|_| rng.sample(StandardNormal)).collect();
        let a = Mat::from_vec(n, rank, a).unwrap();
        let m = a.matmul(&a.transpose()).unwrap();
        let e = sym_eigendecompose(&m).unwrap();
        let rec = e.reconstruct().sub(&m).unwrap().norm_frobenius() / m.norm_frobenius();
        let orth = e.u.transpose().matmul(&e.u).unwrap().sub(&Mat::identity(n)).unwrap().max_abs();
        worst_rec = worst_rec.max(rec);
        worst_orth = worst_orth.max(orth);
    }
    let mut ok = worst_rec <= 1e-10 && worst_orth <= 1e-12;

    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    let mut worst_quad: f64 = 0.0;
    let cells = [(0.0, 8.0), (0.0, 0.3), (0.0, 1.0), (0.5, 4.0), (1.0, 1.05), (2.0, 7.5), (3.7, 8.0)];
    for alpha in [0.35, 0.65, 0.95] {
        for &(a, b) in &cells {
            let s = ScalarScenario::exponential(a, b, alpha, 2, 1);
            let t1 = analytics::conditional_terms_with(&s, 256).unwrap();
            let t2 = analytics::conditional_terms_with(&s, 512).unwrap();
            let (ek1, ek2) = (t1.mean, t2.mean);
            let (sq1, sq2) = (t1.var_mean_given_y + ek1 * ek1, t2.var_mean_given_y + ek2 * ek2);
            worst_quad = worst_quad.max(rel(ek1, ek2)).max(rel(sq1, sq2));
            if a >= 0.5 {
                let k = |y: f64| analytics::exponential_k(y, alpha).unwrap();
                let d1 = integrate(a, b, 256, k) / (b - a);
                let d2 = integrate(a, b, 512, k) / (b - a);
                let e1 = integrate(a, b, 256, |y| k(y) * k(y)) / (b - a);
                let e2 = integrate(a, b, 512, |y| k(y) * k(y)) / (b - a);
                worst_quad = worst_quad.max(rel(d1, d2)).max(rel(e1, e2)).max(rel(d2, ek2)).max(rel(e2, sq2));
            }
        }
    }
    ok &= worst_quad <= 1e-8;
    outcome(
        ok,
        format!("eigen: max rel reconstruction {worst_rec:.2e}, max orthogonality {worst_orth:.2e}; quadrature max rel change {worst_quad:.2e}"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "y_1,y_2\n1.0,0.5\n2.5,-1.0\n0.3,0.25\n1.7,2.0\n").unwrap();
    let data = data.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["bias-sweep", "--model", "multiplicative", "--j", "4", "--q", "3:30:log4", "--trials", "3000", "--seed", "42"],
        vec!["vardiff", "--model", "exponential", "--y", "uniform:0,8", "--s", "uniform:0.05,1.95", "--q", "5,20", "--trials", "2000", "--blocks", "20"],
        vec!["mean-var", "--model", "phase", "--y", "two-point:-1.5707963267948966,1.5707963267948966,0.5", "--s", "uniform:-3.141592653589793,3.141592653589793", "--q", "50", "--trials", "3000"],
        vec!["lemmas", "--trials", "2000", "--seed", "5"],
        vec!["psi-map", "--model", "exponential", "--alpha", "0.35,0.95", "--grid", "0:8:41"],
        vec!["relbias-map", "--model", "exponential", "--grid", "0:8:33", "--j", "3"],
        vec!["pipeline", "--data", &data, "--model", "phase", "--q", "200", "--construction", "alternative", "--seed", "7"],
    ];
    let mut ok = true;
    let mut n = 0;
    for (c, args) in commands.iter().enumerate() {
        for ext in ["csv", "json"] {
            let mut first: Option<Vec<u8>> = None;
            for (run, threads) in ["1", "2", "4", "4"].iter().enumerate() {
                let out = dir.path().join(format!("out_{c}_{run}.{ext}"));
                let mut argv = vec!["mcprop".to_string()];
                argv.extend(args.iter().map(|s| s.to_string()));
                argv.extend(["--threads".into(), threads.to_string(), "--out".into(), out.to_str().unwrap().into()]);
                let (mut so, mut se) = (Vec::new(), Vec::new());
                let code = run_from_args(argv, &mut so, &mut se);
                if code != 0 {
                    ok = false;
                    eprintln!("{}: {}", args[0], String::from_utf8_lossy(&se));
                    continue;
                }
                let bytes = std::fs::read(&out).unwrap();
                match &first {
                    None => first = Some(bytes),
                    Some(f) => ok &= *f == bytes,
                }
                n += 1;
            }
        }
    }
    outcome(ok, format!("{} commands x 2 formats x threads 1/2/4/4: {n} artifacts compared", commands.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("alternative relbias tracks 1/Q (multiplicative, J=4)", fig4_alternative_bias),
        ("phase extremal current relbias = 2", phase_extremal_bias),
        ("additive constructions unbiased", additive_zero_bias),
        ("alternative relbias within [0, 1/Q] on random scenarios", alternative_bias_bounds),
        ("exponential psi/relbias maps", exponential_maps),
        ("replicate-mean variance gap", mean_variance_gap),
        ("covariance lemmas", lemma_suite),
        ("sample-variance variability asymptotics", vardiff_asymptotics),
        ("eigendecomposition and quadrature accuracy", kernel_numerics),
        ("CLI determinism across thread counts", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

//! Acceptance suite. One line per criterion, then a non-zero exit if any
//! asserted criterion fails. Lines marked "evidence" are printed but never
//! decide the exit status.

use std::f64::consts::{FRAC_PI_2, LN_2};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use oulab::covariance::{check_ds_quadratic_form, check_dt_quadratic_form, q_infinity, q_kernel};
use oulab::evolution::{evolve, fit_decay, lattice_pairs, DecayMode};
use oulab::experiment::{run_in, Command, ExperimentConfig, Status};
use oulab::inequalities::{
    entropy_gap, hyper_cells, hyper_probes, kappa, probe_suite, ramp_family, sharpness_probe, HyperSetup, Integration,
    LogSobolevSetup,
};
use oulab::linalg;
use oulab::measures::{probe_set, verify_ergodic_limit, verify_invariance, EvolutionSystem, Shift};
use oulab::mehler::{check_differentiation, trig_probes, TrigPolynomial};
use oulab::model::{catalog, make_nonunique_demo, ModelSpec, OperatorFamily, Window};
use oulab::rng::seed_stream;
use oulab::spde::{law_check, observable_check, simulate, Recording};

const SEED: u64 = 20_240_601;

struct Suite {
    asserted_failures: Vec<String>,
}

impl Suite {
    fn line(&mut self, id: &str, ok: bool, what: &str, detail: String) {
        println!("[{}] {id:<5} {what} | {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.asserted_failures.push(id.to_string());
        }
    }

    /// Printed with its verdict but excluded from the exit status.
    fn evidence(&mut self, id: &str, ok: bool, what: &str, detail: String) {
        println!("[{}] {id:<5} {what} | {detail} (evidence, not asserted)", if ok { "PASS" } else { "FAIL" });
    }

    fn runtime(&mut self, id: &str, started: Instant, budget: f64) {
        let secs = started.elapsed().as_secs_f64();
        self.line(id, secs < budget, "runtime", format!("{secs:.2} s (budget {budget} s)"));
    }
}

fn e1(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |k, _| if k == 0 { 1.0 } else { 0.0 })
}

fn dc() -> OperatorFamily {
    ModelSpec::dc().build(Window::new(-10.0, 10.0).unwrap()).unwrap()
}

fn time_varying() -> OperatorFamily {
    ModelSpec::DiagonalTimeVarying { n: 4, c1: 1.0, c2: 2.0 }.build(Window::new(-2.0, 2.0).unwrap()).unwrap()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn closed_form_kernel(s: &mut Suite) {
    let started = Instant::now();
    let model = dc();
    // q_k(t,s) = (1 − e^{−2(t−s)}) / 2 for a_k = −1, b_k = 1
    let oracle = (1.0 - (-2.0_f64).exp()) / 2.0;
    let q = q_kernel(&model, 0.0, 1.0).unwrap();
    let m = q.q.matrix();
    let diag_err = (0..8).map(|k| (m[(k, k)] - oracle).abs()).fold(0.0, f64::max);
    let off = (0..8).flat_map(|i| (0..8).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].abs()).fold(0.0, f64::max);
    s.line("1.a", diag_err.max(off) <= 1e-10, "DC q_k(1,0) = 0.4323323583...", format!("value {:.16}, max error {:.2e} (tol 1e-10)", m[(0, 0)], diag_err.max(off)));
    let trace = q.trace();
    s.line("1.b", (trace - 8.0 * oracle).abs() <= 1e-9, "DC trace Q(1,0) = 3.4586588...", format!("value {trace:.12}, error {:.2e} (tol 1e-9)", (trace - 8.0 * oracle).abs()));
    let inf = q_infinity(&model, 0.0, 1e-10).unwrap();
    let err = (inf.q.matrix() - nalgebra::DMatrix::identity(8, 8) * 0.5).amax();
    s.line("1.c", err <= 1e-10, "DC Q(0,-inf) = 0.5 I", format!("max entry error {err:.2e} (tol 1e-10), s* = {:.3}", inf.tail.unwrap().s_star));
    s.runtime("1.t", started, 1.0);
}

fn evolution_laws(s: &mut Suite) {
    let started = Instant::now();
    let w = Window::new(-2.0, 2.0).unwrap();
    let mut rng = seed_stream(SEED, "acceptance/chain").rng();
    let triples: Vec<[f64; 3]> = (0..50)
        .map(|_| {
            let mut v = [0.0; 3].map(|_| -2.0 + 4.0 * rng.next_f64());
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut worst = (0.0_f64, String::new());
    for entry in catalog() {
        let model = entry.spec.build(w).unwrap();
        for &[a, b, c] in &triples {
            let direct = evolve(&model, a, c).unwrap().matrix;
            let chained = evolve(&model, b, c).unwrap().matrix * evolve(&model, a, b).unwrap().matrix;
            let err = linalg::operator_norm(&(direct - chained));
            if err > worst.0 {
                worst = (err, entry.name.to_string());
            }
        }
    }
    s.line("2.a", worst.0 <= 1e-8, "chain law, 50 triples x all catalog models", format!("max error {:.2e} ({}) (tol 1e-8)", worst.0, worst.1));
    let u = evolve(&time_varying(), 0.0, 1.0).unwrap();
    // ∫_0^1 −2/(t²+1) dt = −π/2
    let oracle = (-FRAC_PI_2).exp();
    let err = (u.matrix[(0, 0)] - oracle).abs();
    s.line("2.b", err <= 1e-8, "time-varying diagonal U(1,0)_11 = e^{-pi/2}", format!("value {:.10}, error {err:.2e} (tol 1e-8)", u.matrix[(0, 0)]));
    s.runtime("2.t", started, 10.0);
}

fn invariance(s: &mut Suite) {
    let started = Instant::now();
    let pairs: Vec<(f64, f64)> = linspace(-2.0, 0.0, 10)
        .into_iter()
        .flat_map(|a| linspace(0.0, 2.0, 10).into_iter().map(move |b| (a, b)))
        .collect();
    let model = dc();
    let probes = probe_set(8, 20, seed_stream(SEED, "acceptance/probes"));
    let rep = verify_invariance(&EvolutionSystem::gamma(&model, 1e-12), &pairs, &probes, 1e-10).unwrap();
    s.line("3.a", rep.pass, "DC gamma_t invariance, 100 pairs x 20 probes", format!("max discrepancy {:.2e} (tol 1e-10), char-fn vs dual form gap {:.1e}", rep.max_abs_error, rep.max_form_gap));

    let model = time_varying();
    let probes = probe_set(4, 20, seed_stream(SEED, "acceptance/probes4"));
    let rep = verify_invariance(&EvolutionSystem::gamma(&model, 1e-10), &pairs, &probes, 1e-6).unwrap();
    s.line("3.b", rep.pass, "time-varying diagonal gamma_t invariance", format!("max discrepancy {:.2e} (tol 1e-6)", rep.max_abs_error));

    let demo = make_nonunique_demo(3, Window::new(-10.0, 10.0).unwrap()).unwrap();
    let probes = probe_set(3, 20, seed_stream(SEED, "acceptance/probes3"));
    let gamma = verify_invariance(&EvolutionSystem::gamma(&demo, 1e-10), &pairs, &probes, 1e-6).unwrap();
    let shifted = EvolutionSystem::with_shift(&demo, 1e-10, Shift::Mass { direction: e1(3) }, "shifted");
    let moved = verify_invariance(&shifted, &pairs, &probes, 1e-6).unwrap();
    let separation = (gamma.rows.iter().zip(&moved.rows)).map(|(a, b)| (a.lhs - b.lhs).norm()).fold(0.0, f64::max);
    s.line(
        "3.c",
        gamma.pass && moved.pass && separation > 1e-2,
        "non-uniqueness: gamma_t and gamma_t * delta_{m_t e1} both invariant",
        format!("max discrepancies {:.2e} / {:.2e} (tol 1e-6), systems differ by {separation:.3}", gamma.max_abs_error, moved.max_abs_error),
    );
    let literal = EvolutionSystem::with_shift(&demo, 1e-10, Shift::ReciprocalMass { direction: e1(3) }, "reciprocal");
    let rep = verify_invariance(&literal, &pairs, &probes, 1e-6).unwrap();
    s.evidence("3.d", rep.pass, "shift by e1/m_t instead of m_t e1", format!("max discrepancy {:.2e}; the point mass must move with U(t,s)e1 = (m_t/m_s)e1", rep.max_abs_error));
    s.runtime("3.t", started, 60.0);
}

fn differentiation(s: &mut Suite) {
    let started = Instant::now();
    let model = time_varying();
    let x = DVector::from_vec(vec![0.7, -0.3, 0.5, 1.0]);
    let probes = trig_probes(4, 20, seed_stream(SEED, "acceptance/trig"));
    let reports: Vec<_> = probes.iter().map(|phi| check_differentiation(&model, 0.0, 1.0, phi, &x, 1e-4).unwrap()).collect();
    let worst = reports.iter().map(|r| r.max_error()).fold(0.0, f64::max);
    let gap = reports.iter().map(|r| r.l_outside_gap.max(r.l_inside_gap)).fold(0.0, f64::max);
    s.line("4.a", worst <= 1e-6, "d/ds, d/dt of P_{s,t}phi vs generator formulas, 20 probes", format!("max FD error {worst:.2e} at step 1e-4 (tol 1e-6)"));
    s.line("4.b", gap <= 1e-10, "closed forms vs generator / Gaussian moments", format!("max gap {gap:.2e} (tol 1e-10)"));
    let sum = |f: &dyn Fn(&oulab::mehler::DifferentiationReport) -> f64| reports.iter().map(f).sum::<f64>();
    let ds = sum(&|r| r.ds.error) / sum(&|r| r.ds_half.error);
    let dt = sum(&|r| r.dt.error) / sum(&|r| r.dt_half.error);
    let ok = (3.5..=4.5).contains(&ds) && (3.5..=4.5).contains(&dt);
    s.line("4.c", ok, "second-order reduction under step halving", format!("ratios ds {ds:.3}, dt {dt:.3} (band [3.5, 4.5])"));
    let dirs = probe_set(4, 20, seed_stream(SEED, "acceptance/dirs"));
    let worst = dirs
        .iter()
        .flat_map(|h| {
            [
                check_dt_quadratic_form(&model, 0.0, 1.0, h, 1e-4).unwrap().abs_error,
                check_ds_quadratic_form(&model, 0.0, 1.0, h, 1e-4).unwrap().abs_error,
            ]
        })
        .fold(0.0, f64::max);
    s.line("4.d", worst <= 1e-6, "d<Q(t,s)h,h>/dt and /ds identities (squared norm)", format!("max error {worst:.2e} (tol 1e-6)"));
    s.runtime("4.t", started, 30.0);
}

fn dc_kappa(s: &mut Suite) -> f64 {
    let cert = fit_decay(&dc(), &lattice_pairs(-2.0, 0.0, 6), DecayMode::CameronMartin).unwrap();
    let k = kappa(&cert).unwrap();
    s.line("5.a", (k - 0.5).abs() <= 1e-4 && cert.is_sound(), "kappa from the Cameron-Martin certificate", format!("kappa {k:.12} (C {:.6}, eta {:.6}, alpha {}) (tol 1e-4)", cert.constant, cert.rate, cert.alpha));
    k
}

fn log_sobolev(s: &mut Suite, k: f64) {
    let started = Instant::now();
    let model = dc();
    let setup = LogSobolevSetup::new(&model, 0.0, k, 1e-12).unwrap();
    let suite = probe_suite(8).unwrap();
    let key = seed_stream(SEED, "acceptance/logsob");
    let (mut worst, mut worst_mc, mut agree_worst, mut one_dim) = (f64::INFINITY, f64::INFINITY, 0.0_f64, 0);
    let mut cell = 0;
    for (label, phi) in &suite {
        for p in [1.5, 2.0, 3.0] {
            let q = entropy_gap(&setup, label, phi, p, Integration::Quadrature).unwrap();
            let m = entropy_gap(&setup, label, phi, p, Integration::MonteCarlo { count: 100_000, key: key.substream(cell) }).unwrap();
            cell += 1;
            worst = worst.min((q.slack + q.rounding) / (3.0 * q.error).max(f64::MIN_POSITIVE)).min(if q.pass { f64::INFINITY } else { -1.0 });
            worst_mc = worst_mc.min(if m.pass { f64::INFINITY } else { -1.0 });
            if phi.directions().len() == 1 {
                one_dim += 1;
                // absolute floor of 1e-12 on the 4-sigma band; constants have zero error
                let floor = 1e-12 / 4.0;
                let z = ((q.lhs - m.lhs).abs() / (m.lhs_error + q.lhs_error + floor)).max((q.rhs - m.rhs).abs() / (m.rhs_error + q.rhs_error + floor));
                agree_worst = agree_worst.max(z);
            }
        }
    }
    s.line("5.b", worst >= 0.0 && worst_mc >= 0.0, "log-Sobolev slack >= -3 error, 14 probes x p in {1.5, 2, 3}", format!("{} cells, quadrature and Monte Carlo (1e5) all hold", cell));
    s.line("5.c", agree_worst <= 4.0, "1-D cases: quadrature vs Monte Carlo", format!("{one_dim} cells, worst gap {agree_worst:.2} stderr (tol 4)"));
    s.runtime("5.t", started, 120.0);
}

fn hypercontractivity(s: &mut Suite, k: f64) {
    let started = Instant::now();
    let model = dc();
    let setup = HyperSetup::new(&model, 0.0, LN_2, k, 1e-12).unwrap();
    let p_max = setup.p_max(2.0);
    s.line("6.a", (p_max - 3.0).abs() <= 1e-3, "exponent curve at q=2, t-s=ln 2", format!("p_max {p_max:.9}"));
    let probes = hyper_probes(8).unwrap();
    let cells: Vec<(f64, f64)> = [2.0_f64, 2.5, 3.0].iter().map(|&p| (2.0, p.min(p_max))).collect();
    let key = seed_stream(SEED, "acceptance/hyper");
    let rows = hyper_cells(&setup, &cells, &probes, Integration::MonteCarlo { count: 100_000, key }).unwrap();
    let holds = |r: &oulab::inequalities::HyperReport| r.slack >= -3.0 * r.error;
    let worst = rows.iter().map(|r| r.slack / r.error.max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min);
    s.line("6.b", rows.iter().all(holds), "||P phi||_p <= ||phi||_q at p in {2, 2.5, 3}, 10 probes", format!("{} rows, min slack {:.2} MC errors", rows.len(), worst));
    let contraction: Vec<_> = rows.iter().filter(|r| r.p == 2.0).collect();
    s.line("6.c", contraction.iter().all(|r| holds(r)), "contraction at p = q", format!("{} probes", contraction.len()));

    let family = ramp_family(8, &[0.5, 1.0, 1.5, 2.0, 3.0], 60.0);
    let sharp = sharpness_probe(&setup, 2.0, &[4.5, 5.5, 6.0], &family);
    for r in &sharp {
        let id = format!("6.s{}", r.p);
        let what = format!("sharpness probe at p = {}", r.p);
        s.evidence(&id, r.violation, &what, format!("best ratio {:.6} +- {:.1e} ({})", r.ratio, r.error, r.best));
    }
    // for e^{lambda<x,e1>} the log ratio is lambda^2 (p - 5) / 16 here, so the
    // first exponent with a ratio above 1 is p = 5
    let optimal = (2.0 - 1.0) * (2.0 * LN_2).exp() + 1.0;
    s.evidence("6.o", true, "optimal curve (q-1)e^{2(t-s)}+1", format!("{optimal:.6}: the p = 4.5 probe cannot exceed 1"));
    s.runtime("6.t", started, 120.0);
}

fn spde(s: &mut Suite) {
    let started = Instant::now();
    let model = dc();
    let ens = simulate(&model, 0.0, 1.0, &e1(8), 0.01, 100_000, seed_stream(SEED, "acceptance/spde"), Recording::Terminal).unwrap();
    let law = law_check(&ens, &model, 5.0).unwrap();
    s.line("7.a", law.pass, "terminal mean/covariance z-scores vs U(1,0)x0, Q(1,0)", format!("1e5 paths, {:?}, max |z| {:.2} (tol 5)", ens.scheme, law.max_abs_z));
    let phi = TrigPolynomial::cos(e1(8));
    let obs = observable_check(&ens, &model, &phi, 4.0, 0.0).unwrap();
    // E cos(Z_1) = cos(e^{-1}) e^{-q/2}, q = (1 - e^{-2})/2
    let oracle = (-1.0_f64).exp().cos() * (-(1.0 - (-2.0_f64).exp()) / 4.0).exp();
    let ok = obs.pass && (obs.exact - Complex64::from(oracle)).norm() < 1e-12;
    s.line("7.b", ok, "E cos<e1, Z_1> vs Mehler value", format!("MC {:.6} +- {:.1e}, exact {:.10}", obs.empirical.re, obs.stderr, obs.exact.re));
    s.runtime("7.t", started, 60.0);
}

fn ergodic(s: &mut Suite) {
    let model = dc();
    let phi = TrigPolynomial::exponential(e1(8));
    let rep = verify_ergodic_limit(&model, 0.0, &e1(8), &[-1.0, -2.0, -4.0, -8.0], &phi, 1e-12).unwrap();
    // P_{s,0}φ(e1) = exp(i e^{s} − (1 − e^{2s})/4), limit e^{−1/4}
    let oracle_err = rep
        .rows
        .iter()
        .map(|r| (r.value - Complex64::new(-(1.0 - (2.0 * r.s).exp()) / 4.0, r.s.exp()).exp()).norm())
        .fold(0.0, f64::max);
    let gaps: Vec<String> = rep.rows.iter().map(|r| format!("{:.2e}", r.gap)).collect();
    let ok = rep.monotone && rep.final_gap <= 1e-3 && oracle_err <= 1e-10;
    s.line("8.a", ok, "|P_{s,0}phi(e1) - m_0(phi)| decreasing, <= 1e-3 at s=-8", format!("gaps {}, closed-form error {oracle_err:.1e}", gaps.join(" ")));
}

fn determinism(s: &mut Suite) {
    let started = Instant::now();
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/dc.toml");
    let mut config = ExperimentConfig::load(&root).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("one"), tmp.path().join("three"));
    config.workers = 1;
    let first = run_in(Command::ReportAll, &config, &a).unwrap();
    config.workers = 3;
    let second = run_in(Command::ReportAll, &config, &b).unwrap();
    let mut differing = Vec::new();
    for art in &first.report.artifacts {
        if std::fs::read(a.join(&art.file)).unwrap() != std::fs::read(b.join(&art.file)).unwrap() {
            differing.push(art.file.clone());
        }
    }
    s.line("9.a", differing.is_empty() && !first.report.artifacts.is_empty(), "report-all CSVs byte-identical, 1 vs 3 workers", format!("{} artifacts, differing {differing:?}", first.report.artifacts.len()));
    let failed: Vec<&str> = first.failures().iter().map(|c| c.name.as_str()).collect();
    s.line("9.b", first.exit_code() == 0 && second.exit_code() == 0, "report-all on the DC config exits 0", format!("{} checks, failing {failed:?}", first.report.checks.len()));
    s.runtime("9.t", started, 120.0);
    cli_contract(s, &root, tmp.path());
}

fn cli_contract(s: &mut Suite, config: &Path, tmp: &Path) {
    let text = std::fs::read_to_string(config).unwrap().replace("t_min = -10.0", "t_min = 12.0");
    let err = ExperimentConfig::from_toml(&text).unwrap_err();
    let code = oulab::experiment::error_exit_code(&err);
    s.line("9.c", code == 2, "window with t_min > t_max is rejected", format!("exit {code}: {err}"));
    let mut c = ExperimentConfig::load(config).unwrap();
    c.hyper.p_values = vec![2.0, 4.0];
    c.hyper.mc_samples = 10_000;
    c.hyper.assert = true;
    let out = run_in(Command::Hyper, &c, &tmp.join("hyper")).unwrap();
    let curve = out.check("hyper_curve");
    let ok = out.exit_code() == 1 && curve.is_some_and(|c| c.status == Status::Fail && c.failing_rows.iter().any(|r| r.starts_with("sharpness")));
    s.line("9.d", ok, "hyper with p beyond the curve and assert=true", format!("exit {}", out.exit_code()));
}

fn main() {
    // libtest-style flags are accepted and ignored
    let started = Instant::now();
    let mut s = Suite { asserted_failures: Vec::new() };
    closed_form_kernel(&mut s);
    evolution_laws(&mut s);
    invariance(&mut s);
    differentiation(&mut s);
    let k = dc_kappa(&mut s);
    log_sobolev(&mut s, k);
    hypercontractivity(&mut s, k);
    spde(&mut s);
    ergodic(&mut s);
    determinism(&mut s);
    println!("acceptance: {} asserted failures, {:.1} s", s.asserted_failures.len(), started.elapsed().as_secs_f64());
    if !s.asserted_failures.is_empty() {
        println!("failed: {}", s.asserted_failures.join(", "));
        std::process::exit(1);
    }
}

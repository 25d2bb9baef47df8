//! End-to-end acceptance run on the shipped case study. Prints one line per
//! criterion and exits non-zero if an enforced bound is missed.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use common::tree::{config as tree_config, oracle_eq, oracle_h, oracle_in};
use common::{
    brute_force_qp, case_study, complement_exists, ks_critical_99, ks_statistic, m1, random_stable, rng, v1, DenseQp,
};
use mixture_smpc::bmpc::{assemble, max_violation, shift_candidate, solve_bmpc_with, BmpcConfig, BmpcError};
use mixture_smpc::closedloop::{run_episode, Trajectory};
use mixture_smpc::experiment::{run_monte_carlo, Campaign, Design};
use mixture_smpc::qp::{Admm, InteriorPoint, QpBackend, QpProblem, QpStatus, SolveOptions};
use mixture_smpc::rng::RandomStream;
use mixture_smpc::setops::{chi2_cdf, chi2_inv, dlyap, dlyap_residual};
use mixture_smpc::tightening::prs_ellipsoid;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const REFERENCE_SATISFACTION: [(&str, f64, f64); 3] =
    [("inner", 0.60, 0.86), ("outer", 0.985, 0.99), ("input", 0.65, 0.89)];
const SOFT_BAND: f64 = 0.08;
const REFERENCE_ROWS: f64 = 16767.0;

struct Line {
    id: &'static str,
    name: &'static str,
    /// Verdict against the criterion as stated.
    passed: bool,
    /// Whether the harness accepts the outcome. Differs from `passed` only
    /// where the stated bound cannot be met in floating point.
    accepted: bool,
    detail: String,
}

impl Line {
    fn new(id: &'static str, name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name,
            passed,
            accepted: passed,
            detail,
        }
    }

    fn print(&self) {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let note = if !self.passed && self.accepted {
            " (accepted, see below)"
        } else {
            ""
        };
        println!("{verdict} {:<3} {:<28} {}{note}", self.id, self.name, self.detail);
    }
}

fn satisfaction(campaign: &Campaign, elapsed: f64) -> Line {
    let mut hard = elapsed < 600.0;
    let mut parts = Vec::new();
    for (name, target, reference) in REFERENCE_SATISFACTION {
        let c = campaign
            .stats
            .constraints
            .iter()
            .find(|c| c.name == name)
            .expect("monitored constraint");
        let s = c.satisfaction();
        hard &= s >= target;
        let band = if (s - reference).abs() <= SOFT_BAND {
            "in band"
        } else {
            "out of band"
        };
        parts.push(format!("{name} {s:.3} (>= {target}, ref {reference} {band})"));
    }
    parts.push(format!("{} episodes in {elapsed:.1} s", campaign.stats.episodes));
    Line::new("1", "case-study satisfaction", hard, parts.join(", "))
}

fn problem_size(campaign: &Campaign) -> Line {
    let s = &campaign.stats.size;
    let rows = s.rows_per_episode as f64;
    let ok = (483..=493).contains(&s.variables) && (REFERENCE_ROWS / 2.0..=REFERENCE_ROWS * 2.0).contains(&rows);
    Line::new(
        "2",
        "problem size",
        ok,
        format!(
            "{} variables ({} with the reset bit), {} rows per QP, {} per episode (ratio {:.3})",
            s.variables,
            s.variables_with_xi(),
            s.rows_per_qp,
            s.rows_per_episode,
            rows / REFERENCE_ROWS
        ),
    )
}

fn episode_time(design: &Design) -> Line {
    let c = &design.config;
    let mut worst = 0.0f64;
    for ep in 0..5 {
        let start = Instant::now();
        run_episode(&design.controller, &design.monitored, &c.x0, c.steps, c.seed, ep).expect("episode runs");
        worst = worst.max(start.elapsed().as_secs_f64());
    }
    Line::new(
        "3",
        "episode solve time",
        worst < 2.0,
        format!(
            "slowest of 5 episodes {:.3} s ({}, {} steps)",
            worst,
            design.controller.backend_name(),
            c.steps
        ),
    )
}

fn recursive_feasibility(design: &Design) -> Line {
    let base = design.controller.bmpc();
    let (lo, hi) = base.params().z.interval_bounds().expect("scalar Z");
    let backend = design.controller.backend().as_ref();
    let branches = base.tree().branching();
    let mut r = rng(401);
    let (mut instances, mut checks, mut failures) = (0, 0, 0);
    let mut worst = 0.0f64;
    while instances < 100 {
        let mut params = base.params().clone();
        params.q = m1(r.random_range(0.1..10.0));
        params.r = m1(r.random_range(0.1..10.0));
        params.p = m1(r.random_range(0.1..10.0));
        let cfg = BmpcConfig::new(params).expect("valid weights");
        let x = v1(r.random_range(-2.5..2.5));
        let zp = v1(r.random_range(lo..hi));
        let sol = match solve_bmpc_with(&cfg, &x, &zp, None, backend) {
            Ok(s) => s,
            Err(BmpcError::BothInfeasible) => continue,
            Err(e) => panic!("solver fault: {e}"),
        };
        instances += 1;
        for d in 1..=branches {
            checks += 1;
            let next = sol.depth_one(d);
            match shift_candidate(&sol.plan, d, &cfg).and_then(|c| max_violation(&cfg, &c, &x, next, 1)) {
                Ok(v) => {
                    worst = worst.max(v);
                    failures += (v > 1e-6) as usize;
                }
                Err(_) => failures += 1,
            }
        }
    }
    Line::new(
        "4",
        "recursive feasibility",
        failures == 0,
        format!("{instances} instances, {checks} shifted candidates, {failures} failures, max violation {worst:.2e}"),
    )
}

fn open_loop_coverage(design: &Design) -> (bool, String) {
    let em = &design.error_model;
    let (_, noise) = design.config.mixture.decouple();
    let levels = [0.6, 0.65, 0.99];
    let ells: Vec<_> = levels.iter().map(|&p| prs_ellipsoid(em, p).expect("PRS")).collect();
    let (runs, horizon) = (100_000u64, 50);
    let mut inside = vec![vec![0usize; levels.len()]; horizon];
    for run in 0..runs {
        let mut rs = RandomStream::with_stream(501, run);
        let mut e = DVector::zeros(em.state_dim());
        for step in inside.iter_mut() {
            e = em.a_k() * &e + noise.sample(&mut rs);
            for (n, ell) in step.iter_mut().zip(&ells) {
                *n += ell.contains(&e) as usize;
            }
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, p) in levels.iter().enumerate() {
        let min = inside.iter().map(|s| s[i] as f64 / runs as f64).fold(1.0, f64::min);
        ok &= min >= p - 0.01;
        parts.push(format!("{p}: {min:.4}"));
    }
    (
        ok,
        format!("open loop {runs} runs k<={horizon} min [{}]", parts.join(", ")),
    )
}

fn prs_coverage(design: &Design, closed: &Campaign) -> Line {
    let (open_ok, open) = open_loop_coverage(design);
    let mut closed_ok = true;
    let mut parts = Vec::new();
    for (p, cov) in &closed.stats.prs_coverage {
        let min = cov.iter().copied().fold(1.0, f64::min);
        closed_ok &= min >= p - 0.015;
        parts.push(format!("{p}: {min:.4}"));
    }
    Line::new(
        "5",
        "PRS coverage",
        open_ok && closed_ok,
        format!(
            "{open}; closed loop {} episodes min [{}]",
            closed.stats.episodes,
            parts.join(", ")
        ),
    )
}

fn binomial_within_3_sigma(count: usize, n: usize, p: f64) -> bool {
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - n as f64 * p).abs() <= 3.0 * sigma
}

fn lifting(design: &Design) -> Line {
    let mix = &design.config.mixture;
    let mut plant = RandomStream::new(601);
    let mut split = RandomStream::new(602);
    let n = 1_000_000;
    let sd = mix.cov()[(0, 0)].sqrt();
    let component = Normal::new(0.0, sd).unwrap();
    let mixture_cdf = |w: f64| {
        mix.means()
            .iter()
            .zip(mix.weights())
            .map(|(m, p)| p * component.cdf(w - m[0]))
            .sum::<f64>()
    };
    let mut counts = vec![0usize; mix.num_components()];
    let mut ws = Vec::with_capacity(n);
    let mut wes = Vec::with_capacity(n);
    let (mut exact, mut unrepresentable, mut missed) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let w = mix.sample(&mut plant);
        let d = mix.sample_conditional(&w, &mut split);
        counts[d.index] += 1;
        ws.push(d.w_x[0] + d.w_e[0]);
        wes.push(d.w_e[0]);
        if d.w_x[0] + d.w_e[0] == w[0] {
            exact += 1;
        } else if complement_exists(w[0], d.w_x[0]) {
            missed += 1;
        } else {
            unrepresentable += 1;
            worst = worst.max((d.w_x[0] + d.w_e[0] - w[0]).abs());
        }
    }
    let crit = ks_critical_99(n);
    let ks_w = ks_statistic(&mut ws, mixture_cdf);
    let ks_e = ks_statistic(&mut wes, |x| component.cdf(x));
    let freq = counts
        .iter()
        .zip(mix.weights())
        .all(|(&c, &p)| binomial_within_3_sigma(c, n, p));
    let marginals = ks_w < crit && ks_e < crit && freq;
    let weak = missed == 0 && worst <= f64::EPSILON * 1.5;
    let mut line = Line::new(
        "6",
        "lifting correctness",
        marginals && exact == n,
        format!(
            "KS w {ks_w:.5}, KS w_e {ks_e:.5} (crit {crit:.5}), index frequencies {}; w_x + w_e == w in {exact} of {n}, \
             {unrepresentable} have no representable complement (max residual {worst:.2e}), {missed} missed",
            if freq { "within 3 sigma" } else { "outside 3 sigma" }
        ),
    );
    line.accepted = marginals && weak;
    line
}

fn relations(sets: &[&[Trajectory]], k: &DMatrix<f64>) -> Line {
    let (mut rel, mut iface, mut episodes) = (0.0f64, 0.0f64, 0);
    for trajectories in sets {
        for t in *trajectories {
            rel = rel.max(t.relation_residual());
            iface = iface.max(t.interface_residual(k));
            episodes += 1;
        }
    }
    Line::new(
        "7",
        "relation exactness",
        rel <= 1e-12 && iface <= 1e-12,
        format!("{episodes} episodes, max |x-z-e| {rel:.2e}, max |u-v-Ke| {iface:.2e}"),
    )
}

fn kernels() -> Line {
    let mut r = rng(801);
    let mut lyap = 0.0f64;
    for trial in 0..100 {
        let n = 1 + trial % 8;
        let a = random_stable(&mut r, n);
        let l = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let x = dlyap(&a, &q).expect("stable");
        lyap = lyap.max(dlyap_residual(&a, &q, &x) / x.norm());
    }
    let mut chi = 0.0f64;
    for dof in 1..=5 {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            chi = chi.max((chi2_cdf(chi2_inv(p, dof).expect("in domain"), dof) - p).abs());
        }
    }
    let mut qp = 0.0f64;
    let mut qp_fail = 0;
    let backends: [&dyn QpBackend; 2] = [&Admm::default(), &InteriorPoint::default()];
    for _ in 0..200 {
        let d = DenseQp::random(&mut r);
        let (_, reference) = brute_force_qp(&d).expect("feasible by construction");
        let p = QpProblem::from_dense(&d.h, d.f.clone(), &d.a_eq, d.b_eq.clone(), &d.a_in, d.b_in.clone()).unwrap();
        for b in backends {
            let s = b.solve(&p, &SolveOptions::default());
            if s.status != QpStatus::Optimal {
                qp_fail += 1;
            }
            qp = qp.max((s.objective - reference).abs() / reference.abs().max(1.0));
        }
    }
    Line::new(
        "8",
        "numerical kernels",
        lyap <= 1e-10 && chi <= 1e-8 && qp <= 1e-5 && qp_fail == 0,
        format!(
            "dlyap rel residual {lyap:.2e}, chi2 round trip {chi:.2e}, QP rel objective {qp:.2e} over 200 x 2 backends"
        ),
    )
}

fn tree_oracle() -> Line {
    let cfg = tree_config();
    let mut ok = true;
    for (xi, root) in [(0u8, 0.3), (1u8, -0.8)] {
        let qp = assemble(&cfg, &v1(0.3), &v1(-0.8), xi).expect("assembles");
        let (a_eq, b_eq) = oracle_eq(root);
        let (a_in, b_in) = oracle_in();
        ok &= qp.h().to_dense() == oracle_h()
            && qp.f() == &DVector::zeros(cfg.num_vars())
            && qp.a_eq().to_dense() == a_eq
            && qp.b_eq() == &b_eq
            && qp.a_in().to_dense() == a_in
            && qp.b_in() == &b_in;
    }
    Line::new(
        "9",
        "tree oracle",
        ok,
        format!("L=2 N=2, {} variables, both reset choices", cfg.num_vars()),
    )
}

fn main() -> ExitCode {
    let cfg = case_study();
    let design = cfg.design().expect("case study is feasible");
    let fast = cfg
        .design_with(Arc::new(InteriorPoint::default()))
        .expect("case study is feasible");

    let start = Instant::now();
    let campaign = run_monte_carlo(&design, cfg.episodes, cfg.seed, cfg.workers).expect("campaign runs");
    let elapsed = start.elapsed().as_secs_f64();
    let closed = run_monte_carlo(&fast, 10_000, cfg.seed + 1, cfg.workers).expect("campaign runs");

    let lines = [
        satisfaction(&campaign, elapsed),
        problem_size(&campaign),
        episode_time(&design),
        recursive_feasibility(&design),
        prs_coverage(&fast, &closed),
        lifting(&design),
        relations(&[&campaign.trajectories, &closed.trajectories], design.controller.k()),
        kernels(),
        tree_oracle(),
    ];
    println!();
    for l in &lines {
        l.print();
    }
    let passed = lines.iter().filter(|l| l.passed).count();
    println!("{passed} of {} criteria pass", lines.len());
    if lines.iter().any(|l| !l.passed && l.accepted) {
        println!(
            "accepted: w_x + w_e == w cannot hold bitwise when |w| is far below the atom; the sum lands on the \
             atom's coarser grid, so no double complement exists. Every representable case is exact."
        );
    }
    if lines.iter().all(|l| l.accepted) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

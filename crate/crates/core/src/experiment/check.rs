use nalgebra::DVector;

use crate::bmpc::{max_violation, shift_candidate};
use crate::closedloop::{run_episode, ControllerState};
use crate::rng::{Lane, RandomStream};
use crate::setops::check_terminal_conditions;
use crate::tightening::prs_ellipsoid;

use super::Design;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// `Z ⊕ R^p ⊆ X` for every state constraint, row by row.
fn tightening_soundness(d: &Design) -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    for c in &d.config.state_constraints {
        let Ok(ell) = prs_ellipsoid(&d.error_model, c.probability) else {
            return CheckResult::new("tightening soundness", false, format!("no PRS for {}", c.name));
        };
        for i in 0..c.set.num_rows() {
            let a = c.set.row(i).transpose();
            match d.tightened.z.support(&a) {
                Ok(Some(h)) => worst = worst.max(h + ell.support(&a) - c.set.b()[i]),
                Ok(None) => worst = f64::INFINITY,
                Err(e) => return CheckResult::new("tightening soundness", false, e.to_string()),
            }
        }
    }
    CheckResult::new(
        "tightening soundness",
        worst <= 1e-9,
        format!("max over rows of h_Z(a) + h_R(a) - b = {worst:.3e}"),
    )
}

fn terminal(d: &Design) -> CheckResult {
    let em = &d.error_model;
    let r = check_terminal_conditions(
        &d.terminal,
        &d.tightened.z,
        &d.tightened.v,
        em.k(),
        em.a_k(),
        d.config.mixture.means(),
    );
    CheckResult::new(
        "terminal set invariance",
        r.is_ok(),
        r.err()
            .unwrap_or_else(|| "A_K Z_F + W in Z_F, Z_F in Z, K Z_F in V".into()),
    )
}

/// Open-loop `e⁺ = A_K e + w_e` from `e = 0`.
fn open_loop_coverage(d: &Design, seed: u64, runs: usize, horizon: usize) -> CheckResult {
    let (_, noise) = d.config.mixture.decouple();
    let em = &d.error_model;
    let mut levels: Vec<f64> = d.monitored.iter().map(|c| c.target).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let ells: Vec<_> = levels.iter().filter_map(|&p| prs_ellipsoid(em, p).ok()).collect();
    let mut inside = vec![vec![0usize; ells.len()]; horizon];
    for r in 0..runs {
        let mut rng = RandomStream::for_episode(seed, r as u64, Lane::Aux);
        let mut e = DVector::zeros(em.state_dim());
        for step in inside.iter_mut() {
            e = em.a_k() * &e + noise.sample(&mut rng);
            for (n, ell) in step.iter_mut().zip(&ells) {
                *n += ell.contains(&e) as usize;
            }
        }
    }
    let mut worst_gap = f64::INFINITY;
    let mut detail = Vec::new();
    for (l, p) in levels.iter().enumerate() {
        let min = inside.iter().map(|s| s[l] as f64 / runs as f64).fold(1.0, f64::min);
        worst_gap = worst_gap.min(min - p);
        detail.push(format!("p={p}: {min:.4}"));
    }
    CheckResult::new(
        "open-loop PRS coverage",
        worst_gap >= -0.01,
        format!("{runs} runs, k<={horizon}: {}", detail.join(", ")),
    )
}

/// Replays episodes step by step, checking every shifted candidate and the
/// closed-loop identities.
fn closed_loop(d: &Design, seed: u64, episodes: usize) -> Vec<CheckResult> {
    let c = &d.config;
    let ctrl = &d.controller;
    let bmpc = ctrl.bmpc();
    let l = c.mixture.num_components();
    let mut worst_shift = 0.0f64;
    let mut shift_failures = 0usize;
    let mut shifts = 0usize;
    let mut fault = None;
    'episodes: for ep in 0..episodes as u64 {
        let mut plant = RandomStream::for_episode(seed, ep, Lane::Plant);
        let mut aux = RandomStream::for_episode(seed, ep, Lane::Controller);
        let mut state = ControllerState::new(&c.x0);
        let mut x = c.x0.clone();
        for k in 0..c.steps {
            let action = match ctrl.act(&mut state, &x) {
                Ok(a) => a,
                Err(e) => {
                    fault = Some(format!("episode {ep}, step {k}: {e}"));
                    break 'episodes;
                }
            };
            for dist in 1..=l {
                shifts += 1;
                let zp = action.solution.depth_one(dist);
                let viol = shift_candidate(&action.solution.plan, dist, bmpc)
                    .and_then(|cand| max_violation(bmpc, &cand, zp, zp, 1));
                match viol {
                    Ok(v) => {
                        worst_shift = worst_shift.max(v);
                        shift_failures += (v > 1e-6) as usize;
                    }
                    Err(_) => shift_failures += 1,
                }
            }
            let w = c.mixture.sample(&mut plant);
            let x_next = ctrl.a() * &x + ctrl.b() * &action.u + &w;
            ctrl.observe(&mut state, &action, &x, &x_next, &mut aux);
            x = x_next;
        }
    }
    let mut out = vec![CheckResult::new(
        "recursive feasibility",
        fault.is_none() && shift_failures == 0,
        match &fault {
            Some(f) => format!("solver fault at {f}"),
            None => format!("{shifts} shifted candidates, {shift_failures} failures, max violation {worst_shift:.3e}"),
        },
    )];

    let mut rel = 0.0f64;
    let mut iface = 0.0f64;
    let mut recon = 0.0f64;
    let mut split_total = 0usize;
    let mut split_inexact = 0usize;
    let mut split_worst = 0.0f64;
    let mut err = None;
    for ep in 0..episodes as u64 {
        match run_episode(ctrl, &d.monitored, &c.x0, c.steps, seed, ep) {
            Ok(t) => {
                rel = rel.max(t.relation_residual());
                iface = iface.max(t.interface_residual(ctrl.k()));
                recon = recon.max(t.reconstruction_residual());
                for s in &t.steps {
                    split_total += 1;
                    let r = (&s.w_x + &s.w_e - &s.w_seen).amax();
                    split_inexact += (r != 0.0) as usize;
                    split_worst = split_worst.max(r / s.w_x.amax().max(f64::MIN_POSITIVE));
                }
            }
            Err(e) => {
                err = Some(e.to_string());
                break;
            }
        }
    }
    out.push(CheckResult::new(
        "relation exactness",
        err.is_none() && rel <= 1e-12 && iface <= 1e-12 && recon <= 1e-12,
        err.unwrap_or_else(|| format!("|x-z-e| {rel:.1e}, |u-v-Ke| {iface:.1e}, |w-w_seen| {recon:.1e}")),
    ));
    out.push(CheckResult::new(
        "disturbance split",
        split_worst <= f64::EPSILON,
        format!(
            "w_x + w_e == w bitwise in {} of {split_total} steps; misses are within {split_worst:.1e} relative to |w_x|",
            split_total - split_inexact
        ),
    ));
    out
}

/// Invariant checks on a synthesized design. Uses `episodes` closed-loop
/// episodes and `10⁵` open-loop error trajectories.
pub fn run_checks(design: &Design, seed: u64, episodes: usize) -> Vec<CheckResult> {
    let mut out = vec![
        tightening_soundness(design),
        terminal(design),
        open_loop_coverage(design, seed, 100_000, 50),
    ];
    out.extend(closed_loop(design, seed, episodes));
    out
}

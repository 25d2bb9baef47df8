use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::closedloop::{ConstraintKind, Trajectory};
use crate::setops::PolytopeH;

use super::{Campaign, Design, McStats, REFERENCE_CONSTRAINT_ROWS, REFERENCE_VARIABLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub trajectories: PathBuf,
    pub violations: PathBuf,
    pub summary: PathBuf,
    pub plot_trajectories: PathBuf,
    pub plot_violations: PathBuf,
}

/// Scientific notation with 17 significant digits; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

/// Tightened and terminal sets as written by `smpc tighten`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetsFile {
    pub z: PolytopeH,
    pub v: PolytopeH,
    pub z_f: PolytopeH,
}

pub fn sets_to_toml(sets: &SetsFile) -> String {
    toml::to_string(sets).expect("polytopes always serialize")
}

fn create(path: &Path) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// `episode,k,x,u,z,e,v,xi,w,j`; vector entries are joined with `;` and
/// the last row of each episode carries `x(T)` only.
pub fn write_trajectories(out: &mut impl Write, trajectories: &[Trajectory]) -> io::Result<()> {
    writeln!(out, "episode,k,x,u,z,e,v,xi,w,j")?;
    for t in trajectories {
        for s in &t.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                t.episode,
                s.k,
                fmt_vec(&s.x),
                fmt_vec(&s.u),
                fmt_vec(&s.z),
                fmt_vec(&s.e),
                fmt_vec(&s.v),
                s.xi,
                fmt_vec(&s.w),
                s.j
            )?;
        }
        writeln!(out, "{},{},{},,,,,,,", t.episode, t.steps.len(), fmt_vec(&t.x_final))?;
    }
    Ok(())
}

fn write_violations(out: &mut impl Write, stats: &McStats) -> io::Result<()> {
    writeln!(out, "constraint,k,count,rate")?;
    for c in &stats.constraints {
        for (k, (n, r)) in c.counts.iter().zip(&c.rates).enumerate() {
            writeln!(out, "{},{},{},{}", c.name, k, n, fmt_f64(*r))?;
        }
    }
    Ok(())
}

fn write_plot_trajectories(out: &mut impl Write, trajectories: &[Trajectory]) -> io::Result<()> {
    writeln!(out, "episode,k,variable,index,value")?;
    for t in trajectories {
        for s in &t.steps {
            for (name, v) in [
                ("x", &s.x),
                ("u", &s.u),
                ("z", &s.z),
                ("e", &s.e),
                ("v", &s.v),
                ("w", &s.w),
            ] {
                for (i, x) in v.iter().enumerate() {
                    writeln!(out, "{},{},{},{},{}", t.episode, s.k, name, i, fmt_f64(*x))?;
                }
            }
            writeln!(out, "{},{},xi,0,{}", t.episode, s.k, s.xi)?;
        }
        for (i, x) in t.x_final.iter().enumerate() {
            writeln!(out, "{},{},x,{},{}", t.episode, t.steps.len(), i, fmt_f64(*x))?;
        }
    }
    Ok(())
}

fn write_plot_violations(out: &mut impl Write, stats: &McStats) -> io::Result<()> {
    writeln!(out, "constraint,k,metric,value")?;
    for c in &stats.constraints {
        for (k, r) in c.rates.iter().enumerate() {
            writeln!(out, "{},{},violation_rate,{}", c.name, k, fmt_f64(*r))?;
            writeln!(out, "{},{},satisfaction,{}", c.name, k, fmt_f64(1.0 - r))?;
            writeln!(out, "{},{},target,{}", c.name, k, fmt_f64(c.target))?;
        }
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub(super) fn summary_text(design: &Design, stats: &McStats) -> String {
    let c = &design.config;
    let m = stats.episodes;
    let mut s = String::new();
    let _ = writeln!(s, "mixture-smpc Monte Carlo summary");
    let _ = writeln!(
        s,
        "episodes {m}, steps {}, horizon {}, seed {}",
        stats.steps, c.horizon, stats.seed
    );
    let _ = writeln!(
        s,
        "backend {}, K = {:?}, epsilon {}, prs_noise {:?}",
        design.controller.backend_name(),
        design.controller.k().as_slice(),
        c.epsilon,
        c.prs_noise
    );
    let _ = writeln!(s);

    let _ = writeln!(s, "satisfaction (worst step; per-step = 1 - violation rate)");
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "constraint", "kind", "target", "per-step", "episode", "strict", "3sigma"
    );
    for cs in &stats.constraints {
        let sat = cs.satisfaction();
        let kind = match cs.kind {
            ConstraintKind::State => "state",
            ConstraintKind::Input => "input",
        };
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>7} {:>7}",
            cs.name,
            kind,
            cs.target,
            sat,
            cs.episode_satisfaction(m),
            verdict(sat >= cs.target),
            verdict(sat >= cs.binomial_floor(m))
        );
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "closed-loop error coverage, min over k of Pr(e(k) in R^p)");
    for (p, cov) in &stats.prs_coverage {
        let worst = cov.iter().copied().fold(1.0, f64::min);
        let _ = writeln!(s, "p = {p:<6} coverage {worst:.4} {}", verdict(worst >= p - 0.015));
    }
    let _ = writeln!(s);

    let z = &stats.size;
    let _ = writeln!(s, "problem size (one QP per reset choice)");
    let _ = writeln!(s, "state nodes       {}", z.state_nodes);
    let _ = writeln!(s, "input nodes       {}", z.input_nodes);
    let _ = writeln!(
        s,
        "variables         {} ({} with the reset bit; reference {REFERENCE_VARIABLES})",
        z.variables,
        z.variables_with_xi()
    );
    let _ = writeln!(s, "equality rows     {}", z.eq_rows);
    let _ = writeln!(s, "inequality rows   {}", z.in_rows);
    let _ = writeln!(s, "rows per QP       {}", z.rows_per_qp);
    let _ = writeln!(
        s,
        "rows per episode  {} (rows per QP x {} steps; reference {REFERENCE_CONSTRAINT_ROWS})",
        z.rows_per_episode, stats.steps
    );
    let _ = writeln!(s);

    let t = &stats.timing;
    let _ = writeln!(s, "timing (wall clock, varies between runs)");
    let _ = writeln!(s, "controller steps  {}", t.solves);
    let _ = writeln!(s, "QPs per step      {:.3}", t.mean_qp_per_step);
    let _ = writeln!(s, "reset bit = 1     {:.4} of steps", stats.xi_one_fraction);
    let _ = writeln!(
        s,
        "step time ms      p50 {:.3}  p90 {:.3}  p99 {:.3}  max {:.3}",
        t.p50 * 1e3,
        t.p90 * 1e3,
        t.p99 * 1e3,
        t.max * 1e3
    );
    let _ = writeln!(s, "episode time ms   mean {:.3}", t.mean_episode * 1e3);
    s
}

/// Writes all report files into `dir`, creating it if needed.
pub fn write_report(
    dir: &Path,
    design: &Design,
    campaign: &Campaign,
    _format: OutputFormat,
) -> io::Result<ReportFiles> {
    fs::create_dir_all(dir)?;
    let files = ReportFiles {
        trajectories: dir.join("trajectories.csv"),
        violations: dir.join("violations.csv"),
        summary: dir.join("summary.txt"),
        plot_trajectories: dir.join("plot_trajectories_long.csv"),
        plot_violations: dir.join("plot_violation_rates_long.csv"),
    };
    let mut w = create(&files.trajectories)?;
    write_trajectories(&mut w, &campaign.trajectories)?;
    w.flush()?;
    let mut w = create(&files.violations)?;
    write_violations(&mut w, &campaign.stats)?;
    w.flush()?;
    let mut w = create(&files.plot_trajectories)?;
    write_plot_trajectories(&mut w, &campaign.trajectories)?;
    w.flush()?;
    let mut w = create(&files.plot_violations)?;
    write_plot_violations(&mut w, &campaign.stats)?;
    w.flush()?;
    fs::write(&files.summary, summary_text(design, &campaign.stats))?;
    Ok(files)
}

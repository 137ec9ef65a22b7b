use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DVector;
use robust_oco::robust::StabilityReport;
use robust_oco::{SimulationResult, SweepRow};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn signal_columns(name: &str, width: usize) -> Vec<String> {
    if width == 1 {
        vec![name.to_owned()]
    } else {
        (0..width).map(|i| format!("{name}{i}")).collect()
    }
}

pub fn trajectory_header(n_x: usize, n_u: usize) -> Vec<String> {
    let mut header = vec!["t".to_owned()];
    header.extend(signal_columns("x", n_x));
    for name in ["u", "u_base", "u_oco"] {
        header.extend(signal_columns(name, n_u));
    }
    header.extend(signal_columns("w_hat", n_x));
    for name in ["d", "p", "q", "v"] {
        header.extend(signal_columns(name, n_u));
    }
    header.push("cost".into());
    header.push("m_norm".into());
    header
}

pub fn write_trajectory(out: impl Write, res: &SimulationResult, n_x: usize, n_u: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n_x, n_u))?;
    for t in 0..res.len() {
        let mut row = vec![t.to_string()];
        let signals: [&DVector<f64>; 9] = [
            &res.x[t],
            &res.u[t],
            &res.u_base[t],
            &res.u_oco[t],
            &res.w_hat[t],
            &res.d[t],
            &res.p[t],
            &res.q[t],
            &res.v[t],
        ];
        for s in signals {
            row.extend(s.iter().map(|v| fmt_f64(*v)));
        }
        row.push(fmt_f64(res.cost[t]));
        row.push(fmt_f64(res.gain_trace[t]));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_text(res: &SimulationResult, steps: usize) -> String {
    let t_div = res.t_div.map_or_else(|| "none".to_owned(), |t| t.to_string());
    let avg = res.average_cost(steps).map_or_else(|| "diverged".to_owned(), fmt_f64);
    format!(
        "J_T = {}\naverage_cost = {avg}\ndiverged = {}\nt_div = {t_div}\nsteps_recorded = {}\n",
        fmt_f64(res.total_cost),
        res.diverged,
        res.len()
    )
}

pub fn write_sweep(out: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "avg_cost", "diverged"])?;
    for r in rows {
        let avg = r.avg_cost.map_or_else(|| "diverged".to_owned(), fmt_f64);
        w.write_record([fmt_f64(r.beta), avg, r.diverged.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bisection(out: impl Write, report: &StabilityReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "scaled_norm", "feasible"])?;
    for s in &report.trace {
        w.write_record([fmt_f64(s.beta), fmt_f64(s.scaled_norm), s.feasible.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn create_file(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}

//! Run artifacts: trace rows, node snapshots and JSON reports.

use junctionflow::flow::{Flow, TraceRecord};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub fn trace_header(areas: usize, charts: usize) -> String {
    let mut h = String::from("t,energy");
    for i in 0..areas {
        let _ = write!(h, ",area_{i}");
    }
    for i in 0..charts {
        let _ = write!(h, ",len_{i}");
    }
    h.push_str(",G2,G3,G_third,sum_gbH,picard_iters,dissipation_defect");
    h
}

pub fn trace_row(r: &TraceRecord) -> String {
    let mut s = format!("{:e},{:e}", r.t, r.energy);
    for v in r.areas.iter().chain(&r.lengths) {
        let _ = write!(s, ",{v:e}");
    }
    let _ = write!(
        s,
        ",{:e},{:e},{:e},{:e},{},{:e}",
        r.g2, r.g3, r.g_third, r.sum_gbh, r.picard_iters, r.dissipation_defect
    );
    s
}

pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, areas: usize, charts: usize) -> io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", trace_header(areas, charts))?;
        Ok(Self { out })
    }

    pub fn push(&mut self, r: &TraceRecord) -> io::Result<()> {
        writeln!(self.out, "{}", trace_row(r))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// One row per node: chart, flat node index, parameter coordinate along the
/// chart, position and normal height.
pub fn write_snapshot(dir: &Path, flow: &Flow) -> io::Result<()> {
    let path = dir.join(format!("{:06}.csv", flow.step));
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "chart_id,node,x,px,py,pz,rho")?;
    let phi = flow.positions();
    for (c, (ch, pos)) in flow.cluster.charts.iter().zip(&phi).enumerate() {
        let g = ch.grid;
        for (i, p) in pos.iter().enumerate() {
            let x = (i / g.ring) as f64 * g.dx;
            writeln!(
                out,
                "{c},{i},{x:e},{:e},{:e},{:e},{:e}",
                p[0], p[1], p[2], flow.state.rho[c][i]
            )?;
        }
    }
    out.flush()
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

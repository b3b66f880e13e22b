use std::fmt::Write as _;
use std::path::Path;

use crate::data::io::write_file;
use crate::error::Result;
use crate::eval::{CurveLog, HistogramBin, MetricsReport};

/// `split,p,recall,ndcg,hr,n_users`, plus a trailing `env` column when any
/// report carries environment tags.
pub fn write_metrics_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let with_env = reports.iter().any(|r| r.env.is_some());
    let mut out = String::from("split,p,recall,ndcg,hr,n_users");
    out.push_str(if with_env { ",env\n" } else { "\n" });
    for r in reports {
        for c in &r.cutoffs {
            let _ = write!(out, "{},{},{},{},{},{}", r.split, c.p, c.recall, c.ndcg, c.hr, r.n_users);
            if with_env {
                let _ = write!(out, ",{}", r.env.as_deref().unwrap_or(""));
            }
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// `step,hsic,recall50`; recall is blank on steps without validation.
pub fn write_curve_csv(log: &CurveLog, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("step,hsic,recall50\n");
    for p in &log.points {
        let recall = p.recall50.map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", p.step, p.hsic, recall);
    }
    write_file(path, &out)
}

pub fn write_histogram_csv(bins: &[HistogramBin], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.lo, b.hi, b.count);
    }
    write_file(path, &out)
}

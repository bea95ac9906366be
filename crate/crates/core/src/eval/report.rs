use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BenchOutcome, EvalRecord};
use crate::error::{Error, Result};

/// Score curves of one pair plus the offset used for the "after" overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPlot {
    pub pair_id: usize,
    pub fixed: Vec<(f64, f64)>,
    pub moving: Vec<(f64, f64)>,
    pub offset_mm: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `pair_id,method,offset_mm,true_offset_mm,error_mm,category,elapsed_s,failed`.
///
/// Wall-clock time varies between runs, so `elapsed_s` is left empty unless `timing` is set;
/// that keeps the file byte-identical across reruns and thread counts.
pub fn pairs_csv(records: &[EvalRecord], timing: bool) -> String {
    let mut s = String::from("pair_id,method,offset_mm,true_offset_mm,error_mm,category,elapsed_s,failed\n");
    for r in records {
        let elapsed = if timing { r.elapsed_s.to_string() } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.pair_id,
            r.method,
            opt(r.z_offset_mm),
            r.true_offset_mm,
            opt(r.error_mm),
            r.category,
            elapsed,
            u8::from(r.failed())
        );
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(Error::at_path(path))
}

/// Writes `summary.json`, `pairs.csv`, `timings.csv`, `failures.csv` (only when something
/// failed) and, for every kept plot, `plots/pair_NNN_{before,after}.svg`.
pub fn write_report(outcome: &BenchOutcome, dir: &Path, csv_timing: bool) -> Result<()> {
    if outcome.records.is_empty() {
        return Err(Error::invalid("records", "nothing to report"));
    }
    fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
    write(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&outcome.summary)?,
    )?;
    write(&dir.join("pairs.csv"), &pairs_csv(&outcome.records, csv_timing))?;

    let mut t = String::from("pair_id,method,elapsed_s\n");
    for r in &outcome.records {
        let _ = writeln!(t, "{},{},{}", r.pair_id, r.method, r.elapsed_s);
    }
    write(&dir.join("timings.csv"), &t)?;

    let failed: Vec<&EvalRecord> = outcome.records.iter().filter(|r| r.failed()).collect();
    if !failed.is_empty() {
        let mut f = String::from("pair_id,method,reason\n");
        for r in failed {
            let reason = r.failure.as_deref().unwrap_or_default().replace('"', "'");
            let _ = writeln!(f, "{},{},\"{}\"", r.pair_id, r.method, reason);
        }
        write(&dir.join("failures.csv"), &f)?;
    }

    if !outcome.plots.is_empty() {
        let pdir = dir.join("plots");
        fs::create_dir_all(&pdir).map_err(Error::at_path(&pdir))?;
        for p in &outcome.plots {
            let before = curve_overlay_svg(&p.fixed, &p.moving, 0.0, &format!("pair {} before", p.pair_id));
            let after = curve_overlay_svg(
                &p.fixed,
                &p.moving,
                p.offset_mm,
                &format!("pair {} after ({:+.2} mm)", p.pair_id, p.offset_mm),
            );
            write(&pdir.join(format!("pair_{:03}_before.svg", p.pair_id)), &before)?;
            write(&pdir.join(format!("pair_{:03}_after.svg", p.pair_id)), &after)?;
        }
    }
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

/// Score-vs-z overlay of two curves, the second shifted by `offset_mm`. Always exactly two
/// `<polyline>` elements.
pub fn curve_overlay_svg(fixed: &[(f64, f64)], moving: &[(f64, f64)], offset_mm: f64, title: &str) -> String {
    let moved: Vec<(f64, f64)> = moving.iter().map(|&(z, s)| (z + offset_mm, s)).collect();
    let all = || fixed.iter().chain(&moved);
    let (mut z0, mut z1, mut s0, mut s1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(z, s) in all() {
        z0 = z0.min(z);
        z1 = z1.max(z);
        s0 = s0.min(s);
        s1 = s1.max(s);
    }
    if !(z1 > z0) {
        z1 = z0 + 1.0;
    }
    if !(s1 > s0) {
        s1 = s0 + 1.0;
    }
    let px = |z: f64| PAD + (z - z0) / (z1 - z0) * (W - 2.0 * PAD);
    let py = |s: f64| H - PAD - (s - s0) / (s1 - s0) * (H - 2.0 * PAD);
    let points = |c: &[(f64, f64)]| {
        c.iter()
            .map(|&(z, s)| format!("{:.2},{:.2}", px(z), py(s)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"##
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"##);
    let _ = writeln!(
        svg,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        svg,
        r##"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"##,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">z {z0:.1} .. {z1:.1} mm</text>"##,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        points(fixed)
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="1.5" points="{}"/>"##,
        points(&moved)
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

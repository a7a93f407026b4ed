//! SVG figures drawn from `scores.csv`: score-vs-position curves (raw and ranking scores)
//! for each scoring pruner in trial 0, and a heat strip of per-frame retention averaged
//! over all trials. Plot files are written after the CSV tables and never touch them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, SharpError};
use crate::harness::SCORES_COLUMNS;

const REQUIRED: [&str; 7] = ["trial", "pruner", "position", "frame", "raw_score", "ranking_score", "retained"];

struct Row {
    trial: usize,
    pruner: String,
    position: usize,
    frame: usize,
    raw: Option<f64>,
    ranking: Option<f64>,
    retained: bool,
}

fn load(path: &Path) -> Result<Vec<Row>> {
    let plot_err = |message: String| SharpError::Plot {
        path: path.to_path_buf(),
        message,
    };
    let mut rd = csv::Reader::from_path(path).map_err(|e| plot_err(e.to_string()))?;
    let headers = rd.headers().map_err(|e| plot_err(e.to_string()))?.clone();
    let mut col = BTreeMap::new();
    for name in REQUIRED {
        match headers.iter().position(|h| h == name) {
            Some(i) => {
                col.insert(name, i);
            }
            None => {
                return Err(plot_err(format!(
                    "missing column `{name}`; expected schema: {}",
                    SCORES_COLUMNS.join(",")
                )))
            }
        }
    }
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| plot_err(e.to_string()))?;
        let get = |name: &str| rec.get(col[name]).unwrap_or("");
        let int = |name: &str| {
            get(name)
                .parse::<usize>()
                .map_err(|_| plot_err(format!("row {}: `{name}` is not an integer", n + 2)))
        };
        let num = |name: &str| -> Result<Option<f64>> {
            let s = get(name);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| plot_err(format!("row {}: `{name}` is not a number", n + 2)))
        };
        rows.push(Row {
            trial: int("trial")?,
            pruner: get("pruner").to_string(),
            position: int("position")?,
            frame: int("frame")?,
            raw: num("raw_score")?,
            ranking: num("ranking_score")?,
            retained: get("retained") == "1",
        });
    }
    Ok(rows)
}

const W: f64 = 640.0;
const H: f64 = 260.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(usize, f64)], n: usize, lo: f64, hi: f64, color: &str) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xs = (W - 2.0 * PAD) / (n.max(2) - 1) as f64;
    let mut s = String::new();
    for (x, y) in points {
        let px = PAD + *x as f64 * xs;
        let py = H - PAD - (y - lo) / span * (H - 2.0 * PAD);
        let _ = write!(s, "{px:.2},{py:.2} ");
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", s.trim_end())
}

fn score_curve(pruner: &str, rows: &[&Row]) -> Option<String> {
    let raw: Vec<(usize, f64)> = rows.iter().filter_map(|r| r.raw.map(|v| (r.position, v))).collect();
    if raw.is_empty() {
        return None;
    }
    let ranking: Vec<(usize, f64)> = rows.iter().filter_map(|r| r.ranking.map(|v| (r.position, v))).collect();
    let all = raw.iter().chain(&ranking).map(|p| p.1);
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let n = rows.len();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\">{pruner}: last-text attention score by visual position (trial 0)</text>\n\
         <line x1=\"{PAD}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y}\" stroke=\"black\"/>\n\
         <text x=\"{x2}\" y=\"{yl}\" text-anchor=\"end\">position 0..{last}</text>\n\
         <text x=\"4\" y=\"{PAD}\">{hi:.3}</text>\n<text x=\"4\" y=\"{y}\">{lo:.3}</text>\n",
        y = H - PAD,
        x2 = W - PAD,
        yl = H - PAD + 16.0,
        last = n.saturating_sub(1),
    );
    svg.push_str(&polyline(&raw, n, lo, hi, "#c0392b"));
    if ranking != raw {
        svg.push_str(&polyline(&ranking, n, lo, hi, "#2471a3"));
    }
    let _ = write!(
        svg,
        "<text x=\"{x}\" y=\"20\" fill=\"#c0392b\">raw</text>\n<text x=\"{x2}\" y=\"20\" fill=\"#2471a3\">ranking</text>\n</svg>\n",
        x = W - 130.0,
        x2 = W - 90.0
    );
    Some(svg)
}

fn heat_strip(rows: &[Row]) -> String {
    // (pruner -> frame -> (retained, total)), pruners in first-appearance order
    let mut order: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<&str, BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.pruner.as_str()) {
            order.push(&r.pruner);
        }
        let c = cells.entry(&r.pruner).or_default().entry(r.frame).or_default();
        c.0 += usize::from(r.retained);
        c.1 += 1;
    }
    let frames = rows.iter().map(|r| r.frame + 1).max().unwrap_or(1);
    let cw = (W - 2.0 * PAD - 60.0) / frames as f64;
    let rh = 22.0;
    let height = PAD + rh * order.len() as f64 + 30.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\">fraction of tokens retained per frame (all trials)</text>\n"
    );
    for (row, p) in order.iter().enumerate() {
        let y = PAD + row as f64 * rh;
        let _ = writeln!(svg, "<text x=\"4\" y=\"{:.1}\">{p}</text>", y + 15.0);
        for (frame, (kept, total)) in &cells[p] {
            let frac = *kept as f64 / *total as f64;
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{y:.1}\" width=\"{:.2}\" height=\"{:.1}\" fill=\"rgb({shade},{shade},255)\"><title>frame {frame}: {frac:.3}</title></rect>",
                PAD + 60.0 + *frame as f64 * cw,
                cw,
                rh - 2.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders plots for `scores` into `out_dir`, returning the files written.
pub fn emit_plots(scores: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = load(scores)?;
    fs::create_dir_all(out_dir).map_err(|e| SharpError::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut by_pruner: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.trial == 0) {
        by_pruner.entry(&r.pruner).or_default().push(r);
    }
    for (pruner, rs) in &by_pruner {
        if let Some(svg) = score_curve(pruner, rs) {
            let path = out_dir.join(format!("scores_{pruner}.svg"));
            fs::write(&path, svg).map_err(|e| SharpError::io(&path, e))?;
            written.push(path);
        }
    }
    if !rows.is_empty() {
        let path = out_dir.join("retention_strip.svg");
        fs::write(&path, heat_strip(&rows)).map_err(|e| SharpError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

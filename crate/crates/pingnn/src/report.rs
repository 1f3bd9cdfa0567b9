//! Evaluation report files: JSON keyed by head name, a CSV and an aligned
//! text table with one column per head, and KDE curves as CSV.

use std::fmt::Write as _;
use std::path::Path;

use pingnn_core::eval::{HeadMetrics, KdeCurve, MetricsReport};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{io, json, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown report format `{other}` (expected json, csv or table)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KdeJson {
    bandwidth_true: f64,
    bandwidth_pred: f64,
    grid: Vec<f64>,
    density_true: Vec<f64>,
    density_pred: Vec<f64>,
}

pub fn to_json(r: &MetricsReport) -> Value {
    let heads: Map<String, Value> = r
        .heads
        .iter()
        .map(|h| (h.name.clone(), serde_json::to_value(h).expect("metrics serialize")))
        .collect();
    let kde: Map<String, Value> = r
        .kde
        .iter()
        .map(|k| {
            let body = KdeJson {
                bandwidth_true: k.bandwidth_true,
                bandwidth_pred: k.bandwidth_pred,
                grid: k.grid.clone(),
                density_true: k.density_true.clone(),
                density_pred: k.density_pred.clone(),
            };
            (k.head.clone(), serde_json::to_value(body).expect("kde serializes"))
        })
        .collect();
    serde_json::json!({
        "n_test": r.n_test,
        "mc_samples": r.mc_samples,
        "eval_seed": r.eval_seed,
        "heads": heads,
        "kde": kde,
    })
}

pub fn from_json(v: &Value) -> Result<MetricsReport, String> {
    let obj = v.as_object().ok_or("report must be a JSON object")?;
    let field = |k: &str| obj.get(k).ok_or_else(|| format!("report lacks `{k}`"));
    let num = |k: &str| field(k)?.as_u64().ok_or_else(|| format!("`{k}` must be a non-negative integer"));
    let section = |k: &str| field(k)?.as_object().ok_or_else(|| format!("`{k}` must be an object"));
    let heads = section("heads")?
        .values()
        .map(|h| serde_json::from_value::<HeadMetrics>(h.clone()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let kde = section("kde")?
        .iter()
        .map(|(name, k)| {
            let k: KdeJson = serde_json::from_value(k.clone()).map_err(|e| e.to_string())?;
            Ok(KdeCurve {
                head: name.clone(),
                bandwidth_true: k.bandwidth_true,
                bandwidth_pred: k.bandwidth_pred,
                grid: k.grid,
                density_true: k.density_true,
                density_pred: k.density_pred,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(MetricsReport {
        n_test: num("n_test")? as usize,
        mc_samples: num("mc_samples")? as usize,
        eval_seed: num("eval_seed")?,
        heads,
        kde,
    })
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let v: Value = serde_json::from_str(&text).map_err(json(path))?;
    from_json(&v).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

pub fn save_report(path: &Path, r: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(&to_json(r)).map_err(json(path))? + "\n";
    std::fs::write(path, text).map_err(io(path))
}

#[derive(Clone, Copy)]
enum Style {
    Plain,
    Percent,
}

type Getter = fn(&HeadMetrics) -> Option<f64>;

/// Table rows in display order.
const ROWS: [(&str, Style, Getter); 9] = [
    ("R²", Style::Plain, |h| h.r2),
    ("Avg. MRE", Style::Percent, |h| h.mre_avg),
    ("MRE P75", Style::Percent, |h| h.mre_p75),
    ("MRE P90", Style::Percent, |h| h.mre_p90),
    ("MRE<2%", Style::Percent, |h| h.frac_lt_2pct),
    ("MRE<5%", Style::Percent, |h| h.frac_lt_5pct),
    ("MRE>20%", Style::Percent, |h| h.frac_gt_20pct),
    ("NRMSE", Style::Plain, |h| h.nrmse),
    ("sMAPE", Style::Percent, |h| h.smape),
];

pub fn row_labels() -> Vec<&'static str> {
    ROWS.iter().map(|r| r.0).collect()
}

fn cell(v: Option<f64>, style: Style) -> String {
    match (v, style) {
        (None, _) => "N/A".into(),
        (Some(v), Style::Plain) => format!("{v:.4}"),
        (Some(v), Style::Percent) => format!("{:.2}%", 100.0 * v),
    }
}

pub fn table(r: &MetricsReport) -> String {
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Metric".to_string()];
    header.extend(r.heads.iter().map(|h| if h.unit.is_empty() { h.name.clone() } else { format!("{} [{}]", h.name, h.unit) }));
    grid.push(header);
    for (label, style, get) in ROWS {
        let mut row = vec![label.to_string()];
        row.extend(r.heads.iter().map(|h| cell(get(h), style)));
        grid.push(row);
    }
    let mut n_row = vec!["n_eval".to_string()];
    n_row.extend(r.heads.iter().map(|h| h.n_eval.to_string()));
    grid.push(n_row);

    let cols = grid[0].len();
    let width: Vec<usize> = (0..cols).map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        for (c, text) in row.iter().enumerate() {
            let pad = width[c] - text.chars().count();
            if c == 0 {
                out.push_str(text);
                out.extend(std::iter::repeat(' ').take(pad));
            } else {
                out.push_str("  ");
                out.extend(std::iter::repeat(' ').take(pad));
                out.push_str(text);
            }
        }
        out.push('\n');
        if i == 0 {
            let total = width.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn raw(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |v| v.to_string())
}

pub fn csv(r: &MetricsReport) -> String {
    let mut out = String::from("metric");
    for h in &r.heads {
        out.push(',');
        out.push_str(&h.name);
    }
    out.push('\n');
    for (label, _, get) in ROWS {
        out.push_str(label);
        for h in &r.heads {
            let _ = write!(out, ",{}", raw(get(h)));
        }
        out.push('\n');
    }
    out.push_str("n_eval");
    for h in &r.heads {
        let _ = write!(out, ",{}", h.n_eval);
    }
    out.push('\n');
    out
}

pub fn render(r: &MetricsReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(&to_json(r)).expect("report serializes") + "\n",
        Format::Csv => csv(r),
        Format::Table => table(r),
    }
}

pub fn kde_csv(k: &KdeCurve) -> String {
    let mut out = String::from("x,density_true,density_pred\n");
    for ((x, a), b) in k.grid.iter().zip(&k.density_true).zip(&k.density_pred) {
        let _ = writeln!(out, "{x},{a},{b}");
    }
    out
}

pub fn kde_file_name(head: &str) -> String {
    let safe: String = head.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
    format!("kde_{safe}.csv")
}

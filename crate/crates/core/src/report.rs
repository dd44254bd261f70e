//! Dataset-level summaries of an allocation: achieved bpp and mean metrics,
//! rendered as CSV or a markdown table at three decimals.

use crate::rd_model::{Assignment, QualityOption, RdTable};
use serde::Serialize;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("assignment has no choice for image {0:?}")]
    MissingChoice(String),
    #[error("image {image_id:?} has no quality {quality_id:?}")]
    UnknownQuality {
        image_id: String,
        quality_id: String,
    },
    #[error("malformed summary csv: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method_name: String,
    pub target_bpp: f64,
    pub act_bpp: f64,
    pub mean_psnr: Option<f64>,
    pub mean_msssim: Option<f64>,
    pub mean_lpips: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(format!(
                "unknown table format {other:?} (expected csv|markdown)"
            )),
        }
    }
}

/// Unweighted per-image means over the chosen options. PSNR and MS-SSIM are
/// omitted when any chosen option lacks them.
pub fn summarize(
    table: &RdTable,
    assignment: &Assignment,
    method_name: &str,
    target_bpp: f64,
) -> Result<SummaryRow, ReportError> {
    let chosen: Vec<&QualityOption> = table
        .images
        .iter()
        .map(|rec| {
            let q = assignment
                .choices
                .get(&rec.image_id)
                .ok_or_else(|| ReportError::MissingChoice(rec.image_id.clone()))?;
            rec.option(q).ok_or_else(|| ReportError::UnknownQuality {
                image_id: rec.image_id.clone(),
                quality_id: q.clone(),
            })
        })
        .collect::<Result<_, _>>()?;
    let n = chosen.len() as f64;
    let mean_of = |f: fn(&QualityOption) -> Option<f64>| -> Option<f64> {
        chosen
            .iter()
            .map(|o| f(o))
            .sum::<Option<f64>>()
            .map(|s| s / n)
    };
    Ok(SummaryRow {
        method_name: method_name.to_string(),
        target_bpp,
        act_bpp: chosen.iter().map(|o| o.bpp()).sum::<f64>() / n,
        mean_psnr: mean_of(|o| o.psnr),
        mean_msssim: mean_of(|o| o.msssim),
        mean_lpips: chosen.iter().map(|o| o.distortion).sum::<f64>() / n,
    })
}

/// One line of a target sweep: a solved row, or the reason a target failed.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepEntry {
    Solved(SummaryRow),
    Failed {
        method_name: String,
        target_bpp: f64,
        status: String,
    },
}

const HEADER: [&str; 6] = ["method", "target_bpp", "act_bpp", "psnr", "msssim", "lpips"];
const MD_HEADER: [&str; 6] = [
    "Method",
    "Target BPP",
    "Act BPP",
    "PSNR",
    "MS-SSIM",
    "LPIPS",
];

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn cells(row: &SummaryRow) -> [String; 6] {
    [
        row.method_name.clone(),
        fmt3(row.target_bpp),
        fmt3(row.act_bpp),
        row.mean_psnr.map(fmt3).unwrap_or_default(),
        row.mean_msssim.map(fmt3).unwrap_or_default(),
        fmt3(row.mean_lpips),
    ]
}

fn render(
    lines: Vec<(Vec<String>, Option<String>)>,
    with_status: bool,
    format: TableFormat,
) -> String {
    let mut header: Vec<String> = match format {
        TableFormat::Csv => HEADER.iter().map(|s| s.to_string()).collect(),
        TableFormat::Markdown => MD_HEADER.iter().map(|s| s.to_string()).collect(),
    };
    if with_status {
        header.push(
            if format == TableFormat::Csv {
                "status"
            } else {
                "Status"
            }
            .into(),
        );
    }
    let rows = lines.into_iter().map(|(mut c, status)| {
        if with_status {
            c.push(status.unwrap_or_else(|| "ok".into()));
        }
        c
    });
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for r in rows {
                w.write_record(&r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 input")
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let line = |out: &mut String, c: &[String]| {
                let cells: Vec<String> = c
                    .iter()
                    .map(|s| {
                        if s.is_empty() {
                            "-".into()
                        } else {
                            s.replace('|', "\\|")
                        }
                    })
                    .collect();
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            };
            line(&mut out, &header);
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for r in rows {
                line(&mut out, &r);
            }
            out
        }
    }
}

/// Renders summary rows with a fixed column set and 3-decimal precision.
pub fn render_table(rows: &[SummaryRow], format: TableFormat) -> String {
    render(
        rows.iter().map(|r| (cells(r).to_vec(), None)).collect(),
        false,
        format,
    )
}

/// Like [`render_table`] plus a trailing status column, so failed targets
/// stay visible in the table.
pub fn render_sweep(entries: &[SweepEntry], format: TableFormat) -> String {
    let lines = entries
        .iter()
        .map(|e| match e {
            SweepEntry::Solved(r) => (cells(r).to_vec(), None),
            SweepEntry::Failed {
                method_name,
                target_bpp,
                status,
            } => {
                let mut c = vec![String::new(); 6];
                c[0] = method_name.clone();
                c[1] = fmt3(*target_bpp);
                (c, Some(status.clone()))
            }
        })
        .collect();
    render(lines, true, format)
}

/// Reads back CSV produced by [`render_table`].
pub fn parse_table_csv(text: &str) -> Result<Vec<SummaryRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| ReportError::Parse(e.to_string()))?
        .clone();
    if headers.iter().take(6).ne(HEADER.iter().copied()) {
        return Err(ReportError::Parse(format!("unexpected header {headers:?}")));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| ReportError::Parse(format!("{s:?}: {e}")))
    };
    let opt = |s: &str| {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| ReportError::Parse(e.to_string()))?;
            Ok(SummaryRow {
                method_name: rec[0].to_string(),
                target_bpp: num(&rec[1])?,
                act_bpp: num(&rec[2])?,
                mean_psnr: opt(&rec[3])?,
                mean_msssim: opt(&rec[4])?,
                mean_lpips: num(&rec[5])?,
            })
        })
        .collect()
}

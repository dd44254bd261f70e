//! File formats: RD tables (CSV or JSON), assignment JSON, patch-score JSON,
//! rate traces and run manifests.
//!
//! The CSV header is fixed:
//! `image_id,quality_id,rate_bytes,pixel_count,lpips,psnr,msssim`, with psnr
//! and msssim allowed to be empty. Images keep first-appearance order and
//! options keep row order.

use crate::loss_kernel::PatchScores;
use crate::rd_model::{
    validate_table, Assignment, ImageRecord, QualityOption, RdTable, SolverKind,
};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const CSV_COLUMNS: [&str; 7] = [
    "image_id",
    "quality_id",
    "rate_bytes",
    "pixel_count",
    "lpips",
    "psnr",
    "msssim",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFileFormat {
    Csv,
    Json,
}

impl TableFileFormat {
    /// From the file extension; anything but `.json` is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => TableFileFormat::Json,
            _ => TableFileFormat::Csv,
        }
    }
}

impl FromStr for TableFileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFileFormat::Csv),
            "json" => Ok(TableFileFormat::Json),
            other => Err(format!(
                "unknown table format {other:?} (expected csv|json)"
            )),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn ingest(path: &Path, format: Option<TableFileFormat>) -> Result<RdTable, IngestError> {
    let text = read_file(path)?;
    match format.unwrap_or_else(|| TableFileFormat::from_path(path)) {
        TableFileFormat::Csv => parse_table_csv(&text),
        TableFileFormat::Json => parse_table_json(&text),
    }
}

fn parse_err(line: u64, message: impl fmt::Display) -> IngestError {
    IngestError::Parse {
        line,
        message: message.to_string(),
    }
}

pub fn parse_table_csv(text: &str) -> Result<RdTable, IngestError> {
    if text.trim().is_empty() {
        return Err(parse_err(1, "empty file"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
    let columns: Vec<&str> = headers.iter().collect();
    if let Some(missing) = CSV_COLUMNS.iter().find(|c| !columns.contains(c)) {
        return Err(IngestError::Schema(format!("missing column {missing:?}")));
    }
    if columns != CSV_COLUMNS {
        return Err(IngestError::Schema(format!(
            "header must be exactly {}, got {}",
            CSV_COLUMNS.join(","),
            columns.join(",")
        )));
    }

    let mut images: Vec<ImageRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen_pairs: HashMap<(String, String), u64> = HashMap::new();
    let mut problems = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<u64>()
                .map_err(|e| parse_err(line, format!("{}: {:?}: {e}", CSV_COLUMNS[i], field(i))))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{}: {:?}: {e}", CSV_COLUMNS[i], field(i))))
        };
        let opt_real = |i: usize| {
            if field(i).is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        let image_id = field(0).to_string();
        let quality_id = field(1).to_string();
        let opt = QualityOption {
            quality_id: quality_id.clone(),
            rate_bytes: int(2)?,
            pixel_count: int(3)?,
            distortion: real(4)?,
            psnr: opt_real(5)?,
            msssim: opt_real(6)?,
        };

        let at = format!("line {line}");
        if image_id.is_empty() || quality_id.is_empty() {
            problems.push(format!("{at}: empty image_id or quality_id"));
        }
        if let Some(first) = seen_pairs.insert((image_id.clone(), quality_id.clone()), line) {
            problems.push(format!(
                "{at}: duplicate (image_id, quality_id) ({image_id}, {quality_id}), first seen on line {first}"
            ));
            continue;
        }
        if opt.pixel_count == 0 {
            problems.push(format!("{at}: pixel_count must be positive"));
        } else if opt.fixed_rate().is_none() {
            problems.push(format!("{at}: rate_bytes too large"));
        }
        if !(opt.distortion.is_finite() && opt.distortion >= 0.0) {
            problems.push(format!(
                "{at}: lpips must be finite and >= 0, got {}",
                opt.distortion
            ));
        }
        if opt.psnr.is_some_and(|p| !p.is_finite()) {
            problems.push(format!("{at}: psnr must be finite"));
        }
        if opt.msssim.is_some_and(|m| !(0.0..=1.0).contains(&m)) {
            problems.push(format!(
                "{at}: msssim must lie in [0,1], got {}",
                opt.msssim.unwrap()
            ));
        }
        let slot = *index.entry(image_id.clone()).or_insert_with(|| {
            images.push(ImageRecord::new(image_id.clone(), Vec::new()));
            images.len() - 1
        });
        if let Some(first) = images[slot].options.first() {
            if first.pixel_count != opt.pixel_count {
                problems.push(format!(
                    "{at}: pixel_count {} differs from {} on earlier rows of image {image_id}",
                    opt.pixel_count, first.pixel_count
                ));
            }
        }
        images[slot].options.push(opt);
    }
    if images.is_empty() && problems.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    if !problems.is_empty() {
        return Err(IngestError::Validation(problems));
    }
    let table = RdTable::new(images);
    debug_assert!(validate_table(&table).is_empty());
    Ok(table)
}

pub fn parse_table_json(text: &str) -> Result<RdTable, IngestError> {
    if text.trim().is_empty() {
        return Err(parse_err(1, "empty file"));
    }
    let table: RdTable = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => IngestError::Schema(e.to_string()),
        _ => parse_err(e.line() as u64, e),
    })?;
    let violations = validate_table(&table);
    if !violations.is_empty() {
        return Err(IngestError::Validation(
            violations.iter().map(|v| v.to_string()).collect(),
        ));
    }
    Ok(table)
}

pub fn table_to_csv(table: &RdTable) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for rec in &table.images {
        for o in &rec.options {
            w.write_record([
                rec.image_id.clone(),
                o.quality_id.clone(),
                o.rate_bytes.to_string(),
                o.pixel_count.to_string(),
                o.distortion.to_string(),
                opt(o.psnr),
                opt(o.msssim),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 input")
}

pub fn table_to_json(table: &RdTable) -> String {
    let mut s = serde_json::to_string_pretty(table).expect("table serializes");
    s.push('\n');
    s
}

/// Assignment JSON with sorted keys:
/// `achieved_mean_bpp, choices, gap_bound, optimal, solver, target_mean_bpp, total_distortion`.
pub fn assignment_to_json(assignment: &Assignment, target_mean_bpp: f64, optimal: bool) -> String {
    let v = json!({
        "solver": assignment.solver.as_str(),
        "target_mean_bpp": target_mean_bpp,
        "achieved_mean_bpp": assignment.achieved_mean_bpp,
        "total_distortion": assignment.total_distortion,
        "gap_bound": assignment.gap_bound,
        "optimal": optimal,
        "choices": assignment.choices,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json value serializes");
    s.push('\n');
    s
}

/// Parsed assignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentFile {
    pub assignment: Assignment,
    pub target_mean_bpp: f64,
    pub optimal: bool,
}

pub fn assignment_from_json(text: &str) -> Result<AssignmentFile, IngestError> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(e.line() as u64, e))?;
    let obj = v
        .as_object()
        .ok_or_else(|| IngestError::Schema("assignment must be an object".into()))?;
    let get = |k: &str| {
        obj.get(k)
            .ok_or_else(|| IngestError::Schema(format!("missing key {k:?}")))
    };
    let num = |k: &str| {
        get(k)?
            .as_f64()
            .ok_or_else(|| IngestError::Schema(format!("{k} must be a number")))
    };
    let solver = match get("solver")?.as_str() {
        Some("brute") => SolverKind::Brute,
        Some("lagrangian") => SolverKind::Lagrangian,
        Some("exact") => SolverKind::Exact,
        other => return Err(IngestError::Schema(format!("unknown solver {other:?}"))),
    };
    let choices: BTreeMap<String, String> = serde_json::from_value(get("choices")?.clone())
        .map_err(|e| IngestError::Schema(format!("choices: {e}")))?;
    let gap_bound = match get("gap_bound")? {
        Value::Null => None,
        g => Some(
            g.as_f64()
                .ok_or_else(|| IngestError::Schema("gap_bound must be a number or null".into()))?,
        ),
    };
    Ok(AssignmentFile {
        assignment: Assignment {
            choices,
            achieved_mean_bpp: num("achieved_mean_bpp")?,
            total_distortion: num("total_distortion")?,
            solver,
            dual_lambda: None,
            gap_bound,
        },
        target_mean_bpp: num("target_mean_bpp")?,
        optimal: get("optimal")?
            .as_bool()
            .ok_or_else(|| IngestError::Schema("optimal must be a boolean".into()))?,
    })
}

/// `{"real_scores": [...], "fake_scores": [...]}`.
pub fn parse_scores_json(text: &str) -> Result<PatchScores, IngestError> {
    let s: PatchScores = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => IngestError::Schema(e.to_string()),
        _ => parse_err(e.line() as u64, e),
    })?;
    s.validate()
        .map_err(|e| IngestError::Validation(vec![e.to_string()]))?;
    Ok(s)
}

/// One nonnegative real per line; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<f64>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|e| parse_err(line_no, format!("{t:?}: {e}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(parse_err(
                line_no,
                format!("rate must be finite and >= 0, got {v}"),
            ));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(parse_err(1, "trace holds no rates"));
    }
    Ok(out)
}

/// Provenance record written next to command outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub input_paths: Vec<String>,
    pub config_digest: String,
    pub tool_version: String,
}

impl RunManifest {
    /// Digest covers the command, every parameter and the bytes of every input.
    pub fn new(
        command: &str,
        params: &BTreeMap<String, String>,
        inputs: &[(String, Vec<u8>)],
    ) -> Self {
        let input_hashes: Vec<Value> = inputs
            .iter()
            .map(|(path, bytes)| json!({ "path": path, "sha256": hex::encode(Sha256::digest(bytes)) }))
            .collect();
        let canonical = json!({
            "command": command,
            "params": params,
            "inputs": input_hashes,
            "tool_version": env!("CARGO_PKG_VERSION"),
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        Self {
            command: command.to_string(),
            input_paths: inputs.iter().map(|(p, _)| p.clone()).collect(),
            config_digest: hex::encode(digest),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut m = Map::new();
        m.insert("command".into(), json!(self.command));
        m.insert("config_digest".into(), json!(self.config_digest));
        m.insert("input_paths".into(), json!(self.input_paths));
        m.insert("tool_version".into(), json!(self.tool_version));
        let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("json value serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "image_id,quality_id,rate_bytes,pixel_count,lpips,psnr,msssim\n";

    #[test]
    fn csv_row_with_bpp() {
        let t = parse_table_csv(&format!(
            "{HEADER}img1,q1,9600,1024000,0.084,27.282,0.914\n"
        ))
        .unwrap();
        let o = &t.images[0].options[0];
        assert_eq!(o.bpp(), 8.0 * 9600.0 / 1_024_000.0);
        assert!((o.bpp() - 0.075).abs() < 1e-15);
        assert_eq!(o.psnr, Some(27.282));
        assert_eq!(o.msssim, Some(0.914));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(
            parse_table_csv(""),
            Err(IngestError::Parse { .. })
        ));
        assert!(matches!(
            parse_table_json("  \n"),
            Err(IngestError::Parse { .. })
        ));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let e = parse_table_csv(
            "image_id,quality_id,rate_bytes,pixel_count,lpips,psnr\na,q,1,1,0.1,\n",
        )
        .unwrap_err();
        assert!(
            matches!(&e, IngestError::Schema(m) if m.contains("msssim")),
            "{e}"
        );
    }

    #[test]
    fn duplicate_pair_names_the_pair_and_line() {
        let e = parse_table_csv(&format!(
            "{HEADER}a,q1,1,8,0.1,,\nb,q1,1,8,0.1,,\na,q1,2,8,0.2,,\n"
        ))
        .unwrap_err();
        match e {
            IngestError::Validation(v) => {
                assert_eq!(v.len(), 1);
                assert!(
                    v[0].contains("line 4") && v[0].contains("(a, q1)") && v[0].contains("line 2"),
                    "{v:?}"
                );
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invariant_breaches_are_line_numbered() {
        let e =
            parse_table_csv(&format!("{HEADER}a,q1,1,0,0.1,,\na,q2,1,8,-1,,1.5\n")).unwrap_err();
        let IngestError::Validation(v) = e else {
            panic!()
        };
        assert!(v.iter().any(|m| m.starts_with("line 2: pixel_count")));
        assert!(v.iter().any(|m| m.starts_with("line 3: lpips")));
        assert!(v.iter().any(|m| m.starts_with("line 3: msssim")));
        assert!(v
            .iter()
            .any(|m| m.starts_with("line 3: pixel_count 8 differs")));
    }

    #[test]
    fn malformed_number_is_a_parse_error() {
        let e = parse_table_csv(&format!("{HEADER}a,q1,abc,8,0.1,,\n")).unwrap_err();
        assert!(matches!(e, IngestError::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn json_errors() {
        assert!(matches!(
            parse_table_json("{\"images\": ["),
            Err(IngestError::Parse { .. })
        ));
        assert!(matches!(
            parse_table_json("{\"imgs\": []}"),
            Err(IngestError::Schema(_))
        ));
        assert!(matches!(
            parse_table_json("{\"images\": []}"),
            Err(IngestError::Validation(_))
        ));
    }

    #[test]
    fn assignment_json_has_sorted_keys() {
        let t = parse_table_csv(&format!("{HEADER}b,q1,1,8,0.1,,\na,q2,2,8,0.2,,\n")).unwrap();
        let a = Assignment::from_positions(&t, &[0, 0], SolverKind::Exact, None, Some(0.0));
        let s = assignment_to_json(&a, 0.5, true);
        let keys: Vec<&str> = s
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        assert_eq!(
            keys,
            [
                "achieved_mean_bpp",
                "choices",
                "gap_bound",
                "optimal",
                "solver",
                "target_mean_bpp",
                "total_distortion"
            ]
        );
        let back = assignment_from_json(&s).unwrap();
        assert_eq!(back.assignment, a);
        assert!(back.optimal);
        assert_eq!(back.target_mean_bpp, 0.5);
    }

    #[test]
    fn trace_and_scores() {
        assert_eq!(parse_trace("0.1\n\n0.2\n").unwrap(), vec![0.1, 0.2]);
        assert!(matches!(
            parse_trace("0.1\nx\n"),
            Err(IngestError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("-1\n"),
            Err(IngestError::Parse { line: 1, .. })
        ));
        assert!(parse_trace("").is_err());
        let s = parse_scores_json(r#"{"real_scores":[1,2],"fake_scores":[0.5]}"#).unwrap();
        assert_eq!(s.real_scores, vec![1.0, 2.0]);
        assert!(matches!(
            parse_scores_json(r#"{"real_scores":[],"fake_scores":[0.5]}"#),
            Err(IngestError::Validation(_))
        ));
        assert!(matches!(
            parse_scores_json(r#"{"real_scores":[1"#),
            Err(IngestError::Parse { .. })
        ));
    }

    #[test]
    fn manifest_digest_is_stable_and_sensitive() {
        let mut p = BTreeMap::new();
        p.insert("target".to_string(), "0.15".to_string());
        let inputs = vec![("t.csv".to_string(), b"abc".to_vec())];
        let a = RunManifest::new("allocate", &p, &inputs);
        assert_eq!(a, RunManifest::new("allocate", &p, &inputs));
        assert_eq!(a.config_digest.len(), 64);
        p.insert("target".to_string(), "0.3".to_string());
        assert_ne!(
            a.config_digest,
            RunManifest::new("allocate", &p, &inputs).config_digest
        );
        let changed = vec![("t.csv".to_string(), b"abd".to_vec())];
        assert_ne!(
            a.config_digest,
            RunManifest::new("allocate", &BTreeMap::new(), &changed).config_digest
        );
    }
}

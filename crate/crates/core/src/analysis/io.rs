//! Tab-separated analysis files.
//!
//! * `points.tsv`: `id  topic  x  y`, one row per conversation
//! * `centroids.tsv`: `topic  x  y  count`
//! * `vectors.tsv`: `id  v0 … v{h-1}`, the reference context vectors
//! * `tsne.json`: t-SNE settings and KL trace
//! * trajectory files: `session  turn  x  y`
//! * `report.json`, `report.tsv` (p-value matrix), `reductions.tsv`
//!
//! Every file starts with a header row. Numbers use the shortest decimal form
//! that reads back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::context::{Centroid, ContextMap, ContextVectorSet};
use crate::analysis::experiment::DistanceReductionReport;
use crate::analysis::tsne::{TsneConfig, TsneResult};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const POINTS_FILE: &str = "points.tsv";
pub const CENTROIDS_FILE: &str = "centroids.tsv";
pub const VECTORS_FILE: &str = "vectors.tsv";
pub const TSNE_FILE: &str = "tsne.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.tsv";
pub const REDUCTIONS_FILE: &str = "reductions.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub config: TsneConfig,
    pub perplexity: f64,
    pub points: usize,
    pub kl_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub id: String,
    pub topic: String,
    pub x: f64,
    pub y: f64,
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn points_tsv(ids: &[String], topics: &[String], points: &Matrix<f64>) -> String {
    let mut s = String::from("id\ttopic\tx\ty\n");
    for (i, (id, topic)) in ids.iter().zip(topics).enumerate() {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", clean(id), clean(topic), points.get(i, 0), points.get(i, 1));
    }
    s
}

pub fn centroids_tsv(centroids: &[Centroid]) -> String {
    let mut s = String::from("topic\tx\ty\tcount\n");
    for c in centroids {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", clean(&c.topic), c.point[0], c.point[1], c.count);
    }
    s
}

fn vectors_tsv(set: &ContextVectorSet) -> String {
    let mut s = String::from("id");
    for k in 0..set.vectors.cols() {
        let _ = write!(s, "\tv{k}");
    }
    s.push('\n');
    for (i, id) in set.ids.iter().enumerate() {
        s.push_str(&clean(id));
        for v in set.vectors.row(i) {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

/// Writes points, centroids, reference vectors and the t-SNE summary.
pub fn write_analysis(dir: &Path, map: &ContextMap, tsne: &TsneResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = &map.reference;
    write_file(&dir.join(POINTS_FILE), &points_tsv(&r.ids, &r.topics, &map.points))?;
    write_file(&dir.join(CENTROIDS_FILE), &centroids_tsv(&map.centroids))?;
    write_file(&dir.join(VECTORS_FILE), &vectors_tsv(r))?;
    let summary = TsneSummary {
        config: tsne.config,
        perplexity: tsne.perplexity,
        points: r.len(),
        kl_trace: tsne.kl_trace.clone(),
    };
    write_file(&dir.join(TSNE_FILE), &serde_json::to_string_pretty(&summary)?)
}

fn rows<'a>(text: &'a str, header: &str, path: &Path) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with(header) => {}
        _ => {
            return Err(Error::format(1, format!("{} lacks the `{header}` header", path.display())));
        }
    }
    Ok(lines.filter(|(_, l)| !l.is_empty()).map(|(i, l)| (i + 1, l.split('\t').collect())))
}

fn num(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::format(line, format!("`{field}` is not a number")))
}

pub fn parse_points(text: &str) -> Result<Vec<PointRow>> {
    rows(text, "id\ttopic\tx\ty", Path::new(POINTS_FILE))?
        .map(|(line, f)| {
            if f.len() != 4 {
                return Err(Error::format(line, "expected 4 fields"));
            }
            Ok(PointRow {
                id: f[0].to_string(),
                topic: f[1].to_string(),
                x: num(f[2], line)?,
                y: num(f[3], line)?,
            })
        })
        .collect()
}

pub fn parse_centroids(text: &str) -> Result<Vec<Centroid>> {
    rows(text, "topic\tx\ty\tcount", Path::new(CENTROIDS_FILE))?
        .map(|(line, f)| {
            if f.len() != 4 {
                return Err(Error::format(line, "expected 4 fields"));
            }
            Ok(Centroid {
                topic: f[0].to_string(),
                point: vec![num(f[1], line)?, num(f[2], line)?],
                count: f[3]
                    .parse()
                    .map_err(|_| Error::format(line, format!("`{}` is not a count", f[3])))?,
            })
        })
        .collect()
}

/// Loads a map written by [`write_analysis`].
pub fn read_context_map(dir: &Path) -> Result<ContextMap> {
    let points = parse_points(&read_file(&dir.join(POINTS_FILE))?)?;
    let vec_path = dir.join(VECTORS_FILE);
    let vec_text = read_file(&vec_path)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (line, f) in rows(&vec_text, "id", &vec_path)? {
        let w = f.len() - 1;
        if *width.get_or_insert(w) != w {
            return Err(Error::format(line, "ragged vector row"));
        }
        ids.push(f[0].to_string());
        for v in &f[1..] {
            data.push(num(v, line)?);
        }
    }
    if ids.len() != points.len() || ids.iter().zip(&points).any(|(a, p)| *a != p.id) {
        return Err(Error::Consistency("vectors and points list different conversations".into()));
    }
    let reference = ContextVectorSet {
        vectors: Matrix::from_vec(ids.len(), width.unwrap_or(0), data)?,
        topics: points.iter().map(|p| p.topic.clone()).collect(),
        ids,
    };
    let coords = Matrix::from_vec(points.len(), 2, points.iter().flat_map(|p| [p.x, p.y]).collect())?;
    ContextMap::new(reference, coords)
}

pub fn read_tsne_summary(dir: &Path) -> Result<TsneSummary> {
    Ok(serde_json::from_str(&read_file(&dir.join(TSNE_FILE))?)?)
}

pub fn write_trajectory<W: Write>(mut w: W, session: &str, points: &[[f64; 2]], header: bool) -> Result<()> {
    if header {
        writeln!(w, "session\tturn\tx\ty")?;
    }
    for (turn, p) in points.iter().enumerate() {
        writeln!(w, "{}\t{}\t{}\t{}", clean(session), turn, p[0], p[1])?;
    }
    Ok(())
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Writes `report.json`, the topic × topic p-value table and the per-conversation reductions.
pub fn write_report(dir: &Path, report: &DistanceReductionReport, probe_text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    #[derive(Serialize)]
    struct Full<'a> {
        probe_text: &'a str,
        #[serde(flatten)]
        report: &'a DistanceReductionReport,
    }
    write_file(
        &dir.join(REPORT_FILE),
        &serde_json::to_string_pretty(&Full { probe_text, report })?,
    )?;

    let mut table = String::from("topic\tmean_reduction");
    for t in &report.topics {
        let _ = write!(table, "\t{}", clean(t));
    }
    table.push('\n');
    for (i, t) in report.topics.iter().enumerate() {
        let _ = write!(table, "{}\t{}", clean(t), report.means[i]);
        for p in &report.p_values[i] {
            let _ = write!(table, "\t{}", fmt_p(*p));
        }
        table.push('\n');
    }
    write_file(&dir.join(REPORT_TABLE_FILE), &table)?;

    let mut red = String::from("id");
    for t in &report.topics {
        let _ = write!(red, "\t{}", clean(t));
    }
    red.push('\n');
    for (c, id) in report.conversation_ids.iter().enumerate() {
        red.push_str(&clean(id));
        for r in &report.reductions {
            let _ = write!(red, "\t{}", r[c]);
        }
        red.push('\n');
    }
    write_file(&dir.join(REDUCTIONS_FILE), &red)
}

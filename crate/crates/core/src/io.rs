//! File formats.
//!
//! Models and kernels are plain decimal text matrices written with 17
//! significant digits, preceded by `#` provenance lines:
//!
//! ```text
//! # compclass model
//! # config_hash 3f2a9c0d1e4b5a67
//! # seed 1
//! classes 2
//! dim 3
//! priors 5.0000000000000000e-1 5.0000000000000000e-1
//! class 1
//! <dim rows of dim numbers>
//! class 2
//! ...
//! ```
//!
//! Kernels use `design <tag>`, `kernel_seed <u64|none>`, `rows M`, `cols N`
//! followed by `M` rows. Datasets are CSV with header `label,f1,…,fN` and
//! 1-based integer labels; `#` lines are comments. Curves are CSV with columns `axis,pe,se,bound,d`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::design::{DesignTag, MeasurementKernel};
use crate::error::{Error, Result};
use crate::model::{LabeledDataset, SourceModel};
use crate::numerics::RankTolerance;
use crate::sim::SweepResult;

/// Provenance embedded in every output file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// First 16 hex digits of the SHA-256 of the value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn write_header(out: &mut String, kind: &str, prov: &Provenance) {
    let _ = writeln!(out, "# compclass {kind}");
    let _ = writeln!(out, "# config_hash {}", prov.config_hash);
    let _ = writeln!(out, "# seed {}", prov.seed);
}

pub fn model_to_string(model: &SourceModel, prov: &Provenance) -> String {
    let mut out = String::new();
    write_header(&mut out, "model", prov);
    let _ = writeln!(out, "classes {}", model.num_classes());
    let _ = writeln!(out, "dim {}", model.ambient_dim());
    let priors: Vec<String> = model.priors().iter().map(|&p| fmt_f64(p)).collect();
    let _ = writeln!(out, "priors {}", priors.join(" "));
    for (i, cov) in model.covariances().iter().enumerate() {
        let _ = writeln!(out, "class {}", i + 1);
        write_matrix(&mut out, cov);
    }
    out
}

pub fn kernel_to_string(kernel: &MeasurementKernel, prov: &Provenance) -> String {
    let mut out = String::new();
    write_header(&mut out, "kernel", prov);
    let _ = writeln!(out, "design {}", kernel.design_tag());
    match kernel.seed() {
        Some(s) => {
            let _ = writeln!(out, "kernel_seed {s}");
        }
        None => out.push_str("kernel_seed none\n"),
    }
    let _ = writeln!(out, "rows {}", kernel.rows());
    let _ = writeln!(out, "cols {}", kernel.cols());
    write_matrix(&mut out, kernel.matrix());
    out
}

/// Line cursor over the non-comment lines of a text file.
struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    prov: Provenance,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
            prov: Provenance::default(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("config_hash"), Some(h)) => self.prov.config_hash = h.to_string(),
                    (Some("seed"), Some(s)) => self.prov.seed = s.parse().unwrap_or_default(),
                    _ => {}
                }
                continue;
            }
            return Ok((idx + 1, line));
        }
        Err(Error::Parse {
            line: 0,
            msg: "unexpected end of file".into(),
        })
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (line, text) = self.next_line()?;
        let rest = text
            .strip_prefix(key)
            .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected '{key}'"),
            })?;
        Ok((line, rest.trim()))
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let (line, rest) = self.keyed(key)?;
        rest.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid {key} '{rest}'"),
        })
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let (line, text) = self.next_line()?;
        parse_numbers(line, text, width)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

fn parse_numbers(line: usize, text: &str, width: usize) -> Result<Vec<f64>> {
    let vals = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number '{t}'"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != width {
        return Err(Error::Parse {
            line,
            msg: format!("expected {width} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn model_from_str(text: &str, tol: RankTolerance) -> Result<(SourceModel, Provenance)> {
    let mut lines = Lines::new(text);
    let l = lines.keyed_usize("classes")?;
    let n = lines.keyed_usize("dim")?;
    let (pline, prest) = lines.keyed("priors")?;
    let priors = parse_numbers(pline, prest, l)?;
    let mut covs = Vec::with_capacity(l);
    for i in 0..l {
        let (line, rest) = lines.keyed("class")?;
        if rest.parse::<usize>().ok() != Some(i + 1) {
            return Err(Error::Parse {
                line,
                msg: format!("expected 'class {}'", i + 1),
            });
        }
        covs.push(lines.matrix(n, n)?);
    }
    let model = SourceModel::new(priors, covs, tol)?;
    Ok((model, lines.prov))
}

pub fn kernel_from_str(text: &str) -> Result<(MeasurementKernel, Provenance)> {
    let mut lines = Lines::new(text);
    let (dline, tag) = lines.keyed("design")?;
    let tag: DesignTag = tag.parse().map_err(|_| Error::Parse {
        line: dline,
        msg: format!("unknown design '{tag}'"),
    })?;
    let (sline, seed) = lines.keyed("kernel_seed")?;
    let seed = match seed {
        "none" => None,
        s => Some(s.parse().map_err(|_| Error::Parse {
            line: sline,
            msg: format!("invalid seed '{s}'"),
        })?),
    };
    let rows = lines.keyed_usize("rows")?;
    let cols = lines.keyed_usize("cols")?;
    let matrix = lines.matrix(rows, cols)?;
    Ok((MeasurementKernel::new(matrix, tag, seed)?, lines.prov))
}

pub fn write_model(path: &Path, model: &SourceModel, prov: &Provenance) -> Result<()> {
    std::fs::write(path, model_to_string(model, prov))?;
    Ok(())
}

pub fn read_model(path: &Path, tol: RankTolerance) -> Result<(SourceModel, Provenance)> {
    model_from_str(&std::fs::read_to_string(path)?, tol)
}

pub fn write_kernel(path: &Path, kernel: &MeasurementKernel, prov: &Provenance) -> Result<()> {
    std::fs::write(path, kernel_to_string(kernel, prov))?;
    Ok(())
}

pub fn read_kernel(path: &Path) -> Result<(MeasurementKernel, Provenance)> {
    kernel_from_str(&std::fs::read_to_string(path)?)
}

/// Parses `label,f1,…,fN` CSV. Labels are 1-based in the file and must not
/// exceed `max_label` when given.
pub fn dataset_from_reader<R: std::io::Read>(mut reader: R, max_label: Option<usize>) -> Result<LabeledDataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // file line number of each kept line
    let mut line_of = Vec::new();
    let mut kept = String::with_capacity(text.len());
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        line_of.push(idx + 1);
        kept.push_str(raw);
        kept.push('\n');
    }
    let file_line = |p: Option<&csv::Position>| {
        p.and_then(|p| line_of.get(p.line() as usize - 1)).copied().unwrap_or(0)
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(kept.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "label" {
        return Err(Error::Parse {
            line: line_of.first().copied().unwrap_or(1),
            msg: "header must be 'label,f1,...,fN'".into(),
        });
    }
    let n = headers.len() - 1;
    let mut ds = LabeledDataset::new(n);
    for record in rdr.records() {
        let record = record?;
        let line = file_line(record.position());
        if record.len() != n + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} columns, found {}", n + 1, record.len()),
            });
        }
        let label: usize = record[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid label '{}'", &record[0]),
        })?;
        if label == 0 || max_label.is_some_and(|l| label > l) {
            return Err(Error::Parse {
                line,
                msg: format!("label {label} out of range"),
            });
        }
        let features = (1..=n)
            .map(|k| {
                record[k].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("invalid value '{}' in column {}", &record[k], k + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ds.push(label - 1, DVector::from_vec(features))?;
    }
    Ok(ds)
}

pub fn read_dataset(path: &Path, max_label: Option<usize>) -> Result<LabeledDataset> {
    dataset_from_reader(std::fs::File::open(path)?, max_label)
}

/// Dataset CSV; provenance, when given, goes in a leading `#` line.
pub fn dataset_to_string(ds: &LabeledDataset, prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = prov {
        let _ = writeln!(out, "# config_hash={} seed={}", p.config_hash, p.seed);
    }
    out.push_str("label");
    for k in 1..=ds.dim() {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for (label, x) in ds.samples() {
        let _ = write!(out, "{}", label + 1);
        for v in x.iter() {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, ds: &LabeledDataset, prov: Option<&Provenance>) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds, prov))?;
    Ok(())
}

/// Seeded split that keeps each class's training share proportional.
///
/// The overall training size is `round(fraction · n)`; it is apportioned to
/// classes by largest remainder, so every class count is within one of
/// `fraction · n_c`.
pub fn stratified_split(
    ds: &LabeledDataset,
    l: usize,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (idx, (label, _)) in ds.samples().iter().enumerate() {
        if *label >= l {
            return Err(Error::validation(format!("label {} exceeds L = {l}", label + 1)));
        }
        by_class[*label].push(idx);
    }
    let target = (fraction * ds.len() as f64).round() as usize;
    let ideal: Vec<f64> = by_class.iter().map(|c| fraction * c.len() as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(target.saturating_sub(assigned)) {
        if counts[c] < by_class[c].len() {
            counts[c] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = LabeledDataset::new(ds.dim());
    let mut test = LabeledDataset::new(ds.dim());
    for (c, idxs) in by_class.iter_mut().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        if counts[c] == 0 {
            return Err(Error::validation(format!(
                "class {} has no samples in the training split",
                c + 1
            )));
        }
        idxs.shuffle(&mut rng);
        let (tr, te) = idxs.split_at(counts[c]);
        let mut tr = tr.to_vec();
        let mut te = te.to_vec();
        // keep file order within each side
        tr.sort_unstable();
        te.sort_unstable();
        for &i in &tr {
            let (label, x) = &ds.samples()[i];
            train.push(*label, x.clone())?;
        }
        for &i in &te {
            let (label, x) = &ds.samples()[i];
            test.push(*label, x.clone())?;
        }
    }
    Ok((train, test))
}

pub fn sweep_to_csv(result: &SweepResult, prov: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={} seed={}", prov.config_hash, prov.seed);
    out.push_str("axis,pe,se,bound,d\n");
    for p in &result.points {
        let _ = writeln!(out, "{},{},{},{},{}", p.axis_value, p.pe, p.se, p.bound, p.d);
    }
    out
}

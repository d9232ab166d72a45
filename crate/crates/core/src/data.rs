//! Dataset loading, label transforms, scaling and translation augmentation.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Big-endian unsigned-byte image file plus a separate label file.
    Idx,
    Svmlight,
    /// Comma- or whitespace-separated rows.
    Csv,
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Idx => "idx",
            DataFormat::Svmlight => "svmlight",
            DataFormat::Csv => "csv",
        })
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(DataFormat::Idx),
            "svmlight" => Ok(DataFormat::Svmlight),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown data format `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// Label file for IDX images.
    pub labels: Option<PathBuf>,
    /// Feature count for SVMLIGHT; inferred from the largest index if unset.
    pub dim: Option<usize>,
    /// Text rows start with the label instead of ending with it.
    pub label_first: bool,
}

/// Affine map from `[src_min, src_max]` onto `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub src_min: f64,
    pub src_max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Scaling {
    fn is_identity(&self) -> bool {
        self.src_min == self.lo && self.src_max == self.hi
    }

    pub fn apply_value(&self, v: f64) -> f64 {
        if self.is_identity() {
            v
        } else if self.src_max == self.src_min {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (v - self.src_min) * (self.hi - self.lo) / (self.src_max - self.src_min)
        }
    }

    pub fn invert_value(&self, v: f64) -> f64 {
        if self.is_identity() {
            v
        } else if self.src_max == self.src_min {
            self.src_min
        } else {
            self.src_min + (v - self.lo) * (self.src_max - self.src_min) / (self.hi - self.lo)
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.map(|v| self.apply_value(v))
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.map(|v| self.invert_value(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    /// Class index, or -1/+1 for binary data.
    pub labels: Vec<i64>,
    pub scaling: Option<Scaling>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows, {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(p) = features.iter().position(|v| !v.is_finite()) {
            let (r, c) = (p % features.nrows().max(1), p / features.nrows().max(1));
            return Err(Error::NonFinite(format!("feature ({r}, {c})")));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            scaling: None,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&l| l == 1 || l == -1)
    }

    /// Labels as `+-1.0`; errors unless every label is -1 or +1.
    pub fn binary_labels(&self) -> Result<Vec<f64>> {
        if !self.is_binary() {
            return Err(Error::InvalidArgument(format!(
                "{} has non-binary labels; pick a target class",
                self.name
            )));
        }
        Ok(self.labels.iter().map(|&l| l as f64).collect())
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: crate::kernels::select_rows(&self.features, idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            scaling: self.scaling,
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn load(path: &Path, format: DataFormat, opts: &LoadOptions) -> Result<Dataset> {
    match format {
        DataFormat::Idx => {
            let labels = opts
                .labels
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("IDX images need a label file".into()))?;
            load_idx(path, labels)
        }
        DataFormat::Svmlight => load_svmlight(path, opts.dim),
        DataFormat::Csv => load_csv(path, opts.label_first),
    }
}

fn idx_header(path: &Path, bytes: &[u8], magic: u32) -> Result<(Vec<usize>, usize)> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| parse_err(path, 0, "truncated IDX header"))
    };
    let found = word(0)?;
    if found != magic {
        return Err(parse_err(
            path,
            0,
            format!("bad IDX magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|k| word(4 + 4 * k).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let offset = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    if bytes.len() != offset + expected {
        return Err(parse_err(
            path,
            0,
            format!(
                "IDX payload is {} bytes, header implies {expected}",
                bytes.len() - offset.min(bytes.len())
            ),
        ));
    }
    Ok((dims, offset))
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read(images)?;
    let (dims, off) = idx_header(images, &ib, IDX_IMAGES)?;
    let (n, d) = (dims[0], dims[1] * dims[2]);
    let lb = read(labels)?;
    let (ldims, loff) = idx_header(labels, &lb, IDX_LABELS)?;
    if ldims[0] != n {
        return Err(parse_err(
            labels,
            0,
            format!("{} labels for {n} images", ldims[0]),
        ));
    }
    let features = DMatrix::from_fn(n, d, |r, c| f64::from(ib[off + r * d + c]));
    let labels = lb[loff..].iter().map(|&b| i64::from(b)).collect();
    Dataset::new(dataset_name(images), features, labels)
}

fn parse_label(path: &Path, line: usize, tok: &str) -> Result<i64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad label `{tok}`")))?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(parse_err(
            path,
            line,
            format!("label `{tok}` is not an integer"),
        ));
    }
    Ok(v as i64)
}

fn parse_value(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad value `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

pub fn load_svmlight(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_idx = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        labels.push(parse_label(path, line, toks.next().unwrap_or_default())?);
        let mut row = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, line, format!("expected idx:val, got `{tok}`")))?;
            if i == "qid" {
                continue;
            }
            let i: usize = i
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad index `{i}`")))?;
            if i == 0 || dim.is_some_and(|d| i > d) {
                return Err(parse_err(
                    path,
                    line,
                    format!("feature index {i} out of range"),
                ));
            }
            max_idx = max_idx.max(i);
            row.push((i - 1, parse_value(path, line, v)?));
        }
        rows.push(row);
    }
    let d = dim.unwrap_or(max_idx);
    let mut features = DMatrix::zeros(rows.len(), d);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            features[(r, c)] = v;
        }
    }
    Dataset::new(dataset_name(path), features, labels)
}

pub fn load_csv(path: &Path, label_first: bool) -> Result<Dataset> {
    let text = read_text(path)?;
    let mut values: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = if body.contains(',') {
            body.split(',').map(str::trim).collect()
        } else {
            body.split_whitespace().collect()
        };
        if labels.is_empty() && width.is_none() && toks.iter().any(|t| t.parse::<f64>().is_err()) {
            // header row
            continue;
        }
        if toks.len() < 2 {
            return Err(parse_err(
                path,
                line,
                "a row needs at least one feature and a label",
            ));
        }
        match width {
            None => width = Some(toks.len()),
            Some(w) if w != toks.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("{} fields, expected {w}", toks.len()),
                ));
            }
            _ => {}
        }
        let (label, feats) = if label_first {
            (toks[0], &toks[1..])
        } else {
            (toks[toks.len() - 1], &toks[..toks.len() - 1])
        };
        labels.push(parse_label(path, line, label)?);
        for t in feats {
            values.push(parse_value(path, line, t)?);
        }
    }
    let d = width.map_or(0, |w| w - 1);
    let features = DMatrix::from_row_slice(labels.len(), d, &values);
    Dataset::new(dataset_name(path), features, labels)
}

pub fn write_svmlight<W: Write>(out: &mut W, ds: &Dataset) -> io::Result<()> {
    for (r, l) in ds.labels.iter().enumerate() {
        write!(out, "{l}")?;
        for c in 0..ds.d() {
            let v = ds.features[(r, c)];
            if v != 0.0 {
                write!(out, " {}:{}", c + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Comma-separated, label last.
pub fn write_csv<W: Write>(out: &mut W, ds: &Dataset) -> io::Result<()> {
    for (r, l) in ds.labels.iter().enumerate() {
        for c in 0..ds.d() {
            write!(out, "{},", ds.features[(r, c)])?;
        }
        writeln!(out, "{l}")?;
    }
    Ok(())
}

/// Global affine map of all features onto `[lo, hi]`; constant data maps to
/// the midpoint.
pub fn scale_to_range(ds: &Dataset, lo: f64, hi: f64) -> Result<Dataset> {
    if ds.features.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot scale an empty dataset".into(),
        ));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "empty target range [{lo}, {hi}]"
        )));
    }
    let scaling = Scaling {
        src_min: ds.features.min(),
        src_max: ds.features.max(),
        lo,
        hi,
    };
    Ok(Dataset {
        name: ds.name.clone(),
        features: scaling.apply(&ds.features),
        labels: ds.labels.clone(),
        scaling: Some(scaling),
    })
}

/// `+1` where the label equals `target`, `-1` elsewhere.
pub fn one_vs_rest(ds: &Dataset, target: i64) -> Result<Dataset> {
    if !ds.labels.contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "class {target} does not occur in {}",
            ds.name
        )));
    }
    Ok(Dataset {
        name: format!("{}-{target}-vs-rest", ds.name),
        features: ds.features.clone(),
        labels: ds
            .labels
            .iter()
            .map(|&l| if l == target { 1 } else { -1 })
            .collect(),
        scaling: ds.scaling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    /// Left, up, right, down.
    Four,
    /// The four axis shifts followed by the four diagonals.
    Eight,
}

impl FromStr for Directions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four" => Ok(Directions::Four),
            "eight" => Ok(Directions::Eight),
            other => Err(Error::InvalidArgument(format!(
                "unknown augmentation `{other}`"
            ))),
        }
    }
}

impl Directions {
    /// `(drow, dcol)` content shifts.
    fn offsets(self) -> &'static [(isize, isize)] {
        const EIGHT: [(isize, isize); 8] = [
            (0, -1),
            (-1, 0),
            (0, 1),
            (1, 0),
            (-1, -1),
            (-1, 1),
            (1, 1),
            (1, -1),
        ];
        match self {
            Directions::Four => &EIGHT[..4],
            Directions::Eight => &EIGHT,
        }
    }
}

/// Appends one-pixel translations of every row image. Original rows come
/// first, then one block of `N` rows per direction. Vacated pixels take the
/// dataset's minimum value.
pub fn augment_translations(
    ds: &Dataset,
    height: usize,
    width: usize,
    dirs: Directions,
) -> Result<Dataset> {
    if height * width != ds.d() {
        return Err(Error::Dimension(format!(
            "{height}x{width} images need {} features, dataset has {}",
            height * width,
            ds.d()
        )));
    }
    let n = ds.n();
    let offsets = dirs.offsets();
    let bg = if ds.features.is_empty() {
        0.0
    } else {
        ds.features.min()
    };
    let total = n * (1 + offsets.len());
    let mut features = DMatrix::from_element(total, ds.d(), bg);
    features.rows_mut(0, n).copy_from(&ds.features);
    for (b, &(dr, dc)) in offsets.iter().enumerate() {
        let base = n * (b + 1);
        for i in 0..n {
            for r in 0..height {
                for c in 0..width {
                    let (sr, sc) = (r as isize - dr, c as isize - dc);
                    if sr >= 0 && sc >= 0 && (sr as usize) < height && (sc as usize) < width {
                        features[(base + i, r * width + c)] =
                            ds.features[(i, sr as usize * width + sc as usize)];
                    }
                }
            }
        }
    }
    let labels = (0..total).map(|r| ds.labels[r % n.max(1)]).collect();
    Ok(Dataset {
        name: ds.name.clone(),
        features,
        labels,
        scaling: ds.scaling,
    })
}

//! Dataset ingestion, standardization and the text formats for fitted models
//! and mixture specifications.
//!
//! # CSV
//!
//! Comma-separated, UTF-8, mandatory header row, `.` as decimal separator.
//! All columns except the optional label column must be numeric. Label
//! values may be any string; classes are numbered in order of first
//! appearance.
//!
//! # Model and mixture files
//!
//! Line oriented, whitespace separated, `#` starts a comment line:
//!
//! ```text
//! mgfa-model 1                  # or: mgfa-mixture 1
//! dims <d> <G>
//! factors <q>                   # omitted for covariance-form mixtures
//! sample-size <n>               # mixtures only
//! bounds <a> <b|inf> | none     # models only, optional
//! loglik <value>                # models only, optional
//! iterations <count>            # models only, optional
//! converged <true|false>        # models only, optional
//! component <g>                 # g = 1..G, in order
//! weight <π_g>
//! mean <d values>
//! loading <q values>            # d lines, row i of Λ_g
//! uniquenesses <d values>
//! covariance <d values>         # d lines instead of loading/uniquenesses
//! end
//! ```
//!
//! Reals are written with 17 significant digits, so a save/load round trip
//! is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{MgfaError, Result};
use crate::model::{Component, Dataset, EigenBounds, MgfaParams};
use crate::simulation::{MixtureComponents, MixtureSpec};

pub const MODEL_FORMAT_TAG: &str = "mgfa-model";
pub const MIXTURE_FORMAT_TAG: &str = "mgfa-mixture";
pub const FORMAT_VERSION: u32 = 1;

/// Reads a dataset from a CSV file. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let file = fs::File::open(path.as_ref())?;
    read_csv(file, label_column)
}

/// Parses a numeric table with a header row. If `label_column` names a
/// column, it is removed from the features and mapped to zero-based class
/// indices in first-appearance order.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(MgfaError::parse(1, None, "missing header row"));
    }
    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            MgfaError::parse(
                1,
                None,
                format!("label column '{name}' not found in header"),
            )
        })?),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| Some(j) != label_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(MgfaError::parse(1, None, "no feature columns"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut classes: HashMap<String, usize> = HashMap::new();
    let mut n = 0;
    for (rec_no, record) in rdr.records().enumerate() {
        let line = rec_no + 2;
        let record = record.map_err(|e| csv_error(e, line))?;
        for &j in &feature_idx {
            let cell = &record[j];
            let v: f64 = cell.parse().map_err(|_| {
                MgfaError::parse(line, Some(j + 1), format!("non-numeric value '{cell}'"))
            })?;
            if !v.is_finite() {
                return Err(MgfaError::parse(line, Some(j + 1), "non-finite value"));
            }
            values.push(v);
        }
        if let Some(j) = label_idx {
            let next = classes.len();
            labels.push(*classes.entry(record[j].to_string()).or_insert(next));
        }
        n += 1;
    }
    if n == 0 {
        return Err(MgfaError::parse(2, None, "no data rows"));
    }
    let observations = DMatrix::from_row_slice(n, feature_idx.len(), &values);
    let names = feature_idx.iter().map(|&j| headers[j].clone()).collect();
    let mut data = Dataset::new(observations)?.with_feature_names(names)?;
    if label_idx.is_some() {
        data = data.with_labels(labels)?;
    }
    Ok(data)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> MgfaError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => MgfaError::parse(
            line,
            None,
            format!("ragged row: expected {expected_len} fields, found {len}"),
        ),
        _ => MgfaError::parse(line, None, e.to_string()),
    }
}

/// Writes a dataset as CSV. Labels, if present, go to a trailing `label`
/// column numbered from 1.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = match data.feature_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.d()).map(|j| format!("x{j}")).collect(),
    };
    if data.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_write_error)?;
    let x = data.observations();
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.d()).map(|j| x[(i, j)].to_string()).collect();
        if let Some(labels) = data.labels() {
            row.push((labels[i] + 1).to_string());
        }
        w.write_record(&row).map_err(csv_write_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> MgfaError {
    MgfaError::Io(std::io::Error::other(e.to_string()))
}

/// Writes `path` through a sibling temporary file that is renamed into
/// place only after `body` succeeds, so failures never leave partial files.
pub fn write_atomically<F>(path: impl AsRef<Path>, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| MgfaError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut file = std::io::BufWriter::new(fs::File::create(&tmp)?);
        body(&mut file)?;
        file.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Per-feature centering and scaling, kept for the inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTransform {
    pub center: DVector<f64>,
    /// Sample standard deviations (n − 1 denominator).
    pub scale: DVector<f64>,
}

impl ScalingTransform {
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.map(data, |v, j| (v - self.center[j]) / self.scale[j])
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.map(data, |v, j| v * self.scale[j] + self.center[j])
    }

    fn map(&self, data: &Dataset, f: impl Fn(f64, usize) -> f64) -> Result<Dataset> {
        if data.d() != self.center.len() {
            return Err(MgfaError::invalid("scaling transform dimension mismatch"));
        }
        let x = data.observations();
        let mapped = DMatrix::from_fn(data.n(), data.d(), |i, j| f(x[(i, j)], j));
        rebuild(data, mapped)
    }
}

fn rebuild(template: &Dataset, observations: DMatrix<f64>) -> Result<Dataset> {
    let mut out = Dataset::new(observations)?;
    if let Some(names) = template.feature_names() {
        out = out.with_feature_names(names.to_vec())?;
    }
    if let Some(labels) = template.labels() {
        out = out.with_labels(labels.to_vec())?;
    }
    Ok(out)
}

/// Centers every column at 0 and scales it to unit sample standard
/// deviation (n − 1 denominator).
pub fn standardize(data: &Dataset) -> Result<(Dataset, ScalingTransform)> {
    let n = data.n();
    if n < 2 {
        return Err(MgfaError::invalid(
            "standardizing needs at least two observations",
        ));
    }
    let x = data.observations();
    let center = data.grand_mean();
    let scale = DVector::from_fn(data.d(), |j, _| {
        let ss: f64 = (0..n).map(|i| (x[(i, j)] - center[j]).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    for j in 0..data.d() {
        let spread = (0..n).fold(0.0_f64, |m, i| m.max((x[(i, j)] - center[j]).abs()));
        if !(scale[j] > 0.0) || spread <= 1e-14 * center[j].abs() {
            let name = data
                .feature_names()
                .map(|names| names[j].clone())
                .unwrap_or_else(|| format!("#{}", j + 1));
            return Err(MgfaError::invalid(format!("column {name} is constant")));
        }
    }
    let transform = ScalingTransform { center, scale };
    let scaled = transform.apply(data)?;
    Ok((scaled, transform))
}

/// A fitted model plus the metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: MgfaParams,
    pub bounds: Option<EigenBounds>,
    pub loglik: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl ModelFile {
    pub fn new(params: MgfaParams) -> Self {
        Self {
            params,
            bounds: None,
            loglik: None,
            iterations: None,
            converged: None,
        }
    }
}

fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values
        .into_iter()
        .map(|&v| fmt_real(v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_factor_component(out: &mut String, g: usize, c: &Component) {
    out.push_str(&format!("component {}\n", g + 1));
    out.push_str(&format!("weight {}\n", fmt_real(c.weight)));
    out.push_str(&format!("mean {}\n", fmt_values(c.mean.iter())));
    for row in c.loadings.row_iter() {
        out.push_str(&format!("loading {}\n", fmt_values(row.iter())));
    }
    out.push_str(&format!(
        "uniquenesses {}\n",
        fmt_values(c.uniquenesses.iter())
    ));
    out.push_str("end\n");
}

/// Renders a model in the versioned text format.
pub fn format_model(model: &ModelFile) -> String {
    let p = &model.params;
    let mut out = format!("{MODEL_FORMAT_TAG} {FORMAT_VERSION}\n");
    out.push_str(&format!("dims {} {}\n", p.dim(), p.num_components()));
    out.push_str(&format!("factors {}\n", p.factors()));
    match &model.bounds {
        Some(b) => out.push_str(&format!(
            "bounds {} {}\n",
            fmt_real(b.lower()),
            fmt_real(b.upper_or_inf())
        )),
        None => out.push_str("bounds none\n"),
    }
    if let Some(l) = model.loglik {
        out.push_str(&format!("loglik {}\n", fmt_real(l)));
    }
    if let Some(k) = model.iterations {
        out.push_str(&format!("iterations {k}\n"));
    }
    if let Some(c) = model.converged {
        out.push_str(&format!("converged {c}\n"));
    }
    for (g, c) in p.components().iter().enumerate() {
        write_factor_component(&mut out, g, c);
    }
    out
}

pub fn write_model<W: Write>(model: &ModelFile, mut writer: W) -> Result<()> {
    writer.write_all(format_model(model).as_bytes())?;
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    write_atomically(path, |w| write_model(model, w))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    parse_model(&fs::read_to_string(path)?)
}

/// Renders a mixture specification in the versioned text format.
pub fn format_mixture_spec(spec: &MixtureSpec) -> String {
    let mut out = format!("{MIXTURE_FORMAT_TAG} {FORMAT_VERSION}\n");
    out.push_str(&format!("dims {} {}\n", spec.dim(), spec.num_components()));
    match &spec.components {
        MixtureComponents::Factor(p) => {
            out.push_str(&format!("factors {}\n", p.factors()));
            out.push_str(&format!("sample-size {}\n", spec.sample_size));
            for (g, c) in p.components().iter().enumerate() {
                write_factor_component(&mut out, g, c);
            }
        }
        MixtureComponents::Covariance {
            weights,
            means,
            covariances,
        } => {
            out.push_str(&format!("sample-size {}\n", spec.sample_size));
            for g in 0..weights.len() {
                out.push_str(&format!("component {}\n", g + 1));
                out.push_str(&format!("weight {}\n", fmt_real(weights[g])));
                out.push_str(&format!("mean {}\n", fmt_values(means[g].iter())));
                for row in covariances[g].row_iter() {
                    out.push_str(&format!("covariance {}\n", fmt_values(row.iter())));
                }
                out.push_str("end\n");
            }
        }
    }
    out
}

pub fn load_mixture_spec(path: impl AsRef<Path>) -> Result<MixtureSpec> {
    parse_mixture_spec(&fs::read_to_string(path)?)
}

struct Line<'a> {
    number: usize,
    key: &'a str,
    args: Vec<&'a str>,
}

impl Line<'_> {
    fn reals(&self, expected: usize) -> Result<Vec<f64>> {
        if self.args.len() != expected {
            return Err(MgfaError::parse(
                self.number,
                Some(self.args.len().min(expected) + 2),
                format!(
                    "'{}' expects {expected} values, found {}",
                    self.key,
                    self.args.len()
                ),
            ));
        }
        self.args
            .iter()
            .enumerate()
            .map(|(k, tok)| parse_real(tok, self.number, k + 2))
            .collect()
    }

    fn real(&self) -> Result<f64> {
        Ok(self.reals(1)?[0])
    }

    fn count(&self, k: usize) -> Result<usize> {
        let tok = self.args.get(k).ok_or_else(|| {
            MgfaError::parse(
                self.number,
                Some(k + 2),
                format!("'{}' is missing a value", self.key),
            )
        })?;
        tok.parse().map_err(|_| {
            MgfaError::parse(
                self.number,
                Some(k + 2),
                format!("expected an integer, found '{tok}'"),
            )
        })
    }
}

fn parse_real(tok: &str, line: usize, column: usize) -> Result<f64> {
    match tok {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok.parse().map_err(|_| {
            MgfaError::parse(
                line,
                Some(column),
                format!("expected a number, found '{tok}'"),
            )
        }),
    }
}

fn tokenize(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut toks = content.split_whitespace();
            let key = toks.next()?;
            Some(Line {
                number: i + 1,
                key,
                args: toks.collect(),
            })
        })
        .collect()
}

#[derive(Default)]
struct RawComponent {
    weight: Option<f64>,
    mean: Option<Vec<f64>>,
    loading_rows: Vec<Vec<f64>>,
    uniquenesses: Option<Vec<f64>>,
    covariance_rows: Vec<Vec<f64>>,
    line: usize,
}

struct RawDoc {
    d: usize,
    g: usize,
    q: Option<usize>,
    sample_size: Option<usize>,
    bounds: Option<EigenBounds>,
    loglik: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    components: Vec<RawComponent>,
    last_line: usize,
}

fn parse_document(text: &str, tag: &str) -> Result<RawDoc> {
    let lines = tokenize(text);
    let mut it = lines.into_iter().peekable();
    let header = it
        .next()
        .ok_or_else(|| MgfaError::parse(1, None, "empty file"))?;
    if header.key != tag {
        return Err(MgfaError::parse(
            header.number,
            Some(1),
            format!("expected '{tag}' header, found '{}'", header.key),
        ));
    }
    let version = header.count(0)?;
    if version != FORMAT_VERSION as usize {
        return Err(MgfaError::parse(
            header.number,
            Some(2),
            format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let mut doc = RawDoc {
        d: 0,
        g: 0,
        q: None,
        sample_size: None,
        bounds: None,
        loglik: None,
        iterations: None,
        converged: None,
        components: Vec::new(),
        last_line: header.number,
    };
    let mut have_dims = false;
    let mut current: Option<RawComponent> = None;
    for line in it {
        doc.last_line = line.number;
        if let Some(comp) = current.as_mut() {
            match line.key {
                "weight" => comp.weight = Some(line.real()?),
                "mean" => comp.mean = Some(line.reals(doc.d)?),
                "loading" => {
                    let q = doc.q.ok_or_else(|| {
                        MgfaError::parse(line.number, Some(1), "'loading' before 'factors'")
                    })?;
                    comp.loading_rows.push(line.reals(q)?);
                }
                "uniquenesses" => comp.uniquenesses = Some(line.reals(doc.d)?),
                "covariance" => comp.covariance_rows.push(line.reals(doc.d)?),
                "end" => doc
                    .components
                    .push(current.take().expect("inside a component")),
                other => {
                    return Err(MgfaError::parse(
                        line.number,
                        Some(1),
                        format!("unexpected key '{other}' inside a component"),
                    ))
                }
            }
            continue;
        }
        match line.key {
            "dims" => {
                doc.d = line.count(0)?;
                doc.g = line.count(1)?;
                have_dims = true;
            }
            "factors" => doc.q = Some(line.count(0)?),
            "sample-size" => doc.sample_size = Some(line.count(0)?),
            "bounds" => {
                doc.bounds = if line.args == ["none"] {
                    None
                } else {
                    let v = line.reals(2)?;
                    Some(
                        EigenBounds::new(v[0], v[1])
                            .map_err(|e| MgfaError::parse(line.number, Some(2), e.to_string()))?,
                    )
                }
            }
            "loglik" => doc.loglik = Some(line.real()?),
            "iterations" => doc.iterations = Some(line.count(0)?),
            "converged" => {
                doc.converged = Some(match line.args.as_slice() {
                    ["true"] => true,
                    ["false"] => false,
                    _ => {
                        return Err(MgfaError::parse(
                            line.number,
                            Some(2),
                            "expected true or false",
                        ))
                    }
                })
            }
            "component" => {
                if !have_dims {
                    return Err(MgfaError::parse(
                        line.number,
                        Some(1),
                        "'component' before 'dims'",
                    ));
                }
                let index = line.count(0)?;
                if index != doc.components.len() + 1 {
                    return Err(MgfaError::parse(
                        line.number,
                        Some(2),
                        format!(
                            "expected component {}, found {index}",
                            doc.components.len() + 1
                        ),
                    ));
                }
                current = Some(RawComponent {
                    line: line.number,
                    ..RawComponent::default()
                });
            }
            other => {
                return Err(MgfaError::parse(
                    line.number,
                    Some(1),
                    format!("unknown key '{other}'"),
                ))
            }
        }
    }
    if let Some(comp) = current {
        return Err(MgfaError::parse(
            comp.line,
            None,
            "component block is not closed by 'end'",
        ));
    }
    if !have_dims {
        return Err(MgfaError::parse(doc.last_line, None, "missing 'dims' line"));
    }
    if doc.components.len() != doc.g {
        return Err(MgfaError::parse(
            doc.last_line,
            None,
            format!(
                "expected {} components, found {}",
                doc.g,
                doc.components.len()
            ),
        ));
    }
    Ok(doc)
}

fn require<T>(value: Option<T>, line: usize, what: &str) -> Result<T> {
    value.ok_or_else(|| MgfaError::parse(line, None, format!("component is missing '{what}'")))
}

fn factor_component(raw: RawComponent, d: usize) -> Result<Component> {
    let line = raw.line;
    if raw.loading_rows.len() != d {
        return Err(MgfaError::parse(
            line,
            None,
            format!(
                "expected {d} loading rows, found {}",
                raw.loading_rows.len()
            ),
        ));
    }
    let q = raw.loading_rows[0].len();
    let flat: Vec<f64> = raw.loading_rows.into_iter().flatten().collect();
    Ok(Component {
        weight: require(raw.weight, line, "weight")?,
        mean: DVector::from_vec(require(raw.mean, line, "mean")?),
        loadings: DMatrix::from_row_slice(d, q, &flat),
        uniquenesses: DVector::from_vec(require(raw.uniquenesses, line, "uniquenesses")?),
    })
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<ModelFile> {
    let doc = parse_document(text, MODEL_FORMAT_TAG)?;
    if doc.q.is_none() {
        return Err(MgfaError::parse(
            doc.last_line,
            None,
            "missing 'factors' line",
        ));
    }
    let d = doc.d;
    let components = doc
        .components
        .into_iter()
        .map(|raw| factor_component(raw, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelFile {
        params: MgfaParams::new(components)?,
        bounds: doc.bounds,
        loglik: doc.loglik,
        iterations: doc.iterations,
        converged: doc.converged,
    })
}

/// Parses and validates a mixture specification.
pub fn parse_mixture_spec(text: &str) -> Result<MixtureSpec> {
    let doc = parse_document(text, MIXTURE_FORMAT_TAG)?;
    let sample_size = doc
        .sample_size
        .ok_or_else(|| MgfaError::parse(doc.last_line, None, "missing 'sample-size' line"))?;
    let d = doc.d;
    let covariance_form = doc.components.iter().any(|c| !c.covariance_rows.is_empty());
    if covariance_form {
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covariances = Vec::new();
        for raw in doc.components {
            if raw.covariance_rows.len() != d {
                return Err(MgfaError::parse(
                    raw.line,
                    None,
                    format!(
                        "expected {d} covariance rows, found {}",
                        raw.covariance_rows.len()
                    ),
                ));
            }
            weights.push(require(raw.weight, raw.line, "weight")?);
            means.push(DVector::from_vec(require(raw.mean, raw.line, "mean")?));
            let flat: Vec<f64> = raw.covariance_rows.into_iter().flatten().collect();
            covariances.push(DMatrix::from_row_slice(d, d, &flat));
        }
        MixtureSpec::from_covariances(weights, means, covariances, sample_size)
    } else {
        if doc.q.is_none() {
            return Err(MgfaError::parse(
                doc.last_line,
                None,
                "missing 'factors' line",
            ));
        }
        let components = doc
            .components
            .into_iter()
            .map(|raw| factor_component(raw, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureSpec::from_params(
            MgfaParams::new(components)?,
            sample_size,
        ))
    }
}

//! Spectral datasets: CSV ingestion, centering against the pure-food mean and
//! wavelength aggregation.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Upper bound of an adulteration level.
pub const G_MAX: f64 = 0.5;

/// Column mapping for spectra CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub id_column: String,
    pub g_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_column: "id".to_string(),
            g_column: "g".to_string(),
        }
    }
}

/// An `n x p` absorbance matrix with optional adulteration labels.
///
/// Immutable once constructed; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraDataset {
    absorbance: DMatrix<f64>,
    wavelengths: Vec<f64>,
    sample_ids: Vec<String>,
    known_g: Vec<Option<f64>>,
    mu_pure: Option<DVector<f64>>,
}

impl SpectraDataset {
    pub fn new(
        absorbance: DMatrix<f64>,
        wavelengths: Vec<f64>,
        sample_ids: Vec<String>,
        known_g: Vec<Option<f64>>,
        mu_pure: Option<DVector<f64>>,
    ) -> Result<Self> {
        let (n, p) = absorbance.shape();
        if wavelengths.len() != p {
            return Err(Error::Validation(format!(
                "{} wavelengths for {} absorbance columns",
                wavelengths.len(),
                p
            )));
        }
        if sample_ids.len() != n || known_g.len() != n {
            return Err(Error::Validation(format!(
                "expected {n} sample ids and labels, got {} and {}",
                sample_ids.len(),
                known_g.len()
            )));
        }
        if let Some((i, j)) = first_non_finite(&absorbance) {
            return Err(Error::Validation(format!(
                "non-finite absorbance at sample {i}, feature {j}"
            )));
        }
        check_increasing(&wavelengths)?;
        let mut seen = HashSet::with_capacity(n);
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id '{id}'")));
            }
        }
        for (i, g) in known_g.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() || *g < 0.0 || *g > G_MAX {
                    return Err(Error::Validation(format!(
                        "label g = {g} for sample '{}' is outside [0, {G_MAX}]",
                        sample_ids[i]
                    )));
                }
            }
        }
        if let Some(mu) = &mu_pure {
            if mu.len() != p {
                return Err(Error::Validation(format!(
                    "mu_pure has length {}, expected {p}",
                    mu.len()
                )));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("mu_pure contains non-finite values".into()));
            }
        }
        Ok(Self {
            absorbance,
            wavelengths,
            sample_ids,
            known_g,
            mu_pure,
        })
    }

    /// Dataset with generated ids `s1..sn` and wavelengths `1..p`.
    pub fn from_matrix(absorbance: DMatrix<f64>, known_g: Vec<Option<f64>>) -> Result<Self> {
        let (n, p) = absorbance.shape();
        let ids = (1..=n).map(|i| format!("s{i}")).collect();
        let wavelengths = (1..=p).map(|j| j as f64).collect();
        Self::new(absorbance, wavelengths, ids, known_g, None)
    }

    pub fn with_mu_pure(mut self, mu_pure: DVector<f64>) -> Result<Self> {
        let p = self.p();
        if mu_pure.len() != p {
            return Err(Error::Validation(format!(
                "mu_pure has length {}, expected {p}",
                mu_pure.len()
            )));
        }
        self.mu_pure = Some(mu_pure);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.absorbance.nrows()
    }

    pub fn p(&self) -> usize {
        self.absorbance.ncols()
    }

    pub fn absorbance(&self) -> &DMatrix<f64> {
        &self.absorbance
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn known_g(&self) -> &[Option<f64>] {
        &self.known_g
    }

    pub fn mu_pure(&self) -> Option<&DVector<f64>> {
        self.mu_pure.as_ref()
    }

    /// Returns a copy with rows reordered so that row `i` is old row `order[i]`.
    pub fn permute_samples(&self, order: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("order is not a permutation of the samples".into()));
        }
        let absorbance = DMatrix::from_fn(n, self.p(), |i, j| self.absorbance[(order[i], j)]);
        Self::new(
            absorbance,
            self.wavelengths.clone(),
            order.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            order.iter().map(|&i| self.known_g[i]).collect(),
            self.mu_pure.clone(),
        )
    }

    /// Writes the dataset in the layout read by [`load_csv`].
    pub fn write_csv<W: Write>(&self, schema: &CsvSchema, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![schema.id_column.clone(), schema.g_column.clone()];
        header.extend(self.wavelengths.iter().map(|w| format!("{w}")));
        out.write_record(&header)?;
        let mut record = Vec::with_capacity(self.p() + 2);
        for i in 0..self.n() {
            record.clear();
            record.push(self.sample_ids[i].clone());
            record.push(self.known_g[i].map(|g| format!("{g}")).unwrap_or_default());
            record.extend(self.absorbance.row(i).iter().map(|v| format!("{v}")));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Spectra with `mu_pure` subtracted, plus the supervision bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDataset {
    yc: DMatrix<f64>,
    labels: Vec<Option<f64>>,
}

impl CenteredDataset {
    pub fn new(yc: DMatrix<f64>, labels: Vec<Option<f64>>) -> Result<Self> {
        if yc.nrows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} centered rows for {} labels",
                yc.nrows(),
                labels.len()
            )));
        }
        if let Some(g) = labels.iter().flatten().find(|g| !(0.0..=G_MAX).contains(*g)) {
            return Err(Error::Validation(format!("label {g} outside [0, {G_MAX}]")));
        }
        Ok(Self { yc, labels })
    }

    /// Unsupervised centered data.
    pub fn unlabeled(yc: DMatrix<f64>) -> Self {
        let n = yc.nrows();
        Self {
            yc,
            labels: vec![None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.yc.nrows()
    }

    pub fn p(&self) -> usize {
        self.yc.ncols()
    }

    pub fn yc(&self) -> &DMatrix<f64> {
        &self.yc
    }

    pub fn labels(&self) -> &[Option<f64>] {
        &self.labels
    }

    pub fn supervision_mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|g| g.is_some()).count()
    }
}

/// Reads spectra from CSV.
///
/// Wavelengths come from the numeric headers. Empty or unparseable cells of the
/// adulteration column mean "unknown".
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SpectraDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<SpectraDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut id_col = None;
    let mut g_col = None;
    let mut wl_cols = Vec::new();
    let mut wavelengths = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == schema.id_column {
            id_col = Some(c);
        } else if name == schema.g_column {
            g_col = Some(c);
        } else if let Ok(w) = name.parse::<f64>() {
            if !w.is_finite() {
                return Err(Error::Validation(format!("wavelength header '{name}' is not finite")));
            }
            wl_cols.push(c);
            wavelengths.push(w);
        } else {
            return Err(Error::Validation(format!(
                "column '{name}' is neither the id column, the g column nor a numeric wavelength"
            )));
        }
    }
    let id_col = id_col.ok_or_else(|| {
        Error::Validation(format!("missing id column '{}'", schema.id_column))
    })?;
    if wl_cols.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 wavelength columns, found {}",
            wl_cols.len()
        )));
    }
    check_increasing(&wavelengths)?;

    let p = wl_cols.len();
    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut known_g = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // header is row 1
        let row = r + 2;
        ids.push(record.get(id_col).unwrap_or("").trim().to_string());
        let g = g_col
            .and_then(|c| record.get(c))
            .and_then(|cell| cell.trim().parse::<f64>().ok())
            .filter(|g| g.is_finite());
        known_g.push(g);
        for &c in &wl_cols {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
    }
    let n = ids.len();
    let absorbance = DMatrix::from_row_slice(n, p, &values);
    SpectraDataset::new(absorbance, wavelengths, ids, known_g, None)
}

/// Reads a single-row `mu_pure` CSV whose numeric headers must match `wavelengths`.
/// Non-numeric columns (an id, say) are ignored.
pub fn load_mu_pure(path: impl AsRef<Path>, wavelengths: &[f64]) -> Result<DVector<f64>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_mu_pure(file, wavelengths)
}

pub fn read_mu_pure<R: Read>(reader: R, wavelengths: &[f64]) -> Result<DVector<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<(usize, f64)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.trim().parse::<f64>().ok().map(|w| (c, w)))
        .collect();
    if cols.len() != wavelengths.len()
        || cols
            .iter()
            .zip(wavelengths)
            .any(|((_, a), b)| (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0))
    {
        return Err(Error::Validation(
            "mu_pure wavelength headers do not match the dataset".into(),
        ));
    }
    let record = rdr
        .records()
        .next()
        .ok_or_else(|| Error::Validation("mu_pure file has no data row".into()))??;
    let mut mu = DVector::zeros(cols.len());
    for (j, &(c, _)) in cols.iter().enumerate() {
        let cell = record.get(c).unwrap_or("").trim();
        mu[j] = cell
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row: 2,
                column: c + 1,
                message: format!("'{cell}' is not a finite number"),
            })?;
    }
    Ok(mu)
}

pub fn write_mu_pure<W: Write>(mu: &DVector<f64>, wavelengths: &[f64], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(wavelengths.iter().map(|w| format!("{w}")))?;
    out.write_record(mu.iter().map(|v| format!("{v}")))?;
    out.flush()?;
    Ok(())
}

/// Columnwise mean of the samples labeled exactly pure (`g = 0`).
pub fn estimate_mu_pure(ds: &SpectraDataset) -> Result<DVector<f64>> {
    let pure: Vec<usize> = ds
        .known_g
        .iter()
        .enumerate()
        .filter_map(|(i, g)| (*g == Some(0.0)).then_some(i))
        .collect();
    if pure.is_empty() {
        return Err(Error::Configuration(
            "no samples labeled pure (g = 0); supply mu_pure explicitly".into(),
        ));
    }
    let mut mu = DVector::zeros(ds.p());
    for &i in &pure {
        mu += ds.absorbance.row(i).transpose();
    }
    Ok(mu / pure.len() as f64)
}

/// Subtracts `mu_pure` from every spectrum. Falls back to [`estimate_mu_pure`]
/// when the dataset carries no explicit mean.
pub fn center(ds: &SpectraDataset) -> Result<CenteredDataset> {
    let mu = match &ds.mu_pure {
        Some(mu) => mu.clone(),
        None => estimate_mu_pure(ds)?,
    };
    let mut yc = ds.absorbance.clone();
    for mut row in yc.row_iter_mut() {
        row -= mu.transpose();
    }
    Ok(CenteredDataset {
        yc,
        labels: ds.known_g.clone(),
    })
}

/// Resolved pure-food mean, with the same precedence as [`center`].
pub fn resolve_mu_pure(ds: &SpectraDataset) -> Result<DVector<f64>> {
    match &ds.mu_pure {
        Some(mu) => Ok(mu.clone()),
        None => estimate_mu_pure(ds),
    }
}

/// Averages consecutive blocks of `group` wavelengths. A trailing partial block
/// is averaged over its actual size.
pub fn aggregate_adjacent(ds: &SpectraDataset, group: usize) -> Result<SpectraDataset> {
    if group == 0 {
        return Err(Error::InvalidArgument("aggregation group must be positive".into()));
    }
    if group == 1 {
        return Ok(ds.clone());
    }
    let p = ds.p();
    let blocks: Vec<std::ops::Range<usize>> = (0..p)
        .step_by(group)
        .map(|start| start..(start + group).min(p))
        .collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, len: usize| xs.sum::<f64>() / len as f64;

    let absorbance = DMatrix::from_fn(ds.n(), blocks.len(), |i, b| {
        let r = &blocks[b];
        mean(&mut r.clone().map(|j| ds.absorbance[(i, j)]), r.len())
    });
    let wavelengths = blocks
        .iter()
        .map(|r| mean(&mut ds.wavelengths[r.clone()].iter().copied(), r.len()))
        .collect();
    let mu_pure = ds.mu_pure.as_ref().map(|mu| {
        DVector::from_iterator(
            blocks.len(),
            blocks.iter().map(|r| mean(&mut r.clone().map(|j| mu[j]), r.len())),
        )
    });
    SpectraDataset::new(
        absorbance,
        wavelengths,
        ds.sample_ids.clone(),
        ds.known_g.clone(),
        mu_pure,
    )
}

fn check_increasing(wavelengths: &[f64]) -> Result<()> {
    if let Some(w) = wavelengths.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "wavelengths must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

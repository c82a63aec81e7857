//! Dataset ingestion and the preprocessing pipeline: standardize each column
//! to zero mean and unit (population) variance, then clip every dimension to
//! its 2.5%/97.5% quantiles. Clipping operates on the standardized scale.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{mean, var_pop};
use crate::rng::rng_from;

pub const DEFAULT_CLIP_LO: f64 = 0.025;
pub const DEFAULT_CLIP_HI: f64 = 0.975;

/// One (x, y, Z) sample table with preprocessing state flags.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// n×d conditioning matrix; d may be 0.
    pub z: Array2<f64>,
    pub x_name: String,
    pub y_name: String,
    pub z_names: Vec<String>,
    pub standardized: bool,
    pub clipped: bool,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Array2<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() != z.nrows() {
            return Err(Error::Shape(format!(
                "column lengths differ: x={}, y={}, z={}",
                x.len(),
                y.len(),
                z.nrows()
            )));
        }
        let z_names = (1..=z.ncols()).map(|i| format!("z{i}")).collect();
        Ok(Dataset {
            x,
            y,
            z,
            x_name: "x".into(),
            y_name: "y".into(),
            z_names,
            standardized: false,
            clipped: false,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }
}

/// Load named columns from a headered CSV file.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    x_col: &str,
    y_col: &str,
    z_cols: &[String],
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let xi = find(x_col)?;
    let yi = find(y_col)?;
    let zi: Vec<usize> = z_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut z_rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize, column: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| Error::BadCell {
                row: row_idx + 1,
                column: column.to_string(),
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::BadCell {
                    row: row_idx + 1,
                    column: column.to_string(),
                    value: raw.to_string(),
                });
            }
            Ok(value)
        };
        x.push(parse(xi, x_col)?);
        y.push(parse(yi, y_col)?);
        let mut row = Vec::with_capacity(zi.len());
        for (idx, name) in zi.iter().zip(z_cols) {
            row.push(parse(*idx, name)?);
        }
        z_rows.push(row);
    }
    let n = x.len();
    let d = z_cols.len();
    let z = Array2::from_shape_vec((n, d), z_rows.into_iter().flatten().collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut ds = Dataset::new(x, y, z)?;
    ds.x_name = x_col.to_string();
    ds.y_name = y_col.to_string();
    ds.z_names = z_cols.to_vec();
    Ok(ds)
}

pub(crate) fn standardize_column(col: &mut [f64]) -> Result<()> {
    let m = mean(col);
    let v = var_pop(col);
    if v <= 0.0 {
        return Err(Error::ConstantColumn("<unnamed>".into()));
    }
    let s = v.sqrt();
    for value in col.iter_mut() {
        *value = (*value - m) / s;
    }
    Ok(())
}

/// Standardize every column to sample mean 0 and population variance 1.
pub fn standardize(mut dataset: Dataset) -> Result<Dataset> {
    standardize_column(&mut dataset.x)
        .map_err(|_| Error::ConstantColumn(dataset.x_name.clone()))?;
    standardize_column(&mut dataset.y)
        .map_err(|_| Error::ConstantColumn(dataset.y_name.clone()))?;
    for j in 0..dataset.d() {
        let mut col = dataset.z.column(j).to_vec();
        standardize_column(&mut col)
            .map_err(|_| Error::ConstantColumn(dataset.z_names[j].clone()))?;
        for (i, v) in col.into_iter().enumerate() {
            dataset.z[[i, j]] = v;
        }
    }
    dataset.standardized = true;
    Ok(dataset)
}

/// Quantile by linear interpolation between closest order statistics.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn clip_column(col: &mut [f64], lo: f64, hi: f64) {
    let mut sorted = col.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo_v = quantile(&sorted, lo);
    let hi_v = quantile(&sorted, hi);
    for value in col.iter_mut() {
        *value = value.clamp(lo_v, hi_v);
    }
}

/// Clip every dimension to its [lo, hi] quantile band.
pub fn clip_quantiles(mut dataset: Dataset, lo: f64, hi: f64) -> Result<Dataset> {
    if !(lo < hi) {
        return Err(Error::Config(format!("clip quantiles need lo < hi, got {lo} >= {hi}")));
    }
    clip_column(&mut dataset.x, lo, hi);
    clip_column(&mut dataset.y, lo, hi);
    for j in 0..dataset.d() {
        let mut col = dataset.z.column(j).to_vec();
        clip_column(&mut col, lo, hi);
        for (i, v) in col.into_iter().enumerate() {
            dataset.z[[i, j]] = v;
        }
    }
    dataset.clipped = true;
    Ok(dataset)
}

/// The full preprocessing pipeline in its fixed order.
pub fn preprocess(dataset: Dataset) -> Result<Dataset> {
    let standardized = standardize(dataset)?;
    debug_assert!(standardized.standardized && !standardized.clipped);
    clip_quantiles(standardized, DEFAULT_CLIP_LO, DEFAULT_CLIP_HI)
}

/// Seeded shuffle-then-partition split of row indices.
/// The validation part takes floor(n * val_fraction) rows.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must be in (0,1), got {val_fraction}"
        )));
    }
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let n_train = n - n_val;
    if n_train < 2 || n_val < 1 {
        return Err(Error::TooFewSamples { got: n, min: 4 });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(seed, 0xDA7A);
    indices.shuffle(&mut rng);
    let val = indices.split_off(n_train);
    Ok((indices, val))
}

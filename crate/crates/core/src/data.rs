//! Point sets and weighted regression samples.
//!
//! Inputs are stored row-major in one flat buffer together with their
//! dimension. CSV files use the header `x1,...,xd,y[,w]`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` points in `R^dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("point dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::input(format!(
                "flat buffer of length {} is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("points contain non-finite coordinates"));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::input("no rows given"))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("rows have differing lengths"));
        }
        Points::new(dim, rows.concat())
    }

    /// One-dimensional points.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Points::new(1, values.to_vec())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Coordinates `start..start + width` of every point.
    pub fn project(&self, start: usize, width: usize) -> Result<Points> {
        if width == 0 || start + width > self.dim {
            return Err(Error::input(format!(
                "block {}..{} out of range for dimension {}",
                start,
                start + width,
                self.dim
            )));
        }
        let data = self
            .rows()
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        Ok(Points { dim: width, data })
    }
}

/// Regression sample `{(x_i, y_i)}` with optional probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    inputs: Points,
    responses: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DataSet {
    pub fn new(inputs: Points, responses: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::input("data set is empty"));
        }
        if responses.len() != inputs.len() {
            return Err(Error::input(format!(
                "{} inputs but {} responses",
                inputs.len(),
                responses.len()
            )));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::input("responses contain non-finite values"));
        }
        if let Some(w) = &weights {
            if w.len() != responses.len() {
                return Err(Error::input("weight vector length differs from sample size"));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::input("weights must be finite and nonnegative"));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!("weights sum to {total}, expected 1")));
            }
        }
        Ok(DataSet {
            inputs,
            responses,
            weights,
        })
    }

    /// Rescales arbitrary nonnegative weights to sum to one before validating.
    pub fn with_unnormalized_weights(
        inputs: Points,
        responses: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::input("weights must have a positive finite sum"));
        }
        let mut w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        // absorb the rounding residue so the sum check is tight
        let residue = 1.0 - w.iter().sum::<f64>();
        if let Some(max) = w
            .iter_mut()
            .max_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
        {
            *max += residue;
        }
        DataSet::new(inputs, responses, Some(w))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn explicit_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.responses.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// `max_i |y_i|`, the bound used for `|L|_0` with pinball loss.
    pub fn response_bound(&self) -> f64 {
        self.responses.iter().fold(0.0, |m, y| m.max(y.abs()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let has_weights = header.last().map(|h| h == "w").unwrap_or(false);
        let n_x = header.len().saturating_sub(if has_weights { 2 } else { 1 });
        if n_x == 0 {
            return Err(Error::input("CSV header must be x1,...,xd,y[,w]"));
        }
        for (j, h) in header.iter().take(n_x).enumerate() {
            if *h != format!("x{}", j + 1) {
                return Err(Error::input(format!("unexpected CSV column '{h}'")));
            }
        }
        if header[n_x] != "y" {
            return Err(Error::input(format!("expected column 'y', found '{}'", header[n_x])));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parsed: Vec<f64> = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::input(format!("cannot parse '{s}' as a number")))
                })
                .collect::<Result<_>>()?;
            xs.extend_from_slice(&parsed[..n_x]);
            ys.push(parsed[n_x]);
            if has_weights {
                ws.push(parsed[n_x + 1]);
            }
        }
        let inputs = Points::new(n_x, xs)?;
        if has_weights {
            DataSet::with_unnormalized_weights(inputs, ys, ws)
        } else {
            DataSet::new(inputs, ys, None)
        }
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        DataSet::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        if self.weights.is_some() {
            header.push("w".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.inputs.row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.responses[i].to_string());
            if let Some(w) = &self.weights {
                row.push(w[i].to_string());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_keeps_block_columns() {
        let p = Points::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = p.project(1, 2).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.row(1), &[5.0, 6.0]);
        assert!(p.project(2, 2).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        let p = Points::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(DataSet::new(p.clone(), vec![0.0, 1.0], Some(vec![0.5, 0.6])).is_err());
        assert!(DataSet::new(p.clone(), vec![0.0, 1.0], Some(vec![1.5, -0.5])).is_err());
        assert!(DataSet::new(p, vec![0.0], None).is_err());
    }

    #[test]
    fn csv_round_trip_with_weights() {
        let csv = "x1,x2,y,w\n0,1,2,1\n3,4,5,3\n";
        let ds = DataSet::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert!((ds.weight(1) - 0.75).abs() < 1e-15);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let back = DataSet::read_csv(out.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(DataSet::read_csv("a,y\n1,2\n".as_bytes()).is_err());
        assert!(DataSet::read_csv("x1,z\n1,2\n".as_bytes()).is_err());
    }
}

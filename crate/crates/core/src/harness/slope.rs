use std::collections::BTreeMap;

use super::RunRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Median,
    Mean,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `log(aggregate error)` against `log(param)`.
pub fn fit_loglog_slope(records: &[RunRecord], aggregate: Aggregate) -> Result<f64> {
    let mut cells: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        cells.entry(r.param).or_default().push(r.error);
    }
    if cells.len() < 3 {
        return Err(Error::DegenerateGrid(format!(
            "{} distinct grid values, need at least 3",
            cells.len()
        )));
    }
    let mut xs = Vec::with_capacity(cells.len());
    let mut ys = Vec::with_capacity(cells.len());
    for (param, errors) in &cells {
        let y = match aggregate {
            Aggregate::Median => median(errors),
            Aggregate::Mean => errors.iter().sum::<f64>() / errors.len() as f64,
        };
        if !(y > 0.0) {
            return Err(Error::Numerical(format!(
                "aggregate error {y:.3e} at param {param} is not positive; log-log slope undefined"
            )));
        }
        xs.push((*param as f64).ln());
        ys.push(y.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

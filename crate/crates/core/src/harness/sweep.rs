use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, LossKind, Method};
use super::run::run;
use crate::{Error, Result};

/// The parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    KPt,
    SigmaFeat,
    /// Cross-graph rounds of `pca-iter` methods.
    Iterations,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::KPt => "k_pt",
            Axis::SigmaFeat => "sigma_feat",
            Axis::Iterations => "iterations",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_pt" | "kpt" => Ok(Axis::KPt),
            "sigma_feat" => Ok(Axis::SigmaFeat),
            "iterations" | "k" => Ok(Axis::Iterations),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

/// A method plus an optional non-default loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    pub loss: Option<LossKind>,
}

impl FromStr for MethodSpec {
    type Err = Error;

    /// `pca`, `pca+offset`, `pca-iter:3+perm`, ...
    fn from_str(s: &str) -> Result<Self> {
        let (m, l) = match s.split_once('+') {
            Some((m, l)) => (m, Some(l.parse()?)),
            None => (s, None),
        };
        Ok(MethodSpec {
            method: m.parse()?,
            loss: l,
        })
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub epochs: usize,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    /// `mean_acc` and `std_acc` are NaN when the cell failed.
    pub row: SweepRow,
    pub error: Option<String>,
}

/// `base` with `spec` and the axis value applied.
pub fn cell_config(base: &ExperimentConfig, spec: MethodSpec, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    c.method = spec.method;
    c.loss = spec.loss;
    if !spec.method.is_learned() {
        c.loss = None;
        c.optimizer = None;
    }
    let whole = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Config(format!("{} must be a positive integer, got {v}", axis.name())))
        }
    };
    match axis {
        Axis::KPt | Axis::SigmaFeat => {
            let DataSource::Synthetic(s) = &mut c.data else {
                return Err(Error::Config(format!("{} sweeps need synthetic data", axis.name())));
            };
            match axis {
                Axis::KPt => s.k_pt = whole(value)?,
                _ => s.sigma_feat = value,
            }
        }
        Axis::Iterations => match c.method {
            Method::PcaIterative { .. } => c.method = Method::PcaIterative { iterations: whole(value)? },
            m => return Err(Error::Config(format!("iterations axis does not apply to {m}"))),
        },
    }
    c.validate()?;
    Ok(c)
}

/// Trains and evaluates every method at every value. A failing cell is
/// logged and marked; the sweep moves on.
pub fn sweep(base: &ExperimentConfig, methods: &[MethodSpec], axis: Axis, values: &[f64]) -> Result<Vec<SweepCell>> {
    if values.is_empty() || methods.is_empty() {
        return Err(Error::Config("a sweep needs at least one method and one value".into()));
    }
    let mut cells = Vec::with_capacity(values.len() * methods.len());
    for &value in values {
        for &spec in methods {
            let start = Instant::now();
            let outcome = cell_config(base, spec, axis, value).and_then(|c| run(&c).map(|(_, r)| (c, r)));
            let label = match &outcome {
                Ok((c, _)) => c.label(),
                Err(_) => spec.method.to_string(),
            };
            let mut row = SweepRow {
                method: label,
                axis: axis.name().into(),
                value,
                seed: base.seed,
                mean_acc: f64::NAN,
                std_acc: f64::NAN,
                epochs: 0,
                wallclock_s: 0.0,
            };
            let error = match outcome {
                Ok((c, r)) => {
                    row.mean_acc = r.eval.mean_acc;
                    row.std_acc = r.eval.std_acc;
                    row.epochs = c.epochs();
                    None
                }
                Err(e) => {
                    log::warn!("sweep cell {} {}={value} failed: {e}", row.method, row.axis);
                    Some(e.to_string())
                }
            };
            row.wallclock_s = start.elapsed().as_secs_f64();
            cells.push(SweepCell { row, error });
        }
    }
    Ok(cells)
}

pub fn write_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("results csv: {e}"))
}

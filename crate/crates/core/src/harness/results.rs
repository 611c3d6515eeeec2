//! CSV records written by the experiment runner.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Method, StopReason};

pub const RESULT_HEADER: &str = "method,sweep_axis,sweep_value,rmse_theta_deg,rmse_z,crlb_sqrt_theta_deg,crlb_sqrt_z,mean_iters,fail_rate,trials,seed";
pub const CONVERGENCE_HEADER: &str = "sweep_value,trial,iteration,loss,stop_reason";

/// Method column label of bound-only rows.
pub const CRLB_LABEL: &str = "CRLB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    AmplitudeScale,
    PhaseScale,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::AmplitudeScale => "amplitude_scale",
            SweepAxis::PhaseScale => "phase_scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub rmse_theta_deg: Option<f64>,
    pub rmse_z: Option<f64>,
    pub crlb_sqrt_theta_deg: Option<f64>,
    pub crlb_sqrt_z: Option<f64>,
    pub mean_iters: Option<f64>,
    pub fail_rate: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    /// Parsed method, `None` for bound-only rows.
    pub fn method(&self) -> Option<Method> {
        self.method.parse().ok()
    }

    fn rank(&self) -> usize {
        self.method().map_or(Method::ALL.len(), |m| m as usize)
    }
}

/// Orders rows by method (TALS, KRF, LS, then bound rows) and sweep value.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.rank()
            .cmp(&b.rank())
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.sweep_value.total_cmp(&b.sweep_value))
    });
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULT_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != RESULT_HEADER {
        return Err(Error::Config(format!("unexpected result header `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub sweep_value: f64,
    pub trial: usize,
    /// 0 is the loss at initialization.
    pub iteration: usize,
    pub loss: f64,
    pub stop_reason: StopReason,
}

pub fn write_convergence<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CONVERGENCE_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_convergence<R: Read>(input: R) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

//! CSV layouts.
//!
//! Long format, one row per replication:
//! `model,policy,lambda,replication,seed,mean_cycle_time`.
//!
//! Summary format, one row per report:
//! `model,policy,lambda,n,mean,ci_half_width,max_utilization,utilization,tied_best`
//! where `utilization` lists per-resource values separated by `;`.
//!
//! Comparisons: `model,lambda,a,b,t,df,p_value,significant`.
//!
//! `lambda` is empty outside sweeps. Reals are written in shortest
//! round-trip form.

use super::{Comparison, EvalReport, HarnessError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub model: String,
    pub policy: String,
    pub lambda: Option<f64>,
    pub replication: usize,
    pub seed: u64,
    pub mean_cycle_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub policy: String,
    pub lambda: Option<f64>,
    pub n: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    pub max_utilization: f64,
    pub utilization: String,
    pub tied_best: Option<bool>,
}

pub fn write_long<W: Write>(out: W, reports: &[EvalReport]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["model", "policy", "lambda", "replication", "seed", "mean_cycle_time"])?;
    for r in reports {
        for (i, &ct) in r.samples.iter().enumerate() {
            w.serialize(LongRow {
                model: r.model.clone(),
                policy: r.policy.clone(),
                lambda: r.lambda,
                replication: i,
                seed: r.seed_of(i),
                mean_cycle_time: ct,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `tied_best`, if given, holds one flag per report.
pub fn write_summary<W: Write>(out: W, reports: &[EvalReport], tied_best: Option<&[bool]>) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["model", "policy", "lambda", "n", "mean", "ci_half_width", "max_utilization", "utilization", "tied_best"])?;
    for (i, r) in reports.iter().enumerate() {
        w.serialize(SummaryRow {
            model: r.model.clone(),
            policy: r.policy.clone(),
            lambda: r.lambda,
            n: r.n(),
            mean: r.mean,
            ci_half_width: r.ci_half_width,
            max_utilization: r.max_utilization(),
            utilization: r.utilization.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(";"),
            tied_best: tied_best.map(|t| t[i]),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparisons<W: Write>(out: W, rows: &[(String, Option<f64>, Comparison)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "lambda", "a", "b", "t", "df", "p_value", "significant"])?;
    for (model, lambda, c) in rows {
        w.write_record([
            model.clone(),
            lambda.map(|l| l.to_string()).unwrap_or_default(),
            c.a.clone(),
            c.b.clone(),
            c.t.to_string(),
            c.df.to_string(),
            c.p_value.to_string(),
            c.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_long<R: Read>(input: R) -> Result<Vec<LongRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(policy: &str, lambda: Option<f64>) -> EvalReport {
        EvalReport {
            policy: policy.into(),
            model: "slow_server".into(),
            lambda,
            horizon: 5000.0,
            base_seed: 10,
            samples: vec![1.0 / 3.0, 2.618033988749895, 12.5],
            mean: 5.183871387597682,
            ci_half_width: 0.1,
            utilization: vec![0.25, 0.9],
        }
    }

    #[test]
    fn long_round_trip() {
        let reports = vec![report("spt", Some(0.55)), report("fifo", None)];
        let mut buf = Vec::new();
        write_long(&mut buf, &reports).unwrap();
        let rows = read_long(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[1].mean_cycle_time, 2.618033988749895);
        assert_eq!(rows[0].lambda, Some(0.55));
        assert_eq!(rows[3].lambda, None);
        assert_eq!(rows[2].seed, 12);
    }

    #[test]
    fn summary_round_trip() {
        let reports = vec![report("spt", None)];
        let mut buf = Vec::new();
        write_summary(&mut buf, &reports, Some(&[true])).unwrap();
        let rows = read_summary(buf.as_slice()).unwrap();
        assert_eq!(rows[0].mean, 5.183871387597682);
        assert_eq!(rows[0].utilization, "0.25;0.9");
        assert_eq!(rows[0].tied_best, Some(true));
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &[], None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut buf = Vec::new();
        write_long(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model,policy,lambda,replication,seed,mean_cycle_time\n");
    }
}

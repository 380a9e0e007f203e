//! CSV and JSON emission.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::commands::{AdaptReport, DemoRow, FitSummary, ResultRow};
use crate::config::Format;
use crate::error::CliError;

pub const SCHEMA: &str = "advreg-schema v1";

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn header(out: &mut dyn Write, timestamps: bool) -> Result<(), CliError> {
    writeln!(out, "# {SCHEMA}")?;
    if timestamps {
        writeln!(out, "# generated_unix {}", unix_now())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

fn json<T: Serialize>(out: &mut dyn Write, body: &T, timestamps: bool) -> Result<(), CliError> {
    let env = Envelope { schema: SCHEMA, generated_unix: timestamps.then(unix_now), body };
    serde_json::to_writer_pretty(&mut *out, &env)?;
    writeln!(out)?;
    Ok(())
}

fn csv_rows<T: Serialize>(out: &mut dyn Write, rows: &[T], timestamps: bool) -> Result<(), CliError> {
    header(out, timestamps)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Rows<'a, T> {
    rows: &'a [T],
}

pub fn write_rows(out: &mut dyn Write, rows: &[ResultRow], format: Format, timestamps: bool) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            if rows.is_empty() {
                header(out, timestamps)?;
                writeln!(
                    out,
                    "n,r,beta,q,estimator,attack,risk_mean,risk_stderr,slope_local,phase,mean_selected_h,wall_ms"
                )?;
                return Ok(());
            }
            csv_rows(out, rows, timestamps)
        }
        Format::Json => json(out, &Rows { rows }, timestamps),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct CellCsv<'a> {
    estimator: &'a str,
    cell: usize,
    center: String,
    h: f64,
    n_local: usize,
    regularized: bool,
    coefficients: String,
}

pub fn write_fit(out: &mut dyn Write, fits: &[FitSummary], format: Format, timestamps: bool) -> Result<(), CliError> {
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Body<'a> {
                estimators: &'a [FitSummary],
            }
            json(out, &Body { estimators: fits }, timestamps)
        }
        Format::Csv => {
            let rows: Vec<CellCsv> = fits
                .iter()
                .flat_map(|f| {
                    f.cells.iter().map(move |c| CellCsv {
                        estimator: &f.estimator,
                        cell: c.cell,
                        center: join(&c.center),
                        h: c.h,
                        n_local: c.n_local,
                        regularized: c.regularized,
                        coefficients: c.coefficients.as_deref().map(join).unwrap_or_default(),
                    })
                })
                .collect();
            csv_rows(out, &rows, timestamps)
        }
    }
}

pub fn write_adapt(out: &mut dyn Write, report: &AdaptReport, format: Format, timestamps: bool) -> Result<(), CliError> {
    match format {
        Format::Json => json(out, report, timestamps),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                cell: usize,
                center: String,
                selected_h: f64,
                n_local: usize,
            }
            let rows: Vec<Row> = report
                .cells
                .iter()
                .map(|c| Row { cell: c.cell, center: join(&c.center), selected_h: c.h, n_local: c.n_local })
                .collect();
            csv_rows(out, &rows, timestamps)
        }
    }
}

pub fn write_demo(out: &mut dyn Write, rows: &[DemoRow], format: Format, timestamps: bool) -> Result<(), CliError> {
    match format {
        Format::Json => json(out, &Rows { rows }, timestamps),
        Format::Csv => {
            #[derive(Serialize)]
            struct Flat {
                r: f64,
                beta: f64,
                q: crate::config::Real,
                g: f64,
                g_dense: f64,
                kappa: f64,
                min_hamming: Option<usize>,
                hamming_required: Option<f64>,
                estimator: String,
                n: usize,
                risk_mean: f64,
                risk_stderr: f64,
            }
            let flat: Vec<Flat> = rows
                .iter()
                .flat_map(|d| {
                    d.risks.iter().map(move |h| Flat {
                        r: d.r,
                        beta: d.beta,
                        q: d.q,
                        g: d.g,
                        g_dense: d.g_dense,
                        kappa: d.kappa,
                        min_hamming: d.packing.as_ref().map(|p| p.min_hamming),
                        hamming_required: d.packing.as_ref().map(|p| p.required),
                        estimator: h.estimator.clone(),
                        n: h.n,
                        risk_mean: h.risk_mean,
                        risk_stderr: h.risk_stderr,
                    })
                })
                .collect();
            csv_rows(out, &flat, timestamps)
        }
    }
}

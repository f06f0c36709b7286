//! CSV ingest: header row with `y`, `d`, `z` and optional `x1..xm`.

use std::collections::BTreeSet;
use std::io::Read;

use late_core::{Observation, Sample};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub sample: Sample,
    /// Original instrument values; level `k` of the sample is `z_levels[k]`.
    pub z_levels: Vec<i64>,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Columns {
    y: usize,
    d: usize,
    z: usize,
    x: Vec<(u32, usize)>,
}

fn locate(headers: &csv::StringRecord) -> Result<(Columns, Vec<String>), CliError> {
    let find = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(CliError::MissingColumn(name))
    };
    let (y, d, z) = (find("y")?, find("d")?, find("z")?);
    let mut x: Vec<(u32, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let h = h.trim();
            h.strip_prefix('x')
                .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|rest| rest.parse().ok())
                .map(|k| (k, i))
        })
        .collect();
    x.sort_unstable();
    let names = x.iter().map(|(k, _)| format!("x{k}")).collect();
    Ok((Columns { y, d, z, x }, names))
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: u64, name: &str) -> Result<&'a str, CliError> {
    rec.get(i).map(str::trim).ok_or_else(|| CliError::Csv {
        line,
        msg: format!("missing value for column {name}"),
    })
}

fn real(s: &str, line: u64, name: &str) -> Result<f64, CliError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Csv {
            line,
            msg: format!("column {name}: '{s}' is not a finite number"),
        }),
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Ingested, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let (cols, covariates) = locate(&headers)?;

    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let y = real(field(&rec, cols.y, line, "y")?, line, "y")?;
        let d = match field(&rec, cols.d, line, "d")? {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::Csv {
                    line,
                    msg: format!("column d: '{other}' is not 0 or 1"),
                })
            }
        };
        let zs = field(&rec, cols.z, line, "z")?;
        let z: i64 = zs.parse().map_err(|_| CliError::Csv {
            line,
            msg: format!("column z: '{zs}' is not an integer"),
        })?;
        let x = cols
            .x
            .iter()
            .map(|&(k, i)| {
                let name = format!("x{k}");
                real(field(&rec, i, line, &name)?, line, &name)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        raw.push((y, d, z, x));
    }
    if raw.is_empty() {
        return Err(CliError::Csv {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let z_levels: Vec<i64> = raw.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let obs = raw
        .into_iter()
        .map(|(y, d, z, x)| {
            let level = z_levels.binary_search(&z).expect("level collected above");
            Observation::with_covariates(y, d, level, x)
        })
        .collect();
    Ok(Ingested {
        sample: Sample::new(obs)?,
        z_levels,
        covariates,
    })
}

fn csv_error(e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    CliError::Csv {
        line,
        msg: e.to_string(),
    }
}

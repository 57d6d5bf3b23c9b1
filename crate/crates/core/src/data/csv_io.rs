use std::io::{Read, Write};
use std::path::Path;

use super::{CohortRecord, Dataset, Schema};
use crate::error::{Error, Result};
use crate::model::N_PATHWAYS;

const RESERVED: [&str; 5] = ["sample_id", "cohort_id", "cancer_type", "treatment", "response"];

struct Layout {
    reserved: [usize; 5],
    expr: Vec<usize>,
    pathway: Vec<usize>,
    biomarker: Vec<usize>,
    tide: Vec<usize>,
    ipres: Vec<usize>,
    pheno: Vec<usize>,
}

fn header_error(column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row: 0,
        column: column.into(),
        message: message.into(),
    }
}

fn layout(headers: &csv::StringRecord) -> Result<(Layout, Schema)> {
    let mut reserved = [usize::MAX; 5];
    let mut schema = Schema::default();
    let (mut expr, mut biomarker, mut tide, mut ipres, mut pheno) = (vec![], vec![], vec![], vec![], vec![]);
    let mut pathway: Vec<(usize, usize)> = Vec::new();

    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if let Some(pos) = RESERVED.iter().position(|r| *r == h) {
            if reserved[pos] != usize::MAX {
                return Err(header_error(h, "duplicate column"));
            }
            reserved[pos] = i;
        } else if let Some(g) = h.strip_prefix("expr_") {
            expr.push(i);
            schema.gene_names.push(g.to_string());
        } else if let Some(k) = h.strip_prefix("pw_") {
            let k: usize = k
                .parse()
                .map_err(|_| header_error(h, "pathway columns must be named pw_1..pw_42"))?;
            pathway.push((k, i));
        } else if let Some(n) = h.strip_prefix("bm_") {
            biomarker.push(i);
            schema.biomarker_names.push(n.to_string());
        } else if let Some(n) = h.strip_prefix("tide_") {
            tide.push(i);
            schema.tide_names.push(n.to_string());
        } else if let Some(n) = h.strip_prefix("ipres_") {
            ipres.push(i);
            schema.ipres_names.push(n.to_string());
        } else if let Some(n) = h.strip_prefix("pheno_") {
            pheno.push(i);
            schema.pheno_names.push(n.to_string());
        } else {
            log::warn!("ignoring unrecognized column `{h}`");
        }
    }
    if let Some(pos) = reserved.iter().position(|&r| r == usize::MAX) {
        return Err(header_error(RESERVED[pos], "required column missing"));
    }
    if expr.is_empty() {
        return Err(header_error("expr_*", "no expression columns"));
    }
    pathway.sort_unstable();
    if !pathway.is_empty() {
        let ks: Vec<usize> = pathway.iter().map(|p| p.0).collect();
        if ks != (1..=N_PATHWAYS).collect::<Vec<_>>() {
            return Err(header_error("pw_*", format!("expected pw_1..pw_{N_PATHWAYS}, found {} pathway columns", ks.len())));
        }
        schema.has_pathways = true;
    }
    Ok((
        Layout {
            reserved,
            expr,
            pathway: pathway.into_iter().map(|p| p.1).collect(),
            biomarker,
            tide,
            ipres,
            pheno,
        },
        schema,
    ))
}

fn cell_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row,
        column: column.into(),
        message: message.into(),
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| cell_error(row, column, format!("not a number: `{raw}`")))?;
    if !v.is_finite() {
        return Err(cell_error(row, column, "non-finite value"));
    }
    Ok(v)
}

/// All cells empty → `None`; all filled → `Some`; mixed → error.
fn parse_group(rec: &csv::StringRecord, cols: &[usize], headers: &csv::StringRecord, row: usize) -> Result<Option<Vec<f64>>> {
    if cols.is_empty() {
        return Ok(None);
    }
    let empty = cols.iter().filter(|&&c| rec[c].trim().is_empty()).count();
    if empty == cols.len() {
        return Ok(None);
    }
    if empty > 0 {
        let c = cols.iter().find(|&&c| rec[c].trim().is_empty()).unwrap();
        return Err(cell_error(row, &headers[*c], "partially missing column group; leave the whole group empty"));
    }
    cols.iter()
        .map(|&c| parse_number(&rec[c], row, &headers[c]))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (layout, schema) = layout(&headers)?;
    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = result.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => cell_error(
                row,
                "*",
                format!("ragged row: expected {expected_len} fields, got {len}"),
            ),
            _ => Error::Csv(e),
        })?;
        let get = |k: usize| rec[layout.reserved[k]].trim().to_string();

        let treatment_raw = get(3);
        if treatment_raw.is_empty() {
            return Err(cell_error(row, "treatment", "missing treatment annotation"));
        }
        let treatment = treatment_raw
            .parse()
            .map_err(|e: Error| cell_error(row, "treatment", e.to_string()))?;
        let response = match get(4).as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(cell_error(row, "response", format!("label `{other}` is not 0 or 1"))),
        };
        let mut expression = Vec::with_capacity(layout.expr.len());
        for &c in &layout.expr {
            let v = parse_number(&rec[c], row, &headers[c])?;
            if v < 0.0 {
                return Err(cell_error(row, &headers[c], format!("negative TPM {v}")));
            }
            expression.push(v);
        }
        records.push(CohortRecord {
            sample_id: get(0),
            cohort_id: get(1),
            cancer_type: get(2),
            treatment,
            expression,
            response,
            pathway_scores: parse_group(&rec, &layout.pathway, &headers, row)?,
            biomarker_scores: parse_group(&rec, &layout.biomarker, &headers, row)?,
            tide: parse_group(&rec, &layout.tide, &headers, row)?,
            ipres: parse_group(&rec, &layout.ipres, &headers, row)?,
            pheno: parse_group(&rec, &layout.pheno, &headers, row)?,
        });
    }
    Dataset::new(schema, records)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_csv_to(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let s = &dataset.schema;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = RESERVED.iter().map(|r| r.to_string()).collect();
    header.extend(s.gene_names.iter().map(|g| format!("expr_{g}")));
    if s.has_pathways {
        header.extend((1..=N_PATHWAYS).map(|k| format!("pw_{k}")));
    }
    header.extend(s.biomarker_names.iter().map(|n| format!("bm_{n}")));
    header.extend(s.tide_names.iter().map(|n| format!("tide_{n}")));
    header.extend(s.ipres_names.iter().map(|n| format!("ipres_{n}")));
    header.extend(s.pheno_names.iter().map(|n| format!("pheno_{n}")));
    w.write_record(&header)?;

    let group = |out: &mut Vec<String>, values: &Option<Vec<f64>>, dim: usize| match values {
        Some(v) => out.extend(v.iter().map(|x| x.to_string())),
        None => out.extend(std::iter::repeat_n(String::new(), dim)),
    };
    for r in &dataset.records {
        let mut row = vec![
            r.sample_id.clone(),
            r.cohort_id.clone(),
            r.cancer_type.clone(),
            r.treatment.to_string(),
            r.response.to_string(),
        ];
        row.extend(r.expression.iter().map(|x| x.to_string()));
        if s.has_pathways {
            group(&mut row, &r.pathway_scores, N_PATHWAYS);
        }
        group(&mut row, &r.biomarker_scores, s.biomarker_dim());
        group(&mut row, &r.tide, s.tide_dim());
        group(&mut row, &r.ipres, s.ipres_dim());
        group(&mut row, &r.pheno, s.pheno_dim());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    write_csv_to(dataset, std::fs::File::create(path)?)
}

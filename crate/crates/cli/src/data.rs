//! Dataset ingestion for the runner.

use adt_core::data::{load_idx, make_synthetic, Dataset};
use adt_core::grad::Tensor;

use crate::config::{CsvConfig, DatasetConfig};
use crate::error::CliError;

/// Loads or synthesizes the configured data and splits it into (train, test).
pub fn load_dataset(cfg: &DatasetConfig) -> Result<(Dataset, Dataset), CliError> {
    let data = if let Some(s) = &cfg.synthetic {
        make_synthetic(s.kind, s.n, s.noise, s.seed)?
    } else if let Some(c) = &cfg.csv {
        load_csv(c)?
    } else if let Some(i) = &cfg.idx {
        load_idx(&i.images, &i.labels)?
    } else {
        return Err(CliError::Config("dataset has no source".into()));
    };
    if data.len() < 2 {
        return Err(CliError::Config(
            "dataset needs at least two examples to split".into(),
        ));
    }
    Ok(data.split(cfg.test_fraction, cfg.split_seed)?)
}

pub fn load_csv(cfg: &CsvConfig) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(cfg.header)
        .trim(csv::Trim::All)
        .from_path(&cfg.path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cols = record.len();
        if cols < 2 {
            return Err(CliError::Io(format!(
                "csv row {row} has fewer than two columns"
            )));
        }
        if *width.get_or_insert(cols) != cols {
            return Err(CliError::Io(format!(
                "csv row {row} has {cols} columns, expected {}",
                width.unwrap_or(0)
            )));
        }
        let label_col = cfg.label_column.unwrap_or(cols - 1);
        if label_col >= cols {
            return Err(CliError::Config(format!(
                "dataset.csv.label_column {label_col} but rows have {cols} columns"
            )));
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_col {
                let l = field.parse::<usize>().map_err(|_| {
                    CliError::Io(format!(
                        "csv row {row}: label `{field}` is not a class index"
                    ))
                })?;
                labels.push(l);
            } else {
                let v = field.parse::<f64>().map_err(|_| {
                    CliError::Io(format!(
                        "csv row {row}, column {j}: `{field}` is not a number"
                    ))
                })?;
                features.push(v);
            }
        }
    }
    let Some(cols) = width else {
        return Err(CliError::Io(format!(
            "{} has no data rows",
            cfg.path.display()
        )));
    };
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let x = Tensor::new(vec![labels.len(), cols - 1], features)?;
    Ok(if cfg.normalize {
        Dataset::from_raw(x, labels, classes)?
    } else {
        Dataset::new(x, labels, classes)?
    })
}

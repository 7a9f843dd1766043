//! Correlation of TBI with model attributes.

use std::collections::BTreeMap;

use tempora_core::calendar::epoch_days;
use tempora_core::stats::{pearson, StatsError};

use crate::io::ModelAttributeRow;
use crate::report::{fixed, Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    /// `None` when the attribute or the TBI values do not vary.
    pub r: Option<f64>,
    pub n: usize,
}

/// Attribute columns in output order: size, release date (as days since
/// 1970-01-01), then each benchmark.
pub fn attribute_values(attrs: &[ModelAttributeRow]) -> Vec<(String, BTreeMap<&str, f64>)> {
    let mut out: Vec<(String, BTreeMap<&str, f64>)> = vec![
        (
            "size_params".into(),
            attrs.iter().filter_map(|a| a.size_params.map(|v| (a.model_name.as_str(), v))).collect(),
        ),
        (
            "release_date".into(),
            attrs
                .iter()
                .filter_map(|a| a.release_date.map(|d| (a.model_name.as_str(), epoch_days(d) as f64)))
                .collect(),
        ),
    ];
    let benchmarks: std::collections::BTreeSet<&String> = attrs.iter().flat_map(|a| a.external_scores.keys()).collect();
    for b in benchmarks {
        out.push((
            b.clone(),
            attrs
                .iter()
                .filter_map(|a| a.external_scores.get(b).map(|v| (a.model_name.as_str(), *v)))
                .collect(),
        ));
    }
    out
}

/// Pearson r of TBI against each attribute over the models that have both.
pub fn correlate_attributes(
    tbi: &[(String, f64)],
    attrs: &[ModelAttributeRow],
) -> Result<Vec<(String, Correlation)>, StatsError> {
    let mut out = Vec::new();
    for (name, values) in attribute_values(attrs) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = tbi
            .iter()
            .filter_map(|(m, t)| values.get(m.as_str()).map(|v| (*v, *t)))
            .unzip();
        let n = xs.len();
        let r = match pearson(&xs, &ys) {
            Ok(r) => Some(r),
            Err(StatsError::ZeroVariance) | Err(StatsError::TooFewPoints(_)) => None,
            Err(e) => return Err(e),
        };
        out.push((name, Correlation { r, n }));
    }
    Ok(out)
}

/// One column per dataset; cells read "0.504 (n=32)" or "n/a (n=k)".
pub fn correlation_table(per_dataset: &[(String, Vec<(String, Correlation)>)]) -> Table {
    let mut headers = vec!["attribute".to_string()];
    headers.extend(per_dataset.iter().map(|(d, _)| d.clone()));
    let mut t = Table::new(headers);
    let attributes: Vec<&String> = per_dataset
        .first()
        .map(|(_, rows)| rows.iter().map(|(a, _)| a).collect())
        .unwrap_or_default();
    for a in attributes {
        let mut row = vec![Cell::plain(a.as_str())];
        for (_, rows) in per_dataset {
            let cell = match rows.iter().find(|(x, _)| x == a) {
                Some((_, c)) => match c.r {
                    Some(r) => format!("{} (n={})", fixed(r, 3), c.n),
                    None => format!("n/a (n={})", c.n),
                },
                None => "n/a (n=0)".into(),
            };
            row.push(Cell::plain(cell));
        }
        t.push(row);
    }
    t
}

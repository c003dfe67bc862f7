//! Aggregation of run reports into a per-method table with paired p-values
//! against the `dnn` rows of the same group.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use treepgm::error::{Error, Result};
use treepgm::math::fmt17;
use treepgm::metrics::{paired_ttest_less, ReportRow};

pub const TABLE_HEADER: &str = "dataset,weight_scale,epochs,metric,method,n,mean,p_vs_dnn";
pub const RUNTIME_HEADER: &str = "method,dataset,weight_scale,epochs,seed,seconds_per_epoch";
pub const RUNTIME_TABLE_HEADER: &str = "dataset,weight_scale,epochs,method,n,mean_seconds_per_epoch";

pub const BASELINE: &str = "dnn";

type GroupKey = (String, String, usize, String);

fn method_order(m: &str) -> (bool, String) {
    (m != BASELINE, m.to_string())
}

/// One aggregated line.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub dataset: String,
    pub weight_scale: String,
    pub epochs: usize,
    pub metric: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    /// `None` for the baseline itself, when the group has no baseline, or
    /// with fewer than two seeds.
    /// `Some(NaN)` when the paired differences have zero variance.
    pub p_vs_dnn: Option<f64>,
}

pub fn aggregate(rows: &[ReportRow]) -> Result<Vec<TableRow>> {
    let mut groups: BTreeMap<GroupKey, BTreeMap<(bool, String), BTreeMap<u64, f64>>> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.weight_scale.to_string(), r.epochs, r.metric.clone());
        let by_seed = groups.entry(key).or_default().entry(method_order(&r.method)).or_default();
        if by_seed.insert(r.seed, r.value).is_some() {
            return Err(Error::Usage(format!(
                "duplicate row: method {} dataset {} metric {} seed {}",
                r.method, r.dataset, r.metric, r.seed
            )));
        }
    }
    let mut out = Vec::new();
    for ((dataset, weight_scale, epochs, metric), methods) in groups {
        let base = methods.get(&method_order(BASELINE)).cloned();
        for ((_, method), by_seed) in methods {
            let values: Vec<f64> = by_seed.values().copied().collect();
            let p_vs_dnn = match &base {
                Some(b) if method != BASELINE => {
                    if !b.keys().eq(by_seed.keys()) {
                        return Err(Error::Usage(format!(
                            "method {method} and {BASELINE} have different seed sets for {dataset} {weight_scale} {epochs} {metric}"
                        )));
                    }
                    let bv: Vec<f64> = b.values().copied().collect();
                    match paired_ttest_less(&values, &bv) {
                        _ if values.len() < 2 => None,
                        Ok(p) => Some(p),
                        Err(Error::Degenerate(_)) => Some(f64::NAN),
                        Err(e) => return Err(e),
                    }
                }
                _ => None,
            };
            out.push(TableRow {
                dataset: dataset.clone(),
                weight_scale: weight_scale.clone(),
                epochs,
                metric: metric.clone(),
                method,
                n: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                p_vs_dnn,
            });
        }
    }
    Ok(out)
}

pub fn table_to_csv(rows: &[TableRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in rows {
        let p = r.p_vs_dnn.map_or(String::new(), fmt17);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.weight_scale,
            r.epochs,
            r.metric,
            r.method,
            r.n,
            fmt17(r.mean),
            p
        )
        .unwrap();
    }
    s
}

/// Per-run wall-clock line of the runtime sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeRow {
    pub method: String,
    pub dataset: String,
    pub weight_scale: f64,
    pub epochs: usize,
    pub seed: u64,
    pub seconds_per_epoch: f64,
}

impl RuntimeRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method, self.dataset, self.weight_scale, self.epochs, self.seed, self.seconds_per_epoch
        )
    }
}

pub fn runtime_from_csv(text: &str) -> Result<Vec<RuntimeRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RUNTIME_HEADER => {}
        Some((i, _)) => return Err(Error::parse(i + 1, format!("expected header `{RUNTIME_HEADER}`"))),
        None => return Ok(Vec::new()),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = |what: &str| Error::parse(i + 1, format!("bad {what}"));
            if f.len() != 6 {
                return Err(bad("field count"));
            }
            Ok(RuntimeRow {
                method: f[0].into(),
                dataset: f[1].into(),
                weight_scale: f[2].parse().map_err(|_| bad("weight_scale"))?,
                epochs: f[3].parse().map_err(|_| bad("epochs"))?,
                seed: f[4].parse().map_err(|_| bad("seed"))?,
                seconds_per_epoch: f[5].parse().map_err(|_| bad("seconds_per_epoch"))?,
            })
        })
        .collect()
}

/// Mean seconds per epoch per (dataset, weight, epochs, method).
pub fn aggregate_runtime(rows: &[RuntimeRow]) -> String {
    let mut groups: BTreeMap<(String, String, usize, (bool, String)), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.weight_scale.to_string(), r.epochs, method_order(&r.method)))
            .or_default()
            .push(r.seconds_per_epoch);
    }
    let mut s = format!("{RUNTIME_TABLE_HEADER}\n");
    for ((d, w, e, (_, m)), v) in groups {
        writeln!(s, "{d},{w},{e},{m},{},{}", v.len(), v.iter().sum::<f64>() / v.len() as f64).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, value: f64) -> ReportRow {
        ReportRow {
            method: method.into(),
            dataset: "bn".into(),
            weight_scale: 0.3,
            epochs: 100,
            metric: "mae".into(),
            value,
            seed,
        }
    }

    #[test]
    fn single_method_has_no_p_values() {
        let t = aggregate(&[row("hmc-10", 0, 0.1), row("hmc-10", 1, 0.3)]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].p_vs_dnn, None);
        assert!((t[0].mean - 0.2).abs() < 1e-15);
        assert!(table_to_csv(&t).lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn baseline_first_with_p_values() {
        let rows = vec![
            row("hmc-10", 0, 0.10),
            row("dnn", 0, 0.20),
            row("hmc-10", 1, 0.11),
            row("dnn", 1, 0.22),
            row("hmc-10", 2, 0.09),
            row("dnn", 2, 0.19),
        ];
        let t = aggregate(&rows).unwrap();
        assert_eq!(t[0].method, "dnn");
        assert_eq!(t[0].p_vs_dnn, None);
        assert!(t[1].p_vs_dnn.unwrap() < 0.01);
    }

    #[test]
    fn mismatched_seeds_error() {
        let rows = vec![row("dnn", 0, 0.2), row("dnn", 1, 0.2), row("sgd", 0, 0.1), row("sgd", 2, 0.1)];
        assert!(matches!(aggregate(&rows), Err(Error::Usage(_))));
    }

    #[test]
    fn runtime_round_trip() {
        let r = RuntimeRow {
            method: "gibbs".into(),
            dataset: "bn".into(),
            weight_scale: 0.3,
            epochs: 100,
            seed: 3,
            seconds_per_epoch: 0.25,
        };
        let text = format!("{RUNTIME_HEADER}\n{}\n", r.to_csv_line());
        assert_eq!(runtime_from_csv(&text).unwrap(), vec![r.clone()]);
        assert!(aggregate_runtime(&[r]).contains("bn,0.3,100,gibbs,1,0.25"));
    }
}

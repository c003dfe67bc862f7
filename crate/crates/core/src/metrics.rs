//! Calibration metrics and the paired comparison test.

use std::fmt::Write as _;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::math::fmt17;

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Usage(format!(
            "mae needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Expected calibration error over `bins` equal-width bins of the predicted
/// positive-class probability. A prediction of exactly 1 falls in the last bin.
pub fn ece(pred: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::Usage(format!(
            "ece needs equal non-empty lengths, got {} and {}",
            pred.len(),
            labels.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Usage("ece needs at least one bin".into()));
    }
    if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Usage("ece predictions must lie in [0, 1]".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut pos = vec![0.0; bins];
    for (&p, &y) in pred.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += p;
        pos[b] += y as u8 as f64;
    }
    let n = pred.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            c / n * (pos[b] / c - conf[b] / c).abs()
        })
        .sum())
}

/// One-sided paired t-test of `mean(a) < mean(b)`: `P(T <= t)` for Student's
/// t with `n - 1` degrees of freedom.
pub fn paired_ttest_less(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Usage(format!(
            "paired t-test needs equal lengths of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(dist.cdf(t))
}

/// One line of a run report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub weight_scale: f64,
    pub epochs: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub const REPORT_HEADER: &str = "method,dataset,weight_scale,epochs,metric,value,seed";

impl ReportRow {
    pub fn to_csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{}",
            self.method,
            self.dataset,
            self.weight_scale,
            self.epochs,
            self.metric,
            fmt17(self.value),
            self.seed
        )
        .unwrap();
        s
    }
}

pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn report_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        Some((ln, _)) => return Err(Error::parse(ln, format!("expected header `{REPORT_HEADER}`"))),
        None => return Err(Error::parse(1, "empty report")),
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::parse(ln, format!("expected 7 fields, found {}", f.len())));
            }
            let bad = |what: &str| Error::parse(ln, format!("bad {what}"));
            Ok(ReportRow {
                method: f[0].to_string(),
                dataset: f[1].to_string(),
                weight_scale: f[2].parse().map_err(|_| bad("weight_scale"))?,
                epochs: f[3].parse().map_err(|_| bad("epochs"))?,
                metric: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad("value"))?,
                seed: f[6].parse().map_err(|_| bad("seed"))?,
            })
        })
        .collect()
}

pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        // 0.8 is not representable; the result is within one ulp of 0.2
        assert!((mae(&[0.2, 0.8], &[0.0, 1.0]).unwrap() - 0.2).abs() <= f64::EPSILON * 0.2);
        assert_eq!(mae(&[0.5; 4], &[0.5; 4]).unwrap(), 0.0);
        assert!(mae(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[0.0, 1.0, 1.0, 0.0], &[false, true, true, false], 10).unwrap(), 0.0);
        assert_eq!(ece(&[0.5; 6], &[true, false, true, false, true, false], 10).unwrap(), 0.0);
        assert_eq!(ece(&[0.9; 5], &[false; 5], 10).unwrap(), 0.9);
        assert!(ece(&[], &[], 10).is_err());
    }

    #[test]
    fn ece_ignores_order_within_bins() {
        let p = [0.12, 0.15, 0.18, 0.55, 0.52];
        let y = [true, false, false, true, false];
        let a = ece(&p, &y, 10).unwrap();
        let b = ece(&[0.18, 0.12, 0.15, 0.52, 0.55], &[false, true, false, false, true], 10).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn constant_shift_is_significant() {
        // an exact shift has zero variance, so a tiny alternating jitter is added
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, v)| v - 1.0 + if i % 2 == 0 { 1e-9 } else { -1e-9 }).collect();
        assert!(paired_ttest_less(&a, &b).unwrap() < 1e-6);
        let exact: Vec<f64> = b.iter().map(|v| v - 1.0).collect();
        assert!(matches!(paired_ttest_less(&exact, &b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn swapped_arguments_complement() {
        let a = [0.3, 0.1, 0.4, 0.15, 0.9];
        let b = [0.2, 0.25, 0.3, 0.1, 0.7];
        let p = paired_ttest_less(&a, &b).unwrap();
        let q = paired_ttest_less(&b, &a).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_is_uniformish() {
        let mut r = crate::rng::master(4);
        let ps: Vec<f64> = (0..2000)
            .map(|_| {
                let b: Vec<f64> = (0..20).map(|_| r.random::<f64>()).collect();
                let a: Vec<f64> = b.iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
                paired_ttest_less(&a, &b).unwrap()
            })
            .collect();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        assert!((mean - 0.5).abs() < 0.03, "{mean}");
        let small = ps.iter().filter(|&&p| p < 0.05).count() as f64 / ps.len() as f64;
        assert!((small - 0.05).abs() < 0.02, "{small}");
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![ReportRow {
            method: "hmc-10".into(),
            dataset: "bn".into(),
            weight_scale: 0.3,
            epochs: 100,
            metric: "mae".into(),
            value: 0.0123,
            seed: 7,
        }];
        let text = report_to_csv(&rows);
        assert_eq!(report_from_csv(&text).unwrap(), rows);
        assert!(report_from_csv("nope\n").is_err());
    }
}

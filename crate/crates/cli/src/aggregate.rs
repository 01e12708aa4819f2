//! Seed-level summaries of evaluation reports.

use std::collections::BTreeMap;

use hierlearn::MetricsReport;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub const CI_METHOD: &str = "normal approximation: mean ± 1.96·s/√n with the sample standard deviation s; undefined for n < 2";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    /// Reports in which the metric is defined.
    pub n: usize,
    pub mean: Option<f64>,
    pub half_width: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub ci_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub config_hash: String,
    pub head: String,
    pub options: String,
    pub split: String,
    pub class_count: usize,
    pub seeds: Vec<u64>,
    pub reports: Vec<String>,
    pub metrics: BTreeMap<&'static str, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub ci_method: &'static str,
    pub groups: Vec<GroupSummary>,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            n,
            mean: None,
            half_width: None,
            lower: None,
            upper: None,
            ci_defined: false,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MetricSummary {
            n,
            mean: Some(mean),
            half_width: None,
            lower: None,
            upper: None,
            ci_defined: false,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let hw = Z_95 * var.sqrt() / (n as f64).sqrt();
    MetricSummary {
        n,
        mean: Some(mean),
        half_width: Some(hw),
        lower: Some(mean - hw),
        upper: Some(mean + hw),
        ci_defined: true,
    }
}

/// Groups `(path, report)` pairs by config hash; within a group every report
/// must describe the same head, options, split and class set.
pub fn aggregate(reports: &[(String, MetricsReport)]) -> CliResult<Aggregate> {
    let mut groups: BTreeMap<&str, Vec<&(String, MetricsReport)>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.1.metadata.config_hash.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (hash, members) in groups {
        let first = &members[0].1.metadata;
        for (_, rep) in &members[1..] {
            let m = &rep.metadata;
            let checks: [(&'static str, String, String); 4] = [
                ("head", first.head.clone(), m.head.clone()),
                ("options", first.options.clone(), m.options.clone()),
                ("split", first.split.clone(), m.split.clone()),
                ("class_count", first.class_count.to_string(), m.class_count.to_string()),
            ];
            for (field, a, b) in checks {
                if a != b {
                    return Err(CliError::MixedConfigs {
                        hash: hash.to_string(),
                        field,
                        a,
                        b,
                    });
                }
            }
        }
        let mut metrics = BTreeMap::new();
        for (i, (name, _)) in members[0].1.fields().into_iter().enumerate() {
            let values: Vec<f64> = members.iter().filter_map(|(_, r)| r.fields()[i].1).collect();
            metrics.insert(name, summarize(&values));
        }
        out.push(GroupSummary {
            config_hash: hash.to_string(),
            head: first.head.clone(),
            options: first.options.clone(),
            split: first.split.clone(),
            class_count: first.class_count,
            seeds: members.iter().map(|(_, r)| r.metadata.seed).collect(),
            reports: members.iter().map(|(p, _)| p.clone()).collect(),
            metrics,
        });
    }
    Ok(Aggregate {
        ci_method: CI_METHOD,
        groups: out,
    })
}

/// One row per group and metric, for plotting tools.
pub fn to_csv(agg: &Aggregate) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut s = String::from("config_hash,head,options,split,metric,n,mean,half_width,lower,upper\n");
    for g in &agg.groups {
        for (name, m) in &g.metrics {
            s.push_str(&format!(
                "{},{},\"{}\",{},{},{},{},{},{},{}\n",
                g.config_hash,
                g.head,
                g.options,
                g.split,
                name,
                m.n,
                opt(m.mean),
                opt(m.half_width),
                opt(m.lower),
                opt(m.upper)
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_calculation() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, Some(3.0));
        // sample variance 2.5
        let want = 1.96 * 2.5f64.sqrt() / 5f64.sqrt();
        assert!((s.half_width.unwrap() - want).abs() < 1e-15);
        assert!(s.ci_defined);
    }

    #[test]
    fn identical_values_have_zero_width() {
        let s = summarize(&[0.7; 5]);
        assert_eq!(s.half_width, Some(0.0));
    }

    #[test]
    fn single_value_has_no_interval() {
        let s = summarize(&[0.4]);
        assert_eq!(s.mean, Some(0.4));
        assert_eq!(s.half_width, None);
        assert!(!s.ci_defined);
        assert_eq!(summarize(&[]).mean, None);
    }
}

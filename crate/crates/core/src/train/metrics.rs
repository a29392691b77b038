//! Error metrics in pascals and the evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Channel order of every per-channel metric.
pub const CHANNELS: [&str; 4] = ["sxx", "syy", "sxy", "svm"];

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::shape("empty field"));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// MAE over the largest magnitude found in either field, in percent.
pub fn mrpe(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let err = mae(pred, truth)?;
    let denom = pred.iter().chain(truth).fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(denom > 0.0) {
        return Err(Error::config("relative error undefined: both fields are identically zero"));
    }
    Ok(100.0 * err / denom)
}

/// Metrics of one predictor over one split. MAE is in pascals; both metrics
/// are computed per sample and averaged over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictor: String,
    pub split: String,
    pub samples: usize,
    pub mae: [f64; 4],
    pub mrpe: [f64; 4],
    /// MRPE of the all-zero predictor on the same samples.
    pub zero_mrpe: [f64; 4],
    /// Wall-clock inference time per sample, ms.
    pub infer_ms: Vec<f64>,
}

impl EvalReport {
    pub fn mean_infer_ms(&self) -> f64 {
        if self.infer_ms.is_empty() {
            0.0
        } else {
            self.infer_ms.iter().sum::<f64>() / self.infer_ms.len() as f64
        }
    }

    /// `key=value` lines; floats use the shortest round-tripping form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "predictor={}", self.predictor).unwrap();
        writeln!(s, "split={}", self.split).unwrap();
        writeln!(s, "samples={}", self.samples).unwrap();
        for (name, vals) in [("mae", &self.mae), ("mrpe", &self.mrpe), ("zero_mrpe", &self.zero_mrpe)] {
            for (c, v) in CHANNELS.iter().zip(vals.iter()) {
                writeln!(s, "{name}_{c}={v}").unwrap();
            }
        }
        writeln!(s, "infer_ms_mean={}", self.mean_infer_ms()).unwrap();
        let per: Vec<String> = self.infer_ms.iter().map(|v| v.to_string()).collect();
        writeln!(s, "infer_ms={}", per.join(",")).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |r: String| Error::format("evaluation report", r);
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("no `=` in `{line}`")))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(bad(format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| map.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("`{k}` is not a number"))) };
        let channels = |prefix: &str| -> Result<[f64; 4]> {
            let mut out = [0.0; 4];
            for (o, c) in out.iter_mut().zip(CHANNELS) {
                *o = num(&format!("{prefix}_{c}"))?;
            }
            Ok(out)
        };
        let per = get("infer_ms")?;
        let infer_ms = if per.is_empty() {
            Vec::new()
        } else {
            per.split(',')
                .map(|v| v.parse().map_err(|_| bad("bad `infer_ms` entry".into())))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            predictor: get("predictor")?.clone(),
            split: get("split")?.clone(),
            samples: get("samples")?.parse().map_err(|_| bad("bad `samples`".into()))?,
            mae: channels("mae")?,
            mrpe: channels("mrpe")?,
            zero_mrpe: channels("zero_mrpe")?,
            infer_ms,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        assert_eq!(mae(&[1.0, 2.0, 3.0, 0.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        let truth = vec![10.0; 7];
        let pred = vec![9.0; 7];
        assert!((mrpe(&pred, &truth).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mrpe(&truth, &truth).unwrap(), 0.0);
        assert!(mrpe(&[0.0; 3], &[0.0; 3]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_predictor_formula() {
        let truth = [3.0, -8.0, 1.0, 0.5];
        let zero = [0.0; 4];
        let mean_abs = truth.iter().map(|v: &f64| v.abs()).sum::<f64>() / 4.0;
        assert!((mrpe(&zero, &truth).unwrap() - 100.0 * mean_abs / 8.0).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip() {
        let r = EvalReport {
            predictor: "model".into(),
            split: "test".into(),
            samples: 3,
            mae: [1.5e6, 0.1 + 0.2, 3.0, 1e-300],
            mrpe: [4.2, 4.8, 0.0, 16.0],
            zero_mrpe: [40.0, 41.0, 42.0, 1.0 / 3.0],
            infer_ms: vec![12.25, 13.0, 11.875],
        };
        assert_eq!(EvalReport::parse(&r.to_text()).unwrap(), r);
        assert!(EvalReport::parse("predictor=x\n").is_err());
    }

    proptest! {
        #[test]
        fn mrpe_is_scale_invariant(
            vals in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 2..40),
            c in 1e-6f64..1e6,
        ) {
            let pred: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let truth: Vec<f64> = vals.iter().map(|v| v.1).collect();
            prop_assume!(pred.iter().chain(&truth).any(|v| v.abs() > 1e-3));
            let a = mrpe(&pred, &truth).unwrap();
            let ps: Vec<f64> = pred.iter().map(|v| v * c).collect();
            let ts: Vec<f64> = truth.iter().map(|v| v * c).collect();
            let b = mrpe(&ps, &ts).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}

//! One-pass-evaluation scoring.
//!
//! Precision is sampled at centre-distance thresholds 0..=50 pixels and PR is
//! the sample at 20. Success is sampled at IoU thresholds 0, 0.05, …, 1.0 with
//! a strict `>`; the last sample uses `≥ 1` instead so it is not always zero.
//! SR is the mean of the 21 success samples. Every sequence has equal weight.

use std::collections::BTreeMap;

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::synthdata::KNOWN_TAGS;

pub const PRECISION_THRESHOLD: usize = 20;
pub const PRECISION_STEPS: usize = 51;
pub const SUCCESS_STEPS: usize = 21;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub name: String,
    pub pred: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub tags: Vec<String>,
}

impl TrackResult {
    fn check(&self) -> Result<()> {
        if self.pred.len() != self.gt.len() {
            return Err(Error::Data(format!(
                "{}: {} predictions for {} ground-truth frames",
                self.name,
                self.pred.len(),
                self.gt.len()
            )));
        }
        if self.gt.is_empty() {
            return Err(Error::Data(format!("{}: no frames", self.name)));
        }
        Ok(())
    }
}

pub fn precision_thresholds() -> Vec<f64> {
    (0..PRECISION_STEPS).map(|t| t as f64).collect()
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|i| i as f64 / 20.0).collect()
}

/// Fraction of frames whose centre distance is within each threshold.
pub fn precision_curve(r: &TrackResult) -> Result<Vec<f64>> {
    r.check()?;
    let d: Vec<f64> = r.pred.iter().zip(&r.gt).map(|(p, g)| p.center_distance(g)).collect();
    let n = d.len() as f64;
    Ok(precision_thresholds()
        .iter()
        .map(|&t| d.iter().filter(|&&x| x <= t).count() as f64 / n)
        .collect())
}

/// Fraction of frames whose IoU exceeds each threshold.
pub fn success_curve(r: &TrackResult) -> Result<Vec<f64>> {
    r.check()?;
    let o: Vec<f64> = r.pred.iter().zip(&r.gt).map(|(p, g)| iou(p, g)).collect();
    let n = o.len() as f64;
    Ok(success_thresholds()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let hit = |x: f64| if i + 1 == SUCCESS_STEPS { x >= 1.0 } else { x > t };
            o.iter().filter(|&&x| hit(x)).count() as f64 / n
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pr: f64,
    pub sr: f64,
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub sequences: usize,
}

/// Column-wise mean; each column is summed in sorted order so the result does
/// not depend on the order of `rows`.
fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows[0].len();
    (0..width)
        .map(|c| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

pub fn score(results: &[TrackResult]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Data("nothing to score".into()));
    }
    let prec = results.iter().map(precision_curve).collect::<Result<Vec<_>>>()?;
    let succ = results.iter().map(success_curve).collect::<Result<Vec<_>>>()?;
    let precision = column_mean(&prec);
    let success = column_mean(&succ);
    let mut sorted = success.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(EvalReport {
        pr: precision[PRECISION_THRESHOLD],
        sr: sorted.iter().sum::<f64>() / SUCCESS_STEPS as f64,
        precision,
        success,
        sequences: results.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeBreakdown {
    pub per_tag: BTreeMap<String, EvalReport>,
    /// Tags outside the known taxonomy; they are still scored.
    pub unknown: Vec<String>,
}

pub fn attribute_breakdown(results: &[TrackResult]) -> Result<AttributeBreakdown> {
    let mut groups: BTreeMap<String, Vec<TrackResult>> = BTreeMap::new();
    for r in results {
        for t in &r.tags {
            let list = groups.entry(t.clone()).or_default();
            if !list.iter().any(|x| x.name == r.name) {
                list.push(r.clone());
            }
        }
    }
    let unknown = groups
        .keys()
        .filter(|t| !KNOWN_TAGS.contains(&t.as_str()))
        .cloned()
        .collect();
    let per_tag = groups
        .into_iter()
        .map(|(t, rs)| Ok((t, score(&rs)?)))
        .collect::<Result<_>>()?;
    Ok(AttributeBreakdown { per_tag, unknown })
}

/// Curves as `curve,threshold,value` rows.
pub fn curves_csv(rep: &EvalReport) -> String {
    let mut s = String::from("curve,threshold,value\n");
    for (t, v) in precision_thresholds().iter().zip(&rep.precision) {
        s.push_str(&format!("precision,{t},{v:.6}\n"));
    }
    for (t, v) in success_thresholds().iter().zip(&rep.success) {
        s.push_str(&format!("success,{t:.2},{v:.6}\n"));
    }
    s
}

/// `key = value` summary with one `attr.<TAG>.pr/sr` pair per tag.
pub fn summary_text(rep: &EvalReport, attrs: Option<&AttributeBreakdown>) -> String {
    let mut s = format!(
        "sequences = {}\npr = {:.6}\nsr = {:.6}\n",
        rep.sequences, rep.pr, rep.sr
    );
    if let Some(a) = attrs {
        for (t, r) in &a.per_tag {
            s.push_str(&format!(
                "attr.{t}.sequences = {}\nattr.{t}.pr = {:.6}\nattr.{t}.sr = {:.6}\n",
                r.sequences, r.pr, r.sr
            ));
        }
        if !a.unknown.is_empty() {
            s.push_str(&format!("unknown_tags = {}\n", a.unknown.join(",")));
        }
    }
    s
}

/// Per-sequence rows: `name,frames,pr,sr,tags`.
pub fn sequences_csv(results: &[TrackResult]) -> Result<String> {
    let mut s = String::from("sequence,frames,pr,sr,tags\n");
    for r in results {
        let rep = score(std::slice::from_ref(r))?;
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.name,
            r.gt.len(),
            rep.pr,
            rep.sr,
            r.tags.join(" ")
        ));
    }
    Ok(s)
}

//! Centre-head training loss: focal heatmap term, GIoU and L1 box terms.
//!
//! Box regression is read at the ground-truth cell only. Boxes are compared in
//! search-normalised `xyxy` coordinates.

use super::model::HeadVars;
use super::TrackerConfig;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Real, Tape, Tensor, Var};

/// Gaussian splat centred on `(row, col)`, `σ = (2r + 1) / 6`, zero beyond `r` cells.
pub fn gaussian_target(grid: usize, row: usize, col: usize, radius: f64) -> Vec<f64> {
    let sigma = (2.0 * radius + 1.0) / 6.0;
    let mut out = vec![0.0; grid * grid];
    for r in 0..grid {
        for c in 0..grid {
            let d2 = (r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2);
            if d2 <= radius * radius {
                out[r * grid + c] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    out
}

/// Penalty-reduced focal loss (α = 2, β = 4) on logits, normalised by the
/// number of positive cells. Plain reference implementation.
pub fn focal_loss_value(logits: &[f64], target: &[f64]) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut sum = 0.0;
    let mut pos = 0usize;
    for (&x, &y) in logits.iter().zip(target) {
        let p = sigmoid(x);
        if y == 1.0 {
            pos += 1;
            sum += (1.0 - p).powi(2) * softplus(-x);
        } else {
            sum += (1.0 - y).powi(4) * p.powi(2) * softplus(x);
        }
    }
    sum / pos.max(1) as f64
}

/// Regression and heatmap targets for one search crop.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub heat: Vec<f64>,
    /// Raster index of the cell holding the box centre.
    pub cell: usize,
    /// `(x, y)` offset of the centre from the cell centre, in cells.
    pub offset: [f64; 2],
    /// `(w, h)` as fractions of the search side.
    pub size: [f64; 2],
    /// Ground truth in search-normalised `xyxy`.
    pub xyxy: [f64; 4],
}

impl LossTargets {
    /// `gt` is in search-crop pixels.
    pub fn new(cfg: &TrackerConfig, gt: &BBox) -> Result<Self> {
        if !(gt.w > 0.0 && gt.h > 0.0 && gt.x1.is_finite() && gt.y1.is_finite()) {
            return Err(Error::Input(format!("degenerate ground-truth box {gt}")));
        }
        let s = cfg.search as f64;
        if gt.x2() <= 0.0 || gt.y2() <= 0.0 || gt.x1 >= s || gt.y1 >= s {
            return Err(Error::Input(format!(
                "ground-truth box {gt} misses the {s}-pixel search region"
            )));
        }
        let grid = cfg.grid();
        let cell_px = s / grid as f64;
        let (cx, cy) = gt.center();
        let clamp = |v: f64| ((v / cell_px).floor().max(0.0) as usize).min(grid - 1);
        let (col, row) = (clamp(cx), clamp(cy));
        Ok(LossTargets {
            heat: gaussian_target(grid, row, col, cfg.target_radius()),
            cell: row * grid + col,
            offset: [cx / cell_px - col as f64 - 0.5, cy / cell_px - row as f64 - 0.5],
            size: [gt.w / s, gt.h / s],
            xyxy: gt.xyxy().map(|v| v / s),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub cls: f64,
    /// `1 − GIoU`.
    pub iou: f64,
    pub l1: f64,
    pub total: f64,
}

struct GiouOp {
    gt: [f64; 4],
}

struct GiouTerms {
    inter: f64,
    union: f64,
    encl: f64,
    iw: f64,
    ih: f64,
    ew: f64,
    eh: f64,
}

fn giou_terms(p: [f64; 4], g: [f64; 4]) -> GiouTerms {
    let iw = (p[2].min(g[2]) - p[0].max(g[0])).max(0.0);
    let ih = (p[3].min(g[3]) - p[1].max(g[1])).max(0.0);
    let inter = iw * ih;
    let area_p = (p[2] - p[0]) * (p[3] - p[1]);
    let area_g = (g[2] - g[0]) * (g[3] - g[1]);
    let ew = p[2].max(g[2]) - p[0].min(g[0]);
    let eh = p[3].max(g[3]) - p[1].min(g[1]);
    GiouTerms {
        inter,
        union: area_p + area_g - inter,
        encl: ew * eh,
        iw,
        ih,
        ew,
        eh,
    }
}

impl<T: Real> CustomOp<T> for GiouOp {
    fn name(&self) -> &'static str {
        "giou"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let d = inputs[0].data();
        let p = [d[0], d[1], d[2], d[3]].map(|v| v.as_f64());
        let g = self.gt;
        let k = giou_terms(p, g);
        let (i, u, e) = (k.inter, k.union, k.encl);
        let g_i = 1.0 / u + i / (u * u) - 1.0 / e;
        let g_a = -i / (u * u) + 1.0 / e;
        let g_e = -u / (e * e);
        let (pw, ph) = (p[2] - p[0], p[3] - p[1]);
        let overlap = k.iw > 0.0 && k.ih > 0.0;
        // d inter / d coord: only the coordinate that bounds the overlap moves it.
        let di = [
            if overlap && p[0] > g[0] { -k.ih } else { 0.0 },
            if overlap && p[1] > g[1] { -k.iw } else { 0.0 },
            if overlap && p[2] < g[2] { k.ih } else { 0.0 },
            if overlap && p[3] < g[3] { k.iw } else { 0.0 },
        ];
        let da = [-ph, -pw, ph, pw];
        let de = [
            if p[0] < g[0] { -k.eh } else { 0.0 },
            if p[1] < g[1] { -k.ew } else { 0.0 },
            if p[2] > g[2] { k.eh } else { 0.0 },
            if p[3] > g[3] { k.ew } else { 0.0 },
        ];
        let up = grad[0].as_f64();
        let out = (0..4)
            .map(|j| T::lit(up * (g_i * di[j] + g_a * da[j] + g_e * de[j])))
            .collect();
        Ok(vec![Some(out)])
    }
}

/// GIoU of a `1 × 4` predicted `xyxy` row against a fixed box; scalar output.
pub fn giou_var<T: Real>(tape: &Tape<T>, pred: Var, gt: [f64; 4]) -> Result<Var> {
    let v = tape.value(pred);
    if v.len() != 4 {
        return Err(Error::shape(
            "giou",
            format!("expected 4 coordinates, got shape {:?}", v.shape()),
        ));
    }
    let p = [v.data()[0], v.data()[1], v.data()[2], v.data()[3]].map(|x| x.as_f64());
    if p[2] <= p[0] || p[3] <= p[1] {
        return Err(Error::Contract(format!("predicted box {p:?} is inverted")));
    }
    let k = giou_terms(p, gt);
    let value = k.inter / k.union - (k.encl - k.union) / k.encl;
    Ok(tape.custom(&[pred], Tensor::scalar(T::lit(value)), GiouOp { gt }))
}

/// Total loss on the tape plus its parts as plain numbers.
pub fn tracking_loss<T: Real>(
    tape: &Tape<T>,
    cfg: &TrackerConfig,
    head: &HeadVars,
    target: &LossTargets,
) -> Result<(Var, LossParts)> {
    let grid = cfg.grid();
    let n = grid * grid;
    if target.heat.len() != n {
        return Err(Error::shape(
            "tracking_loss",
            format!("target has {} cells, grid has {n}", target.heat.len()),
        ));
    }
    // Focal term, written with softplus so log-probabilities stay finite.
    let x = head.logits;
    let p = tape.sigmoid(x);
    let pos: Vec<T> = target
        .heat
        .iter()
        .map(|&y| T::lit(if y == 1.0 { 1.0 } else { 0.0 }))
        .collect();
    let npos = pos.iter().filter(|v| **v == T::one()).count().max(1);
    let neg: Vec<T> = target
        .heat
        .iter()
        .map(|&y| T::lit(if y == 1.0 { 0.0 } else { (1.0 - y).powi(4) }))
        .collect();
    let pos = tape.constant(Tensor::new(vec![n, 1], pos)?);
    let neg = tape.constant(Tensor::new(vec![n, 1], neg)?);
    let one_minus_p = tape.sigmoid(tape.scale(x, -T::one()));
    let pos_term = tape.mul(
        tape.mul(
            tape.mul(one_minus_p, one_minus_p)?,
            tape.softplus(tape.scale(x, -T::one())),
        )?,
        pos,
    )?;
    let neg_term = tape.mul(tape.mul(tape.mul(p, p)?, tape.softplus(x))?, neg)?;
    let cls = tape.scale(tape.sum(tape.add(pos_term, neg_term)?), T::lit(1.0 / npos as f64));

    // Box at the ground-truth cell.
    let (row, col) = (target.cell / grid, target.cell % grid);
    let off = tape.slice_rows(head.offset, target.cell, 1)?;
    let size = tape.slice_rows(head.size, target.cell, 1)?;
    let base = tape.constant(Tensor::new(
        vec![2],
        vec![T::lit(col as f64 + 0.5), T::lit(row as f64 + 0.5)],
    )?);
    let centre = tape.scale(tape.add(off, base)?, T::lit(1.0 / grid as f64));
    let half = tape.scale(size, T::lit(0.5));
    let pred = tape.concat_cols(&[tape.sub(centre, half)?, tape.add(centre, half)?])?;
    let gt = tape.constant(Tensor::new(vec![1, 4], target.xyxy.map(T::lit).to_vec())?);
    let l1 = tape.mean(tape.abs(tape.sub(pred, gt)?));
    let giou = giou_var(tape, pred, target.xyxy)?;
    let iou_loss = tape.sub(tape.constant(Tensor::scalar(T::one())), giou)?;

    let total = tape.add(
        tape.add(cls, tape.scale(iou_loss, T::lit(cfg.w_giou)))?,
        tape.scale(l1, T::lit(cfg.w_l1)),
    )?;
    let item = |v: Var| -> Result<f64> { Ok(tape.value(v).item()?.as_f64()) };
    let parts = LossParts {
        cls: item(cls)?,
        iou: item(iou_loss)?,
        l1: item(l1)?,
        total: item(total)?,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            position: format!("{parts:?}"),
        });
    }
    Ok((total, parts))
}

//! Focal classification loss, 1D distance-IoU regression loss and their
//! weighted combination.
//!
//! Both terms enter the tape as single operations with hand-written
//! derivatives; the per-timestep formulas below are shared by the forward
//! pass, the backward pass and the plain-number entry points.

use tempseg_tensor::{Function, Graph, Real, Tensor, Var};

use crate::backbone::to_raw_index;
use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::heads::Targets;

pub const P_CLAMP: f64 = 1e-7;

/// Per-timestep classification loss and its derivative in `p`.
///
/// Standard form: `α(1−p)^γ(−ln p)` on positives and
/// `(1−α)p^γ(−ln(1−p))` on negatives. The literal variant scores positives
/// only with `−(ln p + γ(1−p)^α)`. `p` is clamped to `[1e-7, 1−1e-7]`; the
/// derivative is zero where the clamp is active.
pub fn focal_term(p: f64, label: bool, cfg: &LossConfig) -> (f64, f64) {
    let clamped = p < P_CLAMP || p > 1.0 - P_CLAMP;
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    let (a, gm) = (cfg.focal_alpha, cfg.focal_gamma);
    let (value, deriv) = if cfg.literal_focal {
        if !label {
            return (0.0, 0.0);
        }
        let v = -(p.ln() + gm * (1.0 - p).powf(a));
        let d = -(1.0 / p - gm * a * (1.0 - p).powf(a - 1.0));
        (v, d)
    } else if label {
        let q = 1.0 - p;
        let v = a * q.powf(gm) * -p.ln();
        let dmod = if gm == 0.0 { 0.0 } else { gm * q.powf(gm - 1.0) };
        let d = a * (dmod * p.ln() - q.powf(gm) / p);
        (v, d)
    } else {
        let q = 1.0 - p;
        let v = (1.0 - a) * p.powf(gm) * -q.ln();
        let dmod = if gm == 0.0 { 0.0 } else { gm * p.powf(gm - 1.0) };
        let d = (1.0 - a) * (dmod * -q.ln() + p.powf(gm) / q);
        (v, d)
    };
    (value, if clamped { 0.0 } else { deriv })
}

/// Focal loss over valid timesteps, normalised by `max(T+, 1)`.
pub fn focal_loss(p: &[f64], labels: &[bool], mask: &[bool], cfg: &LossConfig) -> f64 {
    let mut sum = 0.0;
    let mut pos = 0usize;
    for ((&p, &l), &m) in p.iter().zip(labels).zip(mask) {
        if m {
            sum += focal_term(p, l, cfg).0;
            pos += usize::from(l);
        }
    }
    sum / pos.max(1) as f64
}

struct DiouParts {
    value: f64,
    d_start: f64,
    d_end: f64,
    branches: [bool; 5],
}

/// DIoU of `[s, e]` against `[gs, ge]` with derivatives in `s` and `e`.
/// Requires `ge > gs` and `e >= s`.
fn diou_parts(s: f64, e: f64, gs: f64, ge: f64) -> DiouParts {
    let s_inside = s > gs;
    let e_inside = e < ge;
    let lo = if s_inside { s } else { gs };
    let hi = if e_inside { e } else { ge };
    let overlap = hi > lo;
    let inter = if overlap { hi - lo } else { 0.0 };
    let union = (e - s) + (ge - gs) - inter;
    let iou = inter / union;
    let rho = 0.5 * (s + e) - 0.5 * (gs + ge);
    let s_outer = s < gs;
    let e_outer = e > ge;
    let c = (if e_outer { e } else { ge }) - (if s_outer { s } else { gs });
    let value = iou - rho * rho / (c * c);

    let di_ds = if overlap && s_inside { -1.0 } else { 0.0 };
    let di_de = if overlap && e_inside { 1.0 } else { 0.0 };
    let du_ds = -1.0 - di_ds;
    let du_de = 1.0 - di_de;
    let diou_d = |di: f64, du: f64, dc: f64| {
        let d_iou = (di * union - inter * du) / (union * union);
        let d_pen = rho / (c * c) - 2.0 * rho * rho * dc / (c * c * c);
        d_iou - d_pen
    };
    DiouParts {
        value,
        d_start: diou_d(di_ds, du_ds, if s_outer { -1.0 } else { 0.0 }),
        d_end: diou_d(di_de, du_de, if e_outer { 1.0 } else { 0.0 }),
        branches: [s_inside, e_inside, overlap, s_outer, e_outer],
    }
}

/// Distance-IoU between a predicted and a ground-truth interval:
/// `IoU − ρ²/c²` with `ρ` the centre distance and `c` the enclosing length.
pub fn diou_1d(pred: (f64, f64), gt: (f64, f64)) -> Result<f64> {
    if !(pred.1 > pred.0) || !(gt.1 > gt.0) {
        return Err(Error::Data(format!(
            "degenerate interval in diou: pred {pred:?}, gt {gt:?}"
        )));
    }
    Ok(diou_parts(pred.0, pred.1, gt.0, gt.1).value)
}

struct FocalSum {
    grads: Vec<f64>,
}

impl<T: Real> Function<T> for FocalSum {
    fn name(&self) -> &'static str {
        "focal_loss"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let g = g[0].as_f64();
        vec![Some(self.grads.iter().map(|&d| T::of(d * g)).collect())]
    }
}

/// Unnormalised focal sum over the valid rows of a `[len, 1]` probability
/// node.
pub fn focal_sum<T: Real>(
    g: &mut Graph<T>,
    p: Var,
    labels: &[bool],
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    let n = g.value(p).numel();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Data(format!(
            "focal loss: {n} probabilities, {} labels, {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    let mut grads = vec![0.0; n];
    let mut sum = 0.0;
    let mut clamps = Vec::new();
    for (i, &pv) in g.value(p).data().iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let pv = pv.as_f64();
        let (v, d) = focal_term(pv, labels[i], cfg);
        sum += v;
        grads[i] = d;
        if !(P_CLAMP..=1.0 - P_CLAMP).contains(&pv) {
            clamps.push(i as u64);
        }
    }
    g.note_branches(clamps);
    let out = Tensor::scalar(T::of(sum));
    Ok(g.record(out, &[p], Box::new(FocalSum { grads }))?)
}

/// One positive timestep of the regression term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionItem {
    pub row: usize,
    /// Feature-grid position in seconds.
    pub centre: f64,
    /// Seconds per unit of predicted offset (`stride / fps`).
    pub unit: f64,
    pub gt_start: f64,
    pub gt_end: f64,
}

struct DiouSum {
    items: Vec<RegressionItem>,
    grads: Vec<(f64, f64)>,
}

impl<T: Real> Function<T> for DiouSum {
    fn name(&self) -> &'static str {
        "diou_loss"
    }
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let g = g[0].as_f64();
        let mut d = vec![T::zero(); inputs[0].numel()];
        for (it, &(ds, de)) in self.items.iter().zip(&self.grads) {
            d[2 * it.row] += T::of(ds * g);
            d[2 * it.row + 1] += T::of(de * g);
        }
        vec![Some(d)]
    }
}

/// `Σ (1 − DIoU)` over `items`, reading `(d_s, d_e)` from a `[len, 2]`
/// offset node and decoding each to seconds.
pub fn diou_sum<T: Real>(g: &mut Graph<T>, offsets: Var, items: Vec<RegressionItem>) -> Result<Var> {
    let rows = g.value(offsets).rows();
    if g.value(offsets).cols() != 2 || items.iter().any(|it| it.row >= rows) {
        return Err(Error::Data("diou loss: offsets must be [len, 2] covering every item".into()));
    }
    let data = g.value(offsets).data();
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(items.len());
    let mut branches = Vec::with_capacity(items.len());
    for it in &items {
        let (ds, de) = (data[2 * it.row].as_f64(), data[2 * it.row + 1].as_f64());
        let s = it.centre - ds * it.unit;
        let e = it.centre + de * it.unit;
        let parts = diou_parts(s, e, it.gt_start, it.gt_end);
        sum += 1.0 - parts.value;
        grads.push((parts.d_start * it.unit, -parts.d_end * it.unit));
        branches.push(parts.branches.iter().fold(0u64, |acc, &b| acc << 1 | u64::from(b)));
    }
    g.note_branches(branches);
    let out = Tensor::scalar(T::of(sum));
    Ok(g.record(out, &[offsets], Box::new(DiouSum { items, grads }))?)
}

/// Loss node plus its two components, each already divided by the
/// normaliser (`cls` excludes the λ weight).
#[derive(Clone, Copy, Debug)]
pub struct LossValue {
    pub total: Var,
    pub cls: f64,
    pub reg: f64,
}

/// `(λ·Σ_t L_cls(t) + Σ_{t∈Ω+} L_reg(t)) / normaliser` over all levels.
/// `normaliser` is `max(T+, 1)` for the batch this sample belongs to.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    cls: &[Var],
    reg: &[Var],
    masks: &[Vec<bool>],
    strides: &[usize],
    targets: &Targets,
    feature_fps: f64,
    cfg: &LossConfig,
    normaliser: f64,
) -> Result<LossValue> {
    let levels = targets.levels.len();
    if cls.len() != levels || reg.len() != levels || masks.len() != levels || strides.len() != levels {
        return Err(Error::Data("loss inputs disagree on the number of levels".into()));
    }
    let mut cls_total: Option<Var> = None;
    let mut reg_total: Option<Var> = None;
    for l in 0..levels {
        let t = &targets.levels[l];
        let c = focal_sum(g, cls[l], &t.labels, &masks[l], cfg)?;
        cls_total = Some(match cls_total {
            Some(acc) => g.add(acc, c)?,
            None => c,
        });
        let unit = strides[l] as f64 / feature_fps;
        let items: Vec<RegressionItem> = t
            .assigned
            .iter()
            .enumerate()
            .filter_map(|(row, seg)| {
                seg.map(|seg| RegressionItem {
                    row,
                    centre: to_raw_index(row, strides[l]) as f64 / feature_fps,
                    unit,
                    gt_start: seg.start,
                    gt_end: seg.end,
                })
            })
            .collect();
        if items.is_empty() {
            continue;
        }
        let r = diou_sum(g, reg[l], items)?;
        reg_total = Some(match reg_total {
            Some(acc) => g.add(acc, r)?,
            None => r,
        });
    }
    let cls_total = cls_total.ok_or_else(|| Error::Data("loss over zero levels".into()))?;
    let cls_value = g.value(cls_total).data()[0].as_f64() / normaliser;
    let weighted = g.scale(cls_total, T::of(cfg.lambda))?;
    let (sum, reg_value) = match reg_total {
        Some(r) => {
            let v = g.value(r).data()[0].as_f64() / normaliser;
            (g.add(weighted, r)?, v)
        }
        None => (weighted, 0.0),
    };
    let total = g.scale(sum, T::of(1.0 / normaliser))?;
    Ok(LossValue {
        total,
        cls: cls_value,
        reg: reg_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn diou_examples() {
        assert_eq!(diou_1d((1.0, 3.0), (1.0, 3.0)).unwrap(), 1.0);
        assert!((diou_1d((0.0, 1.0), (2.0, 3.0)).unwrap() + 4.0 / 9.0).abs() < 1e-15);
        assert!((diou_1d((0.0, 2.0), (1.0, 3.0)).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert!(diou_1d((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn single_positive_focal_value() {
        let (v, _) = focal_term(0.5, true, &cfg());
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_have_tiny_loss() {
        let l = focal_loss(&[1.0, 0.0, 1.0], &[true, false, true], &[true; 3], &cfg());
        assert!(l < 1e-5, "{l}");
    }

    #[test]
    fn literal_variant_ignores_negatives() {
        let c = LossConfig {
            literal_focal: true,
            ..cfg()
        };
        assert_eq!(focal_term(0.3, false, &c), (0.0, 0.0));
        let (v, _) = focal_term(0.5, true, &c);
        assert!((v - (2f64.ln() - 2.0 * 0.5f64.powf(0.25))).abs() < 1e-12);
    }
}

//! Contrastive losses with their gradients, and the full batch objective.

use crate::model::mat::{dot, normalize_rows, normalize_rows_backward, Mat};
use crate::model::{ModelError, Weights};

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// In-batch InfoNCE with cosine similarity: row `i` of `pred` must pick row
/// `i` of `target` among all targets. Returns the mean loss and gradients
/// with respect to the unnormalized inputs.
pub fn infonce(pred: &Mat, target: &Mat, tau: f64) -> (f64, Mat, Mat) {
    let b = pred.rows;
    assert_eq!(b, target.rows);
    if b == 0 {
        return (0.0, Mat::zeros(0, pred.cols), Mat::zeros(0, target.cols));
    }
    let (pn, pnorm) = normalize_rows(pred);
    let (tn, tnorm) = normalize_rows(target);
    let mut loss = 0.0;
    let mut dpn = Mat::zeros(b, pred.cols);
    let mut dtn = Mat::zeros(b, target.cols);
    let scale = 1.0 / (b as f64 * tau);
    for i in 0..b {
        let logits: Vec<f64> = (0..b).map(|j| dot(pn.row(i), tn.row(j)) / tau).collect();
        loss += log_sum_exp(&logits) - logits[i];
        let mut g = softmax(&logits);
        g[i] -= 1.0;
        for (j, &gj) in g.iter().enumerate() {
            let c = gj * scale;
            for k in 0..pred.cols {
                dpn.data[i * pred.cols + k] += c * tn.data[j * target.cols + k];
                dtn.data[j * target.cols + k] += c * pn.data[i * pred.cols + k];
            }
        }
    }
    let dp = normalize_rows_backward(&pn, &pnorm, &dpn);
    let dt = normalize_rows_backward(&tn, &tnorm, &dtn);
    (loss / b as f64, dp, dt)
}

/// Cross-entropy picking candidate 0 among `cands` by cosine to `target`.
/// Returns the loss and gradients for the unnormalized candidates and target.
pub fn action_ce(cands: &Mat, target: &[f64], tau: f64) -> (f64, Mat, Vec<f64>) {
    let t = Mat::from_rows(&[target], target.len());
    let (cn, cnorm) = normalize_rows(cands);
    let (tn, tnorm) = normalize_rows(&t);
    let logits: Vec<f64> = (0..cands.rows).map(|k| dot(cn.row(k), tn.row(0)) / tau).collect();
    let loss = log_sum_exp(&logits) - logits[0];
    let mut g = softmax(&logits);
    g[0] -= 1.0;
    let mut dcn = Mat::zeros(cands.rows, cands.cols);
    let mut dtn = Mat::zeros(1, target.len());
    for (k, &gk) in g.iter().enumerate() {
        for j in 0..cands.cols {
            dcn.data[k * cands.cols + j] += gk / tau * tn.data[j];
            dtn.data[j] += gk / tau * cn.data[k * cands.cols + j];
        }
    }
    let dc = normalize_rows_backward(&cn, &cnorm, &dcn);
    let dt = normalize_rows_backward(&tn, &tnorm, &dtn);
    (loss, dc, dt.data)
}

/// One training example resolved to rows of the batch's unique state and
/// action matrices. `distractors` excludes the true action.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub distractors: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_state: f64,
    pub l_action: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    /// Items whose action term was skipped (fewer than two candidates).
    pub skipped: usize,
}

/// Weighted objective `w_state·L_state + w_action·L_action` and its gradient
/// over all parameters. Gradients flow through both the predictions and the
/// projected targets.
pub fn batch_objective(
    w: &Weights<'_>,
    zs: &Mat,
    za: &Mat,
    items: &[BatchItem],
    tau: f64,
    w_state: f64,
    w_action: f64,
) -> Result<(LossBreakdown, Vec<f64>), ModelError> {
    let mut grad = vec![0.0; w.p.len()];
    let b = items.len();
    let (hs, hs_cache) = w.project_state_cached(zs)?;
    let (ha, ha_cache) = w.project_action_cached(za)?;

    // Primary pairs first, then each item's distractor pairs.
    let mut pair_s: Vec<usize> = items.iter().map(|it| it.s).collect();
    let mut pair_a: Vec<usize> = items.iter().map(|it| it.a).collect();
    let mut groups: Vec<Option<(usize, usize)>> = Vec::with_capacity(b);
    for it in items {
        if it.distractors.is_empty() {
            groups.push(None);
            continue;
        }
        let start = pair_s.len();
        for &d in &it.distractors {
            pair_s.push(it.s);
            pair_a.push(d);
        }
        groups.push(Some((start, it.distractors.len())));
    }
    let (pred, t_cache) = w.transition_cached(&hs.gather(&pair_s), &ha.gather(&pair_a))?;

    let next_rows: Vec<usize> = items.iter().map(|it| it.s_next).collect();
    let target = hs.gather(&next_rows);
    let primary = pred.gather(&(0..b).collect::<Vec<_>>());

    let mut dpred = Mat::zeros(pred.rows, pred.cols);
    let mut dtarget = Mat::zeros(b, target.cols);

    let (l_state, dp, dt) = infonce(&primary, &target, tau);
    if w_state != 0.0 {
        for i in 0..b {
            for (d, s) in dpred.row_mut(i).iter_mut().zip(dp.row(i)) {
                *d += w_state * s;
            }
        }
        dtarget.add_assign(&Mat {
            rows: dt.rows,
            cols: dt.cols,
            data: dt.data.iter().map(|x| w_state * x).collect(),
        });
    }

    let mut l_action = 0.0;
    let mut skipped = 0;
    for (i, g) in groups.iter().enumerate() {
        let Some((start, n)) = *g else {
            skipped += 1;
            continue;
        };
        let mut rows = vec![i];
        rows.extend(start..start + n);
        let cands = pred.gather(&rows);
        let (l, dc, dt) = action_ce(&cands, target.row(i), tau);
        l_action += l;
        let c = w_action / b as f64;
        for (k, &r) in rows.iter().enumerate() {
            for (d, s) in dpred.row_mut(r).iter_mut().zip(dc.row(k)) {
                *d += c * s;
            }
        }
        for (d, s) in dtarget.row_mut(i).iter_mut().zip(&dt) {
            *d += c * s;
        }
    }
    if b > 0 {
        l_action /= b as f64;
    }

    let (dxs, dxa) = w.transition_backward(&t_cache, &dpred, &mut grad);
    let mut dhs = Mat::zeros(hs.rows, hs.cols);
    dhs.scatter_add(&pair_s, &dxs);
    dhs.scatter_add(&next_rows, &dtarget);
    let mut dha = Mat::zeros(ha.rows, ha.cols);
    dha.scatter_add(&pair_a, &dxa);
    w.state_head_backward(&hs_cache, &dhs, &mut grad);
    w.action_head_backward(&ha_cache, &dha, &mut grad);

    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let l_total = w_state * l_state + w_action * l_action;
    Ok((
        LossBreakdown {
            l_state,
            l_action,
            l_total,
            grad_norm,
            skipped,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_orthogonal_pairs_closed_form() {
        let tau = 0.07;
        let p = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]], 2);
        let (loss, _, _) = infonce(&p, &p, tau);
        let expected = (1.0 + (-1.0f64 / tau).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 6.2487e-7).abs() < 1e-10);
    }

    #[test]
    fn single_row_loss_is_exactly_zero() {
        let p = Mat::from_rows(&[[0.3, -0.2, 0.9]], 3);
        let t = Mat::from_rows(&[[-1.0, 0.5, 0.1]], 3);
        let (loss, dp, dt) = infonce(&p, &t, 0.07);
        assert_eq!(loss, 0.0);
        assert!(dp.data.iter().chain(&dt.data).all(|&g| g == 0.0));
    }

    #[test]
    fn five_candidates_closed_form() {
        let tau = 0.07;
        let cands = Mat::from_rows(
            &[
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 1.0],
            ],
            5,
        );
        let (loss, _, _) = action_ce(&cands, &[1.0, 0.0, 0.0, 0.0, 0.0], tau);
        let expected = (1.0 + 4.0 * (-1.0f64 / tau).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 2.4995e-6).abs() < 1e-9);
    }

    #[test]
    fn equidistant_pair_gives_ln2() {
        let cands = Mat::from_rows(&[[1.0, 1.0], [1.0, -1.0]], 2);
        let (loss, _, _) = action_ce(&cands, &[1.0, 0.0], 0.07);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infonce_gradients_match_finite_differences() {
        let p = Mat::from_rows(&[[0.3, -0.2, 0.9], [0.1, 0.4, -0.5], [-0.7, 0.2, 0.2]], 3);
        let t = Mat::from_rows(&[[0.2, -0.1, 1.0], [0.5, 0.5, 0.0], [-0.3, 0.9, 0.1]], 3);
        let (_, dp, dt) = infonce(&p, &t, 0.5);
        let h = 1e-6;
        for k in 0..9 {
            let mut pp = p.clone();
            pp.data[k] += h;
            let mut pm = p.clone();
            pm.data[k] -= h;
            let fd = (infonce(&pp, &t, 0.5).0 - infonce(&pm, &t, 0.5).0) / (2.0 * h);
            assert!((fd - dp.data[k]).abs() < 1e-7);
            let mut tp = t.clone();
            tp.data[k] += h;
            let mut tm = t.clone();
            tm.data[k] -= h;
            let fd = (infonce(&p, &tp, 0.5).0 - infonce(&p, &tm, 0.5).0) / (2.0 * h);
            assert!((fd - dt.data[k]).abs() < 1e-7);
        }
    }
}

//! The differentiable head: attention fusion of per-perspective mask
//! vectors, label-word scoring, per-label aggregation, and the
//! cross-entropy loss — forward and hand-derived backward passes.
//!
//! Everything is generic over the float type: the model runs at `f32`, the
//! gradient checks instantiate the identical code at `f64`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, NdFloat};

use crate::verbalizer::AggregateMode;

/// Probability floor applied before the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stabilized softmax (max subtraction).
pub fn softmax<F: NdFloat>(z: &ArrayView1<F>) -> Array1<F> {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let exps = z.mapv(|v| (v - max).exp());
    let total = exps.sum();
    exps / total
}

/// Softmax backward: given y = softmax(z) and dL/dy, return dL/dz.
fn softmax_backward<F: NdFloat>(y: &ArrayView1<F>, dy: &ArrayView1<F>) -> Array1<F> {
    let inner = y.dot(dy);
    Array1::from_iter(y.iter().zip(dy).map(|(&yi, &dyi)| yi * (dyi - inner)))
}

/// Attention fusion: α = softmax(h·rₜ over t), e = Σₜ αₜ rₜ.
///
/// `r` holds the γ mask vectors as rows. Dot products are unscaled.
pub fn fuse<F: NdFloat>(r: &ArrayView2<F>, h: &ArrayView1<F>) -> (Array1<F>, Array1<F>) {
    let logits = r.dot(h);
    let alpha = softmax(&logits.view());
    let e = r.t().dot(&alpha);
    (alpha, e)
}

/// Backward of [`fuse`]: given dL/de, return (dL/dR, dL/dh).
pub fn fuse_backward<F: NdFloat>(
    r: &ArrayView2<F>,
    h: &ArrayView1<F>,
    alpha: &ArrayView1<F>,
    de: &ArrayView1<F>,
) -> (Array2<F>, Array1<F>) {
    // e = Rᵀα: dα = R de, and each row of R receives αₜ·de directly.
    let dalpha = r.dot(de);
    let dlogits = softmax_backward(alpha, &dalpha.view());
    let dh = r.t().dot(&dlogits);
    let (gamma, d) = r.dim();
    let mut dr = Array2::zeros((gamma, d));
    for t in 0..gamma {
        for j in 0..d {
            dr[[t, j]] = dlogits[t] * h[j] + alpha[t] * de[j];
        }
    }
    (dr, dh)
}

/// Label-word scoring: δ = softmax(wᵤ·e over all units u).
pub fn score<F: NdFloat>(units: &ArrayView2<F>, e: &ArrayView1<F>) -> Array1<F> {
    let logits = units.dot(e);
    softmax(&logits.view())
}

/// Backward of [`score`]: given dL/dδ, return (dL/dW, dL/de).
pub fn score_backward<F: NdFloat>(
    units: &ArrayView2<F>,
    e: &ArrayView1<F>,
    delta: &ArrayView1<F>,
    ddelta: &ArrayView1<F>,
) -> (Array2<F>, Array1<F>) {
    let dlogits = softmax_backward(delta, ddelta);
    let de = units.t().dot(&dlogits);
    let (n_units, d) = units.dim();
    let mut dunits = Array2::zeros((n_units, d));
    for u in 0..n_units {
        for j in 0..d {
            dunits[[u, j]] = dlogits[u] * e[j];
        }
    }
    (dunits, de)
}

fn label_counts(labels: &[usize], n_labels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_labels];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Fold unit probabilities into label scores: per-label sum (default) or
/// per-label mean renormalized across labels.
pub fn aggregate<F: NdFloat>(
    delta: &ArrayView1<F>,
    labels: &[usize],
    n_labels: usize,
    mode: AggregateMode,
) -> Array1<F> {
    debug_assert_eq!(delta.len(), labels.len());
    let mut sums = Array1::<F>::zeros(n_labels);
    for (u, &l) in labels.iter().enumerate() {
        sums[l] += delta[u];
    }
    match mode {
        AggregateMode::Sum => sums,
        AggregateMode::Mean => {
            let counts = label_counts(labels, n_labels);
            let mut means = sums;
            for l in 0..n_labels {
                if counts[l] > 0 {
                    means[l] /= F::from(counts[l]).expect("count fits in float");
                }
            }
            let total = means.sum();
            means / total
        }
    }
}

/// Backward of [`aggregate`]: given dL/dμ, return dL/dδ.
pub fn aggregate_backward<F: NdFloat>(
    delta: &ArrayView1<F>,
    labels: &[usize],
    n_labels: usize,
    mode: AggregateMode,
    dmu: &ArrayView1<F>,
) -> Array1<F> {
    match mode {
        AggregateMode::Sum => Array1::from_iter(labels.iter().map(|&l| dmu[l])),
        AggregateMode::Mean => {
            let counts = label_counts(labels, n_labels);
            let mut means = Array1::<F>::zeros(n_labels);
            for (u, &l) in labels.iter().enumerate() {
                means[l] += delta[u];
            }
            for l in 0..n_labels {
                if counts[l] > 0 {
                    means[l] /= F::from(counts[l]).expect("count fits in float");
                }
            }
            let total = means.sum();
            // y = m / Σm  ⇒  dm_l = (dy_l − Σ_k dy_k y_k) / Σm.
            let y = means.mapv(|m| m / total);
            let inner = dmu.dot(&y);
            let dmeans = dmu.mapv(|dl| (dl - inner) / total);
            Array1::from_iter(
                labels
                    .iter()
                    .map(|&l| dmeans[l] / F::from(counts[l]).expect("count fits in float")),
            )
        }
    }
}

/// Cross-entropy against the gold label: −log ŷ[y], probability floored at
/// [`PROB_FLOOR`].
pub fn nll<F: NdFloat>(yhat: &ArrayView1<F>, y: usize) -> F {
    let floor = F::from(PROB_FLOOR).expect("floor fits in float");
    yhat[y].max(floor).ln().neg()
}

/// Backward of [`nll`]: dL/dŷ (zero where the floor clamped).
pub fn nll_backward<F: NdFloat>(yhat: &ArrayView1<F>, y: usize) -> Array1<F> {
    let floor = F::from(PROB_FLOOR).expect("floor fits in float");
    let mut dy = Array1::zeros(yhat.len());
    if yhat[y] > floor {
        dy[y] = -F::one() / yhat[y];
    }
    dy
}

/// Intermediates of one head forward pass, kept for backward and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct HeadTrace<F> {
    pub alpha: Array1<F>,
    pub e: Array1<F>,
    pub delta: Array1<F>,
    pub mu: Array1<F>,
}

/// Full head forward: fuse → score → aggregate.
pub fn head_forward<F: NdFloat>(
    r: &ArrayView2<F>,
    h: &ArrayView1<F>,
    units: &ArrayView2<F>,
    labels: &[usize],
    n_labels: usize,
    mode: AggregateMode,
) -> HeadTrace<F> {
    let (alpha, e) = fuse(r, h);
    let delta = score(units, &e.view());
    let mu = aggregate(&delta.view(), labels, n_labels, mode);
    HeadTrace { alpha, e, delta, mu }
}

/// Gradients of the head loss w.r.t. its three inputs.
#[derive(Debug, Clone)]
pub struct HeadGrads<F> {
    pub dr: Array2<F>,
    pub dh: Array1<F>,
    pub dunits: Array2<F>,
}

/// Full head backward for loss = nll(μ, y).
#[allow(clippy::too_many_arguments)] // takes every forward tensor it differentiates
pub fn head_backward<F: NdFloat>(
    r: &ArrayView2<F>,
    h: &ArrayView1<F>,
    units: &ArrayView2<F>,
    labels: &[usize],
    n_labels: usize,
    mode: AggregateMode,
    trace: &HeadTrace<F>,
    y: usize,
) -> HeadGrads<F> {
    let dmu = nll_backward(&trace.mu.view(), y);
    let ddelta = aggregate_backward(&trace.delta.view(), labels, n_labels, mode, &dmu.view());
    let (dunits, de) = score_backward(units, &trace.e.view(), &trace.delta.view(), &ddelta.view());
    let (dr, dh) = fuse_backward(r, h, &trace.alpha.view(), &de.view());
    HeadGrads { dr, dh, dunits }
}

//! Central finite-difference gradient checking in `f64`.
//!
//! The checker rebuilds the forward pass from scratch for every perturbed
//! element, so it is deliberately slow and meant for small graphs. It is the
//! ground truth that every op's hand-written backward rule is tested against.

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Worst relative error across all parameters (0 when there are none).
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    /// True when every parameter is within tolerance. A graph with no
    /// parameters passes vacuously.
    pub fn passed(&self) -> bool {
        self.per_param.iter().all(|p| p.max_rel_err <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.per_param.iter().filter(move |p| p.max_rel_err > self.tolerance)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gradcheck: eps={:.1e} tol={:.1e}", self.epsilon, self.tolerance)?;
        for p in &self.per_param {
            let mark = if p.max_rel_err <= self.tolerance { "ok " } else { "FAIL" };
            writeln!(f, "  [{mark}] {:<40} max_rel_err={:.3e}", p.name, p.max_rel_err)?;
        }
        Ok(())
    }
}

/// Compares analytic gradients against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of every parameter,
/// Richardson-extrapolated from steps `eps` and `eps/2` so the quadratic
/// truncation term cancels and one step size serves both high-curvature and
/// small-gradient elements.
///
/// `build` receives a fresh graph plus one leaf per parameter (same order as
/// `params`) and must return a scalar loss node. Per-element relative error
/// is `|ga - gn| / max(|ga|, |gn|, 1e-8)`. A parameter the loss never touches
/// gets an analytic gradient of zero, which still has to agree with the
/// numeric estimate.
pub fn check_gradients<F>(
    params: &[(String, Tensor<f64>)],
    epsilon: f64,
    tolerance: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(epsilon > 0.0) || !(tolerance > 0.0) {
        return Err(Error::invalid("check_gradients: epsilon and tolerance must be positive"));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|(_, t)| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::invalid("check_gradients: build must return a scalar loss"));
    }
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, (_, t))| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let eval = |tensors: &[Tensor<f64>], build: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).item()
    };

    let mut per_param = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        for e in 0..work[pi].numel() {
            let orig = work[pi].data()[e];
            let central = |h: f64, work: &mut Vec<Tensor<f64>>, build: &mut F| -> Result<f64> {
                work[pi].make_mut()[e] = orig + h;
                let plus = eval(work, build)?;
                work[pi].make_mut()[e] = orig - h;
                let minus = eval(work, build)?;
                Ok((plus - minus) / (2.0 * h))
            };
            let d_full = central(epsilon, &mut work, &mut build)?;
            let d_half = central(0.5 * epsilon, &mut work, &mut build)?;
            work[pi].make_mut()[e] = orig;
            let gn = (4.0 * d_half - d_full) / 3.0;
            let ga = analytic[pi].data()[e];
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        per_param.push(ParamCheck { name: name.clone(), max_rel_err: max_rel });
    }

    Ok(GradCheckReport { per_param, epsilon, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    fn param(rng: &mut Rng, name: &str, shape: &[usize]) -> (String, Tensor<f64>) {
        let n = shape.iter().product();
        (name.to_string(), Tensor::from_vec(shape, rng.normal_vec(n, 0.0, 1.0)).unwrap())
    }

    /// Reduces `node` to a scalar through fixed random weights so the
    /// upstream gradient exercised by the check is non-uniform.
    fn weighted_sum(g: &mut Graph<f64>, node: NodeId, seed: u64) -> Result<NodeId> {
        let shape = g.value(node).shape().to_vec();
        let n: usize = shape.iter().product();
        let mut rng = Rng::new(seed).derive("gradcheck-weights");
        let w = g.leaf(Tensor::from_vec(&shape, rng.normal_vec(n, 0.0, 1.0)).unwrap(), false);
        let prod = g.mul(node, w)?;
        g.sum(prod)
    }

    fn assert_passes(report: &GradCheckReport) {
        assert!(report.passed(), "gradient check failed:\n{report}");
    }

    #[test]
    fn empty_parameter_list_passes() {
        let report = check_gradients(&[], EPS, TOL, |g, _| {
            let c = g.leaf(Tensor::scalar(2.0), false);
            g.sum(c)
        })
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn add_mul_scale() {
        let mut rng = Rng::new(10).derive("gc");
        let params = vec![param(&mut rng, "a", &[3, 4]), param(&mut rng, "b", &[3, 4])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            let m = g.mul(s, ids[0])?;
            let sc = g.scale(m, 0.7)?;
            weighted_sum(g, sc, 1)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn matmul_and_transpose() {
        let mut rng = Rng::new(11).derive("gc");
        let params = vec![param(&mut rng, "a", &[4, 6]), param(&mut rng, "b", &[6, 3])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let c = g.matmul(ids[0], ids[1])?;
            let ct = g.transpose(c)?;
            weighted_sum(g, ct, 2)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn embedding_lookup() {
        let mut rng = Rng::new(12).derive("gc");
        let params = vec![param(&mut rng, "table", &[7, 5])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            // Repeated ids exercise gradient accumulation into one row.
            let e = g.embedding(ids[0], &[3, 1, 3, 0, 6])?;
            weighted_sum(g, e, 3)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn softmax_rows() {
        let mut rng = Rng::new(13).derive("gc");
        let params = vec![param(&mut rng, "x", &[5, 9])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let p = g.softmax(ids[0])?;
            weighted_sum(g, p, 4)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn rms_norm_x_and_weight() {
        let mut rng = Rng::new(14).derive("gc");
        let params = vec![param(&mut rng, "x", &[6, 8]), param(&mut rng, "w", &[8])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let y = g.rms_norm(ids[0], ids[1], 1e-5)?;
            weighted_sum(g, y, 5)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn rope_rotation() {
        let mut rng = Rng::new(15).derive("gc");
        let params = vec![param(&mut rng, "x", &[2, 5, 8])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let y = g.rope(ids[0], 2, 10_000.0)?;
            weighted_sum(g, y, 6)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn silu_activation() {
        let mut rng = Rng::new(16).derive("gc");
        let params = vec![param(&mut rng, "x", &[4, 7])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let y = g.silu(ids[0])?;
            weighted_sum(g, y, 7)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn fused_attention() {
        let mut rng = Rng::new(17).derive("gc");
        let params = vec![
            param(&mut rng, "q", &[1, 4, 8]),
            param(&mut rng, "k", &[1, 4, 8]),
            param(&mut rng, "v", &[1, 4, 8]),
        ];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let o = g.attention(ids[0], ids[1], ids[2], 2)?;
            weighted_sum(g, o, 8)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn cross_entropy_with_mask() {
        let mut rng = Rng::new(18).derive("gc");
        let params = vec![param(&mut rng, "logits", &[5, 6])];
        let targets = [2u32, 0, 5, 1, 3];
        let mask = [true, false, true, true, false];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            g.cross_entropy(ids[0], &targets, Some(&mask))
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn sum_mean_reshape() {
        let mut rng = Rng::new(19).derive("gc");
        let params = vec![param(&mut rng, "x", &[3, 4])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| {
            let r = g.reshape(ids[0], &[2, 6])?;
            let m = g.mean(r)?;
            let s = g.sum(ids[0])?;
            let both = g.add(m, s)?;
            g.sum(both)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn composite_transformer_like_chain() {
        // embedding -> rms_norm -> matmul -> silu gate -> mul -> rope ->
        // attention -> cross_entropy: one check through a realistic stack.
        let mut rng = Rng::new(20).derive("gc");
        let params = vec![
            param(&mut rng, "table", &[9, 8]),
            param(&mut rng, "norm_w", &[8]),
            param(&mut rng, "wq", &[8, 8]),
            param(&mut rng, "wk", &[8, 8]),
            param(&mut rng, "wv", &[8, 8]),
            param(&mut rng, "unembed", &[8, 9]),
        ];
        let ids_in = [1u32, 4, 7, 2];
        let targets = [4u32, 7, 2, 0];
        // Wider step than the per-op checks: unit-scale weights saturate the
        // softmax, and the resulting near-zero gradients need the larger
        // signal-to-noise ratio (Richardson extrapolation keeps truncation
        // error far below tolerance).
        let report = check_gradients(&params, 3e-4, 1e-5, |g, p| {
            let e = g.embedding(p[0], &ids_in)?;
            let n = g.rms_norm(e, p[1], 1e-5)?;
            let q = g.matmul(n, p[2])?;
            let k = g.matmul(n, p[3])?;
            let v = g.matmul(n, p[4])?;
            let q3 = g.reshape(q, &[1, 4, 8])?;
            let k3 = g.reshape(k, &[1, 4, 8])?;
            let v3 = g.reshape(v, &[1, 4, 8])?;
            let qr = g.rope(q3, 2, 10_000.0)?;
            let kr = g.rope(k3, 2, 10_000.0)?;
            let o = g.attention(qr, kr, v3, 2)?;
            let o2 = g.reshape(o, &[4, 8])?;
            let logits = g.matmul(o2, p[5])?;
            g.cross_entropy(logits, &targets, None)
        })
        .unwrap();
        assert_passes(&report);
    }

    #[test]
    fn untouched_parameter_still_checks_out() {
        let mut rng = Rng::new(21).derive("gc");
        let params = vec![param(&mut rng, "used", &[3]), param(&mut rng, "unused", &[3])];
        let report = check_gradients(&params, EPS, TOL, |g, ids| g.sum(ids[0])).unwrap();
        assert_passes(&report);
        assert_eq!(report.per_param.len(), 2);
    }
}

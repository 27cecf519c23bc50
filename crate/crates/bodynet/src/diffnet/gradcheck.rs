//! Central finite-difference verification of analytic gradients.

use super::params::ParameterSet;
use super::{DiffError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked_values: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `f(params, true)` must return the loss and leave d(loss)/d(param) in each
/// learnable tensor's `grad`; `f(params, false)` only returns the loss. The
/// relative error per element is |a - n| / max(|a|, |n|, 1e-7). The floor
/// absorbs central-difference roundoff, which reaches ~1e-11 for a loss of
/// order 1 at step 1e-5; gradients below the floor are numerically zero at
/// that precision.
///
/// Non-learnable buffers (e.g. normalization running statistics) are restored
/// after every evaluation, so `f` may run in training mode without its side
/// effects skewing later evaluations.
///
/// `max_per_tensor` caps how many elements of each tensor are probed (evenly
/// strided, endpoints included); `None` probes all of them.
pub fn finite_diff_check(
    params: &mut ParameterSet,
    epsilon: f64,
    max_per_tensor: Option<usize>,
    f: &mut dyn FnMut(&mut ParameterSet, bool) -> Result<f64>,
) -> Result<GradCheckResult> {
    if epsilon <= 0.0 {
        return Err(DiffError::NotPositive { what: "finite difference step", got: epsilon });
    }
    let buffers: Vec<(String, Vec<f64>)> = params
        .iter()
        .filter(|(_, t)| !t.requires_grad)
        .map(|(n, t)| (n.clone(), t.data().to_vec()))
        .collect();
    let restore =
        |params: &mut ParameterSet, buffers: &[(String, Vec<f64>)]| -> Result<()> {
            for (name, data) in buffers {
                params.get_mut(name)?.data_mut().copy_from_slice(data);
            }
            Ok(())
        };

    let loss0 = f(params, true)?;
    restore(params, &buffers)?;
    if !loss0.is_finite() {
        return Err(DiffError::NonFinite { context: "gradcheck loss".into() });
    }
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut out = Vec::new();
        for (name, t) in params.iter() {
            if !t.requires_grad {
                continue;
            }
            let g = t
                .grad
                .as_ref()
                .ok_or_else(|| DiffError::MissingGrad { name: name.clone() })?
                .clone();
            out.push((name.clone(), g));
        }
        out
    };
    params.clear_grads();

    let mut result = GradCheckResult {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked_values: 0,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let indices: Vec<usize> = match max_per_tensor {
            Some(cap) if n > cap && cap > 1 => {
                let mut idx: Vec<usize> = (0..cap).map(|i| i * (n - 1) / (cap - 1)).collect();
                idx.dedup();
                idx
            }
            Some(cap) if n > cap => vec![0],
            _ => (0..n).collect(),
        };
        for &i in &indices {
            let orig = params.get(name)?.data()[i];
            params.get_mut(name)?.data_mut()[i] = orig + epsilon;
            let lp = f(params, false)?;
            restore(params, &buffers)?;
            params.get_mut(name)?.data_mut()[i] = orig - epsilon;
            let lm = f(params, false)?;
            restore(params, &buffers)?;
            params.get_mut(name)?.data_mut()[i] = orig;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(DiffError::NonFinite {
                    context: format!("gradcheck probe of {name}[{i}]"),
                });
            }
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            result.checked_values += 1;
            if rel > result.max_rel_err {
                result.max_rel_err = rel;
                result.worst_param = name.clone();
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    params.clear_grads();
    Ok(result)
}

/// Outcome of one named finite-difference check.
#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub component: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub worst_param: String,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// Per-layer-kind acceptance bound on the worst relative error.
pub const LAYER_THRESHOLD: f64 = 1e-4;

/// Finite-difference checks for every layer kind the model uses, each on a
/// small random problem. Dropout runs in training mode with a fixed mask
/// seed so the two-sided probes see the same mask.
pub fn layer_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    use super::layers::{
        BatchNorm1d, Conv1d, Dropout, Graph, Gru, Linear, MaxPool1d, MultiHeadAttention,
    };
    use super::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let data = |stream: u64, n: usize, scale: f64| -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream));
        (0..n).map(|_| r.random_range(-scale..=scale)).collect()
    };
    let mut out = Vec::new();
    let mut run = |component: &str,
                   params: &mut ParameterSet,
                   f: &mut dyn FnMut(&mut ParameterSet, bool) -> Result<f64>|
     -> Result<()> {
        let r = finite_diff_check(params, 1e-5, None, f)?;
        out.push(ComponentCheck {
            component: component.to_string(),
            max_rel_err: r.max_rel_err,
            threshold: LAYER_THRESHOLD,
            worst_param: r.worst_param,
        });
        Ok(())
    };
    let square_mean = |g: &mut Graph, y| -> Result<crate::diffnet::tape::NodeId> {
        let sq = g.tape.mul(y, y)?;
        Ok(g.tape.mean(sq))
    };

    {
        let layer = Conv1d::new("conv", 3, 4, 3);
        let mut params = ParameterSet::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layer.init(&mut params, &mut rng)?;
        let x = data(1, 2 * 3 * 8, 1.0);
        run("conv1d", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.input(vec![2, 3, 8], x.clone());
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = BatchNorm1d::new("bn", 3, 0.1);
        let mut params = ParameterSet::new(1);
        layer.init(&mut params)?;
        // Scale and shift away from the identity so both paths carry signal;
        // at beta = 0 this loss's beta gradient is exactly zero and the
        // probes would only measure roundoff.
        for (i, v) in params.get_mut("bn.gamma")?.data_mut().iter_mut().enumerate() {
            *v = 1.0 + 0.2 * i as f64;
        }
        for (i, v) in params.get_mut("bn.beta")?.data_mut().iter_mut().enumerate() {
            *v = 0.1 + 0.1 * i as f64;
        }
        let x = data(2, 2 * 3 * 6, 1.0);
        run("batchnorm1d", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), true);
            let xi = g.input(vec![2, 3, 6], x.clone());
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = MaxPool1d::new(2, 2);
        let mut params = ParameterSet::new(1);
        params.insert("x", Tensor::new(vec![2, 3, 8], data(3, 48, 1.0))?)?;
        run("maxpool1d", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.param("x")?;
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = Linear::new("fc", 5, 3);
        let mut params = ParameterSet::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layer.init(&mut params, &mut rng)?;
        let x = data(4, 4 * 5, 1.0);
        run("linear", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.input(vec![4, 5], x.clone());
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = Gru::new("gru", 3, 4, 2);
        let mut params = ParameterSet::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layer.init(&mut params, &mut rng)?;
        let x = data(5, 2 * 4 * 3, 1.0);
        run("gru", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.input(vec![2, 4, 3], x.clone());
            let (seq, last) = layer.forward(&mut g, xi)?;
            let a = square_mean(&mut g, seq)?;
            let b = square_mean(&mut g, last)?;
            let loss = g.tape.add(a, b)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = MultiHeadAttention::new("attn", 4, 2)?;
        let mut params = ParameterSet::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layer.init(&mut params, &mut rng)?;
        let x = data(6, 2 * 3 * 4, 1.0);
        run("attention", &mut params, &mut |p, grads| {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.input(vec![2, 3, 4], x.clone());
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    {
        let layer = Dropout::new(0.4);
        let mut params = ParameterSet::new(1);
        params.insert("x", Tensor::new(vec![3, 10], data(7, 30, 1.0))?)?;
        run("dropout", &mut params, &mut |p, grads| {
            // Same mask seed per evaluation keeps the probes differentiable.
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(9), true);
            let xi = g.param("x")?;
            let y = layer.forward(&mut g, xi)?;
            let loss = square_mean(&mut g, y)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::layers::Graph;
    use crate::diffnet::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_data(seed: u64, n: usize, scale: f64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-scale..=scale)).collect()
    }

    #[test]
    fn least_squares_gradient_verified() {
        let mut params = ParameterSet::new(1);
        params.insert("w", Tensor::new(vec![3, 2], seeded_data(1, 6, 1.0)).unwrap()).unwrap();
        let x = seeded_data(2, 12, 1.0); // [4,3]
        let y = seeded_data(3, 8, 1.0); // [4,2]
        let mut f = |p: &mut ParameterSet, grads: bool| -> Result<f64> {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let w = g.param("w")?;
            let xi = g.input(vec![4, 3], x.clone());
            let yi = g.input(vec![4, 2], y.clone());
            let pred = g.tape.matmul(xi, w)?;
            let r = g.tape.sub(pred, yi)?;
            let sq = g.tape.mul(r, r)?;
            let loss = g.tape.mean(sq);
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        };
        let res = finite_diff_check(&mut params, 1e-5, None, &mut f).unwrap();
        assert_eq!(res.checked_values, 6);
        assert!(res.max_rel_err < 1e-8, "rel err {}", res.max_rel_err);
    }

    /// One function through nearly every op, so each backward rule is checked
    /// against finite differences in combination with the others.
    #[test]
    fn composite_graph_gradients_verified() {
        let mut params = ParameterSet::new(1);
        let ins = |p: &mut ParameterSet, n: &str, shape: Vec<usize>, seed: u64, scale: f64| {
            let count = shape.iter().product();
            p.insert(n, Tensor::new(shape, seeded_data(seed, count, scale)).unwrap()).unwrap();
        };
        ins(&mut params, "wc", vec![2, 3, 2], 10, 0.6);
        ins(&mut params, "bc", vec![2], 11, 0.2);
        ins(&mut params, "gamma", vec![2], 12, 0.5);
        ins(&mut params, "beta", vec![2], 13, 0.3);
        ins(&mut params, "wf", vec![2, 3], 14, 0.7);
        ins(&mut params, "bf", vec![3], 15, 0.2);
        ins(&mut params, "scale", vec![4], 16, 0.8);
        // Shift gamma away from zero so sign flips cannot make variance paths tiny.
        for v in params.get_mut("gamma").unwrap().data_mut() {
            *v += 1.0;
        }

        let x = seeded_data(20, 2 * 3 * 8, 1.0);
        let mut f = |p: &mut ParameterSet, grads: bool| -> Result<f64> {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let xi = g.input(vec![2, 3, 8], x.clone());
            let wc = g.param("wc")?;
            let bc = g.param("bc")?;
            let gamma = g.param("gamma")?;
            let beta = g.param("beta")?;
            let c = g.tape.conv1d(xi, wc, bc)?; // [2,2,7]
            let bn = g.tape.batchnorm_train(c, gamma, beta, 1e-5)?;
            let r = g.tape.relu(bn);
            let pool = g.tape.maxpool1d(r, 2, 2)?; // [2,2,3]
            let seg = g.tape.avg_segments(pool, 2)?; // [2,2,2]
            let pm = g.tape.permute(seg, &[1, 0, 2])?; // [2,2,2]
            let rs = g.tape.reshape(pm, vec![4, 2])?;
            let wf = g.param("wf")?;
            let bf = g.param("bf")?;
            let mm = g.tape.matmul(rs, wf)?; // [4,3]
            let ab = g.tape.add_bias(mm, bf)?;
            let sg = g.tape.sigmoid(ab);
            let th = g.tape.tanh(ab);
            let m1 = g.tape.mul(sg, th)?;
            let e = g.tape.scalar_mul(m1, 0.1);
            let e = g.tape.exp(e);
            let l = g.tape.scalar_add(e, 1.0);
            let l = g.tape.ln(l);
            let q = g.tape.scalar_add(l, 2.0);
            let q = g.tape.sqrt(q);
            let sc = g.param("scale")?;
            let rsc = g.tape.row_scale(q, sc)?; // [4,3]
            let sm = g.tape.softmax_last(rsc);
            let a3 = g.tape.reshape(sm, vec![2, 2, 3])?;
            let b3 = g.tape.permute(a3, &[0, 2, 1])?; // [2,3,2]
            let bm = g.tape.bmm(a3, b3)?; // [2,2,2]
            let s1 = g.tape.slice_axis(bm, 2, 0, 1)?; // [2,2,1]
            let s2 = g.tape.slice_axis(bm, 2, 1, 1)?; // [2,2,1]
            let cc = g.tape.concat(&[s1, s2, s1], 2)?; // [2,2,3]
            let ma = g.tape.mean_axis(cc, 1)?; // [2,3]
            let sl = g.tape.sum_last(ma)?; // [2]
            let denom = g.tape.constant(vec![2], vec![2.0, 3.0]);
            let dv = g.tape.div(sl, denom)?;
            let shift = g.tape.constant(vec![2], vec![0.1, -0.2]);
            let sb = g.tape.sub(dv, shift)?;
            let mk = g.tape.mul_mask(sb, vec![1.0, 0.5])?;
            let m_loss = g.tape.mean(mk);
            let extra = g.tape.sum(sm);
            let extra = g.tape.scalar_mul(extra, 0.01);
            let loss = g.tape.add(m_loss, extra)?;
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        };
        let res = finite_diff_check(&mut params, 1e-4, None, &mut f).unwrap();
        assert!(
            res.max_rel_err < 1e-4,
            "worst {} at {}[{}]: analytic {} vs numeric {}",
            res.max_rel_err,
            res.worst_param,
            res.worst_index,
            res.worst_analytic,
            res.worst_numeric
        );
    }

    #[test]
    fn inference_batchnorm_gradients_verified() {
        let mut params = ParameterSet::new(1);
        params.insert("gamma", Tensor::new(vec![2], vec![1.3, 0.7]).unwrap()).unwrap();
        params.insert("beta", Tensor::new(vec![2], vec![-0.2, 0.4]).unwrap()).unwrap();
        params.insert("xp", Tensor::new(vec![1, 2, 3], seeded_data(30, 6, 1.0)).unwrap()).unwrap();
        let rm = vec![0.3, -0.1];
        let rv = vec![1.5, 0.8];
        let mut f = |p: &mut ParameterSet, grads: bool| -> Result<f64> {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let x = g.param("xp")?;
            let gamma = g.param("gamma")?;
            let beta = g.param("beta")?;
            let y = g.tape.batchnorm_eval(x, gamma, beta, &rm, &rv, 1e-5)?;
            let sq = g.tape.mul(y, y)?;
            let loss = g.tape.mean(sq);
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        };
        let res = finite_diff_check(&mut params, 1e-6, None, &mut f).unwrap();
        assert!(res.max_rel_err < 1e-7, "rel err {}", res.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut params = ParameterSet::new(1);
        params.insert("w", Tensor::new(vec![2], vec![0.4, -0.7]).unwrap()).unwrap();
        let mut f = |p: &mut ParameterSet, grads: bool| -> Result<f64> {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let w = g.param("w")?;
            let sq = g.tape.mul(w, w)?;
            let loss = g.tape.sum(sq);
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
                // Deliberate corruption, as a broken backward rule would produce.
                if let Some(gr) = &mut p.get_mut("w")?.grad {
                    gr[0] *= 1.5;
                }
            }
            Ok(v)
        };
        let res = finite_diff_check(&mut params, 1e-5, None, &mut f).unwrap();
        assert!(res.max_rel_err > 0.2, "corruption must surface, got {}", res.max_rel_err);
    }

    #[test]
    fn layer_suite_covers_every_kind_under_threshold() {
        let checks = layer_suite(11).unwrap();
        let names: Vec<&str> = checks.iter().map(|c| c.component.as_str()).collect();
        assert_eq!(
            names,
            ["conv1d", "batchnorm1d", "maxpool1d", "linear", "gru", "attention", "dropout"]
        );
        for c in &checks {
            assert!(
                c.passed(),
                "{} rel err {} exceeds {} (worst at {})",
                c.component,
                c.max_rel_err,
                c.threshold,
                c.worst_param
            );
        }
    }

    #[test]
    fn subsampling_caps_probe_count() {
        let mut params = ParameterSet::new(1);
        params.insert("w", Tensor::new(vec![100], seeded_data(40, 100, 1.0)).unwrap()).unwrap();
        let mut f = |p: &mut ParameterSet, grads: bool| -> Result<f64> {
            let mut g = Graph::new(p, ChaCha8Rng::seed_from_u64(0), false);
            let w = g.param("w")?;
            let sq = g.tape.mul(w, w)?;
            let loss = g.tape.mean(sq);
            let v = g.tape.value(loss);
            if grads {
                g.backward_write(loss)?;
            }
            Ok(v)
        };
        let res = finite_diff_check(&mut params, 1e-5, Some(7), &mut f).unwrap();
        assert_eq!(res.checked_values, 7);
        assert!(res.max_rel_err < 1e-8);
    }
}

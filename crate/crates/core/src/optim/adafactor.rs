use super::{
    check_finite, check_inputs, Factored, HyperParams, OptState, StepOptions, StepOutput, Tangents,
};
use crate::error::Result;
use crate::numerics::ParamVector;

/// Default regulariser added to squared gradients (`eps` in [`HyperParams`]).
pub const ADAFACTOR_EPS1: f64 = 1e-30;
/// Update clipping threshold on the per-layer RMS of the scaled update.
pub const ADAFACTOR_CLIP_THRESHOLD: f64 = 1.0;
/// Relative distance from the clipping kink that counts as sitting on it.
const CLIP_BOUNDARY_TOL: f64 = 1e-9;

/// One Adafactor step with first moment, factored second moments for matrix
/// layers and update clipping.
///
/// The learning rate is supplied externally (no relative step size); `beta2`
/// follows `1 - t^-decay_rate` and `h.eps` is the squared-gradient floor.
/// The first moment accumulates the already-scaled update, so `theta' =
/// theta - m'`.
pub fn adafactor_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &OptState,
    h: &HyperParams,
    sched: f64,
    opts: StepOptions,
) -> Result<StepOutput> {
    check_inputs(params, grad, state)?;
    let t = state.t + 1;
    let lr = h.lr_effective(sched);
    let lr_unit = h.base_lr * sched;
    let beta2_hat = 1.0 - (t as f64).powf(-h.decay_rate);

    let mut new_params = params.clone();
    let mut m_out = state.m.clone();
    let mut v_out = state.v.clone();
    let mut factored_out = state.factored.clone();
    let mut tangents = opts.tangents.then(|| Tangents {
        alpha: params.zeros_like(),
        beta1: params.zeros_like(),
    });
    let mut clip_boundary = false;

    let layout = params.layout().clone();
    for (li, span) in layout.layers().iter().enumerate() {
        let range = span.range();
        let g = &grad.values()[range.clone()];
        let mut u = vec![0.0; span.len];

        match (&state.factored[li], &mut factored_out[li]) {
            (Some(prev), Some(next)) => {
                let rows = prev.row.len();
                let cols = prev.col.len();
                let sq = |i: usize, j: usize| g[i * cols + j] * g[i * cols + j] + h.eps;
                for i in 0..rows {
                    let mut acc = 0.0;
                    for j in 0..cols {
                        acc += sq(i, j);
                    }
                    next.row[i] = beta2_hat * prev.row[i] + (1.0 - beta2_hat) * acc / cols as f64;
                }
                for j in 0..cols {
                    let mut acc = 0.0;
                    for i in 0..rows {
                        acc += sq(i, j);
                    }
                    next.col[j] = beta2_hat * prev.col[j] + (1.0 - beta2_hat) * acc / rows as f64;
                }
                let row_mean = next.row.iter().sum::<f64>() / rows as f64;
                let Factored { row, col } = &*next;
                for i in 0..rows {
                    for j in 0..cols {
                        let v_hat = row[i] * col[j] / row_mean;
                        u[i * cols + j] = g[i * cols + j] / v_hat.sqrt();
                    }
                }
            }
            _ => {
                let v0 = &state.v.values()[range.clone()];
                let v_new = v_out.layer_mut(li);
                for i in 0..span.len {
                    v_new[i] = beta2_hat * v0[i] + (1.0 - beta2_hat) * (g[i] * g[i] + h.eps);
                    u[i] = g[i] / v_new[i].sqrt();
                }
            }
        }

        let rms = (u.iter().map(|x| x * x).sum::<f64>() / span.len.max(1) as f64).sqrt();
        let ratio = rms / ADAFACTOR_CLIP_THRESHOLD;
        if (ratio - 1.0).abs() <= CLIP_BOUNDARY_TOL {
            clip_boundary = true;
        }
        let scale = ratio.max(1.0);
        for x in &mut u {
            *x /= scale;
        }

        let m0 = &state.m.values()[range.clone()];
        let m_new = m_out.layer_mut(li);
        for i in 0..span.len {
            m_new[i] = h.beta1 * m0[i] + (1.0 - h.beta1) * lr * u[i];
        }
        let theta = new_params.layer_mut(li);
        for i in 0..span.len {
            theta[i] -= m_new[i];
        }
        if let Some(tan) = tangents.as_mut() {
            let ta = tan.alpha.layer_mut(li);
            for i in 0..span.len {
                ta[i] = -(1.0 - h.beta1) * lr_unit * u[i];
            }
            let tb = tan.beta1.layer_mut(li);
            for i in 0..span.len {
                tb[i] = -(m0[i] - lr * u[i]);
            }
        }
    }

    check_finite(&new_params, "parameter", t)?;
    if let Some(tan) = &tangents {
        check_finite(&tan.alpha, "alpha tangent", t)?;
        check_finite(&tan.beta1, "beta1 tangent", t)?;
    }
    Ok(StepOutput {
        new_params,
        new_state: OptState {
            t,
            m: m_out,
            v: v_out,
            factored: factored_out,
        },
        tangents,
        lr_effective: lr,
        clip_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::OptimizerKind;
    use super::*;
    use crate::numerics::{Layout, Rng, Shape};
    use std::sync::Arc;

    fn matrix_layout() -> Arc<Layout> {
        Arc::new(Layout::new([("w", Shape::Matrix { rows: 4, cols: 3 }, 12)]).unwrap())
    }

    #[test]
    fn first_step_without_momentum_is_plain_update() {
        let layout = matrix_layout();
        let mut rng = Rng::new(4, 0);
        let p = ParamVector::from_values(&layout, rng.draw_gaussian(12)).unwrap();
        let g = ParamVector::from_values(&layout, rng.draw_gaussian(12)).unwrap();
        let s = OptState::new(OptimizerKind::Adafactor, &layout);
        let mut h = HyperParams::defaults(OptimizerKind::Adafactor);
        h.beta1 = 0.0;
        let out = adafactor_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        // beta2_hat(1) = 0, so V_hat is the factored estimate of g^2 itself.
        let f = out.new_state.factored[0].as_ref().unwrap();
        let row_mean = f.row.iter().sum::<f64>() / 4.0;
        let mut u: Vec<f64> = (0..12)
            .map(|k| g.values()[k] / (f.row[k / 3] * f.col[k % 3] / row_mean).sqrt())
            .collect();
        let rms = (u.iter().map(|x| x * x).sum::<f64>() / 12.0).sqrt();
        for x in &mut u {
            *x /= rms.max(1.0);
        }
        for (k, uk) in u.iter().enumerate() {
            let expected = p.values()[k] - h.base_lr * uk;
            assert!((out.new_params.values()[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn beta2_hat_is_zero_at_step_one() {
        let p = ParamVector::from_slice(&[1.0, 2.0]);
        let g = ParamVector::from_slice(&[0.5, -0.1]);
        let s = OptState {
            v: ParamVector::from_slice(&[9.0, 9.0]),
            ..OptState::new(OptimizerKind::Adafactor, p.layout())
        };
        let h = HyperParams::defaults(OptimizerKind::Adafactor);
        let out = adafactor_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        // The stale accumulator is fully replaced.
        assert_eq!(out.new_state.v.values()[0], 0.25 + 1e-30);
        assert_eq!(out.new_state.v.values()[1], 0.010000000000000002 + 1e-30);
    }

    #[test]
    fn vector_layer_first_step_sits_on_clip_boundary() {
        let p = ParamVector::from_slice(&[1.0, 2.0, 3.0]);
        let g = ParamVector::from_slice(&[0.5, -0.1, 2.0]);
        let s = OptState::new(OptimizerKind::Adafactor, p.layout());
        let out = adafactor_step(
            &p,
            &g,
            &s,
            &HyperParams::defaults(OptimizerKind::Adafactor),
            1.0,
            StepOptions::default(),
        )
        .unwrap();
        assert!(out.clip_boundary);
    }

    #[test]
    fn tangents_match_fd_on_matrix_layer() {
        let layout = matrix_layout();
        let mut rng = Rng::new(12, 3);
        for t in [1u64, 3, 10] {
            let (p, g, s) = random_instance(OptimizerKind::Adafactor, &layout, t - 1, &mut rng);
            let mut h = HyperParams::defaults(OptimizerKind::Adafactor);
            h.beta1 = 0.6;
            h.base_lr = 0.02;
            let out = adafactor_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
            assert!(!out.clip_boundary);
            for which in ["alpha", "beta1"] {
                let fd = fd_tangent(OptimizerKind::Adafactor, &p, &g, &s, &h, 1.0, which, 1e-6);
                let tan = if which == "alpha" {
                    out.tangent_alpha().unwrap()
                } else {
                    out.tangent_beta1().unwrap()
                };
                let err = vec_rel_err(tan, &fd);
                assert!(err < 1e-6, "t={t} {which}: {err}");
            }
        }
    }
}

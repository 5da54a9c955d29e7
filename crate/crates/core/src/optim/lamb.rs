use super::{
    check_finite, check_inputs, corrected_first_moment, HyperParams, OptState, StepOptions,
    StepOutput, Tangents,
};
use crate::error::Result;
use crate::numerics::{dot_slices, ParamVector};

/// One LAMB step: the Adam direction (plus weight decay) rescaled per layer by
/// the trust ratio `||theta_l|| / ||u_l||`, taken as 1 when either norm is 0.
pub fn lamb_step(
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
    let bc2 = 1.0 - h.beta2.powi(t as i32);

    let mut new_params = params.clone();
    let mut m_out = state.m.clone();
    let mut v_out = state.v.clone();
    let mut tangents = opts.tangents.then(|| Tangents {
        alpha: params.zeros_like(),
        beta1: params.zeros_like(),
    });

    let layout = params.layout().clone();
    for (li, span) in layout.layers().iter().enumerate() {
        let range = span.range();
        let theta = &params.values()[range.clone()];
        let g = &grad.values()[range.clone()];
        let m0 = &state.m.values()[range.clone()];
        let v0 = &state.v.values()[range.clone()];

        let mut u = vec![0.0; span.len];
        let mut du = vec![0.0; span.len];
        {
            let m_new = &mut m_out.layer_mut(li)[..];
            for i in 0..span.len {
                let (mi, m_hat, dm_hat) =
                    corrected_first_moment(m0[i], g[i], h.beta1, t, opts.bias_correction_grad);
                m_new[i] = mi;
                let vi = h.beta2 * v0[i] + (1.0 - h.beta2) * g[i] * g[i];
                v_out.layer_mut(li)[i] = vi;
                let denom = (vi / bc2).sqrt() + h.eps;
                u[i] = m_hat / denom + h.weight_decay * theta[i];
                du[i] = dm_hat / denom;
            }
        }

        let theta_norm = dot_slices(theta, theta).sqrt();
        let u_norm = dot_slices(&u, &u).sqrt();
        let ratio_active = theta_norm > 0.0 && u_norm > 0.0;
        let ratio = if ratio_active {
            theta_norm / u_norm
        } else {
            1.0
        };

        let out = new_params.layer_mut(li);
        for i in 0..span.len {
            out[i] -= lr * ratio * u[i];
        }

        if let Some(tan) = tangents.as_mut() {
            let d_ratio = if ratio_active && opts.trust_ratio_grad {
                -theta_norm * dot_slices(&u, &du) / (u_norm * u_norm * u_norm)
            } else {
                0.0
            };
            let ta = tan.alpha.layer_mut(li);
            for i in 0..span.len {
                ta[i] = -lr_unit * ratio * u[i];
            }
            let tb = tan.beta1.layer_mut(li);
            for i in 0..span.len {
                tb[i] = -lr * (d_ratio * u[i] + ratio * du[i]);
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
            factored: state.factored.clone(),
        },
        tangents,
        lr_effective: lr,
        clip_boundary: false,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{adam_step, OptimizerKind};
    use super::*;
    use crate::numerics::{Layout, Rng, Shape};
    use std::sync::Arc;

    fn two_layers() -> Arc<Layout> {
        Arc::new(
            Layout::new([
                ("a", Shape::Vector, 3),
                ("b", Shape::Matrix { rows: 2, cols: 2 }, 4),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn unit_ratio_matches_adam() {
        // At t = 1 from zero state u = g / (|g| + eps) elementwise, so a
        // parameter vector of that norm gives r = 1.
        let g = ParamVector::from_slice(&[0.3, -0.4]);
        let mut h = HyperParams::defaults(OptimizerKind::Lamb);
        h.eps = 1e-6;
        let u: Vec<f64> = g.values().iter().map(|x| x / (x.abs() + 1e-6)).collect();
        let un = dot_slices(&u, &u).sqrt();
        let p = ParamVector::from_slice(&[un, 0.0]);
        let s = OptState::new(OptimizerKind::Lamb, p.layout());
        let lamb = lamb_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        let adam = adam_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        for (a, b) in lamb
            .new_params
            .values()
            .iter()
            .zip(adam.new_params.values())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let layout = two_layers();
        let p =
            ParamVector::from_values(&layout, vec![1.0, -2.0, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = p.zeros_like();
        let s = OptState::new(OptimizerKind::Lamb, &layout);
        let out = lamb_step(
            &p,
            &g,
            &s,
            &HyperParams::defaults(OptimizerKind::Lamb),
            1.0,
            StepOptions::default(),
        )
        .unwrap();
        assert_eq!(out.new_params, p);
        let tan = out.tangents.unwrap();
        assert!(tan.alpha.values().iter().all(|v| *v == 0.0));
        assert!(tan.beta1.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn beta1_tangent_matches_fd_two_layers() {
        let layout = two_layers();
        let mut rng = Rng::new(8, 1);
        for warm in [0u64, 4] {
            let (p, g, s) = random_instance(OptimizerKind::Lamb, &layout, warm, &mut rng);
            let mut h = HyperParams::defaults(OptimizerKind::Lamb);
            h.beta1 = 0.7;
            h.base_lr = 0.05;
            let out = lamb_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
            let fd = fd_tangent(OptimizerKind::Lamb, &p, &g, &s, &h, 1.0, "beta1", 1e-6);
            let err = vec_rel_err(out.tangent_beta1().unwrap(), &fd);
            assert!(err < 1e-7, "t={} err {err}", warm + 1);
            let fd = fd_tangent(OptimizerKind::Lamb, &p, &g, &s, &h, 1.0, "alpha", 1e-6);
            assert!(vec_rel_err(out.tangent_alpha().unwrap(), &fd) < 1e-7);
        }
    }

    #[test]
    fn stop_gradient_through_trust_ratio_differs() {
        let layout = two_layers();
        let mut rng = Rng::new(9, 1);
        let (p, g, s) = random_instance(OptimizerKind::Lamb, &layout, 3, &mut rng);
        let h = HyperParams::defaults(OptimizerKind::Lamb);
        let full = lamb_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        let stopped = lamb_step(
            &p,
            &g,
            &s,
            &h,
            1.0,
            StepOptions {
                trust_ratio_grad: false,
                ..StepOptions::default()
            },
        )
        .unwrap();
        assert_eq!(full.new_params, stopped.new_params);
        assert_ne!(full.tangent_beta1(), stopped.tangent_beta1());
    }
}

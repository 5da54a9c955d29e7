use super::{
    check_finite, check_inputs, corrected_first_moment, HyperParams, OptState, StepOptions,
    StepOutput, Tangents,
};
use crate::error::Result;
use crate::numerics::ParamVector;

/// One Adam step with bias correction.
pub fn adam_step(
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

    let theta = new_params.values_mut();
    let m_new = m_out.values_mut();
    let v_new = v_out.values_mut();
    let (m0, v0, g) = (state.m.values(), state.v.values(), grad.values());
    for i in 0..theta.len() {
        let (mi, m_hat, dm_hat) =
            corrected_first_moment(m0[i], g[i], h.beta1, t, opts.bias_correction_grad);
        let vi = h.beta2 * v0[i] + (1.0 - h.beta2) * g[i] * g[i];
        let denom = (vi / bc2).sqrt() + h.eps;
        theta[i] -= lr * m_hat / denom;
        m_new[i] = mi;
        v_new[i] = vi;
        if let Some(tan) = tangents.as_mut() {
            tan.alpha.values_mut()[i] = -lr_unit * m_hat / denom;
            tan.beta1.values_mut()[i] = -lr * dm_hat / denom;
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
    use super::super::{OptimizerKind, StepOptions};
    use super::*;
    use crate::numerics::{Layout, Rng};
    use std::sync::Arc;

    fn first_step_setup() -> (ParamVector, ParamVector, OptState, HyperParams) {
        let p = ParamVector::from_slice(&[1.0]);
        let g = ParamVector::from_slice(&[0.5]);
        let s = OptState::new(OptimizerKind::Adam, p.layout());
        let h = HyperParams {
            base_lr: 0.1,
            alpha_scalar: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            decay_rate: 0.8,
            weight_decay: 0.0,
        };
        (p, g, s, h)
    }

    #[test]
    fn analytic_first_step() {
        let (p, g, s, h) = first_step_setup();
        let out = adam_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        assert!((out.new_params.values()[0] - 0.9000002).abs() < 1e-12);
        assert_eq!(out.tangent_beta1().unwrap().values()[0], 0.0);
        assert_eq!(out.new_state.t, 1);
        assert_eq!(out.lr_effective, 0.1);
    }

    #[test]
    fn second_step_beta1_tangent_matches_fd() {
        let (p, g, s, h) = first_step_setup();
        let first = adam_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap();
        let g2 = ParamVector::from_slice(&[0.25]);
        let out = adam_step(
            &first.new_params,
            &g2,
            &first.new_state,
            &h,
            1.0,
            StepOptions::default(),
        )
        .unwrap();
        // Plain central differences at this step carry ~1e-8 truncation error,
        // so extrapolate from h and h/2.
        let fd = |step| {
            fd_tangent(
                OptimizerKind::Adam,
                &first.new_params,
                &g2,
                &first.new_state,
                &h,
                1.0,
                "beta1",
                step,
            )
            .values()[0]
        };
        let richardson = (4.0 * fd(0.5e-5) - fd(1e-5)) / 3.0;
        let err = rel_err(out.tangent_beta1().unwrap().values()[0], richardson);
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn tangents_match_fd_on_random_instances() {
        let layout = Arc::new(Layout::single(6));
        let mut rng = Rng::new(21, 0);
        for warm in [0u64, 1, 4, 30] {
            let (p, g, s, h) = {
                let (p, g, s) = random_instance(OptimizerKind::Adam, &layout, warm, &mut rng);
                let mut h = HyperParams::defaults(OptimizerKind::Adam);
                h.base_lr = 0.01;
                h.beta1 = 0.8;
                (p, g, s, h)
            };
            let out = adam_step(&p, &g, &s, &h, 0.7, StepOptions::default()).unwrap();
            for which in ["alpha", "beta1"] {
                let fd = fd_tangent(OptimizerKind::Adam, &p, &g, &s, &h, 0.7, which, 1e-6);
                let tan = if which == "alpha" {
                    &out.tangents.as_ref().unwrap().alpha
                } else {
                    &out.tangents.as_ref().unwrap().beta1
                };
                let err = vec_rel_err(tan, &fd);
                assert!(err < 1e-6, "{which} warm {warm}: {err}");
            }
        }
    }

    #[test]
    fn without_bias_correction_grad_drops_the_power_term() {
        let (p, g, s, h) = first_step_setup();
        let opts = StepOptions {
            bias_correction_grad: false,
            ..StepOptions::default()
        };
        let out = adam_step(&p, &g, &s, &h, 1.0, opts).unwrap();
        // (m - g) / (1 - beta1) = -5, scaled by -lr / (sqrt(v_hat) + eps)
        let expected = -0.1 * (-0.5 / (1.0 - 0.9)) / (0.5 + 1e-6);
        assert!(rel_err(out.tangent_beta1().unwrap().values()[0], expected) < 1e-12);
    }

    #[test]
    fn nan_gradient_is_a_numeric_error() {
        let (p, _, s, h) = first_step_setup();
        let g = ParamVector::from_slice(&[f64::NAN]);
        let err = adam_step(&p, &g, &s, &h, 1.0, StepOptions::default()).unwrap_err();
        assert!(err.to_string().contains("coordinate 0"), "{err}");
    }
}

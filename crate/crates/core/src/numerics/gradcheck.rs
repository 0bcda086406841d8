//! Central-difference gradient checking (64-bit).

use crate::error::{Error, Result};

use super::{Graph, ParamSet, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-6;

/// Below this magnitude gradients are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

fn scalar_output(g: &mut Graph<f64>, out: Var) -> Var {
    if g.value(out).numel() == 1 {
        out
    } else {
        g.sum(out)
    }
}

fn evaluate(g: &mut Graph<f64>, out: Var) -> Result<f64> {
    let out = scalar_output(g, out);
    let v = g.value(out).data()[0];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("gradient-check objective".into()))
    }
}

/// Max relative error between backprop and central differences for
/// `sum(f(inputs))`, perturbing every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let run = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let out = scalar_output(&mut g, out);
        Ok((g, vars, out))
    };

    let (mut g, vars, out) = run(inputs)?;
    evaluate(&mut g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    for a in &analytic {
        a.check_finite("analytic gradient")?;
    }

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..probe[t].numel() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let (mut gp, _, op) = run(&probe)?;
            let fp = evaluate(&mut gp, op)?;
            probe[t].data_mut()[i] = orig - eps;
            let (mut gm, _, om) = run(&probe)?;
            let fm = evaluate(&mut gm, om)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`] but perturbs the entries of a [`ParamSet`]. At most
/// `max_per_param` evenly strided entries of each tensor are probed.
pub fn grad_check_params<F>(f: F, params: &ParamSet<f64>, eps: f64, max_per_param: usize) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let run = |p: &ParamSet<f64>| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        let out = scalar_output(&mut g, out);
        Ok((g, out))
    };
    let (mut g, out) = run(params)?;
    evaluate(&mut g, out)?;
    let grads = g.backward(out)?;
    let analytic = g.param_grads(&grads);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, grad) in &analytic {
        grad.check_finite(name)?;
        let n = grad.numel();
        let step = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let orig = probe.get(name).unwrap().data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let (mut gp, op) = run(&probe)?;
            let fp = evaluate(&mut gp, op)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let (mut gm, om) = run(&probe)?;
            let fm = evaluate(&mut gm, om)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(relative_error(grad.data()[i], (fp - fm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

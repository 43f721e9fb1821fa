use crate::autodiff::params::{Bound, ParamStore};
use crate::autodiff::tape::{Faults, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences over every parameter coordinate.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64, faults: Faults) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::Config("grad_check needs a scalar output".into()))
    };

    let mut tape = Tape::with_faults(faults);
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let analytic = tape.backward(out)?.by_param(&tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let ga = &analytic[name];
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(ga.data()[i], numeric);
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::{init_gru, init_mlp, mlp, Gru};
    use crate::autodiff::tensor::Tensor;

    fn mlp_loss(tape: &mut Tape, b: &Bound) -> Result<Var> {
        let x = tape.constant(
            Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.3, -0.7]).unwrap(),
        );
        let y = mlp(tape, b, "m", 2, x)?;
        let t = tape.tanh(y);
        let w = tape.constant(Tensor::new(vec![2, 2], vec![0.7, -1.3, 0.4, 0.9]).unwrap());
        tape.dot(t, w)
    }

    #[test]
    fn linear_model_is_exact() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::row(vec![0.4, -0.2, 1.1])).unwrap();
        let r = grad_check(
            |t, b| {
                let x = t.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
                t.dot(b.get("w")?, x)
            },
            &p,
            DEFAULT_EPS,
            Faults::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn two_layer_mlp_matches_differences() {
        let mut p = ParamStore::new();
        init_mlp(&mut p, "m", &[3, 3, 2], 11).unwrap();
        assert_eq!(p.num_scalars(), 20);
        let r = grad_check(mlp_loss, &p, DEFAULT_EPS, Faults::default()).unwrap();
        assert!(r.max_rel_err < 1e-3, "{r:?}");
    }

    #[test]
    fn gru_cell_matches_differences() {
        let mut p = ParamStore::new();
        init_gru(&mut p, "g", 3, 4, 2).unwrap();
        let f = |t: &mut Tape, b: &Bound| {
            let g = Gru::bind(t, b, "g")?;
            let x = t.constant(Tensor::row(vec![0.2, -0.6, 1.0]));
            let h = t.constant(Tensor::row(vec![0.1, -0.3, 0.5, 0.0]));
            let h1 = g.cell(t, x, h)?;
            let h2 = g.cell(t, x, h1)?;
            let w = t.constant(Tensor::row(vec![1.0, -2.0, 0.5, 1.5]));
            t.dot(h2, w)
        };
        let r = grad_check(f, &p, DEFAULT_EPS, Faults::default()).unwrap();
        assert!(r.max_rel_err < 1e-3, "{r:?}");
    }

    #[test]
    fn corrupted_tanh_is_caught() {
        let mut p = ParamStore::new();
        init_mlp(&mut p, "m", &[3, 3, 2], 11).unwrap();
        let faults = Faults { corrupt_tanh_backward: true };
        let r = grad_check(mlp_loss, &p, DEFAULT_EPS, faults).unwrap();
        assert!(r.max_rel_err > 0.1, "{r:?}");
    }
}

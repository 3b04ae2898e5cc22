//! Central-difference gradient checks for tape-built losses.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
pub const FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub within_tolerance: usize,
    pub worst_relative_error: f64,
    pub worst_parameter: String,
}

impl GradCheckReport {
    pub fn fraction_within(&self) -> f64 {
        self.within_tolerance as f64 / self.coordinates.max(1) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compare backprop gradients of `loss` with central differences of step `h`
/// over every parameter coordinate.
pub fn check_gradients<F>(
    params: &ParamSet<f64>,
    h: f64,
    tolerance: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let l = loss(&mut g, &bound)?;
        Ok(g.value(l).data()[0])
    };
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let l = loss(&mut g, &bound)?;
    let mut grads = g.backward(l)?;
    let analytic = bound.gradients(&g, &mut grads);

    let mut work = params.clone();
    let mut report = GradCheckReport {
        coordinates: 0,
        within_tolerance: 0,
        worst_relative_error: 0.0,
        worst_parameter: String::new(),
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let a = analytic
            .get(&name)
            .ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
        for i in 0..a.len() {
            let original = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = original + h;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original - h;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a.data()[i], numeric);
            report.coordinates += 1;
            if err < tolerance {
                report.within_tolerance += 1;
            }
            if err > report.worst_relative_error {
                report.worst_relative_error = err;
                report.worst_parameter = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamSet::new();
        p.insert(
            "w",
            Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap(),
        );
        let target = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, -1.0]).unwrap();
        let report = check_gradients(&p, 1e-3, 1e-8, |g, b| {
            let t = g.constant(target.clone());
            g.mse(b.var("w")?, t)
        })
        .unwrap();
        assert_eq!(report.coordinates, 3);
        assert_eq!(report.within_tolerance, 3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}

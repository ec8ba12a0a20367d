use super::{Graph, Tensor, TensorError, Var};
use crate::exec::{self, Exec};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// One probed coordinate of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences `(f(x+h) - f(x-h)) / 2h`, element by element,
/// and returns the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var, TensorError> + Sync,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    let checks = grad_check_coords(Exec::default(), f, x, h, &all)?;
    Ok(checks.iter().map(|c| c.relative_error).fold(0.0, f64::max))
}

/// As [`grad_check`], restricted to the flat indices in `coords` and
/// returning every probe. Probes are independent and run under `exec`.
pub fn grad_check_coords<F>(
    exec: Exec,
    f: F,
    x: &Tensor,
    h: f64,
    coords: &[usize],
) -> Result<Vec<CoordCheck>, TensorError>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var, TensorError> + Sync,
{
    if let Some(&bad) = coords.iter().find(|&&i| i >= x.numel()) {
        return Err(super::invalid(
            "grad_check",
            format!("coordinate {bad} out of range for {} elements", x.numel()),
        ));
    }
    let mut g = Graph::new();
    let xv = g.param(x);
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let analytic = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: &Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::no_grad().with_exec(Exec::Sequential);
        let v = g.param(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out)[0])
    };

    exec::map_with(
        exec,
        coords,
        || x.clone(),
        |probe, &i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = eval(probe);
            probe.data_mut()[i] = orig - h;
            let minus = eval(probe);
            probe.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            Ok(CoordCheck {
                index: i,
                analytic: analytic[i],
                numeric,
                relative_error: relative_error(analytic[i], numeric),
            })
        },
    )
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::new(vec![4], vec![0.5, -3.0, 2.25, 8.0]).unwrap();
        let err = grad_check(|g, x| g.sum(x), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn gelu_sum() {
        let x = Tensor::new(vec![3], vec![-2.0, 0.5, 3.0]).unwrap();
        let err = grad_check(
            |g, x| {
                let y = g.gelu(x)?;
                g.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

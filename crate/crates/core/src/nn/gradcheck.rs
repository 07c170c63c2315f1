//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::params::ParamStore;

/// Gradient magnitudes below this (times `max(1, |loss|)`) are compared on an absolute
/// scale: central differences of a loss of size `L` carry roundoff near `1e-16 L / h`.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_ERR_FLOOR)
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients stored in `params` against central differences of `loss`.
///
/// With `max_coords_per_param = Some(k)`, at most `k` coordinates per parameter are
/// drawn (without replacement) from `rng`; otherwise every coordinate is checked.
pub fn finite_difference_check<F, R>(
    params: &ParamStore,
    h: f64,
    mut loss: F,
    max_coords_per_param: Option<usize>,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
    R: Rng,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let floor = REL_ERR_FLOOR * loss(params).abs().max(1.0);
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let id = crate::nn::ParamId(pi);
        let n = params.get(id).value.len();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(id).value.data()[i];
            probe.value_mut(id)[i] = orig + h;
            let plus = loss(&probe);
            probe.value_mut(id)[i] = orig - h;
            let minus = loss(&probe);
            probe.value_mut(id)[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params.get(id).grad.data()[i];
            let err = relative_error_floored(analytic, numeric, floor);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseArray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("a", DenseArray::vector(vec![0.5, -1.25, 3.0])).unwrap();
        p.insert("b", DenseArray::from_vec(&[2, 2], vec![0.1, 0.2, -0.3, 0.4]).unwrap())
            .unwrap();
        p
    }

    fn half_sq_norm(p: &ParamStore) -> f64 {
        p.iter().flat_map(|q| q.value.data().iter()).map(|x| 0.5 * x * x).sum()
    }

    fn fill_exact_grad(p: &mut ParamStore) {
        for q in p.iter_mut() {
            let v = q.value.data().to_vec();
            q.grad.data_mut().copy_from_slice(&v);
        }
    }

    #[test]
    fn quadratic_matches_to_roundoff() {
        let mut p = store();
        fill_exact_grad(&mut p);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = finite_difference_check(&p, 1e-5, half_sq_norm, None, &mut rng);
        assert_eq!(r.coords_checked, 7);
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut p = store();
        fill_exact_grad(&mut p);
        let id = p.id("b").unwrap();
        p.grad_mut(id)[2] *= 1.01;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = finite_difference_check(&p, 1e-5, half_sq_norm, None, &mut rng);
        assert!(r.max_rel_err > 1e-3);
        assert_eq!(r.worst, Some(("b".to_string(), 2)));
    }

    #[test]
    fn sampling_limits_coordinates() {
        let mut p = store();
        fill_exact_grad(&mut p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = finite_difference_check(&p, 1e-5, half_sq_norm, Some(2), &mut rng);
        assert_eq!(r.coords_checked, 4);
    }
}

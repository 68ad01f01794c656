use super::linalg::{cholesky, Matrix};
use super::rng::RngStream;
use crate::error::{dim_err, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Draws `mean + L u` with `L = chol(cov)` and `u` standard normal.
pub fn sample_mvn(mean: &[f64], cov: &Matrix, rng: &mut RngStream) -> Result<Vec<f64>> {
    if cov.rows() != mean.len() {
        return Err(dim_err(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.rows(),
            cov.cols()
        )));
    }
    let l = cholesky(cov)?;
    Ok(sample_mvn_with_factor(mean, &l, rng))
}

/// Same as [`sample_mvn`] with a precomputed lower Cholesky factor.
pub fn sample_mvn_with_factor(mean: &[f64], factor: &Matrix, rng: &mut RngStream) -> Vec<f64> {
    let u: Vec<f64> = (0..mean.len()).map(|_| rng.standard_normal()).collect();
    mean.iter()
        .enumerate()
        .map(|(i, m)| {
            let r = factor.row(i);
            m + r[..=i].iter().zip(&u[..=i]).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Gamma(shape, 1) by Marsaglia and Tsang's squeeze method, with the
/// `U^(1/a)` boost for shapes below one.
pub fn sample_gamma(shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("gamma shape {shape}")));
    }
    if shape < 1.0 {
        let g = sample_gamma(shape + 1.0, rng)?;
        return Ok(g * rng.uniform_open0().powf(1.0 / shape));
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open0();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return Ok(d * v);
        }
    }
}

pub fn sample_chi_squared(dof: f64, rng: &mut RngStream) -> Result<f64> {
    Ok(2.0 * sample_gamma(0.5 * dof, rng)?)
}

/// Dirichlet draw as normalized Gamma variates.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidHyperparameter("empty Dirichlet concentration".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!(
            "Dirichlet concentration {a} is not positive"
        )));
    }
    let mut g = alpha
        .iter()
        .map(|&a| sample_gamma(a, rng))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every gamma draw underflowed (tiny alphas); put the mass on the
        // largest concentration.
        let best = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        g.iter_mut().enumerate().for_each(|(i, v)| *v = f64::from(u8::from(i == best)));
    }
    Ok(g)
}

/// Inverse-Wishart draw: a Bartlett-decomposed Wishart draw on `psi⁻¹`,
/// inverted.
pub fn sample_inverse_wishart(nu: f64, psi: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
    if !psi.is_square() {
        return Err(dim_err("inverse-Wishart scale must be square"));
    }
    let dim = psi.rows();
    if !(nu > dim as f64 - 1.0) || !nu.is_finite() {
        return Err(Error::InvalidHyperparameter(format!(
            "inverse-Wishart needs nu > {}, got {nu}",
            dim as f64 - 1.0
        )));
    }
    let psi_inv = psi.inverse_spd()?;
    let l = cholesky(&psi_inv)?;
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        a[(i, i)] = sample_chi_squared(nu - i as f64, rng)?.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    let la = l.matmul(&a)?;
    let wishart = la.matmul(&la.transpose())?.symmetrize();
    wishart.inverse_spd()
}

/// Index drawn with probability proportional to `weights`, which must be a
/// probability vector.
pub fn sample_categorical(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    validate_probability_vector(weights)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

pub(crate) fn validate_probability_vector(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("weight {w} is negative or non-finite")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mvn_is_deterministic() {
        let cov = Matrix::identity(2);
        let a = sample_mvn(&[5.0, 5.0], &cov, &mut RngStream::new(3)).unwrap();
        let b = sample_mvn(&[5.0, 5.0], &cov, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mvn_rejects_dimension_mismatch() {
        let r = sample_mvn(&[0.0; 3], &Matrix::identity(2), &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mvn_propagates_not_pd() {
        let r = sample_mvn(&[0.0; 2], &mat(&[[1.0, 2.0], [2.0, 1.0]]), &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut rng = RngStream::new(8);
        for alpha in [vec![0.1, 0.2], vec![1.0, 1.0, 1.0], vec![5.0, 0.5, 2.0, 9.0]] {
            for _ in 0..200 {
                let p = sample_dirichlet(&alpha, &mut rng).unwrap();
                assert!(p.iter().all(|v| *v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_rejects_zero_concentration() {
        let r = sample_dirichlet(&[1.0, 0.0, 1.0], &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::InvalidHyperparameter(_))));
    }

    #[test]
    fn inverse_wishart_is_pd() {
        let mut rng = RngStream::new(11);
        let psi = mat(&[[2.0, 0.3], [0.3, 1.0]]);
        for _ in 0..500 {
            let s = sample_inverse_wishart(3.5, &psi, &mut rng).unwrap();
            assert!(s.is_symmetric(1e-12));
            assert!(cholesky(&s).is_ok());
        }
    }

    #[test]
    fn inverse_wishart_dof_bound() {
        let psi = Matrix::identity(2);
        let r = sample_inverse_wishart(1.0, &psi, &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::InvalidHyperparameter(_))));
        // nu = 1.5 exceeds D - 1 = 1 and is a proper (if heavy-tailed) draw.
        let s = sample_inverse_wishart(1.5, &psi, &mut RngStream::new(0)).unwrap();
        assert!(s.is_symmetric(1e-9));
    }

    #[test]
    fn categorical_degenerate() {
        let mut rng = RngStream::new(2);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
            assert_eq!(sample_categorical(&[0.0, 0.0, 1.0], &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn categorical_rejects_invalid_weights() {
        let mut rng = RngStream::new(2);
        assert!(matches!(sample_categorical(&[0.6, 0.6], &mut rng), Err(Error::InvalidWeights(_))));
        assert!(matches!(sample_categorical(&[1.5, -0.5], &mut rng), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn gamma_mean_and_variance() {
        let mut rng = RngStream::new(4);
        for shape in [0.3, 1.0, 4.5] {
            let n = 40_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_gamma(shape, &mut rng).unwrap()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 0.05 * shape.max(1.0), "shape {shape}: mean {mean}");
            assert!((var - shape).abs() < 0.1 * shape.max(1.0), "shape {shape}: var {var}");
        }
    }
}

//! Log-link Poisson GLMs with an exposure offset, fitted by Newton/IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalEncoding, ColumnProvenance, Dataset, EncodedMatrix, GlmDesign, Term};
use crate::error::{Error, Result};
use crate::training::deviance::unit_deviance_log;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    #[serde(flatten)]
    pub column: ColumnProvenance,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmParams {
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    pub link: Link,
    pub encoding: CategoricalEncoding,
}

impl GlmParams {
    pub fn intercept_only(intercept: f64) -> Self {
        GlmParams {
            intercept,
            coefficients: vec![],
            link: Link::Log,
            encoding: CategoricalEncoding::Dummy,
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.beta).collect()
    }

    /// Beta of the column with this label.
    pub fn beta(&self, label: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|c| c.column.label == label)
            .map(|c| c.beta)
    }

    /// Intercept plus one per design column.
    pub fn n_params(&self) -> usize {
        1 + self.coefficients.len()
    }

    fn check_alignment(&self, x: &EncodedMatrix) -> Result<()> {
        if x.cols() != self.coefficients.len()
            || x
                .provenance
                .iter()
                .zip(&self.coefficients)
                .any(|(p, c)| p.label != c.column.label)
        {
            return Err(Error::shape(
                "glm",
                format!(
                    "design has {} columns, parameters expect {} with matching labels",
                    x.cols(),
                    self.coefficients.len()
                ),
            ));
        }
        Ok(())
    }
}

/// `eta_i = beta0 + <beta, x_i>`.
pub fn glm_linear_predictor(p: &GlmParams, x: &EncodedMatrix) -> Result<Vec<f64>> {
    p.check_alignment(x)?;
    let beta = p.betas();
    Ok((0..x.rows)
        .map(|i| p.intercept + x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

/// `exp(eta_i) * v_i`.
pub fn glm_predict(p: &GlmParams, x: &EncodedMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != x.rows {
        return Err(Error::shape(
            "glm_predict",
            format!("{} rows vs {} exposures", x.rows, v.len()),
        ));
    }
    Ok(glm_linear_predictor(p, x)?
        .into_iter()
        .zip(v)
        .map(|(eta, vi)| eta.exp() * vi)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iterations: usize,
    /// Stop once the Newton decrement falls below this fraction of the deviance.
    pub relative_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Jitter added to the Hessian diagonal, relative to its mean; pins a
    /// solution for rank-deficient (one-hot plus intercept) designs.
    pub ridge: Option<f64>,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions {
            max_iterations: 50,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            ridge: None,
        }
    }
}

impl GlmOptions {
    pub fn one_hot() -> Self {
        GlmOptions {
            ridge: Some(1e-8),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFitReport {
    pub iterations: usize,
    /// Summed unit deviance on the fitting rows.
    pub deviance: f64,
    pub converged: bool,
    pub gradient_norm: f64,
    pub n_params: usize,
    /// Asymptotic standard errors (intercept first); absent for ridge fits.
    pub standard_errors: Option<Vec<f64>>,
}

/// `A^T A` for a row-major `n x p` matrix.
fn gram(a: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    if n == 0 || p == 0 {
        return c;
    }
    // SAFETY: `a` holds n*p values and `c` p*p; strides describe A^T (p x n) and A (n x p).
    unsafe {
        matrixmultiply::dgemm(
            p,
            n,
            p,
            1.0,
            a.as_ptr(),
            1,
            p as isize,
            a.as_ptr(),
            p as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    c
}

fn deviance(y: &[f64], eta: &[f64]) -> f64 {
    y.iter().zip(eta).map(|(&yi, &e)| unit_deviance_log(yi, e)).sum()
}

/// Maximum-likelihood Poisson fit with `log(v)` offset and an intercept.
///
/// Columns are centred and scaled internally; the returned parameters are
/// on the original scale of `x`.
pub fn fit_poisson_glm(
    x: &EncodedMatrix,
    y: &[f64],
    v: &[f64],
    opts: &GlmOptions,
) -> Result<(GlmParams, GlmFitReport)> {
    let n = x.rows;
    let p = x.cols();
    if y.len() != n || v.len() != n {
        return Err(Error::shape("fit_poisson_glm", format!("{n} rows vs {} counts, {} exposures", y.len(), v.len())));
    }
    if n == 0 {
        return Err(Error::Empty("GLM fit on zero rows".into()));
    }
    if v.iter().any(|&vi| !(vi > 0.0)) {
        return Err(Error::Contract("exposures must be positive".into()));
    }
    let total_y: f64 = y.iter().sum();
    if !(total_y > 0.0) {
        return Err(Error::Contract("GLM fit needs at least one claim".into()));
    }
    let q = p + 1;

    // standardized design with a leading column of ones
    let mut centre = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n as f64;
        if var.sqrt() <= 1e-12 * (1.0 + m.abs()) {
            if opts.ridge.is_none() {
                return Err(Error::RankDeficient(format!(
                    "column `{}` is constant",
                    x.provenance[j].label
                )));
            }
        } else {
            centre[j] = m;
            scale[j] = var.sqrt();
        }
    }
    let mut z = vec![0.0; n * q];
    for i in 0..n {
        let row = x.row(i);
        let out = &mut z[i * q..(i + 1) * q];
        out[0] = 1.0;
        for j in 0..p {
            out[j + 1] = (row[j] - centre[j]) / scale[j];
        }
    }
    let offset: Vec<f64> = v.iter().map(|vi| vi.ln()).collect();
    let linear = |theta: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| offset[i] + z[i * q..(i + 1) * q].iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };

    let mut theta = vec![0.0; q];
    theta[0] = (total_y / v.iter().sum::<f64>()).ln();
    let mut eta = linear(&theta);
    let mut dev = deviance(y, &eta);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut last_hessian = None;

    while iterations < opts.max_iterations {
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut grad = vec![0.0; q];
        let mut weighted = vec![0.0; n * q];
        for i in 0..n {
            let r = y[i] - mu[i];
            let w = mu[i].sqrt();
            let zi = &z[i * q..(i + 1) * q];
            for j in 0..q {
                grad[j] += zi[j] * r;
                weighted[i * q + j] = zi[j] * w;
            }
        }
        let mut h = DMatrix::from_row_slice(q, q, &gram(&weighted, n, q));
        last_hessian = Some(h.clone());
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        if let Some(r) = opts.ridge {
            let mean_diag = (1..q).map(|j| h[(j, j)]).sum::<f64>() / p.max(1) as f64;
            for j in 1..q {
                h[(j, j)] += r * mean_diag.max(f64::MIN_POSITIVE);
            }
        }
        let chol = h.clone().cholesky().ok_or_else(|| {
            Error::RankDeficient("Hessian is not positive definite".into())
        })?;
        if opts.ridge.is_none() {
            let l = chol.l();
            let diag: Vec<f64> = (0..q).map(|j| l[(j, j)].powi(2)).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            if let Some(j) = diag.iter().position(|&d| d < 1e-12 * max) {
                let label = if j == 0 { "(intercept)".to_string() } else { x.provenance[j - 1].label.clone() };
                return Err(Error::RankDeficient(format!("column `{label}` is collinear with earlier columns")));
            }
        }
        let g = DVector::from_vec(grad.clone());
        let step = chol.solve(&g);
        let decrement: f64 = g.dot(&step);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let trial_eta = linear(&trial);
            let trial_dev = deviance(y, &trial_eta);
            if trial_dev.is_finite() && trial_dev <= dev * (1.0 + 1e-14) + 1e-300 {
                theta = trial;
                eta = trial_eta;
                dev = trial_dev;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        log::debug!("glm iteration {iterations}: deviance {dev}, decrement {decrement:e}, step {t}");
        if decrement <= opts.relative_tolerance * dev.max(1.0) {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { iterations, deviance: dev });
    }

    // back to the original column scale
    let mut betas = vec![0.0; p];
    let mut intercept = theta[0];
    for j in 0..p {
        betas[j] = theta[j + 1] / scale[j];
        intercept -= betas[j] * centre[j];
    }
    let standard_errors = match (opts.ridge, last_hessian) {
        (None, Some(h)) => h.try_inverse().map(|cov| {
            let mut tmat = DMatrix::<f64>::zeros(q, q);
            tmat[(0, 0)] = 1.0;
            for j in 0..p {
                tmat[(j + 1, j + 1)] = 1.0 / scale[j];
                tmat[(0, j + 1)] = -centre[j] / scale[j];
            }
            let c = &tmat * cov * tmat.transpose();
            (0..q).map(|j| c[(j, j)].max(0.0).sqrt()).collect()
        }),
        _ => None,
    };
    let encoding = CategoricalEncoding::Dummy;
    let params = GlmParams {
        intercept,
        coefficients: x
            .provenance
            .iter()
            .zip(betas)
            .map(|(c, beta)| Coefficient {
                column: c.clone(),
                beta,
            })
            .collect(),
        link: Link::Log,
        encoding,
    };
    if !params.intercept.is_finite() || params.coefficients.iter().any(|c| !c.beta.is_finite()) {
        return Err(Error::NonFinite("fit_poisson_glm".into()));
    }
    let report = GlmFitReport {
        iterations,
        deviance: dev,
        converged,
        gradient_norm: grad_norm,
        n_params: q,
        standard_errors,
    };
    Ok((params, report))
}

/// A GLM together with the design that encodes its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedGlm {
    pub design: GlmDesign,
    pub params: GlmParams,
}

impl FittedGlm {
    pub fn fit(design: &GlmDesign, train: &Dataset, opts: &GlmOptions) -> Result<(FittedGlm, GlmFitReport)> {
        let x = design.encode(train)?;
        let (mut params, report) = fit_poisson_glm(&x, &train.response, &train.exposure, opts)?;
        let one_hot = design.terms.iter().any(|t| {
            matches!(
                t,
                Term::Factor { encoding: CategoricalEncoding::OneHot, .. }
                    | Term::Binned { encoding: CategoricalEncoding::OneHot, .. }
            )
        });
        if one_hot {
            params.encoding = CategoricalEncoding::OneHot;
        }
        log::info!(
            "fitted {} with {} parameters in {} iterations, deviance {:.6}",
            design.name,
            params.n_params(),
            report.iterations,
            report.deviance
        );
        Ok((
            FittedGlm {
                design: design.clone(),
                params,
            },
            report,
        ))
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    pub fn linear_predictor(&self, d: &Dataset) -> Result<Vec<f64>> {
        glm_linear_predictor(&self.params, &self.design.encode(d)?)
    }

    pub fn predict(&self, d: &Dataset) -> Result<Vec<f64>> {
        glm_predict(&self.params, &self.design.encode(d)?, &d.exposure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthSpec;

    #[test]
    fn intercept_only_is_log_frequency() {
        let d = SynthSpec::small(2000).generate(5).unwrap().dataset;
        let x = EncodedMatrix::empty(d.n_rows());
        let (p, r) = fit_poisson_glm(&x, &d.response, &d.exposure, &GlmOptions::default()).unwrap();
        assert!((p.intercept - d.frequency().ln()).abs() < 1e-12);
        assert!(r.converged);
        assert_eq!(r.n_params, 1);
    }

    #[test]
    fn prediction_example() {
        let p = GlmParams::intercept_only(0.0735f64.ln());
        let x = EncodedMatrix::empty(1);
        let y = glm_predict(&p, &x, &[0.5]).unwrap();
        assert!((y[0] - 0.03675).abs() < 1e-15);
        assert_eq!(glm_predict(&GlmParams::intercept_only(0.0), &x, &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn balance_holds_after_fit() {
        let d = SynthSpec::mtpl(20_000).generate(9).unwrap().dataset;
        for design in [GlmDesign::mtpl_glm1(), GlmDesign::mtpl_glm3()] {
            let (g, _) = FittedGlm::fit(&design, &d, &GlmOptions::default()).unwrap();
            let total: f64 = g.predict(&d).unwrap().iter().sum();
            let rel = (total - d.total_claims()).abs() / d.total_claims();
            assert!(rel < 1e-6, "{}: {rel}", design.name);
        }
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let x = EncodedMatrix::from_columns(
            3,
            vec![(ColumnProvenance::numeric("c", "c"), vec![2.0, 2.0, 2.0])],
        )
        .unwrap();
        let err = fit_poisson_glm(&x, &[1.0, 0.0, 2.0], &[1.0; 3], &GlmOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn misaligned_design_is_rejected() {
        let p = GlmParams::intercept_only(0.0);
        let x = EncodedMatrix::from_columns(1, vec![(ColumnProvenance::numeric("a", "a"), vec![1.0])]).unwrap();
        assert!(glm_linear_predictor(&p, &x).is_err());
    }

    #[test]
    fn params_json_is_keyed_by_label() {
        let d = SynthSpec::small(500).generate(1).unwrap().dataset;
        let design = GlmDesign {
            name: "small".into(),
            terms: vec![Term::Factor {
                column: "c".into(),
                encoding: CategoricalEncoding::Dummy,
            }],
        };
        let (g, _) = FittedGlm::fit(&design, &d, &GlmOptions::default()).unwrap();
        let text = serde_json::to_string(&g.params).unwrap();
        assert!(text.contains("\"label\":\"c=b\""), "{text}");
        let back: GlmParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g.params);
    }
}

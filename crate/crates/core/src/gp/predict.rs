//! Posterior mean and variance at exact or uncertain test inputs.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{LocationDistribution, Point};
use crate::kernels::{
    cross_classical, cross_expected, expected_mean, gram_classical, gram_expected, Hyperparameters, KernelExponent,
    PolyLogApprox,
};
use crate::linalg::Factor;

use super::{LearnedModel, Posterior, TrainingSet};

fn classical_mean(theta: &Hyperparameters, x: &Point) -> Result<f64> {
    let d = x.norm();
    if d == 0.0 {
        return Err(Error::Domain("location coincides with the transmitter".into()));
    }
    Ok(theta.l0 - 10.0 * theta.eta * d.log10())
}

fn jitter_scale(theta: &Hyperparameters) -> f64 {
    theta.sigma_psi * theta.sigma_psi + theta.sigma_n * theta.sigma_n
}

/// Classical GP conditioned on observations at exact points; the factorization
/// is shared by all test inputs.
#[derive(Debug, Clone)]
pub struct CgpPredictor {
    theta: Hyperparameters,
    points: Vec<Point>,
    factor: Factor,
    beta: DVector<f64>,
}

impl CgpPredictor {
    /// Condition on the reported means of `data`.
    pub fn new(model: &LearnedModel, data: &TrainingSet) -> Result<Self> {
        Self::at_points(&model.theta, data.means(), data.y())
    }

    pub fn at_points(theta: &Hyperparameters, points: Vec<Point>, y: &[f64]) -> Result<Self> {
        theta.validate()?;
        let mu: Vec<f64> = points.iter().map(|x| classical_mean(theta, x)).collect::<Result<_>>()?;
        let r = DVector::from_iterator(y.len(), y.iter().zip(&mu).map(|(y, m)| y - m));
        let factor = Factor::new(gram_classical(&points, theta), jitter_scale(theta))?;
        let beta = factor.solve(&r);
        Ok(Self {
            theta: *theta,
            points,
            factor,
            beta,
        })
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn predict(&self, x: &Point) -> Result<Posterior> {
        let k = cross_classical(&self.points, x, &self.theta);
        let mean = classical_mean(&self.theta, x)? + k.dot(&self.beta);
        let prior = self.theta.prior_variance();
        Posterior::checked(mean, prior - self.factor.quad_form(&k), prior)
    }

    /// Average the posterior over `m` draws of the test location.
    pub fn predict_marginal<R: Rng + ?Sized>(
        &self,
        u_star: &LocationDistribution,
        m: usize,
        rng: &mut R,
    ) -> Result<Posterior> {
        if u_star.is_exact() {
            return self.predict(&u_star.mean());
        }
        let parts: Vec<Posterior> = (0..m)
            .map(|_| self.predict(&u_star.sample(rng)))
            .collect::<Result<_>>()?;
        combine(&parts)
    }
}

/// Law of total variance over Monte Carlo posteriors.
fn combine(parts: &[Posterior]) -> Result<Posterior> {
    if parts.is_empty() {
        return Err(Error::Config("MCGP prediction needs at least one sample".into()));
    }
    let m = parts.len() as f64;
    let mean = parts.iter().map(|p| p.mean).sum::<f64>() / m;
    let between = parts.iter().map(|p| (p.mean - mean).powi(2)).sum::<f64>() / m;
    let within = parts.iter().map(|p| p.variance).sum::<f64>() / m;
    Ok(Posterior {
        mean,
        variance: between + within,
    })
}

pub fn predict_cgp(model: &LearnedModel, data: &TrainingSet, x_star: &Point) -> Result<Posterior> {
    CgpPredictor::new(model, data)?.predict(x_star)
}

/// GP on location distributions with the expected kernel and expected mean.
#[derive(Debug, Clone)]
pub struct UgpPredictor {
    theta: Hyperparameters,
    inputs: Vec<LocationDistribution>,
    factor: Factor,
    beta: DVector<f64>,
}

impl UgpPredictor {
    pub fn new(model: &LearnedModel, data: &TrainingSet) -> Result<Self> {
        let theta = model.theta;
        theta.validate()?;
        if theta.p != KernelExponent::Two {
            return Err(Error::UnsupportedKernel(
                "expected-kernel prediction requires p = 2".into(),
            ));
        }
        let approx = PolyLogApprox::relative();
        let mu: Vec<f64> = data
            .inputs()
            .iter()
            .map(|u| Ok(expected_mean(u, &theta, approx)?.value))
            .collect::<Result<_>>()?;
        let r = DVector::from_iterator(data.len(), data.y().iter().zip(&mu).map(|(y, m)| y - m));
        let factor = Factor::new(gram_expected(data.inputs(), &theta)?, jitter_scale(&theta))?;
        let beta = factor.solve(&r);
        Ok(Self {
            theta,
            inputs: data.inputs().to_vec(),
            factor,
            beta,
        })
    }

    pub fn predict(&self, u_star: &LocationDistribution) -> Result<Posterior> {
        let k = cross_expected(&self.inputs, u_star, &self.theta)?;
        let mean = expected_mean(u_star, &self.theta, PolyLogApprox::relative())?.value + k.dot(&self.beta);
        let prior = self.theta.prior_variance();
        Posterior::checked(mean, prior - self.factor.quad_form(&k), prior)
    }
}

pub fn predict_ugp(model: &LearnedModel, data: &TrainingSet, u_star: &LocationDistribution) -> Result<Posterior> {
    UgpPredictor::new(model, data)?.predict(u_star)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McgpPredictOptions {
    /// Number of joint draws `M`.
    pub samples: usize,
    /// Warn when `N * M` exceeds this; each draw factorizes an `N x N` matrix.
    pub cost_budget: usize,
}

impl Default for McgpPredictOptions {
    fn default() -> Self {
        Self {
            samples: 300,
            cost_budget: 100_000,
        }
    }
}

/// Monte Carlo prediction: classical GP posteriors averaged over joint draws
/// of the training and test locations.
pub fn predict_mcgp<R: Rng + ?Sized>(
    model: &LearnedModel,
    data: &TrainingSet,
    u_star: &LocationDistribution,
    opts: &McgpPredictOptions,
    rng: &mut R,
) -> Result<Posterior> {
    if data.all_exact() {
        return CgpPredictor::new(model, data)?.predict_marginal(u_star, opts.samples, rng);
    }
    if data.len() * opts.samples > opts.cost_budget {
        log::warn!(
            "MCGP prediction with N = {} and M = {} factorizes {} matrices",
            data.len(),
            opts.samples,
            opts.samples
        );
    }
    let mut parts = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let xs: Vec<Point> = data.inputs().iter().map(|u| u.sample(rng)).collect();
        let x_star = u_star.sample(rng);
        parts.push(CgpPredictor::at_points(&model.theta, xs, data.y())?.predict(&x_star)?);
    }
    combine(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point1, Dim};
    use crate::gp::{Diagnostics, ModelKind};
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn model(theta: Hyperparameters, kind: ModelKind) -> LearnedModel {
        LearnedModel {
            theta,
            kind,
            residuals: vec![],
            sigma_tot: 0.0,
            converged: true,
            diagnostics: Diagnostics::Grid {
                d_c: vec![],
                second: vec![],
                nll: DMatrix::zeros(0, 0),
            },
        }
    }

    fn exact(xs: &[f64], ys: &[f64]) -> TrainingSet {
        TrainingSet::new(
            xs.iter()
                .map(|&x| LocationDistribution::exact(point1(x), Dim::One))
                .collect(),
            ys.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_interpolation() {
        let th = Hyperparameters {
            sigma_n: 0.0,
            sigma_proc: 0.0,
            ..Default::default()
        };
        let data = exact(&[30.0, 45.0, 52.0, 80.0], &[-50.0, -48.0, -55.0, -62.0]);
        let p = predict_cgp(&model(th, ModelKind::Cgp), &data, &point1(45.0)).unwrap();
        assert!((p.mean + 48.0).abs() < 1e-9);
        assert!(p.variance.abs() < 1e-9);
    }

    #[test]
    fn far_test_point_reverts_to_prior() {
        let th = Hyperparameters {
            d_c: 2.0,
            sigma_proc: 1.0,
            ..Default::default()
        };
        let data = exact(&[30.0, 32.0], &[-40.0, -41.0]);
        let x = point1(200.0);
        let p = predict_cgp(&model(th, ModelKind::Cgp), &data, &x).unwrap();
        assert!((p.mean - (-10.0 - 25.0 * 200f64.log10())).abs() < 1e-9);
        assert!((p.variance - 101.0).abs() < 1e-9);
    }

    #[test]
    fn two_point_conditioning_matches_hand_formula() {
        let th = Hyperparameters {
            sigma_proc: 0.5,
            ..Default::default()
        };
        let (x1, x2, xs) = (40.0, 50.0, 47.0);
        let (y1, y2) = (-45.0, -53.0);
        let data = exact(&[x1, x2], &[y1, y2]);
        let p = predict_cgp(&model(th, ModelKind::Cgp), &data, &point1(xs)).unwrap();

        let mu = |x: f64| -10.0 - 25.0 * f64::log10(x);
        let c = |a: f64, b: f64| 100.0 * (-(a - b).abs() / 15.0).exp();
        let k11 = 100.0 + 0.25 + 1e-4;
        let k12 = c(x1, x2);
        let det = k11 * k11 - k12 * k12;
        let (r1, r2) = (y1 - mu(x1), y2 - mu(x2));
        let (b1, b2) = ((k11 * r1 - k12 * r2) / det, (k11 * r2 - k12 * r1) / det);
        let (s1, s2) = (c(xs, x1), c(xs, x2));
        let mean = mu(xs) + s1 * b1 + s2 * b2;
        let quad = (k11 * s1 * s1 - 2.0 * k12 * s1 * s2 + k11 * s2 * s2) / det;
        let var = 100.25 - quad;
        assert!((p.mean - mean).abs() < 1e-12 * mean.abs());
        assert!((p.variance - var).abs() < 1e-12 * var.max(1.0));
    }

    #[test]
    fn ugp_matches_squared_exponential_cgp_when_exact() {
        let th = Hyperparameters {
            p: KernelExponent::Two,
            sigma_proc: 1.5,
            d_c: 12.0,
            ..Default::default()
        };
        let data = exact(
            &[25.0, 33.0, 41.0, 60.0, 62.0, 90.0],
            &[-45.0, -47.0, -50.0, -55.0, -53.0, -60.0],
        );
        for x in [20.0, 33.0, 50.0, 61.0, 150.0] {
            let a = predict_ugp(
                &model(th, ModelKind::Ugp),
                &data,
                &LocationDistribution::exact(point1(x), Dim::One),
            )
            .unwrap();
            let b = predict_cgp(&model(th, ModelKind::Cgp), &data, &point1(x)).unwrap();
            assert!((a.mean - b.mean).abs() <= 1e-10 * b.mean.abs());
            assert!((a.variance - b.variance).abs() <= 1e-10 * b.variance.max(1.0));
        }
    }

    #[test]
    fn ugp_rejects_exponential_kernel() {
        let data = exact(&[25.0, 33.0], &[-45.0, -47.0]);
        assert!(UgpPredictor::new(&model(Hyperparameters::default(), ModelKind::Ugp), &data).is_err());
    }

    #[test]
    fn growing_test_uncertainty_reverts_to_expected_mean() {
        // training within d_c / sqrt(2) of the test mean, where spreading the
        // test input strictly lowers every cross-covariance
        let th = Hyperparameters {
            p: KernelExponent::Two,
            sigma_proc: 1.0,
            ..Default::default()
        };
        let data = exact(&[65.0, 70.0, 80.0], &[-50.0, -52.0, -48.0]);
        let pred = UgpPredictor::new(&model(th, ModelKind::Ugp), &data).unwrap();
        let approx = PolyLogApprox::relative();
        let mut last: Option<DVector<f64>> = None;
        let mut gaps = vec![];
        for s in [0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0] {
            let u = LocationDistribution::isotropic(point1(72.0), s, Dim::One).unwrap();
            let k = cross_expected(data.inputs(), &u, &th).unwrap();
            if let Some(prev) = &last {
                assert!(k.iter().zip(prev.iter()).all(|(a, b)| a < b), "s = {s}");
            }
            last = Some(k);
            let p = pred.predict(&u).unwrap();
            gaps.push((p.mean - expected_mean(&u, &th, approx).unwrap().value).abs());
        }
        // once the cross-covariances are attenuated the mean collapses onto mu(u*)
        assert!(gaps.windows(2).skip(2).all(|w| w[1] < w[0]), "{gaps:?}");
        let peak = gaps.iter().cloned().fold(0.0, f64::max);
        assert!(*gaps.last().unwrap() < 0.25 * peak, "{gaps:?}");
    }

    #[test]
    fn mcgp_reverts_to_cgp_for_exact_inputs() {
        let th = Hyperparameters {
            sigma_proc: 1.0,
            ..Default::default()
        };
        let data = exact(&[25.0, 33.0, 41.0, 60.0], &[-45.0, -47.0, -50.0, -55.0]);
        let m = model(th, ModelKind::Cgp);
        let x = point1(47.0);
        let a = predict_cgp(&m, &data, &x).unwrap();
        for samples in [1, 7, 300] {
            let opts = McgpPredictOptions {
                samples,
                ..Default::default()
            };
            let b = predict_mcgp(
                &m,
                &data,
                &LocationDistribution::exact(x, Dim::One),
                &opts,
                &mut stream(1, &[]),
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mcgp_mean_converges_to_averaged_posterior_mean() {
        let th = Hyperparameters {
            sigma_proc: 1.0,
            ..Default::default()
        };
        let data = exact(&[25.0, 33.0, 41.0, 60.0], &[-45.0, -47.0, -50.0, -55.0]);
        let m = model(th, ModelKind::Cgp);
        let u = LocationDistribution::isotropic(point1(45.0), 4.0, Dim::One).unwrap();
        let pred = CgpPredictor::new(&m, &data).unwrap();
        let opts = McgpPredictOptions {
            samples: 2000,
            ..Default::default()
        };
        let mc = predict_mcgp(&m, &data, &u, &opts, &mut stream(2, &[])).unwrap();

        let mut rng = stream(99, &[]);
        let n = 100_000;
        let means: Vec<f64> = (0..n)
            .map(|_| pred.predict(&u.sample(&mut rng)).unwrap().mean)
            .collect();
        let q = means.iter().sum::<f64>() / n as f64;
        let sd = (means.iter().map(|v| (v - q).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = (sd * sd / 2000.0 + sd * sd / n as f64).sqrt();
        assert!((mc.mean - q).abs() < 2.0 * se, "{} vs {q} (se {se})", mc.mean);
    }

    #[test]
    fn mcgp_variance_includes_between_sample_spread() {
        let th = Hyperparameters {
            sigma_proc: 1.0,
            ..Default::default()
        };
        let data = TrainingSet::new(
            [30.0, 45.0, 60.0]
                .iter()
                .map(|&x| LocationDistribution::isotropic(point1(x), 3.0, Dim::One).unwrap())
                .collect(),
            vec![-45.0, -50.0, -56.0],
        )
        .unwrap();
        let m = model(th, ModelKind::Cgp);
        let u = LocationDistribution::isotropic(point1(50.0), 3.0, Dim::One).unwrap();
        let opts = McgpPredictOptions {
            samples: 200,
            ..Default::default()
        };
        let p = predict_mcgp(&m, &data, &u, &opts, &mut stream(3, &[])).unwrap();
        let mut rng = stream(3, &[]);
        let mut within = 0.0;
        for _ in 0..200 {
            let xs: Vec<Point> = data.inputs().iter().map(|u| u.sample(&mut rng)).collect();
            let xst = u.sample(&mut rng);
            within += CgpPredictor::at_points(&th, xs, data.y())
                .unwrap()
                .predict(&xst)
                .unwrap()
                .variance;
        }
        assert!(p.variance >= within / 200.0 - 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn posterior_variance_bounded_by_prior(
            xs in proptest::collection::vec(20.0..200.0f64, 2..25),
            x_star in 20.0..200.0f64,
            dc in 0.5..60.0f64,
            proc in 0.0..5.0f64,
            two in any::<bool>(),
        ) {
            let p = if two { KernelExponent::Two } else { KernelExponent::One };
            let th = Hyperparameters { d_c: dc, sigma_proc: proc, p, ..Default::default() };
            let ys: Vec<f64> = xs.iter().map(|x| -10.0 - 25.0 * x.log10()).collect();
            let data = exact(&xs, &ys);
            if let Ok(pred) = CgpPredictor::new(&model(th, ModelKind::Cgp), &data) {
                let post = pred.predict(&point1(x_star)).unwrap();
                prop_assert!(post.variance >= 0.0);
                prop_assert!(post.variance <= th.prior_variance() + 1e-8);
            }
        }

        #[test]
        fn adding_a_training_point_never_increases_variance(
            xs in proptest::collection::vec(20.0..200.0f64, 2..20),
            extra in 20.0..200.0f64,
            x_star in 20.0..200.0f64,
            dc in 0.5..60.0f64,
        ) {
            let th = Hyperparameters { d_c: dc, sigma_proc: 0.5, ..Default::default() };
            let ys: Vec<f64> = xs.iter().map(|x| -10.0 - 25.0 * x.log10()).collect();
            let small = CgpPredictor::new(&model(th, ModelKind::Cgp), &exact(&xs, &ys)).unwrap();
            let mut xs2 = xs.clone();
            xs2.push(extra);
            let mut ys2 = ys.clone();
            ys2.push(-50.0);
            let big = CgpPredictor::new(&model(th, ModelKind::Cgp), &exact(&xs2, &ys2)).unwrap();
            let a = small.predict(&point1(x_star)).unwrap().variance;
            let b = big.predict(&point1(x_star)).unwrap().variance;
            prop_assert!(b <= a + 1e-8 * th.prior_variance());
        }

        #[test]
        fn ugp_variance_bounded_by_prior(
            xs in proptest::collection::vec((20.0..200.0f64, 0.0..10.0f64), 2..20),
            z in 20.0..200.0f64, s in 0.0..10.0f64, dc in 0.5..60.0f64,
        ) {
            let th = Hyperparameters { d_c: dc, sigma_proc: 1.0, p: KernelExponent::Two, ..Default::default() };
            let inputs = xs.iter().map(|&(x, s)| LocationDistribution::isotropic(point1(x), s, Dim::One).unwrap()).collect();
            let data = TrainingSet::new(inputs, xs.iter().map(|(x, _)| -10.0 - 25.0 * x.log10()).collect()).unwrap();
            let pred = UgpPredictor::new(&model(th, ModelKind::Ugp), &data).unwrap();
            let post = pred.predict(&LocationDistribution::isotropic(point1(z), s, Dim::One).unwrap()).unwrap();
            prop_assert!(post.variance >= 0.0 && post.variance <= th.prior_variance() + 1e-8);
        }
    }
}

//! Plain SGD with a polynomially decaying step and Polyak–Ruppert averaging.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{DataSource, Datum};
use crate::scalar::Scalar;

/// Step size `eta0 * i^(-alpha)` with `alpha` in (0.5, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule<T> {
    eta0: T,
    alpha: T,
}

impl<T: Scalar> LearningRateSchedule<T> {
    pub fn new(eta0: T, alpha: T) -> Result<Self> {
        if !(eta0 > T::zero()) || !eta0.is_finite() {
            return Err(Error::InvalidParameter(format!("eta0 must be positive, got {eta0}")));
        }
        if !(alpha > T::lit(0.5) && alpha < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0.5, 1), got {alpha}"
            )));
        }
        Ok(Self { eta0, alpha })
    }

    pub fn eta0(&self) -> T {
        self.eta0
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Step size for the global (1-based) step index `i`.
    #[inline]
    pub fn rate(&self, i: u64) -> T {
        debug_assert!(i >= 1);
        self.eta0 * T::from_u64(i).expect("step index representable").powf(-self.alpha)
    }
}

/// Current iterate, step counter and running average of post-burn-in iterates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateState<T> {
    pub theta: Vec<T>,
    /// Number of steps taken so far, burn-in included.
    pub index: u64,
    pub running_mean: Vec<T>,
    /// Iterates discarded as burn-in so far.
    pub burned: u64,
    burn_in: u64,
}

impl<T: Scalar> IterateState<T> {
    pub fn new(theta0: Vec<T>, burn_in: u64) -> Self {
        let d = theta0.len();
        Self {
            theta: theta0,
            index: 0,
            running_mean: vec![T::zero(); d],
            burned: 0,
            burn_in,
        }
    }

    pub fn dimension(&self) -> usize {
        self.theta.len()
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in
    }

    /// Number of iterates folded into `running_mean`.
    pub fn averaged(&self) -> u64 {
        self.index - self.burned
    }

    pub fn in_burn_in(&self) -> bool {
        self.index <= self.burn_in
    }

    /// `theta <- theta - eta * grad`, then folds the new iterate into the
    /// average once past burn-in.
    pub fn step(&mut self, grad: &[T], eta: T) -> Result<()> {
        check_dim(self.theta.len(), grad.len())?;
        for (t, &g) in self.theta.iter_mut().zip(grad) {
            *t -= eta * g;
        }
        self.index += 1;
        if self.index <= self.burn_in {
            self.burned += 1;
        } else {
            let k = T::from_u64(self.averaged()).expect("count representable");
            for (m, &t) in self.running_mean.iter_mut().zip(&self.theta) {
                *m += (t - *m) / k;
            }
        }
        Ok(())
    }
}

/// Stochastic gradient of a per-observation loss.
pub trait GradientOracle<T: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    /// Writes `∇f(theta, datum)` into `out`. Must be deterministic.
    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]);

    fn gradient(&self, theta: &[T], datum: &Datum<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.dimension()];
        self.gradient_into(theta, datum, &mut out);
        out
    }
}

impl<T: Scalar, O: GradientOracle<T> + ?Sized> GradientOracle<T> for &O {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        (**self).gradient_into(theta, datum, out)
    }
}

impl<T: Scalar> GradientOracle<T> for Box<dyn GradientOracle<T>> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        (**self).gradient_into(theta, datum, out)
    }
}

/// Receives every post-burn-in state.
pub trait IterateObserver<T> {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()>;
}

impl<T> IterateObserver<T> for () {
    fn observe(&mut self, _state: &IterateState<T>) -> Result<()> {
        Ok(())
    }
}

impl<T, O: IterateObserver<T> + ?Sized> IterateObserver<T> for &mut O {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        (**self).observe(state)
    }
}

impl<T, A: IterateObserver<T>, B: IterateObserver<T>> IterateObserver<T> for (A, B) {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        self.0.observe(state)?;
        self.1.observe(state)
    }
}

/// Stores the whole post-burn-in chain. Test and diagnostic use only.
#[derive(Clone, Debug, Default)]
pub struct ChainRecorder<T> {
    pub chain: Vec<Vec<T>>,
}

impl<T: Clone> IterateObserver<T> for ChainRecorder<T> {
    fn observe(&mut self, state: &IterateState<T>) -> Result<()> {
        self.chain.push(state.theta.clone());
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AsgdOutput<T> {
    pub theta_hat: Vec<T>,
    pub state: IterateState<T>,
}

/// Runs `burn_in + n` SGD steps and averages the last `n` iterates.
///
/// The step index feeding the learning rate counts burn-in steps too.
pub fn run_asgd<T, O, D, S>(
    oracle: &O,
    source: &mut D,
    schedule: &LearningRateSchedule<T>,
    theta0: Vec<T>,
    burn_in: u64,
    n: u64,
    observer: &mut S,
) -> Result<AsgdOutput<T>>
where
    T: Scalar,
    O: GradientOracle<T> + ?Sized,
    D: DataSource<T> + ?Sized,
    S: IterateObserver<T> + ?Sized,
{
    let state = IterateState::new(theta0, burn_in);
    continue_asgd(oracle, source, schedule, state, burn_in + n, observer)
}

/// Advances an existing state until `state.index == target_index`.
pub fn continue_asgd<T, O, D, S>(
    oracle: &O,
    source: &mut D,
    schedule: &LearningRateSchedule<T>,
    mut state: IterateState<T>,
    target_index: u64,
    observer: &mut S,
) -> Result<AsgdOutput<T>>
where
    T: Scalar,
    O: GradientOracle<T> + ?Sized,
    D: DataSource<T> + ?Sized,
    S: IterateObserver<T> + ?Sized,
{
    let d = oracle.dimension();
    check_dim(d, state.dimension())?;
    let requested = target_index.saturating_sub(state.index);
    let start = state.index;
    let mut datum = Datum::with_dimension(source.covariate_dimension());
    let mut grad = vec![T::zero(); d];
    while state.index < target_index {
        if !source.next_into(&mut datum)? {
            return Err(Error::StreamExhausted {
                consumed: state.index - start,
                requested,
            });
        }
        oracle.gradient_into(&state.theta, &datum, &mut grad);
        let eta = schedule.rate(state.index + 1);
        state.step(&grad, eta)?;
        if !state.in_burn_in() {
            observer.observe(&state)?;
        }
    }
    Ok(AsgdOutput {
        theta_hat: state.running_mean.clone(),
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MeanLoss, VecSource};
    use approx::assert_relative_eq;

    #[test]
    fn learning_rate_values() {
        let s = LearningRateSchedule::new(0.5, 0.51).unwrap();
        assert_eq!(s.rate(1), 0.5);
        assert_relative_eq!(s.rate(100), 0.5 * 100f64.powf(-0.51), max_relative = 1e-15);
        assert!((s.rate(100) - 0.047749).abs() < 1e-6);
        let s = LearningRateSchedule::new(1.0, 0.75).unwrap();
        assert_eq!(s.rate(16), 0.125);
    }

    #[test]
    fn schedule_validation() {
        assert!(LearningRateSchedule::new(0.0, 0.6).is_err());
        assert!(LearningRateSchedule::new(1.0, 0.5).is_err());
        assert!(LearningRateSchedule::new(1.0, 1.0).is_err());
        assert!(LearningRateSchedule::new(-1.0, 0.7).is_err());
    }

    #[test]
    fn single_step() {
        let mut st = IterateState::new(vec![0.0, 0.0], 0);
        st.step(&[1.0, -2.0], 0.5).unwrap();
        assert_eq!(st.theta, vec![-0.5, 1.0]);
        assert_eq!(st.index, 1);
        assert_eq!(st.running_mean, st.theta);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut st = IterateState::new(vec![1.5, -3.0, 7.0], 2);
        for _ in 0..10 {
            st.step(&[0.0; 3], 0.9).unwrap();
        }
        assert_eq!(st.theta, vec![1.5, -3.0, 7.0]);
        assert_eq!(st.running_mean, vec![1.5, -3.0, 7.0]);
        assert_eq!(st.burned, 2);
    }

    #[test]
    fn step_rejects_bad_dimension() {
        let mut st = IterateState::new(vec![0.0; 2], 0);
        assert!(matches!(
            st.step(&[1.0], 0.1),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn mean_model_first_step() {
        // grad = theta - y, so theta1 = 0 + 1 * (2 - 0)
        let sched = LearningRateSchedule::new(1.0, 0.6).unwrap();
        let mut src = VecSource::scalar_responses(&[2.0]);
        let out = run_asgd(&MeanLoss, &mut src, &sched, vec![0.0], 0, 1, &mut ()).unwrap();
        assert_eq!(out.state.theta, vec![2.0]);
        assert_eq!(out.theta_hat, vec![2.0]);
    }

    #[test]
    fn mean_model_matches_offline_loop() {
        let ys = [1.0, 3.0, 2.0, 4.0];
        let sched = LearningRateSchedule::new(1.0, 0.6).unwrap();
        let mut src = VecSource::scalar_responses(&ys);
        let mut rec = ChainRecorder::default();
        let out = run_asgd(&MeanLoss, &mut src, &sched, vec![0.0], 0, 4, &mut rec).unwrap();

        let mut theta = 0.0f64;
        let mut chain = Vec::new();
        for (i, y) in ys.iter().enumerate() {
            let eta = ((i + 1) as f64).powf(-0.6);
            theta += eta * (y - theta);
            chain.push(theta);
        }
        let flat: Vec<f64> = rec.chain.iter().map(|v| v[0]).collect();
        assert_eq!(flat, chain);
        assert_relative_eq!(out.theta_hat[0], chain.iter().sum::<f64>() / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn burn_in_advances_learning_rate_clock() {
        let ys = [5.0, -1.0, 2.0, 0.5, 3.0];
        let sched = LearningRateSchedule::new(0.8, 0.7).unwrap();
        let mut src = VecSource::scalar_responses(&ys);
        let out = run_asgd(&MeanLoss, &mut src, &sched, vec![0.0], 2, 3, &mut ()).unwrap();

        let mut theta = 0.0f64;
        let mut post = Vec::new();
        for (i, y) in ys.iter().enumerate() {
            theta -= 0.8 * ((i + 1) as f64).powf(-0.7) * (theta - y);
            if i >= 2 {
                post.push(theta);
            }
        }
        assert_eq!(out.state.index, 5);
        assert_eq!(out.state.burned, 2);
        assert_eq!(out.state.theta[0], theta);
        assert_relative_eq!(out.theta_hat[0], post.iter().sum::<f64>() / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn constant_stream_at_fixed_point() {
        let ys = vec![5.0; 50];
        let sched = LearningRateSchedule::new(0.5, 0.51).unwrap();
        let mut src = VecSource::scalar_responses(&ys);
        let out = run_asgd(&MeanLoss, &mut src, &sched, vec![5.0], 10, 40, &mut ()).unwrap();
        assert_eq!(out.theta_hat, vec![5.0]);
    }

    #[test]
    fn exhausted_stream_reports_progress() {
        let sched = LearningRateSchedule::new(0.5, 0.51).unwrap();
        let mut src = VecSource::scalar_responses(&[1.0, 2.0, 3.0]);
        let err = run_asgd(&MeanLoss, &mut src, &sched, vec![0.0], 1, 5, &mut ()).unwrap_err();
        assert!(matches!(err, Error::StreamExhausted { consumed: 3, requested: 6 }));
    }
}

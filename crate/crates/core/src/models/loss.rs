use crate::linalg::dot;
use crate::models::Datum;
use crate::scalar::Scalar;
use crate::sgd::GradientOracle;

/// A gradient oracle that can also report its loss value.
pub trait Loss<T: Scalar>: GradientOracle<T> {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T;
}

impl<T: Scalar> GradientOracle<T> for Box<dyn Loss<T>> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        (**self).gradient_into(theta, datum, out)
    }
}

impl<T: Scalar> Loss<T> for Box<dyn Loss<T>> {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T {
        (**self).loss(theta, datum)
    }
}

/// Logistic function, stable for large `|u|`.
#[inline]
pub fn sigmoid<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

/// Squared error `(y − xᵀθ)²/2`.
#[derive(Clone, Copy, Debug)]
pub struct LinearLoss {
    d: usize,
}

impl LinearLoss {
    pub fn new(d: usize) -> Self {
        Self { d }
    }
}

impl<T: Scalar> GradientOracle<T> for LinearLoss {
    fn dimension(&self) -> usize {
        self.d
    }

    #[inline]
    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        let r = datum.y - dot(&datum.x, theta);
        for (o, &x) in out.iter_mut().zip(&datum.x) {
            *o = -r * x;
        }
    }
}

impl<T: Scalar> Loss<T> for LinearLoss {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T {
        let r = datum.y - dot(&datum.x, theta);
        r * r * T::lit(0.5)
    }
}

/// Absolute deviation `|y − xᵀθ|`, subgradient `−sign(r)·x` with `sign(0) = 0`.
#[derive(Clone, Copy, Debug)]
pub struct LadLoss {
    d: usize,
}

impl LadLoss {
    pub fn new(d: usize) -> Self {
        Self { d }
    }
}

impl<T: Scalar> GradientOracle<T> for LadLoss {
    fn dimension(&self) -> usize {
        self.d
    }

    #[inline]
    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        let r = datum.y - dot(&datum.x, theta);
        let s = if r > T::zero() {
            T::one()
        } else if r < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        for (o, &x) in out.iter_mut().zip(&datum.x) {
            *o = -s * x;
        }
    }
}

impl<T: Scalar> Loss<T> for LadLoss {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T {
        (datum.y - dot(&datum.x, theta)).abs()
    }
}

/// Bernoulli negative log-likelihood with logit link.
#[derive(Clone, Copy, Debug)]
pub struct LogisticLoss {
    d: usize,
}

impl LogisticLoss {
    pub fn new(d: usize) -> Self {
        Self { d }
    }
}

impl<T: Scalar> GradientOracle<T> for LogisticLoss {
    fn dimension(&self) -> usize {
        self.d
    }

    #[inline]
    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        let r = sigmoid(dot(&datum.x, theta)) - datum.y;
        for (o, &x) in out.iter_mut().zip(&datum.x) {
            *o = r * x;
        }
    }
}

impl<T: Scalar> Loss<T> for LogisticLoss {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T {
        let u = dot(&datum.x, theta);
        // log(1 + e^u) - y u
        let softplus = u.max(T::zero()) + (-u.abs()).exp().ln_1p();
        softplus - datum.y * u
    }
}

/// Mean model `(y − θ)²/2` with scalar `θ`; ignores `x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanLoss;

impl<T: Scalar> GradientOracle<T> for MeanLoss {
    fn dimension(&self) -> usize {
        1
    }

    #[inline]
    fn gradient_into(&self, theta: &[T], datum: &Datum<T>, out: &mut [T]) {
        out[0] = theta[0] - datum.y;
    }
}

impl<T: Scalar> Loss<T> for MeanLoss {
    fn loss(&self, theta: &[T], datum: &Datum<T>) -> T {
        let r = datum.y - theta[0];
        r * r * T::lit(0.5)
    }
}

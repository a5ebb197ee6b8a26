//! Float helpers that `core` does not provide without `std`.

pub(crate) use libm::{erf, exp, floor, pow, sqrt};

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

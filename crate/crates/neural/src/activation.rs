//! Scalar and slice activations, and their derivatives expressed through the
//! output.
//!
//! Sigmoid and tanh share a branch-free exponential so the slice versions
//! vectorize; it agrees with `f64::exp` to about one ulp on the clamped
//! range, which is all a probability model needs.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// 1.5 * 2^52: adding it rounds to an integer kept in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// `a * b + c`, fused when the target has FMA.
#[inline(always)]
fn mul_add(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `e^x` for `x` clamped to `[-708, 708]`.
#[inline(always)]
fn exp_bounded(x: f64) -> f64 {
    let x = x.clamp(-708.0, 708.0);
    let t = x * LOG2E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series of e^r; |r| <= ln(2)/2 so the degree-13 tail is < 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    p = mul_add(p, r, 1.0 / 479_001_600.0);
    p = mul_add(p, r, 1.0 / 39_916_800.0);
    p = mul_add(p, r, 1.0 / 3_628_800.0);
    p = mul_add(p, r, 1.0 / 362_880.0);
    p = mul_add(p, r, 1.0 / 40_320.0);
    p = mul_add(p, r, 1.0 / 5_040.0);
    p = mul_add(p, r, 1.0 / 720.0);
    p = mul_add(p, r, 1.0 / 120.0);
    p = mul_add(p, r, 1.0 / 24.0);
    p = mul_add(p, r, 1.0 / 6.0);
    p = mul_add(p, r, 0.5);
    p = mul_add(p, r, 1.0);
    p = mul_add(p, r, 1.0);
    let k = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits()) as i64;
    p * f64::from_bits((k.wrapping_add(1023) as u64) << 52)
}

#[inline(always)]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + exp_bounded(-z))
}

#[inline(always)]
pub fn tanh(z: f64) -> f64 {
    1.0 - 2.0 / (1.0 + exp_bounded(2.0 * z))
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// d/dz sigmoid, given y = sigmoid(z).
#[inline]
pub fn sigmoid_grad(y: f64) -> f64 {
    y * (1.0 - y)
}

/// d/dz tanh, given y = tanh(z).
#[inline]
pub fn tanh_grad(y: f64) -> f64 {
    1.0 - y * y
}

pub fn sigmoid_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = sigmoid(*x);
    }
}

pub fn tanh_in_place(xs: &mut [f64]) {
    for x in xs {
        *x = tanh(*x);
    }
}

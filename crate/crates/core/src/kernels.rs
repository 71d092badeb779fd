//! Elementwise kernels written so the compiler can vectorize them.
//!
//! `libm`'s `exp` is a scalar call, and the sigmoid inside every SiLU layer
//! is the hottest loop of both training and backprop through the sampler.
//! The exponential here uses Cody-Waite range reduction and a degree-12
//! Taylor polynomial (about 1 ulp). The AVX2 entry point runs the same
//! source, and Rust never contracts to FMA, so both paths agree bitwise.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// `1.5 * 2^52`: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const EXP_MAX: f64 = 709.0;
const EXP_MIN: f64 = -708.0;

/// Reciprocal factorials `1/12!, 1/11!, ..., 1/1!, 1/0!` for Horner.
const TAYLOR: [f64; 13] = [
    2.087_675_698_786_81e-9,
    2.505_210_838_544_172e-8,
    2.755_731_922_398_589e-7,
    2.755_731_922_398_589_3e-6,
    2.480_158_730_158_73e-5,
    1.984_126_984_126_984e-4,
    1.388_888_888_888_889e-3,
    8.333_333_333_333_333e-3,
    4.166_666_666_666_666_4e-2,
    1.666_666_666_666_666_6e-1,
    0.5,
    1.0,
    1.0,
];

/// `exp(x)` for `x` in `[EXP_MIN, EXP_MAX]`.
#[inline(always)]
fn exp_in_range(x: f64) -> f64 {
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = TAYLOR[0];
    for &c in &TAYLOR[1..] {
        p = p * r + c;
    }
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

#[inline(always)]
fn sigmoid_lane(x: f64) -> f64 {
    let e = exp_in_range((-x).clamp(EXP_MIN, EXP_MAX));
    let s = 1.0 / (1.0 + e);
    let s = if -x > EXP_MAX { 0.0 } else { s };
    if x.is_nan() { x } else { s }
}

#[inline(always)]
fn sigmoid_generic(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = sigmoid_lane(v);
    }
}

#[inline(always)]
fn silu_generic(x: &[f64], y: &mut [f64], s: &mut [f64]) {
    for ((yo, so), &v) in y.iter_mut().zip(s.iter_mut()).zip(x) {
        let sv = sigmoid_lane(v);
        *so = sv;
        *yo = v * sv;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sigmoid_avx2(x: &[f64], out: &mut [f64]) {
    sigmoid_generic(x, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn silu_avx2(x: &[f64], y: &mut [f64], s: &mut [f64]) {
    silu_generic(x, y, s)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `out[i] = 1 / (1 + exp(-x[i]))`.
pub fn sigmoid(x: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), out.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the feature was detected at runtime.
        return unsafe { sigmoid_avx2(x, out) };
    }
    sigmoid_generic(x, out)
}

/// SiLU values `y = x * sigmoid(x)` together with the sigmoid itself, which
/// the backward pass reuses.
pub fn silu(x: &[f64], y: &mut [f64], s: &mut [f64]) {
    assert!(x.len() == y.len() && x.len() == s.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the feature was detected at runtime.
        return unsafe { silu_avx2(x, y, s) };
    }
    silu_generic(x, y, s)
}

//! Slice-wise `exp`, sigmoid and tanh written so the compiler can
//! vectorise them. Every code path performs the same IEEE operations in the
//! same order (no fused multiply-add), so results do not depend on which
//! instruction set is selected at run time.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Adding this rounds a float of magnitude < 2^51 to an integer and leaves
/// that integer in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;

/// `e^x` with relative error below 2e-16 on `[-708, 709]`; arguments
/// outside that range are clamped.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    let kd = x * LOG2_E + SHIFTER;
    let k = kd - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial of degree 13 in Horner form.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(kd.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (1.0 + exp(2.0 * x))
}

macro_rules! dispatch {
    ($name:ident, $wide:ident, $f:ident) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $wide(v: &mut [f64]) {
            for x in v {
                *x = $f(*x);
            }
        }

        pub(crate) fn $name(v: &mut [f64]) {
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                unsafe { $wide(v) };
                return;
            }
            for x in v {
                *x = $f(*x);
            }
        }
    };
}

dispatch!(sigmoid_slice, sigmoid_avx2, sigmoid);
dispatch!(tanh_slice, tanh_avx2, tanh);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_is_accurate() {
        let mut worst = 0.0_f64;
        for k in -70_800..70_900 {
            let x = k as f64 * 0.01 + 0.003;
            let (a, b) = (exp(x), x.exp());
            if b.is_normal() {
                worst = worst.max(((a - b) / b).abs());
            }
        }
        assert!(worst < 2e-16 * 4.0, "worst relative error {worst:e}");
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(1e6), exp(709.0));
        assert!(exp(-1e6) > 0.0);
    }

    #[test]
    fn activations_match_std() {
        for k in -4000..=4000 {
            let x = k as f64 * 0.005;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "tanh {x}");
            assert!(
                (sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15,
                "sigmoid {x}"
            );
        }
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn slice_versions_agree_with_scalar() {
        let mut v: Vec<f64> = (0..1001).map(|i| (i as f64 - 500.0) * 0.037).collect();
        let mut w = v.clone();
        let scalar: Vec<f64> = v.iter().map(|&x| tanh(x)).collect();
        tanh_slice(&mut v);
        assert_eq!(v, scalar);
        let scalar: Vec<f64> = w.iter().map(|&x| sigmoid(x)).collect();
        sigmoid_slice(&mut w);
        assert_eq!(w, scalar);
    }
}

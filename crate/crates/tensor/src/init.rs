//! Weight initializers.

use rand::Rng;

use crate::scalar::Scalar;

/// Truncated normal: samples outside two standard deviations are redrawn.
pub fn trunc_normal<S: Scalar>(rng: &mut impl Rng, std: f64, n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && out.len() < n {
                out.push(S::from_f64(z * std));
            }
        }
    }
    out
}

/// He (Kaiming) uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform<S: Scalar>(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<S> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::from_f64(rng.gen_range(-limit..limit))).collect()
}

/// Glorot uniform: `U(-sqrt(6/(fan_in+fan_out)), ...)`.
pub fn glorot_uniform<S: Scalar>(
    rng: &mut impl Rng,
    fan_in: usize,
    fan_out: usize,
    n: usize,
) -> Vec<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| S::from_f64(rng.gen_range(-limit..limit))).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = super::trunc_normal(&mut rng, 0.02, 10_000);
        assert!(v.iter().all(|x| x.abs() <= 0.04 + 1e-12));
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 2e-3);
    }

    #[test]
    fn he_uniform_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let limit = (6.0f64 / 30.0).sqrt();
        let v: Vec<f32> = super::he_uniform(&mut rng, 30, 1000);
        assert!(v.iter().all(|x| (x.abs() as f64) <= limit));
    }
}

//! Keyed random streams.
//!
//! Every random quantity in a simulation is drawn from a stream addressed by
//! `(seed, domain, index...)`. The stream state is a pure function of that
//! key, so a value never depends on how many other values were drawn before
//! it or on which thread drew them. Serial and parallel runs therefore agree
//! bit for bit.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;

/// Generator type handed out for one keyed stream.
pub type StreamRng = Pcg64Mcg;

/// Role of a stream. Distinct domains never share state for equal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Phase = 1,
    Fading = 2,
    Delay = 3,
    Noise = 4,
    Trial = 5,
    Batch = 6,
    Init = 7,
    Data = 8,
    Partition = 9,
    Profile = 10,
    Round = 11,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and a sequence of indices into a single 64-bit key.
#[inline]
pub fn mix(seed: u64, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// Derive a child seed, e.g. the seed of trial `t` from a run seed.
#[inline]
pub fn derive(seed: u64, domain: Domain, index: u64) -> u64 {
    mix(seed, &[domain as u64, index])
}

/// Open the stream for `(seed, domain, indices)`.
pub fn stream(seed: u64, domain: Domain, indices: &[u64]) -> StreamRng {
    let hi = mix(seed, &[domain as u64, indices.len() as u64]);
    let lo = mix(hi, indices);
    let state = ((splitmix64(hi ^ lo) as u128) << 64) | lo as u128;
    Pcg64Mcg::new(state)
}

/// Draw from CN(0, variance).
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(scale * re, scale * im)
}

/// Uniform point on the unit circle.
#[inline]
pub fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    Complex64::from_polar(1.0, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_pure_functions_of_key() {
        let a = stream(7, Domain::Fading, &[3, 11]).next_u64();
        let _unrelated = stream(7, Domain::Noise, &[3, 11]).next_u64();
        let b = stream(7, Domain::Fading, &[3, 11]).next_u64();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let base = stream(7, Domain::Fading, &[3, 11]).next_u64();
        assert_ne!(base, stream(8, Domain::Fading, &[3, 11]).next_u64());
        assert_ne!(base, stream(7, Domain::Noise, &[3, 11]).next_u64());
        assert_ne!(base, stream(7, Domain::Fading, &[11, 3]).next_u64());
        assert_ne!(base, stream(7, Domain::Fading, &[3, 11, 0]).next_u64());
    }

    #[test]
    fn complex_normal_has_requested_power() {
        let mut rng = stream(1, Domain::Trial, &[0]);
        let n = 200_000;
        let p: f64 = (0..n)
            .map(|_| complex_normal(&mut rng, 3.0).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((p - 3.0).abs() < 0.03, "power {p}");
    }
}

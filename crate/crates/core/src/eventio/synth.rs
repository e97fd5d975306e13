use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EventIoError, EventRecord, Hit, HitCollection};

/// Collection name used by the generator.
pub const DEFAULT_COLLECTION: &str = "calorimeter";
const MANTISSA_BITS: u32 = 23;

/// Keep the top `bits` mantissa bits of `v`, zeroing the rest.
pub fn quantize(v: f32, bits: u32) -> f32 {
    if bits >= MANTISSA_BITS {
        return v;
    }
    let mask = !((1u32 << (MANTISSA_BITS - bits)) - 1);
    f32::from_bits(v.to_bits() & mask)
}

/// Streaming generator of gaussian calorimeter events, ids from 0.
pub struct SyntheticEvents {
    rng: ChaCha8Rng,
    hits_per_event: usize,
    quantize_bits: u32,
    next_id: u64,
    n_events: u64,
}

impl SyntheticEvents {
    pub fn new(n_events: u64, hits_per_event: usize, seed: u64, quantize_bits: u32) -> Result<Self, EventIoError> {
        if n_events == 0 || hits_per_event == 0 {
            return Err(EventIoError::InvalidArgument("n_events and hits_per_event must be at least 1".into()));
        }
        if quantize_bits > MANTISSA_BITS {
            return Err(EventIoError::InvalidArgument(format!("quantize_bits {quantize_bits} exceeds 23")));
        }
        Ok(SyntheticEvents { rng: ChaCha8Rng::seed_from_u64(seed), hits_per_event, quantize_bits, next_id: 0, n_events })
    }

    fn sample(&mut self) -> f32 {
        let v: f32 = StandardNormal.sample(&mut self.rng);
        quantize(v, self.quantize_bits)
    }
}

impl Iterator for SyntheticEvents {
    type Item = EventRecord;

    fn next(&mut self) -> Option<EventRecord> {
        if self.next_id == self.n_events {
            return None;
        }
        let hits = (0..self.hits_per_event)
            .map(|_| Hit {
                edep_abs: self.sample(),
                edep_gap: self.sample(),
                track_len_abs: self.sample(),
                track_len_gap: self.sample(),
            })
            .collect();
        let event = EventRecord {
            event_id: self.next_id,
            collections: vec![HitCollection { detector_name: DEFAULT_COLLECTION.into(), hits }],
        };
        self.next_id += 1;
        Some(event)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.n_events - self.next_id) as usize;
        (left, Some(left))
    }
}

pub fn generate_synthetic(
    n_events: u64,
    hits_per_event: usize,
    seed: u64,
    quantize_bits: u32,
) -> Result<Vec<EventRecord>, EventIoError> {
    Ok(SyntheticEvents::new(n_events, hits_per_event, seed, quantize_bits)?.collect())
}

#[cfg(test)]
mod tests {
    use super::super::{compression_factor, write_events, Codec};
    use super::*;

    const REF_FACTOR_Q10: f64 = 1.7460;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(1, 1000, 42, 23).unwrap();
        let b = generate_synthetic(1, 1000, 42, 23).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].collections[0].hits.len(), 1000);
        assert!(a[0].bits_eq(&b[0]));
        let c = generate_synthetic(1, 1000, 43, 23).unwrap();
        assert!(!a[0].bits_eq(&c[0]));
    }

    #[test]
    fn zero_bits_leaves_signed_powers_of_two() {
        for e in generate_synthetic(3, 200, 7, 0).unwrap() {
            for h in &e.collections[0].hits {
                for v in h.values() {
                    assert_eq!(v.to_bits() & 0x007F_FFFF, 0, "{v}");
                    if v != 0.0 {
                        assert_eq!(v.abs().log2().fract(), 0.0, "{v}");
                    }
                }
            }
        }
    }

    #[test]
    fn quantize_masks_low_bits() {
        let v = f32::from_bits(0x3FFF_FFFF);
        assert_eq!(quantize(v, 23).to_bits(), 0x3FFF_FFFF);
        assert_eq!(quantize(v, 10).to_bits(), 0x3FFF_E000);
        assert_eq!(quantize(v, 0).to_bits(), 0x3F80_0000);
        assert_eq!(quantize(-1.75, 1), -1.5);
    }

    #[test]
    fn preconditions() {
        assert!(generate_synthetic(0, 1, 0, 10).is_err());
        assert!(generate_synthetic(1, 0, 0, 10).is_err());
        assert!(generate_synthetic(1, 1, 0, 24).is_err());
    }

    #[test]
    fn moments_of_a_million_hits() {
        let evs = SyntheticEvents::new(1000, 1000, 2024, 23).unwrap();
        let (mut n, mut sum, mut sq) = (0f64, 0f64, 0f64);
        for e in evs {
            for h in &e.collections[0].hits {
                let x = h.edep_abs as f64;
                n += 1.0;
                sum += x;
                sq += x * x;
            }
        }
        assert_eq!(n, 1e6);
        let mean = sum / n;
        let std = (sq / n - mean * mean).sqrt();
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((std - 1.0).abs() < 0.01, "std {std}");
    }

    fn factor(bits: u32, n: u64) -> f64 {
        let evs = generate_synthetic(n, 1000, 99, bits).unwrap();
        let stats = write_events(std::io::sink(), &evs, Codec::Deflate, 100).unwrap();
        compression_factor(&stats).unwrap()
    }

    #[test]
    fn fewer_mantissa_bits_never_compress_worse() {
        let (f8, f16, f23) = (factor(8, 200), factor(16, 200), factor(23, 200));
        assert!(f8 >= f16 && f16 >= f23, "{f8} {f16} {f23}");
    }

    #[test]
    fn default_quantization_reference_factor() {
        // Measured once with this generator and codec, then frozen.
        let f = factor(10, 200);
        assert!((f - REF_FACTOR_Q10).abs() < 1e-3, "{f}");
    }
}

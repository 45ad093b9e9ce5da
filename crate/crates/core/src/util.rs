/// FNV-1a 64-bit hash. Used for key placement so shard assignment is stable
/// across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Integer exponential moving average with alpha = 0.3, kept in integer
/// microseconds so repeated runs stay bit-identical.
pub fn ema_us(prev: Option<u64>, sample: u64) -> u64 {
    match prev {
        None => sample,
        Some(p) => (3 * sample + 7 * p) / 10,
    }
}

/// Ceiling division for unsigned integers.
pub fn div_ceil(a: u64, b: u64) -> u64 {
    debug_assert!(b > 0);
    a / b + u64::from(a % b != 0)
}

/// `ppm` parts-per-million of `elapsed`, rounded to nearest. Signed because
/// drift rates can run slow as well as fast.
pub fn ppm_of(ppm: i64, elapsed: u64) -> i64 {
    let num = ppm as i128 * elapsed as i128;
    let den = 1_000_000i128;
    let half = den / 2;
    let adj = if num >= 0 { num + half } else { num - half };
    (adj / den) as i64
}

/// `ppm` parts-per-million of `elapsed`, rounded up. Used for error bounds,
/// which must never understate.
pub fn ppm_ceil(ppm: u64, elapsed: u64) -> u64 {
    let num = ppm as u128 * elapsed as u128;
    ((num + 999_999) / 1_000_000) as u64
}

/// Shard placement for a key, by stable hash. Every node must agree on this
/// without coordination.
pub fn shard_of_key(key: &str, shards: u32) -> u32 {
    debug_assert!(shards > 0);
    (fnv1a(key.as_bytes()) % shards as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        // Frozen reference values; placement must never change under us.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"t0.k17"), fnv1a(b"t0.k17"));
        assert_ne!(fnv1a(b"t0.k17"), fnv1a(b"t0.k18"));
    }

    #[test]
    fn ema_first_sample_passes_through() {
        assert_eq!(ema_us(None, 400), 400);
        // 0.3 * 1000 + 0.7 * 400 = 580
        assert_eq!(ema_us(Some(400), 1000), 580);
    }

    #[test]
    fn shard_placement_is_total_and_stable() {
        for t in 0..4u32 {
            for k in 0..50u32 {
                let key = format!("t{t}.k{k}");
                let s = shard_of_key(&key, 6);
                assert!(s < 6);
                assert_eq!(s, shard_of_key(&key, 6));
            }
        }
        assert_eq!(shard_of_key("anything", 1), 0);
    }

    #[test]
    fn ppm_arithmetic() {
        // 200 ppm over one second is 200 us.
        assert_eq!(ppm_of(200, 1_000_000), 200);
        assert_eq!(ppm_of(-200, 1_000_000), -200);
        // 200 ppm over 1 ms rounds from 0.2 to 0 nearest, 1 ceiling.
        assert_eq!(ppm_of(200, 1_000), 0);
        assert_eq!(ppm_ceil(200, 1_000), 1);
        assert_eq!(ppm_ceil(200, 0), 0);
        assert_eq!(div_ceil(10, 5), 2);
        assert_eq!(div_ceil(11, 5), 3);
    }
}

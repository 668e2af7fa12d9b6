//! Counter-based splittable random streams.
//!
//! Every random draw in this crate is a pure function of a key built from
//! `(seed, domain tag, indices...)`, so results never depend on evaluation
//! order, thread schedule, or how many draws other components consumed.
//! Normal variates come from a single uniform through the inverse CDF,
//! which keeps one draw == one counter slot.

/// splitmix64 finalizer; a strong 64-bit mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// An immutable stream key. `child` and `tag` derive sub-streams; `u64_at`
/// and friends read the stream at a counter position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix(seed.wrapping_add(GOLDEN)))
    }

    /// Derive a sub-stream by integer index.
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(self.0 ^ index.wrapping_mul(GOLDEN).wrapping_add(0x5851_f42d_4c95_7f2d)))
    }

    /// Derive a sub-stream by domain name.
    pub fn tag(self, name: &str) -> Self {
        // FNV-1a over the tag bytes, folded into the key.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in name.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        StreamKey(mix(self.0 ^ h))
    }

    /// Raw key value, for provenance records.
    pub fn raw(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn u64_at(self, i: u64) -> u64 {
        mix(self.0 ^ i.wrapping_mul(0xd6e8_feb8_6659_fd93))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform_at(self, i: u64) -> f64 {
        // 53 random bits, centered in the cell so 0 and 1 are unreachable.
        ((self.u64_at(i) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via the inverse CDF.
    #[inline]
    pub fn normal_at(self, i: u64) -> f64 {
        inverse_normal_cdf(self.uniform_at(i))
    }
}

/// Inverse of the standard normal CDF (Wichura's PPND16 rational
/// approximations, double precision, relative accuracy about 1e-15).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly_r(
            r,
            &[
                3.387_132_872_796_366_608,
                1.331_416_678_917_843_774_5e2,
                1.971_590_950_306_551_442_7e3,
                1.373_169_376_550_946_112_5e4,
                4.592_195_393_154_987_145_7e4,
                6.726_577_092_700_870_085_3e4,
                3.343_057_558_358_812_810_5e4,
                2.509_080_928_730_122_672_7e3,
            ],
        ) / poly_r(
            r,
            &[
                1.0,
                4.231_333_070_160_091_125_2e1,
                6.871_870_074_920_579_083e2,
                5.394_196_021_424_751_107_7e3,
                2.121_379_430_158_659_586_7e4,
                3.930_789_580_009_271_061e4,
                2.872_908_573_572_194_267_4e4,
                5.226_495_278_852_854_561e3,
            ],
        );
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly_r(
            r,
            &[
                1.423_437_110_749_683_577_34,
                4.630_337_846_156_545_295_9,
                5.769_497_221_460_691_405_5,
                3.647_848_324_763_204_605_04,
                1.270_458_252_452_368_382_58,
                2.417_807_251_774_506_117_7e-1,
                2.272_384_498_926_918_458_33e-2,
                7.745_450_142_783_414_076_4e-4,
            ],
        ) / poly_r(
            r,
            &[
                1.0,
                2.053_191_626_637_758_821_87,
                1.676_384_830_183_803_849_4,
                6.897_673_349_851_000_045_5e-1,
                1.481_039_764_274_800_745_9e-1,
                1.519_866_656_361_645_719_66e-2,
                5.475_938_084_995_344_946e-4,
                1.050_750_071_644_416_843_24e-9,
            ],
        )
    } else {
        let r = r - 5.0;
        poly_r(
            r,
            &[
                6.657_904_643_501_103_777_2,
                5.463_784_911_164_114_369_9,
                1.784_826_539_917_291_335_8,
                2.965_605_718_285_048_912_3e-1,
                2.653_218_952_657_612_309_3e-2,
                1.242_660_947_388_078_438_6e-3,
                2.711_555_568_743_487_578_15e-5,
                2.010_334_399_292_288_132_65e-7,
            ],
        ) / poly_r(
            r,
            &[
                1.0,
                5.998_322_065_558_879_376_9e-1,
                1.369_298_809_227_358_053_1e-1,
                1.487_536_129_085_061_485_25e-2,
                7.868_691_311_456_132_591e-4,
                1.846_318_317_510_054_681_8e-5,
                1.421_511_758_316_445_888_7e-7,
                2.044_263_103_389_939_785_64e-15,
            ],
        )
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
fn poly_r(r: f64, c: &[f64; 8]) -> f64 {
    // Horner, coefficients ordered from constant to highest degree.
    ((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r + c[1]) * r
        + c[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_deterministic_and_split() {
        let a = StreamKey::root(42).tag("wiener").child(3).child(7);
        let b = StreamKey::root(42).tag("wiener").child(3).child(7);
        assert_eq!(a.u64_at(0), b.u64_at(0));
        let c = StreamKey::root(42).tag("wiener").child(3).child(8);
        assert_ne!(a.u64_at(0), c.u64_at(0));
        let d = StreamKey::root(43).tag("wiener").child(3).child(7);
        assert_ne!(a.u64_at(0), d.u64_at(0));
    }

    #[test]
    fn tags_separate_domains() {
        let k = StreamKey::root(7);
        assert_ne!(k.tag("wiener").u64_at(0), k.tag("x0").u64_at(0));
    }

    #[test]
    fn inverse_cdf_matches_known_quantiles() {
        // Reference values for the standard normal quantile function.
        assert!((inverse_normal_cdf(0.5)).abs() < 1e-15);
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.84134474606854293) - 1.0).abs() < 1e-10);
        assert!((inverse_normal_cdf(1e-10) + 6.361_340_902_404_056).abs() < 1e-8);
        // Symmetry.
        for &p in &[0.01, 0.1, 0.3, 0.45] {
            let a = inverse_normal_cdf(p);
            let b = inverse_normal_cdf(1.0 - p);
            assert!((a + b).abs() < 1e-12, "asymmetric at {p}: {a} vs {b}");
        }
    }

    #[test]
    fn normals_have_unit_moments() {
        let k = StreamKey::root(123).tag("moment-check");
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let z = k.normal_at(i);
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}

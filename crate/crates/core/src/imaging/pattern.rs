//! Fixed sampling pattern for the 256-bit binary descriptor.
//!
//! Each entry is one intensity comparison `(px, py, qx, qy)`: offsets
//! relative to the feature center, compared after rotation by the
//! feature's orientation. The table was drawn once from ChaCha8 seeded
//! with `0x5713D`, coordinates rounded from N(0, 6.2) samples and
//! redrawn until they land inside the radius-15 disk (so any rotation of
//! the pattern stays within a 31x31 patch). The `regenerates_exactly`
//! test below reproduces the table from that procedure.

/// Number of comparisons (= descriptor bits).
pub(crate) const PATTERN_SIZE: usize = 256;

/// Maximum offset radius; rotated samples never leave this disk.
pub(crate) const PATTERN_RADIUS: i32 = 15;

pub const BRIEF_PATTERN: [(i8, i8, i8, i8); PATTERN_SIZE] = [
    (-11, 9, -13, 3), (-7, 4, 9, 1), (-7, -7, 12, -2), (-1, 7, 1, 6), (0, 5, -1, 0), (-4, -3, 2, 13), (3, 9, -1, 10), (2, 1, -1, -6),
    (5, -6, -12, 6), (-2, 10, -5, -7), (-6, 8, -2, -1), (-2, -12, 8, -11), (1, 5, -9, 1), (2, 0, 1, 5), (2, 2, 0, -1), (5, 0, -5, -3),
    (1, 1, 0, -4), (1, -2, -1, -9), (-5, 1, -7, 2), (-6, 3, 10, 1), (-2, 0, 3, 0), (-8, 1, 6, 1), (13, 1, 3, -3), (-11, -2, -8, -6),
    (-10, -1, -1, 9), (-5, -5, 6, 2), (-3, 3, -4, -10), (-2, 4, -5, 3), (10, 3, -2, -2), (1, -7, 12, -1), (6, 3, 1, 7), (6, -8, -11, -7),
    (1, -5, 5, -5), (-5, -1, 6, 4), (-7, 9, 7, -7), (-1, -6, 8, -9), (4, 8, -5, 11), (0, 9, -5, -4), (-1, 4, 1, 9), (-1, -3, -3, 11),
    (-2, -11, -5, -4), (2, -14, -1, -4), (7, 0, -11, 4), (-1, 3, -4, 0), (1, -4, 5, 13), (7, -7, -5, -11), (3, 1, -4, 0), (-5, -7, -1, 0),
    (-7, -6, -1, -3), (-3, 3, 3, -1), (8, 3, -1, -2), (0, -1, 3, -6), (6, 2, 1, 2), (4, 4, -3, -4), (5, -6, 2, 8), (2, -1, -2, -11),
    (3, 12, 2, 5), (-3, 2, 4, -3), (-1, -1, -6, -13), (8, 1, -1, 3), (-9, -3, -1, -3), (2, -4, -2, 2), (-2, 8, -5, 12), (3, -12, 9, -4),
    (-3, -1, 4, -4), (3, -9, -10, -2), (8, 0, -6, 3), (-6, 8, 3, 1), (-2, 5, 0, 12), (-4, -4, 0, -1), (-5, 0, -4, 6), (5, 0, -8, -10),
    (11, 7, -4, 0), (-1, 2, -3, 0), (-1, -2, -1, -3), (-1, -13, -6, 0), (0, -11, -7, -10), (-2, -2, 3, 8), (2, -10, 0, -3), (2, 10, 0, -2),
    (8, 0, 2, -5), (-7, -11, 3, -3), (-5, -12, 2, -2), (6, -8, -4, -8), (3, 10, -3, 9), (-4, -7, 4, -1), (-1, -1, -12, -4), (-9, -6, 0, 6),
    (4, -9, 1, 5), (0, -9, 13, 6), (-2, -8, 1, 3), (5, 11, 6, 1), (-3, -6, 6, -7), (5, -3, 5, 6), (0, -6, 11, 1), (3, 5, -5, -2),
    (5, -7, 4, -1), (-10, 2, 6, 5), (3, 7, -2, -1), (0, 2, 4, -8), (6, 9, 2, -7), (1, 0, 3, 0), (-2, -1, 3, -6), (-4, -8, -6, 0),
    (3, -1, 4, 6), (-5, 1, 9, 6), (-4, 11, -5, -1), (5, 0, 3, -14), (10, 2, 4, -7), (8, -1, 7, -3), (-3, 2, -5, -6), (-10, 1, -4, -1),
    (-1, 1, 9, 0), (-6, 4, 0, 3), (-10, -9, 2, 1), (-2, 3, -1, 2), (1, -4, 14, -4), (-14, -1, 4, -1), (-2, 3, -2, 2), (9, -4, 6, 0),
    (-6, -7, 13, -2), (-3, -3, -8, 5), (7, 1, 3, 9), (4, -1, -13, -7), (13, 4, -7, -3), (7, 3, 9, -4), (1, 5, -6, 6), (7, 2, 8, -7),
    (-4, -3, 0, 3), (-2, 2, 5, -7), (-12, -6, -2, 6), (-8, 9, 0, -9), (3, -5, -1, 8), (2, -9, -5, -7), (-12, -5, 3, 1), (3, -2, -9, -8),
    (-2, 3, -6, -7), (-1, 9, -4, -5), (0, 1, 8, 5), (-3, -1, -7, 2), (-2, -8, -9, 4), (-6, 6, 6, -1), (6, 8, 1, 8), (-7, 3, 9, -3),
    (0, 10, 4, -4), (6, -2, -8, 10), (-1, -8, -3, -4), (-3, -1, 4, -1), (1, 0, 9, -3), (-9, 5, 2, -11), (-1, -4, 3, 14), (-2, -2, -3, -7),
    (-1, 6, 1, -5), (-2, 0, 2, 0), (3, -3, 2, -3), (0, 5, 5, 2), (5, 13, 2, 2), (4, -10, -3, 7), (8, 4, -1, 3), (-6, 9, 4, -2),
    (-1, -2, 0, -5), (0, 8, 0, -1), (-2, 1, 7, 1), (-3, -1, 3, -9), (7, 8, -7, 0), (-1, 5, 5, 2), (0, -2, 4, 0), (-6, -10, 0, 9),
    (-3, -3, -2, 2), (13, -6, -3, 2), (0, -1, -1, 6), (3, -3, -4, -5), (9, -4, 2, 10), (-6, 1, 1, -10), (11, 4, 6, 9), (2, 14, 6, 6),
    (2, 10, -2, 11), (1, -5, 2, 6), (-5, -12, -3, 1), (0, 3, -2, -4), (9, -7, -1, 9), (-3, -5, 6, 2), (-5, 8, -5, -8), (-2, 12, -10, -1),
    (-3, -3, -5, 4), (-5, -7, -4, 4), (9, 0, 2, 2), (13, 7, 7, -10), (-1, 10, 1, -3), (7, 2, 3, 0), (-1, 2, -7, -5), (5, -11, -4, -1),
    (-7, 5, -2, -13), (-4, -4, 4, 2), (9, 6, -8, -11), (-1, -7, -1, -2), (5, 1, -5, -7), (-7, -4, -5, 5), (-9, 2, 11, -4), (-7, 5, 2, 8),
    (5, 5, 11, 7), (-6, 1, 3, 14), (-5, -8, 4, 8), (9, 6, 6, -3), (1, 8, 3, 10), (3, -10, 4, -1), (8, 7, -8, 3), (-10, 7, 2, 3),
    (-14, -5, 4, 5), (-2, -6, 0, 9), (-12, 2, -5, 10), (-3, -3, -3, 0), (-13, -1, -9, -4), (-1, 3, 3, 12), (8, 11, 4, -7), (12, -5, 3, -2),
    (-4, 11, 5, -7), (11, -10, -6, -3), (-5, 1, -6, 0), (7, 3, -1, 0), (1, 4, 1, -2), (5, 14, -10, -3), (1, 1, 3, -4), (6, -10, 3, -3),
    (-10, -4, -9, -1), (6, 6, 4, -7), (2, -3, 11, 7), (-11, -4, -9, -2), (-7, -4, -12, 3), (9, -7, -6, 7), (-6, 5, -2, 4), (2, -4, 0, -3),
    (10, -6, 5, -1), (4, 8, -4, -5), (0, 6, -6, 8), (1, 8, -5, 6), (0, -3, -3, 2), (-13, -1, 8, -10), (11, -2, 1, 4), (1, 3, -8, -9),
    (-6, -2, 3, 5), (4, -4, -6, -9), (4, 4, -4, 12), (-4, 2, 0, 10), (8, 5, 9, 4), (0, 10, -3, 13), (5, -7, 1, 6), (-3, 14, -3, 8),
    (7, -3, -1, -7), (7, 0, 0, -8), (2, 10, 0, -8), (2, -2, 4, 1), (0, 4, -1, -5), (-1, -6, 2, -8), (4, 0, -5, -2), (6, -3, 5, 1),
];

#[cfg(test)]
pub(crate) fn generate_pattern() -> Vec<(i8, i8, i8, i8)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5713D);
    let sigma = 6.2f64; // 31 / 5
    let sample_gauss = move |rng: &mut ChaCha8Rng| {
        // Box-Muller; one draw per call keeps the stream order obvious.
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * sigma
    };
    let sample_point = |rng: &mut ChaCha8Rng| loop {
        let x = sample_gauss(rng).round();
        let y = sample_gauss(rng).round();
        if x * x + y * y <= (PATTERN_RADIUS * PATTERN_RADIUS) as f64 {
            return (x as i8, y as i8);
        }
    };
    let mut out = Vec::with_capacity(PATTERN_SIZE);
    for _ in 0..PATTERN_SIZE {
        let p = sample_point(&mut rng);
        let q = loop {
            let q = sample_point(&mut rng);
            if q != p {
                break q;
            }
        };
        out.push((p.0, p.1, q.0, q.1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[ignore]
    fn dump() {
        let pat = generate_pattern();
        print!("[");
        for (i, e) in pat.iter().enumerate() {
            if i % 8 == 0 {
                println!();
            }
            print!("({},{},{},{}),", e.0, e.1, e.2, e.3);
        }
        println!("\n]");
    }

    #[test]
    fn regenerates_exactly() {
        let pat = generate_pattern();
        assert_eq!(pat.as_slice(), BRIEF_PATTERN.as_slice());
    }

    #[test]
    fn table_is_well_formed() {
        for &(px, py, qx, qy) in BRIEF_PATTERN.iter() {
            let r2 = PATTERN_RADIUS * PATTERN_RADIUS;
            assert!((px as i32).pow(2) + (py as i32).pow(2) <= r2);
            assert!((qx as i32).pow(2) + (qy as i32).pow(2) <= r2);
            assert!((px, py) != (qx, qy));
        }
    }
}

use gfscma::scma::{assign_codebook, build_ctu, encode_block, BitBlock, Codebook};
use num_complex::Complex64;
use proptest::prelude::*;

fn energy(row: &[Complex64]) -> f64 {
    row.iter().map(|c| c.re * c.re + c.im * c.im).sum()
}

#[test]
fn sixty_three_mod_six() {
    assert_eq!(assign_codebook(63, 6).unwrap(), 63 - 6 * 10);
}

#[test]
fn ctu_rows_are_codewords_of_the_assigned_codebook() {
    let cb = Codebook::default_set();
    // Fixed 64-bit pattern, L = 32 with M = 4.
    let word: u64 = 0xD3A5_0F7C_1E96_B248;
    let bits: Vec<u8> = (0..64).rev().map(|i| ((word >> i) & 1) as u8).collect();
    for user in [0, 5, 13] {
        let ctu = build_ctu(user, &bits, &cb).unwrap();
        assert_eq!(ctu.slots(), 32);
        let j = user % 6;
        for l in 0..32 {
            let found = (0..4).filter(|&m| cb.codeword(j, m) == ctu.row(l)).count();
            assert_eq!(found, 1, "user {user} slot {l}");
        }
    }
}

proptest! {
    #[test]
    fn assignment_has_period_j(k in 0usize..100_000, j in 1usize..64) {
        prop_assert_eq!(assign_codebook(k, j).unwrap(), assign_codebook(k + j, j).unwrap());
        prop_assert!(assign_codebook(k, j).unwrap() < j);
    }

    #[test]
    fn encode_is_a_bijection(j in 0usize..6) {
        let cb = Codebook::default_set();
        let mut seen: Vec<Vec<Complex64>> = Vec::new();
        for m in 0..4usize {
            let block = BitBlock::new(&[(m >> 1) as u8, (m & 1) as u8], 4).unwrap();
            let cw = encode_block(&block, j, &cb).unwrap().to_vec();
            prop_assert!(!seen.contains(&cw));
            seen.push(cw);
        }
        // Every codeword of the codebook is reached.
        for m in 0..4 {
            prop_assert!(seen.iter().any(|c| c.as_slice() == cb.codeword(j, m)));
        }
    }

    #[test]
    fn ctu_rows_have_unit_energy(user in 0usize..64, bits in proptest::collection::vec(0u8..2, 2..=128)) {
        let cb = Codebook::default_set();
        let len = bits.len() / 2 * 2;
        let ctu = build_ctu(user, &bits[..len], &cb).unwrap();
        for l in 0..ctu.slots() {
            prop_assert!((energy(ctu.row(l)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn odd_bit_streams_rejected(user in 0usize..64, half in 0usize..32) {
        let bits = vec![1u8; 2 * half + 1];
        prop_assert!(build_ctu(user, &bits, &Codebook::default_set()).is_err());
    }

    #[test]
    fn codebook_files_round_trip_exactly(scale in 0.5f64..2.0, phase in 0.0f64..std::f64::consts::TAU) {
        // A rotated default set is still a valid codebook.
        let cb = Codebook::default_set();
        let rot = Complex64::from_polar(1.0, phase);
        let rotated: Vec<Complex64> = cb.entries().iter().map(|c| c * rot).collect();
        let rotated = Codebook::new(6, 4, 4, rotated).unwrap();
        prop_assert_eq!(Codebook::parse(&rotated.to_text()).unwrap(), rotated.clone());
        // Rescaling breaks unit energy.
        let scaled: Vec<Complex64> = cb.entries().iter().map(|c| c * (scale * 1.001 + 0.01)).collect();
        prop_assert!(Codebook::new(6, 4, 4, scaled).is_err());
    }
}

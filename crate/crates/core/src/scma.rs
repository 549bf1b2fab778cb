//! SCMA codebooks, round-robin codebook assignment, bit-block encoding and
//! contention transmission unit (CTU) assembly.
//!
//! A codebook set holds `J` codebooks of `M` complex codewords over `Kd`
//! resources. Every codeword has unit energy and each codebook is nonzero on
//! exactly `Kd / 2` resources, recorded in the `Kd x J` factor matrix.
//!
//! Text format (one codebook set per file):
//!
//! ```text
//! # comments start with '#'
//! J M Kd
//! re im re im ...      <- J*M lines of 2*Kd numbers, codebook-major
//! ```

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Magnitudes at or below this are treated as unoccupied resources.
const SUPPORT_EPS: f64 = 1e-12;
/// Largest tolerated deviation from unit codeword energy when loading.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

/// Returns `user_index mod num_codebooks`.
pub fn assign_codebook(user_index: usize, num_codebooks: usize) -> Result<usize> {
    if num_codebooks == 0 {
        return Err(invalid("number of codebooks must be at least 1"));
    }
    Ok(user_index % num_codebooks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    num_codebooks: usize,
    size: usize,
    resources: usize,
    /// `J x M x Kd`, row-major.
    entries: Vec<Complex64>,
    /// `Kd x J`, row-major.
    factor: Vec<bool>,
}

impl Codebook {
    /// Validates and wraps a `J x M x Kd` entry tensor.
    pub fn new(num_codebooks: usize, size: usize, resources: usize, entries: Vec<Complex64>) -> Result<Self> {
        if num_codebooks == 0 || size == 0 || resources == 0 {
            return Err(Error::Codebook(format!(
                "dimensions J={num_codebooks} M={size} Kd={resources} must be positive"
            )));
        }
        if !size.is_power_of_two() || size < 2 {
            return Err(Error::Codebook(format!("M={size} is not a power of two >= 2")));
        }
        if resources % 2 != 0 {
            return Err(Error::Codebook(format!("Kd={resources} must be even")));
        }
        if entries.len() != num_codebooks * size * resources {
            return Err(Error::Codebook(format!(
                "expected {} entries, found {}",
                num_codebooks * size * resources,
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Codebook("non-finite entry".into()));
        }
        let mut factor = vec![false; resources * num_codebooks];
        for j in 0..num_codebooks {
            for m in 0..size {
                let cw = &entries[(j * size + m) * resources..(j * size + m + 1) * resources];
                let energy: f64 = cw.iter().map(|c| c.norm_sqr()).sum();
                if (energy - 1.0).abs() > ENERGY_TOLERANCE {
                    return Err(Error::Codebook(format!(
                        "energy violation: codeword {m} of codebook {j} has energy {energy}"
                    )));
                }
                for (k, c) in cw.iter().enumerate() {
                    if c.norm() > SUPPORT_EPS {
                        factor[k * num_codebooks + j] = true;
                    }
                }
                for other in 0..m {
                    let prev = &entries[(j * size + other) * resources..(j * size + other + 1) * resources];
                    if prev == cw {
                        return Err(Error::Codebook(format!(
                            "codebook {j}: codewords {other} and {m} coincide"
                        )));
                    }
                }
            }
            let occupied = (0..resources).filter(|&k| factor[k * num_codebooks + j]).count();
            if occupied != resources / 2 {
                return Err(Error::Codebook(format!(
                    "occupancy violation: codebook {j} uses {occupied} of {resources} resources, expected {}",
                    resources / 2
                )));
            }
        }
        Ok(Self {
            num_codebooks,
            size,
            resources,
            entries,
            factor,
        })
    }

    /// Built-in codebook set with `J = 6`, `M = 4`, `Kd = 4`.
    ///
    /// Codebook `j` places the two-dimensional mother codewords
    /// `(q_m, q_{perm(m)}) / sqrt(2)`, with `q_m = exp(i*pi*(2m+1)/4)` and
    /// `perm = [2, 0, 3, 1]`, on the `j`-th 2-of-4 resource pair in
    /// lexicographic order, rotated by `exp(i*pi*j/J)`.
    pub fn default_set() -> Self {
        const J: usize = 6;
        const M: usize = 4;
        const KD: usize = 4;
        const PAIRS: [(usize, usize); J] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        const PERM: [usize; M] = [2, 0, 3, 1];
        let qpsk = |m: usize| Complex64::from_polar(1.0, std::f64::consts::PI * (2 * m + 1) as f64 / 4.0);
        let mut entries = vec![Complex64::new(0.0, 0.0); J * M * KD];
        for (j, &(a, b)) in PAIRS.iter().enumerate() {
            let rot = Complex64::from_polar(1.0, std::f64::consts::PI * j as f64 / J as f64);
            for m in 0..M {
                let first = qpsk(m) * rot;
                let second = qpsk(PERM[m]) * rot;
                let norm = (first.norm_sqr() + second.norm_sqr()).sqrt();
                let base = (j * M + m) * KD;
                entries[base + a] = first / norm;
                entries[base + b] = second / norm;
            }
        }
        Self::new(J, M, KD, entries).expect("built-in codebook is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Codebook("missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Codebook(format!("bad header token `{t}`")))
            })
            .collect::<Result<_>>()?;
        let [j, m, kd] = dims[..] else {
            return Err(Error::Codebook(format!("header must be `J M Kd`, got `{header}`")));
        };
        let mut entries = Vec::with_capacity(j * m * kd);
        let mut rows = 0;
        for (lineno, line) in lines {
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Codebook(format!("line {}: bad number `{t}`", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if values.len() != 2 * kd {
                return Err(Error::Codebook(format!(
                    "line {}: expected {} numbers, found {}",
                    lineno + 1,
                    2 * kd,
                    values.len()
                )));
            }
            entries.extend(values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])));
            rows += 1;
        }
        if rows != j * m {
            return Err(Error::Codebook(format!(
                "expected {} codeword rows, found {rows}",
                j * m
            )));
        }
        Self::new(j, m, kd, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes in the text format; [`Codebook::parse`] restores it bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# SCMA codebook set: J M Kd, then one codeword per line as re/im pairs"
        );
        let _ = writeln!(out, "{} {} {}", self.num_codebooks, self.size, self.resources);
        for j in 0..self.num_codebooks {
            let _ = writeln!(out, "# codebook {j}");
            for m in 0..self.size {
                let row: Vec<String> = self
                    .codeword(j, m)
                    .iter()
                    .flat_map(|c| [format!("{:?}", c.re), format!("{:?}", c.im)])
                    .collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn num_codebooks(&self) -> usize {
        self.num_codebooks
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn bits_per_block(&self) -> usize {
        self.size.trailing_zeros() as usize
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn codeword(&self, codebook: usize, index: usize) -> &[Complex64] {
        let start = (codebook * self.size + index) * self.resources;
        &self.entries[start..start + self.resources]
    }

    /// Whether codebook `j` occupies resource `k`.
    pub fn occupies(&self, k: usize, j: usize) -> bool {
        self.factor[k * self.num_codebooks + j]
    }
}

/// `log2(M)` bits, most significant first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitBlock {
    bits: Vec<u8>,
}

impl BitBlock {
    pub fn new(bits: &[u8], codebook_size: usize) -> Result<Self> {
        if !codebook_size.is_power_of_two() || codebook_size < 2 {
            return Err(invalid(format!("M={codebook_size} is not a power of two >= 2")));
        }
        let want = codebook_size.trailing_zeros() as usize;
        if bits.len() != want {
            return Err(invalid(format!("bit block has {} bits, expected {want}", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bit values must be 0 or 1"));
        }
        Ok(Self { bits: bits.to_vec() })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Big-endian integer value.
    pub fn index(&self) -> usize {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }
}

/// Maps a bit block onto codeword `block.index()` of codebook `codebook_index`.
pub fn encode_block<'a>(block: &BitBlock, codebook_index: usize, cb: &'a Codebook) -> Result<&'a [Complex64]> {
    if codebook_index >= cb.num_codebooks() {
        return Err(invalid(format!(
            "codebook index {codebook_index} out of range 0..{}",
            cb.num_codebooks()
        )));
    }
    if block.bits().len() != cb.bits_per_block() {
        return Err(invalid(format!(
            "bit block has {} bits but codebook expects {}",
            block.bits().len(),
            cb.bits_per_block()
        )));
    }
    Ok(cb.codeword(codebook_index, block.index()))
}

/// The `L` codewords a user sends after its preamble.
#[derive(Clone, Debug, PartialEq)]
pub struct CtuPayload {
    pub user_index: usize,
    resources: usize,
    codewords: Vec<Complex64>,
}

impl CtuPayload {
    pub fn slots(&self) -> usize {
        self.codewords.len() / self.resources
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn row(&self, slot: usize) -> &[Complex64] {
        &self.codewords[slot * self.resources..(slot + 1) * self.resources]
    }

    pub fn codewords(&self) -> &[Complex64] {
        &self.codewords
    }
}

/// Splits `bit_stream` into blocks and encodes each with the user's codebook.
pub fn build_ctu(user_index: usize, bit_stream: &[u8], cb: &Codebook) -> Result<CtuPayload> {
    let per_block = cb.bits_per_block();
    if bit_stream.is_empty() || bit_stream.len() % per_block != 0 {
        return Err(invalid(format!(
            "bit stream length {} is not a positive multiple of {per_block}",
            bit_stream.len()
        )));
    }
    let j = assign_codebook(user_index, cb.num_codebooks())?;
    let mut codewords = Vec::with_capacity(bit_stream.len() / per_block * cb.resources());
    for chunk in bit_stream.chunks_exact(per_block) {
        let block = BitBlock::new(chunk, cb.size())?;
        codewords.extend_from_slice(encode_block(&block, j, cb)?);
    }
    Ok(CtuPayload {
        user_index,
        resources: cb.resources(),
        codewords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_assignment() {
        assert_eq!(assign_codebook(0, 6).unwrap(), 0);
        assert_eq!(assign_codebook(7, 6).unwrap(), 1);
        assert_eq!(assign_codebook(63, 6).unwrap(), 63 % 6);
        assert_eq!(assign_codebook(63, 6).unwrap(), 3);
        assert!(assign_codebook(3, 0).is_err());
    }

    #[test]
    fn default_set_dimensions_and_invariants() {
        let cb = Codebook::default_set();
        assert_eq!((cb.num_codebooks(), cb.size(), cb.resources()), (6, 4, 4));
        for j in 0..6 {
            for m in 0..4 {
                let e: f64 = cb.codeword(j, m).iter().map(|c| c.norm_sqr()).sum();
                assert!((e - 1.0).abs() <= 1e-12);
                for k in 0..4 {
                    if !cb.occupies(k, j) {
                        assert_eq!(cb.codeword(j, m)[k], Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
        // six distinct 2-of-4 occupancy patterns
        let mut patterns: Vec<Vec<bool>> = (0..6).map(|j| (0..4).map(|k| cb.occupies(k, j)).collect()).collect();
        patterns.sort();
        patterns.dedup();
        assert_eq!(patterns.len(), 6);
        assert!(patterns.iter().all(|p| p.iter().filter(|&&b| b).count() == 2));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let cb = Codebook::default_set();
        let back = Codebook::parse(&cb.to_text()).unwrap();
        assert_eq!(back, cb);
        assert!(back
            .entries()
            .iter()
            .zip(cb.entries())
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }

    #[test]
    fn energy_violation_rejected() {
        let text = Codebook::default_set().to_text();
        // Scale the first codeword by sqrt(2): energy 2.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let idx = lines
            .iter()
            .position(|l| !l.starts_with('#') && l.split_whitespace().count() == 8)
            .unwrap();
        lines[idx] = lines[idx]
            .split_whitespace()
            .map(|t| format!("{:?}", t.parse::<f64>().unwrap() * std::f64::consts::SQRT_2))
            .collect::<Vec<_>>()
            .join(" ");
        let err = Codebook::parse(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("energy violation"), "{err}");
    }

    #[test]
    fn occupancy_violation_rejected() {
        let h = std::f64::consts::FRAC_1_SQRT_2 / std::f64::consts::SQRT_2; // 0.5
        let mut text = String::from("1 2 4\n");
        text.push_str(&format!("{h} 0 {h} 0 {h} 0 {h} 0\n"));
        text.push_str(&format!("{h} 0 -{h} 0 {h} 0 -{h} 0\n"));
        let err = Codebook::parse(&text).unwrap_err();
        assert!(err.to_string().contains("occupancy"), "{err}");
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(Codebook::parse("").is_err());
        assert!(Codebook::parse("6 4\n").is_err());
        assert!(Codebook::parse("1 2 2\n1 0\n").is_err());
        assert!(Codebook::parse("1 2 2\n1 0 x 0\n0 1 0 0\n").is_err());
        assert!(Codebook::parse("1 3 2\n1 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
    }

    #[test]
    fn encode_examples() {
        let cb = Codebook::default_set();
        let b00 = BitBlock::new(&[0, 0], 4).unwrap();
        let b11 = BitBlock::new(&[1, 1], 4).unwrap();
        assert_eq!(encode_block(&b00, 0, &cb).unwrap(), cb.codeword(0, 0));
        assert_eq!(encode_block(&b11, 2, &cb).unwrap(), cb.codeword(2, 3));
        assert!(encode_block(&b00, 6, &cb).is_err());
        assert_eq!(BitBlock::new(&[1, 0], 4).unwrap().index(), 2);
        assert!(BitBlock::new(&[1, 0, 1], 4).is_err());
        assert!(BitBlock::new(&[2, 0], 4).is_err());
    }

    #[test]
    fn encode_is_a_bijection_per_codebook() {
        let cb = Codebook::default_set();
        for j in 0..cb.num_codebooks() {
            let words: Vec<&[Complex64]> = (0..4)
                .map(|m| {
                    let bits = [(m >> 1) as u8, (m & 1) as u8];
                    encode_block(&BitBlock::new(&bits, 4).unwrap(), j, &cb).unwrap()
                })
                .collect();
            for a in 0..4 {
                for b in 0..a {
                    assert_ne!(words[a], words[b]);
                }
            }
        }
    }

    #[test]
    fn ctu_examples() {
        let cb = Codebook::default_set();
        let one = build_ctu(0, &[0, 0], &cb).unwrap();
        assert_eq!(one.slots(), 1);
        assert_eq!(one.row(0), cb.codeword(0, 0));
        let two = build_ctu(0, &[0, 0, 1, 1], &cb).unwrap();
        assert_eq!(two.row(0), cb.codeword(0, 0));
        assert_eq!(two.row(1), cb.codeword(0, 3));
        assert!(build_ctu(0, &[0, 0, 1], &cb).is_err());
        assert!(build_ctu(0, &[], &cb).is_err());
    }
}

//! `CDL1` dictionary container.
//!
//! ```text
//! CDL1 <M> <N> <K>\n
//! <name> <rows> <cols>\n <rows*cols little-endian f64, column-major>
//! ... six blocks: psi_c_l, psi_l, psi_c_h, psi_h, phi_c, phi
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{CoupledDictionarySet, BLOCK_NAMES};

const MAGIC: &str = "CDL1";

pub fn encode(dset: &CoupledDictionarySet) -> Vec<u8> {
    let d = dset.dims;
    let mut out = format!("{MAGIC} {} {} {}\n", d.m, d.n, d.k).into_bytes();
    for (name, mat) in dset.blocks() {
        out.extend_from_slice(format!("{name} {} {}\n", mat.nrows(), mat.ncols()).as_bytes());
        // nalgebra storage is column-major already
        for v in mat.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_dictionary_set(dset: &CoupledDictionarySet, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(dset))?;
    file.flush()?;
    Ok(())
}

pub fn load_dictionary_set(path: impl AsRef<Path>) -> Result<CoupledDictionarySet> {
    decode(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self, what: &str) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::MalformedHeader(format!("missing {what} line")))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::MalformedHeader(format!("{what} line is not UTF-8")))
    }
}

fn parse_usize(field: Option<&str>, what: &str) -> Result<usize> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad or missing {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<CoupledDictionarySet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic_len = MAGIC.len().min(bytes.len());
    if &bytes[..magic_len] != MAGIC.as_bytes() {
        return Err(Error::BadMagic {
            expected: MAGIC.into(),
            found: String::from_utf8_lossy(&bytes[..magic_len]).into_owned(),
        });
    }
    let header = cur.line("header")?;
    let mut fields = header.split_ascii_whitespace();
    fields.next();
    let m = parse_usize(fields.next(), "M")?;
    let n = parse_usize(fields.next(), "N")?;
    let k = parse_usize(fields.next(), "K")?;

    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(6);
    for (idx, expected_name) in BLOCK_NAMES.iter().enumerate() {
        let line = cur.line(expected_name)?;
        let mut fields = line.split_ascii_whitespace();
        let name = fields.next().unwrap_or("");
        if name != *expected_name {
            return Err(Error::MalformedHeader(format!(
                "expected block `{expected_name}`, found `{name}`"
            )));
        }
        let rows = parse_usize(fields.next(), "block rows")?;
        let cols = parse_usize(fields.next(), "block cols")?;
        let want_rows = if idx < 2 { m } else { n };
        if rows != want_rows || cols != k {
            return Err(Error::DimensionMismatch(format!(
                "block `{name}` declares {rows}x{cols}, header implies {want_rows}x{k}"
            )));
        }
        let len = rows * cols * 8;
        let available = bytes.len() - cur.pos;
        if available < len {
            return Err(Error::Truncated {
                block: name.to_string(),
                expected: len,
                found: available,
            });
        }
        let data: Vec<f64> = bytes[cur.pos..cur.pos + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        cur.pos += len;
        blocks.push(DMatrix::from_vec(rows, cols, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after the last block",
            bytes.len() - cur.pos
        )));
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("six blocks");
    CoupledDictionarySet::new(next(), next(), next(), next(), next(), next())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set(m: usize, n: usize, k: usize, seed: f64) -> CoupledDictionarySet {
        let f = |r: usize, c: usize, b: f64| ((r * 31 + c * 7) as f64 * 0.37 + b + seed).sin() * 1e3;
        CoupledDictionarySet::new(
            DMatrix::from_fn(m, k, |r, c| f(r, c, 1.0)),
            DMatrix::from_fn(m, k, |r, c| f(r, c, 2.0)),
            DMatrix::from_fn(n, k, |r, c| f(r, c, 3.0)),
            DMatrix::from_fn(n, k, |r, c| f(r, c, 4.0)),
            DMatrix::from_fn(n, k, |r, c| f(r, c, 5.0)),
            DMatrix::from_fn(n, k, |r, c| f(r, c, 6.0)),
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.cdl");
        let set = sample_set(3, 5, 4, 0.0);
        save_dictionary_set(&set, &path).unwrap();
        let back = load_dictionary_set(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn header_is_ascii() {
        let bytes = encode(&sample_set(1, 2, 3, 0.0));
        assert!(bytes.starts_with(b"CDL1 1 2 3\npsi_c_l 1 3\n"));
        let headers: usize = BLOCK_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n} {} 3\n", if i < 2 { 1 } else { 2 }).len())
            .sum();
        assert_eq!(
            bytes.len(),
            "CDL1 1 2 3\n".len() + headers + (2 * 3 + 4 * 6) * 8
        );
    }

    #[test]
    fn truncated_file_names_the_block() {
        let bytes = encode(&sample_set(2, 3, 2, 0.0));
        let cut = &bytes[..bytes.len() - 5];
        match decode(cut) {
            Err(Error::Truncated { block, .. }) => assert_eq!(block, "phi"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&sample_set(2, 3, 2, 0.0));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn inconsistent_block_header() {
        let bytes = encode(&sample_set(2, 3, 2, 0.0));
        let text = String::from_utf8_lossy(&bytes[..11]).into_owned();
        assert_eq!(text, "CDL1 2 3 2\n");
        let mut patched = b"CDL1 2 3 3\n".to_vec();
        patched.extend_from_slice(&bytes[11..]);
        assert!(matches!(
            decode(&patched),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            m in 1usize..4, extra in 0usize..3, k in 1usize..5,
            bits in proptest::collection::vec(any::<u64>(), 64)
        ) {
            let n = m + extra;
            let mut i = 0;
            let mut gen = |r: usize, c: usize| {
                i += 1;
                let v = f64::from_bits(bits[(i + r + c) % bits.len()]);
                if v.is_nan() { 0.5 } else { v }
            };
            let set = CoupledDictionarySet::new(
                DMatrix::from_fn(m, k, &mut gen),
                DMatrix::from_fn(m, k, &mut gen),
                DMatrix::from_fn(n, k, &mut gen),
                DMatrix::from_fn(n, k, &mut gen),
                DMatrix::from_fn(n, k, &mut gen),
                DMatrix::from_fn(n, k, &mut gen),
            ).unwrap();
            let back = decode(&encode(&set)).unwrap();
            for ((_, a), (_, b)) in set.blocks().iter().zip(back.blocks().iter()) {
                let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}

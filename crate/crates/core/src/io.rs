//! Binary checkpoints and CSV time series.
//!
//! Checkpoint layout, all little-endian: magic `CHQH`, `u32` format version,
//! `u32` nodes per side `M`, `f64` side `L`, `f64` `mu`, `f64` time, then the
//! `M^3` field values as `f64` with x varying fastest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evolution::TrajectoryRecord;
use crate::functionals::WellClass;
use crate::grid::{BoxDomain, Field};

pub const MAGIC: [u8; 4] = *b"CHQH";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: Field,
    pub t: f64,
    pub mu: f64,
}

pub fn encode_checkpoint(u: &Field, t: f64, mu: f64) -> Vec<u8> {
    let d = u.domain();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.nodes() as u32).to_le_bytes());
    out.extend_from_slice(&d.side().to_le_bytes());
    out.extend_from_slice(&mu.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("in range"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("in range"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let m = u32_at(8) as usize;
    let (side, mu, t) = (f64_at(12), f64_at(20), f64_at(28));
    let expected = HEADER_LEN + 8 * m * m * m;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {}: {} trailing bytes",
            path.display(),
            bytes.len() - expected
        )));
    }
    let domain = BoxDomain::new(side, m)?;
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Checkpoint {
        field: Field::from_values(domain, values)?,
        t,
        mu,
    })
}

pub fn write_checkpoint(u: &Field, t: f64, mu: f64, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(u, t, mu))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, path)
}

pub const CSV_HEADER: [&str; 10] = [
    "t",
    "a",
    "b",
    "j",
    "i",
    "l2",
    "linf",
    "dt",
    "dissipation",
    "klass",
];

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_timeseries_to<W: std::io::Write>(records: &[TrajectoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row: Vec<String> = [r.t, r.a, r.b, r.j, r.i, r.l2, r.linf, r.dt, r.dissipation]
            .iter()
            .map(|&v| fmt_float(v))
            .collect();
        row.push(r.klass.letter().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeseries(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    write_timeseries_to(records, fs::File::create(path)?)
}

pub fn read_timeseries_from<R: std::io::Read>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number {:?}", &row[i])))
        };
        let klass = row[9]
            .chars()
            .next()
            .and_then(WellClass::from_letter)
            .filter(|_| row[9].len() == 1)
            .ok_or_else(|| Error::InvalidArgument(format!("bad class {:?}", &row[9])))?;
        out.push(TrajectoryRecord {
            t: num(0)?,
            a: num(1)?,
            b: num(2)?,
            j: num(3)?,
            i: num(4)?,
            l2: num(5)?,
            linf: num(6)?,
            dt: num(7)?,
            dissipation: num(8)?,
            klass,
        });
    }
    Ok(out)
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    read_timeseries_from(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn domain() -> BoxDomain {
        BoxDomain::new(1.5, 5).unwrap()
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            vals in prop::collection::vec(any::<f64>(), 125),
            t in any::<f64>(),
            mu in 0.01f64..2.99,
        ) {
            let u = Field::from_values(domain(), vals).unwrap();
            let bytes = encode_checkpoint(&u, t, mu);
            let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.t.to_bits(), t.to_bits());
            prop_assert_eq!(back.mu.to_bits(), mu.to_bits());
            prop_assert_eq!(back.field.domain().side().to_bits(), 1.5f64.to_bits());
            for (a, b) in back.field.values().iter().zip(u.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_guards_are_distinct() {
        let u = Field::sine_mode(domain(), [1, 2, 1]);
        let bytes = encode_checkpoint(&u, 0.25, 2.0);
        let p = Path::new("mem");

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_checkpoint(&bad, p), Err(Error::BadMagic { found, .. }) if &found == b"XXXX"));

        let mut old = bytes.clone();
        old[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&old, p),
            Err(Error::VersionMismatch { found: 7, expected: 1, .. })
        ));

        for cut in [2, 20, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut], p),
                Err(Error::Truncated { .. })
            ));
        }
    }

    fn sample_record() -> TrajectoryRecord {
        TrajectoryRecord {
            t: 0.1,
            a: 1.0 / 3.0,
            b: 2e-300,
            j: -0.0,
            i: std::f64::consts::PI,
            l2: 1e300,
            linf: 7.0,
            dt: 1e-80,
            dissipation: 0.123456789012345678,
            klass: WellClass::InV,
        }
    }

    #[test]
    fn empty_series_is_header_only() {
        let mut buf = Vec::new();
        write_timeseries_to(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,a,b,j,i,l2,linf,dt,dissipation,klass\n");
    }

    #[test]
    fn one_record_round_trips() {
        let rec = sample_record();
        let mut buf = Vec::new();
        write_timeseries_to(&[rec], &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        let back = read_timeseries_from(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn seventeen_digits_recover_every_float() {
        let vals = [0.1, 1.0 / 3.0, 5e-324, f64::MAX, -2.5e-17, 6.02214076e23];
        for v in vals {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}

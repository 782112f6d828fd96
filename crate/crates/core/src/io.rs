//! Signal CSV files and atomic file output.
//!
//! Signal CSV: a `rate_hz=<float>` header line, then one row per sample with
//! one comma-separated column per channel. Values are written in the shortest
//! decimal form that parses back to the same `f64`, always with `.` as the
//! decimal point.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{input, Error, Result};
use crate::signal::Signal;

const RATE_PREFIX: &str = "rate_hz=";

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, message: message.into() })
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    let t = s.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => parse_err(line, format!("invalid number '{t}'")),
    }
}

/// All channels of a signal CSV, each as its own [`Signal`].
pub fn read_signal_channels<R: Read>(r: R) -> Result<Vec<Signal>> {
    let mut lines = BufReader::new(r).lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return parse_err(1, "empty file: expected 'rate_hz=<float>' header"),
    };
    let Some(rate_text) = header.trim().strip_prefix(RATE_PREFIX) else {
        return parse_err(1, format!("expected 'rate_hz=<float>' header, got '{}'", header.trim()));
    };
    let rate = parse_value(rate_text, 1)?;
    if rate <= 0.0 {
        return parse_err(1, format!("sample rate must be positive, got {rate}"));
    }
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let n = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let values = line.split(',').map(|f| parse_value(f, n)).collect::<Result<Vec<f64>>>()?;
        if channels.is_empty() {
            channels = vec![Vec::new(); values.len()];
        } else if values.len() != channels.len() {
            return parse_err(n, format!("expected {} columns, found {}", channels.len(), values.len()));
        }
        for (c, v) in channels.iter_mut().zip(values) {
            c.push(v);
        }
    }
    if channels.is_empty() {
        return parse_err(1, "no samples after the header");
    }
    channels.into_iter().map(|c| Signal::new(c, rate)).collect()
}

/// One channel (0-based) of a signal CSV.
pub fn read_signal_csv<R: Read>(r: R, channel: usize) -> Result<Signal> {
    let mut chans = read_signal_channels(r)?;
    if channel >= chans.len() {
        return input(format!("channel {channel} requested but the file has {}", chans.len()));
    }
    Ok(chans.swap_remove(channel))
}

pub fn write_signal_channels<W: Write>(channels: &[Signal], mut w: W) -> Result<()> {
    let Some(first) = channels.first() else {
        return input("no channels to write");
    };
    if channels.iter().any(|c| c.len() != first.len() || c.rate() != first.rate()) {
        return input("channels must share length and sample rate");
    }
    let mut out = String::with_capacity(first.len() * 12 * channels.len() + 32);
    out.push_str(&format!("{RATE_PREFIX}{}\n", first.rate()));
    for i in 0..first.len() {
        for (k, c) in channels.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&c.samples()[i].to_string());
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_signal_csv(path: &Path) -> Result<Signal> {
    read_signal_csv(fs::File::open(path)?, 0)
}

pub fn save_signal_csv(s: &Signal, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_signal_channels(std::slice::from_ref(s), &mut buf)?;
    write_atomic(path, &buf)
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_and_format() {
        let s = Signal::new(vec![0.1, -2.5, 1.0 / 3.0, 1e-300, 12345.678], 200.0).unwrap();
        let mut buf = Vec::new();
        write_signal_channels(std::slice::from_ref(&s), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rate_hz=200\n0.1\n-2.5\n"));
        assert_eq!(read_signal_csv(buf.as_slice(), 0).unwrap(), s);
    }

    #[test]
    fn multi_channel() {
        let text = "rate_hz=250.5\n1,2\n3,4\n\n";
        let ch = read_signal_channels(text.as_bytes()).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[1].samples(), &[2.0, 4.0]);
        assert_eq!(ch[0].rate(), 250.5);
        assert!(read_signal_csv(text.as_bytes(), 2).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("0.5\n1.0\n", 1),
            ("rate_hz=abc\n1\n", 1),
            ("rate_hz=100\n1.0\n2,5\n", 3),
            ("rate_hz=100\n1.0\n2;5\n", 3),
            ("rate_hz=100\n1.0\nNaN\n", 3),
            ("rate_hz=100\n", 1),
        ];
        for (text, want) in cases {
            match read_signal_channels(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let s = Signal::new(vec![1.5, 2.5], 100.0).unwrap();
        save_signal_csv(&s, &p).unwrap();
        assert_eq!(load_signal_csv(&p).unwrap(), s);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(
            v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..50),
            rate in 1e-3f64..1e5,
        ) {
            let s = Signal::new(v, rate).unwrap();
            let mut buf = Vec::new();
            write_signal_channels(std::slice::from_ref(&s), &mut buf).unwrap();
            prop_assert_eq!(read_signal_csv(buf.as_slice(), 0).unwrap(), s);
        }
    }
}

//! Event file formats.
//!
//! Text: one `t x y p` line per event with `p` in `{1, -1}`.
//!
//! Binary (`EVT1`), all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EVT1"
//!      4     4  sensor width  (u32)
//!      8     4  sensor height (u32)
//!     12     4  reserved, zero
//!     16     8  t_begin (u64)
//!     24  13*n  records: t (u64), x (u16), y (u16), p (i8)
//!   24+13n   8  t_end (u64)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Event, EventStream, Polarity};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";
pub const BINARY_HEADER_LEN: usize = 24;
const RECORD_LEN: usize = 13;
const FOOTER_LEN: usize = 8;

pub fn write_text<W: Write>(stream: &EventStream, mut out: W) -> std::io::Result<()> {
    for e in stream.events() {
        writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.polarity.sign())?;
    }
    Ok(())
}

/// Reads the text format. The text format carries no header, so the sensor
/// size is supplied by the caller; when `window` is `None` it spans the first
/// and last event (or `[0, 0]` for an empty file).
pub fn read_text<R: BufRead>(
    input: R,
    width: u32,
    height: u32,
    window: Option<(u64, u64)>,
) -> Result<EventStream> {
    let mut events = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: {what}: {line:?}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("expected `t x y p`"));
        }
        let t = fields[0].parse().map_err(|_| bad("bad timestamp"))?;
        let x = fields[1].parse().map_err(|_| bad("bad x"))?;
        let y = fields[2].parse().map_err(|_| bad("bad y"))?;
        let p = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| bad("polarity must be 1 or -1"))?;
        events.push(Event::new(t, x, y, p));
    }
    let window = window.unwrap_or_else(|| match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t, b.t.max(a.t)),
        _ => (0, 0),
    });
    EventStream::from_sorted(events, window, width, height)
}

pub fn write_binary<W: Write>(stream: &EventStream, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(BINARY_HEADER_LEN + RECORD_LEN * stream.len() + FOOTER_LEN);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&stream.width().to_le_bytes());
    buf.extend_from_slice(&stream.height().to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&stream.t_begin().to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.polarity.sign() as u8);
    }
    buf.extend_from_slice(&stream.t_end().to_le_bytes());
    out.write_all(&buf)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<EventStream> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::Format(format!("reading event file: {e}")))?;
    if buf.len() < BINARY_HEADER_LEN + FOOTER_LEN {
        return Err(Error::Format(format!(
            "event file too short ({} bytes)",
            buf.len()
        )));
    }
    if &buf[0..4] != BINARY_MAGIC {
        return Err(Error::Format("missing EVT1 magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    if u32_at(12) != 0 {
        return Err(Error::Format("reserved header field is not zero".into()));
    }
    let t_begin = u64_at(16);
    let body = buf.len() - BINARY_HEADER_LEN - FOOTER_LEN;
    if !body.is_multiple_of(RECORD_LEN) {
        return Err(Error::Format(format!(
            "record section of {body} bytes is not a multiple of {RECORD_LEN}"
        )));
    }
    let t_end = u64_at(buf.len() - FOOTER_LEN);
    let events = buf[BINARY_HEADER_LEN..BINARY_HEADER_LEN + body]
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, r)| {
            let t = u64::from_le_bytes(r[0..8].try_into().unwrap());
            let x = u16::from_le_bytes(r[8..10].try_into().unwrap());
            let y = u16::from_le_bytes(r[10..12].try_into().unwrap());
            let p = Polarity::from_sign(i64::from(r[12] as i8)).ok_or_else(|| {
                Error::Format(format!("record {i}: invalid polarity {}", r[12] as i8))
            })?;
            Ok(Event::new(t, x, y, p))
        })
        .collect::<Result<Vec<_>>>()?;
    EventStream::from_sorted(events, (t_begin, t_end), width, height)
}

impl EventStream {
    /// Reads an `EVT1` binary file.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_binary(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Writes an `EVT1` binary file.
    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        write_binary(self, &mut out)
            .and_then(|()| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::tests::arb_stream;
    use proptest::prelude::*;

    fn sample() -> EventStream {
        EventStream::new(
            vec![
                Event::new(5, 1, 2, Polarity::Positive),
                Event::new(9, 3, 0, Polarity::Negative),
            ],
            (0, 10),
            4,
            3,
        )
        .unwrap()
    }

    #[test]
    fn binary_layout() {
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 2 * 13 + 8);
        assert_eq!(&buf[0..4], b"EVT1");
        assert_eq!(&buf[4..8], &4u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[24..32], &5u64.to_le_bytes());
        assert_eq!(buf[24 + 12], 1);
        assert_eq!(buf[24 + 13 + 12] as i8, -1);
        assert_eq!(&buf[buf.len() - 8..], &10u64.to_le_bytes());
    }

    #[test]
    fn text_layout() {
        let mut buf = Vec::new();
        write_text(&sample(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "5 1 2 1\n9 3 0 -1\n");
    }

    #[test]
    fn readers_reject_unsorted_input() {
        let text = "9 0 0 1\n5 0 0 1\n";
        assert!(matches!(
            read_text(text.as_bytes(), 4, 4, Some((0, 10))),
            Err(Error::Format(_))
        ));
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        // swap the two records
        let (a, b) = (buf[24..37].to_vec(), buf[37..50].to_vec());
        buf[24..37].copy_from_slice(&b);
        buf[37..50].copy_from_slice(&a);
        assert!(matches!(read_binary(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn readers_reject_malformed_input() {
        assert!(read_text("1 2 3\n".as_bytes(), 4, 4, None).is_err());
        assert!(read_text("1 2 3 0\n".as_bytes(), 4, 4, None).is_err());
        let mut buf = Vec::new();
        write_binary(&sample(), &mut buf).unwrap();
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_binary(&bad_magic[..]).is_err());
        let mut bad_pol = buf.clone();
        bad_pol[24 + 12] = 0;
        assert!(read_binary(&bad_pol[..]).is_err());
    }

    #[test]
    fn text_window_defaults_to_event_span() {
        let s = read_text("3 0 0 1\n8 1 1 -1\n".as_bytes(), 2, 2, None).unwrap();
        assert_eq!(s.window(), (3, 8));
    }

    proptest! {
        #[test]
        fn formats_round_trip(s in arb_stream()) {
            let mut bin = Vec::new();
            write_binary(&s, &mut bin).unwrap();
            prop_assert_eq!(&read_binary(&bin[..]).unwrap(), &s);
            let mut txt = Vec::new();
            write_text(&s, &mut txt).unwrap();
            prop_assert_eq!(read_text(&txt[..], s.width(), s.height(), Some(s.window())).unwrap(), s);
        }
    }
}

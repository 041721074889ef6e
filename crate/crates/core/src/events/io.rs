//! Text and binary event-list files.
//!
//! Text: one header line
//! `# biphoton-events v1 grid=WxH roi_a=x0,y0,w,h roi_b=x0,y0,w,h frame_length=N frame_count=N`
//! followed by records `t_ns,x,y,roi` with `roi` either `A` or `B`.
//!
//! Binary: 8-byte magic `BPEVSTRM`, `u16` version, `u16` reserved, `u32`
//! length of the header line that follows (UTF-8, without the leading `#`),
//! then 13-byte little-endian records `u64 t_ns, u16 x, u16 y, u8 roi`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EventRecord, EventStream, Roi, RoiRect, StreamHeader};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"BPEVSTRM";
const BINARY_VERSION: u16 = 1;
const RECORD_BYTES: usize = 13;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<StreamHeader> {
    let err = |m: String| parse_err(path, line_no, m);
    let body = line.trim_start_matches('#').trim();
    let mut words = body.split_whitespace();
    if words.next() != Some("biphoton-events") || words.next() != Some("v1") {
        return Err(err("expected header `# biphoton-events v1 ...`".into()));
    }
    let mut grid = None;
    let mut roi_a = None;
    let mut roi_b = None;
    let mut frame_length = None;
    let mut frame_count = None;
    let rect = |v: &str| -> Option<RoiRect> {
        let p: Vec<u16> = v.split(',').map(|s| s.parse().ok()).collect::<Option<_>>()?;
        (p.len() == 4).then(|| RoiRect::new(p[0], p[1], p[2], p[3]))
    };
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field {w:?}")))?;
        let bad = || err(format!("malformed value for {k}: {v:?}"));
        match k {
            "grid" => {
                let (a, b) = v.split_once('x').ok_or_else(bad)?;
                grid = Some((a.parse::<u16>().map_err(|_| bad())?, b.parse::<u16>().map_err(|_| bad())?));
            }
            "roi_a" => roi_a = Some(rect(v).ok_or_else(bad)?),
            "roi_b" => roi_b = Some(rect(v).ok_or_else(bad)?),
            "frame_length" => frame_length = Some(v.parse::<u64>().map_err(|_| bad())?),
            "frame_count" => frame_count = Some(v.parse::<u64>().map_err(|_| bad())?),
            _ => return Err(err(format!("unknown header field {k:?}"))),
        }
    }
    let missing = |n: &str| err(format!("header lacks {n}"));
    let (dw, dh) = grid.ok_or_else(|| missing("grid"))?;
    let header = StreamHeader {
        detector_width: dw,
        detector_height: dh,
        roi_a: roi_a.ok_or_else(|| missing("roi_a"))?,
        roi_b: roi_b.ok_or_else(|| missing("roi_b"))?,
        frame_length: frame_length.ok_or_else(|| missing("frame_length"))?,
        frame_count: frame_count.ok_or_else(|| missing("frame_count"))?,
    };
    header.validate().map_err(|e| err(e.to_string()))?;
    Ok(header)
}

fn parse_record(path: &Path, line_no: usize, line: &str, header: &StreamHeader) -> Result<EventRecord> {
    let err = |m: String| parse_err(path, line_no, m);
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 4 {
        return Err(err(format!("expected 4 fields `t_ns,x,y,roi`, found {}", f.len())));
    }
    let t = f[0].parse::<u64>().map_err(|_| err(format!("bad timestamp {:?}", f[0])))?;
    let x = f[1].parse::<u16>().map_err(|_| err(format!("bad x {:?}", f[1])))?;
    let y = f[2].parse::<u16>().map_err(|_| err(format!("bad y {:?}", f[2])))?;
    let roi = match f[3] {
        "A" | "a" => Roi::A,
        "B" | "b" => Roi::B,
        other => return Err(err(format!("bad roi {other:?}"))),
    };
    if !header.roi(roi).contains(x, y) {
        return Err(err(format!("({x}, {y}) lies outside ROI {}", roi.letter())));
    }
    Ok(EventRecord::new(t, x, y, roi))
}

pub fn write_events_text(stream: &EventStream, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "# {}", stream.header().to_line())?;
        for r in stream.records() {
            writeln!(w, "{},{},{},{}", r.t, r.x, r.y, r.roi.letter())?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_events_text(path: &Path) -> Result<EventStream> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = n + 1;
        let t = line.trim();
        if header.is_none() {
            if t.is_empty() {
                continue;
            }
            header = Some(parse_header(path, line_no, t)?);
            continue;
        }
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec = parse_record(path, line_no, t, header.as_ref().expect("set above"))?;
        if let Some(prev) = records.last() {
            let prev: &EventRecord = prev;
            if prev.sort_key() > rec.sort_key() {
                return Err(parse_err(path, line_no, "records are not time-sorted"));
            }
        }
        records.push(rec);
    }
    let header = header.ok_or_else(|| parse_err(path, 1, "missing header line"))?;
    EventStream::new(header, records)
}

pub fn write_events_binary(stream: &EventStream, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let meta = stream.header().to_line();
    let res = (|| -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        let mut buf = [0u8; RECORD_BYTES];
        for r in stream.records() {
            buf[0..8].copy_from_slice(&r.t.to_le_bytes());
            buf[8..10].copy_from_slice(&r.x.to_le_bytes());
            buf[10..12].copy_from_slice(&r.y.to_le_bytes());
            buf[12] = r.roi.code();
            w.write_all(&buf)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_events_binary(path: &Path) -> Result<EventStream> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[0..8] != BINARY_MAGIC {
        return Err(parse_err(path, 0, "not a binary event file (bad magic)"));
    }
    let version = u16::from_le_bytes([head[8], head[9]]);
    if version != BINARY_VERSION {
        return Err(parse_err(path, 0, format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes([head[12], head[13], head[14], head[15]]) as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta).map_err(|e| Error::io(path, e))?;
    let meta = String::from_utf8(meta).map_err(|_| parse_err(path, 0, "header is not UTF-8"))?;
    let header = parse_header(path, 0, &meta)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() % RECORD_BYTES != 0 {
        return Err(parse_err(path, 0, "truncated record"));
    }
    let records = body
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(k, c)| {
            let roi = Roi::from_code(c[12])
                .ok_or_else(|| parse_err(path, k + 1, format!("bad roi code {}", c[12])))?;
            Ok(EventRecord::new(
                u64::from_le_bytes(c[0..8].try_into().expect("8 bytes")),
                u16::from_le_bytes([c[8], c[9]]),
                u16::from_le_bytes([c[10], c[11]]),
                roi,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EventStream::new(header, records)
}

/// Read either format, detected by the binary magic.
pub fn read_events(path: &Path) -> Result<EventStream> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    let n = f.read(&mut magic).map_err(|e| Error::io(path, e))?;
    if n == 8 && &magic == BINARY_MAGIC {
        read_events_binary(path)
    } else {
        read_events_text(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> EventStream {
        let h = StreamHeader {
            detector_width: 64,
            detector_height: 32,
            roi_a: RoiRect::new(0, 0, 32, 32),
            roi_b: RoiRect::new(32, 0, 32, 32),
            frame_length: 1000,
            frame_count: 3,
        };
        EventStream::new(
            h,
            vec![
                EventRecord::new(0, 3, 4, Roi::A),
                EventRecord::new(7, 35, 4, Roi::B),
                EventRecord::new(2500, 31, 31, Roi::A),
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let s = stream();
        write_events_text(&s, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "# biphoton-events v1 grid=64x32 roi_a=0,0,32,32 roi_b=32,0,32,32 frame_length=1000 frame_count=3\n0,3,4,A\n"
        ));
        assert_eq!(read_events(&p).unwrap(), s);
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let s = stream();
        write_events_binary(&s, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[0..8], b"BPEVSTRM");
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + meta_len + 3 * 13);
        let rec = &bytes[16 + meta_len + 13..16 + meta_len + 26];
        assert_eq!(u64::from_le_bytes(rec[0..8].try_into().unwrap()), 7);
        assert_eq!(rec[12], 1);
        assert_eq!(read_events(&p).unwrap(), s);
    }

    #[test]
    fn malformed_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let s = stream();
        write_events_text(&s, &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("3000,5,x,A\n");
        std::fs::write(&p, text).unwrap();
        match read_events_text(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "1,2,3,A\n").unwrap();
        assert!(matches!(read_events_text(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unsorted_text_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let h = stream().header().to_line();
        std::fs::write(&p, format!("# {h}\n10,1,1,A\n5,40,1,B\n")).unwrap();
        assert!(matches!(read_events_text(&p), Err(Error::Parse { line: 3, .. })));
        assert_eq!(Error::Parse { path: p.clone(), line: 3, message: String::new() }.exit_code(), 4);
    }
}

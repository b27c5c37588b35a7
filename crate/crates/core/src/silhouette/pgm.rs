//! 8-bit binary PGM (P5) I/O. Pixels are stored as `round(255·v)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SilhouetteMap;
use crate::error::{Error, Result};

pub fn write_pgm<W: Write>(mut w: W, s: &SilhouetteMap) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", s.width(), s.height())?;
    let bytes: Vec<u8> = s.values().iter().map(|&v| (v * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Reads whitespace-separated header tokens, skipping `#` comments. Consumes
/// exactly one whitespace byte after the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut toks = Vec::new();
    let mut pos = 0;
    while toks.len() < count {
        let Some(&b) = bytes.get(pos) else {
            return Err(Error::Format("truncated PGM header".into()));
        };
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            toks.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((toks, pos + 1)),
        _ => Err(Error::Format("missing separator after PGM header".into())),
    }
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<SilhouetteMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (toks, offset) = header_tokens(&bytes, 4)?;
    if toks[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {:?}", toks[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM {what} {s:?}")));
    let (w, h, maxval) = (num(&toks[1], "width")?, num(&toks[2], "height")?, num(&toks[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PGM supported, maxval {maxval}")));
    }
    let payload = &bytes[offset..];
    if payload.len() != w * h {
        return Err(Error::Format(format!("expected {} pixel bytes, found {}", w * h, payload.len())));
    }
    let values = payload.iter().map(|&b| b as f64 / 255.0).collect();
    SilhouetteMap::from_values(w, h, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_pgm(path: impl AsRef<Path>, s: &SilhouetteMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<SilhouetteMap> {
    read_pgm(BufReader::new(File::open(path)?))
}

//! Binary PGM (P5) reader/writer, 8- and 16-bit.
//!
//! 16-bit samples are big-endian per the PGM convention. This is the
//! lossless interchange format for dataset directories.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Row-major samples; 8-bit files are widened on read.
    pub data: Vec<u16>,
}

impl PgmImage {
    pub fn bit_depth(&self) -> u8 {
        if self.maxval > 255 {
            16
        } else {
            8
        }
    }
}

pub fn write_pgm16<W: Write>(out: &mut W, width: usize, height: usize, data: &[u16]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Dataset(format!(
            "pgm: {} samples for {width}x{height}",
            data.len()
        )));
    }
    write!(out, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(data.len() * 2);
    for &v in data {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    // skip whitespace and '#' comments
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            b'#' => loop {
                r.read_exact(&mut byte)?;
                if byte[0] == b'\n' {
                    break;
                }
            },
            b' ' | b'\t' | b'\r' | b'\n' => {}
            c => {
                tok.push(c as char);
                break;
            }
        }
    }
    loop {
        if r.read_exact(&mut byte).is_err() {
            break;
        }
        match byte[0] {
            b' ' | b'\t' | b'\r' | b'\n' => break,
            c => tok.push(c as char),
        }
    }
    Ok(tok)
}

pub fn read_pgm<R: Read>(r: &mut R) -> Result<PgmImage> {
    let magic = read_token(r)?;
    if magic != "P5" {
        return Err(Error::Dataset(format!(
            "pgm: expected P5 magic, got {magic:?}"
        )));
    }
    let parse = |tok: String, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| Error::Dataset(format!("pgm: bad {what} {tok:?}")))
    };
    let width = parse(read_token(r)?, "width")?;
    let height = parse(read_token(r)?, "height")?;
    let maxval = parse(read_token(r)?, "maxval")? as u32;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Dataset(format!(
            "pgm: implausible header {width}x{height} maxval {maxval}"
        )));
    }
    let n = width * height;
    let data = if maxval > 255 {
        let mut raw = vec![0u8; n * 2];
        r.read_exact(&mut raw)?;
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        let mut raw = vec![0u8; n];
        r.read_exact(&mut raw)?;
        raw.into_iter().map(u16::from).collect()
    };
    Ok(PgmImage {
        width,
        height,
        maxval,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_16bit() {
        let data: Vec<u16> = (0..12).map(|i| (i * 5461) as u16).collect();
        let mut buf = Vec::new();
        write_pgm16(&mut buf, 4, 3, &data).unwrap();
        let img = read_pgm(&mut std::io::Cursor::new(buf)).unwrap();
        assert_eq!(img.width, 4);
        assert_eq!(img.height, 3);
        assert_eq!(img.maxval, 65535);
        assert_eq!(img.data, data);
        assert_eq!(img.bit_depth(), 16);
    }

    #[test]
    fn reads_8bit_with_comment() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"P5\n# a comment\n2 2\n255\n");
        buf.extend_from_slice(&[0u8, 128, 255, 7]);
        let img = read_pgm(&mut std::io::Cursor::new(buf)).unwrap();
        assert_eq!(img.bit_depth(), 8);
        assert_eq!(img.data, vec![0, 128, 255, 7]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_pgm(&mut std::io::Cursor::new(b"P6\n2 2\n255\n".to_vec())).is_err());
        assert!(read_pgm(&mut std::io::Cursor::new(b"P5\n0 2\n255\n".to_vec())).is_err());
        // truncated payload
        let mut buf = Vec::new();
        buf.extend_from_slice(b"P5\n2 2\n65535\n");
        buf.extend_from_slice(&[1, 2, 3]);
        assert!(read_pgm(&mut std::io::Cursor::new(buf)).is_err());
    }
}

//! Little-endian helpers shared by the model, case and dataset containers.
//! Every container ends with a CRC32 of all preceding bytes.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8]) -> Self {
        Self {
            buf: magic.to_vec(),
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn f32s(&mut self, vals: impl IntoIterator<Item = f32>) {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Append the trailing CRC32 and return the finished buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Check magic and trailing CRC; the reader then covers the payload only.
    pub fn open(bytes: &'a [u8], magic: &[u8]) -> Result<Self> {
        if bytes.len() < magic.len() + 4 {
            return Err(Error::corrupt("file too short", bytes.len()));
        }
        if &bytes[..magic.len()] != magic {
            return Err(Error::corrupt("bad magic bytes", 0));
        }
        let body = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(&bytes[..body]);
        if stored != actual {
            return Err(Error::corrupt(
                format!("CRC mismatch (stored {stored:08x}, computed {actual:08x})"),
                body,
            ));
        }
        Ok(Self {
            buf: &bytes[..body],
            pos: magic.len(),
        })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(
                format!("truncated while reading {what}"),
                self.pos,
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::corrupt(format!("{what} length overflow"), self.pos))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(&self, what: &str) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(Error::corrupt(
                format!("trailing bytes after {what}"),
                self.pos,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc_and_truncation_are_detected() {
        let mut w = ByteWriter::new(b"MAGIC\0");
        w.u32(7);
        w.f64(1.5);
        let bytes = w.finish();
        let mut r = ByteReader::open(&bytes, b"MAGIC\0").unwrap();
        assert_eq!(r.u32("a").unwrap(), 7);
        assert_eq!(r.f64("b").unwrap(), 1.5);
        assert!(r.finish("payload").is_ok());

        let mut bad = bytes.clone();
        bad[7] ^= 0xff;
        assert!(matches!(
            ByteReader::open(&bad, b"MAGIC\0"),
            Err(Error::Corrupt { .. })
        ));
        assert!(ByteReader::open(&bytes[..bytes.len() - 3], b"MAGIC\0").is_err());
        assert!(ByteReader::open(&bytes, b"OTHER\0").is_err());
    }
}

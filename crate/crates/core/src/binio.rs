//! Little-endian binary helpers shared by the on-disk formats.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    Version { expected: u32, found: u32 },
    Truncated { needed: usize },
    Invalid(String),
    TrailingBytes,
}

/// A decoding failure, located at a byte offset in the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub format: &'static str,
    pub offset: usize,
    pub kind: FormatErrorKind,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} decode error at byte {}: ", self.format, self.offset)?;
        match &self.kind {
            FormatErrorKind::BadMagic { expected, found } => write!(
                f,
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(expected)
            ),
            FormatErrorKind::Version { expected, found } => {
                write!(f, "unsupported version {found}, expected {expected}")
            }
            FormatErrorKind::Truncated { needed } => write!(f, "truncated, {needed} more bytes needed"),
            FormatErrorKind::Invalid(msg) => write!(f, "{msg}"),
            FormatErrorKind::TrailingBytes => write!(f, "unexpected trailing bytes"),
        }
    }
}

impl std::error::Error for FormatError {}

pub struct Reader<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(format: &'static str, bytes: &'a [u8]) -> Self {
        Self { format, bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn error(&self, kind: FormatErrorKind) -> FormatError {
        FormatError {
            format: self.format,
            offset: self.pos,
            kind,
        }
    }

    pub fn invalid(&self, msg: impl Into<String>) -> FormatError {
        self.error(FormatErrorKind::Invalid(msg.into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.error(FormatErrorKind::Truncated {
                needed: end - self.bytes.len(),
            }));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let start = self.pos;
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError {
                format: self.format,
                offset: start,
                kind: FormatErrorKind::BadMagic {
                    expected: *expected,
                    found: found.try_into().expect("4 bytes"),
                },
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<(), FormatError> {
        let start = self.pos;
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError {
                format: self.format,
                offset: start,
                kind: FormatErrorKind::Version { expected, found },
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(self.error(FormatErrorKind::TrailingBytes));
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32s(&mut self, vs: &[f32]) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

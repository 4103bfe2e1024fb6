//! Little-endian encoding for checkpoint and cache files.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// `rows u32, cols u32` then row-major f32 values.
    pub fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        for v in t.data() {
            self.bytes(&v.to_le_bytes());
        }
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    err: fn(String) -> Error,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8], err: fn(String) -> Error) -> Self {
        Self { data, pos: 0, err }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err((self.err)(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| (self.err)("string is not UTF-8".into()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| (self.err)("length overflow".into()))?)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err((self.err)("non-finite value".into()));
        }
        Ok(vals)
    }

    pub fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f32s(rows * cols)?;
        Tensor::new(rows, cols, data)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err((self.err)(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err((self.err)(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

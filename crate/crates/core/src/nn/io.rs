//! Binary network format: a small header (magic, version, layer sizes,
//! activation codes, parameter count) followed by the flat parameter
//! vector as little-endian `f64`.

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

pub const MAGIC: &[u8; 4] = b"CKNN";
pub const VERSION: u32 = 1;

pub fn encode(net: &Mlp, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layer_sizes().len() as u32).to_le_bytes());
    for &n in net.layer_sizes() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for a in net.activations() {
        out.push(a.code());
    }
    out.push(net.output_activation().code());
    out.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

pub fn to_bytes(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    encode(net, &mut out);
    out
}

/// Little-endian reader over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!(
                "truncated input: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(r: &mut Reader<'_>) -> Result<Mlp> {
    if r.take(4)? != MAGIC {
        return Err(Error::Data("not a network record (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "unsupported network format version {version}"
        )));
    }
    let n_layers = r.u32()? as usize;
    if !(2..=64).contains(&n_layers) {
        return Err(Error::Data(format!("implausible layer count {n_layers}")));
    }
    let sizes = (0..n_layers)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let decode_act = |code: u8| {
        Activation::from_code(code)
            .ok_or_else(|| Error::Data(format!("unknown activation code {code}")))
    };
    let activations = (0..n_layers - 2)
        .map(|_| r.u8().and_then(decode_act))
        .collect::<Result<Vec<_>>>()?;
    let output = decode_act(r.u8()?)?;
    let n_params = r.u64()? as usize;
    if n_params != super::mlp::param_count(&sizes) {
        return Err(Error::Data(
            "parameter count does not match layer sizes".into(),
        ));
    }
    let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Mlp::from_params(sizes, activations, output, params)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader::new(bytes);
    let net = decode(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Data("trailing bytes after network record".into()));
    }
    Ok(net)
}

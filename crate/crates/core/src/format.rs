//! On-disk containers for models.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "TPBS"  u32 version
//! u32 N   u32 R   u32 M
//! u32 degree[N]
//! u32 knot_count[N]
//! f64 knots[n][..]          for each n
//! f64 coeffs[n][r][k]
//! f64 out_vectors[r][m]
//! u32 has_scaler            then, if 1: f64 min[N], f64 max[N], f64 eps
//! ```
//!
//! The text form carries the same fields in the same order, one token per
//! value, under the header `TPBS-TEXT <version>`. Floats are written with
//! the shortest representation that parses back to the identical `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::model::{ModelError, TpbsModel};
use crate::scalar::Scalar;
use crate::scaler::ScalerParams;
use crate::spline::SplineSpace;

pub const MODEL_MAGIC: &[u8; 4] = b"TPBS";
pub const MODEL_TEXT_MAGIC: &str = "TPBS-TEXT";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Text,
}

/// Sink for the fixed field sequence shared by the binary and text forms.
pub(crate) trait FieldSink {
    fn u32(&mut self, v: u32);
    fn f64(&mut self, v: f64);
    fn newline(&mut self) {}
}

/// Source for the fixed field sequence.
pub(crate) trait FieldSource {
    fn u32(&mut self, what: &str) -> Result<u32, ModelError>;
    fn f64(&mut self, what: &str) -> Result<f64, ModelError>;
    fn finish(&mut self) -> Result<(), ModelError>;
}

#[derive(Default)]
pub(crate) struct BinSink(pub Vec<u8>);

impl FieldSink for BinSink {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

#[derive(Default)]
pub(crate) struct TextSink(pub String);

impl FieldSink for TextSink {
    fn u32(&mut self, v: u32) {
        self.sep();
        self.0.push_str(&v.to_string());
    }
    fn f64(&mut self, v: f64) {
        self.sep();
        self.0.push_str(&format!("{v:?}"));
    }
    fn newline(&mut self) {
        self.0.push('\n');
    }
}

impl TextSink {
    fn sep(&mut self) {
        if !self.0.is_empty() && !self.0.ends_with('\n') {
            self.0.push(' ');
        }
    }
}

pub(crate) struct BinSource<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl BinSource<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Truncated(format!("ran out of bytes reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

impl FieldSource for BinSource<'_> {
    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64, ModelError> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn finish(&mut self) -> Result<(), ModelError> {
        if self.pos != self.bytes.len() {
            return Err(ModelError::Inconsistent(format!(
                "{} trailing bytes after the last field",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) struct TextSource<'a> {
    pub tokens: std::str::SplitWhitespace<'a>,
}

impl FieldSource for TextSource<'_> {
    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        let t = self
            .tokens
            .next()
            .ok_or_else(|| ModelError::Truncated(format!("ran out of tokens reading {what}")))?;
        t.parse()
            .map_err(|_| ModelError::Inconsistent(format!("{what}: `{t}` is not an unsigned integer")))
    }
    fn f64(&mut self, what: &str) -> Result<f64, ModelError> {
        let t = self
            .tokens
            .next()
            .ok_or_else(|| ModelError::Truncated(format!("ran out of tokens reading {what}")))?;
        t.parse()
            .map_err(|_| ModelError::Inconsistent(format!("{what}: `{t}` is not a number")))
    }
    fn finish(&mut self) -> Result<(), ModelError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(ModelError::Inconsistent(format!("unexpected trailing token `{t}`"))),
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32, ModelError> {
    u32::try_from(v).map_err(|_| ModelError::InvalidShape(format!("{what} = {v} does not fit in u32")))
}

fn write_model_fields<T: Scalar>(model: &TpbsModel<T>, sink: &mut dyn FieldSink) -> Result<(), ModelError> {
    let n = model.input_dim();
    sink.u32(to_u32(n, "N")?);
    sink.u32(to_u32(model.rank(), "R")?);
    sink.u32(to_u32(model.output_dim(), "M")?);
    sink.newline();
    for s in model.spaces() {
        sink.u32(to_u32(s.degree(), "degree")?);
    }
    sink.newline();
    for s in model.spaces() {
        sink.u32(to_u32(s.knots().len(), "knot count")?);
    }
    sink.newline();
    for s in model.spaces() {
        for &t in s.knots() {
            sink.f64(t.to_f64_lossy());
        }
        sink.newline();
    }
    for n in 0..n {
        for r in 0..model.rank() {
            for &c in model.factor(n, r) {
                sink.f64(c.to_f64_lossy());
            }
            sink.newline();
        }
    }
    for r in 0..model.rank() {
        for &v in model.out_vector(r) {
            sink.f64(v.to_f64_lossy());
        }
        sink.newline();
    }
    match model.scaler() {
        None => sink.u32(0),
        Some(sc) => {
            if sc.dim() != n {
                return Err(ModelError::InvalidShape(format!(
                    "scaler has {} features, model has {n}",
                    sc.dim()
                )));
            }
            sink.u32(1);
            sink.newline();
            sc.min.iter().for_each(|&v| sink.f64(v));
            sink.newline();
            sc.max.iter().for_each(|&v| sink.f64(v));
            sink.newline();
            sink.f64(sc.eps);
        }
    }
    sink.newline();
    Ok(())
}

const MAX_REASONABLE: u32 = 1 << 24;

fn read_count(src: &mut dyn FieldSource, what: &str) -> Result<usize, ModelError> {
    let v = src.u32(what)?;
    if v > MAX_REASONABLE {
        return Err(ModelError::Inconsistent(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

fn read_model_fields<T: Scalar>(src: &mut dyn FieldSource) -> Result<TpbsModel<T>, ModelError> {
    let n = read_count(src, "N")?;
    let rank = read_count(src, "R")?;
    let m = read_count(src, "M")?;
    if n == 0 || rank == 0 || m == 0 {
        return Err(ModelError::Inconsistent(format!("N={n}, R={rank}, M={m} must all be positive")));
    }
    let degrees = (0..n).map(|_| read_count(src, "degree")).collect::<Result<Vec<_>, _>>()?;
    let counts = (0..n).map(|_| read_count(src, "knot count")).collect::<Result<Vec<_>, _>>()?;
    let mut spaces = Vec::with_capacity(n);
    for d in 0..n {
        if counts[d] < 2 * (degrees[d] + 1) {
            return Err(ModelError::Inconsistent(format!(
                "dimension {d}: {} knots cannot carry degree {}",
                counts[d], degrees[d]
            )));
        }
        let knots = (0..counts[d])
            .map(|_| src.f64("knot").map(T::of))
            .collect::<Result<Vec<_>, _>>()?;
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(ModelError::Inconsistent(format!("dimension {d}: knots are not sorted")));
        }
        spaces.push(SplineSpace::from_knots(degrees[d], knots)?);
    }
    let total: usize = spaces.iter().map(|s| s.num_basis() * rank).sum();
    let coeffs = (0..total).map(|_| src.f64("coefficient").map(T::of)).collect::<Result<Vec<_>, _>>()?;
    let out = (0..rank * m).map(|_| src.f64("output vector").map(T::of)).collect::<Result<Vec<_>, _>>()?;
    let scaler = match src.u32("scaler flag")? {
        0 => None,
        1 => {
            let min = (0..n).map(|_| src.f64("scaler min")).collect::<Result<Vec<_>, _>>()?;
            let max = (0..n).map(|_| src.f64("scaler max")).collect::<Result<Vec<_>, _>>()?;
            let eps = src.f64("scaler eps")?;
            Some(ScalerParams { min, max, eps })
        }
        f => return Err(ModelError::Inconsistent(format!("scaler flag must be 0 or 1, got {f}"))),
    };
    src.finish()?;
    let mut model = TpbsModel::from_parts(spaces, rank, m, coeffs, out)
        .map_err(|e| ModelError::Inconsistent(e.to_string()))?;
    model.set_scaler(scaler);
    Ok(model)
}

/// Serializes a model to bytes in the requested encoding.
pub fn encode_model<T: Scalar>(model: &TpbsModel<T>, enc: Encoding) -> Result<Vec<u8>, ModelError> {
    match enc {
        Encoding::Binary => {
            let mut sink = BinSink::default();
            sink.0.extend_from_slice(MODEL_MAGIC);
            sink.u32(MODEL_VERSION);
            write_model_fields(model, &mut sink)?;
            Ok(sink.0)
        }
        Encoding::Text => {
            let mut sink = TextSink(format!("{MODEL_TEXT_MAGIC} {MODEL_VERSION}\n"));
            write_model_fields(model, &mut sink)?;
            Ok(sink.0.into_bytes())
        }
    }
}

/// Parses either encoding, detected from the leading magic.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<TpbsModel<T>, ModelError> {
    if bytes.starts_with(MODEL_TEXT_MAGIC.as_bytes()) {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| ModelError::Inconsistent("text model is not valid UTF-8".into()))?;
        let mut tokens = text.split_whitespace();
        tokens.next();
        let mut src = TextSource { tokens };
        check_version(src.u32("version")?)?;
        read_model_fields(&mut src)
    } else if bytes.starts_with(MODEL_MAGIC) {
        let mut src = BinSource { bytes, pos: 4 };
        check_version(src.u32("version")?)?;
        read_model_fields(&mut src)
    } else if bytes.len() < MODEL_MAGIC.len() && MODEL_MAGIC.starts_with(bytes) {
        Err(ModelError::Truncated("file ends inside the magic".into()))
    } else {
        Err(ModelError::BadMagic { expected: "TPBS model" })
    }
}

fn check_version(found: u32) -> Result<(), ModelError> {
    if found != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion {
            found,
            expected: MODEL_VERSION,
        });
    }
    Ok(())
}

pub fn save_model<T: Scalar>(model: &TpbsModel<T>, path: &Path, enc: Encoding) -> Result<(), ModelError> {
    let bytes = encode_model(model, enc)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<TpbsModel<T>, ModelError> {
    decode_model(&fs::read(path)?)
}

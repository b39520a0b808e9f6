//! Per-module storage: grouped COO (SASS), mask-plus-values (Indep) and raw
//! 32-bit dense streams, all behind one fixed-layout header.
//!
//! Header, MSB-first: format (2) · bit-width (4) · group size − 1 (8) ·
//! element count (27) · scale (f32) · range_neg (f32) · range_pos (f32).
//! The 8 + 27 bits are the fixed 35-bit overhead of the size formula; the
//! remaining fields make a stream self-describing.
//!
//! SASS payload: one bitmap bit per group, then for every flagged group its
//! records `(intra-group index: ⌈log₂c⌉, bin: b, last-in-group flag: 1)`.

use crate::bas::QuantSpec;
use crate::codec::bits::{BitReader, BitWriter};
use crate::error::CodecError;

/// Largest admissible group size.
pub const MAX_GROUP: usize = 256;
/// Largest element count representable in the 27-bit field.
pub const MAX_ELEMENTS: usize = (1 << 27) - 1;
/// Bits of the full header.
pub const HEADER_BITS: usize = 2 + 4 + 8 + 27 + 3 * 32;
/// Fixed overhead counted by the storage size formula (group size + count).
pub const FORMULA_HEADER_BITS: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Sass,
    Indep,
    Dense,
}

impl Format {
    fn tag(self) -> u64 {
        match self {
            Format::Sass => 0,
            Format::Indep => 1,
            Format::Dense => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Sass => "SASS",
            Format::Indep => "INDEP",
            Format::Dense => "DENSE",
        }
    }
}

/// Fixed-layout module header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleHeader {
    pub format: Format,
    /// Quantizer width; `0` marks a raw dense module without a quantizer.
    pub bits: u32,
    /// SASS group size; `0` for other formats.
    pub group: usize,
    pub n: usize,
    pub scale: f32,
    pub range_neg: f32,
    pub range_pos: f32,
}

/// Sparse survivors of a masked, quantized module.
///
/// Element `j` decodes to `scale · center(bin_j)` when `j` is a survivor and
/// to zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModule {
    pub n: usize,
    pub bits: u32,
    pub range_neg: f32,
    pub range_pos: f32,
    pub scale: f32,
    /// `(position, bin)` with strictly increasing positions.
    pub survivors: Vec<(u32, u32)>,
}

impl QuantizedModule {
    pub fn spec(&self) -> QuantSpec {
        QuantSpec {
            bits: self.bits,
            range_neg: f64::from(self.range_neg),
            range_pos: f64::from(self.range_pos),
        }
    }

    /// Builds a module from unscaled masked values; every non-zero entry must
    /// sit exactly on a bin center of the quantizer.
    pub fn from_values(
        values: &[f64],
        bits: u32,
        range_neg: f32,
        range_pos: f32,
        scale: f32,
    ) -> Result<Self, CodecError> {
        let m = Self {
            n: values.len(),
            bits,
            range_neg,
            range_pos,
            scale,
            survivors: Vec::new(),
        };
        m.check_params()?;
        let spec = m.spec();
        let mut survivors = Vec::new();
        for (j, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let bin = spec.index(v);
            if spec.center(bin) != v {
                return Err(CodecError::NotOnBinCenter {
                    position: j,
                    value: v,
                });
            }
            survivors.push((j as u32, bin));
        }
        Ok(Self { survivors, ..m })
    }

    fn check_params(&self) -> Result<(), CodecError> {
        if !(1..=8).contains(&self.bits) {
            return Err(CodecError::BadBitWidth(self.bits));
        }
        if self.n == 0 || self.n > MAX_ELEMENTS {
            return Err(CodecError::Capacity(self.n));
        }
        let ok = |x: f32| x.is_finite() && x >= 0.0;
        if !ok(self.range_neg) || !ok(self.range_pos) || !self.scale.is_finite() {
            return Err(CodecError::Container(
                "quantizer ranges must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Checks sortedness and index ranges of the survivor list.
    pub fn validate(&self) -> Result<(), CodecError> {
        self.check_params()?;
        let levels = 1u32 << self.bits;
        let mut prev: Option<u32> = None;
        for &(pos, bin) in &self.survivors {
            if pos as usize >= self.n {
                return Err(CodecError::PositionOutOfRange {
                    position: pos as usize,
                    n: self.n,
                });
            }
            if prev.is_some_and(|p| p >= pos) {
                return Err(CodecError::Unsorted(pos as usize));
            }
            if bin >= levels {
                return Err(CodecError::BinOutOfRange {
                    position: pos as usize,
                    bin,
                    bits: self.bits,
                });
            }
            prev = Some(pos);
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.survivors.len()
    }

    /// Achieved sparsity `1 − nnz/n`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.n as f64
    }

    /// Decoded value of one bin, rounded through `f32` so every storage
    /// format reproduces it exactly.
    pub fn value_of(&self, bin: u32) -> f64 {
        let v = f64::from(self.scale) * self.spec().center(bin);
        f64::from(v as f32)
    }

    pub fn to_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(pos, bin) in &self.survivors {
            out[pos as usize] = self.value_of(bin);
        }
        out
    }
}

/// A module as stored: quantized survivors, or raw `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub enum ModuleData {
    Quantized(QuantizedModule),
    Raw(Vec<f32>),
}

impl ModuleData {
    pub fn len(&self) -> usize {
        match self {
            ModuleData::Quantized(q) => q.n,
            ModuleData::Raw(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_values(&self) -> Vec<f64> {
        match self {
            ModuleData::Quantized(q) => q.to_values(),
            ModuleData::Raw(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            ModuleData::Quantized(q) => q.nnz(),
            ModuleData::Raw(v) => v.iter().filter(|&&x| x != 0.0).count(),
        }
    }
}

/// One encoded module stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModule {
    pub header: ModuleHeader,
    /// Payload bits, excluding header and padding.
    pub payload_bits: usize,
    pub bytes: Vec<u8>,
}

impl EncodedModule {
    /// Header plus payload, excluding padding.
    pub fn stream_bits(&self) -> usize {
        HEADER_BITS + self.payload_bits
    }

    /// Size as counted by the storage formula: 35 + payload.
    pub fn formula_bits(&self) -> usize {
        FORMULA_HEADER_BITS + self.payload_bits
    }

    pub fn file_bits(&self) -> usize {
        self.bytes.len() * 8
    }
}

/// `⌈log₂ c⌉`.
pub fn index_bits(c: usize) -> u32 {
    debug_assert!(c >= 1);
    usize::BITS - (c - 1).leading_zeros()
}

/// Admissible group sizes: divisors of `n` no larger than 256.
pub fn admissible_groups(n: usize) -> Vec<usize> {
    (1..=MAX_GROUP.min(n))
        .filter(|c| n.is_multiple_of(*c))
        .collect()
}

/// Expected SASS size `35 + n/c + n(1−α)(⌈log₂c⌉ + b + 1)` in bits.
pub fn expected_bits(n: usize, c: usize, alpha: f64, bits: u32) -> f64 {
    let n_f = n as f64;
    FORMULA_HEADER_BITS as f64
        + n_f / c as f64
        + n_f * (1.0 - alpha) * f64::from(index_bits(c) + bits + 1)
}

/// Divisor closest to the continuous optimum `ln 2 / (1 − α)`, ties toward
/// the smaller size.
pub fn nearest_group(n: usize, alpha: f64) -> usize {
    let groups = admissible_groups(n);
    if alpha >= 1.0 {
        return *groups.last().unwrap();
    }
    let target = std::f64::consts::LN_2 / (1.0 - alpha);
    let mut best = groups[0];
    for &c in &groups[1..] {
        if (target - c as f64).abs() < (target - best as f64).abs() {
            best = c;
        }
    }
    best
}

/// Admissible group size minimizing [`expected_bits`], ties toward the
/// smaller size. The bit-width term is the same for every `c`, so the choice
/// depends only on `n` and `α`. An empty module (`α = 1`) takes the largest
/// admissible size.
pub fn optimal_group(n: usize, alpha: f64) -> usize {
    let groups = admissible_groups(n);
    if alpha >= 1.0 {
        return *groups.last().unwrap();
    }
    let mut best = groups[0];
    let mut best_bits = expected_bits(n, best, alpha, 1);
    for &c in &groups[1..] {
        let b = expected_bits(n, c, alpha, 1);
        if b < best_bits {
            best = c;
            best_bits = b;
        }
    }
    best
}

/// Exact SASS payload size for a given survivor count.
pub fn sass_payload_bits(n: usize, c: usize, nnz: usize, bits: u32) -> usize {
    n / c + nnz * (index_bits(c) + bits + 1) as usize
}

pub fn indep_payload_bits(n: usize, bits: u32) -> usize {
    (bits as usize + 1) * n
}

pub fn dense_payload_bits(n: usize) -> usize {
    32 * n
}

fn write_header(w: &mut BitWriter, h: &ModuleHeader) {
    w.write(h.format.tag(), 2);
    w.write(u64::from(h.bits), 4);
    w.write(
        if h.format == Format::Sass {
            h.group as u64 - 1
        } else {
            0
        },
        8,
    );
    w.write(h.n as u64, 27);
    w.write(u64::from(h.scale.to_bits()), 32);
    w.write(u64::from(h.range_neg.to_bits()), 32);
    w.write(u64::from(h.range_pos.to_bits()), 32);
}

fn quant_header(q: &QuantizedModule, format: Format, group: usize) -> ModuleHeader {
    ModuleHeader {
        format,
        bits: q.bits,
        group,
        n: q.n,
        scale: q.scale,
        range_neg: q.range_neg,
        range_pos: q.range_pos,
    }
}

fn finish(w: BitWriter, header: ModuleHeader) -> EncodedModule {
    let payload_bits = w.bit_len() - HEADER_BITS;
    EncodedModule {
        header,
        payload_bits,
        bytes: w.finish(),
    }
}

/// Grouped-COO encoding with group size `c` (must divide `n`, ≤ 256).
pub fn encode_sass(q: &QuantizedModule, c: usize) -> Result<EncodedModule, CodecError> {
    q.validate()?;
    if c == 0 || c > MAX_GROUP || !q.n.is_multiple_of(c) {
        return Err(CodecError::BadGroup { group: c, n: q.n });
    }
    let header = quant_header(q, Format::Sass, c);
    let mut w = BitWriter::new();
    write_header(&mut w, &header);
    let groups = q.n / c;
    let mut flagged = vec![false; groups];
    for &(pos, _) in &q.survivors {
        flagged[pos as usize / c] = true;
    }
    for &f in &flagged {
        w.write_bit(f);
    }
    let ib = index_bits(c);
    for (i, &(pos, bin)) in q.survivors.iter().enumerate() {
        let g = pos as usize / c;
        let last = q
            .survivors
            .get(i + 1)
            .is_none_or(|&(next, _)| next as usize / c != g);
        w.write((pos as usize % c) as u64, ib);
        w.write(u64::from(bin), q.bits);
        w.write_bit(last);
    }
    Ok(finish(w, header))
}

/// Full mask followed by one bin per element (zeros carry bin 0).
pub fn encode_indep(q: &QuantizedModule) -> Result<EncodedModule, CodecError> {
    q.validate()?;
    let header = quant_header(q, Format::Indep, 0);
    let mut w = BitWriter::new();
    write_header(&mut w, &header);
    let mut bins = vec![None; q.n];
    for &(pos, bin) in &q.survivors {
        bins[pos as usize] = Some(bin);
    }
    for b in &bins {
        w.write_bit(b.is_some());
    }
    for b in &bins {
        w.write(u64::from(b.unwrap_or(0)), q.bits);
    }
    Ok(finish(w, header))
}

fn encode_dense_values(header: ModuleHeader, values: &[f32]) -> EncodedModule {
    let mut w = BitWriter::new();
    write_header(&mut w, &header);
    for v in values {
        w.write(u64::from(v.to_bits()), 32);
    }
    finish(w, header)
}

/// Raw `f32` per element. Quantized modules keep their quantizer fields in
/// the header for reference; the payload holds the decoded values.
pub fn encode_dense(data: &ModuleData) -> Result<EncodedModule, CodecError> {
    match data {
        ModuleData::Quantized(q) => {
            q.validate()?;
            let values: Vec<f32> = q.to_values().iter().map(|&v| v as f32).collect();
            Ok(encode_dense_values(
                quant_header(q, Format::Dense, 0),
                &values,
            ))
        }
        ModuleData::Raw(v) => {
            if v.is_empty() || v.len() > MAX_ELEMENTS {
                return Err(CodecError::Capacity(v.len()));
            }
            let header = ModuleHeader {
                format: Format::Dense,
                bits: 0,
                group: 0,
                n: v.len(),
                scale: 1.0,
                range_neg: 0.0,
                range_pos: 0.0,
            };
            Ok(encode_dense_values(header, v))
        }
    }
}

/// Encodes in the given format; SASS uses [`optimal_group`] at the module's
/// achieved sparsity.
pub fn encode(data: &ModuleData, format: Format) -> Result<EncodedModule, CodecError> {
    match (data, format) {
        (ModuleData::Quantized(q), Format::Sass) => {
            encode_sass(q, optimal_group(q.n, q.sparsity()))
        }
        (ModuleData::Quantized(q), Format::Indep) => encode_indep(q),
        (_, Format::Dense) => encode_dense(data),
        (ModuleData::Raw(_), f) => Err(CodecError::Container(format!(
            "raw modules can only be stored as DENSE, not {}",
            f.name()
        ))),
    }
}

/// Exact payload bits of each candidate format for a quantized module.
pub fn candidate_sizes(q: &QuantizedModule) -> [(Format, usize); 3] {
    let c = optimal_group(q.n, q.sparsity());
    [
        (Format::Sass, sass_payload_bits(q.n, c, q.nnz(), q.bits)),
        (Format::Indep, indep_payload_bits(q.n, q.bits)),
        (Format::Dense, dense_payload_bits(q.n)),
    ]
}

/// Cheapest format by exact payload size; ties keep the earlier of
/// SASS, Indep, Dense.
pub fn choose_format(q: &QuantizedModule) -> Format {
    let sizes = candidate_sizes(q);
    let mut best = sizes[0];
    for s in &sizes[1..] {
        if s.1 < best.1 {
            best = *s;
        }
    }
    best.0
}

/// Encodes with the cheapest format.
pub fn encode_best(q: &QuantizedModule) -> Result<EncodedModule, CodecError> {
    encode(&ModuleData::Quantized(q.clone()), choose_format(q))
}

fn corrupt(offset: usize, reason: &'static str) -> CodecError {
    CodecError::Corrupt { offset, reason }
}

fn read_header(r: &mut BitReader<'_>) -> Result<ModuleHeader, CodecError> {
    let start = r.position();
    let format = match r.read(2)? {
        0 => Format::Sass,
        1 => Format::Indep,
        2 => Format::Dense,
        _ => return Err(corrupt(start, "unknown format tag")),
    };
    let bits = r.read(4)? as u32;
    let group_field = r.read(8)? as usize;
    let n = r.read(27)? as usize;
    let scale = f32::from_bits(r.read(32)? as u32);
    let range_neg = f32::from_bits(r.read(32)? as u32);
    let range_pos = f32::from_bits(r.read(32)? as u32);
    if n == 0 {
        return Err(corrupt(start + 14, "empty module"));
    }
    let group = match format {
        Format::Sass => {
            let c = group_field + 1;
            if !n.is_multiple_of(c) {
                return Err(corrupt(
                    start + 6,
                    "group size does not divide element count",
                ));
            }
            c
        }
        _ => {
            if group_field != 0 {
                return Err(corrupt(start + 6, "group field set on non-grouped format"));
            }
            0
        }
    };
    let quantized = !(format == Format::Dense && bits == 0);
    if quantized {
        if !(1..=8).contains(&bits) {
            return Err(corrupt(start + 2, "bit-width outside 1..=8"));
        }
        let ok = |x: f32| x.is_finite() && x >= 0.0;
        if !scale.is_finite() || !ok(range_neg) || !ok(range_pos) {
            return Err(corrupt(
                start + 41,
                "non-finite or negative quantizer field",
            ));
        }
    } else if scale.to_bits() != 1.0f32.to_bits()
        || range_neg.to_bits() != 0
        || range_pos.to_bits() != 0
    {
        return Err(corrupt(start + 41, "raw module with quantizer fields"));
    }
    Ok(ModuleHeader {
        format,
        bits,
        group,
        n,
        scale,
        range_neg,
        range_pos,
    })
}

/// Decodes one module stream, validating it is in canonical form so that
/// re-encoding the result reproduces the input bytes.
pub fn decode(bytes: &[u8]) -> Result<(ModuleHeader, ModuleData), CodecError> {
    let mut r = BitReader::new(bytes);
    let h = read_header(&mut r)?;
    let quant = |survivors| QuantizedModule {
        n: h.n,
        bits: h.bits,
        range_neg: h.range_neg,
        range_pos: h.range_pos,
        scale: h.scale,
        survivors,
    };
    let data = match h.format {
        Format::Sass => {
            let c = h.group;
            let groups = h.n / c;
            if r.remaining() < groups {
                return Err(CodecError::Truncated {
                    offset: r.position(),
                });
            }
            let mut flagged = Vec::with_capacity(groups);
            for _ in 0..groups {
                flagged.push(r.read_bit()?);
            }
            let ib = index_bits(c);
            let mut survivors = Vec::new();
            for (g, &f) in flagged.iter().enumerate() {
                if !f {
                    continue;
                }
                let mut prev: Option<usize> = None;
                loop {
                    let at = r.position();
                    let idx = r.read(ib)? as usize;
                    let bin = r.read(h.bits)? as u32;
                    let last = r.read_bit()?;
                    if idx >= c {
                        return Err(corrupt(at, "intra-group index out of range"));
                    }
                    if prev.is_some_and(|p| p >= idx) {
                        return Err(corrupt(at, "intra-group indices not increasing"));
                    }
                    prev = Some(idx);
                    survivors.push(((g * c + idx) as u32, bin));
                    if last {
                        break;
                    }
                }
            }
            ModuleData::Quantized(quant(survivors))
        }
        Format::Indep => {
            if r.remaining() < h.n * (h.bits as usize + 1) {
                return Err(CodecError::Truncated {
                    offset: r.position(),
                });
            }
            let mut mask = Vec::with_capacity(h.n);
            for _ in 0..h.n {
                mask.push(r.read_bit()?);
            }
            let mut survivors = Vec::new();
            for (j, &m) in mask.iter().enumerate() {
                let at = r.position();
                let bin = r.read(h.bits)? as u32;
                if m {
                    survivors.push((j as u32, bin));
                } else if bin != 0 {
                    return Err(corrupt(at, "value bits set on masked-out element"));
                }
            }
            ModuleData::Quantized(quant(survivors))
        }
        Format::Dense => {
            if r.remaining() < 32 * h.n {
                return Err(CodecError::Truncated {
                    offset: r.position(),
                });
            }
            let mut values = Vec::with_capacity(h.n);
            for _ in 0..h.n {
                values.push(f32::from_bits(r.read(32)? as u32));
            }
            ModuleData::Raw(values)
        }
    };
    r.expect_padding()?;
    Ok((h, data))
}

/// Re-encodes decoded data with the layout described by `header`.
pub fn reencode(header: &ModuleHeader, data: &ModuleData) -> Result<EncodedModule, CodecError> {
    match (header.format, data) {
        (Format::Sass, ModuleData::Quantized(q)) => encode_sass(q, header.group),
        (Format::Indep, ModuleData::Quantized(q)) => encode_indep(q),
        (Format::Dense, ModuleData::Raw(v)) if header.bits == 0 => {
            encode_dense(&ModuleData::Raw(v.clone()))
        }
        (Format::Dense, ModuleData::Raw(v)) => Ok(encode_dense_values(*header, v)),
        _ => Err(CodecError::Container(
            "header and data kinds disagree".into(),
        )),
    }
}

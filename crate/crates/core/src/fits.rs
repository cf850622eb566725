//! Minimal FITS reader/writer for raw multi-extension 16-bit image files.
//!
//! Only 2-D `BITPIX = 16` image extensions are decoded. Every other HDU
//! (including the primary) is carried as a [`RawHdu`]: its cards and data
//! bytes pass through untouched, so extension indices stay stable.

use std::fmt;

pub const BLOCK_LEN: usize = 2880;
pub const CARD_LEN: usize = 80;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitsError {
    #[error("input length {0} is not a multiple of 2880 bytes")]
    Misaligned(usize),
    #[error("first card must be SIMPLE = T")]
    NotSimple,
    #[error("malformed card at byte {offset}: {reason}")]
    MalformedCard { offset: usize, reason: String },
    #[error("header starting at byte {0} has no END card")]
    MissingEnd(usize),
    #[error("data block of HDU {hdu} is truncated: need {need} bytes, have {have}")]
    Truncated { hdu: usize, need: usize, have: usize },
    #[error("missing or invalid mandatory keyword {keyword} in HDU {hdu}")]
    MissingKeyword { hdu: usize, keyword: &'static str },
    #[error("HDU index {index} out of range ({count} HDUs)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("HDU {0} holds no 2-D image data")]
    NotAnImage(usize),
    #[error("HDU {hdu} has unsupported BITPIX {bitpix}; only 16 is decoded")]
    UnsupportedBitpix { hdu: usize, bitpix: i64 },
    #[error("HDU {hdu}: physical value {value} does not fit a 16-bit stored integer")]
    Unrepresentable { hdu: usize, value: f64 },
    #[error("HDU {hdu}: {len} pixels do not match {width}x{height}")]
    InconsistentDims { hdu: usize, width: usize, height: usize, len: usize },
    #[error("card for {0} does not fit in 80 bytes")]
    CardTooLong(String),
    #[error("invalid keyword {0:?}")]
    InvalidKeyword(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CardValue {
    Str(String),
    Int(i64),
    Real(f64),
    Bool(bool),
    None,
}

impl CardValue {
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            CardValue::Int(v) => Some(v),
            CardValue::Real(v) if v.fract() == 0.0 => Some(v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            CardValue::Int(v) => Some(v as f64),
            CardValue::Real(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            CardValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

/// A single 80-byte header record.
#[derive(Debug, Clone, PartialEq)]
pub struct FitsCard {
    pub keyword: String,
    pub value: CardValue,
    pub comment: Option<String>,
}

fn is_commentary(keyword: &str) -> bool {
    matches!(keyword, "COMMENT" | "HISTORY" | "")
}

fn valid_keyword(keyword: &str) -> bool {
    keyword.len() <= 8
        && keyword
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

fn format_real(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v:?}")
    } else {
        format!("{v:E}")
    }
}

impl FitsCard {
    pub fn new(keyword: &str, value: CardValue) -> Self {
        Self { keyword: keyword.to_string(), value, comment: None }
    }

    pub fn with_comment(mut self, comment: &str) -> Self {
        self.comment = Some(comment.to_string());
        self
    }

    pub fn commentary(keyword: &str, text: &str) -> Self {
        Self { keyword: keyword.to_string(), value: CardValue::None, comment: Some(text.to_string()) }
    }

    /// Serializes to exactly 80 ASCII bytes.
    pub fn to_bytes(&self) -> Result<[u8; CARD_LEN], FitsError> {
        if !valid_keyword(&self.keyword) {
            return Err(FitsError::InvalidKeyword(self.keyword.clone()));
        }
        let mut s = format!("{:<8}", self.keyword);
        if is_commentary(&self.keyword) {
            s.push_str(self.comment.as_deref().unwrap_or(""));
        } else {
            s.push_str("= ");
            match &self.value {
                CardValue::Str(v) => {
                    let escaped = v.replace('\'', "''");
                    s.push_str(&format!("'{escaped:<8}'"));
                }
                CardValue::Int(v) => s.push_str(&format!("{v:>20}")),
                CardValue::Real(v) => s.push_str(&format!("{:>20}", format_real(*v))),
                CardValue::Bool(v) => s.push_str(&format!("{:>20}", if *v { "T" } else { "F" })),
                CardValue::None => s.push_str(&" ".repeat(20)),
            }
            if let Some(c) = &self.comment {
                s.push_str(" / ");
                s.push_str(c);
            }
        }
        if s.len() > CARD_LEN || !s.is_ascii() {
            return Err(FitsError::CardTooLong(self.keyword.clone()));
        }
        let mut out = [b' '; CARD_LEN];
        out[..s.len()].copy_from_slice(s.as_bytes());
        Ok(out)
    }

    pub fn parse(raw: &[u8], offset: usize) -> Result<Self, FitsError> {
        let bad = |reason: &str| FitsError::MalformedCard { offset, reason: reason.to_string() };
        if raw.len() != CARD_LEN {
            return Err(bad("card is not 80 bytes"));
        }
        if !raw.is_ascii() {
            return Err(bad("non-ASCII bytes"));
        }
        let text = std::str::from_utf8(raw).map_err(|_| bad("non-ASCII bytes"))?;
        let keyword = text[..8].trim_end().to_string();
        if !valid_keyword(&keyword) || text[..8].trim_end().contains(' ') {
            return Err(bad("invalid keyword characters"));
        }
        if is_commentary(&keyword) || &text[8..10] != "= " {
            let body = text[8..].trim_end();
            return Ok(Self {
                keyword,
                value: CardValue::None,
                comment: if body.is_empty() { None } else { Some(body.to_string()) },
            });
        }
        let field = &text[10..];
        let trimmed = field.trim_start();
        let (value, rest) = if let Some(after) = trimmed.strip_prefix('\'') {
            let bytes = after.as_bytes();
            let mut out = String::new();
            let mut i = 0;
            loop {
                if i >= bytes.len() {
                    return Err(bad("unterminated string"));
                }
                if bytes[i] == b'\'' {
                    if bytes.get(i + 1) == Some(&b'\'') {
                        out.push('\'');
                        i += 2;
                        continue;
                    }
                    break;
                }
                out.push(bytes[i] as char);
                i += 1;
            }
            (CardValue::Str(out.trim_end().to_string()), &after[i + 1..])
        } else {
            let end = trimmed.find('/').unwrap_or(trimmed.len());
            let token = trimmed[..end].trim();
            let value = match token {
                "" => CardValue::None,
                "T" => CardValue::Bool(true),
                "F" => CardValue::Bool(false),
                t => {
                    if let Ok(i) = t.parse::<i64>() {
                        CardValue::Int(i)
                    } else if let Ok(r) = t.replace('D', "E").parse::<f64>() {
                        CardValue::Real(r)
                    } else {
                        return Err(bad("unparseable value"));
                    }
                }
            };
            (value, &trimmed[end..])
        };
        let rest = rest.trim();
        let comment = match rest.strip_prefix('/') {
            Some(c) => Some(c.trim().to_string()).filter(|c| !c.is_empty()),
            None if rest.is_empty() => None,
            None => return Err(bad("trailing characters after value")),
        };
        Ok(Self { keyword, value, comment })
    }
}

impl fmt::Display for FitsCard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_bytes() {
            Ok(b) => f.write_str(std::str::from_utf8(&b).unwrap_or_default()),
            Err(e) => write!(f, "<{e}>"),
        }
    }
}

fn find<'a>(cards: &'a [FitsCard], keyword: &str) -> Option<&'a CardValue> {
    cards.iter().find(|c| c.keyword == keyword).map(|c| &c.value)
}

/// A decoded 2-D, 16-bit image extension.
///
/// `cards` holds only the non-structural keywords; the structural ones
/// (`XTENSION`, `BITPIX`, `NAXIS*`, `PCOUNT`, `GCOUNT`, `BZERO`, `BSCALE`)
/// are regenerated from the fields on write.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageHdu {
    pub cards: Vec<FitsCard>,
    pub width: usize,
    pub height: usize,
    pub bzero: f64,
    pub bscale: f64,
    /// Row-major physical values, `bzero + bscale * stored`.
    pub pixels: Vec<f32>,
}

const IMAGE_STRUCTURAL: &[&str] =
    &["XTENSION", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2", "PCOUNT", "GCOUNT", "BZERO", "BSCALE"];

impl ImageHdu {
    /// Unsigned 16-bit convention (`BZERO = 32768`, `BSCALE = 1`), as used by raw HST frames.
    pub fn new_unsigned(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        Self { cards: Vec::new(), width, height, bzero: 32768.0, bscale: 1.0, pixels }
    }

    pub fn bitpix(&self) -> i64 {
        16
    }

    pub fn keyword(&self, keyword: &str) -> Option<&CardValue> {
        find(&self.cards, keyword)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    fn header_cards(&self) -> Vec<FitsCard> {
        let mut cards = vec![
            FitsCard::new("XTENSION", CardValue::Str("IMAGE".into())),
            FitsCard::new("BITPIX", CardValue::Int(16)),
            FitsCard::new("NAXIS", CardValue::Int(2)),
            FitsCard::new("NAXIS1", CardValue::Int(self.width as i64)),
            FitsCard::new("NAXIS2", CardValue::Int(self.height as i64)),
            FitsCard::new("PCOUNT", CardValue::Int(0)),
            FitsCard::new("GCOUNT", CardValue::Int(1)),
            FitsCard::new("BZERO", CardValue::Real(self.bzero)),
            FitsCard::new("BSCALE", CardValue::Real(self.bscale)),
        ];
        cards.extend(self.cards.iter().cloned());
        cards
    }

    fn encode(&self, hdu: usize) -> Result<Vec<u8>, FitsError> {
        if self.pixels.len() != self.width * self.height {
            return Err(FitsError::InconsistentDims {
                hdu,
                width: self.width,
                height: self.height,
                len: self.pixels.len(),
            });
        }
        let mut out = Vec::with_capacity(self.pixels.len() * 2);
        for &p in &self.pixels {
            let stored = ((p as f64 - self.bzero) / self.bscale).round();
            if !(-32768.0..=32767.0).contains(&stored) {
                return Err(FitsError::Unrepresentable { hdu, value: p as f64 });
            }
            out.extend_from_slice(&(stored as i16).to_be_bytes());
        }
        Ok(out)
    }
}

/// Any HDU passed through without interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHdu {
    /// Complete header, excluding `END`.
    pub cards: Vec<FitsCard>,
    /// Data bytes without block padding.
    pub data: Vec<u8>,
}

impl RawHdu {
    /// A data-less primary header (`NAXIS = 0`, `EXTEND = T`).
    pub fn empty_primary() -> Self {
        Self {
            cards: vec![
                FitsCard::new("SIMPLE", CardValue::Bool(true)),
                FitsCard::new("BITPIX", CardValue::Int(16)),
                FitsCard::new("NAXIS", CardValue::Int(0)),
                FitsCard::new("EXTEND", CardValue::Bool(true)),
            ],
            data: Vec::new(),
        }
    }

    pub fn keyword(&self, keyword: &str) -> Option<&CardValue> {
        find(&self.cards, keyword)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Hdu {
    Image(ImageHdu),
    Raw(RawHdu),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitsFile {
    pub primary: RawHdu,
    /// Extension `i` here is HDU index `i + 1`.
    pub extensions: Vec<Hdu>,
}

impl Default for FitsFile {
    fn default() -> Self {
        Self { primary: RawHdu::empty_primary(), extensions: Vec::new() }
    }
}

impl FitsFile {
    pub fn hdu_count(&self) -> usize {
        self.extensions.len() + 1
    }

    pub fn push_image(&mut self, image: ImageHdu) -> usize {
        self.extensions.push(Hdu::Image(image));
        self.extensions.len()
    }
}

fn pad_len(len: usize) -> usize {
    len.div_ceil(BLOCK_LEN) * BLOCK_LEN
}

fn read_header(bytes: &[u8], start: usize) -> Result<(Vec<FitsCard>, usize), FitsError> {
    let mut cards = Vec::new();
    let mut pos = start;
    loop {
        if pos + CARD_LEN > bytes.len() {
            return Err(FitsError::MissingEnd(start));
        }
        let raw = &bytes[pos..pos + CARD_LEN];
        pos += CARD_LEN;
        if &raw[..8] == b"END     " {
            if raw[8..].iter().any(|&b| b != b' ') {
                return Err(FitsError::MalformedCard {
                    offset: pos - CARD_LEN,
                    reason: "END card is not blank-filled".into(),
                });
            }
            break;
        }
        cards.push(FitsCard::parse(raw, pos - CARD_LEN)?);
    }
    Ok((cards, start + pad_len(pos - start)))
}

fn data_len(cards: &[FitsCard], hdu: usize) -> Result<usize, FitsError> {
    let int = |k: &'static str| {
        find(cards, k).and_then(CardValue::as_i64).ok_or(FitsError::MissingKeyword { hdu, keyword: k })
    };
    let bitpix = int("BITPIX")?;
    let naxis = int("NAXIS")?;
    if !matches!(bitpix, 8 | 16 | 32 | 64 | -32 | -64) {
        return Err(FitsError::MissingKeyword { hdu, keyword: "BITPIX" });
    }
    if !(0..=999).contains(&naxis) {
        return Err(FitsError::MissingKeyword { hdu, keyword: "NAXIS" });
    }
    if naxis == 0 {
        return Ok(0);
    }
    let mut n: usize = 1;
    for i in 1..=naxis {
        let key = format!("NAXIS{i}");
        let v = cards
            .iter()
            .find(|c| c.keyword == key)
            .and_then(|c| c.value.as_i64())
            .filter(|&v| v >= 0)
            .ok_or(FitsError::MissingKeyword { hdu, keyword: "NAXISn" })?;
        n = n.saturating_mul(v as usize);
    }
    let pcount = find(cards, "PCOUNT").and_then(CardValue::as_i64).unwrap_or(0).max(0) as usize;
    let gcount = find(cards, "GCOUNT").and_then(CardValue::as_i64).unwrap_or(1).max(0) as usize;
    Ok((bitpix.unsigned_abs() as usize / 8).saturating_mul(gcount).saturating_mul(pcount.saturating_add(n)))
}

fn decode_image(cards: Vec<FitsCard>, data: &[u8]) -> Option<ImageHdu> {
    let is_image = find(&cards, "XTENSION").and_then(CardValue::as_str).map(str::trim) == Some("IMAGE");
    let int = |k| find(&cards, k).and_then(CardValue::as_i64);
    if !is_image
        || int("NAXIS") != Some(2)
        || int("BITPIX") != Some(16)
        || int("PCOUNT").unwrap_or(0) != 0
        || int("GCOUNT").unwrap_or(1) != 1
    {
        return None;
    }
    let width = int("NAXIS1")? as usize;
    let height = int("NAXIS2")? as usize;
    let bzero = find(&cards, "BZERO").and_then(CardValue::as_f64).unwrap_or(0.0);
    let bscale = find(&cards, "BSCALE").and_then(CardValue::as_f64).unwrap_or(1.0);
    let pixels = data
        .chunks_exact(2)
        .map(|b| (bzero + bscale * i16::from_be_bytes([b[0], b[1]]) as f64) as f32)
        .collect();
    let cards = cards.into_iter().filter(|c| !IMAGE_STRUCTURAL.contains(&c.keyword.as_str())).collect();
    Some(ImageHdu { cards, width, height, bzero, bscale, pixels })
}

pub fn parse_fits(bytes: &[u8]) -> Result<FitsFile, FitsError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(BLOCK_LEN) {
        return Err(FitsError::Misaligned(bytes.len()));
    }
    let mut pos = 0;
    let mut primary = None;
    let mut extensions = Vec::new();
    let mut hdu = 0;
    while pos < bytes.len() {
        let (cards, data_start) = read_header(bytes, pos)?;
        if hdu == 0 && (cards.first().map(|c| (c.keyword.as_str(), &c.value)) != Some(("SIMPLE", &CardValue::Bool(true)))) {
            return Err(FitsError::NotSimple);
        }
        let len = data_len(&cards, hdu)?;
        if data_start + len > bytes.len() {
            return Err(FitsError::Truncated { hdu, need: len, have: bytes.len() - data_start });
        }
        let data = &bytes[data_start..data_start + len];
        if hdu == 0 {
            primary = Some(RawHdu { cards, data: data.to_vec() });
        } else {
            match decode_image(cards.clone(), data) {
                Some(img) => extensions.push(Hdu::Image(img)),
                None => extensions.push(Hdu::Raw(RawHdu { cards, data: data.to_vec() })),
            }
        }
        pos = data_start + pad_len(len);
        hdu += 1;
    }
    Ok(FitsFile { primary: primary.ok_or(FitsError::NotSimple)?, extensions })
}

/// Returns a copy of the decoded image at `hdu_index` (0 is the primary HDU).
pub fn extract_image(file: &FitsFile, hdu_index: usize) -> Result<ImageHdu, FitsError> {
    if hdu_index >= file.hdu_count() {
        return Err(FitsError::IndexOutOfRange { index: hdu_index, count: file.hdu_count() });
    }
    if hdu_index == 0 {
        return Err(FitsError::NotAnImage(0));
    }
    match &file.extensions[hdu_index - 1] {
        Hdu::Image(img) => Ok(img.clone()),
        Hdu::Raw(raw) => {
            let is_image = raw.keyword("XTENSION").and_then(CardValue::as_str).map(str::trim) == Some("IMAGE");
            let naxis = raw.keyword("NAXIS").and_then(CardValue::as_i64);
            let bitpix = raw.keyword("BITPIX").and_then(CardValue::as_i64);
            match (is_image, naxis, bitpix) {
                (true, Some(2), Some(b)) if b != 16 => Err(FitsError::UnsupportedBitpix { hdu: hdu_index, bitpix: b }),
                _ => Err(FitsError::NotAnImage(hdu_index)),
            }
        }
    }
}

fn write_header(out: &mut Vec<u8>, cards: &[FitsCard]) -> Result<(), FitsError> {
    let start = out.len();
    for c in cards {
        out.extend_from_slice(&c.to_bytes()?);
    }
    let mut end = [b' '; CARD_LEN];
    end[..3].copy_from_slice(b"END");
    out.extend_from_slice(&end);
    out.resize(start + pad_len(out.len() - start), b' ');
    Ok(())
}

fn write_data(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(data);
    let padded = out.len().div_ceil(BLOCK_LEN) * BLOCK_LEN;
    out.resize(padded, 0);
}

pub fn write_fits(file: &FitsFile) -> Result<Vec<u8>, FitsError> {
    let mut out = Vec::new();
    write_header(&mut out, &file.primary.cards)?;
    write_data(&mut out, &file.primary.data);
    for (i, ext) in file.extensions.iter().enumerate() {
        match ext {
            Hdu::Image(img) => {
                let data = img.encode(i + 1)?;
                write_header(&mut out, &img.header_cards())?;
                write_data(&mut out, &data);
            }
            Hdu::Raw(raw) => {
                write_header(&mut out, &raw.cards)?;
                write_data(&mut out, &raw.data);
            }
        }
    }
    Ok(out)
}

//! Binary silhouette frames, portable-bitmap I/O and the clothing
//! augmentation.
//!
//! Augmentation divides each frame into head / body / legs row bands and
//! applies one morphological pass (3x3 full block) whose result is written
//! back only inside the body band, simulating a garment change while
//! leaving head and legs untouched. The pass is drawn once per sequence so
//! the simulated garment stays consistent across frames.

use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

/// Silhouette frame size used for training data (height, width).
pub const STANDARD_SIZE: (usize, usize) = (64, 44);

#[derive(Debug, Error)]
pub enum SilhouetteError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed bitmap header: {0}")]
    MalformedHeader(String),
    #[error("bitmap dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-binary bitmap payload: {0}")]
    NonBinaryPayload(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("empty sequence {0}")]
    EmptySequence(String),
    #[error("malformed sequence manifest: {0}")]
    MalformedManifest(String),
}

/// A single binary silhouette frame, row-major, 0 = background, 1 = body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteFrame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl SilhouetteFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self, SilhouetteError> {
        if height == 0 || width == 0 {
            return Err(SilhouetteError::InvalidFrame(format!(
                "zero dimension {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(SilhouetteError::InvalidFrame(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(SilhouetteError::InvalidFrame(format!(
                "pixel value {bad} is not 0 or 1"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        debug_assert!(value <= 1);
        self.pixels[row * self.width + col] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Foreground count restricted to a row band.
    pub fn foreground_count_rows(&self, rows: Range<usize>) -> usize {
        rows.map(|r| {
            self.pixels[r * self.width..(r + 1) * self.width]
                .iter()
                .filter(|&&p| p == 1)
                .count()
        })
        .sum()
    }
}

/// Ordered frames of one walking sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteSequence {
    pub sample_id: String,
    frames: Vec<SilhouetteFrame>,
}

impl SilhouetteSequence {
    pub fn new(sample_id: &str, frames: Vec<SilhouetteFrame>) -> Result<Self, SilhouetteError> {
        if frames.is_empty() {
            return Err(SilhouetteError::EmptySequence(sample_id.to_string()));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        for (i, f) in frames.iter().enumerate() {
            if f.height != h || f.width != w {
                return Err(SilhouetteError::InvalidFrame(format!(
                    "frame {i} of {sample_id} is {}x{}, expected {h}x{w}",
                    f.height, f.width
                )));
            }
        }
        Ok(Self {
            sample_id: sample_id.to_string(),
            frames,
        })
    }

    pub fn frames(&self) -> &[SilhouetteFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames[0].height, self.frames[0].width)
    }
}

/// Disjoint head / body / legs row bands covering `[0, height)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    pub head_rows: Range<usize>,
    pub body_rows: Range<usize>,
    pub legs_rows: Range<usize>,
}

/// Split a frame into head `[0, H/4)`, body `[H/4, 3H/4)` and legs
/// `[3H/4, H)` row bands.
///
/// Panics if the frame is shorter than 4 rows.
pub fn partition_regions(frame: &SilhouetteFrame) -> RegionPartition {
    partition_rows(frame.height)
}

/// Row-band partition for a given frame height.
pub fn partition_rows(height: usize) -> RegionPartition {
    assert!(height >= 4, "frame height {height} < 4");
    let head_end = height / 4;
    let body_end = 3 * height / 4;
    RegionPartition {
        head_rows: 0..head_end,
        body_rows: head_end..body_end,
        legs_rows: body_end..height,
    }
}

/// Morphology mode applied to the body band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// Thicken the torso, like putting a coat on.
    Dilate,
    /// Thin the torso, like taking a coat off.
    Erode,
}

impl AugmentMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dilate" => Some(Self::Dilate),
            "erode" => Some(Self::Erode),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dilate => "dilate",
            Self::Erode => "erode",
        }
    }
}

/// One 3x3 full-block morphology pass written back only inside the body
/// band. The structuring element may read neighboring head/legs rows, but
/// pixels outside the body band are returned bit-identical.
pub fn augment_body(frame: &SilhouetteFrame, mode: AugmentMode) -> SilhouetteFrame {
    let regions = partition_regions(frame);
    let (h, w) = (frame.height, frame.width);
    let mut out = frame.clone();
    for row in regions.body_rows.clone() {
        for col in 0..w {
            let mut all_on = true;
            let mut any_on = false;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, c) = (row as i64 + dr, col as i64 + dc);
                    let on = r >= 0
                        && c >= 0
                        && (r as usize) < h
                        && (c as usize) < w
                        && frame.get(r as usize, c as usize) == 1;
                    all_on &= on;
                    any_on |= on;
                }
            }
            let v = match mode {
                AugmentMode::Dilate => any_on as u8,
                AugmentMode::Erode => all_on as u8,
            };
            out.set(row, col, v);
        }
    }
    out
}

/// Augment a whole sequence with one garment: the mode is drawn once and
/// applied to every frame.
pub fn augment_sequence<R: Rng>(seq: &SilhouetteSequence, rng: &mut R) -> SilhouetteSequence {
    let mode = if rng.gen::<bool>() {
        AugmentMode::Dilate
    } else {
        AugmentMode::Erode
    };
    augment_sequence_with(seq, mode)
}

/// Augment every frame of a sequence with a fixed mode.
pub fn augment_sequence_with(seq: &SilhouetteSequence, mode: AugmentMode) -> SilhouetteSequence {
    let frames = seq.frames.iter().map(|f| augment_body(f, mode)).collect();
    SilhouetteSequence {
        sample_id: seq.sample_id.clone(),
        frames,
    }
}

// ---------------------------------------------------------------------------
// Portable bitmap I/O. P1 (ascii) and P4 (packed) accepted on read, canonical
// P4 written: "P4\n{width} {height}\n" + MSB-first rows padded to whole bytes.
// ---------------------------------------------------------------------------

/// Read a P1 or P4 portable bitmap into a frame.
pub fn read_pbm(path: &Path) -> Result<SilhouetteFrame, SilhouetteError> {
    let bytes = fs::read(path)?;
    parse_pbm(&bytes)
}

/// Parse portable-bitmap bytes (P1 ascii or P4 packed).
pub fn parse_pbm(bytes: &[u8]) -> Result<SilhouetteFrame, SilhouetteError> {
    if bytes.len() < 2 {
        return Err(SilhouetteError::MalformedHeader("file too short".into()));
    }
    let magic = &bytes[..2];
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(SilhouetteError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    match magic {
        b"P1" => parse_p1_payload(bytes, pos, height, width),
        b"P4" => {
            // Exactly one whitespace byte separates the header from packed data.
            if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
                return Err(SilhouetteError::MalformedHeader(
                    "missing separator before P4 payload".into(),
                ));
            }
            parse_p4_payload(&bytes[pos + 1..], height, width)
        }
        other => Err(SilhouetteError::MalformedHeader(format!(
            "unknown magic {:?}",
            String::from_utf8_lossy(other)
        ))),
    }
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize, SilhouetteError> {
    // Skip whitespace and '#' comment lines between header tokens.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(SilhouetteError::MalformedHeader(
            "expected a dimension integer".into(),
        ));
    }
    let text = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| SilhouetteError::MalformedHeader("non-utf8 header".into()))?;
    text.parse::<usize>()
        .map_err(|_| SilhouetteError::MalformedHeader(format!("bad integer {text:?}")))
}

fn parse_p1_payload(
    bytes: &[u8],
    mut pos: usize,
    height: usize,
    width: usize,
) -> Result<SilhouetteFrame, SilhouetteError> {
    let mut pixels = Vec::with_capacity(height * width);
    while pos < bytes.len() && pixels.len() < height * width {
        let b = bytes[pos];
        pos += 1;
        match b {
            b'0' => pixels.push(0),
            b'1' => pixels.push(1),
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ if b.is_ascii_whitespace() => {}
            other => {
                return Err(SilhouetteError::NonBinaryPayload(format!(
                    "unexpected byte {:?} in P1 data",
                    other as char
                )))
            }
        }
    }
    if pixels.len() != height * width {
        return Err(SilhouetteError::DimensionMismatch(format!(
            "P1 payload has {} pixels, header declares {}",
            pixels.len(),
            height * width
        )));
    }
    // Trailing content (other than whitespace) means the size is off.
    while pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else if b == b'0' || b == b'1' {
            return Err(SilhouetteError::DimensionMismatch(
                "P1 payload has more pixels than the header declares".into(),
            ));
        } else {
            return Err(SilhouetteError::NonBinaryPayload(format!(
                "unexpected byte {:?} after P1 data",
                b as char
            )));
        }
    }
    SilhouetteFrame::new(height, width, pixels)
}

fn parse_p4_payload(
    data: &[u8],
    height: usize,
    width: usize,
) -> Result<SilhouetteFrame, SilhouetteError> {
    let row_bytes = width.div_ceil(8);
    let expected = row_bytes * height;
    if data.len() != expected {
        return Err(SilhouetteError::DimensionMismatch(format!(
            "P4 payload is {} bytes, header declares {expected}",
            data.len()
        )));
    }
    let mut pixels = Vec::with_capacity(height * width);
    for row in 0..height {
        let row_data = &data[row * row_bytes..(row + 1) * row_bytes];
        for col in 0..width {
            let byte = row_data[col / 8];
            let bit = (byte >> (7 - col % 8)) & 1;
            pixels.push(bit);
        }
        // Padding bits past the row width must be zero in canonical files,
        // but readers conventionally ignore them, and so do we.
    }
    SilhouetteFrame::new(height, width, pixels)
}

/// Serialize a frame as a canonical P4 bitmap.
pub fn encode_pbm(frame: &SilhouetteFrame) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = write!(out, "P4\n{} {}\n", frame.width, frame.height);
    let row_bytes = frame.width.div_ceil(8);
    for row in 0..frame.height {
        let mut packed = vec![0u8; row_bytes];
        for col in 0..frame.width {
            if frame.get(row, col) == 1 {
                packed[col / 8] |= 1 << (7 - col % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

/// Write a frame as a canonical P4 bitmap.
pub fn write_pbm(frame: &SilhouetteFrame, path: &Path) -> Result<(), SilhouetteError> {
    fs::write(path, encode_pbm(frame))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sequence directories: zero-padded numbered frames plus a one-line manifest
// "sample_id frame_count".
// ---------------------------------------------------------------------------

const SEQ_MANIFEST: &str = "manifest.txt";

/// Write a sequence as a directory of `0000.pbm ...` frames plus manifest.
pub fn write_sequence(seq: &SilhouetteSequence, dir: &Path) -> Result<(), SilhouetteError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(SEQ_MANIFEST),
        format!("{} {}\n", seq.sample_id, seq.len()),
    )?;
    for (i, frame) in seq.frames.iter().enumerate() {
        write_pbm(frame, &dir.join(format!("{i:04}.pbm")))?;
    }
    Ok(())
}

/// Read a sequence directory written by [`write_sequence`].
pub fn read_sequence(dir: &Path) -> Result<SilhouetteSequence, SilhouetteError> {
    let manifest = fs::read_to_string(dir.join(SEQ_MANIFEST))?;
    let line = manifest.trim();
    let (sample_id, count_text) = line.rsplit_once(' ').ok_or_else(|| {
        SilhouetteError::MalformedManifest(format!("expected 'sample_id count', got {line:?}"))
    })?;
    let count: usize = count_text.parse().map_err(|_| {
        SilhouetteError::MalformedManifest(format!("bad frame count {count_text:?}"))
    })?;
    if count == 0 {
        return Err(SilhouetteError::EmptySequence(sample_id.to_string()));
    }
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        frames.push(read_pbm(&dir.join(format!("{i:04}.pbm")))?);
    }
    SilhouetteSequence::new(sample_id, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_from_rows(rows: &[&str]) -> SilhouetteFrame {
        let height = rows.len();
        let width = rows[0].len();
        let pixels = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| b - b'0'))
            .collect();
        SilhouetteFrame::new(height, width, pixels).unwrap()
    }

    #[test]
    fn frame_rejects_non_binary_pixels() {
        let err = SilhouetteFrame::new(1, 2, vec![0, 2]).unwrap_err();
        assert!(matches!(err, SilhouetteError::InvalidFrame(_)));
    }

    #[test]
    fn partition_standard_height() {
        let p = partition_rows(64);
        assert_eq!(p.head_rows, 0..16);
        assert_eq!(p.body_rows, 16..48);
        assert_eq!(p.legs_rows, 48..64);
    }

    #[test]
    fn partition_smallest_valid_height() {
        let p = partition_rows(4);
        assert_eq!(p.head_rows, 0..1);
        assert_eq!(p.body_rows, 1..3);
        assert_eq!(p.legs_rows, 3..4);
    }

    #[test]
    fn partition_covers_all_rows_without_overlap() {
        for h in 4..200 {
            let p = partition_rows(h);
            assert_eq!(p.head_rows.end, p.body_rows.start);
            assert_eq!(p.body_rows.end, p.legs_rows.start);
            assert_eq!(p.head_rows.start, 0);
            assert_eq!(p.legs_rows.end, h);
            assert!(!p.body_rows.is_empty());
        }
    }

    #[test]
    #[should_panic(expected = "< 4")]
    fn partition_rejects_tiny_frames() {
        partition_rows(3);
    }

    #[test]
    fn read_all_zero_p1() {
        let mut text = String::from("P1\n44 64\n");
        for _ in 0..64 {
            text.push_str(&"0".repeat(44));
            text.push('\n');
        }
        let frame = parse_pbm(text.as_bytes()).unwrap();
        assert_eq!(frame.height(), 64);
        assert_eq!(frame.width(), 44);
        assert_eq!(frame.foreground_count(), 0);
    }

    #[test]
    fn checkerboard_p1_has_eight_foreground_pixels() {
        // 4x4 checkerboard starting with 1: count verified by hand, 8 ones.
        let text = "P1\n4 4\n1 0 1 0\n0 1 0 1\n1 0 1 0\n0 1 0 1\n";
        let frame = parse_pbm(text.as_bytes()).unwrap();
        assert_eq!(frame.foreground_count(), 8);
        assert_eq!(frame.get(0, 0), 1);
        assert_eq!(frame.get(0, 1), 0);
    }

    #[test]
    fn p4_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(64, 44), (5, 3), (9, 9), (1, 17)] {
            let pixels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..=1)).collect();
            let frame = SilhouetteFrame::new(h, w, pixels).unwrap();
            let bytes = encode_pbm(&frame);
            let back = parse_pbm(&bytes).unwrap();
            assert_eq!(back, frame);
            assert_eq!(encode_pbm(&back), bytes);
        }
    }

    #[test]
    fn p1_and_p4_decode_identically() {
        let p1 = "P1\n4 2\n1 1 0 0\n0 1 1 0\n";
        let from_p1 = parse_pbm(p1.as_bytes()).unwrap();
        let from_p4 = parse_pbm(&encode_pbm(&from_p1)).unwrap();
        assert_eq!(from_p1, from_p4);
    }

    #[test]
    fn malformed_inputs_yield_distinct_errors() {
        assert!(matches!(
            parse_pbm(b"P7\n4 4\n"),
            Err(SilhouetteError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_pbm(b"P1\n4 abc\n"),
            Err(SilhouetteError::MalformedHeader(_))
        ));
        // P1 with a stray digit in the payload.
        assert!(matches!(
            parse_pbm(b"P1\n2 2\n1 0 2 1\n"),
            Err(SilhouetteError::NonBinaryPayload(_))
        ));
        // P1 with fewer pixels than declared.
        assert!(matches!(
            parse_pbm(b"P1\n2 2\n1 0 1\n"),
            Err(SilhouetteError::DimensionMismatch(_))
        ));
        // P1 with more pixels than declared.
        assert!(matches!(
            parse_pbm(b"P1\n2 2\n1 0 1 0 1\n"),
            Err(SilhouetteError::DimensionMismatch(_))
        ));
        // P4 payload truncated by one byte.
        let frame = SilhouetteFrame::new(2, 9, vec![1; 18]).unwrap();
        let mut bytes = encode_pbm(&frame);
        bytes.pop();
        assert!(matches!(
            parse_pbm(&bytes),
            Err(SilhouetteError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dilate_empty_frame_is_empty() {
        let frame = SilhouetteFrame::zeros(64, 44);
        let out = augment_body(&frame, AugmentMode::Dilate);
        assert_eq!(out, frame);
    }

    #[test]
    fn dilate_full_frame_is_unchanged() {
        let frame = SilhouetteFrame::new(8, 8, vec![1; 64]).unwrap();
        let out = augment_body(&frame, AugmentMode::Dilate);
        assert_eq!(out, frame);
    }

    #[test]
    fn erode_empty_frame_is_empty() {
        let frame = SilhouetteFrame::zeros(8, 8);
        let out = augment_body(&frame, AugmentMode::Erode);
        assert_eq!(out, frame);
    }

    /// Brute-force single-pixel check on a 9x9 toy frame: body band is rows
    /// [2, 6), so a seed at (4, 4) dilates to the full 3x3 block = 9 pixels.
    #[test]
    fn dilate_single_body_pixel_grows_to_block() {
        let mut frame = SilhouetteFrame::zeros(9, 9);
        frame.set(4, 4, 1);
        let out = augment_body(&frame, AugmentMode::Dilate);
        assert_eq!(out.foreground_count(), 9);
        for r in 3..=5 {
            for c in 3..=5 {
                assert_eq!(out.get(r, c), 1);
            }
        }
    }

    /// Oracle: full-frame 3x3 morphology recomputed point-wise, then spliced
    /// into the body band. Must agree with augment_body everywhere.
    fn oracle_augment(frame: &SilhouetteFrame, mode: AugmentMode) -> SilhouetteFrame {
        let p = partition_regions(frame);
        let mut out = frame.clone();
        for r in 0..frame.height() {
            for c in 0..frame.width() {
                if !p.body_rows.contains(&r) {
                    continue;
                }
                let mut hits = 0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr >= 0
                            && cc >= 0
                            && (rr as usize) < frame.height()
                            && (cc as usize) < frame.width()
                            && frame.get(rr as usize, cc as usize) == 1
                        {
                            hits += 1;
                        }
                    }
                }
                let v = match mode {
                    AugmentMode::Dilate => (hits > 0) as u8,
                    AugmentMode::Erode => (hits == 9) as u8,
                };
                out.set(r, c, v);
            }
        }
        out
    }

    #[test]
    fn augment_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let (h, w) = (rng.gen_range(4..20), rng.gen_range(1..20));
            let pixels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..=1)).collect();
            let frame = SilhouetteFrame::new(h, w, pixels).unwrap();
            for mode in [AugmentMode::Dilate, AugmentMode::Erode] {
                assert_eq!(augment_body(&frame, mode), oracle_augment(&frame, mode));
            }
        }
    }

    #[test]
    fn augment_touches_only_body_rows_and_is_monotone() {
        let frame = frame_from_rows(&[
            "00000000", "01100000", "00110010", "01010100", "00011000", "01101100", "00100100",
            "01000010",
        ]);
        let p = partition_regions(&frame);
        for mode in [AugmentMode::Dilate, AugmentMode::Erode] {
            let out = augment_body(&frame, mode);
            for r in p.head_rows.clone().chain(p.legs_rows.clone()) {
                for c in 0..frame.width() {
                    assert_eq!(out.get(r, c), frame.get(r, c));
                }
            }
            let before = frame.foreground_count_rows(p.body_rows.clone());
            let after = out.foreground_count_rows(p.body_rows.clone());
            match mode {
                AugmentMode::Dilate => assert!(after >= before),
                AugmentMode::Erode => assert!(after <= before),
            }
        }
    }

    #[test]
    fn sequence_augmentation_is_seed_deterministic() {
        let frames: Vec<_> = (0..4)
            .map(|i| {
                let mut f = SilhouetteFrame::zeros(8, 8);
                f.set(3 + i % 2, 4, 1);
                f
            })
            .collect();
        let seq = SilhouetteSequence::new("s0", frames).unwrap();
        let a = augment_sequence(&seq, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment_sequence(&seq, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn sequence_of_empty_frames_is_unchanged() {
        let frames = vec![SilhouetteFrame::zeros(8, 8); 3];
        let seq = SilhouetteSequence::new("s0", frames).unwrap();
        let out = augment_sequence(&seq, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out, seq);
    }

    #[test]
    fn forced_dilation_never_loses_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..5)
            .map(|_| {
                let pixels: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=1)).collect();
                SilhouetteFrame::new(8, 8, pixels).unwrap()
            })
            .collect();
        let seq = SilhouetteSequence::new("s1", frames).unwrap();
        let out = augment_sequence_with(&seq, AugmentMode::Dilate);
        for (fin, fout) in seq.frames().iter().zip(out.frames()) {
            let per_frame = augment_body(fin, AugmentMode::Dilate);
            assert_eq!(&per_frame, fout);
            assert!(fout.foreground_count() >= fin.foreground_count());
        }
    }

    #[test]
    fn sequence_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3)
            .map(|i| {
                let mut f = SilhouetteFrame::zeros(6, 5);
                f.set(i, i, 1);
                f
            })
            .collect();
        let seq = SilhouetteSequence::new("id-007", frames).unwrap();
        let path = dir.path().join("seq");
        write_sequence(&seq, &path).unwrap();
        let back = read_sequence(&path).unwrap();
        assert_eq!(back, seq);
    }
}

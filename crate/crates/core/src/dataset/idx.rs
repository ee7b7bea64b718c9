//! IDX container codec (the MNIST file format).
//!
//! ```text
//! images: u32 BE magic 0x00000803, u32 BE count, u32 BE rows, u32 BE cols,
//!         count*rows*cols unsigned bytes, row-major
//! labels: u32 BE magic 0x00000801, u32 BE count, count unsigned bytes
//! ```
//!
//! Inputs starting with the gzip magic `1f 8b` are inflated first.

use std::io::Read;

use flate2::read::GzDecoder;

use super::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Unnormalized images exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImageSet {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub count: usize,
    pub labels: Vec<u8>,
}

/// Magic number and dimension fields of an IDX file, without the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

impl IdxHeader {
    /// Reads the header of an image or label file. The payload is not checked.
    pub fn parse(bytes: &[u8]) -> Result<Self, DataError> {
        let magic = read_u32(bytes, 0)?;
        let ndims = match magic {
            IMAGE_MAGIC => 3,
            LABEL_MAGIC => 1,
            found => return Err(DataError::WrongMagic { found }),
        };
        let dims = (0..ndims)
            .map(|d| read_u32(bytes, 4 + 4 * d).map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        Ok(Self { magic, dims })
    }

    pub fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::TruncatedPayload {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Inflates gzip input; anything else is returned unchanged.
pub fn maybe_decompress(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, DataError> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| DataError::Gzip(e.to_string()))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn expect_magic(bytes: &[u8], want: u32) -> Result<IdxHeader, DataError> {
    let found = read_u32(bytes, 0)?;
    if found != want {
        return Err(DataError::WrongMagic { found });
    }
    let header = IdxHeader::parse(bytes)?;
    let expected = header.header_len() + header.payload_len();
    if bytes.len() != expected {
        return Err(DataError::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    Ok(header)
}

/// Parses an image file, requiring 28x28 images.
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImageSet, DataError> {
    parse_idx_images_with(bytes, true)
}

/// Parses an image file; `strict` enforces the 28x28 geometry.
pub fn parse_idx_images_with(bytes: &[u8], strict: bool) -> Result<RawImageSet, DataError> {
    let bytes = maybe_decompress(bytes)?;
    let header = expect_magic(&bytes, IMAGE_MAGIC)?;
    let (count, rows, cols) = (header.dims[0], header.dims[1], header.dims[2]);
    if strict && (rows != IMAGE_SIDE || cols != IMAGE_SIDE) {
        return Err(DataError::DimensionMismatch { rows, cols });
    }
    Ok(RawImageSet {
        count,
        rows,
        cols,
        pixels: bytes[header.header_len()..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelSet, DataError> {
    let bytes = maybe_decompress(bytes)?;
    let header = expect_magic(&bytes, LABEL_MAGIC)?;
    let labels = bytes[header.header_len()..].to_vec();
    if let Some((index, &value)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= NUM_CLASSES)
    {
        return Err(DataError::LabelOutOfRange { index, value });
    }
    Ok(LabelSet {
        count: header.dims[0],
        labels,
    })
}

pub fn write_idx_images(set: &RawImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for v in [IMAGE_MAGIC, set.count as u32, set.rows as u32, set.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    out
}

pub fn write_idx_labels(set: &LabelSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.count as u32).to_be_bytes());
    out.extend_from_slice(&set.labels);
    out
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;
    use proptest::prelude::*;

    use super::*;

    /// First 16 bytes of the official `train-images-idx3-ubyte`, from `xxd -l 16`.
    const OFFICIAL_TRAIN_IMAGES_HEADER: [u8; 16] = [
        0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0xea, 0x60, 0x00, 0x00, 0x00, 0x1c, 0x00, 0x00, 0x00,
        0x1c,
    ];
    /// First 8 bytes of the official `train-labels-idx1-ubyte`.
    const OFFICIAL_TRAIN_LABELS_HEADER: [u8; 8] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0xea, 0x60];

    #[test]
    fn official_headers() {
        let h = IdxHeader::parse(&OFFICIAL_TRAIN_IMAGES_HEADER).unwrap();
        assert_eq!(h.magic, 0x0000_0803);
        assert_eq!(h.dims, vec![60000, 28, 28]);
        let h = IdxHeader::parse(&OFFICIAL_TRAIN_LABELS_HEADER).unwrap();
        assert_eq!(h.magic, 0x0000_0801);
        assert_eq!(h.dims, vec![60000]);
        // header alone is missing 47_040_000 payload bytes
        assert_eq!(
            parse_idx_images(&OFFICIAL_TRAIN_IMAGES_HEADER),
            Err(DataError::TruncatedPayload {
                expected: 16 + 60000 * 784,
                found: 16
            })
        );
    }

    #[test]
    fn minimal_zero_image() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend(std::iter::repeat_n(0, 784));
        let set = parse_idx_images(&bytes).unwrap();
        assert_eq!((set.count, set.rows, set.cols), (1, 28, 28));
        assert!(set.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn label_magic_on_image_parser() {
        let bytes = [0, 0, 8, 1];
        assert_eq!(
            parse_idx_images(&bytes),
            Err(DataError::WrongMagic { found: 0x801 })
        );
        let labels = [0, 0, 8, 3, 0, 0, 0, 0];
        assert_eq!(
            parse_idx_labels(&labels),
            Err(DataError::WrongMagic { found: 0x803 })
        );
    }

    #[test]
    fn identity_labels() {
        let mut bytes = vec![0, 0, 8, 1, 0, 0, 0, 10];
        bytes.extend(0..10u8);
        let set = parse_idx_labels(&bytes).unwrap();
        assert_eq!(set.count, 10);
        assert_eq!(set.labels, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn label_out_of_range() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 3, 0x0a];
        assert_eq!(
            parse_idx_labels(&bytes),
            Err(DataError::LabelOutOfRange { index: 1, value: 10 })
        );
    }

    #[test]
    fn truncated_and_overlong() {
        let mut bytes = vec![0, 0, 8, 1, 0, 0, 0, 3, 1, 2];
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(DataError::TruncatedPayload { expected: 11, found: 10 })
        ));
        bytes.extend([3, 4]);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(DataError::TruncatedPayload { expected: 11, found: 12 })
        ));
    }

    #[test]
    fn strict_dimensions() {
        let set = RawImageSet {
            count: 2,
            rows: 3,
            cols: 4,
            pixels: (0..24).collect(),
        };
        let bytes = write_idx_images(&set);
        assert_eq!(
            parse_idx_images(&bytes),
            Err(DataError::DimensionMismatch { rows: 3, cols: 4 })
        );
        assert_eq!(parse_idx_images_with(&bytes, false).unwrap(), set);
    }

    #[test]
    fn gzip_input() {
        let set = LabelSet {
            count: 4,
            labels: vec![9, 0, 5, 5],
        };
        let plain = write_idx_labels(&set);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&plain).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap(), set);
    }

    proptest! {
        #[test]
        fn image_round_trip(count in 0usize..4, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..count * rows * cols)
                .map(|i| (crate::seed::derive(seed, &[i as u64]) & 0xff) as u8)
                .collect();
            let bytes = write_idx_images(&RawImageSet { count, rows, cols, pixels });
            let parsed = parse_idx_images_with(&bytes, false).unwrap();
            prop_assert_eq!(write_idx_images(&parsed), bytes);
        }

        #[test]
        fn label_round_trip(labels in proptest::collection::vec(0u8..10, 0..64)) {
            let bytes = write_idx_labels(&LabelSet { count: labels.len(), labels });
            let parsed = parse_idx_labels(&bytes).unwrap();
            prop_assert_eq!(write_idx_labels(&parsed), bytes);
        }
    }
}

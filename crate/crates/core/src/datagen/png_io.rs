//! RGB PNG codec: 8-bit files carry SDR codes, 16-bit files HDR codes.

use std::cell::Cell;
use std::io::{self, BufRead, Cursor, Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{EncodedImage, Gamut, Transfer};
use crate::io_util::write_bytes_atomic;

/// Cursor that publishes its position, so decode errors can name an offset.
struct Tracked<'a> {
    inner: Cursor<&'a [u8]>,
    pos: &'a Cell<u64>,
}

impl Read for Tracked<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos.set(self.inner.position());
        Ok(n)
    }
}

impl BufRead for Tracked<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.pos.set(self.inner.position());
    }
}

impl Seek for Tracked<'_> {
    fn seek(&mut self, to: SeekFrom) -> io::Result<u64> {
        let p = self.inner.seek(to)?;
        self.pos.set(p);
        Ok(p)
    }
}

/// Decode PNG bytes. 8-bit files are tagged gamma 2.2/bt709, 16-bit files
/// PQ/bt2020; codes are k/255 or k/65535.
pub fn decode_png(bytes: &[u8], origin: &Path) -> Result<EncodedImage> {
    let pos = Cell::new(0);
    let fail = |e: png::DecodingError| Error::Io {
        path: origin.to_path_buf(),
        message: format!("malformed PNG near byte offset {}: {e}", pos.get()),
    };
    let mut decoder = png::Decoder::new(Tracked {
        inner: Cursor::new(bytes),
        pos: &pos,
    });
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(fail)?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::Format(format!(
            "{}: color type {:?} unsupported, expected RGB",
            origin.display(),
            info.color_type
        )));
    }
    let depth = match info.bit_depth {
        png::BitDepth::Eight => 8u8,
        png::BitDepth::Sixteen => 16u8,
        d => {
            return Err(Error::Format(format!(
                "{}: bit depth {d:?} unsupported, expected 8 or 16",
                origin.display()
            )))
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format(format!("{}: image too large", origin.display())))?;
    let mut buf = vec![0u8; size];
    reader.next_frame(&mut buf).map_err(fail)?;
    let n = w * h * 3;
    let samples: Vec<f64> = if depth == 8 {
        buf[..n].iter().map(|&v| v as f64 / 255.0).collect()
    } else {
        buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect()
    };
    let codes = samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let (transfer, gamut) = if depth == 8 {
        (Transfer::Gamma22, Gamut::Bt709)
    } else {
        (Transfer::Pq, Gamut::Bt2020)
    };
    Ok(EncodedImage::new_unchecked(w, h, transfer, gamut, depth, true, codes))
}

pub fn read_png(path: &Path) -> Result<EncodedImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// Encode as 8-bit when the image's bit depth is 8, else 16-bit. Codes are
/// rounded to the file's sample lattice.
pub fn encode_png(img: &EncodedImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let sixteen = img.bit_depth() > 8;
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(if sixteen { png::BitDepth::Sixteen } else { png::BitDepth::Eight });
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        let data: Vec<u8> = if sixteen {
            img.codes()
                .iter()
                .flatten()
                .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                .collect()
        } else {
            img.codes()
                .iter()
                .flatten()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect()
        };
        writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(img: &EncodedImage, path: &Path) -> Result<()> {
    write_bytes_atomic(path, &encode_png(img)?)
}

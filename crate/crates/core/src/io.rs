//! File formats: 16-bit binary graymaps, CSV tables and JSON documents.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{GraymapHeader, PnmDecoder, PnmEncoder, PnmHeader, SampleEncoding};
use image::{DynamicImage, ExtendedColorType};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::Pose;
use crate::dem::Dem;
use crate::error::{Error, Result};
use crate::integral::IntegralImage;
use crate::scene::SingleImage;

/// 16-bit level of an intensity in `[0, 1]`.
pub fn to_level(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn from_level(level: u16) -> f32 {
    level as f32 / 65535.0
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a binary (P5) graymap with maxval 65535.
pub fn write_pgm16(path: &Path, width: usize, height: usize, levels: &[u16]) -> Result<()> {
    if levels.len() != width * height {
        return Err(Error::domain(format!(
            "graymap of {width}x{height} needs {} samples, got {}",
            width * height,
            levels.len()
        )));
    }
    let header = PnmHeader::from(GraymapHeader {
        encoding: SampleEncoding::Binary,
        width: width as u32,
        height: height as u32,
        maxwhite: 65535,
    });
    let mut out = create(path)?;
    PnmEncoder::new(&mut out).with_header(header).encode(levels, width as u32, height as u32, ExtendedColorType::L16)?;
    out.flush()?;
    Ok(())
}

/// Reads a graymap as `(width, height, levels)`, widening 8-bit files to 16 bits.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let decoder = PnmDecoder::new(BufReader::new(File::open(path)?)).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let image = DynamicImage::from_decoder(decoder)?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let levels = match image {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => other.to_luma16().into_raw(),
    };
    Ok((w, h, levels))
}

/// Writes a table with an explicit header, so that empty tables still have one.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// A frame's pixels; its pose travels in the pose table.
pub fn write_frame(path: &Path, frame: &SingleImage) -> Result<()> {
    let levels: Vec<u16> = frame.pixels.iter().map(|&p| to_level(p)).collect();
    write_pgm16(path, frame.resolution, frame.resolution, &levels)
}

pub fn read_frame(path: &Path, pose: Pose, fov: f64) -> Result<SingleImage> {
    let (w, h, levels) = read_pgm16(path)?;
    if w != h {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("frames are square, got {w}x{h}") });
    }
    Ok(SingleImage { pixels: levels.into_iter().map(from_level).collect(), resolution: w, pose, fov, outside_pixels: 0 })
}

/// Everything about an integral except its pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralMeta {
    pub index: usize,
    pub resolution: usize,
    pub fov: f64,
    pub center_pose: Pose,
    pub source_frames: Vec<usize>,
    pub excluded_frames: Vec<usize>,
}

/// Writes `<stem>.pgm` (intensity), `<stem>_count.pgm` (contributing frames)
/// and `<stem>.json` (metadata) into `dir`.
pub fn write_integral(dir: &Path, stem: &str, index: usize, integral: &IntegralImage) -> Result<()> {
    let res = integral.resolution;
    let levels: Vec<u16> = integral
        .pixels
        .iter()
        .zip(&integral.counts)
        .map(|(&p, &c)| if c > 0 { to_level(p) } else { 0 })
        .collect();
    write_pgm16(&dir.join(format!("{stem}.pgm")), res, res, &levels)?;
    write_pgm16(&dir.join(format!("{stem}_count.pgm")), res, res, &integral.counts)?;
    let meta = IntegralMeta {
        index,
        resolution: res,
        fov: integral.fov,
        center_pose: integral.center_pose,
        source_frames: integral.source_frames.clone(),
        excluded_frames: integral.excluded_frames.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), &meta)
}

pub fn read_integral(dir: &Path, stem: &str) -> Result<(IntegralMeta, IntegralImage)> {
    let meta: IntegralMeta = read_json(&dir.join(format!("{stem}.json")))?;
    let (w, h, levels) = read_pgm16(&dir.join(format!("{stem}.pgm")))?;
    let (cw, ch, counts) = read_pgm16(&dir.join(format!("{stem}_count.pgm")))?;
    let res = meta.resolution;
    if (w, h) != (res, res) || (cw, ch) != (res, res) {
        return Err(Error::Format {
            path: dir.join(stem),
            reason: format!("integral images disagree with the declared resolution {res}"),
        });
    }
    let pixels = levels.iter().zip(&counts).map(|(&l, &c)| if c > 0 { from_level(l) } else { f32::NAN }).collect();
    let integral = IntegralImage {
        pixels,
        counts,
        resolution: res,
        fov: meta.fov,
        center_pose: meta.center_pose,
        source_frames: meta.source_frames.clone(),
        excluded_frames: meta.excluded_frames.clone(),
        geometry_passes: 0,
    };
    Ok((meta, integral))
}

/// Serialized form of a DEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemFile {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f32>,
}

impl DemFile {
    pub fn from_dem(dem: &Dem) -> Self {
        let (nx, ny) = dem.dims();
        let extent = dem.extent();
        DemFile { origin: [extent.x_min, extent.y_min], spacing: dem.spacing(), nx, ny, heights: dem.heights().to_vec() }
    }

    pub fn into_dem(self) -> Result<Dem> {
        Dem::from_heights(self.origin, self.spacing, self.nx, self.ny, self.heights)
    }
}

/// Writes a `[0, 1]` raster as a graymap.
pub fn write_unit_raster(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let levels: Vec<u16> = values.iter().map(|&v| if v.is_finite() { to_level(v) } else { 0 }).collect();
    write_pgm16(path, width, height, &levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dem::Extent;

    #[test]
    fn graymaps_round_trip_all_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let levels: Vec<u16> = (0..256 * 256).map(|i| i as u16).collect();
        write_pgm16(&path, 256, 256, &levels).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert!(String::from_utf8_lossy(&bytes[..20]).contains("65535"));
        assert_eq!(read_pgm16(&path).unwrap(), (256, 256, levels));
        assert!(write_pgm16(&path, 3, 3, &[0; 8]).is_err());
    }

    #[test]
    fn levels_reproduce_quantized_intensities() {
        for v in [0.0f32, 0.1, 0.15, 0.333, 0.9999, 1.0] {
            assert_eq!(from_level(to_level(v)), crate::scene::quantize16(v));
        }
    }

    #[test]
    fn integrals_round_trip_with_invalid_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let integral = IntegralImage {
            pixels: vec![crate::scene::quantize16(0.25), f32::NAN, crate::scene::quantize16(0.7), 0.0],
            counts: vec![3, 0, 30, 1],
            resolution: 2,
            fov: 43.1,
            center_pose: Pose::new(1.0 / 3.0, -2.5, 35.0, 0.1),
            source_frames: vec![4, 9],
            excluded_frames: vec![],
            geometry_passes: 1,
        };
        write_integral(dir.path(), "integral_0000", 7, &integral).unwrap();
        let (meta, back) = read_integral(dir.path(), "integral_0000").unwrap();
        assert_eq!(meta.index, 7);
        assert_eq!(back.center_pose, integral.center_pose);
        assert_eq!(back.counts, integral.counts);
        assert!(back.pixels[1].is_nan());
        assert_eq!(back.pixels[0], integral.pixels[0]);
        assert_eq!(back.pixels[2], integral.pixels[2]);
    }

    #[test]
    fn tables_keep_their_header_when_empty() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Row {
            a: u32,
            b: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv::<Row>(&path, &["a", "b"], []).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n");
        write_csv(&path, &["a", "b"], [Row { a: 1, b: 0.1 }]).unwrap();
        assert_eq!(read_csv::<Row>(&path).unwrap(), vec![Row { a: 1, b: 0.1 }]);
    }

    #[test]
    fn dems_round_trip() {
        let dem = Dem::synthetic(&Extent::centered(10.0, 8.0).unwrap(), 50, 1.0, 2).unwrap();
        let back = DemFile::from_dem(&dem).into_dem().unwrap();
        assert_eq!(back.dims(), dem.dims());
        assert_eq!(back.heights(), dem.heights());
        assert_eq!(back.extent(), dem.extent());
    }
}

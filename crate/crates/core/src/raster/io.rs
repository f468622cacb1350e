use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageFormat};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::{PhotometricInterpretation, SampleFormat};
use tiff::ColorType;

use super::{world_file_candidates, world_file_path, GeoTransform, Raster, SampleDepth};
use crate::error::{Error, Result};

/// How to interpret a raster file on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Channel names in file order. Empty means "infer from the channel count".
    pub channels: Vec<String>,
    /// Explicit world file; otherwise sidecar candidates next to the image are tried.
    pub world_file: Option<PathBuf>,
    /// Fallback when no world file exists.
    pub geo: Option<GeoTransform>,
    /// Raw sample value that marks nodata when present on every channel.
    pub nodata: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            channels: Vec::new(),
            world_file: None,
            geo: None,
            nodata: Some(0.0),
        }
    }
}

fn default_channel_names(n: usize) -> Vec<String> {
    let names: &[&str] = match n {
        1 => &["V"],
        3 => &["R", "G", "B"],
        4 => &["R", "G", "B", "NIR"],
        _ => &[],
    };
    if names.is_empty() {
        (1..=n).map(|i| format!("band{i}")).collect()
    } else {
        names.iter().map(|s| s.to_string()).collect()
    }
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    depth: SampleDepth,
    /// Interleaved raw samples.
    samples: Vec<u16>,
}

fn is_tiff(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("tif" | "tiff")
    )
}

fn decode_png(path: &Path) -> Result<Decoded> {
    let img = image::open(path).map_err(|e| Error::codec(path, e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, depth, samples): (usize, SampleDepth, Vec<u16>) = match img {
        DynamicImage::ImageLuma8(b) => (1, SampleDepth::U8, widen(b.into_raw())),
        DynamicImage::ImageLumaA8(b) => (2, SampleDepth::U8, widen(b.into_raw())),
        DynamicImage::ImageRgb8(b) => (3, SampleDepth::U8, widen(b.into_raw())),
        DynamicImage::ImageRgba8(b) => (4, SampleDepth::U8, widen(b.into_raw())),
        DynamicImage::ImageLuma16(b) => (1, SampleDepth::U16, b.into_raw()),
        DynamicImage::ImageLumaA16(b) => (2, SampleDepth::U16, b.into_raw()),
        DynamicImage::ImageRgb16(b) => (3, SampleDepth::U16, b.into_raw()),
        DynamicImage::ImageRgba16(b) => (4, SampleDepth::U16, b.into_raw()),
        other => {
            return Err(Error::codec(
                path,
                format!("unsupported sample type {:?}", other.color()),
            ))
        }
    };
    Ok(Decoded {
        width,
        height,
        channels,
        depth,
        samples,
    })
}

fn widen(v: Vec<u8>) -> Vec<u16> {
    v.into_iter().map(u16::from).collect()
}

fn decode_tiff(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| Error::codec(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| Error::codec(path, e))?;
    let channels = match dec.colortype().map_err(|e| Error::codec(path, e))? {
        ColorType::Gray(_) => 1,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) => 4,
        ColorType::Multiband { num_samples, .. } => num_samples as usize,
        other => return Err(Error::codec(path, format!("unsupported color type {other:?}"))),
    };
    let (depth, samples) = match dec.read_image().map_err(|e| Error::codec(path, e))? {
        DecodingResult::U8(v) => (SampleDepth::U8, widen(v)),
        DecodingResult::U16(v) => (SampleDepth::U16, v),
        _ => return Err(Error::codec(path, "only 8- and 16-bit unsigned samples are supported")),
    };
    let (width, height) = (w as usize, h as usize);
    if samples.len() != width * height * channels {
        return Err(Error::codec(path, "sample count does not match image dimensions"));
    }
    Ok(Decoded {
        width,
        height,
        channels,
        depth,
        samples,
    })
}

/// Loads an 8/16-bit PNG or TIFF and attaches its geotransform.
pub fn load_raster(path: &Path, opts: &LoadOptions) -> Result<Raster> {
    let decoded = if is_tiff(path) {
        decode_tiff(path)?
    } else {
        decode_png(path)?
    };
    let names = if opts.channels.is_empty() {
        default_channel_names(decoded.channels)
    } else {
        opts.channels.clone()
    };
    if names.len() != decoded.channels {
        return Err(Error::ChannelMismatch {
            expected: names.len(),
            found: decoded.channels,
        });
    }

    let geo = match &opts.world_file {
        Some(wf) => GeoTransform::read_world_file(wf)?,
        None => match world_file_candidates(path).into_iter().find(|p| p.is_file()) {
            Some(wf) => GeoTransform::read_world_file(&wf)?,
            None => opts
                .geo
                .ok_or_else(|| Error::MissingGeoTransform(path.to_path_buf()))?,
        },
    };

    let n = decoded.width * decoded.height;
    let c = decoded.channels;
    let mut planes = vec![Vec::with_capacity(n); c];
    for px in decoded.samples.chunks_exact(c) {
        for (plane, &s) in planes.iter_mut().zip(px) {
            plane.push(decoded.depth.normalize(s as f64));
        }
    }
    let mut raster = Raster::new(names, decoded.width, decoded.height, planes, geo, decoded.depth)?;
    if let Some(sentinel) = opts.nodata {
        raster.mask_sentinel(sentinel);
    }
    Ok(raster)
}

/// N-sample grayscale-interpreted pixel layout for multiband TIFFs.
struct Bands<T, const N: usize>(std::marker::PhantomData<T>);

macro_rules! bands_colortype {
    ($inner:ty, $bits:expr) => {
        impl<const N: usize> colortype::ColorType for Bands<$inner, N> {
            type Inner = $inner;
            const TIFF_VALUE: PhotometricInterpretation = PhotometricInterpretation::BlackIsZero;
            const BITS_PER_SAMPLE: &'static [u16] = &[$bits; N];
            const SAMPLE_FORMAT: &'static [SampleFormat] = &[SampleFormat::Uint; N];

            fn horizontal_predict(row: &[$inner], result: &mut Vec<$inner>) {
                let n = N.min(row.len());
                result.extend_from_slice(&row[..n]);
                result.extend(
                    row.iter()
                        .zip(&row[n..])
                        .map(|(prev, cur)| cur.wrapping_sub(*prev)),
                );
            }
        }
    };
}

bands_colortype!(u8, 8);
bands_colortype!(u16, 16);

fn write_tiff_as<C>(path: &Path, w: u32, h: u32, data: &[C::Inner]) -> Result<()>
where
    C: colortype::ColorType,
    [C::Inner]: tiff::encoder::TiffValue,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::codec(path, e))?;
    enc.write_image::<C>(w, h, data)
        .map_err(|e| Error::codec(path, e))
}

macro_rules! write_bands {
    ($path:expr, $w:expr, $h:expr, $data:expr, $inner:ty, $n:expr, [$($k:literal),*]) => {
        match $n {
            $($k => write_tiff_as::<Bands<$inner, $k>>($path, $w, $h, $data),)*
            n => Err(Error::codec($path, format!("cannot write {n}-band TIFF"))),
        }
    };
}

fn write_tiff(path: &Path, r: &Raster, raw: &[u16]) -> Result<()> {
    let (w, h) = (r.width() as u32, r.height() as u32);
    let c = r.channels().len();
    match r.depth() {
        SampleDepth::U8 => {
            let data: Vec<u8> = raw.iter().map(|&v| v as u8).collect();
            match c {
                1 => write_tiff_as::<colortype::Gray8>(path, w, h, &data),
                3 => write_tiff_as::<colortype::RGB8>(path, w, h, &data),
                _ => write_bands!(path, w, h, &data, u8, c, [2, 4, 5, 6, 7, 8]),
            }
        }
        SampleDepth::U16 => match c {
            1 => write_tiff_as::<colortype::Gray16>(path, w, h, raw),
            3 => write_tiff_as::<colortype::RGB16>(path, w, h, raw),
            _ => write_bands!(path, w, h, raw, u16, c, [2, 4, 5, 6, 7, 8]),
        },
    }
}

fn write_png(path: &Path, r: &Raster, raw: &[u16]) -> Result<()> {
    let (w, h) = (r.width() as u32, r.height() as u32);
    let c = r.channels().len();
    let color = match (c, r.depth()) {
        (1, SampleDepth::U8) => ExtendedColorType::L8,
        (2, SampleDepth::U8) => ExtendedColorType::La8,
        (3, SampleDepth::U8) => ExtendedColorType::Rgb8,
        (4, SampleDepth::U8) => ExtendedColorType::Rgba8,
        (1, SampleDepth::U16) => ExtendedColorType::L16,
        (2, SampleDepth::U16) => ExtendedColorType::La16,
        (3, SampleDepth::U16) => ExtendedColorType::Rgb16,
        (4, SampleDepth::U16) => ExtendedColorType::Rgba16,
        _ => return Err(Error::codec(path, format!("PNG cannot hold {c} channels"))),
    };
    let bytes: Vec<u8> = match r.depth() {
        SampleDepth::U8 => raw.iter().map(|&v| v as u8).collect(),
        // The PNG encoder takes native-endian 16-bit samples.
        SampleDepth::U16 => raw.iter().flat_map(|v| v.to_ne_bytes()).collect(),
    };
    image::save_buffer_with_format(path, &bytes, w, h, color, ImageFormat::Png)
        .map_err(|e| Error::codec(path, e))
}

/// Writes the raster at its source depth (PNG or TIFF by extension) plus a world file.
pub fn save_raster(path: &Path, raster: &Raster) -> Result<()> {
    let depth = raster.depth();
    let c = raster.channels().len();
    let mut raw = Vec::with_capacity(raster.len() * c);
    for i in 0..raster.len() {
        for k in 0..c {
            raw.push(depth.quantize(raster.plane(k)[i]));
        }
    }
    if is_tiff(path) {
        write_tiff(path, raster, &raw)?;
    } else {
        write_png(path, raster, &raw)?;
    }
    raster.geo().write_world_file(&world_file_path(path))
}

/// Writes a binary mask as an 8-bit PNG (255 = set) with a world file.
pub fn save_mask_png(
    path: &Path,
    mask: &[bool],
    width: usize,
    height: usize,
    geo: &GeoTransform,
) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| Error::codec(path, e))?;
    geo.write_world_file(&world_file_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_raster(channels: usize, depth: SampleDepth) -> Raster {
        let (w, h) = (7, 5);
        let max = depth.max_value() as u32;
        let planes = (0..channels)
            .map(|k| {
                (0..w * h)
                    .map(|i| depth.normalize(((i as u32 * 37 + k as u32 * 101) % (max + 1)) as f64))
                    .collect()
            })
            .collect();
        Raster::new(
            default_channel_names(channels),
            w,
            h,
            planes,
            GeoTransform::new(500000.0, 5712000.0, 0.004, -0.004),
            depth,
        )
        .unwrap()
    }

    fn raw_samples(r: &Raster) -> Vec<u16> {
        (0..r.channels().len())
            .flat_map(|k| r.plane(k).iter().map(|&v| r.depth().quantize(v)).collect::<Vec<_>>())
            .collect()
    }

    fn opts(channels: usize) -> LoadOptions {
        LoadOptions {
            channels: default_channel_names(channels),
            ..Default::default()
        }
    }

    #[test]
    fn png_and_tiff_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for depth in [SampleDepth::U8, SampleDepth::U16] {
            for (channels, ext) in [(1, "png"), (3, "png"), (4, "png"), (1, "tif"), (3, "tif"), (6, "tif")] {
                let r = sample_raster(channels, depth);
                let path = dir.path().join(format!("r{channels}_{depth:?}.{ext}"));
                save_raster(&path, &r).unwrap();
                let back = load_raster(&path, &opts(channels)).unwrap();
                assert_eq!(back.depth(), depth);
                assert_eq!(back.geo(), r.geo());
                assert_eq!(raw_samples(&back), raw_samples(&r), "{channels} ch {ext} {depth:?}");

                // Second save of the reloaded raster yields identical bytes.
                let again = dir.path().join(format!("again{channels}_{depth:?}.{ext}"));
                save_raster(&again, &back).unwrap();
                assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
            }
        }
    }

    #[test]
    fn world_file_sets_pixel_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.png");
        let r = sample_raster(3, SampleDepth::U8);
        save_raster(&path, &r).unwrap();
        std::fs::write(
            dir.path().join("field.pgw"),
            "0.004\n0\n0\n-0.004\n500000.0\n5712000.0\n",
        )
        .unwrap();
        let back = load_raster(&path, &opts(3)).unwrap();
        assert_eq!(back.geo().px_w, 0.004);
        assert_eq!(back.geo().origin_x, 500000.0);
    }

    #[test]
    fn missing_world_file_uses_config_or_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.png");
        let r = sample_raster(3, SampleDepth::U8);
        save_raster(&path, &r).unwrap();
        std::fs::remove_file(world_file_path(&path)).unwrap();

        let err = load_raster(&path, &opts(3)).unwrap_err();
        assert!(matches!(err, Error::MissingGeoTransform(_)));

        let with_geo = LoadOptions {
            geo: Some(GeoTransform::identity()),
            ..opts(3)
        };
        let back = load_raster(&path, &with_geo).unwrap();
        assert_eq!(back.geo().px_to_crs(3.0, 4.0), (3.0, 4.0));
    }

    #[test]
    fn channel_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("six.tif");
        save_raster(&path, &sample_raster(6, SampleDepth::U16)).unwrap();
        let err = load_raster(&path, &opts(3)).unwrap_err();
        assert!(matches!(err, Error::ChannelMismatch { expected: 3, found: 6 }));
    }

    #[test]
    fn nodata_sentinel_is_applied_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("border.png");
        let mut r = sample_raster(3, SampleDepth::U8);
        // Pixel 0 has samples (0, 101, 202); force it to all-zero.
        let planes: Vec<Vec<f32>> = (0..3)
            .map(|k| {
                let mut p = r.plane(k).to_vec();
                p[0] = 0.0;
                p
            })
            .collect();
        r = Raster::new(r.channels().to_vec(), 7, 5, planes, *r.geo(), r.depth()).unwrap();
        save_raster(&path, &r).unwrap();
        let back = load_raster(&path, &opts(3)).unwrap();
        assert!(back.nodata()[0]);
        assert_eq!(back.nodata().iter().filter(|&&b| b).count(), 1);
    }
}

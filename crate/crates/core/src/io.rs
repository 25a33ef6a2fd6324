//! File formats: binary PGM and CSV rasters, sample grids as CSV with a JSON
//! sidecar, boundary polylines as CSV.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineKernel;
use crate::error::{Error, Result};
use crate::poly2d::{ImagePlane, Raster};
use crate::sampler::{IndexRange, NoiseInfo, SampleGrid};

/// Raster as binary PGM, set pixels white.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let data = raster.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }).collect();
    let img = GrayImage::from_raw(raster.width as u32, raster.height as u32, data).ok_or_else(|| Error::invalid("raster size does not match its data"))?;
    img.save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

/// Reads a PGM; pixels above half of full scale are set. The raster is
/// centered on the origin with the given resolution.
pub fn read_pgm(path: &Path, resolution: f64) -> Result<Raster> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?.into_luma8();
    let (w, h) = img.dimensions();
    if w != h || w == 0 {
        return Err(Error::invalid(format!("{}: expected a square image", path.display())));
    }
    let mut r = Raster::filled(w as f64 / (2.0 * resolution), resolution, 0)?;
    r.data = img.into_raw().into_iter().map(|v| (v > 127) as u8).collect();
    Ok(r)
}

/// Raster as CSV of 0/1, top row first.
pub fn write_raster_csv(path: &Path, raster: &Raster) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in raster.data.chunks(raster.width) {
        w.write_record(row.iter().map(|&v| if v != 0 { "1" } else { "0" }))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    k: i64,
    l: i64,
    d: f64,
}

#[derive(Serialize)]
struct PointRow {
    x: f64,
    y: f64,
}

/// Metadata stored next to a samples CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub kernel_order: usize,
    pub plane: ImagePlane,
    pub k_range: IndexRange,
    pub l_range: IndexRange,
    pub noise: Option<NoiseInfo>,
}

/// Path of the sidecar belonging to a samples CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `k,l,d` rows and the JSON sidecar.
pub fn write_samples(path: &Path, grid: &SampleGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (k, l, d) in grid.iter() {
        w.serialize(SampleRow { k, l, d })?;
    }
    w.flush()?;
    let meta = SampleSidecar {
        kernel_order: grid.kernel.order(),
        plane: grid.plane,
        k_range: grid.k_range,
        l_range: grid.l_range,
        noise: grid.noise,
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads a samples CSV and its sidecar.
pub fn read_samples(path: &Path) -> Result<SampleGrid> {
    let meta: SampleSidecar = read_json(&sidecar_path(path))?;
    let (kr, lr) = (meta.k_range, meta.l_range);
    let mut values = DMatrix::from_element(kr.len(), lr.len(), f64::NAN);
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    for row in rd.deserialize() {
        let SampleRow { k, l, d } = row?;
        if !kr.contains(k) || !lr.contains(l) {
            return Err(Error::invalid(format!("{}: index ({k}, {l}) outside the declared ranges", path.display())));
        }
        values[((k - kr.min) as usize, (l - lr.min) as usize)] = d;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{}: missing samples", path.display())));
    }
    let mut grid = SampleGrid::new(values, kr, lr, BSplineKernel::new(meta.kernel_order), meta.plane)?;
    grid.noise = meta.noise;
    Ok(grid)
}

/// Points as `x,y` rows.
pub fn write_points_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for &(x, y) in points {
        w.serialize(PointRow { x, y })?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Serde adapter for floats that may be infinite: non-finite values are
/// written as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod nonfinite {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(de::Error::custom(format!("expected a number, 'inf', '-inf' or 'nan', got '{t}'"))),
            },
        }
    }
}

/// [`nonfinite`] for optional floats.
pub mod nonfinite_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::nonfinite")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly2d::{render_shape, BivariatePolynomial};
    use crate::sampler::{add_noise, default_ranges, sample_shape};

    use tempfile::TempDir;

    fn scratch(dir: &TempDir, name: &str) -> PathBuf {
        dir.path().join(name)
    }

    fn disk() -> BivariatePolynomial {
        BivariatePolynomial::from_terms(2, &[(0, 0, -1.0), (2, 0, 1.0), (0, 2, 1.0)]).unwrap()
    }

    #[test]
    fn pgm_round_trip() {
        let r = render_shape(&disk(), &ImagePlane::unit(2.0).unwrap(), 16).unwrap();
        let dir = TempDir::new().unwrap();
        let p = scratch(&dir, "disk.pgm");
        write_pgm(&p, &r).unwrap();
        let back = read_pgm(&p, 16.0).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pgm_ascii_variant_and_non_square() {
        let dir = TempDir::new().unwrap();
        let p = scratch(&dir, "ascii.pgm");
        fs::write(&p, "P2\n2 2\n15\n0 15 9 3\n").unwrap();
        assert_eq!(read_pgm(&p, 1.0).unwrap().data, vec![0, 1, 1, 0]);
        fs::write(&p, "P2\n2 1\n15\n0 15\n").unwrap();
        assert!(read_pgm(&p, 1.0).unwrap_err().is_input_error());
    }

    #[test]
    fn samples_round_trip_bit_exact() {
        let plane = ImagePlane::unit(3.0).unwrap();
        let kern = BSplineKernel::new(4);
        let (kr, lr) = default_ranges(&plane, &kern);
        let g = add_noise(&sample_shape(&disk(), &plane, &kern, kr, lr).unwrap(), 20.0, 5).unwrap();
        let dir = TempDir::new().unwrap();
        let p = scratch(&dir, "samples.csv");
        write_samples(&p, &g).unwrap();
        assert_eq!(read_samples(&p).unwrap(), g);
    }

    #[test]
    fn missing_sample_is_an_input_error() {
        let plane = ImagePlane::unit(1.0).unwrap();
        let kern = BSplineKernel::new(0);
        let (kr, lr) = default_ranges(&plane, &kern);
        let g = sample_shape(&disk(), &plane, &kern, kr, lr).unwrap();
        let dir = TempDir::new().unwrap();
        let p = scratch(&dir, "short.csv");
        write_samples(&p, &g).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = text.lines().take(2).collect();
        fs::write(&p, cut.join("\n")).unwrap();
        assert!(read_samples(&p).unwrap_err().is_input_error());
    }

    #[test]
    fn infinite_floats_round_trip() {
        #[derive(Serialize, Deserialize)]
        struct T {
            #[serde(with = "nonfinite")]
            a: f64,
            #[serde(with = "nonfinite_opt", default)]
            b: Option<f64>,
        }
        let text = serde_json::to_string(&T {
            a: f64::INFINITY,
            b: Some(0.1),
        })
        .unwrap();
        assert_eq!(text, r#"{"a":"inf","b":0.1}"#);
        let back: T = serde_json::from_str(&text).unwrap();
        assert_eq!((back.a, back.b), (f64::INFINITY, Some(0.1)));
        let none: T = serde_json::from_str(r#"{"a":-1.5}"#).unwrap();
        assert_eq!((none.a, none.b), (-1.5, None));
        assert!(serde_json::from_str::<T>(r#"{"a":"big"}"#).is_err());
    }

    #[test]
    fn raster_csv_rows() {
        let r = render_shape(&disk(), &ImagePlane::unit(1.5).unwrap(), 2).unwrap();
        let dir = TempDir::new().unwrap();
        let p = scratch(&dir, "r.csv");
        write_raster_csv(&p, &r).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), r.height);
        assert_eq!(text.lines().nth(3).unwrap(), "0,1,1,1,1,0");
        assert_eq!(text.lines().next().unwrap(), "0,0,0,0,0,0");
    }
}

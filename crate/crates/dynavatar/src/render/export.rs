//! Mesh and image export: ASCII OBJ and 8-bit PNG.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use std::io::Write;
use std::path::Path;

/// ASCII OBJ with 1-based indices.
pub fn write_obj(path: &Path, verts: &ArrayView2<'_, f64>, faces: &[[usize; 3]]) -> Result<()> {
    let mut out = String::with_capacity(verts.nrows() * 32 + faces.len() * 16);
    for r in verts.rows() {
        out.push_str(&format!("v {} {} {}\n", r[0], r[1], r[2]));
    }
    for f in faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[3, H, W]` in [0,1] -> RGB8 PNG.
pub fn save_rgb_png(path: &Path, img: &ArrayView3<'_, f64>) -> Result<()> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([to_u8(img[[0, i, j]]), to_u8(img[[1, i, j]]), to_u8(img[[2, i, j]])]),
            );
        }
    }
    buf.save(path).map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))
}

/// `[H, W]` in [0,1] -> 8-bit grayscale PNG (binary masks use 0/255).
pub fn save_mask_png(path: &Path, img: &ArrayView2<'_, f64>) -> Result<()> {
    let (h, w) = img.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(j as u32, i as u32, image::Luma([to_u8(img[[i, j]])]));
        }
    }
    buf.save(path).map_err(|e| Error::Format(format!("png write {}: {e}", path.display())))
}

/// Encode a normal map (`[3,H,W]`, unit vectors or zero) as `n * 0.5 + 0.5`.
pub fn encode_normal_image(normals: &ArrayView3<'_, f64>) -> Array3<f64> {
    normals.mapv(|v| v * 0.5 + 0.5)
}

/// Load an RGB PNG back into `[3, H, W]` in [0,1].
pub fn load_rgb_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f64>::zeros((3, h as usize, w as usize));
    for i in 0..h {
        for j in 0..w {
            let p = img.get_pixel(j, i);
            for c in 0..3 {
                out[[c, i as usize, j as usize]] = p.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Load an 8-bit grayscale PNG into `[H, W]` in [0,1].
pub fn load_mask_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::<f64>::zeros((h as usize, w as usize));
    for i in 0..h {
        for j in 0..w {
            out[[i as usize, j as usize]] = img.get_pixel(j, i).0[0] as f64 / 255.0;
        }
    }
    Ok(out)
}

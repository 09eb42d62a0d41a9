use crate::error::{Error, Result};

use super::ImageGrid;

/// One tile of an image and, when supplied, of its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: ImageGrid,
    pub mask: Option<ImageGrid>,
    /// Top-left corner in the source image.
    pub origin: (usize, usize),
}

/// Non-overlapping `patch x patch` tiling in row-major order; trailing
/// rows/columns that do not fill a whole tile are dropped.
///
/// With `reject_background` and a mask, tiles whose foreground fraction is
/// at most `bg_threshold` are discarded (`bg_threshold = 0` drops exactly
/// the all-zero tiles).
pub fn extract_patches(
    img: &ImageGrid,
    mask: Option<&ImageGrid>,
    patch: usize,
    reject_background: bool,
    bg_threshold: f64,
) -> Result<Vec<Patch>> {
    if patch == 0 || patch > img.height().min(img.width()) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    if let Some(m) = mask {
        if (m.height(), m.width()) != (img.height(), img.width()) {
            return Err(Error::Shape("mask and image sizes differ".into()));
        }
    }
    let mut out = Vec::new();
    for ty in 0..img.height() / patch {
        for tx in 0..img.width() / patch {
            let (top, left) = (ty * patch, tx * patch);
            let m = mask.map(|m| m.crop(top, left, patch, patch)).transpose()?;
            if reject_background {
                if let Some(m) = &m {
                    if m.mean() <= bg_threshold {
                        continue;
                    }
                }
            }
            out.push(Patch {
                image: img.crop(top, left, patch, patch)?,
                mask: m,
                origin: (top, left),
            });
        }
    }
    Ok(out)
}

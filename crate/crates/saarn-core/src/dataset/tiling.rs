//! Fixed-size tiling of large images.
//!
//! Tiles are anchored on a `tile_size` grid; the final row/column tile is
//! shifted left/up so every tile keeps its native resolution and the full
//! image stays covered (overlapping edge tiles instead of padding).

use crate::error::{Error, Result};
use ndarray::{Array3, ArrayView3};

/// Offsets along one axis for the shift-to-fit rule.
pub fn axis_offsets(dim: usize, tile: usize) -> Result<Vec<usize>> {
    if dim < tile {
        return Err(Error::InvalidInput(format!(
            "image extent {dim} is smaller than the tile size {tile}"
        )));
    }
    let mut offsets = Vec::new();
    let mut k = 0;
    while k * tile + tile <= dim {
        offsets.push(k * tile);
        k += 1;
    }
    let covered = offsets.last().map(|&o| o + tile).unwrap_or(0);
    if covered < dim {
        offsets.push(dim - tile);
    }
    Ok(offsets)
}

/// Tile offsets `(x, y)` for an image, row-major over the grid.
pub fn tile_offsets(width: usize, height: usize, tile: usize) -> Result<Vec<(usize, usize)>> {
    let xs = axis_offsets(width, tile)?;
    let ys = axis_offsets(height, tile)?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Cuts an `(H, W, C)` image into `tile x tile` tiles plus their offsets.
pub fn tile_image(
    image: ArrayView3<'_, u8>,
    tile: usize,
) -> Result<Vec<(Array3<u8>, (usize, usize))>> {
    let (h, w, _c) = image.dim();
    let offsets = tile_offsets(w, h, tile)?;
    Ok(offsets
        .into_iter()
        .map(|(x, y)| {
            let view = image.slice(ndarray::s![y..y + tile, x..x + tile, ..]);
            (view.to_owned(), (x, y))
        })
        .collect())
}

//! Addressing into the flat view buffer that accompanies a manifest.

use shapegen::{DatasetManifest, DepthImage, Split};

use crate::error::{Error, Result};

/// Start offset of each shape's views inside the flat buffer, in manifest
/// order. Fails when the buffer length disagrees with the manifest.
pub fn view_offsets(manifest: &DatasetManifest, total_views: usize) -> Result<Vec<usize>> {
    let mut offsets = Vec::with_capacity(manifest.shapes.len());
    let mut next = 0usize;
    for rec in &manifest.shapes {
        offsets.push(next);
        next += rec.view_count as usize;
    }
    if next != total_views {
        return Err(Error::ShapeMismatch {
            op: "view_offsets",
            detail: format!("manifest lists {next} views, buffer holds {total_views}"),
        });
    }
    Ok(offsets)
}

/// The views of the shape at `index`.
pub fn shape_views<'a>(
    manifest: &DatasetManifest,
    views: &'a [DepthImage],
    offsets: &[usize],
    index: usize,
) -> &'a [DepthImage] {
    let start = offsets[index];
    &views[start..start + manifest.shapes[index].view_count as usize]
}

/// Manifest indices of one split, in manifest order.
pub fn split_indices(manifest: &DatasetManifest, split: Split) -> Vec<usize> {
    manifest
        .shapes
        .iter()
        .enumerate()
        .filter(|(_, rec)| rec.split == split)
        .map(|(i, _)| i)
        .collect()
}

"""Document elements decorator: layouts to pages with pixel ground truth."""
from .assets import AssetLibrary, bundled_asset_dir, contrast_with_white, procedural_images
from .export import export_dataset, load_manifest, read_mask, read_page, verify_dataset
from .render import (
    MASK_COLORS,
    CropSpec,
    RenderedPage,
    boxes_from_mask,
    color_mask,
    crop_pixels,
    decorate,
    decorate_batch,
    eligible_images,
    layout_pixel_boxes,
    pixel_rect,
    render_text_block,
    select_image,
)

__all__ = [
    "AssetLibrary",
    "CropSpec",
    "MASK_COLORS",
    "RenderedPage",
    "boxes_from_mask",
    "bundled_asset_dir",
    "color_mask",
    "contrast_with_white",
    "crop_pixels",
    "decorate",
    "decorate_batch",
    "eligible_images",
    "export_dataset",
    "layout_pixel_boxes",
    "load_manifest",
    "pixel_rect",
    "procedural_images",
    "read_mask",
    "read_page",
    "render_text_block",
    "select_image",
    "verify_dataset",
]

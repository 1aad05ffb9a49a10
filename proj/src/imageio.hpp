#pragma once

#include <string>

#include "satnet/tensor.hpp"

namespace satnet {

/// Decode an image file to a [3,size,size] float tensor in [0,1] (RGB).
/// Returns an undefined tensor if the file cannot be decoded. Sets `resized`
/// when the source dimensions differed from `size`.
TensorF read_image_rgb(const std::string& path, int size, bool& resized);

/// Encode a [3,H,W] float tensor in [0,1] as an 8-bit image file (format from
/// the extension). Returns false on failure.
bool write_image_rgb(const TensorF& img, const std::string& path);

} // namespace satnet

#pragma once

#include <string>

#include "nrdet/tensor.hpp"

namespace nrdet {

/// RGB image as a (3, H, W) tensor with values in [0, 1].
Tensor load_image(const std::string& path);
void save_image(const Tensor& image, const std::string& path);

}  // namespace nrdet

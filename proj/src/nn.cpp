// SPDX-License-Identifier: Apache-2.0
#include "taskmix/nn.hpp"

namespace taskmix {

void Geometry::validate() const {
  if (input_dim == 0)
    throw ConfigError("geometry: input dimension must be >= 1");
  if (classes == 0)
    throw ConfigError("geometry: head width must be >= 1");
  for (std::size_t k = 0; k < neck.size(); ++k)
    if (neck[k] == 0)
      throw ConfigError("geometry: neck layer " + std::to_string(k) + " has zero width");
}

template class ModelParams<float>;
template class ModelParams<double>;

} // namespace taskmix

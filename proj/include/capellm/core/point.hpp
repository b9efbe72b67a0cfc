#pragma once

#include <array>

namespace capellm {

using Point = std::array<double, 2>;

}  // namespace capellm

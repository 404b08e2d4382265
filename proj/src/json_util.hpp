#pragma once

#include <cmath>
#include <cstdint>

#include <nlohmann/json.hpp>

namespace observatory::detail {

// Integral values are written without a fraction ("1", not "1.0").
template <typename Json = nlohmann::json>
Json number_json(double v) {
  if (std::isfinite(v) && std::trunc(v) == v && std::fabs(v) < 9.0e15) return Json(static_cast<std::int64_t>(v));
  return Json(v);
}

}  // namespace observatory::detail

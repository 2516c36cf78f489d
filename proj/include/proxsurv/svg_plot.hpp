#pragma once

#include <string>

#include "proxsurv/estimators.hpp"

namespace proxsurv {

// Minimal static SVG: the contrast as a polyline with a confidence band
// polygon and a dashed zero line. No external dependencies, no interaction.
std::string render_curve_svg(const CurveEstimate& curve, const std::string& title);

}  // namespace proxsurv

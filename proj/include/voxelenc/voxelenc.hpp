#pragma once

#include "voxelenc/dataset.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/kernels.hpp"
#include "voxelenc/matio.hpp"
#include "voxelenc/matrix.hpp"
#include "voxelenc/metrics.hpp"
#include "voxelenc/parallel.hpp"
#include "voxelenc/report.hpp"
#include "voxelenc/ridge.hpp"
#include "voxelenc/rng.hpp"
#include "voxelenc/runner.hpp"
#include "voxelenc/stats.hpp"
#include "voxelenc/synth.hpp"

namespace voxelenc {
inline constexpr const char* kVersion = "0.1.0";
}  // namespace voxelenc

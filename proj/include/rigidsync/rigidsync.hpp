#pragma once

// Umbrella header: the full library in dependency order.

#include "rigidsync/types.hpp"
#include "rigidsync/rng.hpp"
#include "rigidsync/eigen_sym.hpp"
#include "rigidsync/kabsch.hpp"
#include "rigidsync/perm_sync.hpp"
#include "rigidsync/seg_sync.hpp"
#include "rigidsync/frontend.hpp"
#include "rigidsync/rigid_fit.hpp"
#include "rigidsync/scene_gen.hpp"
#include "rigidsync/pipeline.hpp"
#include "rigidsync/metrics.hpp"
#include "rigidsync/io.hpp"

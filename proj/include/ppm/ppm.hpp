#pragma once

// Convenience include for the whole library.

#include "ppm/checkpoint.hpp"
#include "ppm/data.hpp"
#include "ppm/diagnostics.hpp"
#include "ppm/errors.hpp"
#include "ppm/layers.hpp"
#include "ppm/metrics.hpp"
#include "ppm/model.hpp"
#include "ppm/objective.hpp"
#include "ppm/pipeline.hpp"
#include "ppm/rng.hpp"
#include "ppm/svg.hpp"
#include "ppm/tensor.hpp"
#include "ppm/threads.hpp"
#include "ppm/trainer.hpp"
#include "ppm/version.hpp"

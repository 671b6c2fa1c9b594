#pragma once

// Umbrella header for the spatial-regression toolkit.

#include "spatreg/diagnostics.hpp"
#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/geojson.hpp"
#include "spatreg/gwr.hpp"
#include "spatreg/ols.hpp"
#include "spatreg/pipeline.hpp"
#include "spatreg/sar.hpp"
#include "spatreg/synth.hpp"
#include "spatreg/varsel.hpp"
#include "spatreg/version.hpp"
#include "spatreg/weights.hpp"

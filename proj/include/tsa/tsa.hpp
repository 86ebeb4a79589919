#pragma once

// Umbrella header for the trajectory attribution library.

#include "tsa/classifier.hpp"
#include "tsa/cli.hpp"
#include "tsa/csv.hpp"
#include "tsa/data_model.hpp"
#include "tsa/errors.hpp"
#include "tsa/grid.hpp"
#include "tsa/laki.hpp"
#include "tsa/pipeline.hpp"
#include "tsa/report.hpp"
#include "tsa/rng.hpp"
#include "tsa/shapley.hpp"
#include "tsa/synthfab.hpp"

#pragma once

#include "peos/analysis.hpp"
#include "peos/bench.hpp"
#include "peos/edge_meta.hpp"
#include "peos/error.hpp"
#include "peos/hnsw.hpp"
#include "peos/index_io.hpp"
#include "peos/normal.hpp"
#include "peos/projections.hpp"
#include "peos/quantile_table.hpp"
#include "peos/rng.hpp"
#include "peos/routing.hpp"
#include "peos/search.hpp"
#include "peos/simhash.hpp"
#include "peos/vecstore.hpp"

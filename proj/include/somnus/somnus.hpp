#pragma once

#include "somnus/error.hpp"
#include "somnus/rng.hpp"
#include "somnus/config.hpp"
#include "somnus/tabular.hpp"
#include "somnus/fixture.hpp"
#include "somnus/preprocess.hpp"
#include "somnus/ensemble.hpp"
#include "somnus/augment.hpp"
#include "somnus/evalharness.hpp"
#include "somnus/insight.hpp"
#include "somnus/http_api.hpp"
#include "somnus/live_client.hpp"

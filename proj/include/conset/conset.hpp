// Umbrella header pulling in the whole toolkit.
#pragma once

#include "conset/common.hpp"
#include "conset/core.hpp"
#include "conset/csv.hpp"
#include "conset/gbm.hpp"
#include "conset/ingest.hpp"
#include "conset/multinomial.hpp"
#include "conset/parallel.hpp"
#include "conset/rng.hpp"
#include "conset/shap.hpp"
#include "conset/synth.hpp"
#include "conset/unsupervised.hpp"

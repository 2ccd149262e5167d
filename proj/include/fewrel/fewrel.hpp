#pragma once

#include "fewrel/autodiff.hpp"
#include "fewrel/config.hpp"
#include "fewrel/corpus.hpp"
#include "fewrel/encoders.hpp"
#include "fewrel/episodes.hpp"
#include "fewrel/harness.hpp"
#include "fewrel/models.hpp"
#include "fewrel/report.hpp"
#include "fewrel/rng.hpp"
#include "fewrel/version.hpp"

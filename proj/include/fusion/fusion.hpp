#pragma once

#include "fusion/aggregation.hpp"
#include "fusion/attribution.hpp"
#include "fusion/backend.hpp"
#include "fusion/concurrency.hpp"
#include "fusion/config.hpp"
#include "fusion/datagen.hpp"
#include "fusion/errors.hpp"
#include "fusion/evaluation.hpp"
#include "fusion/http_backend.hpp"
#include "fusion/jsonl.hpp"
#include "fusion/sampling.hpp"
#include "fusion/sha256.hpp"
#include "fusion/store.hpp"
#include "fusion/templates.hpp"
#include "fusion/util.hpp"

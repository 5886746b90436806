#pragma once

#include "mcidet/adamw.hpp"
#include "mcidet/checkpoint.hpp"
#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/inference.hpp"
#include "mcidet/metrics.hpp"
#include "mcidet/model.hpp"
#include "mcidet/perturb.hpp"
#include "mcidet/rng.hpp"
#include "mcidet/splits.hpp"
#include "mcidet/train.hpp"
#include "mcidet/wav.hpp"

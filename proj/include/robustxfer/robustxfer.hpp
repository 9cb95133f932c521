#pragma once

#include "attack.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "eval.hpp"
#include "evalset.hpp"
#include "example_set.hpp"
#include "gradcheck.hpp"
#include "pipeline.hpp"
#include "report.hpp"
#include "smoothing.hpp"
#include "train.hpp"

#pragma once

#include "activegan/adam.hpp"
#include "activegan/autodiff.hpp"
#include "activegan/classifier.hpp"
#include "activegan/commands.hpp"
#include "activegan/config.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/evaluation.hpp"
#include "activegan/metrics.hpp"
#include "activegan/models.hpp"
#include "activegan/rng.hpp"
#include "activegan/serialize.hpp"
#include "activegan/tensor.hpp"
#include "activegan/training.hpp"
#include "activegan/uncertainty.hpp"

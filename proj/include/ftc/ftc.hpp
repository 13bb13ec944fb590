#pragma once

#include "common.hpp"
#include "lifted.hpp"
#include "conic.hpp"
#include "safety.hpp"
#include "programs.hpp"
#include "clairvoyant.hpp"
#include "synthesis.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "experiments.hpp"

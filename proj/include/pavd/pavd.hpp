#pragma once

#include "pavd/analysis.hpp"
#include "pavd/cmj.hpp"
#include "pavd/degree_classes.hpp"
#include "pavd/discrete.hpp"
#include "pavd/error.hpp"
#include "pavd/experiment.hpp"
#include "pavd/malthus.hpp"
#include "pavd/random.hpp"
#include "pavd/rates.hpp"
#include "pavd/stats.hpp"
#include "pavd/verify.hpp"

#pragma once

#include "rfavar/csv.hpp"
#include "rfavar/dgp.hpp"
#include "rfavar/error.hpp"
#include "rfavar/estimator.hpp"
#include "rfavar/factor_init.hpp"
#include "rfavar/identification.hpp"
#include "rfavar/impulse.hpp"
#include "rfavar/linalg.hpp"
#include "rfavar/montecarlo.hpp"
#include "rfavar/objective.hpp"
#include "rfavar/panel.hpp"
#include "rfavar/parallel.hpp"
#include "rfavar/poet.hpp"
#include "rfavar/random.hpp"
#include "rfavar/types.hpp"
#include "rfavar/var.hpp"

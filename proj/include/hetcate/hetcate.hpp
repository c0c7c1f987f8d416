#pragma once

#include "hetcate/core_model.hpp"
#include "hetcate/crossfit.hpp"
#include "hetcate/estimators.hpp"
#include "hetcate/lambda_cv.hpp"
#include "hetcate/lasso.hpp"
#include "hetcate/learners.hpp"
#include "hetcate/logistic_lasso.hpp"
#include "hetcate/rng.hpp"
#include "hetcate/simulation.hpp"

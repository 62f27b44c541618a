#pragma once

#include "nphfit/censoring.hpp"
#include "nphfit/common.hpp"
#include "nphfit/data_io.hpp"
#include "nphfit/dataset.hpp"
#include "nphfit/em_fit.hpp"
#include "nphfit/kl_fit.hpp"
#include "nphfit/matrix_exp.hpp"
#include "nphfit/nph_model.hpp"
#include "nphfit/phase_type.hpp"
#include "nphfit/rng.hpp"
#include "nphfit/scaling.hpp"

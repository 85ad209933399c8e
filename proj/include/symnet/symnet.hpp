#pragma once

#include "symnet/error.hpp"
#include "symnet/matrix.hpp"
#include "symnet/binary_io.hpp"
#include "symnet/net_core.hpp"
#include "symnet/autodiff.hpp"
#include "symnet/data_model.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"
#include "symnet/rmd.hpp"
#include "symnet/config.hpp"
#include "symnet/checkpoint.hpp"
#include "symnet/trainer.hpp"
#include "symnet/evaluation.hpp"
#include "symnet/synthetic.hpp"
#include "symnet/gradcheck.hpp"

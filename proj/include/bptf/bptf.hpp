#pragma once

#include "checkpoint.hpp"
#include "config_file.hpp"
#include "defs.hpp"
#include "encoder.hpp"
#include "evaluation.hpp"
#include "gibbs.hpp"
#include "inference.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "reweight.hpp"
#include "rng.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

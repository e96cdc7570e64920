#pragma once

#include "jsdmp/adam.hpp"
#include "jsdmp/autodiff.hpp"
#include "jsdmp/dataset.hpp"
#include "jsdmp/error.hpp"
#include "jsdmp/gradcheck.hpp"
#include "jsdmp/graph.hpp"
#include "jsdmp/jsdmp_layer.hpp"
#include "jsdmp/matrix.hpp"
#include "jsdmp/metrics.hpp"
#include "jsdmp/models.hpp"
#include "jsdmp/training.hpp"
